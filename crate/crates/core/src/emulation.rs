//! Emulating cluster-capped scoring with a single weighted matrix product.
//!
//! Each source cluster is modulated onto its own power of a basis `theta`, so
//! one product aggregates per-cluster signal counts into one integer per
//! neuron. Peeling the integer back apart with repeated mod/div recovers how
//! many clusters contributed, capping multiple signals from one cluster just
//! like the convergent rule does. With `theta >= L+1` the digits never carry
//! and the emulation is exact; smaller bases alias once a cluster delivers
//! `theta` or more signals, trading accuracy for narrower integers.

use std::time::Instant;

use num_bigint::BigUint;
use rayon::prelude::*;

use crate::activation::{encode_probe, ActivationVector, ErasedFill};
use crate::error::{Error, Result};
use crate::message::Probe;
use crate::retrieval::{
    convergence_check, select_cluster_maxima, ConvergenceScope, ProbeOutcome, RetrievalConfig,
    RetrievalOutcome, Status,
};
use crate::storage::WeightMatrix;

/// The adjacency with every column of cluster `c` weighted by `theta^(c-1)`;
/// the diagonal carries the same weight for the self-loop, with the
/// reinforcement factor normalized to 1.
#[derive(Debug, Clone)]
pub struct CarrierMatrix {
    theta: u64,
    weights: WeightMatrix,
}

pub fn build_carrier(w: &WeightMatrix, theta: u64) -> Result<CarrierMatrix> {
    if theta < 2 {
        return Err(Error::InvalidBasis(theta));
    }
    Ok(CarrierMatrix {
        theta,
        weights: w.clone(),
    })
}

impl CarrierMatrix {
    pub fn shape(&self) -> crate::NetworkShape {
        self.weights.shape()
    }

    pub fn theta(&self) -> u64 {
        self.theta
    }

    /// Entry at 1-based `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> Result<BigUint> {
        let shape = self.weights.shape();
        let connected = if i == j {
            let total = shape.total_neurons();
            if i < 1 || i > total {
                return Err(Error::IndexOutOfRange { index: i, total });
            }
            true
        } else {
            self.weights.contains_edge(i, j)?
        };
        if !connected {
            return Ok(BigUint::from(0u32));
        }
        let exponent = shape.cluster_of0(j - 1) as u32;
        Ok(BigUint::from(self.theta).pow(exponent))
    }

    /// The weighted product with an activation column: one unbounded integer
    /// per neuron carrying that neuron's per-cluster signal counts.
    pub fn aggregate(&self, v: &ActivationVector) -> Result<Vec<BigUint>> {
        let shape = self.weights.shape();
        if shape != v.shape() {
            return Err(shape.mismatch(&v.shape()));
        }
        let n = shape.total_neurons();
        let mut out = Vec::with_capacity(n);
        let mut digits = vec![0u64; shape.clusters()];
        for i0 in 0..n {
            signal_digits(&self.weights, v, i0, &mut digits);
            out.push(big_from_digits(&digits, self.theta));
        }
        Ok(out)
    }
}

/// Per-cluster signal counts of neuron `i0`: active neighbors per source
/// cluster, plus the self-loop for its own cluster.
fn signal_digits(w: &WeightMatrix, v: &ActivationVector, i0: usize, digits: &mut [u64]) {
    let shape = w.shape();
    let own = shape.cluster_of0(i0);
    for (c0, d) in digits.iter_mut().enumerate() {
        *d = w.active_neighbors_in_cluster0(i0, c0, v);
    }
    if v.get0(i0) {
        digits[own] += 1;
    }
}

fn big_from_digits(digits: &[u64], theta: u64) -> BigUint {
    let mut u = BigUint::from(0u32);
    for &d in digits.iter().rev() {
        u = u * theta + d;
    }
    u
}

fn u64_from_digits(digits: &[u64], theta: u64) -> u64 {
    let mut u = 0u64;
    for &d in digits.iter().rev() {
        u = u * theta + d;
    }
    u
}

/// Number of nonzero base-`theta` digits among the low `clusters` positions:
/// the emulated score of one neuron.
pub fn decode_score(u: &BigUint, theta: u64, clusters: usize) -> u64 {
    let mut u = u.clone();
    let theta = BigUint::from(theta);
    let zero = BigUint::from(0u32);
    let mut score = 0;
    for _ in 0..clusters {
        if &u % &theta != zero {
            score += 1;
        }
        u /= &theta;
    }
    score
}

fn decode_score_u64(mut u: u64, theta: u64, clusters: usize) -> u64 {
    let mut score = 0;
    for _ in 0..clusters {
        if u % theta != 0 {
            score += 1;
        }
        u /= theta;
    }
    score
}

/// Bits needed to hold the worst-case aggregate, where every neuron of every
/// cluster signals: the bit length of `sum_c L * theta^(c-1)`.
pub fn bits_required(clusters: usize, cluster_size: usize, theta: u64) -> u64 {
    worst_case_aggregate(clusters, cluster_size, theta).bits()
}

/// Floor of the log2 of the aggregate in the easiest case, exactly one signal
/// per cluster; the width any implementation needs at a minimum.
pub fn bits_lower_bound(clusters: usize, theta: u64) -> u64 {
    let one = worst_case_aggregate(clusters, 1, theta);
    one.bits().saturating_sub(1)
}

fn worst_case_aggregate(clusters: usize, cluster_size: usize, theta: u64) -> BigUint {
    let digits = vec![cluster_size as u64; clusters];
    big_from_digits(&digits, theta)
}

/// Emulation options; `fixed_width` switches from unbounded integers to a
/// hard width limit that makes any overflow an error instead of silent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmulationParams {
    pub theta: u64,
    pub fixed_width: Option<u64>,
}

impl EmulationParams {
    pub fn new(theta: u64, fixed_width: Option<u64>) -> Result<Self> {
        if theta < 2 {
            return Err(Error::InvalidBasis(theta));
        }
        Ok(Self { theta, fixed_width })
    }
}

/// Iterates the emulated rule: aggregate, decode scores, keep per-cluster
/// maxima. Starts erased clusters fully active like the rule it imitates, but
/// inherits the iteration cap and cycle detection of the max-selection update
/// because nothing guarantees the emulation converges.
pub fn run_emulated(
    w: &WeightMatrix,
    probes: &[Probe],
    params: &EmulationParams,
    config: &RetrievalConfig,
) -> Result<RetrievalOutcome> {
    if params.theta < 2 {
        return Err(Error::InvalidBasis(params.theta));
    }
    let start = Instant::now();
    let shape = w.shape();
    // The whole run fits machine words when even the worst-case aggregate
    // does; the arithmetic is exact either way.
    let narrow = bits_required(shape.clusters(), shape.cluster_size(), params.theta) <= 64;
    let outcomes: Vec<ProbeOutcome> = probes
        .par_iter()
        .map(|probe| -> Result<ProbeOutcome> {
            let mut current = encode_probe(shape, probe, ErasedFill::Active)?;
            let mut previous: Option<ActivationVector> = None;
            for t in 1..=config.max_iters {
                let scores = emulated_scores(w, &current, params, narrow)?;
                let next = select_cluster_maxima(shape, &scores);
                if convergence_check(&next, &current, ConvergenceScope::All)? {
                    return Ok(ProbeOutcome {
                        state: next,
                        status: Status::Converged,
                        iterations: t,
                    });
                }
                if let Some(prev) = &previous {
                    if convergence_check(&next, prev, ConvergenceScope::All)? {
                        return Ok(ProbeOutcome {
                            state: next,
                            status: Status::MaxItersExceeded { oscillating: true },
                            iterations: t,
                        });
                    }
                }
                previous = Some(std::mem::replace(&mut current, next));
            }
            Ok(ProbeOutcome {
                state: current,
                status: Status::MaxItersExceeded { oscillating: false },
                iterations: config.max_iters,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RetrievalOutcome {
        probes: outcomes,
        wall: start.elapsed(),
    })
}

fn emulated_scores(
    w: &WeightMatrix,
    v: &ActivationVector,
    params: &EmulationParams,
    narrow: bool,
) -> Result<Vec<u64>> {
    let shape = w.shape();
    let n = shape.total_neurons();
    let clusters = shape.clusters();
    let mut scores = vec![0u64; n];
    let mut digits = vec![0u64; clusters];
    for (i0, score) in scores.iter_mut().enumerate() {
        signal_digits(w, v, i0, &mut digits);
        if narrow {
            let u = u64_from_digits(&digits, params.theta);
            check_width(64 - u.leading_zeros() as u64, i0, params.fixed_width)?;
            *score = decode_score_u64(u, params.theta, clusters);
        } else {
            let u = big_from_digits(&digits, params.theta);
            check_width(u.bits(), i0, params.fixed_width)?;
            *score = decode_score(&u, params.theta, clusters);
        }
    }
    Ok(scores)
}

fn check_width(needed: u64, i0: usize, fixed_width: Option<u64>) -> Result<()> {
    match fixed_width {
        Some(limit) if needed > limit => Err(Error::Overflow {
            index: i0 + 1,
            needed,
            limit,
        }),
        _ => Ok(()),
    }
}
