use std::time::Instant;

use rayon::prelude::*;

use crate::activation::{encode_probe, ActivationVector, ErasedFill};
use crate::error::Result;
use crate::message::Probe;
use crate::retrieval::convergence::{convergence_check, ConvergenceScope};
use crate::retrieval::{ProbeOutcome, RetrievalConfig, RetrievalOutcome, ScoreVector, Status};
use crate::shape::NetworkShape;
use crate::storage::WeightMatrix;

/// Scores every neuron by its active-neighbor count plus the self-loop term.
pub fn sum_of_sum_scores(
    w: &WeightMatrix,
    v: &ActivationVector,
    gamma: u64,
) -> Result<ScoreVector> {
    if w.shape() != v.shape() {
        return Err(w.shape().mismatch(&v.shape()));
    }
    let n = w.shape().total_neurons();
    let mut scores = vec![0u64; n];
    for (i, score) in scores.iter_mut().enumerate() {
        *score = w.active_neighbors0(i, v) + if v.get0(i) { gamma } else { 0 };
    }
    Ok(scores)
}

/// Keeps, in every cluster, exactly the neurons attaining the cluster's
/// maximum score. Ties all survive; a cluster whose maximum is zero therefore
/// lights up entirely.
pub fn select_cluster_maxima(shape: NetworkShape, scores: &[u64]) -> ActivationVector {
    debug_assert_eq!(scores.len(), shape.total_neurons());
    let l = shape.cluster_size();
    let mut next = ActivationVector::zero(shape);
    for c0 in 0..shape.clusters() {
        let cluster_scores = &scores[c0 * l..(c0 + 1) * l];
        let max = cluster_scores.iter().copied().max().unwrap_or(0);
        for (l0, &s) in cluster_scores.iter().enumerate() {
            if s == max {
                next.set0(c0 * l + l0, true);
            }
        }
    }
    next
}

/// One synchronous update of the whole network.
pub fn sum_of_sum_step(
    w: &WeightMatrix,
    v: &ActivationVector,
    gamma: u64,
) -> Result<ActivationVector> {
    let scores = sum_of_sum_scores(w, v, gamma)?;
    Ok(select_cluster_maxima(w.shape(), &scores))
}

/// Iterates the batch until each column reaches a fixed point, is caught in a
/// period-2 cycle, or hits the iteration cap. Probes start with erased
/// clusters silent; converged columns are frozen and cost nothing further.
pub fn run_sum_of_sum(
    w: &WeightMatrix,
    probes: &[Probe],
    config: &RetrievalConfig,
) -> Result<RetrievalOutcome> {
    let start = Instant::now();
    let shape = w.shape();
    let outcomes: Vec<ProbeOutcome> = probes
        .par_iter()
        .map(|probe| -> Result<ProbeOutcome> {
            let mut current = encode_probe(shape, probe, ErasedFill::Inactive)?;
            let mut previous: Option<ActivationVector> = None;
            for t in 1..=config.max_iters {
                let next = sum_of_sum_step(w, &current, config.gamma)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::extract_messages;
    use crate::activation::Extraction;
    use crate::message::Message;
    use crate::retrieval::Rule;
    use crate::testkit::nine_neuron_network;

    #[test]
    fn reference_trajectory_oscillates() {
        let (shape, w) = nine_neuron_network();
        let probe = Probe::parse(shape, "?,?,1").unwrap();
        let v0 = encode_probe(shape, &probe, ErasedFill::Inactive).unwrap();

        let s0 = sum_of_sum_scores(&w, &v0, 1).unwrap();
        assert_eq!(s0, vec![1, 1, 1, 1, 1, 1, 1, 0, 0]);
        let v1 = select_cluster_maxima(shape, &s0);
        assert_eq!(v1.bits(), vec![1, 1, 1, 1, 1, 1, 1, 0, 0]);

        let s1 = sum_of_sum_scores(&w, &v1, 1).unwrap();
        assert_eq!(s1, vec![4, 3, 3, 3, 4, 3, 7, 0, 0]);
        let v2 = select_cluster_maxima(shape, &s1);
        assert_eq!(v2.bits(), vec![1, 0, 0, 0, 1, 0, 1, 0, 0]);

        let s2 = sum_of_sum_scores(&w, &v2, 1).unwrap();
        assert_eq!(s2, vec![2, 2, 2, 2, 2, 2, 3, 0, 0]);
        let v3 = select_cluster_maxima(shape, &s2);
        assert_eq!(v3, v1);
    }

    #[test]
    fn oscillation_is_flagged_early() {
        let (shape, w) = nine_neuron_network();
        let probe = Probe::parse(shape, "?,?,1").unwrap();
        let cfg = RetrievalConfig::new(Rule::SumOfSum, 1, 20, 0).unwrap();
        let out = run_sum_of_sum(&w, &[probe], &cfg).unwrap();
        assert_eq!(out.probes[0].status, Status::MaxItersExceeded { oscillating: true });
        assert!(out.probes[0].iterations < 20);
    }

    #[test]
    fn larger_reinforcement_converges() {
        let (shape, w) = nine_neuron_network();
        let probe = Probe::parse(shape, "?,?,1").unwrap();
        let cfg = RetrievalConfig::new(Rule::SumOfSum, 2, 20, 0).unwrap();
        let out = run_sum_of_sum(&w, &[probe], &cfg).unwrap();
        assert_eq!(out.probes[0].status, Status::Converged);
    }

    #[test]
    fn all_silent_input_lights_everything() {
        let (shape, w) = nine_neuron_network();
        let v = ActivationVector::zero(shape);
        let next = sum_of_sum_step(&w, &v, 1).unwrap();
        assert_eq!(next.active_count(), shape.total_neurons());
    }

    #[test]
    fn single_clique_recovers_from_one_erasure() {
        let shape = NetworkShape::new(4, 5).unwrap();
        let mut w = WeightMatrix::new(shape);
        let msg = Message::parse(shape, "2,4,1,5").unwrap();
        w.store(&msg).unwrap();
        let probe = Probe::parse(shape, "2,?,1,5").unwrap();
        let cfg = RetrievalConfig::new(Rule::SumOfSum, 1, 20, 0).unwrap();
        let out = run_sum_of_sum(&w, &[probe], &cfg).unwrap();
        assert_eq!(out.probes[0].status, Status::Converged);
        assert!(out.probes[0].iterations <= 2);
        assert_eq!(extract_messages(&out.probes[0].state), Extraction::Unique(msg));
    }

    #[test]
    fn scores_stay_in_bounds() {
        let (shape, w) = nine_neuron_network();
        let probe = Probe::parse(shape, "?,?,1").unwrap();
        let mut v = encode_probe(shape, &probe, ErasedFill::Active).unwrap();
        let gamma = 3u64;
        let bound = gamma + ((shape.clusters() - 1) * shape.cluster_size()) as u64;
        for _ in 0..4 {
            let s = sum_of_sum_scores(&w, &v, gamma).unwrap();
            assert!(s.iter().all(|&x| x <= bound));
            v = select_cluster_maxima(shape, &s);
        }
    }
}
