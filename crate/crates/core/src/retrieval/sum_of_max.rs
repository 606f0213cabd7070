use std::time::Instant;

use rayon::prelude::*;

use crate::activation::{encode_probe, ActivationVector, ErasedFill};
use crate::error::{Error, Result};
use crate::message::Probe;
use crate::retrieval::{ProbeOutcome, RetrievalConfig, RetrievalOutcome, Status};
use crate::storage::SparseWeightView;

/// Whether an active neuron keeps hearing from every cluster.
///
/// The scan walks the neuron's sparse column cluster by cluster, stops a
/// cluster at its first active neighbor, and abandons the neuron at its first
/// silent cluster. The neuron's own cluster is served by the self-loop, which
/// contributes for any positive reinforcement factor.
pub(crate) fn survives(sparse: &SparseWeightView, v: &ActivationVector, neuron0: usize) -> bool {
    debug_assert!(v.get0(neuron0));
    let shape = sparse.shape();
    let own = shape.cluster_of0(neuron0);
    for c0 in 0..shape.clusters() {
        if c0 == own {
            continue;
        }
        let mut heard = false;
        for &r in sparse.column_cluster0(neuron0, c0) {
            if v.get0(r as usize) {
                heard = true;
                break;
            }
        }
        if !heard {
            return false;
        }
    }
    true
}

/// One synchronous update: a neuron stays active iff it was active and every
/// cluster contributes a signal. Clusters flagged in `frozen` are copied
/// through untouched.
pub fn sum_of_max_step(
    sparse: &SparseWeightView,
    v: &ActivationVector,
    frozen: Option<&[bool]>,
) -> Result<ActivationVector> {
    let shape = sparse.shape();
    if shape != v.shape() {
        return Err(shape.mismatch(&v.shape()));
    }
    if let Some(flags) = frozen {
        if flags.len() != shape.clusters() {
            return Err(Error::LengthMismatch {
                expected: shape.clusters(),
                got: flags.len(),
            });
        }
    }
    let mut next = v.clone();
    for c0 in 0..shape.clusters() {
        if frozen.is_some_and(|f| f[c0]) {
            continue;
        }
        for i0 in v.cluster_active0(c0) {
            if !survives(sparse, v, i0) {
                next.set0(i0, false);
            }
        }
    }
    Ok(next)
}

/// Repeats the shrinking update on `active` until nothing more dies, editing
/// `state` in place. Neurons outside `active` are never touched. Returns the
/// number of passes run; the active set shrinks every pass but the last, so
/// the count never exceeds the initial active count.
pub(crate) fn shrink_to_fixed_point(
    sparse: &SparseWeightView,
    state: &mut ActivationVector,
    mut active: Vec<u32>,
) -> usize {
    let mut iterations = 0;
    let mut survivors = Vec::with_capacity(active.len());
    let mut dead = Vec::new();
    while !active.is_empty() {
        iterations += 1;
        survivors.clear();
        dead.clear();
        for &i0 in &active {
            if survives(sparse, state, i0 as usize) {
                survivors.push(i0);
            } else {
                dead.push(i0);
            }
        }
        if dead.is_empty() {
            break;
        }
        // Deaths were all decided against the same snapshot; apply them now.
        for &i0 in &dead {
            state.set0(i0 as usize, false);
        }
        std::mem::swap(&mut active, &mut survivors);
    }
    iterations
}

/// Decodes `probes` by iterating the cluster-capped rule to its fixed point.
///
/// Erased clusters start fully active so every stored clique compatible with
/// the probe survives into the final ensemble. The shrinking dynamics make
/// termination unconditional, so the iteration cap in `config` is not needed
/// and every probe reports `Converged`.
pub fn run_sum_of_max(
    sparse: &SparseWeightView,
    probes: &[Probe],
    config: &RetrievalConfig,
) -> Result<RetrievalOutcome> {
    if config.gamma == 0 {
        return Err(Error::InvalidConfig(
            "sum-of-max needs a positive reinforcement factor".into(),
        ));
    }
    let start = Instant::now();
    let shape = sparse.shape();
    let outcomes: Vec<ProbeOutcome> = probes
        .par_iter()
        .map(|probe| -> Result<ProbeOutcome> {
            let mut state = encode_probe(shape, probe, ErasedFill::Active)?;
            let active: Vec<u32> = (0..shape.clusters())
                .flat_map(|c0| state.cluster_active0(c0))
                .map(|i0| i0 as u32)
                .collect();
            let iterations = shrink_to_fixed_point(sparse, &mut state, active);
            Ok(ProbeOutcome {
                state,
                status: Status::Converged,
                iterations,
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
    use crate::activation::{encode_message, extract_messages, Extraction};
    use crate::message::Message;
    use crate::retrieval::Rule;
    use crate::shape::NetworkShape;
    use crate::storage::WeightMatrix;
    use crate::testkit::{nine_neuron_network, random_network};

    fn cfg() -> RetrievalConfig {
        RetrievalConfig::new(Rule::SumOfMax, 1, 64, 0).unwrap()
    }

    #[test]
    fn stored_clique_is_a_fixed_point() {
        let (shape, w) = nine_neuron_network();
        let sparse = w.sparsify();
        let msg = Message::parse(shape, "2,2,1").unwrap();
        let v = encode_message(shape, &msg).unwrap();
        let next = sum_of_max_step(&sparse, &v, None).unwrap();
        assert_eq!(next, v);
    }

    #[test]
    fn deactivated_neurons_stay_deactivated() {
        let (shape, w) = nine_neuron_network();
        let sparse = w.sparsify();
        let probe = Probe::parse(shape, "?,?,1").unwrap();
        let mut v = encode_probe(shape, &probe, ErasedFill::Active).unwrap();
        for _ in 0..4 {
            let next = sum_of_max_step(&sparse, &v, None).unwrap();
            for i0 in 0..shape.total_neurons() {
                if !v.get0(i0) {
                    assert!(!next.get0(i0));
                }
            }
            v = next;
        }
    }

    #[test]
    fn recovers_unique_completion() {
        let (shape, w) = nine_neuron_network();
        let sparse = w.sparsify();
        let probe = Probe::parse(shape, "3,?,1").unwrap();
        let out = run_sum_of_max(&sparse, &[probe], &cfg()).unwrap();
        let expected = Message::parse(shape, "3,2,1").unwrap();
        assert_eq!(out.probes[0].status, Status::Converged);
        assert_eq!(extract_messages(&out.probes[0].state), Extraction::Unique(expected));
    }

    #[test]
    fn reports_all_matching_completions() {
        let shape = NetworkShape::new(3, 3).unwrap();
        let mut w = WeightMatrix::new(shape);
        w.store(&Message::parse(shape, "1,3,1").unwrap()).unwrap();
        w.store(&Message::parse(shape, "1,3,2").unwrap()).unwrap();
        let sparse = w.sparsify();
        let probe = Probe::parse(shape, "1,3,?").unwrap();
        let out = run_sum_of_max(&sparse, &[probe], &cfg()).unwrap();
        match extract_messages(&out.probes[0].state) {
            Extraction::Ambiguous { candidates, .. } => {
                assert_eq!(candidates, vec![vec![1], vec![3], vec![1, 2]]);
            }
            other => panic!("expected both completions, got {other:?}"),
        }
    }

    #[test]
    fn unexplainable_probe_goes_dark() {
        let shape = NetworkShape::new(3, 3).unwrap();
        let mut w = WeightMatrix::new(shape);
        w.store(&Message::parse(shape, "1,1,1").unwrap()).unwrap();
        let sparse = w.sparsify();
        // Full probe that matches no stored clique.
        let probe = Probe::parse(shape, "1,1,2").unwrap();
        let out = run_sum_of_max(&sparse, &[probe], &cfg()).unwrap();
        assert_eq!(out.probes[0].status, Status::Converged);
        assert_eq!(out.probes[0].state.active_count(), 0);
        assert_eq!(extract_messages(&out.probes[0].state), Extraction::Empty);
    }

    #[test]
    fn iteration_count_is_bounded_by_initial_actives() {
        let shape = NetworkShape::new(4, 8).unwrap();
        let (w, msgs) = random_network(shape, 12, 99);
        let sparse = w.sparsify();
        let probe = Probe::new(
            shape,
            vec![
                crate::message::Slot::Known(msgs[0].symbol(1)),
                crate::message::Slot::Erased,
                crate::message::Slot::Erased,
                crate::message::Slot::Erased,
            ],
        )
        .unwrap();
        let initial = encode_probe(shape, &probe, ErasedFill::Active)
            .unwrap()
            .active_count();
        let out = run_sum_of_max(&sparse, &[probe], &cfg()).unwrap();
        assert!(out.probes[0].iterations <= initial);
    }

    #[test]
    fn rejects_zero_reinforcement() {
        let (_, w) = nine_neuron_network();
        let sparse = w.sparsify();
        let bad = RetrievalConfig {
            rule: Rule::SumOfMax,
            gamma: 0,
            max_iters: 8,
            seed: 0,
        };
        assert!(run_sum_of_max(&sparse, &[], &bad).is_err());
    }
}
