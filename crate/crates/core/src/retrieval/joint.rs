use std::time::Instant;

use rayon::prelude::*;

use crate::activation::{encode_probe, ActivationVector, ErasedFill};
use crate::error::{Error, Result};
use crate::message::Probe;
use crate::retrieval::sum_of_max::shrink_to_fixed_point;
use crate::retrieval::{ProbeOutcome, RetrievalConfig, RetrievalOutcome, Status};
use crate::storage::{SparseWeightView, WeightMatrix};

/// The seeding pass of the joint scheme.
///
/// Known clusters keep their single neuron. Every erased cluster is scored by
/// one counting pass over the known actives and keeps exactly the neurons
/// receiving one signal per known cluster; a clique neuron can neither get
/// more nor fewer.
pub fn joint_candidate_pass(w: &WeightMatrix, probe: &Probe) -> Result<ActivationVector> {
    let shape = w.shape();
    let v0 = encode_probe(shape, probe, ErasedFill::Inactive)?;
    let erased = probe.erased_flags();
    let e = probe.erased_count();
    if e == 0 {
        return Ok(v0);
    }
    let target = (shape.clusters() - e) as u32;

    let l = shape.cluster_size();
    let mut signals = vec![0u32; shape.total_neurons()];
    for c0 in 0..shape.clusters() {
        if erased[c0] {
            continue;
        }
        let j0 = v0.cluster_active0(c0)[0];
        let row = w.row_words0(j0);
        let wpc = shape.words_per_cluster();
        for (t0, &is_erased) in erased.iter().enumerate() {
            if !is_erased {
                continue;
            }
            for wi in 0..wpc {
                let mut word = row[t0 * wpc + wi];
                while word != 0 {
                    let bit = word.trailing_zeros() as usize;
                    signals[t0 * l + wi * 64 + bit] += 1;
                    word &= word - 1;
                }
            }
        }
    }

    let mut v1 = v0;
    for (c0, &is_erased) in erased.iter().enumerate() {
        if !is_erased {
            continue;
        }
        for l0 in 0..l {
            if signals[c0 * l + l0] == target {
                v1.set0(c0 * l + l0, true);
            }
        }
    }
    Ok(v1)
}

/// Hybrid decoding: one scoring pass prunes the erased clusters down to a
/// small candidate pool, then the cluster-capped shrinking iteration runs on
/// those candidates alone. Known clusters stay frozen throughout, and
/// convergence is checked on erased clusters only.
pub fn run_joint(
    w: &WeightMatrix,
    sparse: &SparseWeightView,
    probes: &[Probe],
    config: &RetrievalConfig,
) -> Result<RetrievalOutcome> {
    if config.gamma == 0 {
        return Err(Error::InvalidConfig(
            "the joint scheme needs a positive reinforcement factor".into(),
        ));
    }
    if w.shape() != sparse.shape() {
        return Err(w.shape().mismatch(&sparse.shape()));
    }
    let start = Instant::now();
    let outcomes: Vec<ProbeOutcome> = probes
        .par_iter()
        .map(|probe| -> Result<ProbeOutcome> {
            let mut state = joint_candidate_pass(w, probe)?;
            let erased = probe.erased_flags();
            let candidates: Vec<u32> = erased
                .iter()
                .enumerate()
                .filter(|(_, &is_erased)| is_erased)
                .flat_map(|(c0, _)| state.cluster_active0(c0))
                .map(|i0| i0 as u32)
                .collect();
            let iterations = shrink_to_fixed_point(sparse, &mut state, candidates);
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
    use crate::activation::{extract_messages, Extraction};
    use crate::message::{Message, Slot};
    use crate::retrieval::{run_sum_of_max, Rule};
    use crate::shape::NetworkShape;
    use crate::testkit::random_network;

    fn cfg() -> RetrievalConfig {
        RetrievalConfig::new(Rule::Joint, 2, 20, 0).unwrap()
    }

    #[test]
    fn complete_probe_passes_through_untouched() {
        let shape = NetworkShape::new(3, 4).unwrap();
        let (w, msgs) = random_network(shape, 5, 11);
        let sparse = w.sparsify();
        let probe = Probe::from_message(&msgs[2]);
        let out = run_joint(&w, &sparse, &[probe], &cfg()).unwrap();
        assert_eq!(out.probes[0].iterations, 0);
        assert_eq!(out.probes[0].status, Status::Converged);
        assert_eq!(
            extract_messages(&out.probes[0].state),
            Extraction::Unique(msgs[2].clone())
        );
    }

    #[test]
    fn single_clique_pool_is_one_signal_neurons() {
        let shape = NetworkShape::new(4, 6).unwrap();
        let mut w = WeightMatrix::new(shape);
        let msg = Message::parse(shape, "3,1,5,2").unwrap();
        w.store(&msg).unwrap();
        // Everything except the first cluster erased: candidates must receive
        // exactly one signal, i.e. be neighbors of the only known neuron.
        let probe = Probe::new(
            shape,
            vec![Slot::Known(3), Slot::Erased, Slot::Erased, Slot::Erased],
        )
        .unwrap();
        let pool = joint_candidate_pass(&w, &probe).unwrap();
        let known = shape.neuron_index(1, 3).unwrap();
        let mut expected: Vec<usize> = vec![known];
        for c in 2..=4 {
            expected.push(shape.neuron_index(c, msg.symbol(c)).unwrap());
        }
        assert_eq!(pool.active_neurons(), expected);

        let sparse = w.sparsify();
        let out = run_joint(&w, &sparse, &[probe], &cfg()).unwrap();
        assert_eq!(extract_messages(&out.probes[0].state), Extraction::Unique(msg));
    }

    #[test]
    fn agrees_with_the_slow_rule_on_random_probes() {
        let shape = NetworkShape::new(4, 5).unwrap();
        for seed in 0..40u64 {
            let (w, msgs) = random_network(shape, 8, seed);
            let sparse = w.sparsify();
            let original = &msgs[seed as usize % msgs.len()];
            let mut slots: Vec<Slot> = original
                .symbols()
                .iter()
                .map(|&s| Slot::Known(s))
                .collect();
            slots[(seed as usize) % 4] = Slot::Erased;
            slots[(seed as usize + 2) % 4] = Slot::Erased;
            let probe = Probe::new(shape, slots).unwrap();

            let som_cfg = RetrievalConfig::new(Rule::SumOfMax, 1, 64, 0).unwrap();
            let som = run_sum_of_max(&sparse, std::slice::from_ref(&probe), &som_cfg).unwrap();
            let joint = run_joint(&w, &sparse, &[probe], &cfg()).unwrap();
            let som_hit = extract_messages(&som.probes[0].state) == Extraction::Unique(original.clone());
            let joint_hit =
                extract_messages(&joint.probes[0].state) == Extraction::Unique(original.clone());
            assert_eq!(som_hit, joint_hit, "seed {seed}");
        }
    }
}
