use rand::Rng;

use crate::error::{Error, Result};
use crate::message::{Message, Probe, Slot};
use crate::shape::NetworkShape;

/// How erased clusters are initialized when a probe is encoded.
///
/// Score-by-count retrieval wants erased clusters silent; score-by-cluster
/// retrieval wants every candidate lit so each cluster keeps signalling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErasedFill {
    /// Erased clusters start all-zero.
    Inactive,
    /// Erased clusters start all-one.
    Active,
}

/// Packed binary activation state of every neuron in the network.
///
/// Bits are stored in 64-bit words, one word run per cluster, so each cluster
/// starts on a word boundary and pad bits past `cluster_size` stay zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationVector {
    shape: NetworkShape,
    words: Vec<u64>,
}

impl ActivationVector {
    pub fn zero(shape: NetworkShape) -> Self {
        Self {
            shape,
            words: vec![0; shape.words_total()],
        }
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    /// Whether 1-based neuron `index` is active.
    pub fn is_active(&self, index: usize) -> Result<bool> {
        if index < 1 || index > self.shape.total_neurons() {
            return Err(Error::IndexOutOfRange {
                index,
                total: self.shape.total_neurons(),
            });
        }
        Ok(self.get0(index - 1))
    }

    /// 1-based indices of all active neurons, ascending.
    pub fn active_neurons(&self) -> Vec<usize> {
        (0..self.shape.total_neurons())
            .filter(|&i| self.get0(i))
            .map(|i| i + 1)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of active neurons in 1-based `cluster`.
    pub fn cluster_active_count(&self, cluster: usize) -> usize {
        self.cluster_words(cluster - 1)
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    /// Bits as 0/1 in flat neuron order, mostly for display and tests.
    pub fn bits(&self) -> Vec<u8> {
        (0..self.shape.total_neurons())
            .map(|i| self.get0(i) as u8)
            .collect()
    }

    pub(crate) fn get0(&self, neuron0: usize) -> bool {
        let (word, mask) = self.shape.word_bit_of0(neuron0);
        self.words[word] & mask != 0
    }

    pub(crate) fn set0(&mut self, neuron0: usize, value: bool) {
        let (word, mask) = self.shape.word_bit_of0(neuron0);
        if value {
            self.words[word] |= mask;
        } else {
            self.words[word] &= !mask;
        }
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub(crate) fn cluster_words(&self, cluster0: usize) -> &[u64] {
        let wpc = self.shape.words_per_cluster();
        &self.words[cluster0 * wpc..(cluster0 + 1) * wpc]
    }

    /// Sets every bit of 0-based `cluster0`, leaving pad bits clear.
    pub(crate) fn fill_cluster0(&mut self, cluster0: usize) {
        let l = self.shape.cluster_size();
        let wpc = self.shape.words_per_cluster();
        let start = cluster0 * wpc;
        for w in 0..wpc {
            let bits_here = (l - w * 64).min(64);
            self.words[start + w] = if bits_here == 64 {
                u64::MAX
            } else {
                (1u64 << bits_here) - 1
            };
        }
    }

    /// 0-based active neurons of 0-based `cluster0`.
    pub(crate) fn cluster_active0(&self, cluster0: usize) -> Vec<usize> {
        let base = cluster0 * self.shape.cluster_size();
        let mut out = Vec::new();
        for (w, &word) in self.cluster_words(cluster0).iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let bit = word.trailing_zeros() as usize;
                out.push(base + w * 64 + bit);
                word &= word - 1;
            }
        }
        out
    }
}

/// `K` activation columns iterated in lockstep, one per probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationBatch {
    shape: NetworkShape,
    columns: Vec<ActivationVector>,
}

impl ActivationBatch {
    pub fn new(shape: NetworkShape, columns: Vec<ActivationVector>) -> Result<Self> {
        for col in &columns {
            if col.shape() != shape {
                return Err(shape.mismatch(&col.shape()));
            }
        }
        Ok(Self { shape, columns })
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, k: usize) -> &ActivationVector {
        &self.columns[k]
    }

    pub fn columns(&self) -> &[ActivationVector] {
        &self.columns
    }

    pub fn into_columns(self) -> Vec<ActivationVector> {
        self.columns
    }
}

/// Encodes a message by activating exactly one neuron per cluster.
pub fn encode_message(shape: NetworkShape, msg: &Message) -> Result<ActivationVector> {
    if msg.shape() != shape {
        return Err(shape.mismatch(&msg.shape()));
    }
    let mut v = ActivationVector::zero(shape);
    for (c0, &s) in msg.symbols().iter().enumerate() {
        v.set0(c0 * shape.cluster_size() + (s - 1), true);
    }
    Ok(v)
}

/// Encodes a probe: known clusters get their single neuron, erased clusters
/// are filled according to `fill`.
pub fn encode_probe(shape: NetworkShape, probe: &Probe, fill: ErasedFill) -> Result<ActivationVector> {
    if probe.shape() != shape {
        return Err(shape.mismatch(&probe.shape()));
    }
    let mut v = ActivationVector::zero(shape);
    for (c0, slot) in probe.slots().iter().enumerate() {
        match (slot, fill) {
            (Slot::Known(s), _) => v.set0(c0 * shape.cluster_size() + (s - 1), true),
            (Slot::Erased, ErasedFill::Active) => v.fill_cluster0(c0),
            (Slot::Erased, ErasedFill::Inactive) => {}
        }
    }
    Ok(v)
}

/// Reading of a converged activation state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extraction {
    /// Every cluster holds exactly one active neuron.
    Unique(Message),
    /// Some cluster holds several candidates; `candidates[c]` lists the
    /// 1-based symbols still active in cluster `c+1`.
    Ambiguous {
        shape: NetworkShape,
        candidates: Vec<Vec<usize>>,
    },
    /// Some cluster went dark; the state encodes no message at all.
    Empty,
}

impl Extraction {
    /// Whether `msg` is a member of the extracted ensemble.
    pub fn contains(&self, msg: &Message) -> bool {
        match self {
            Extraction::Unique(m) => m == msg,
            Extraction::Ambiguous { shape, candidates } => {
                *shape == msg.shape()
                    && candidates
                        .iter()
                        .zip(msg.symbols())
                        .all(|(set, s)| set.contains(s))
            }
            Extraction::Empty => false,
        }
    }

    /// Picks one message from the ensemble, choosing uniformly per cluster.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<Message> {
        match self {
            Extraction::Unique(m) => Some(m.clone()),
            Extraction::Ambiguous { shape, candidates } => {
                let symbols = candidates
                    .iter()
                    .map(|set| set[rng.gen_range(0..set.len())])
                    .collect();
                Some(Message::new(*shape, symbols).expect("candidates are valid symbols"))
            }
            Extraction::Empty => None,
        }
    }
}

/// Reads messages back out of an activation state.
pub fn extract_messages(v: &ActivationVector) -> Extraction {
    let shape = v.shape();
    let mut candidates = Vec::with_capacity(shape.clusters());
    let mut unique = true;
    for c0 in 0..shape.clusters() {
        let base = c0 * shape.cluster_size();
        let set: Vec<usize> = v
            .cluster_active0(c0)
            .into_iter()
            .map(|n0| n0 - base + 1)
            .collect();
        if set.is_empty() {
            return Extraction::Empty;
        }
        unique &= set.len() == 1;
        candidates.push(set);
    }
    if unique {
        let symbols = candidates.into_iter().map(|set| set[0]).collect();
        Extraction::Unique(Message::new(shape, symbols).expect("extracted symbols are in range"))
    } else {
        Extraction::Ambiguous { shape, candidates }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encodes_the_reference_clique() {
        let shape = NetworkShape::new(4, 16).unwrap();
        let msg = Message::parse(shape, "9,4,3,10").unwrap();
        let v = encode_message(shape, &msg).unwrap();
        let expected: Vec<u8> = "0000000010000000000100000000000000100000000000000000000001000000"
            .bytes()
            .map(|b| b - b'0')
            .collect();
        assert_eq!(v.bits(), expected);
        assert_eq!(v.active_count(), 4);
    }

    #[test]
    fn encodes_the_smallest_network() {
        let shape = NetworkShape::new(2, 1).unwrap();
        let msg = Message::new(shape, vec![1, 1]).unwrap();
        assert_eq!(encode_message(shape, &msg).unwrap().bits(), vec![1, 1]);
    }

    #[test]
    fn probe_fill_policies() {
        let shape = NetworkShape::new(3, 3).unwrap();
        let probe = Probe::parse(shape, "?,?,1").unwrap();
        let off = encode_probe(shape, &probe, ErasedFill::Inactive).unwrap();
        assert_eq!(off.bits(), vec![0, 0, 0, 0, 0, 0, 1, 0, 0]);
        let on = encode_probe(shape, &probe, ErasedFill::Active).unwrap();
        assert_eq!(on.bits(), vec![1, 1, 1, 1, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn complete_probe_matches_message_encoding() {
        let shape = NetworkShape::new(4, 16).unwrap();
        let msg = Message::parse(shape, "9,4,3,10").unwrap();
        let probe = Probe::from_message(&msg);
        let direct = encode_message(shape, &msg).unwrap();
        assert_eq!(encode_probe(shape, &probe, ErasedFill::Inactive).unwrap(), direct);
        assert_eq!(encode_probe(shape, &probe, ErasedFill::Active).unwrap(), direct);
    }

    #[test]
    fn extraction_outcomes() {
        let shape = NetworkShape::new(3, 3).unwrap();
        let msg = Message::parse(shape, "2,3,1").unwrap();
        let v = encode_message(shape, &msg).unwrap();
        assert_eq!(extract_messages(&v), Extraction::Unique(msg));

        assert_eq!(extract_messages(&ActivationVector::zero(shape)), Extraction::Empty);

        let mut two = ActivationVector::zero(shape);
        two.set0(0, true);
        two.set0(3, true);
        two.set0(6, true);
        two.set0(7, true);
        match extract_messages(&two) {
            Extraction::Ambiguous { candidates, .. } => {
                assert_eq!(candidates, vec![vec![1], vec![1], vec![1, 2]]);
            }
            other => panic!("expected ambiguous, got {other:?}"),
        }
    }

    #[test]
    fn ambiguous_sampling_is_seeded() {
        let shape = NetworkShape::new(3, 3).unwrap();
        let ext = Extraction::Ambiguous {
            shape,
            candidates: vec![vec![1], vec![3], vec![1, 2]],
        };
        let a = ext.sample(&mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = ext.sample(&mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(ext.contains(&a));
        assert_eq!(Extraction::Empty.sample(&mut ChaCha8Rng::seed_from_u64(7)), None);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(c in 2usize..6, l in 1usize..70, seed: u64) {
            let shape = NetworkShape::new(c, l).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let symbols: Vec<usize> = (0..c).map(|_| rng.gen_range(1..=l)).collect();
            let msg = Message::new(shape, symbols).unwrap();
            let v = encode_message(shape, &msg).unwrap();
            prop_assert_eq!(v.active_count(), c);
            for cluster in 1..=c {
                prop_assert_eq!(v.cluster_active_count(cluster), 1);
            }
            prop_assert_eq!(extract_messages(&v), Extraction::Unique(msg));
        }
    }
}
