use std::io::{Read, Write};

use crate::activation::ActivationVector;
use crate::error::{Error, Result};
use crate::message::Message;
use crate::shape::NetworkShape;

const FILE_MAGIC: &[u8; 8] = b"CLIQUEWM";
const FILE_VERSION: u32 = 1;

/// Symmetric binary adjacency over all neurons, aggregating every stored clique.
///
/// Rows are packed in the same cluster-aligned word layout as
/// [`ActivationVector`], so scoring a neuron is a word-wise AND + popcount
/// against an activation column. Within-cluster entries are always zero and
/// the diagonal is not stored; the reinforcement factor is supplied at
/// retrieval time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightMatrix {
    shape: NetworkShape,
    row_words: usize,
    bits: Vec<u64>,
    stored_count: u64,
}

impl WeightMatrix {
    pub fn new(shape: NetworkShape) -> Self {
        let row_words = shape.words_total();
        Self {
            shape,
            row_words,
            bits: vec![0; shape.total_neurons() * row_words],
            stored_count: 0,
        }
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    /// Number of `store` calls applied, repeated messages included.
    pub fn stored_count(&self) -> u64 {
        self.stored_count
    }

    /// Adds the clique of `msg`: an edge between the chosen neurons of every
    /// cluster pair. Edges are binary; re-storing is a no-op on the bits.
    pub fn store(&mut self, msg: &Message) -> Result<()> {
        if msg.shape() != self.shape {
            return Err(self.shape.mismatch(&msg.shape()));
        }
        let l = self.shape.cluster_size();
        let neurons: Vec<usize> = msg
            .symbols()
            .iter()
            .enumerate()
            .map(|(c0, &s)| c0 * l + (s - 1))
            .collect();
        for (a, &i) in neurons.iter().enumerate() {
            for &j in &neurons[a + 1..] {
                self.set_edge0(i, j);
            }
        }
        self.stored_count += 1;
        Ok(())
    }

    /// True iff every edge of the message's clique is present. Never misses a
    /// stored message; may accept a clique assembled from several of them.
    pub fn recognize(&self, msg: &Message) -> Result<bool> {
        if msg.shape() != self.shape {
            return Err(self.shape.mismatch(&msg.shape()));
        }
        let l = self.shape.cluster_size();
        let neurons: Vec<usize> = msg
            .symbols()
            .iter()
            .enumerate()
            .map(|(c0, &s)| c0 * l + (s - 1))
            .collect();
        for (a, &i) in neurons.iter().enumerate() {
            for &j in &neurons[a + 1..] {
                if !self.edge0(i, j) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Whether 1-based neurons `i` and `j` are connected. The diagonal and
    /// within-cluster pairs are never connected.
    pub fn contains_edge(&self, i: usize, j: usize) -> Result<bool> {
        let total = self.shape.total_neurons();
        for index in [i, j] {
            if index < 1 || index > total {
                return Err(Error::IndexOutOfRange { index, total });
            }
        }
        Ok(self.edge0(i - 1, j - 1))
    }

    /// Total undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum::<usize>() / 2
    }

    fn set_edge0(&mut self, i: usize, j: usize) {
        debug_assert_ne!(self.shape.cluster_of0(i), self.shape.cluster_of0(j));
        let (wj, mj) = self.shape.word_bit_of0(j);
        self.bits[i * self.row_words + wj] |= mj;
        let (wi, mi) = self.shape.word_bit_of0(i);
        self.bits[j * self.row_words + wi] |= mi;
    }

    pub(crate) fn edge0(&self, i: usize, j: usize) -> bool {
        let (wj, mj) = self.shape.word_bit_of0(j);
        self.bits[i * self.row_words + wj] & mj != 0
    }

    /// Packed adjacency row of 0-based neuron `i`, cluster-aligned like an
    /// activation vector.
    pub(crate) fn row_words0(&self, i: usize) -> &[u64] {
        &self.bits[i * self.row_words..(i + 1) * self.row_words]
    }

    /// Number of active neighbors of 0-based neuron `i` in `v`.
    pub(crate) fn active_neighbors0(&self, i: usize, v: &ActivationVector) -> u64 {
        self.row_words0(i)
            .iter()
            .zip(v.words())
            .map(|(r, a)| (r & a).count_ones() as u64)
            .sum()
    }

    /// Active neighbors of 0-based neuron `i` within 0-based `cluster0`.
    pub(crate) fn active_neighbors_in_cluster0(
        &self,
        i: usize,
        cluster0: usize,
        v: &ActivationVector,
    ) -> u64 {
        let wpc = self.shape.words_per_cluster();
        let start = cluster0 * wpc;
        let row = &self.bits[i * self.row_words + start..i * self.row_words + start + wpc];
        row.iter()
            .zip(v.cluster_words(cluster0))
            .map(|(r, a)| (r & a).count_ones() as u64)
            .sum()
    }

    /// Compressed column view with per-column sorted row lists.
    pub fn sparsify(&self) -> SparseWeightView {
        let n = self.shape.total_neurons();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut rows = Vec::new();
        col_ptr.push(0);
        // Symmetry makes column j equal to row j, which is packed and cheap
        // to scan in order.
        for j in 0..n {
            let wpc = self.shape.words_per_cluster();
            let l = self.shape.cluster_size();
            for c0 in 0..self.shape.clusters() {
                let base = c0 * l;
                let word_base = j * self.row_words + c0 * wpc;
                for w in 0..wpc {
                    let mut word = self.bits[word_base + w];
                    while word != 0 {
                        let bit = word.trailing_zeros() as usize;
                        rows.push((base + w * 64 + bit) as u32);
                        word &= word - 1;
                    }
                }
            }
            col_ptr.push(rows.len());
        }
        SparseWeightView {
            shape: self.shape,
            col_ptr,
            rows,
        }
    }

    /// Serializes header plus the packed upper-triangular bitmap. Symmetry is
    /// rebuilt on load, so it can never be violated by a file.
    pub fn save<W: Write>(&self, mut dest: W) -> Result<()> {
        dest.write_all(FILE_MAGIC)?;
        dest.write_all(&FILE_VERSION.to_le_bytes())?;
        dest.write_all(&(self.shape.clusters() as u32).to_le_bytes())?;
        dest.write_all(&(self.shape.cluster_size() as u32).to_le_bytes())?;
        dest.write_all(&self.stored_count.to_le_bytes())?;
        let n = self.shape.total_neurons();
        let mut word = 0u64;
        let mut filled = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.edge0(i, j) {
                    word |= 1 << filled;
                }
                filled += 1;
                if filled == 64 {
                    dest.write_all(&word.to_le_bytes())?;
                    word = 0;
                    filled = 0;
                }
            }
        }
        if filled > 0 {
            dest.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut src: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut src, &mut magic, "magic")?;
        if &magic != FILE_MAGIC {
            return Err(Error::Format("bad magic".to_string()));
        }
        let version = read_u32(&mut src, "version")?;
        if version != FILE_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let clusters = read_u32(&mut src, "cluster count")? as usize;
        let cluster_size = read_u32(&mut src, "cluster size")? as usize;
        let shape = NetworkShape::new(clusters, cluster_size)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut stored = [0u8; 8];
        read_exact(&mut src, &mut stored, "stored count")?;
        let stored_count = u64::from_le_bytes(stored);

        let n = shape.total_neurons();
        let pair_count = n * (n - 1) / 2;
        let payload_words = pair_count.div_ceil(64);
        let mut payload = vec![0u64; payload_words];
        for w in payload.iter_mut() {
            let mut buf = [0u8; 8];
            read_exact(&mut src, &mut buf, "payload")?;
            *w = u64::from_le_bytes(buf);
        }
        let mut trailing = [0u8; 1];
        if src.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after payload".to_string()));
        }
        if payload_words > 0 {
            let used = pair_count - (payload_words - 1) * 64;
            if used < 64 && payload[payload_words - 1] >> used != 0 {
                return Err(Error::Format("pad bits set in payload".to_string()));
            }
        }

        let mut w = Self::new(shape);
        w.stored_count = stored_count;
        let mut cursor = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                if payload[cursor / 64] >> (cursor % 64) & 1 == 1 {
                    if shape.cluster_of0(i) == shape.cluster_of0(j) {
                        return Err(Error::Format(format!(
                            "edge inside a cluster between neurons {} and {}",
                            i + 1,
                            j + 1
                        )));
                    }
                    w.set_edge0(i, j);
                }
                cursor += 1;
            }
        }
        Ok(w)
    }
}

fn read_exact<R: Read>(src: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    src.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated {what}")))
}

fn read_u32<R: Read>(src: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(src, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

/// Compressed-column companion of [`WeightMatrix`]: for every column, the
/// ascending row indices of its nonzero entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseWeightView {
    shape: NetworkShape,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
}

impl SparseWeightView {
    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.len()
    }

    /// Ascending 1-based row indices of 1-based column `j`.
    pub fn column(&self, j: usize) -> Result<Vec<usize>> {
        let total = self.shape.total_neurons();
        if j < 1 || j > total {
            return Err(Error::IndexOutOfRange { index: j, total });
        }
        Ok(self.column0(j - 1).iter().map(|&r| r as usize + 1).collect())
    }

    /// Membership test, 1-based; agrees with the dense matrix everywhere.
    pub fn contains_edge(&self, i: usize, j: usize) -> Result<bool> {
        let total = self.shape.total_neurons();
        for index in [i, j] {
            if index < 1 || index > total {
                return Err(Error::IndexOutOfRange { index, total });
            }
        }
        Ok(self.column0(j - 1).binary_search(&((i - 1) as u32)).is_ok())
    }

    pub(crate) fn column0(&self, j: usize) -> &[u32] {
        &self.rows[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    /// Slice of column `j`'s rows that fall in 0-based `cluster0`.
    pub(crate) fn column_cluster0(&self, j: usize, cluster0: usize) -> &[u32] {
        let col = self.column0(j);
        let lo = (cluster0 * self.shape.cluster_size()) as u32;
        let hi = lo + self.shape.cluster_size() as u32;
        let start = col.partition_point(|&r| r < lo);
        let end = start + col[start..].partition_point(|&r| r < hi);
        &col[start..end]
    }

    /// Rebuilds a dense matrix; the stored-count is not part of the view.
    pub fn to_dense(&self) -> WeightMatrix {
        let mut w = WeightMatrix::new(self.shape);
        for j in 0..self.shape.total_neurons() {
            for &r in self.column0(j) {
                let r = r as usize;
                if r > j {
                    w.set_edge0(r, j);
                }
            }
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape3x3() -> NetworkShape {
        NetworkShape::new(3, 3).unwrap()
    }

    fn nine_neuron_fixture() -> WeightMatrix {
        crate::testkit::nine_neuron_network().1
    }

    /// Off-diagonal part of the fixture's expected adjacency.
    const NINE_NEURON_ADJACENCY: [[u8; 9]; 9] = [
        [0, 0, 0, 1, 0, 1, 1, 0, 0],
        [0, 0, 0, 0, 1, 0, 1, 0, 0],
        [0, 0, 0, 0, 1, 0, 1, 0, 0],
        [1, 0, 0, 0, 0, 0, 1, 0, 0],
        [0, 1, 1, 0, 0, 0, 1, 0, 0],
        [1, 0, 0, 0, 0, 0, 1, 0, 0],
        [1, 1, 1, 1, 1, 1, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0],
    ];

    #[test]
    fn single_store_sets_exactly_the_clique() {
        let shape = shape3x3();
        let mut w = WeightMatrix::new(shape);
        w.store(&Message::parse(shape, "1,1,1").unwrap()).unwrap();
        let mut edges = Vec::new();
        for i in 1..=9 {
            for j in (i + 1)..=9 {
                if w.contains_edge(i, j).unwrap() {
                    edges.push((i, j));
                }
            }
        }
        assert_eq!(edges, vec![(1, 4), (1, 7), (4, 7)]);
        assert_eq!(w.edge_count(), 3);
    }

    #[test]
    fn fixture_matches_reference_adjacency() {
        let w = nine_neuron_fixture();
        for i in 1..=9 {
            for j in 1..=9 {
                let expected = NINE_NEURON_ADJACENCY[i - 1][j - 1] == 1;
                assert_eq!(w.contains_edge(i, j).unwrap(), expected, "edge ({i},{j})");
            }
        }
        assert_eq!(w.stored_count(), 4);
    }

    #[test]
    fn store_is_idempotent_on_bits() {
        let shape = shape3x3();
        let msg = Message::parse(shape, "2,3,1").unwrap();
        let mut once = WeightMatrix::new(shape);
        once.store(&msg).unwrap();
        let mut twice = WeightMatrix::new(shape);
        twice.store(&msg).unwrap();
        twice.store(&msg).unwrap();
        assert_eq!(once.bits, twice.bits);
        assert_eq!(twice.stored_count(), 2);
    }

    #[test]
    fn recognizes_stored_but_not_unstored() {
        let shape = shape3x3();
        let w = nine_neuron_fixture();
        assert!(w.recognize(&Message::parse(shape, "2,2,1").unwrap()).unwrap());
        assert!(!w.recognize(&Message::parse(shape, "2,1,1").unwrap()).unwrap());
        let empty = WeightMatrix::new(shape);
        for a in 1..=3 {
            for b in 1..=3 {
                for c in 1..=3 {
                    let m = Message::new(shape, vec![a, b, c]).unwrap();
                    assert!(!empty.recognize(&m).unwrap());
                }
            }
        }
    }

    #[test]
    fn sparse_view_of_fixture() {
        let w = nine_neuron_fixture();
        let sparse = w.sparsify();
        assert_eq!(sparse.column(7).unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(sparse.column(8).unwrap(), Vec::<usize>::new());
        let empty = WeightMatrix::new(shape3x3()).sparsify();
        assert_eq!(empty.nonzeros(), 0);
    }

    #[test]
    fn save_load_round_trip() {
        let w = nine_neuron_fixture();
        let mut buf = Vec::new();
        w.save(&mut buf).unwrap();
        let loaded = WeightMatrix::load(buf.as_slice()).unwrap();
        assert_eq!(loaded, w);
        assert_eq!(loaded.stored_count(), 4);
    }

    #[test]
    fn load_rejects_corruption() {
        let w = nine_neuron_fixture();
        let mut buf = Vec::new();
        w.save(&mut buf).unwrap();

        let truncated = &buf[..buf.len() - 1];
        assert!(matches!(WeightMatrix::load(truncated), Err(Error::Format(_))));

        let mut bad_magic = buf.clone();
        bad_magic[0] ^= 0xFF;
        assert!(matches!(WeightMatrix::load(bad_magic.as_slice()), Err(Error::Format(_))));

        let mut extended = buf.clone();
        extended.push(0);
        assert!(matches!(WeightMatrix::load(extended.as_slice()), Err(Error::Format(_))));
    }

    fn random_messages(shape: NetworkShape, count: usize, seed: u64) -> Vec<Message> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let symbols = (0..shape.clusters())
                    .map(|_| rng.gen_range(1..=shape.cluster_size()))
                    .collect();
                Message::new(shape, symbols).unwrap()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn store_keeps_structural_invariants(c in 2usize..5, l in 1usize..6, count in 0usize..30, seed: u64) {
            let shape = NetworkShape::new(c, l).unwrap();
            let mut w = WeightMatrix::new(shape);
            let msgs = random_messages(shape, count, seed);
            for m in &msgs {
                w.store(m).unwrap();
            }
            let n = shape.total_neurons();
            for i in 1..=n {
                for j in 1..=n {
                    let e = w.contains_edge(i, j).unwrap();
                    prop_assert_eq!(e, w.contains_edge(j, i).unwrap());
                    let same_cluster = (i - 1) / l == (j - 1) / l;
                    if same_cluster {
                        prop_assert!(!e);
                    }
                }
            }
            for m in &msgs {
                prop_assert!(w.recognize(m).unwrap());
            }
        }

        #[test]
        fn store_order_does_not_matter(seed: u64) {
            let shape = NetworkShape::new(3, 4).unwrap();
            let msgs = random_messages(shape, 12, seed);
            let mut forward = WeightMatrix::new(shape);
            for m in &msgs {
                forward.store(m).unwrap();
            }
            let mut backward = WeightMatrix::new(shape);
            for m in msgs.iter().rev() {
                backward.store(m).unwrap();
            }
            prop_assert_eq!(forward.bits, backward.bits);
        }

        #[test]
        fn sparse_agrees_with_dense_everywhere(count in 0usize..25, seed: u64) {
            let shape = NetworkShape::new(3, 5).unwrap();
            let mut w = WeightMatrix::new(shape);
            for m in random_messages(shape, count, seed) {
                w.store(&m).unwrap();
            }
            let sparse = w.sparsify();
            let n = shape.total_neurons();
            for i in 1..=n {
                for j in 1..=n {
                    prop_assert_eq!(
                        sparse.contains_edge(i, j).unwrap(),
                        w.contains_edge(i, j).unwrap()
                    );
                }
            }
            let dense = sparse.to_dense();
            prop_assert_eq!(dense.bits, w.bits);
        }
    }
}
