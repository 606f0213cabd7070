use crate::error::{Error, Result};

/// Geometry of the network: `clusters` groups of `cluster_size` neurons each.
///
/// Clusters and the neurons inside them are numbered from 1 in every public
/// interface; flat neuron indices run `1..=total_neurons()` with cluster `c`
/// occupying the contiguous block `(c-1)*L+1 ..= c*L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkShape {
    clusters: usize,
    cluster_size: usize,
}

impl NetworkShape {
    /// A network needs at least two clusters: edges only exist between clusters,
    /// so a single-cluster network cannot hold anything.
    pub fn new(clusters: usize, cluster_size: usize) -> Result<Self> {
        if clusters < 2 || cluster_size < 1 {
            return Err(Error::InvalidShape {
                clusters,
                cluster_size,
            });
        }
        Ok(Self {
            clusters,
            cluster_size,
        })
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn cluster_size(&self) -> usize {
        self.cluster_size
    }

    pub fn total_neurons(&self) -> usize {
        self.clusters * self.cluster_size
    }

    /// Flat 1-based index of neuron `local` in cluster `cluster`.
    pub fn neuron_index(&self, cluster: usize, local: usize) -> Result<usize> {
        if cluster < 1 || cluster > self.clusters {
            return Err(Error::ClusterOutOfRange {
                cluster,
                clusters: self.clusters,
            });
        }
        if local < 1 || local > self.cluster_size {
            return Err(Error::NeuronOutOfRange {
                local,
                cluster_size: self.cluster_size,
            });
        }
        Ok((cluster - 1) * self.cluster_size + local)
    }

    /// Inverse of [`neuron_index`](Self::neuron_index): 1-based `(cluster, local)`.
    pub fn cluster_local(&self, index: usize) -> Result<(usize, usize)> {
        if index < 1 || index > self.total_neurons() {
            return Err(Error::IndexOutOfRange {
                index,
                total: self.total_neurons(),
            });
        }
        let zero = index - 1;
        Ok((zero / self.cluster_size + 1, zero % self.cluster_size + 1))
    }

    /// 0-based cluster of a 0-based neuron index.
    pub(crate) fn cluster_of0(&self, neuron0: usize) -> usize {
        neuron0 / self.cluster_size
    }

    // Activation words are packed per cluster so that every cluster starts on
    // a word boundary; trailing pad bits of a cluster stay zero.
    pub(crate) fn words_per_cluster(&self) -> usize {
        self.cluster_size.div_ceil(64)
    }

    pub(crate) fn words_total(&self) -> usize {
        self.clusters * self.words_per_cluster()
    }

    /// Word index and bit mask of 0-based `(cluster, local)`.
    pub(crate) fn word_bit0(&self, cluster0: usize, local0: usize) -> (usize, u64) {
        let word = cluster0 * self.words_per_cluster() + local0 / 64;
        (word, 1u64 << (local0 % 64))
    }

    pub(crate) fn word_bit_of0(&self, neuron0: usize) -> (usize, u64) {
        self.word_bit0(
            neuron0 / self.cluster_size,
            neuron0 % self.cluster_size,
        )
    }

    pub(crate) fn mismatch(&self, other: &NetworkShape) -> Error {
        Error::ShapeMismatch(
            format!("{}x{}", self.clusters, self.cluster_size),
            format!("{}x{}", other.clusters, other.cluster_size),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(NetworkShape::new(1, 16).is_err());
        assert!(NetworkShape::new(4, 0).is_err());
        assert!(NetworkShape::new(2, 1).is_ok());
    }

    #[test]
    fn flat_index_formula() {
        let shape = NetworkShape::new(4, 16).unwrap();
        assert_eq!(shape.neuron_index(1, 1).unwrap(), 1);
        assert_eq!(shape.neuron_index(3, 5).unwrap(), 37);
        assert_eq!(shape.cluster_local(64).unwrap(), (4, 16));
        assert!(shape.neuron_index(5, 1).is_err());
        assert!(shape.neuron_index(1, 17).is_err());
        assert!(shape.cluster_local(0).is_err());
        assert!(shape.cluster_local(65).is_err());
    }

    proptest! {
        #[test]
        fn index_is_a_bijection(c in 2usize..6, l in 1usize..70) {
            let shape = NetworkShape::new(c, l).unwrap();
            let mut seen = vec![false; shape.total_neurons()];
            for cluster in 1..=c {
                for local in 1..=l {
                    let i = shape.neuron_index(cluster, local).unwrap();
                    prop_assert!((1..=shape.total_neurons()).contains(&i));
                    prop_assert!(!seen[i - 1]);
                    seen[i - 1] = true;
                    prop_assert_eq!(shape.cluster_local(i).unwrap(), (cluster, local));
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }
}
