//! Clustered binary associative memory.
//!
//! Messages of `C` symbols are stored by activating one neuron in each of `C`
//! clusters and connecting all pairs, so every message becomes a clique in a
//! C-partite graph. Presenting a partially erased message activates an
//! initial state from which one of three retrieval rules reconstructs the
//! stored content:
//!
//! - **sum-of-sum** scores neurons by their raw active-neighbor count and
//!   keeps per-cluster maxima; fast, but it can oscillate.
//! - **sum-of-max** counts at most one signal per source cluster and keeps
//!   neurons hearing from every cluster; it always converges.
//! - **joint** seeds the sum-of-max candidate pool with a single sum-of-sum
//!   scoring pass over the erased clusters, then iterates only there.
//!
//! A carrier [`emulation`] reproduces sum-of-max scoring inside one weighted
//! matrix product by modulating each source cluster onto a power of a basis
//! `theta`, and the [`bench`] module packages corpus generation, scenario
//! runs, sweeps and CSV reporting.

mod activation;
mod error;
mod message;
mod shape;

pub mod bench;
pub mod emulation;
pub mod retrieval;
pub mod storage;

pub use activation::{
    encode_message, encode_probe, extract_messages, ActivationBatch, ActivationVector, ErasedFill,
    Extraction,
};
pub use error::{Error, Result};
pub use message::{Message, Probe, Slot};
pub use shape::NetworkShape;

#[cfg(test)]
pub(crate) mod testkit {
    use crate::message::Message;
    use crate::shape::NetworkShape;
    use crate::storage::WeightMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three clusters of three neurons with four overlapping cliques stored;
    /// the smallest network that exhibits sum-of-sum oscillation.
    pub fn nine_neuron_network() -> (NetworkShape, WeightMatrix) {
        let shape = NetworkShape::new(3, 3).unwrap();
        let mut w = WeightMatrix::new(shape);
        for text in ["1,1,1", "2,2,1", "3,2,1", "1,3,1"] {
            w.store(&Message::parse(shape, text).unwrap()).unwrap();
        }
        (shape, w)
    }

    pub fn random_message<R: Rng>(shape: NetworkShape, rng: &mut R) -> Message {
        let symbols = (0..shape.clusters())
            .map(|_| rng.gen_range(1..=shape.cluster_size()))
            .collect();
        Message::new(shape, symbols).unwrap()
    }

    pub fn random_network(
        shape: NetworkShape,
        stored: usize,
        seed: u64,
    ) -> (WeightMatrix, Vec<Message>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = WeightMatrix::new(shape);
        let msgs: Vec<Message> = (0..stored)
            .map(|_| random_message(shape, &mut rng))
            .collect();
        for m in &msgs {
            w.store(m).unwrap();
        }
        (w, msgs)
    }
}
