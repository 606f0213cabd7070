use crate::activation::ActivationVector;
use crate::error::{Error, Result};

/// Which part of the state a convergence test inspects.
#[derive(Debug, Clone, Copy)]
pub enum ConvergenceScope<'a> {
    /// Compare every neuron.
    All,
    /// Compare only clusters flagged `true`; `flags[c]` refers to cluster `c+1`.
    ErasedOnly(&'a [bool]),
}

/// True iff `prev` and `next` agree on every in-scope neuron.
///
/// The comparison is a balanced AND-reduction over the packed words, so a
/// data-parallel backend can evaluate it in depth logarithmic in the length
/// compared.
pub fn convergence_check(
    prev: &ActivationVector,
    next: &ActivationVector,
    scope: ConvergenceScope<'_>,
) -> Result<bool> {
    if prev.shape() != next.shape() {
        return Err(prev.shape().mismatch(&next.shape()));
    }
    match scope {
        ConvergenceScope::All => Ok(words_equal_tree(prev.words(), next.words())),
        ConvergenceScope::ErasedOnly(flags) => {
            let clusters = prev.shape().clusters();
            if flags.len() != clusters {
                return Err(Error::LengthMismatch {
                    expected: clusters,
                    got: flags.len(),
                });
            }
            Ok(flags.iter().enumerate().all(|(c0, &erased)| {
                !erased || words_equal_tree(prev.cluster_words(c0), next.cluster_words(c0))
            }))
        }
    }
}

fn words_equal_tree(a: &[u64], b: &[u64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    match a.len() {
        0 => true,
        1 => a[0] == b[0],
        len => {
            let mid = len / 2;
            words_equal_tree(&a[..mid], &b[..mid]) && words_equal_tree(&a[mid..], &b[mid..])
        }
    }
}
