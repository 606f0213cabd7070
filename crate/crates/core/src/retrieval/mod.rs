//! The three retrieval rules and their shared configuration.

mod convergence;
mod joint;
mod sum_of_max;
mod sum_of_sum;

use std::time::Duration;

use crate::error::{Error, Result};
use crate::message::Probe;
use crate::storage::WeightMatrix;

pub use convergence::{convergence_check, ConvergenceScope};
pub use joint::{joint_candidate_pass, run_joint};
pub use sum_of_max::{run_sum_of_max, sum_of_max_step};
pub use sum_of_sum::{run_sum_of_sum, select_cluster_maxima, sum_of_sum_scores, sum_of_sum_step};

/// Per-neuron integer scores of one activation column, in flat neuron order.
pub type ScoreVector = Vec<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    SumOfSum,
    SumOfMax,
    Joint,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::SumOfSum => "sos",
            Rule::SumOfMax => "som",
            Rule::Joint => "joint",
        }
    }
}

/// Knobs shared by every retrieval run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalConfig {
    pub rule: Rule,
    /// Self-loop weight a neuron's own activation contributes to its score.
    pub gamma: u64,
    pub max_iters: usize,
    /// Seed for any downstream sampling; the iteration itself never samples.
    pub seed: u64,
}

impl RetrievalConfig {
    pub fn new(rule: Rule, gamma: u64, max_iters: usize, seed: u64) -> Result<Self> {
        if max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if gamma == 0 && matches!(rule, Rule::SumOfMax | Rule::Joint) {
            return Err(Error::InvalidConfig(format!(
                "rule {} needs a positive reinforcement factor",
                rule.name()
            )));
        }
        Ok(Self {
            rule,
            gamma,
            max_iters,
            seed,
        })
    }
}

/// How a single probe's iteration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxItersExceeded {
        /// Set when a period-2 cycle was detected, which the iteration cap
        /// could never resolve anyway.
        oscillating: bool,
    },
}

impl Status {
    pub fn is_converged(&self) -> bool {
        matches!(self, Status::Converged)
    }

    pub fn is_oscillating(&self) -> bool {
        matches!(self, Status::MaxItersExceeded { oscillating: true })
    }
}

/// Final state of one probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeOutcome {
    pub state: crate::activation::ActivationVector,
    pub status: Status,
    pub iterations: usize,
}

/// Result of decoding a batch of probes in lockstep.
#[derive(Debug, Clone)]
pub struct RetrievalOutcome {
    pub probes: Vec<ProbeOutcome>,
    pub wall: Duration,
}

impl RetrievalOutcome {
    pub fn converged_count(&self) -> usize {
        self.probes.iter().filter(|p| p.status.is_converged()).count()
    }

    pub fn oscillation_count(&self) -> usize {
        self.probes.iter().filter(|p| p.status.is_oscillating()).count()
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.probes.is_empty() {
            return 0.0;
        }
        self.probes.iter().map(|p| p.iterations as f64).sum::<f64>() / self.probes.len() as f64
    }
}

/// Runs `probes` under the rule named in `config`, building the sparse view
/// when the rule wants one.
pub fn run_retrieval(
    w: &WeightMatrix,
    probes: &[Probe],
    config: &RetrievalConfig,
) -> Result<RetrievalOutcome> {
    match config.rule {
        Rule::SumOfSum => run_sum_of_sum(w, probes, config),
        Rule::SumOfMax => run_sum_of_max(&w.sparsify(), probes, config),
        Rule::Joint => run_joint(w, &w.sparsify(), probes, config),
    }
}
