//! Return statistics and the exploitability probe.
//!
//! Exploitability asks: holding everyone else's freshly trained policies
//! fixed, how much more return can one agent earn by training a best
//! response against them? Near an equilibrium the answer is near zero.
//! The probe forks the population (fresh RNG streams, identical learner
//! and environment state), lets agent 0 keep training against the frozen
//! rest for a fixed number of improvement loops, then compares its best
//! evaluation return against the mean return of the others. The live run
//! is never touched.

use crate::learner::{LearnerError, Population};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reward sequences have unequal lengths ({0} vs {1})")]
    UnequalLengths(usize, usize),
    #[error("no reward sequences were provided")]
    Empty,
}

/// One row of the per-iteration training record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub k: usize,
    /// Mean over agents of the discounted return across the collection
    /// steps of iteration `k`.
    pub mean_return: f64,
    /// Population standard deviation (divides by N) of the same returns.
    pub std_return: f64,
    /// Present only on iterations where the probe ran.
    pub exploitability: Option<f64>,
    /// Wall-clock duration of the iteration; excluded from determinism
    /// comparisons.
    pub seconds: f64,
}

/// Discounted return per agent, then (mean, population std) across
/// agents. All sequences must share one length (the step count).
pub fn average_discounted_return(
    reward_seqs: &[Vec<f64>],
    gamma: f64,
) -> Result<(f64, f64), MetricsError> {
    if reward_seqs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let len = reward_seqs[0].len();
    for seq in reward_seqs {
        if seq.len() != len {
            return Err(MetricsError::UnequalLengths(len, seq.len()));
        }
    }
    let returns: Vec<f64> = reward_seqs
        .iter()
        .map(|seq| {
            let mut discount = 1.0;
            let mut total = 0.0;
            for &r in seq {
                total += discount * r;
                discount *= gamma;
            }
            total
        })
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Improvement loops granted to the deviating agent.
pub const IMPROVEMENT_LOOPS: usize = 50;
/// Evaluation loops averaged after improvement.
pub const EVALUATION_LOOPS: usize = 10;

/// Approximate exploitability of the population's current joint policy.
///
/// Forks the population with RNG streams derived from `eval_seed`, runs
/// [`IMPROVEMENT_LOOPS`] cycles of collection plus training for agent 0
/// only (everyone else acts but never learns), then measures
/// [`EVALUATION_LOOPS`] windows of discounted return. The result is agent
/// 0's best window minus the others' mean across all windows; it can be
/// negative when the deviator fails to gain.
pub fn approximate_exploitability(
    pop: &Population,
    eval_seed: u64,
) -> Result<f64, LearnerError> {
    let mut fork = pop.fork_for_evaluation(eval_seed);
    for _ in 0..IMPROVEMENT_LOOPS {
        fork.collect_phase()?;
        fork.train_agent(0)?;
    }
    let n = fork.n_agents();
    let mut best_deviator = f64::NEG_INFINITY;
    let mut others_total = 0.0;
    for _ in 0..EVALUATION_LOOPS {
        let sigmas = fork.evaluate_sigma()?;
        best_deviator = best_deviator.max(sigmas[0]);
        if n > 1 {
            others_total += sigmas[1..].iter().sum::<f64>() / (n - 1) as f64;
        }
    }
    let others_mean = others_total / EVALUATION_LOOPS as f64;
    Ok(best_deviator - others_mean)
}
