//! Paired t-score comparison of strategies across seeds.
//!
//! For strategies `i`, `j` and round `r`, the per-seed accuracy differences
//! `d = acc_i − acc_j` give `c = √m · μ / σ` (population `σ`). Strategy `i`
//! wins the round when `c > 2.776`, the two-sided 95% t critical value with
//! four degrees of freedom, so the threshold is calibrated for five seeds.
//! A cell holds the fraction of rounds won; cells from several settings are
//! summed.

use std::collections::{BTreeMap, BTreeSet};

use super::RunResult;
use crate::acquisition::Strategy;
use crate::error::{Error, Result};

pub const WIN_THRESHOLD: f64 = 2.776;

/// `√m · μ / σ` with the population standard deviation. A zero spread maps
/// to `+∞`, `−∞` or `0` by the sign of the mean.
pub fn t_score(diffs: &[f64]) -> Result<f64> {
    let m = diffs.len();
    if m < 2 {
        return Err(Error::InvalidSample(format!("t-score needs at least 2 differences, got {m}")));
    }
    let mf = m as f64;
    let mu = diffs.iter().sum::<f64>() / mf;
    let var = diffs.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / mf;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return Ok(if mu > 0.0 {
            f64::INFINITY
        } else if mu < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        });
    }
    Ok(mf.sqrt() * mu / sigma)
}

fn by_seed(runs: &[RunResult]) -> Result<BTreeMap<u64, &RunResult>> {
    let mut map = BTreeMap::new();
    for r in runs {
        if map.insert(r.seed, r).is_some() {
            return Err(Error::MismatchedRuns(format!("seed {} appears twice for {}", r.seed, r.strategy)));
        }
    }
    Ok(map)
}

/// Fraction of rounds in which `runs_i` beats `runs_j`.
pub fn victory_score(runs_i: &[RunResult], runs_j: &[RunResult]) -> Result<f64> {
    let a = by_seed(runs_i)?;
    let b = by_seed(runs_j)?;
    if a.is_empty() || !a.keys().eq(b.keys()) {
        return Err(Error::MismatchedRuns("strategies were run on different seeds".into()));
    }
    let rounds = a.values().next().expect("non-empty").records.len();
    if rounds == 0 || a.values().chain(b.values()).any(|r| r.records.len() != rounds) {
        return Err(Error::MismatchedRuns("runs differ in round count".into()));
    }
    let mut wins = 0usize;
    for r in 0..rounds {
        let diffs: Vec<f64> =
            a.values().zip(b.values()).map(|(x, y)| x.records[r].test_accuracy - y.records[r].test_accuracy).collect();
        if t_score(&diffs)? > WIN_THRESHOLD {
            wins += 1;
        }
    }
    Ok(wins as f64 / rounds as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    pub strategies: Vec<Strategy>,
    /// `values[i][j]`: wins of `strategies[i]` over `strategies[j]`.
    pub values: Vec<Vec<f64>>,
}

impl ComparisonMatrix {
    pub fn get(&self, i: Strategy, j: Strategy) -> Option<f64> {
        let a = self.strategies.iter().position(|&s| s == i)?;
        let b = self.strategies.iter().position(|&s| s == j)?;
        Some(self.values[a][b])
    }
}

/// Sum of per-setting victory matrices. Every setting must cover the same
/// strategies; rows and columns follow the canonical strategy order.
pub fn build_comparison_matrix(settings: &[Vec<RunResult>]) -> Result<ComparisonMatrix> {
    let first = settings.first().ok_or_else(|| Error::MismatchedRuns("no settings to compare".into()))?;
    let strategies: Vec<Strategy> = first.iter().map(|r| r.strategy).collect::<BTreeSet<_>>().into_iter().collect();
    let n = strategies.len();
    let mut values = vec![vec![0.0; n]; n];
    for setting in settings {
        let present: BTreeSet<Strategy> = setting.iter().map(|r| r.strategy).collect();
        if !present.iter().eq(strategies.iter()) {
            return Err(Error::MismatchedRuns("settings cover different strategy sets".into()));
        }
        let runs: Vec<Vec<RunResult>> = strategies
            .iter()
            .map(|&s| setting.iter().filter(|r| r.strategy == s).cloned().collect())
            .collect();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    values[i][j] += victory_score(&runs[i], &runs[j])?;
                }
            }
        }
    }
    Ok(ComparisonMatrix { strategies, values })
}
