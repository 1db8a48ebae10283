//! Batch-selection strategies.
//!
//! Low-level functions work on embeddings or probabilities; [`Strategy::select`]
//! runs a strategy end to end from raw pool inputs and a model snapshot.

mod alfamix;
mod baselines;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use alfamix::{
    build_adversarial_candidate_set, build_candidate_set, build_candidate_set_with, compute_anchors, diversify,
    head_loss, mix, optimal_alpha_closed_form, optimal_alpha_pgd, optimal_alpha_pgd_traced, select_alfamix,
    select_latent_adversarial, select_mixing_with, AlphaRule, AnchorSet, Candidate, CandidateSet,
    InterpolationRatio, MixingSelection, PgdOptions, DEGENERACY_TOL,
};
pub use baselines::{
    bald_score, bald_scores, entropy_scores, gradient_embedding, gradient_embeddings, margin_scores, select_badge,
    select_bald, select_coreset, select_entropy, select_margin, select_random,
};

use crate::error::{Error, Result};
use crate::model::ModelSnapshot;
use crate::numkernel::{Matrix, RngStream};

pub(crate) fn check_budget(budget: usize, pool: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::InvalidConfig("budget must be at least 1".into()));
    }
    if budget > pool {
        return Err(Error::BudgetExceedsPool { budget, pool });
    }
    Ok(())
}

/// Strategy parameters. Only the fields a strategy reads matter to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Mixing radius is `epsilon_scale / √D`.
    pub epsilon_scale: f64,
    pub bald_passes: usize,
    pub dropout_rate: f64,
    pub pgd_iters: usize,
    pub pgd_step: f64,
    pub pgd_alpha_max: f64,
    /// Absolute radius of the additive latent perturbation.
    pub adversarial_epsilon: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            epsilon_scale: 0.2,
            bald_passes: 10,
            dropout_rate: 0.5,
            pgd_iters: 5,
            pgd_step: 1.0,
            pgd_alpha_max: 0.2,
            adversarial_epsilon: 0.5,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.epsilon_scale > 0.0 && self.epsilon_scale.is_finite()) {
            return bad(format!("epsilon_scale must be positive, got {}", self.epsilon_scale));
        }
        if self.bald_passes < 2 {
            return bad(format!("bald_passes must be at least 2, got {}", self.bald_passes));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.pgd_iters == 0 {
            return bad("pgd_iters must be at least 1".into());
        }
        if !(self.pgd_step >= 0.0 && self.pgd_step.is_finite()) {
            return bad(format!("pgd_step must be non-negative, got {}", self.pgd_step));
        }
        if !(self.pgd_alpha_max > 0.0 && self.pgd_alpha_max < 1.0) {
            return bad(format!("pgd_alpha_max must be in (0, 1), got {}", self.pgd_alpha_max));
        }
        if !(self.adversarial_epsilon > 0.0 && self.adversarial_epsilon.is_finite()) {
            return bad(format!("adversarial_epsilon must be positive, got {}", self.adversarial_epsilon));
        }
        Ok(())
    }

    /// `ε = epsilon_scale / √D`.
    pub fn epsilon_for(&self, embedding_dim: usize) -> f64 {
        self.epsilon_scale / (embedding_dim as f64).sqrt()
    }

    pub fn pgd_options(&self) -> PgdOptions {
        PgdOptions { alpha_max: self.pgd_alpha_max, iters: self.pgd_iters, step: self.pgd_step }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Random,
    Entropy,
    Margin,
    Bald,
    Coreset,
    Badge,
    AlfaMix,
    AlfaMixPgd,
    LatentAdv,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::Margin,
        Strategy::Bald,
        Strategy::Coreset,
        Strategy::Badge,
        Strategy::AlfaMix,
        Strategy::AlfaMixPgd,
        Strategy::LatentAdv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Margin => "margin",
            Strategy::Bald => "bald",
            Strategy::Coreset => "coreset",
            Strategy::Badge => "badge",
            Strategy::AlfaMix => "alfamix",
            Strategy::AlfaMixPgd => "alfamix_pgd",
            Strategy::LatentAdv => "latent_adv",
        }
    }

    /// Select `budget` distinct pool rows.
    pub fn select(
        self,
        ctx: &SelectionContext<'_>,
        budget: usize,
        cfg: &AcquisitionConfig,
        rng: &mut RngStream,
    ) -> Result<Selection> {
        let n = ctx.pool_inputs.rows();
        check_budget(budget, n)?;
        let model = ctx.snapshot.params();
        let plain = |indices| Ok(Selection { indices, candidate_count: None });
        if self == Strategy::Random {
            return plain(select_random(n, budget, rng)?);
        }
        let pool = model.encode_batch(ctx.pool_inputs)?;
        match self {
            Strategy::Random => unreachable!("handled above"),
            Strategy::Entropy => plain(select_entropy(&model.probs_batch(&pool)?, budget)?),
            Strategy::Margin => plain(select_margin(&model.probs_batch(&pool)?, budget)?),
            Strategy::Bald => plain(select_bald(model, &pool, budget, cfg.bald_passes, cfg.dropout_rate, rng)?),
            Strategy::Coreset => {
                let labelled = model.encode_batch(ctx.labelled_inputs)?;
                plain(select_coreset(&pool, &labelled, budget)?)
            }
            Strategy::Badge => plain(select_badge(model, &pool, budget, rng)?),
            Strategy::AlfaMix | Strategy::AlfaMixPgd => {
                let labelled = model.encode_batch(ctx.labelled_inputs)?;
                let anchors = compute_anchors(&labelled, ctx.labelled_labels, model.spec().num_classes)?;
                let rule = if self == Strategy::AlfaMix {
                    AlphaRule::ClosedForm { epsilon: cfg.epsilon_for(pool.cols()) }
                } else {
                    AlphaRule::Pgd(cfg.pgd_options())
                };
                select_mixing_with(model, &pool, &anchors, budget, rule, rng).map(Selection::from)
            }
            Strategy::LatentAdv => {
                select_latent_adversarial(model, &pool, budget, cfg.adversarial_epsilon, rng).map(Selection::from)
            }
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::InvalidConfig(format!("unknown strategy {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name().to_string()
    }
}

/// Everything a strategy may look at when choosing a batch.
#[derive(Debug, Clone, Copy)]
pub struct SelectionContext<'a> {
    pub snapshot: &'a ModelSnapshot,
    /// Raw inputs of the unlabelled pool, one row per instance.
    pub pool_inputs: &'a Matrix,
    pub labelled_inputs: &'a Matrix,
    pub labelled_labels: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Rows of the pool, distinct.
    pub indices: Vec<usize>,
    /// Size of the candidate set, for candidate-based strategies.
    pub candidate_count: Option<usize>,
}

impl From<MixingSelection> for Selection {
    fn from(m: MixingSelection) -> Self {
        Selection { indices: m.indices, candidate_count: Some(m.candidates.len()) }
    }
}
