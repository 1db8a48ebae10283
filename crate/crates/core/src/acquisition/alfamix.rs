//! Feature-mixing acquisition.
//!
//! For an unlabelled embedding `z_u` with pseudo-label `y*` and a class
//! anchor `z*` (the mean labelled embedding of that class), the mixed point
//! is `α ⊙ z* + (1 − α) ⊙ z_u`. The interpolation ratio that maximises the
//! first-order loss increase `(α ⊙ (z* − z_u))ᵀ ∇ℓ` under
//! `‖α ⊙ (z* − z_u)‖₂ ≤ ε ‖z* − z_u‖₂` is
//!
//! ```text
//! α* = ε ‖z* − z_u‖₂ · ∇ℓ / ‖∇ℓ‖₂  ⊘  (z* − z_u)
//! ```
//!
//! Instances whose pseudo-label changes at the mixed point for some anchor
//! form the candidate set; the batch is then spread over it with k-means.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::check_budget;
use crate::clustering::{closest_to_centroids, kmeans, KMeansOptions};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numkernel::{argmax_low_tie, cross_entropy, norm2, softmax, Matrix, RngStream};

/// Gradient / difference norms below this are treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Per-class mean embeddings of the labelled set, keyed by class.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: BTreeMap<usize, Vec<f64>>,
}

impl AnchorSet {
    /// Anchors in ascending class order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.anchors.iter().map(|(&c, v)| (c, v.as_slice()))
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.anchors.get(&class).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Class means of `embeddings`; classes without labelled examples get no anchor.
pub fn compute_anchors(embeddings: &Matrix, labels: &[usize], num_classes: usize) -> Result<AnchorSet> {
    if embeddings.rows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if embeddings.rows() != labels.len() {
        return Err(Error::InvalidDimension(format!(
            "{} embeddings but {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (z, &y) in embeddings.iter_rows().zip(labels) {
        if y >= num_classes {
            return Err(Error::InvalidLabel { label: y, num_classes });
        }
        let entry = sums.entry(y).or_insert_with(|| (vec![0.0; z.len()], 0));
        entry.0.iter_mut().zip(z).for_each(|(s, v)| *s += v);
        entry.1 += 1;
    }
    let anchors = sums
        .into_iter()
        .map(|(c, (mut s, n))| {
            s.iter_mut().for_each(|v| *v /= n as f64);
            (c, s)
        })
        .collect();
    Ok(AnchorSet { anchors })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationRatio {
    pub alpha: Vec<f64>,
    pub epsilon: f64,
}

fn check_same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::InvalidDimension(format!("{what}: lengths {a} and {b}")));
    }
    Ok(())
}

/// Closed-form maximiser of the linearised loss change. Coordinates where
/// `z*` and `z_u` agree carry no signal and get `α = 0`. The result is not
/// clamped to `[0, 1)`.
pub fn optimal_alpha_closed_form(
    z_u: &[f64],
    z_star: &[f64],
    grad: &[f64],
    epsilon: f64,
) -> Result<InterpolationRatio> {
    check_same_len(z_u.len(), z_star.len(), "anchor vs embedding")?;
    check_same_len(z_u.len(), grad.len(), "gradient vs embedding")?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!("epsilon must be finite and non-negative, got {epsilon}")));
    }
    let grad_norm = norm2(grad);
    if grad_norm < DEGENERACY_TOL {
        return Err(Error::ZeroGradient);
    }
    let diff: Vec<f64> = z_star.iter().zip(z_u).map(|(s, u)| s - u).collect();
    let diff_norm = norm2(&diff);
    if diff_norm < DEGENERACY_TOL {
        return Err(Error::DegenerateAnchor);
    }
    let scale = epsilon * diff_norm / grad_norm;
    let alpha = grad
        .iter()
        .zip(&diff)
        .map(|(&g, &d)| if d == 0.0 { 0.0 } else { scale * g / d })
        .collect();
    Ok(InterpolationRatio { alpha, epsilon })
}

/// `α ⊙ z* + (1 − α) ⊙ z_u`.
pub fn mix(alpha: &[f64], z_star: &[f64], z_u: &[f64]) -> Result<Vec<f64>> {
    check_same_len(alpha.len(), z_star.len(), "alpha vs anchor")?;
    check_same_len(alpha.len(), z_u.len(), "alpha vs embedding")?;
    Ok(alpha.iter().zip(z_star).zip(z_u).map(|((a, s), u)| a * s + (1.0 - a) * u).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdOptions {
    /// Box bound: every `α_d` stays in `[0, alpha_max]`.
    pub alpha_max: f64,
    pub iters: usize,
    pub step: f64,
}

/// Projected gradient ascent of the true loss at the mixed point over
/// `α ∈ [0, alpha_max]^D`, starting from `α = 0`. A step that would lower
/// the loss is halved (up to 30 times) and skipped if it still does, so the
/// returned trace is non-decreasing.
pub fn optimal_alpha_pgd_traced(
    model: &ModelParams,
    z_u: &[f64],
    z_star: &[f64],
    pseudo_label: usize,
    opts: PgdOptions,
) -> Result<(InterpolationRatio, Vec<f64>)> {
    check_same_len(z_u.len(), z_star.len(), "anchor vs embedding")?;
    if opts.iters == 0 {
        return Err(Error::InvalidConfig("pgd iterations must be at least 1".into()));
    }
    if !(opts.alpha_max > 0.0 && opts.alpha_max < 1.0) {
        return Err(Error::InvalidConfig(format!("pgd alpha_max {} outside (0, 1)", opts.alpha_max)));
    }
    if !(opts.step >= 0.0 && opts.step.is_finite()) {
        return Err(Error::InvalidConfig(format!("pgd step {} must be non-negative", opts.step)));
    }
    let diff: Vec<f64> = z_star.iter().zip(z_u).map(|(s, u)| s - u).collect();
    let loss_at = |alpha: &[f64]| -> Result<(f64, Vec<f64>)> {
        let z = mix(alpha, z_star, z_u)?;
        let (loss, gz) = model.loss_and_grad_wrt_embedding(&z, pseudo_label)?;
        let ga = gz.iter().zip(&diff).map(|(g, d)| g * d).collect();
        Ok((loss, ga))
    };
    let mut alpha = vec![0.0; z_u.len()];
    let (mut loss, mut grad_alpha) = loss_at(&alpha)?;
    let mut trace = vec![loss];
    for _ in 0..opts.iters {
        let mut step = opts.step;
        let mut accepted = None;
        for _ in 0..=30 {
            let trial: Vec<f64> = alpha
                .iter()
                .zip(&grad_alpha)
                .map(|(a, g)| (a + step * g).clamp(0.0, opts.alpha_max))
                .collect();
            let (trial_loss, trial_grad) = loss_at(&trial)?;
            if trial_loss >= loss {
                accepted = Some((trial, trial_loss, trial_grad));
                break;
            }
            step *= 0.5;
        }
        if let Some((a, l, g)) = accepted {
            alpha = a;
            loss = l;
            grad_alpha = g;
        }
        trace.push(loss);
    }
    Ok((InterpolationRatio { alpha, epsilon: opts.alpha_max }, trace))
}

pub fn optimal_alpha_pgd(
    model: &ModelParams,
    z_u: &[f64],
    z_star: &[f64],
    pseudo_label: usize,
    opts: PgdOptions,
) -> Result<InterpolationRatio> {
    optimal_alpha_pgd_traced(model, z_u, z_star, pseudo_label, opts).map(|(a, _)| a)
}

/// How the interpolation ratio is chosen for each (instance, anchor) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaRule {
    /// Closed-form dual-norm solution with the given `ε`.
    ClosedForm { epsilon: f64 },
    /// The same ratio on every coordinate.
    Uniform { value: f64 },
    /// Iterative projected gradient ascent.
    Pgd(PgdOptions),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    /// Row of the pool embedding matrix.
    pub index: usize,
    /// Anchor whose mixing flipped the prediction (absent for additive perturbations).
    pub anchor_class: Option<usize>,
    pub original_label: usize,
    pub mixed_label: usize,
}

/// Candidates sorted by pool index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSet {
    pub members: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.members.iter().map(|c| c.index).collect()
    }
}

/// Candidate set under the closed-form ratio.
pub fn build_candidate_set(
    pool_embeddings: &Matrix,
    anchors: &AnchorSet,
    model: &ModelParams,
    epsilon: f64,
) -> Result<CandidateSet> {
    build_candidate_set_with(pool_embeddings, anchors, model, AlphaRule::ClosedForm { epsilon })
}

/// Scan every pool embedding against the anchors in ascending class order
/// and stop at the first anchor whose mixed point changes the pseudo-label.
/// Anchors that are degenerate for an instance (zero gradient, coincident
/// anchor) are skipped.
pub fn build_candidate_set_with(
    pool_embeddings: &Matrix,
    anchors: &AnchorSet,
    model: &ModelParams,
    rule: AlphaRule,
) -> Result<CandidateSet> {
    if anchors.is_empty() {
        return Err(Error::NoAnchors);
    }
    if let AlphaRule::ClosedForm { epsilon: e } | AlphaRule::Uniform { value: e } = rule {
        if !e.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite mixing parameter {e}")));
        }
    }
    let scanned: Vec<Option<Candidate>> = (0..pool_embeddings.rows())
        .into_par_iter()
        .map(|index| scan_instance(model, anchors, rule, index, pool_embeddings.row(index)))
        .collect::<Result<_>>()?;
    Ok(CandidateSet { members: scanned.into_iter().flatten().collect() })
}

fn scan_instance(
    model: &ModelParams,
    anchors: &AnchorSet,
    rule: AlphaRule,
    index: usize,
    z_u: &[f64],
) -> Result<Option<Candidate>> {
    let logits = model.forward_classify(z_u)?;
    let y_star = argmax_low_tie(&logits)?;
    let grad = match rule {
        AlphaRule::ClosedForm { .. } => Some(model.grad_loss_wrt_embedding(z_u, y_star)?),
        _ => None,
    };
    for (class, z_star) in anchors.iter() {
        let alpha = match rule {
            AlphaRule::ClosedForm { epsilon } => {
                let g = grad.as_deref().expect("computed for closed form");
                match optimal_alpha_closed_form(z_u, z_star, g, epsilon) {
                    Ok(r) => r.alpha,
                    // the gradient does not depend on the anchor
                    Err(Error::ZeroGradient) => return Ok(None),
                    Err(Error::DegenerateAnchor) => continue,
                    Err(e) => return Err(e),
                }
            }
            AlphaRule::Uniform { value } => vec![value; z_u.len()],
            AlphaRule::Pgd(opts) => optimal_alpha_pgd(model, z_u, z_star, y_star, opts)?.alpha,
        };
        let mixed_label = model.pseudo_label(&mix(&alpha, z_star, z_u)?)?;
        if mixed_label != y_star {
            return Ok(Some(Candidate { index, anchor_class: Some(class), original_label: y_star, mixed_label }));
        }
    }
    Ok(None)
}

/// Instances whose pseudo-label flips under the additive latent perturbation
/// `δ* = ε ∇ℓ / ‖∇ℓ‖₂`.
pub fn build_adversarial_candidate_set(
    pool_embeddings: &Matrix,
    model: &ModelParams,
    epsilon: f64,
) -> Result<CandidateSet> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!("adversarial epsilon must be non-negative, got {epsilon}")));
    }
    let mut members = Vec::new();
    for (index, z_u) in pool_embeddings.iter_rows().enumerate() {
        let y_star = model.pseudo_label(z_u)?;
        let grad = model.grad_loss_wrt_embedding(z_u, y_star)?;
        let norm = norm2(&grad);
        if norm < DEGENERACY_TOL {
            continue;
        }
        let moved: Vec<f64> = z_u.iter().zip(&grad).map(|(z, g)| z + epsilon * g / norm).collect();
        let mixed_label = model.pseudo_label(&moved)?;
        if mixed_label != y_star {
            members.push(Candidate { index, anchor_class: None, original_label: y_star, mixed_label });
        }
    }
    Ok(CandidateSet { members })
}

/// Turn a candidate set into a batch of `budget` distinct pool indices:
/// more candidates than budget are clustered into `budget` groups and the
/// member nearest each centroid is taken; otherwise all candidates are kept
/// and the rest of the batch is drawn uniformly from the remaining pool.
pub fn diversify(
    pool_embeddings: &Matrix,
    candidates: &CandidateSet,
    budget: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let n = pool_embeddings.rows();
    check_budget(budget, n)?;
    let mut chosen = candidates.indices();
    chosen.sort_unstable();
    chosen.dedup();
    if chosen.len() > budget {
        let points = pool_embeddings.select_rows(&chosen);
        let clusters = kmeans(&points, budget, &mut rng.split("kmeans"), KMeansOptions::default())?;
        return Ok(closest_to_centroids(&points, &clusters).into_iter().map(|i| chosen[i]).collect());
    }
    if chosen.len() < budget {
        let mut is_candidate = vec![false; n];
        chosen.iter().for_each(|&i| is_candidate[i] = true);
        let rest: Vec<usize> = (0..n).filter(|&i| !is_candidate[i]).collect();
        let fill = rng.split("fill").sample_indices(rest.len(), budget - chosen.len());
        chosen.extend(fill.into_iter().map(|i| rest[i]));
    }
    Ok(chosen)
}

/// Result of a candidate-based selection.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSelection {
    pub indices: Vec<usize>,
    pub candidates: CandidateSet,
}

pub fn select_alfamix(
    model: &ModelParams,
    pool_embeddings: &Matrix,
    anchors: &AnchorSet,
    budget: usize,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<MixingSelection> {
    select_mixing_with(model, pool_embeddings, anchors, budget, AlphaRule::ClosedForm { epsilon }, rng)
}

pub fn select_mixing_with(
    model: &ModelParams,
    pool_embeddings: &Matrix,
    anchors: &AnchorSet,
    budget: usize,
    rule: AlphaRule,
    rng: &mut RngStream,
) -> Result<MixingSelection> {
    check_budget(budget, pool_embeddings.rows())?;
    let candidates = build_candidate_set_with(pool_embeddings, anchors, model, rule)?;
    let indices = diversify(pool_embeddings, &candidates, budget, rng)?;
    Ok(MixingSelection { indices, candidates })
}

pub fn select_latent_adversarial(
    model: &ModelParams,
    pool_embeddings: &Matrix,
    budget: usize,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<MixingSelection> {
    check_budget(budget, pool_embeddings.rows())?;
    let candidates = build_adversarial_candidate_set(pool_embeddings, model, epsilon)?;
    let indices = diversify(pool_embeddings, &candidates, budget, rng)?;
    Ok(MixingSelection { indices, candidates })
}

/// Loss of the head at `z` for `label`; used by the residual checks.
pub fn head_loss(model: &ModelParams, z: &[f64], label: usize) -> Result<f64> {
    cross_entropy(&softmax(&model.forward_classify(z)?)?, label)
}
