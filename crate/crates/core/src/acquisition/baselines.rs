//! Baseline batch-selection rules.

use rayon::prelude::*;

use super::check_budget;
use crate::clustering::{kcenter_greedy, kmeanspp_seed_from};
use crate::error::{Error, Result};
use crate::model::{check_dropout, dropout_mask, ModelParams};
use crate::numkernel::{argmax_low_tie, entropy, norm2, rank_descending, Matrix, RngStream};

/// `budget` indices drawn uniformly without replacement.
pub fn select_random(pool_size: usize, budget: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    check_budget(budget, pool_size)?;
    Ok(rng.sample_indices(pool_size, budget))
}

fn top_b(scores: &[f64], budget: usize) -> Result<Vec<usize>> {
    check_budget(budget, scores.len())?;
    let mut order = rank_descending(scores);
    order.truncate(budget);
    Ok(order)
}

pub fn entropy_scores(probs: &Matrix) -> Vec<f64> {
    probs.iter_rows().map(entropy).collect()
}

/// Highest predictive entropy first; ties go to the lower index.
pub fn select_entropy(probs: &Matrix, budget: usize) -> Result<Vec<usize>> {
    top_b(&entropy_scores(probs), budget)
}

/// Top-1 minus top-2 probability per row.
pub fn margin_scores(probs: &Matrix) -> Result<Vec<f64>> {
    if probs.cols() < 2 {
        return Err(Error::InvalidK { k: probs.cols(), n: probs.rows(), reason: "margin needs at least two classes" });
    }
    Ok(probs
        .iter_rows()
        .map(|p| {
            let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in p {
                if v > a {
                    b = a;
                    a = v;
                } else if v > b {
                    b = v;
                }
            }
            a - b
        })
        .collect())
}

/// Smallest top-2 margin first.
pub fn select_margin(probs: &Matrix, budget: usize) -> Result<Vec<usize>> {
    let neg: Vec<f64> = margin_scores(probs)?.into_iter().map(|m| -m).collect();
    top_b(&neg, budget)
}

/// Mutual information between the label and the dropout mask, from `T`
/// per-pass distributions: `H(mean p) − mean H(p)`.
pub fn bald_score(passes: &[Vec<f64>]) -> Result<f64> {
    let first = passes.first().ok_or_else(|| Error::InvalidConfig("bald needs at least one pass".into()))?;
    let mut mean = vec![0.0; first.len()];
    let mut mean_entropy = 0.0;
    for p in passes {
        if p.len() != mean.len() {
            return Err(Error::InvalidDimension("bald passes differ in length".into()));
        }
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
        mean_entropy += entropy(p);
    }
    if passes.iter().all(|p| p == first) {
        // exact zero, free of rounding in the mean
        return Ok(0.0);
    }
    let t = passes.len() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    Ok(entropy(&mean) - mean_entropy / t)
}

/// BALD scores for each pool embedding under `passes` dropout masks on the embedding.
pub fn bald_scores(
    model: &ModelParams,
    pool_embeddings: &Matrix,
    passes: usize,
    dropout_rate: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_dropout(passes, dropout_rate)?;
    if passes < 2 {
        return Err(Error::InvalidConfig(format!("bald needs at least 2 passes, got {passes}")));
    }
    // one stream per instance keeps the result independent of thread scheduling
    let base = rng.split("bald");
    (0..pool_embeddings.rows())
        .into_par_iter()
        .map(|i| {
            let z = pool_embeddings.row(i);
            let mut r = base.split(&i.to_string());
            let dists = (0..passes)
                .map(|_| model.probs(&dropout_mask(z, dropout_rate, &mut r)))
                .collect::<Result<Vec<_>>>()?;
            bald_score(&dists)
        })
        .collect()
}

pub fn select_bald(
    model: &ModelParams,
    pool_embeddings: &Matrix,
    budget: usize,
    passes: usize,
    dropout_rate: f64,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    check_budget(budget, pool_embeddings.rows())?;
    top_b(&bald_scores(model, pool_embeddings, passes, dropout_rate, rng)?, budget)
}

/// Greedy k-center over embeddings, seeded by the labelled set.
pub fn select_coreset(pool_embeddings: &Matrix, labelled_embeddings: &Matrix, budget: usize) -> Result<Vec<usize>> {
    check_budget(budget, pool_embeddings.rows())?;
    kcenter_greedy(pool_embeddings, labelled_embeddings, budget)
}

/// Last-layer loss gradient at the pseudo-label, `(p − onehot(ŷ)) ⊗ z`,
/// flattened so entry `k·D + d` is `(p_k − [k = ŷ]) z_d`.
pub fn gradient_embedding(probs: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let y = argmax_low_tie(probs)?;
    let mut g = Vec::with_capacity(probs.len() * z.len());
    for (k, &p) in probs.iter().enumerate() {
        let r = p - if k == y { 1.0 } else { 0.0 };
        g.extend(z.iter().map(|v| r * v));
    }
    Ok(g)
}

/// Gradient embeddings of the final layer input. With a deeper head the
/// input to the last layer is used in place of `z`.
pub fn gradient_embeddings(model: &ModelParams, pool_embeddings: &Matrix) -> Result<Matrix> {
    let k = model.spec().num_classes;
    let d = last_layer_input_dim(model);
    let mut out = Vec::with_capacity(pool_embeddings.rows() * k * d);
    for z in pool_embeddings.iter_rows() {
        let h = model.last_layer_input(z)?;
        let p = model.probs(z)?;
        out.extend(gradient_embedding(&p, &h)?);
    }
    Matrix::new(pool_embeddings.rows(), k * d, out)
}

fn last_layer_input_dim(model: &ModelParams) -> usize {
    model.classifier().last().expect("head has a layer").fan_in()
}

/// k-means++ sampling over gradient embeddings. The first centre is the
/// largest-norm embedding rather than a uniform draw, so confident
/// instances (zero gradient) are only reached once nothing else remains.
pub fn select_badge(
    model: &ModelParams,
    pool_embeddings: &Matrix,
    budget: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    check_budget(budget, pool_embeddings.rows())?;
    let g = gradient_embeddings(model, pool_embeddings)?;
    let norms: Vec<f64> = g.iter_rows().map(norm2).collect();
    let first = rank_descending(&norms)[0];
    kmeanspp_seed_from(&g, budget, Some(first), rng)
}
