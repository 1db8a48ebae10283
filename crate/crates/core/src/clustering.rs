//! k-means (k-means++ seeding + Lloyd), centroid-nearest member extraction
//! and greedy k-center.

use crate::error::{Error, Result};
use crate::numkernel::{axpy, sq_dist, Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iters: usize,
    /// Stop once `(prev − cur) / prev` inertia falls below this.
    pub rel_tol: f64,
    /// Independent seedings; the lowest-inertia result is kept.
    pub n_init: usize,
    /// Candidates per seeding step; 1 is plain k-means++, see [`kmeanspp_seed_greedy`].
    pub seed_trials: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iters: 300, rel_tol: 1e-4, n_init: 10, seed_trials: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster id of every point.
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidK { k, n, reason: "k must be at least 1" });
    }
    if k > n {
        return Err(Error::InvalidK { k, n, reason: "more clusters than points" });
    }
    Ok(())
}

/// k-means++ seeding: the first seed is uniform, every further seed is drawn
/// with probability proportional to its squared distance to the nearest seed
/// chosen so far. When every remaining distance is zero the draw is uniform
/// over the points not yet chosen.
pub fn kmeanspp_seed(points: &Matrix, k: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    kmeanspp_seed_from(points, k, None, rng)
}

/// As [`kmeanspp_seed`], optionally with a fixed first seed.
pub fn kmeanspp_seed_from(
    points: &Matrix,
    k: usize,
    first: Option<usize>,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    seed_with_trials(points, k, first, 1, rng)
}

/// Greedy k-means++: at every step `trials` candidates are drawn with the
/// same squared-distance weights and the one that leaves the smallest total
/// squared distance is kept (ties to the earlier draw). One trial is plain
/// k-means++; `2 + ⌊ln k⌋` is a common choice otherwise.
pub fn kmeanspp_seed_greedy(points: &Matrix, k: usize, trials: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("greedy seeding needs at least one trial".into()));
    }
    seed_with_trials(points, k, None, trials, rng)
}

fn seed_with_trials(
    points: &Matrix,
    k: usize,
    first: Option<usize>,
    trials: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let n = points.rows();
    check_k(k, n)?;
    let first = match first {
        Some(f) if f < n => f,
        Some(f) => return Err(Error::InvalidDimension(format!("first seed {f} out of {n} points"))),
        None => rng.index(n),
    };
    let mut chosen = vec![false; n];
    let mut seeds = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];

    let add = |idx: usize, seeds: &mut Vec<usize>, chosen: &mut [bool], nearest: &mut [f64]| {
        seeds.push(idx);
        chosen[idx] = true;
        let c = points.row(idx);
        for (i, slot) in nearest.iter_mut().enumerate() {
            let d = sq_dist(points.row(i), c);
            if d < *slot {
                *slot = d;
            }
        }
        nearest[idx] = 0.0;
    };
    add(first, &mut seeds, &mut chosen, &mut nearest);

    while seeds.len() < k {
        let total: f64 = nearest.iter().zip(&chosen).filter(|(_, &c)| !c).map(|(d, _)| *d).sum();
        let next = if total > 0.0 {
            let draw = |rng: &mut RngStream| {
                let target = rng.uniform() * total;
                let mut acc = 0.0;
                let mut last_positive = None;
                for i in 0..n {
                    if chosen[i] || nearest[i] <= 0.0 {
                        continue;
                    }
                    last_positive = Some(i);
                    acc += nearest[i];
                    if acc > target {
                        return i;
                    }
                }
                last_positive.expect("positive mass implies a positive entry")
            };
            if trials == 1 {
                draw(rng)
            } else {
                let mut best = (f64::INFINITY, 0);
                for _ in 0..trials {
                    let cand = draw(rng);
                    let c = points.row(cand);
                    let potential: f64 =
                        nearest.iter().zip(points.iter_rows()).map(|(&d, p)| d.min(sq_dist(p, c))).sum();
                    if potential < best.0 {
                        best = (potential, cand);
                    }
                }
                best.1
            }
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.index(free.len())]
        };
        add(next, &mut seeds, &mut chosen, &mut nearest);
    }
    Ok(seeds)
}

/// Nearest-centroid assignment (ties to the lowest cluster id) and per-point
/// squared distances.
fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    points
        .iter_rows()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter_rows().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            (best, best_d)
        })
        .unzip()
}

/// Cluster means; clusters left empty are re-seeded at the point currently
/// farthest from its own centroid (taken from clusters with more than one
/// member), so exactly `k` clusters survive.
fn update_centroids(points: &Matrix, assignments: &[usize], k: usize, prev: &Matrix) -> Matrix {
    let d = points.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter_rows().zip(assignments) {
        axpy(1.0, p, sums.row_mut(c));
        counts[c] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|v| *v *= inv);
        } else {
            sums.row_mut(c).copy_from_slice(prev.row(c));
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if empty.is_empty() {
        return sums;
    }
    let mut dist: Vec<(usize, f64)> = points
        .iter_rows()
        .zip(assignments)
        .enumerate()
        .map(|(i, (p, &c))| (i, sq_dist(p, sums.row(c))))
        .collect();
    // farthest first, ties by lower index
    dist.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut used = vec![false; points.rows()];
    for c in empty {
        let donor = dist
            .iter()
            .find(|(i, _)| !used[*i] && counts[assignments[*i]] > 1)
            .or_else(|| dist.iter().find(|(i, _)| !used[*i]));
        if let Some(&(i, _)) = donor {
            used[i] = true;
            counts[assignments[i]] = counts[assignments[i]].saturating_sub(1);
            counts[c] = 1;
            sums.row_mut(c).copy_from_slice(points.row(i));
        }
    }
    sums
}

/// Lloyd iterations from k-means++ seeds, restarted `n_init` times; the
/// lowest final inertia wins (ties to the earlier start). Each start stops
/// at an assignment fixpoint, when the relative inertia decrease drops
/// below `rel_tol`, or after `max_iters` iterations.
pub fn kmeans(points: &Matrix, k: usize, rng: &mut RngStream, opts: KMeansOptions) -> Result<ClusterResult> {
    check_k(k, points.rows())?;
    if opts.n_init == 0 {
        return Err(Error::InvalidConfig("k-means needs at least one initialisation".into()));
    }
    let mut best: Option<ClusterResult> = None;
    for _ in 0..opts.n_init {
        let run = lloyd(points, k, rng, opts)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
        if best.as_ref().is_some_and(|b| b.inertia == 0.0) {
            break;
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn lloyd(points: &Matrix, k: usize, rng: &mut RngStream, opts: KMeansOptions) -> Result<ClusterResult> {
    let seeds = kmeanspp_seed_greedy(points, k, opts.seed_trials, rng)?;
    let mut centroids = points.select_rows(&seeds);
    let (mut assignments, dists) = assign(points, &centroids);
    let mut inertia: f64 = dists.iter().sum();
    let mut trace = vec![inertia];
    let mut iterations = 0;

    while iterations < opts.max_iters && inertia > 0.0 {
        iterations += 1;
        let next = update_centroids(points, &assignments, k, &centroids);
        let (next_assign, next_dists) = assign(points, &next);
        let next_inertia: f64 = next_dists.iter().sum();
        trace.push(next_inertia);
        let changed = next_assign != assignments;
        let rel = (inertia - next_inertia) / inertia;
        centroids = next;
        assignments = next_assign;
        inertia = next_inertia;
        if !changed || rel < opts.rel_tol {
            break;
        }
    }
    Ok(ClusterResult { assignments, centroids, inertia, iterations_run: iterations, inertia_trace: trace })
}

/// Per cluster, the member closest to its centroid (ties to the lower
/// index). A cluster without members takes the closest point not already
/// taken, so the result always has `k` distinct indices.
pub fn closest_to_centroids(points: &Matrix, result: &ClusterResult) -> Vec<usize> {
    let k = result.k();
    let mut best: Vec<Option<(usize, f64)>> = vec![None; k];
    for (i, (p, &c)) in points.iter_rows().zip(&result.assignments).enumerate() {
        let d = sq_dist(p, result.centroids.row(c));
        match best[c] {
            Some((_, bd)) if bd <= d => {}
            _ => best[c] = Some((i, d)),
        }
    }
    let mut taken = vec![false; points.rows()];
    for &(i, _) in best.iter().flatten() {
        taken[i] = true;
    }
    let mut out = Vec::with_capacity(k);
    for (c, b) in best.iter().enumerate() {
        let pick = match b {
            Some((i, _)) => *i,
            None => {
                let centroid = result.centroids.row(c);
                let i = (0..points.rows())
                    .filter(|&i| !taken[i])
                    .min_by(|&a, &b| {
                        sq_dist(points.row(a), centroid)
                            .total_cmp(&sq_dist(points.row(b), centroid))
                            .then(a.cmp(&b))
                    })
                    .expect("k <= n leaves a free point");
                taken[i] = true;
                i
            }
        };
        out.push(pick);
    }
    out
}

/// Greedy farthest-point selection: `k` times, take the pool point whose
/// distance to `covered ∪ selected` is largest (ties to the lower index).
/// With nothing covered the first pick is index 0.
pub fn kcenter_greedy(pool: &Matrix, covered: &Matrix, k: usize) -> Result<Vec<usize>> {
    let n = pool.rows();
    check_k(k, n)?;
    if covered.rows() > 0 && covered.cols() != pool.cols() {
        return Err(Error::InvalidDimension(format!(
            "pool is {}-d but covered set is {}-d",
            pool.cols(),
            covered.cols()
        )));
    }
    let mut min_d: Vec<f64> = pool
        .iter_rows()
        .map(|p| covered.iter_rows().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut picked = vec![false; n];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best = None;
        for i in 0..n {
            if picked[i] {
                continue;
            }
            match best {
                Some(b) if min_d[b] >= min_d[i] => {}
                _ => best = Some(i),
            }
        }
        let b = best.expect("k <= n");
        picked[b] = true;
        out.push(b);
        let c = pool.row(b);
        for (i, slot) in min_d.iter_mut().enumerate() {
            let d = sq_dist(pool.row(i), c);
            if d < *slot {
                *slot = d;
            }
        }
    }
    Ok(out)
}
