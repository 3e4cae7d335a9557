//! One anchor per seen class: k-means with a penalty for leaving the
//! labelled cluster, then an optimal matching of anchors to class means.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::row_sq_dist;

pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    /// Cost of assigning an instance to a cluster other than its label.
    pub beta: f64,
    pub max_iter: usize,
    /// Relative objective improvement below which iteration stops.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            beta: DEFAULT_BETA,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

/// Learned anchors. Cluster `k` carries the label penalty of class `k`;
/// `class_of_anchor` is the anchor-to-class bijection used downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub centers: DMatrix<f64>,
    pub class_of_anchor: Vec<usize>,
    pub assignments: Vec<usize>,
    pub beta: f64,
    pub iterations: usize,
    /// Squared-distance objective after every E-step and every M-step, in order.
    pub objective_trace: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AnchorSidecar {
    class_of_anchor: Vec<usize>,
    beta: f64,
    iterations: usize,
    assignments: Vec<usize>,
}

impl AnchorSet {
    pub fn n_anchors(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Anchor whose class is `class`.
    pub fn anchor_of_class(&self, class: usize) -> Option<usize> {
        self.class_of_anchor.iter().position(|&c| c == class)
    }

    /// Replaces `class_of_anchor` by the optimal matching against the class
    /// means of the training data.
    pub fn bind_to_classes(&mut self, x: &FeatureMatrix, labels: &LabelVector) -> Result<()> {
        let means = class_means(x, labels)?;
        self.class_of_anchor = assign_anchors_to_classes(&self.centers, &means)?;
        Ok(())
    }

    /// Writes `<stem>.csv` (centers) and `<stem>.json` (everything else).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        io::write_matrix_csv(&dir.join(format!("{stem}.csv")), &self.centers)?;
        io::write_sidecar(
            &dir.join(format!("{stem}.json")),
            &AnchorSidecar {
                class_of_anchor: self.class_of_anchor.clone(),
                beta: self.beta,
                iterations: self.iterations,
                assignments: self.assignments.clone(),
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let centers = io::read_matrix_csv(&dir.join(format!("{stem}.csv")))?;
        let side: AnchorSidecar = io::read_sidecar(&dir.join(format!("{stem}.json")))?;
        if !is_bijection(&side.class_of_anchor, centers.nrows()) {
            return Err(Error::data("class_of_anchor is not a bijection over the anchors"));
        }
        if !crate::linalg::all_finite(&centers) {
            return Err(Error::data("non-finite anchor center"));
        }
        Ok(AnchorSet {
            centers,
            class_of_anchor: side.class_of_anchor,
            assignments: side.assignments,
            beta: side.beta,
            iterations: side.iterations,
            objective_trace: Vec::new(),
        })
    }
}

pub(crate) fn is_bijection(map: &[usize], n: usize) -> bool {
    if map.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &c in map {
        if c >= n || seen[c] {
            return false;
        }
        seen[c] = true;
    }
    true
}

/// `Σ_n ‖x_n − μ_{π_n}‖^p + β · #{n : π_n ≠ y_n}` with `p = 2` when
/// `squared`, else `p = 1`.
pub fn kmeans_objective(
    x: &FeatureMatrix,
    labels: &LabelVector,
    centers: &DMatrix<f64>,
    assignments: &[usize],
    beta: f64,
    squared: bool,
) -> f64 {
    let xm = x.matrix();
    let mut total = 0.0;
    for (n, &k) in assignments.iter().enumerate() {
        let d2 = row_sq_dist(xm, n, centers, k);
        total += if squared { d2 } else { d2.sqrt() };
        if k != labels.get(n) {
            total += beta;
        }
    }
    total
}

/// Greedy farthest-point seeding: a uniformly drawn first point, then
/// repeatedly the point farthest (in min-distance) from those chosen.
pub fn farthest_point_seeds(x: &FeatureMatrix, k: usize, seed: u64) -> Vec<usize> {
    let xm = x.matrix();
    let n = x.n_instances();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = (0..n).map(|i| row_sq_dist(xm, i, xm, first)).collect();
    while chosen.len() < k {
        let mut best = 0;
        for i in 1..n {
            if min_d[i] > min_d[best] {
                best = i;
            }
        }
        chosen.push(best);
        for i in 0..n {
            let d = row_sq_dist(xm, i, xm, best);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    chosen
}

fn check_inputs(x: &FeatureMatrix, labels: &LabelVector, beta: f64) -> Result<usize> {
    let n_s = labels.n_classes();
    if x.n_instances() == 0 || labels.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    if x.n_instances() != labels.len() {
        return Err(Error::shape(format!(
            "{} instances but {} labels",
            x.n_instances(),
            labels.len()
        )));
    }
    if n_s < 2 {
        return Err(Error::invalid("penalized k-means needs at least 2 classes"));
    }
    if x.n_instances() < n_s {
        return Err(Error::invalid(format!(
            "{} instances cannot seed {} clusters",
            x.n_instances(),
            n_s
        )));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(n_s)
}

/// Label-penalized k-means with `k` equal to the number of classes, seeded
/// by [`farthest_point_seeds`]. The penalty ties anchor `k` to class `k`, so
/// the seeds are first placed in the rows of the class means they match best
/// (minimum total distance); otherwise an unlucky first draw starts every
/// anchor in the wrong class and the penalty only entrenches it.
pub fn penalized_kmeans(x: &FeatureMatrix, labels: &LabelVector, params: &KMeansParams) -> Result<AnchorSet> {
    let k = check_inputs(x, labels, params.beta)?;
    let seeds = farthest_point_seeds(x, k, params.seed);
    let means = lenient_class_means(x, labels);
    let xm = x.matrix();
    let cost = DMatrix::from_fn(k, k, |a, c| match &means[c] {
        Some(m) => crate::linalg::vec_row_sq_dist(m, xm, seeds[a]).sqrt(),
        None => 0.0,
    });
    let class_of_seed = min_cost_assignment(&cost);
    let mut init = DMatrix::zeros(k, x.dim());
    for (a, &c) in class_of_seed.iter().enumerate() {
        init.set_row(c, &xm.row(seeds[a]));
    }
    penalized_kmeans_from(x, labels, init, params)
}

/// Same as [`penalized_kmeans`] but starting from explicit centers.
pub fn penalized_kmeans_from(
    x: &FeatureMatrix,
    labels: &LabelVector,
    init_centers: DMatrix<f64>,
    params: &KMeansParams,
) -> Result<AnchorSet> {
    let k = check_inputs(x, labels, params.beta)?;
    if init_centers.nrows() != k || init_centers.ncols() != x.dim() {
        return Err(Error::shape(format!(
            "initial centers are {}x{}, expected {}x{}",
            init_centers.nrows(),
            init_centers.ncols(),
            k,
            x.dim()
        )));
    }
    let xm = x.matrix();
    let n = x.n_instances();
    let d = x.dim();
    let beta = params.beta;
    let fallback = lenient_class_means(x, labels);

    let mut centers = init_centers;
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut prev_obj = f64::INFINITY;

    while iterations < params.max_iter {
        // E-step; ties go to the lowest cluster index.
        let next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| {
                let y = labels.get(i);
                let mut best = 0;
                let mut best_cost = f64::INFINITY;
                for c in 0..k {
                    let mut cost = row_sq_dist(xm, i, &centers, c);
                    if c != y {
                        cost += beta;
                    }
                    if cost < best_cost {
                        best_cost = cost;
                        best = c;
                    }
                }
                best
            })
            .collect();
        let changed = next != assignments;
        assignments = next;
        trace.push(kmeans_objective(x, labels, &centers, &assignments, beta, true));

        // M-step
        let mut sums = DMatrix::<f64>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for j in 0..d {
                sums[(c, j)] += xm[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            } else if let Some(mean) = &fallback[c] {
                log::debug!("cluster {c} emptied; reseeding at its class mean");
                for j in 0..d {
                    centers[(c, j)] = mean[j];
                }
            }
        }
        let obj = kmeans_objective(x, labels, &centers, &assignments, beta, true);
        trace.push(obj);
        iterations += 1;

        if !changed {
            break;
        }
        let improvement = (prev_obj - obj) / prev_obj.abs().max(f64::MIN_POSITIVE);
        if prev_obj.is_finite() && improvement < params.tol {
            break;
        }
        prev_obj = obj;
    }

    Ok(AnchorSet {
        centers,
        class_of_anchor: (0..k).collect(),
        assignments,
        beta,
        iterations,
        objective_trace: trace,
    })
}

fn lenient_class_means(x: &FeatureMatrix, labels: &LabelVector) -> Vec<Option<Vec<f64>>> {
    let d = x.dim();
    let mut sums = vec![vec![0.0; d]; labels.n_classes()];
    let counts = labels.counts();
    for i in 0..x.n_instances() {
        let c = labels.get(i);
        for j in 0..d {
            sums[c][j] += x.matrix()[(i, j)];
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

/// Row `c` is the mean feature vector of class `c`.
pub fn class_means(x: &FeatureMatrix, labels: &LabelVector) -> Result<DMatrix<f64>> {
    if x.n_instances() != labels.len() {
        return Err(Error::shape("feature and label counts differ"));
    }
    let means = lenient_class_means(x, labels);
    let mut out = DMatrix::zeros(labels.n_classes(), x.dim());
    for (c, m) in means.into_iter().enumerate() {
        let m = m.ok_or_else(|| Error::data(format!("class {c} has no instances")))?;
        for (j, v) in m.into_iter().enumerate() {
            out[(c, j)] = v;
        }
    }
    Ok(out)
}

/// Bijection `anchor → class` minimizing the summed Euclidean distance
/// between each anchor and the mean of its class.
pub fn assign_anchors_to_classes(centers: &DMatrix<f64>, means: &DMatrix<f64>) -> Result<Vec<usize>> {
    if centers.shape() != means.shape() {
        return Err(Error::shape(format!(
            "centers are {:?} but class means are {:?}",
            centers.shape(),
            means.shape()
        )));
    }
    let n = centers.nrows();
    let cost = DMatrix::from_fn(n, n, |a, c| row_sq_dist(centers, a, means, c).sqrt());
    Ok(min_cost_assignment(&cost))
}

/// Hungarian method with row/column potentials, `O(n³)`. Returns
/// `col_of_row` for a square cost matrix.
pub(crate) fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r0 - 1, col - 1)] - u[r0] - v[col];
                if reduced < min_v[col] {
                    min_v[col] = reduced;
                    way[col] = col0;
                }
                if min_v[col] < delta {
                    delta = min_v[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_v[col] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            row_of_col[col0] = row_of_col[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for col in 1..=n {
        col_of_row[row_of_col[col] - 1] = col - 1;
    }
    col_of_row
}
