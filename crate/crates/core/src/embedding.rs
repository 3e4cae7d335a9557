//! Low-dimensional embeddings of the anchor set. Row `q` of the result is
//! the code-space coordinate of anchor `q`; the number of columns is the
//! hash code length.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{double_center, median, pairwise_distances, row_sq_dist, symmetric_eigen_sorted};

pub const DEFAULT_N_NEIGHBORS: usize = 5;
pub const DEFAULT_LLE_REG: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    KernelPca,
    Isomap,
    Lle,
    /// Coordinates computed elsewhere and loaded from a file.
    External,
}

impl fmt::Display for EmbedderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedderKind::KernelPca => "kernel_pca",
            EmbedderKind::Isomap => "isomap",
            EmbedderKind::Lle => "lle",
            EmbedderKind::External => "external",
        })
    }
}

impl FromStr for EmbedderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "kernel_pca" | "kpca" => Ok(EmbedderKind::KernelPca),
            "isomap" => Ok(EmbedderKind::Isomap),
            "lle" => Ok(EmbedderKind::Lle),
            "external" => Ok(EmbedderKind::External),
            other => Err(Error::invalid(format!("unknown embedder {other:?}"))),
        }
    }
}

/// RBF kernel bandwidth for Kernel-PCA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance between the embedded points.
    Median,
    Fixed(f64),
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Median => f.write_str("median"),
            Bandwidth::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("median") {
            return Ok(Bandwidth::Median);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::invalid(format!("bandwidth must be \"median\" or a number, got {s:?}")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {v}")));
        }
        Ok(Bandwidth::Fixed(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub bandwidth: Bandwidth,
    pub n_neighbors: usize,
    /// LLE local Gram regularizer, relative to `trace(G)/k`.
    pub lle_reg: f64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec {
            kind: EmbedderKind::KernelPca,
            bandwidth: Bandwidth::Median,
            n_neighbors: DEFAULT_N_NEIGHBORS,
            lle_reg: DEFAULT_LLE_REG,
        }
    }
}

impl EmbedderSpec {
    pub fn kernel_pca() -> Self {
        Self::default()
    }

    pub fn isomap(n_neighbors: usize) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Isomap,
            n_neighbors,
            ..Self::default()
        }
    }

    pub fn lle(n_neighbors: usize) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Lle,
            n_neighbors,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if let Bandwidth::Fixed(v) = self.bandwidth {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {v}")));
            }
        }
        if matches!(self.kind, EmbedderKind::Isomap | EmbedderKind::Lle)
            && (self.n_neighbors == 0 || self.n_neighbors >= n_points)
        {
            return Err(Error::invalid(format!(
                "n_neighbors must be in 1..{n_points}, got {}",
                self.n_neighbors
            )));
        }
        if !(self.lle_reg > 0.0 && self.lle_reg.is_finite()) {
            return Err(Error::invalid("LLE regularizer must be positive"));
        }
        Ok(())
    }
}

/// `n × b` anchor coordinates together with the embedder that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorEmbedding {
    pub m: DMatrix<f64>,
    pub embedder: EmbedderSpec,
}

impl AnchorEmbedding {
    pub fn new(m: DMatrix<f64>, embedder: EmbedderSpec) -> Result<Self> {
        if m.ncols() == 0 || m.ncols() > m.nrows() {
            return Err(Error::invalid(format!(
                "code length {} must be in 1..={} (number of anchors)",
                m.ncols(),
                m.nrows()
            )));
        }
        if !crate::linalg::all_finite(&m) {
            return Err(Error::numeric("non-finite anchor embedding"));
        }
        Ok(AnchorEmbedding { m, embedder })
    }

    /// Wraps coordinates produced by an external embedder.
    pub fn external(m: DMatrix<f64>) -> Result<Self> {
        Self::new(
            m,
            EmbedderSpec {
                kind: EmbedderKind::External,
                ..EmbedderSpec::default()
            },
        )
    }

    pub fn n_anchors(&self) -> usize {
        self.m.nrows()
    }

    pub fn code_length(&self) -> usize {
        self.m.ncols()
    }

    pub fn row(&self, q: usize) -> Vec<f64> {
        crate::linalg::row_vec(&self.m, q)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        io::write_matrix_csv(&dir.join(format!("{stem}.csv")), &self.m)?;
        io::write_sidecar(&dir.join(format!("{stem}.json")), &self.embedder)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let m = io::read_matrix_csv(&dir.join(format!("{stem}.csv")))?;
        let spec: EmbedderSpec = io::read_sidecar(&dir.join(format!("{stem}.json")))?;
        Self::new(m, spec)
    }
}

/// Embeds anchor rows with the embedder selected by `spec`.
pub fn embed_anchors(centers: &DMatrix<f64>, spec: &EmbedderSpec, b: usize) -> Result<AnchorEmbedding> {
    let n = centers.nrows();
    if b == 0 || b > n {
        return Err(Error::invalid(format!(
            "code length {b} must be in 1..={n} (number of anchors)"
        )));
    }
    spec.validate(n)?;
    let degenerate = (1..n).all(|i| row_sq_dist(centers, i, centers, 0) == 0.0);
    if degenerate {
        return Err(Error::numeric("all anchors are identical; nothing to embed"));
    }
    let m = match spec.kind {
        EmbedderKind::KernelPca => {
            let bw = match spec.bandwidth {
                Bandwidth::Fixed(v) => v,
                Bandwidth::Median => median_bandwidth(centers),
            };
            kernel_pca(centers, bw, b)?.0
        }
        EmbedderKind::Isomap => isomap(centers, spec.n_neighbors, b)?,
        EmbedderKind::Lle => lle_with_reg(centers, spec.n_neighbors, b, spec.lle_reg)?,
        EmbedderKind::External => {
            return Err(Error::invalid("external embeddings are loaded from file, not computed"))
        }
    };
    AnchorEmbedding::new(m, *spec)
}

/// Median of the pairwise distances between distinct rows.
pub fn median_bandwidth(points: &DMatrix<f64>) -> f64 {
    let d = pairwise_distances(points);
    let n = points.nrows();
    let mut vals = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            vals.push(d[(i, j)]);
        }
    }
    median(&vals).unwrap_or(0.0)
}

/// Eigenvalues at or below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

/// Top-`b` coordinates of a centered Gram-like matrix: eigenvectors scaled by
/// the square root of their eigenvalue, negative eigenvalues truncated to
/// zero. Columns past the numerical rank are zero.
fn spectral_coordinates(centered: &DMatrix<f64>, b: usize, what: &str) -> (DMatrix<f64>, Vec<f64>) {
    let n = centered.nrows();
    let (values, vectors) = symmetric_eigen_sorted(centered, true);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let mut out = DMatrix::zeros(n, b);
    let mut kept = 0;
    for k in 0..b.min(n) {
        let lam = values[k];
        if lam > RANK_TOL * top && lam > 0.0 {
            let s = lam.sqrt();
            for i in 0..n {
                out[(i, k)] = vectors[(i, k)] * s;
            }
            kept += 1;
        }
    }
    if kept < b {
        log::warn!("{what}: only {kept} positive eigenvalues for {b} requested dimensions; padding with zeros");
    }
    let clipped = values.into_iter().map(|v| v.max(0.0)).collect();
    (out, clipped)
}

/// RBF Kernel-PCA with `K_ij = exp(-‖p_i − p_j‖² / bandwidth²)`. Returns the
/// `n × b` embedding and all eigenvalues of the centered kernel in
/// descending order (negatives clipped to zero).
pub fn kernel_pca(points: &DMatrix<f64>, bandwidth: f64, b: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !(bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = points.nrows();
    if b == 0 || b > n {
        return Err(Error::invalid(format!("cannot take {b} components from {n} points")));
    }
    let bw2 = bandwidth * bandwidth;
    let k = DMatrix::from_fn(n, n, |i, j| (-row_sq_dist(points, i, points, j) / bw2).exp());
    Ok(spectral_coordinates(&double_center(&k), b, "kernel PCA"))
}

/// Symmetrized k-nearest-neighbour graph as a dense distance matrix with
/// `inf` for missing edges. Neighbour ties go to the lower index.
fn knn_graph(dist: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = dist.nrows();
    let mut g = DMatrix::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        g[(i, i)] = 0.0;
        for &j in nearest_neighbors(dist, i, k).iter() {
            g[(i, j)] = dist[(i, j)];
            g[(j, i)] = dist[(i, j)];
        }
    }
    g
}

fn nearest_neighbors(dist: &DMatrix<f64>, i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..dist.nrows()).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
    others.truncate(k);
    others
}

fn components(g: &DMatrix<f64>) -> Vec<usize> {
    let n = g.nrows();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if comp[v] == usize::MAX && g[(u, v)].is_finite() {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Joins components by repeatedly adding the shortest Euclidean edge that
/// crosses between two of them.
fn bridge_components(g: &mut DMatrix<f64>, dist: &DMatrix<f64>) {
    let n = g.nrows();
    loop {
        let comp = components(g);
        if comp.iter().all(|&c| c == 0) {
            return;
        }
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            for j in (i + 1)..n {
                if comp[i] != comp[j] && dist[(i, j)] < best.0 {
                    best = (dist[(i, j)], i, j);
                }
            }
        }
        let (d, i, j) = best;
        log::debug!("isomap: bridging components with edge {i}-{j} ({d})");
        g[(i, j)] = d;
        g[(j, i)] = d;
    }
}

/// All-pairs geodesic distances over the symmetrized k-NN graph.
pub fn geodesic_distances(points: &DMatrix<f64>, n_neighbors: usize) -> DMatrix<f64> {
    let dist = pairwise_distances(points);
    let mut g = knn_graph(&dist, n_neighbors);
    bridge_components(&mut g, &dist);
    let n = g.nrows();
    for via in 0..n {
        for i in 0..n {
            let d_iv = g[(i, via)];
            if !d_iv.is_finite() {
                continue;
            }
            for j in 0..n {
                let cand = d_iv + g[(via, j)];
                if cand < g[(i, j)] {
                    g[(i, j)] = cand;
                }
            }
        }
    }
    g
}

/// Classical MDS on a distance matrix: top-`b` coordinates of `-½ H D² H`.
pub fn classical_mds(dist: &DMatrix<f64>, b: usize) -> DMatrix<f64> {
    let d2 = dist.map(|v| v * v);
    let gram = double_center(&d2) * -0.5;
    spectral_coordinates(&gram, b, "MDS").0
}

/// Isomap: k-NN graph geodesics followed by classical MDS.
pub fn isomap(points: &DMatrix<f64>, n_neighbors: usize, b: usize) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    if n_neighbors == 0 || n_neighbors >= n {
        return Err(Error::invalid(format!("n_neighbors must be in 1..{n}, got {n_neighbors}")));
    }
    if b == 0 || b > n {
        return Err(Error::invalid(format!("cannot take {b} components from {n} points")));
    }
    Ok(classical_mds(&geodesic_distances(points, n_neighbors), b))
}

/// Locally linear reconstruction weights, one row per point, rows summing
/// to one. The local Gram matrix gets `reg · trace(G)/k` on its diagonal;
/// if it is still not positive definite the regularizer grows tenfold, at
/// most three times.
pub fn lle_weights(points: &DMatrix<f64>, n_neighbors: usize, reg: f64) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    let d = points.ncols();
    let k = n_neighbors;
    let dist = pairwise_distances(points);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let nbrs = nearest_neighbors(&dist, i, k);
        let z = DMatrix::from_fn(k, d, |r, c| points[(nbrs[r], c)] - points[(i, c)]);
        let gram = &z * z.transpose();
        let trace = gram.trace();
        let scale = if trace > 0.0 { trace / k as f64 } else { 1.0 };
        let ones = DVector::from_element(k, 1.0);
        let mut r = reg;
        let mut solved = None;
        for _ in 0..4 {
            let mut g = gram.clone();
            for t in 0..k {
                g[(t, t)] += r * scale;
            }
            if let Some(chol) = Cholesky::new(g) {
                let sol = chol.solve(&ones);
                if sol.iter().all(|v| v.is_finite()) && sol.sum().abs() > 0.0 {
                    solved = Some(sol);
                    break;
                }
            }
            r *= 10.0;
        }
        let sol = solved.ok_or_else(|| {
            Error::numeric(format!("LLE local Gram matrix of point {i} is singular"))
        })?;
        let total = sol.sum();
        for (t, &j) in nbrs.iter().enumerate() {
            w[(i, j)] = sol[t] / total;
        }
    }
    Ok(w)
}

/// Standard LLE: eigenvectors 2..=b+1 (ascending eigenvalue) of
/// `(I − W)ᵀ(I − W)`.
pub fn lle(points: &DMatrix<f64>, n_neighbors: usize, b: usize) -> Result<DMatrix<f64>> {
    lle_with_reg(points, n_neighbors, b, DEFAULT_LLE_REG)
}

pub fn lle_with_reg(points: &DMatrix<f64>, n_neighbors: usize, b: usize, reg: f64) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    if n_neighbors == 0 || n_neighbors >= n {
        return Err(Error::invalid(format!("n_neighbors must be in 1..{n}, got {n_neighbors}")));
    }
    if b == 0 || b >= n {
        return Err(Error::invalid(format!(
            "LLE discards the constant eigenvector, so at most {} dimensions from {n} points; got {b}",
            n - 1
        )));
    }
    let w = lle_weights(points, n_neighbors, reg)?;
    let i_minus_w = DMatrix::<f64>::identity(n, n) - w;
    let cost = i_minus_w.transpose() * &i_minus_w;
    let (_, vectors) = symmetric_eigen_sorted(&cost, false);
    Ok(vectors.columns(1, b).into_owned())
}
