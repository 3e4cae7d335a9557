//! Zero-shot extension: a closed-form bilinear attribute predictor, anchors
//! for unseen classes synthesized from attribute similarity, and hashing of
//! unseen-class instances against those anchors.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, FeatureMatrix};
use crate::embedding::{AnchorEmbedding, EmbedderSpec};
use crate::error::{Error, Result};
use crate::hashing::{binarize, boost_and_normalize, inductive_embed, top_s_indices, HashCode, HashCodeSet, HashParams};
use crate::io;
use crate::linalg::spd_solve;

/// Offset that lifts the smallest kept score above zero.
pub const SCORE_SHIFT_EPS: f64 = 1e-6;

/// Regularization strengths. The weight penalty is always `γ·λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZslHyperparams {
    pub gamma: f64,
    pub lambda: f64,
}

impl ZslHyperparams {
    /// Tuned for 40/10 class splits of DeCAF features with 85 attributes.
    pub const AWA: ZslHyperparams = ZslHyperparams { gamma: 10.0, lambda: 100.0 };
    /// Tuned for 667/50 class splits of VGG-19 features with 102 attributes.
    pub const SUN: ZslHyperparams = ZslHyperparams { gamma: 0.01, lambda: 1.0 };

    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        let h = ZslHyperparams { gamma, lambda };
        h.validate()?;
        Ok(h)
    }

    pub fn alpha(&self) -> f64 {
        self.gamma * self.lambda
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "awa" => Some(Self::AWA),
            "sun" => Some(Self::SUN),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite() && self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma and lambda must be finite and >= 0, got {} and {}",
                self.gamma, self.lambda
            )));
        }
        Ok(())
    }
}

impl Default for ZslHyperparams {
    fn default() -> Self {
        Self::AWA
    }
}

/// `d × a` bilinear map between features and attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct ZslModel {
    pub v: DMatrix<f64>,
    pub hyper: ZslHyperparams,
}

impl ZslModel {
    pub fn feature_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn attr_dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        io::write_matrix_csv(&dir.join(format!("{stem}.csv")), &self.v)?;
        io::write_sidecar(&dir.join(format!("{stem}.json")), &self.hyper)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let v = io::read_matrix_csv(&dir.join(format!("{stem}.csv")))?;
        let hyper: ZslHyperparams = io::read_sidecar(&dir.join(format!("{stem}.json")))?;
        hyper.validate()?;
        if !crate::linalg::all_finite(&v) {
            return Err(Error::data("non-finite predictor weights"));
        }
        Ok(ZslModel { v, hyper })
    }
}

fn check_problem(x: &DMatrix<f64>, y: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::shape(format!("{} instances but {} label rows", x.nrows(), y.nrows())));
    }
    if y.ncols() != s.ncols() {
        return Err(Error::shape(format!("{} label columns but {} signature columns", y.ncols(), s.ncols())));
    }
    Ok(())
}

/// Closed-form minimizer of
/// `‖XVS − Y‖²_F + γ‖VS‖²_F + λ‖XV‖²_F + γλ‖V‖²_F`:
/// `V = (XᵀX + γI)⁻¹ XᵀY Sᵀ (SSᵀ + λI)⁻¹`.
pub fn fit_eszsl(x: &DMatrix<f64>, y: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64, lambda: f64) -> Result<ZslModel> {
    let hyper = ZslHyperparams::new(gamma, lambda)?;
    check_problem(x, y, s)?;
    let d = x.ncols();
    let a = s.nrows();
    let lhs = x.transpose() * x + DMatrix::identity(d, d) * gamma;
    let rhs = s * s.transpose() + DMatrix::identity(a, a) * lambda;
    let xtys = x.transpose() * y * s.transpose();
    let left = spd_solve(&lhs, &xtys)
        .map_err(|_| Error::numeric("XᵀX + γI is singular; use gamma > 0"))?;
    // V·rhs = left  ⇔  rhs·Vᵀ = leftᵀ (rhs is symmetric)
    let vt = spd_solve(&rhs, &left.transpose())
        .map_err(|_| Error::numeric("SSᵀ + λI is singular; use lambda > 0"))?;
    let v = vt.transpose();
    if !crate::linalg::all_finite(&v) {
        return Err(Error::numeric("non-finite predictor weights"));
    }
    Ok(ZslModel { v, hyper })
}

/// Fits on a seen-class bundle with `±1` one-hot targets.
pub fn fit_eszsl_bundle(seen: &DatasetBundle, hyper: ZslHyperparams) -> Result<ZslModel> {
    fit_eszsl(
        seen.features.matrix(),
        &seen.labels.one_hot_pm1(),
        seen.signatures.matrix(),
        hyper.gamma,
        hyper.lambda,
    )
}

fn check_v(v: &DMatrix<f64>, x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<()> {
    if v.nrows() != x.ncols() || v.ncols() != s.nrows() {
        return Err(Error::shape(format!(
            "V is {}x{}, expected {}x{}",
            v.nrows(),
            v.ncols(),
            x.ncols(),
            s.nrows()
        )));
    }
    Ok(())
}

pub fn eszsl_objective(
    v: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    s: &DMatrix<f64>,
    gamma: f64,
    lambda: f64,
) -> Result<f64> {
    check_problem(x, y, s)?;
    check_v(v, x, s)?;
    let xv = x * v;
    let vs = v * s;
    let fit = (&xv * s - y).norm_squared();
    Ok(fit + gamma * vs.norm_squared() + lambda * xv.norm_squared() + gamma * lambda * v.norm_squared())
}

/// `∇_V = 2[(XᵀX + γI) V (SSᵀ + λI) − XᵀYSᵀ]`.
pub fn eszsl_gradient(
    v: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    s: &DMatrix<f64>,
    gamma: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    check_problem(x, y, s)?;
    check_v(v, x, s)?;
    let d = x.ncols();
    let a = s.nrows();
    let lhs = x.transpose() * x + DMatrix::identity(d, d) * gamma;
    let rhs = s * s.transpose() + DMatrix::identity(a, a) * lambda;
    Ok((lhs * v * rhs - x.transpose() * y * s.transpose()) * 2.0)
}

/// Raw compatibility scores `xᵀ V S′_i` for each unseen class column.
/// Scores are not probabilities and may be negative.
pub fn score_unseen(x: &[f64], model: &ZslModel, s_unseen: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.len() != model.feature_dim() {
        return Err(Error::shape(format!(
            "instance has dimension {} but the predictor expects {}",
            x.len(),
            model.feature_dim()
        )));
    }
    if s_unseen.nrows() != model.attr_dim() {
        return Err(Error::shape(format!(
            "signatures have {} attributes but the predictor expects {}",
            s_unseen.nrows(),
            model.attr_dim()
        )));
    }
    let a = model.attr_dim();
    let mut projected = vec![0.0; a];
    for (k, p) in projected.iter_mut().enumerate() {
        for (j, xv) in x.iter().enumerate() {
            *p += xv * model.v[(j, k)];
        }
    }
    Ok((0..s_unseen.ncols())
        .map(|c| (0..a).map(|k| projected[k] * s_unseen[(k, c)]).sum())
        .collect())
}

/// Cosine of the angle between two attribute vectors.
pub fn cosine_class_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("attribute vectors differ in length"));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Pairwise class cosine similarities of signature columns.
pub fn cosine_similarity_matrix(signatures: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = signatures.ncols();
    let cols: Vec<Vec<f64>> = (0..n).map(|c| signatures.column(c).iter().copied().collect()).collect();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = cosine_class_similarity(&cols[i], &cols[j])?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// How unseen anchors are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// When set, only the `s` most similar seen classes contribute, with the
    /// same rank boost as instance hashing. Off by default: every seen class
    /// contributes in proportion to its similarity.
    pub top_s: Option<usize>,
    pub omega: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            top_s: None,
            omega: crate::hashing::DEFAULT_OMEGA,
        }
    }
}

/// Embedding of a new class: the cosine-similarity weighted average of the
/// seen anchor embeddings. Column `q` of `s_seen` must describe the class of
/// embedding row `q`.
pub fn synthesize_unseen_anchor(a_new: &[f64], s_seen: &DMatrix<f64>, embedding: &AnchorEmbedding) -> Result<Vec<f64>> {
    synthesize_unseen_anchor_with(a_new, s_seen, embedding, &SynthesisOptions::default())
}

pub fn synthesize_unseen_anchor_with(
    a_new: &[f64],
    s_seen: &DMatrix<f64>,
    embedding: &AnchorEmbedding,
    opts: &SynthesisOptions,
) -> Result<Vec<f64>> {
    if s_seen.ncols() != embedding.n_anchors() {
        return Err(Error::shape(format!(
            "{} seen signatures for {} embedded anchors",
            s_seen.ncols(),
            embedding.n_anchors()
        )));
    }
    if a_new.len() != s_seen.nrows() {
        return Err(Error::shape(format!(
            "new signature has {} attributes, seen signatures have {}",
            a_new.len(),
            s_seen.nrows()
        )));
    }
    let sims = (0..s_seen.ncols())
        .map(|q| {
            let col: Vec<f64> = s_seen.column(q).iter().copied().collect();
            cosine_class_similarity(a_new, &col)
        })
        .collect::<Result<Vec<f64>>>()?;
    let weights: Vec<f64> = match opts.top_s {
        None => {
            let total: f64 = sims.iter().sum();
            if !(total > 0.0) {
                return Err(Error::numeric("new class is dissimilar to every seen class"));
            }
            sims.iter().map(|w| w / total).collect()
        }
        Some(s) => {
            if sims.iter().all(|&w| w <= 0.0) {
                return Err(Error::numeric("new class is dissimilar to every seen class"));
            }
            let clipped: Vec<f64> = sims.iter().map(|w| w.max(0.0)).collect();
            crate::hashing::top_s_boost_renormalize(&clipped, s.min(clipped.len()), opts.omega)?
        }
    };
    inductive_embed(&weights, &embedding.m)
}

/// Seen anchor embedding plus one synthesized row per unseen class.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedAnchorSet {
    pub base: AnchorEmbedding,
    pub unseen_embeddings: DMatrix<f64>,
    pub unseen_class_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ExtensionManifest {
    n_seen: usize,
    unseen_class_ids: Vec<usize>,
    embedder: EmbedderSpec,
}

impl ExtendedAnchorSet {
    pub fn n_unseen(&self) -> usize {
        self.unseen_embeddings.nrows()
    }

    pub fn code_length(&self) -> usize {
        self.base.code_length()
    }

    /// Seen rows followed by unseen rows.
    pub fn all_rows(&self) -> DMatrix<f64> {
        let (n_s, n_u, b) = (self.base.n_anchors(), self.n_unseen(), self.code_length());
        DMatrix::from_fn(n_s + n_u, b, |i, j| {
            if i < n_s {
                self.base.m[(i, j)]
            } else {
                self.unseen_embeddings[(i - n_s, j)]
            }
        })
    }

    /// Sign codes of the unseen anchors, in unseen class order.
    pub fn unseen_codes(&self) -> HashCodeSet {
        let codes = (0..self.n_unseen())
            .map(|i| binarize(&crate::linalg::row_vec(&self.unseen_embeddings, i)))
            .collect();
        HashCodeSet::new(codes, self.code_length()).expect("uniform code length")
    }

    /// `<stem>.csv` holds all rows (seen first); `<stem>.manifest.json`
    /// records where the unseen rows start and their class ids.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        io::write_matrix_csv(&dir.join(format!("{stem}.csv")), &self.all_rows())?;
        io::write_sidecar(
            &dir.join(format!("{stem}.manifest.json")),
            &ExtensionManifest {
                n_seen: self.base.n_anchors(),
                unseen_class_ids: self.unseen_class_ids.clone(),
                embedder: self.base.embedder,
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let all = io::read_matrix_csv(&dir.join(format!("{stem}.csv")))?;
        let manifest: ExtensionManifest = io::read_sidecar(&dir.join(format!("{stem}.manifest.json")))?;
        if manifest.n_seen + manifest.unseen_class_ids.len() != all.nrows() {
            return Err(Error::data(format!(
                "manifest lists {} + {} rows but the file has {}",
                manifest.n_seen,
                manifest.unseen_class_ids.len(),
                all.nrows()
            )));
        }
        let base = AnchorEmbedding::new(all.rows(0, manifest.n_seen).into_owned(), manifest.embedder)?;
        let unseen_embeddings = all.rows(manifest.n_seen, manifest.unseen_class_ids.len()).into_owned();
        Ok(ExtendedAnchorSet {
            base,
            unseen_embeddings,
            unseen_class_ids: manifest.unseen_class_ids,
        })
    }
}

/// Synthesizes one anchor per column of `s_unseen`, in column order.
/// `s_seen` columns follow the base embedding rows.
pub fn extend_anchor_set(
    base: &AnchorEmbedding,
    s_seen: &DMatrix<f64>,
    s_unseen: &DMatrix<f64>,
    unseen_class_ids: &[usize],
    opts: &SynthesisOptions,
) -> Result<ExtendedAnchorSet> {
    if s_unseen.ncols() > 0 && s_unseen.nrows() != s_seen.nrows() {
        return Err(Error::shape(format!(
            "unseen signatures have {} attributes, seen signatures have {}",
            s_unseen.nrows(),
            s_seen.nrows()
        )));
    }
    if unseen_class_ids.len() != s_unseen.ncols() {
        return Err(Error::shape("one class id per unseen signature column is required"));
    }
    let n_u = s_unseen.ncols();
    let b = base.code_length();
    let mut rows = DMatrix::zeros(n_u, b);
    for c in 0..n_u {
        let sig: Vec<f64> = s_unseen.column(c).iter().copied().collect();
        let m = synthesize_unseen_anchor_with(&sig, s_seen, base, opts)?;
        for j in 0..b {
            rows[(c, j)] = m[j];
        }
    }
    Ok(ExtendedAnchorSet {
        base: base.clone(),
        unseen_embeddings: rows,
        unseen_class_ids: unseen_class_ids.to_vec(),
    })
}

/// Weights over unseen anchors from raw scores: keep the top `s`, shift them
/// so the smallest is [`SCORE_SHIFT_EPS`] if any is non-positive, then apply
/// the rank boost and renormalize. Equal kept scores give uniform weights.
pub fn unseen_weights_from_scores(scores: &[f64], s: usize, omega: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("no unseen classes to hash against"));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite unseen-class score"));
    }
    let s = s.clamp(1, scores.len());
    let ranked = top_s_indices(scores, s);
    let kept: Vec<f64> = ranked.iter().map(|&q| scores[q]).collect();
    let lo = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let mut out = vec![0.0; scores.len()];
        for &q in &ranked {
            out[q] = 1.0 / s as f64;
        }
        return Ok(out);
    }
    let mut shifted = vec![0.0; scores.len()];
    for &q in &ranked {
        shifted[q] = if lo <= 0.0 { scores[q] - lo + SCORE_SHIFT_EPS } else { scores[q] };
    }
    boost_and_normalize(&shifted, &ranked, omega)
}

/// Hashes an unseen-class instance against the unseen anchors only.
/// `params.s` is capped at the number of unseen classes.
pub fn hash_unseen_instance(
    x_u: &[f64],
    model: &ZslModel,
    ext: &ExtendedAnchorSet,
    s_unseen: &DMatrix<f64>,
    params: &HashParams,
) -> Result<HashCode> {
    UnseenHasher::new(model, ext, s_unseen, params)?.hash(x_u)
}

#[derive(Debug, Clone)]
pub struct UnseenHasher<'a> {
    model: &'a ZslModel,
    ext: &'a ExtendedAnchorSet,
    s_unseen: &'a DMatrix<f64>,
    s: usize,
    omega: f64,
}

impl<'a> UnseenHasher<'a> {
    pub fn new(
        model: &'a ZslModel,
        ext: &'a ExtendedAnchorSet,
        s_unseen: &'a DMatrix<f64>,
        params: &HashParams,
    ) -> Result<Self> {
        if ext.n_unseen() == 0 {
            return Err(Error::invalid("no unseen classes to hash against"));
        }
        if s_unseen.ncols() != ext.n_unseen() {
            return Err(Error::shape(format!(
                "{} unseen signatures for {} unseen anchors",
                s_unseen.ncols(),
                ext.n_unseen()
            )));
        }
        if params.s == 0 || !(params.omega >= 1.0) {
            return Err(Error::invalid("s must be >= 1 and omega >= 1"));
        }
        Ok(UnseenHasher {
            model,
            ext,
            s_unseen,
            s: params.s.min(ext.n_unseen()),
            omega: params.omega,
        })
    }

    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let scores = score_unseen(x, self.model, self.s_unseen)?;
        unseen_weights_from_scores(&scores, self.s, self.omega)
    }

    pub fn hash(&self, x: &[f64]) -> Result<HashCode> {
        let w = self.weights(x)?;
        Ok(binarize(&inductive_embed(&w, &self.ext.unseen_embeddings)?))
    }

    pub fn hash_all(&self, x: &FeatureMatrix) -> Result<HashCodeSet> {
        let codes = (0..x.n_instances())
            .into_par_iter()
            .map(|i| self.hash(&x.row(i)))
            .collect::<Result<Vec<_>>>()?;
        HashCodeSet::new(codes, self.ext.code_length())
    }
}
