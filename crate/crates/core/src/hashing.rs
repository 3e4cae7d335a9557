//! Inductive hashing of seen-class instances.
//!
//! An instance is weighted against every anchor with an RBF kernel, the `s`
//! largest weights are kept and sharpened by rank (`ω^{-i}` for rank `i`),
//! renormalized, used to average the anchor embeddings, and the average is
//! binarized by sign.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::dataset::FeatureMatrix;
use crate::embedding::{median_bandwidth, AnchorEmbedding};
use crate::error::{Error, Result};
use crate::linalg::{median, vec_row_sq_dist};

pub const DEFAULT_S: usize = 5;
pub const DEFAULT_OMEGA: f64 = 5.0;
/// Instances sampled when estimating `σ` automatically.
pub const AUTO_SIGMA_SAMPLE: usize = 1000;

const MAGIC: &[u8; 4] = b"ZSH1";

/// A `b`-bit code. Bit `j` set means the `j`-th sign is `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    words: Vec<u64>,
    len: usize,
}

impl HashCode {
    pub fn zeros(len: usize) -> Self {
        HashCode {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut code = Self::zeros(bits.len());
        for (j, &b) in bits.iter().enumerate() {
            if b {
                code.words[j / 64] |= 1 << (j % 64);
            }
        }
        code
    }

    /// From `±1` values; anything non-negative counts as `+1`.
    pub fn from_signs(signs: &[i8]) -> Self {
        Self::from_bits(&signs.iter().map(|&s| s >= 0).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, j: usize) -> bool {
        assert!(j < self.len);
        (self.words[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.len).map(|j| if self.bit(j) { 1 } else { -1 }).collect()
    }

    /// Bitwise complement (all signs flipped).
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in out.words.iter_mut() {
            *w = !*w;
        }
        out.clear_padding();
        out
    }

    fn clear_padding(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// Little-endian bit packing into `ceil(b/8)` bytes: bit `j` is bit
    /// `j % 8` of byte `j / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_bytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(n_bytes);
        for byte in 0..n_bytes {
            out.push((self.words[byte / 8] >> ((byte % 8) * 8)) as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::data(format!("{} bytes cannot hold exactly {len} bits", bytes.len())));
        }
        let mut code = Self::zeros(len);
        for (i, &byte) in bytes.iter().enumerate() {
            code.words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        let before = code.words.clone();
        code.clear_padding();
        if code.words != before {
            return Err(Error::data("nonzero padding bits in packed code"));
        }
        Ok(code)
    }
}

impl fmt::Display for HashCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.len {
            f.write_str(if self.bit(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Codes of identical length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashCodeSet {
    codes: Vec<HashCode>,
    code_length: usize,
}

impl HashCodeSet {
    pub fn new(codes: Vec<HashCode>, code_length: usize) -> Result<Self> {
        if let Some(c) = codes.iter().find(|c| c.len() != code_length) {
            return Err(Error::shape(format!(
                "code of length {} in a set of length {code_length}",
                c.len()
            )));
        }
        Ok(HashCodeSet { codes, code_length })
    }

    pub fn from_codes(codes: Vec<HashCode>) -> Result<Self> {
        let len = codes.first().map_or(0, HashCode::len);
        Self::new(codes, len)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code_length(&self) -> usize {
        self.code_length
    }

    pub fn codes(&self) -> &[HashCode] {
        &self.codes
    }

    pub fn get(&self, i: usize) -> &HashCode {
        &self.codes[i]
    }

    pub fn select(&self, idx: &[usize]) -> HashCodeSet {
        HashCodeSet {
            codes: idx.iter().map(|&i| self.codes[i].clone()).collect(),
            code_length: self.code_length,
        }
    }

    /// `"ZSH1"`, `u32` count, `u32` code length (both little-endian), then
    /// the packed codes back to back.
    pub fn to_binary(&self) -> Vec<u8> {
        let stride = self.code_length.div_ceil(8);
        let mut out = Vec::with_capacity(12 + stride * self.codes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.codes.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.code_length as u32).to_le_bytes());
        for c in &self.codes {
            out.extend_from_slice(&c.to_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::data("not a ZSH1 hash code file"));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let b = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let stride = b.div_ceil(8);
        let body = &bytes[12..];
        if body.len() != n * stride {
            return Err(Error::data(format!(
                "hash code file holds {} payload bytes, expected {}",
                body.len(),
                n * stride
            )));
        }
        let codes = (0..n)
            .map(|i| HashCode::from_bytes(&body[i * stride..(i + 1) * stride], b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(codes, b)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_binary()).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::from_binary(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// One code per line as comma-separated `1` / `-1`.
    pub fn to_sign_csv(&self) -> String {
        let mut out = String::new();
        for c in &self.codes {
            let row: Vec<String> = c.to_signs().iter().map(|s| s.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// RBF width `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    /// `√2 ×` the median distance from (a sample of) the training instances
    /// to their nearest anchor.
    Auto,
    Fixed(f64),
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Auto => f.write_str("auto"),
            Sigma::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Sigma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Sigma::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::invalid(format!("sigma must be \"auto\" or a number, got {s:?}")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {v}")));
        }
        Ok(Sigma::Fixed(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashParams {
    pub sigma: Sigma,
    /// Number of nearest anchors kept.
    pub s: usize,
    /// Rank boost base.
    pub omega: f64,
}

impl Default for HashParams {
    fn default() -> Self {
        HashParams {
            sigma: Sigma::Auto,
            s: DEFAULT_S,
            omega: DEFAULT_OMEGA,
        }
    }
}

impl HashParams {
    pub fn validate(&self, n_anchors: usize) -> Result<()> {
        if self.s == 0 || self.s > n_anchors {
            return Err(Error::invalid(format!(
                "s = {} must be in 1..={n_anchors} (number of anchors)",
                self.s
            )));
        }
        if !(self.omega >= 1.0) || !self.omega.is_finite() {
            return Err(Error::invalid(format!("omega must be >= 1, got {}", self.omega)));
        }
        if let Sigma::Fixed(v) = self.sigma {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("sigma must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Numeric `σ`; `Auto` is estimated from `training` against `centers`.
    pub fn resolve_sigma(&self, training: &FeatureMatrix, centers: &DMatrix<f64>) -> f64 {
        match self.sigma {
            Sigma::Fixed(v) => v,
            Sigma::Auto => auto_sigma(training, centers),
        }
    }

    fn fixed_sigma(&self) -> Result<f64> {
        match self.sigma {
            Sigma::Fixed(v) => Ok(v),
            Sigma::Auto => Err(Error::invalid(
                "sigma is \"auto\"; resolve it against training data first",
            )),
        }
    }
}

/// `√2 ×` median nearest-anchor distance over an evenly strided sample of at
/// most [`AUTO_SIGMA_SAMPLE`] instances. Falls back to the median pairwise
/// anchor distance when instances sit exactly on anchors.
pub fn auto_sigma(training: &FeatureMatrix, centers: &DMatrix<f64>) -> f64 {
    let n = training.n_instances();
    let stride = n.div_ceil(AUTO_SIGMA_SAMPLE).max(1);
    let nearest: Vec<f64> = (0..n)
        .step_by(stride)
        .map(|i| {
            let x = training.row(i);
            (0..centers.nrows())
                .map(|q| vec_row_sq_dist(&x, centers, q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    let sigma = median(&nearest).unwrap_or(0.0) * std::f64::consts::SQRT_2;
    if sigma > 0.0 {
        return sigma;
    }
    let fallback = if centers.nrows() > 1 { median_bandwidth(centers) } else { 0.0 };
    if fallback > 0.0 {
        fallback
    } else {
        1.0
    }
}

/// `w_q = exp(−‖x − μ_q‖² / σ²)` for every anchor row `μ_q`.
pub fn rbf_weights(x: &[f64], anchors: &DMatrix<f64>, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    check_point(x, anchors)?;
    let s2 = sigma * sigma;
    Ok((0..anchors.nrows())
        .map(|q| (-vec_row_sq_dist(x, anchors, q) / s2).exp())
        .collect())
}

/// RBF weights divided by the largest one, computed from distance
/// differences so that far-away points do not underflow to all zeros. Equal
/// to [`rbf_weights`] up to a common positive factor.
pub fn relative_rbf_weights(x: &[f64], anchors: &DMatrix<f64>, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    check_point(x, anchors)?;
    let s2 = sigma * sigma;
    let d2: Vec<f64> = (0..anchors.nrows()).map(|q| vec_row_sq_dist(x, anchors, q)).collect();
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(d2.into_iter().map(|d| (-(d - min) / s2).exp()).collect())
}

fn check_point(x: &[f64], anchors: &DMatrix<f64>) -> Result<()> {
    if x.len() != anchors.ncols() {
        return Err(Error::shape(format!(
            "instance has dimension {} but anchors have {}",
            x.len(),
            anchors.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite instance feature"));
    }
    Ok(())
}

/// Indices of the `s` largest values, largest first; ties go to the lower
/// index.
pub(crate) fn top_s_indices(values: &[f64], s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(s);
    idx
}

/// Multiplies the value at rank `i` of `ranked` (1-based) by `ω^{-i}` and
/// renormalizes so the kept entries sum to one.
pub(crate) fn boost_and_normalize(values: &[f64], ranked: &[usize], omega: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; values.len()];
    let mut total = 0.0;
    for (rank, &q) in ranked.iter().enumerate() {
        let boosted = values[q] * omega.powi(-(rank as i32 + 1));
        out[q] = boosted;
        total += boosted;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::numeric("kept weights sum to zero"));
    }
    for q in ranked {
        out[*q] /= total;
    }
    Ok(out)
}

/// Keeps the `s` largest weights, boosts rank `i` by `ω^{-i}` and
/// renormalizes the survivors to sum to one.
pub fn top_s_boost_renormalize(weights: &[f64], s: usize, omega: f64) -> Result<Vec<f64>> {
    if s == 0 || s > weights.len() {
        return Err(Error::invalid(format!(
            "s = {s} must be in 1..={}",
            weights.len()
        )));
    }
    if !(omega >= 1.0) || !omega.is_finite() {
        return Err(Error::invalid(format!("omega must be >= 1, got {omega}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::numeric("all weights are zero"));
    }
    let ranked = top_s_indices(weights, s);
    boost_and_normalize(weights, &ranked, omega)
}

/// `m* = Σ_q w_q m_q` for weights that already sum to one.
pub fn inductive_embed(weights: &[f64], m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if weights.len() != m.nrows() {
        return Err(Error::shape(format!(
            "{} weights for {} anchor embeddings",
            weights.len(),
            m.nrows()
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
    }
    let b = m.ncols();
    let mut out = vec![0.0; b];
    for (q, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += w * m[(q, j)];
        }
    }
    Ok(out)
}

/// Element-wise sign with `sign(0) = +1`.
pub fn binarize(m: &[f64]) -> HashCode {
    HashCode::from_bits(&m.iter().map(|&v| v >= 0.0).collect::<Vec<_>>())
}

/// Full seen-class pipeline for one instance. `params.sigma` must be numeric.
pub fn hash_seen_instance(
    x: &[f64],
    anchors: &AnchorSet,
    embedding: &AnchorEmbedding,
    params: &HashParams,
) -> Result<HashCode> {
    let sigma = params.fixed_sigma()?;
    SeenHasher::new(&anchors.centers, embedding, sigma, params.s, params.omega)?.hash(x)
}

/// Pre-validated seen-class hasher shared across instances.
#[derive(Debug, Clone)]
pub struct SeenHasher<'a> {
    centers: &'a DMatrix<f64>,
    embedding: &'a DMatrix<f64>,
    sigma: f64,
    s: usize,
    omega: f64,
}

impl<'a> SeenHasher<'a> {
    pub fn new(
        centers: &'a DMatrix<f64>,
        embedding: &'a AnchorEmbedding,
        sigma: f64,
        s: usize,
        omega: f64,
    ) -> Result<Self> {
        if centers.nrows() != embedding.n_anchors() {
            return Err(Error::shape(format!(
                "{} anchors but {} embedded anchors",
                centers.nrows(),
                embedding.n_anchors()
            )));
        }
        HashParams {
            sigma: Sigma::Fixed(sigma),
            s,
            omega,
        }
        .validate(centers.nrows())?;
        Ok(SeenHasher {
            centers,
            embedding: &embedding.m,
            sigma,
            s,
            omega,
        })
    }

    pub fn sparse_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = relative_rbf_weights(x, self.centers, self.sigma)?;
        top_s_boost_renormalize(&w, self.s, self.omega)
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        inductive_embed(&self.sparse_weights(x)?, self.embedding)
    }

    pub fn hash(&self, x: &[f64]) -> Result<HashCode> {
        Ok(binarize(&self.embed(x)?))
    }

    /// Hashes every row; parallel over rows, output in row order.
    pub fn hash_all(&self, x: &FeatureMatrix) -> Result<HashCodeSet> {
        let codes = (0..x.n_instances())
            .into_par_iter()
            .map(|i| self.hash(&x.row(i)))
            .collect::<Result<Vec<_>>>()?;
        HashCodeSet::new(codes, self.embedding.ncols())
    }
}

/// Row-wise sign of the anchor embedding.
pub fn anchor_hash_codes(embedding: &AnchorEmbedding) -> HashCodeSet {
    let codes = (0..embedding.n_anchors())
        .map(|q| binarize(&embedding.row(q)))
        .collect();
    HashCodeSet {
        codes,
        code_length: embedding.code_length(),
    }
}
