//! Feature, label and attribute-signature containers, file ingestion,
//! seen/unseen and query/database splits, and a seeded synthetic generator.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hashing::HashCodeSet;
use crate::io;

/// `N × d` matrix of instance features, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::data("feature matrix must have at least one row and one column"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            // column-major position
            let (row, col) = (pos % data.nrows(), pos / data.nrows());
            return Err(Error::data(format!("non-finite feature at row {row}, column {col}")));
        }
        Ok(FeatureMatrix { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("feature rows have unequal lengths"));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n_instances(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        crate::linalg::row_vec(&self.data, i)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.data.select_rows(rows))
    }

    /// Per-dimension z-scoring. Constant dimensions are only centered.
    pub fn standardized(&self) -> Self {
        let n = self.n_instances() as f64;
        let mut out = self.data.clone();
        for j in 0..self.dim() {
            let col = self.data.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            for i in 0..self.n_instances() {
                let centered = self.data[(i, j)] - mean;
                out[(i, j)] = if sd > 0.0 { centered / sd } else { centered };
            }
        }
        FeatureMatrix { data: out }
    }
}

/// Dense class indices in `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::data(format!(
                "label out of range: class {bad} with {n_classes} classes"
            )));
        }
        Ok(LabelVector { labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn select(&self, idx: &[usize]) -> LabelVector {
        LabelVector {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Instances per class.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// `N × n` matrix with `+1` at the labelled class and `-1` elsewhere.
    pub fn one_hot_pm1(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.labels.len(), self.n_classes, |i, c| {
            if self.labels[i] == c {
                1.0
            } else {
                -1.0
            }
        })
    }
}

/// `a × n` class attribute signatures, column `j` describing class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureMatrix {
    data: DMatrix<f64>,
}

impl SignatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::data("signature matrix must be non-empty"));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::data(format!("signature entry {v} outside [0,1]")));
        }
        for j in 0..data.ncols() {
            if data.column(j).iter().all(|&v| v == 0.0) {
                return Err(Error::data(format!("class {j} has an all-zero signature")));
            }
        }
        Ok(SignatureMatrix { data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(io::read_matrix_csv(path)?)
    }

    pub fn attr_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        Self::new(self.data.select_columns(cols))
    }
}

/// Features, labels and signatures of one set of classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub signatures: SignatureMatrix,
    pub class_names: Option<Vec<String>>,
}

impl DatasetBundle {
    pub fn new(
        features: FeatureMatrix,
        labels: LabelVector,
        signatures: SignatureMatrix,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if labels.n_classes() != signatures.n_classes() {
            return Err(Error::data(format!(
                "{} label classes but {} signature columns",
                labels.n_classes(),
                signatures.n_classes()
            )));
        }
        if features.n_instances() != labels.len() {
            return Err(Error::data(format!(
                "{} feature rows but {} labels",
                features.n_instances(),
                labels.len()
            )));
        }
        if let Some(names) = &class_names {
            if names.len() != labels.n_classes() {
                return Err(Error::data("class name count differs from class count"));
            }
        }
        Ok(DatasetBundle {
            features,
            labels,
            signatures,
            class_names,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.features.n_instances()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.n_classes()
    }

    /// Writes `features.csv`, `labels.csv` and `signatures.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_matrix_csv(&dir.join("features.csv"), self.features.matrix())?;
        io::write_labels_csv(&dir.join("labels.csv"), self.labels.as_slice())?;
        io::write_matrix_csv(&dir.join("signatures.csv"), self.signatures.matrix())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        load_dataset(
            &dir.join("features.csv"),
            &dir.join("labels.csv"),
            &dir.join("signatures.csv"),
        )
    }
}

/// Loads and validates a bundle. Raw label `k` refers to signature column
/// `k`; classes are renumbered densely by first appearance in the labels file
/// and the signature columns reordered to match, dropping unused columns.
pub fn load_dataset(
    features_path: &Path,
    labels_path: &Path,
    signatures_path: &Path,
) -> Result<DatasetBundle> {
    let raw_features = io::read_matrix_csv(features_path)?;
    let raw_labels = io::read_labels_csv(labels_path)?;
    let raw_signatures = io::read_matrix_csv(signatures_path)?;

    let n_columns = raw_signatures.ncols();
    let mut dense: HashMap<usize, usize> = HashMap::new();
    let mut order: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(raw_labels.len());
    for &raw in &raw_labels {
        if raw >= n_columns {
            return Err(Error::data(format!(
                "label out of range: class {raw} but only {n_columns} signature columns"
            )));
        }
        let id = *dense.entry(raw).or_insert_with(|| {
            order.push(raw);
            order.len() - 1
        });
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(Error::data("labels file is empty"));
    }

    let features = FeatureMatrix::new(raw_features)?;
    let signatures = SignatureMatrix::new(raw_signatures.select_columns(&order))?;
    let labels = LabelVector::new(labels, order.len())?;
    let class_names = Some(order.iter().map(|c| c.to_string()).collect());
    DatasetBundle::new(features, labels, signatures, class_names)
}

pub fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    bundle.write(dir)
}

/// Disjoint seen and unseen class partitions of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct SeenUnseenSplit {
    pub seen: DatasetBundle,
    pub unseen: DatasetBundle,
    /// Class ids in the source bundle, in the order of the seen labels.
    pub seen_class_ids: Vec<usize>,
    pub unseen_class_ids: Vec<usize>,
    /// Row indices in the source bundle.
    pub seen_instances: Vec<usize>,
    pub unseen_instances: Vec<usize>,
}

impl SeenUnseenSplit {
    pub fn n_seen_classes(&self) -> usize {
        self.seen.n_classes()
    }

    pub fn n_unseen_classes(&self) -> usize {
        self.unseen.n_classes()
    }

    /// Reassembles the source bundle, seen classes first. Class ids follow
    /// `seen_class_ids` then `unseen_class_ids`.
    pub fn merged(&self) -> Result<DatasetBundle> {
        let n_seen = self.n_seen_classes();
        let total_classes = n_seen + self.n_unseen_classes();
        let n = self.seen.n_instances() + self.unseen.n_instances();
        let d = self.seen.features.dim();
        let mut features = DMatrix::zeros(n, d);
        let mut labels = vec![0; n];
        let mut class_ids = vec![0; total_classes];
        for (local, &id) in self.seen_class_ids.iter().enumerate() {
            class_ids[local] = id;
        }
        for (local, &id) in self.unseen_class_ids.iter().enumerate() {
            class_ids[n_seen + local] = id;
        }
        let mut by_class: Vec<usize> = (0..total_classes).collect();
        by_class.sort_by_key(|&c| class_ids[c]);
        let mut rank = vec![0; total_classes];
        for (r, &c) in by_class.iter().enumerate() {
            rank[c] = r;
        }
        let mut place = |dst: usize, src: &DatasetBundle, row: usize, class: usize| {
            features.set_row(dst, &src.features.matrix().row(row));
            labels[dst] = rank[class];
        };
        for (row, &dst) in self.seen_instances.iter().enumerate() {
            place(dst, &self.seen, row, self.seen.labels.get(row));
        }
        for (row, &dst) in self.unseen_instances.iter().enumerate() {
            place(dst, &self.unseen, row, n_seen + self.unseen.labels.get(row));
        }
        let a = self.seen.signatures.attr_dim();
        let mut sig = DMatrix::zeros(a, total_classes);
        for (r, &c) in by_class.iter().enumerate() {
            let col = if c < n_seen {
                self.seen.signatures.matrix().column(c).into_owned()
            } else {
                self.unseen.signatures.matrix().column(c - n_seen).into_owned()
            };
            sig.set_column(r, &col);
        }
        DatasetBundle::new(
            FeatureMatrix::new(features)?,
            LabelVector::new(labels, total_classes)?,
            SignatureMatrix::new(sig)?,
            None,
        )
    }
}

fn sub_bundle(bundle: &DatasetBundle, class_ids: &[usize]) -> Result<(DatasetBundle, Vec<usize>)> {
    let mut local = vec![usize::MAX; bundle.n_classes()];
    for (i, &c) in class_ids.iter().enumerate() {
        local[c] = i;
    }
    let rows: Vec<usize> = (0..bundle.n_instances())
        .filter(|&i| local[bundle.labels.get(i)] != usize::MAX)
        .collect();
    if rows.is_empty() {
        return Err(Error::data("a side of the split has no instances"));
    }
    let labels = rows.iter().map(|&i| local[bundle.labels.get(i)]).collect();
    let names = bundle
        .class_names
        .as_ref()
        .map(|names| class_ids.iter().map(|&c| names[c].clone()).collect());
    let sub = DatasetBundle::new(
        bundle.features.select_rows(&rows)?,
        LabelVector::new(labels, class_ids.len())?,
        bundle.signatures.select_columns(class_ids)?,
        names,
    )?;
    Ok((sub, rows))
}

/// Moves every instance and signature column of `unseen_class_ids` to the
/// unseen side. Both sides are renumbered densely in ascending source-id
/// order.
pub fn split_seen_unseen(bundle: &DatasetBundle, unseen_class_ids: &[usize]) -> Result<SeenUnseenSplit> {
    let n = bundle.n_classes();
    let mut unseen: Vec<usize> = unseen_class_ids.to_vec();
    unseen.sort_unstable();
    unseen.dedup();
    if unseen.is_empty() {
        return Err(Error::invalid("unseen class set is empty"));
    }
    if let Some(&bad) = unseen.iter().find(|&&c| c >= n) {
        return Err(Error::invalid(format!("unseen class {bad} not in 0..{n}")));
    }
    if unseen.len() == n {
        return Err(Error::invalid("unseen class set covers every class; no seen classes remain"));
    }
    let seen: Vec<usize> = (0..n).filter(|c| unseen.binary_search(c).is_err()).collect();
    let (seen_bundle, seen_rows) = sub_bundle(bundle, &seen)?;
    let (unseen_bundle, unseen_rows) = sub_bundle(bundle, &unseen)?;
    Ok(SeenUnseenSplit {
        seen: seen_bundle,
        unseen: unseen_bundle,
        seen_class_ids: seen,
        unseen_class_ids: unseen,
        seen_instances: seen_rows,
        unseen_instances: unseen_rows,
    })
}

/// Draws `count` distinct class ids from `0..n_classes`, sorted.
pub fn draw_unseen_classes(n_classes: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count >= n_classes {
        return Err(Error::invalid(format!(
            "cannot draw {count} unseen classes out of {n_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n_classes).collect();
    ids.shuffle(&mut rng);
    ids.truncate(count);
    ids.sort_unstable();
    Ok(ids)
}

/// Seeded uniform partition of `0..n` into a query part of
/// `round(query_fraction · n)` indices and a database part; both sorted.
pub fn split_indices(n: usize, query_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "query fraction {query_fraction} outside (0, 1)"
        )));
    }
    let n_query = (query_fraction * n as f64).round() as usize;
    if n_query == 0 || n_query == n {
        return Err(Error::invalid(format!(
            "query fraction {query_fraction} of {n} items leaves an empty side"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut query = idx[..n_query].to_vec();
    let mut database = idx[n_query..].to_vec();
    query.sort_unstable();
    database.sort_unstable();
    Ok((query, database))
}

pub fn split_query_database(
    codes: &HashCodeSet,
    labels: &LabelVector,
    query_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if codes.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} codes but {} labels",
            codes.len(),
            labels.len()
        )));
    }
    split_indices(codes.len(), query_fraction, seed)
}

/// Parameters of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub per_class: usize,
    pub dim: usize,
    pub attr_dim: usize,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticParams {
    pub fn new(
        n_seen: usize,
        n_unseen: usize,
        per_class: usize,
        dim: usize,
        attr_dim: usize,
        cluster_spread: f64,
        seed: u64,
    ) -> Self {
        SyntheticParams {
            n_seen,
            n_unseen,
            per_class,
            dim,
            attr_dim,
            cluster_spread,
            seed,
        }
    }
}

/// Seeded synthetic zero-shot dataset.
///
/// Seen classes get distinct random binary signatures; a fixed Gaussian
/// linear map sends each signature to its class mean in feature space.
/// Each unseen signature is a convex mixture `t·s_i + (1-t)·s_j` of two seen
/// signatures (`t` in `[0.3, 0.7]`) whose mean is the same mixture of the two
/// seen means. Instances are the class mean plus isotropic Gaussian noise of
/// standard deviation `cluster_spread`. Instances are grouped by class, seen
/// classes first.
pub fn generate_synthetic(p: &SyntheticParams) -> Result<SeenUnseenSplit> {
    if p.n_seen == 0 || p.n_unseen == 0 || p.per_class == 0 || p.dim == 0 || p.attr_dim == 0 {
        return Err(Error::invalid("synthetic counts must all be at least 1"));
    }
    if p.dim < p.n_seen {
        return Err(Error::invalid(format!(
            "feature dimension {} below seen class count {}",
            p.dim, p.n_seen
        )));
    }
    if !(p.cluster_spread >= 0.0 && p.cluster_spread.is_finite()) {
        return Err(Error::invalid("cluster spread must be finite and non-negative"));
    }
    if p.n_seen > 1 && p.attr_dim < 64 && (1u64 << p.attr_dim) <= p.n_seen as u64 {
        return Err(Error::invalid(format!(
            "{} attributes cannot give {} distinct nonzero signatures",
            p.attr_dim, p.n_seen
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let projection = DMatrix::<f64>::from_fn(p.dim, p.attr_dim, |_, _| rng.sample(StandardNormal));

    let mut seen_sigs: Vec<Vec<f64>> = Vec::with_capacity(p.n_seen);
    while seen_sigs.len() < p.n_seen {
        let sig: Vec<f64> = (0..p.attr_dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
            .collect();
        if sig.iter().all(|&v| v == 0.0) || seen_sigs.contains(&sig) {
            continue;
        }
        seen_sigs.push(sig);
    }

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..p.n_seen {
        for j in (i + 1)..p.n_seen {
            pairs.push((i, j));
        }
    }
    pairs.shuffle(&mut rng);
    let mut unseen_sigs = Vec::with_capacity(p.n_unseen);
    for u in 0..p.n_unseen {
        let (i, j) = if pairs.is_empty() {
            (0, 0)
        } else {
            pairs[u % pairs.len()]
        };
        let t: f64 = rng.random_range(0.3..=0.7);
        let sig: Vec<f64> = seen_sigs[i]
            .iter()
            .zip(&seen_sigs[j])
            .map(|(a, b)| t * a + (1.0 - t) * b)
            .collect();
        unseen_sigs.push(sig);
    }

    let all_sigs: Vec<&Vec<f64>> = seen_sigs.iter().chain(unseen_sigs.iter()).collect();
    let n_classes = all_sigs.len();
    let mut means = DMatrix::zeros(n_classes, p.dim);
    for (c, sig) in all_sigs.iter().enumerate() {
        for r in 0..p.dim {
            means[(c, r)] = (0..p.attr_dim).map(|k| projection[(r, k)] * sig[k]).sum::<f64>();
        }
    }

    let n = n_classes * p.per_class;
    let mut features = DMatrix::zeros(n, p.dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        for k in 0..p.per_class {
            let row = c * p.per_class + k;
            for r in 0..p.dim {
                let noise: f64 = rng.sample(StandardNormal);
                features[(row, r)] = if p.cluster_spread == 0.0 {
                    means[(c, r)]
                } else {
                    means[(c, r)] + p.cluster_spread * noise
                };
            }
            labels.push(c);
        }
    }
    let signatures = DMatrix::from_fn(p.attr_dim, n_classes, |k, c| all_sigs[c][k]);
    let bundle = DatasetBundle::new(
        FeatureMatrix::new(features)?,
        LabelVector::new(labels, n_classes)?,
        SignatureMatrix::new(signatures)?,
        None,
    )?;
    let unseen_ids: Vec<usize> = (p.n_seen..n_classes).collect();
    split_seen_unseen(&bundle, &unseen_ids)
}
