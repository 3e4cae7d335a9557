//! Experiment configuration, model persistence and the train → hash →
//! extend → evaluate loop.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{penalized_kmeans, AnchorSet, KMeansParams};
use crate::dataset::{
    draw_unseen_classes, generate_synthetic, split_indices, split_seen_unseen, DatasetBundle,
    FeatureMatrix, LabelVector, SeenUnseenSplit, SignatureMatrix, SyntheticParams,
};
use crate::embedding::{embed_anchors, AnchorEmbedding, Bandwidth, EmbedderKind, EmbedderSpec};
use crate::error::{Error, Result};
use crate::eval::{
    anchor_assignment_accuracy, lookup_metrics_with, mean_average_precision, AccuracyReport,
    EmptyRetrieval, MetricsRow, RetrievalMetrics, DEFAULT_RADIUS,
};
use crate::hashing::{anchor_hash_codes, HashCodeSet, HashParams, SeenHasher, Sigma};
use crate::io;
use crate::zsl::{extend_anchor_set, fit_eszsl_bundle, ExtendedAnchorSet, SynthesisOptions, UnseenHasher, ZslHyperparams, ZslModel};

pub const DEFAULT_QUERY_FRACTION: f64 = 0.25;
pub const DEFAULT_N_TRIALS: usize = 30;
pub const DEFAULT_CODE_LENGTH: usize = 8;

/// Which codes form the query/database pool for retrieval metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrievalSet {
    /// Unseen-class instances only.
    #[default]
    Unseen,
    Seen,
    /// Seen and unseen instances with their labels kept distinct.
    All,
}

/// What the trials re-draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resplit {
    /// Only the query/database partition.
    #[default]
    Queries,
    /// The seen/unseen class partition as well.
    Classes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnseenSelection {
    Fixed(Vec<usize>),
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticParams),
    /// A directory holding `features.csv`, `labels.csv`, `signatures.csv`.
    Directory(PathBuf),
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($ty), " {:?}; expected one of: ", $($name, " "),+),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(RetrievalSet { Unseen => "unseen", Seen => "seen", All => "all" });
keyword_enum!(Resplit { Queries => "queries", Classes => "classes" });
keyword_enum!(EmptyRetrieval { Zero => "zero", Skip => "skip" });

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub radius: usize,
    pub query_fraction: f64,
    pub split_seed: u64,
    pub retrieval: RetrievalSet,
    pub empty_retrieval: EmptyRetrieval,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            radius: DEFAULT_RADIUS,
            query_fraction: DEFAULT_QUERY_FRACTION,
            split_seed: 0,
            retrieval: RetrievalSet::default(),
            empty_retrieval: EmptyRetrieval::default(),
        }
    }
}

/// Everything that determines an experiment's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub code_length: usize,
    /// Extra code lengths for a sweep; empty runs `code_length` only.
    pub sweep: Vec<usize>,
    pub embedder: EmbedderSpec,
    pub hash: HashParams,
    pub kmeans: KMeansParams,
    pub zsl: ZslHyperparams,
    /// Top-s sparsification of unseen-anchor synthesis; `None` averages over
    /// all seen anchors.
    pub synthesis_top_s: Option<usize>,
    pub eval: EvalParams,
    pub n_trials: usize,
    pub resplit: Resplit,
    /// `None` keeps the split the data source provides.
    pub unseen: Option<UnseenSelection>,
    pub data: DataSource,
}

pub fn default_synthetic() -> SyntheticParams {
    SyntheticParams::new(8, 2, 50, 32, 16, 0.1, 1)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            code_length: DEFAULT_CODE_LENGTH,
            sweep: Vec::new(),
            embedder: EmbedderSpec::default(),
            hash: HashParams::default(),
            kmeans: KMeansParams::default(),
            zsl: ZslHyperparams::default(),
            synthesis_top_s: None,
            eval: EvalParams::default(),
            n_trials: DEFAULT_N_TRIALS,
            resplit: Resplit::default(),
            unseen: None,
            data: DataSource::Synthetic(default_synthetic()),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Code lengths this config runs, in order.
    pub fn code_lengths(&self) -> Vec<usize> {
        if self.sweep.is_empty() {
            vec![self.code_length]
        } else {
            self.sweep.clone()
        }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            top_s: self.synthesis_top_s,
            omega: self.hash.omega,
        }
    }

    /// Sets one `key = value` entry. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "bits" => self.code_length = parse(key, v)?,
            "sweep_bits" => self.sweep = parse_list(key, v)?,
            "embedder" => self.embedder.kind = parse(key, v)?,
            "bandwidth" => self.embedder.bandwidth = parse(key, v)?,
            "n_neighbors" => self.embedder.n_neighbors = parse(key, v)?,
            "lle_reg" => self.embedder.lle_reg = parse(key, v)?,
            "sigma" => self.hash.sigma = parse(key, v)?,
            "s" => self.hash.s = parse(key, v)?,
            "omega" => self.hash.omega = parse(key, v)?,
            "beta" => self.kmeans.beta = parse(key, v)?,
            "max_iter" => self.kmeans.max_iter = parse(key, v)?,
            "tol" => self.kmeans.tol = parse(key, v)?,
            "kmeans_seed" => self.kmeans.seed = parse(key, v)?,
            "preset" => {
                self.zsl = ZslHyperparams::preset(v)
                    .ok_or_else(|| Error::invalid(format!("unknown preset {v:?}; expected awa or sun")))?
            }
            "gamma" => self.zsl.gamma = parse(key, v)?,
            "lambda" => self.zsl.lambda = parse(key, v)?,
            "synthesis_top_s" => {
                self.synthesis_top_s = if v == "all" { None } else { Some(parse(key, v)?) }
            }
            "radius" => self.eval.radius = parse(key, v)?,
            "query_fraction" => self.eval.query_fraction = parse(key, v)?,
            "split_seed" => self.eval.split_seed = parse(key, v)?,
            "retrieval" => self.eval.retrieval = parse(key, v)?,
            "empty_retrieval" => self.eval.empty_retrieval = parse(key, v)?,
            "n_trials" => self.n_trials = parse(key, v)?,
            "resplit" => self.resplit = parse(key, v)?,
            "unseen_classes" => {
                self.unseen = match v {
                    "" | "given" => None,
                    _ => Some(UnseenSelection::Fixed(parse_list(key, v)?)),
                }
            }
            "n_unseen" => {
                let seed = match self.unseen {
                    Some(UnseenSelection::Random { seed, .. }) => seed,
                    _ => 0,
                };
                self.unseen = Some(UnseenSelection::Random { count: parse(key, v)?, seed });
            }
            "unseen_seed" => {
                let seed = parse(key, v)?;
                match &mut self.unseen {
                    Some(UnseenSelection::Random { seed: s, .. }) => *s = seed,
                    _ => return Err(Error::invalid("unseen_seed requires n_unseen to be set first")),
                }
            }
            "data" => {
                self.data = if v == "synthetic" {
                    match &self.data {
                        DataSource::Synthetic(_) => self.data.clone(),
                        DataSource::Directory(_) => DataSource::Synthetic(default_synthetic()),
                    }
                } else {
                    DataSource::Directory(PathBuf::from(v))
                }
            }
            k if k.starts_with("synth_") => {
                let DataSource::Synthetic(p) = &mut self.data else {
                    return Err(Error::invalid(format!("{k} only applies to data = synthetic")));
                };
                match &k["synth_".len()..] {
                    "n_seen" => p.n_seen = parse(k, v)?,
                    "n_unseen" => p.n_unseen = parse(k, v)?,
                    "per_class" => p.per_class = parse(k, v)?,
                    "dim" => p.dim = parse(k, v)?,
                    "attr_dim" => p.attr_dim = parse(k, v)?,
                    "spread" => p.cluster_spread = parse(k, v)?,
                    "seed" => p.seed = parse(k, v)?,
                    _ => return Err(Error::invalid(format!("unknown config key {k:?}"))),
                }
            }
            k => return Err(Error::invalid(format!("unknown config key {k:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys are applied in
    /// file order over the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_string(path, &self.to_config_string())
    }

    /// Canonical text form; [`parse_str`](Self::parse_str) reads it back.
    pub fn to_config_string(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| writeln!(o, "{k} = {v}").unwrap();
        kv("bits", self.code_length.to_string());
        if !self.sweep.is_empty() {
            kv("sweep_bits", join(&self.sweep));
        }
        kv("embedder", self.embedder.kind.to_string());
        kv("bandwidth", self.embedder.bandwidth.to_string());
        kv("n_neighbors", self.embedder.n_neighbors.to_string());
        kv("lle_reg", self.embedder.lle_reg.to_string());
        kv("sigma", self.hash.sigma.to_string());
        kv("s", self.hash.s.to_string());
        kv("omega", self.hash.omega.to_string());
        kv("beta", self.kmeans.beta.to_string());
        kv("max_iter", self.kmeans.max_iter.to_string());
        kv("tol", self.kmeans.tol.to_string());
        kv("kmeans_seed", self.kmeans.seed.to_string());
        kv("gamma", self.zsl.gamma.to_string());
        kv("lambda", self.zsl.lambda.to_string());
        kv(
            "synthesis_top_s",
            self.synthesis_top_s.map_or("all".into(), |s| s.to_string()),
        );
        kv("radius", self.eval.radius.to_string());
        kv("query_fraction", self.eval.query_fraction.to_string());
        kv("split_seed", self.eval.split_seed.to_string());
        kv("retrieval", self.eval.retrieval.to_string());
        kv("empty_retrieval", self.eval.empty_retrieval.to_string());
        kv("n_trials", self.n_trials.to_string());
        kv("resplit", self.resplit.to_string());
        match &self.unseen {
            None => kv("unseen_classes", "given".into()),
            Some(UnseenSelection::Fixed(ids)) => kv("unseen_classes", join(ids)),
            Some(UnseenSelection::Random { count, seed }) => {
                kv("n_unseen", count.to_string());
                kv("unseen_seed", seed.to_string());
            }
        }
        match &self.data {
            DataSource::Synthetic(p) => {
                kv("data", "synthetic".into());
                kv("synth_n_seen", p.n_seen.to_string());
                kv("synth_n_unseen", p.n_unseen.to_string());
                kv("synth_per_class", p.per_class.to_string());
                kv("synth_dim", p.dim.to_string());
                kv("synth_attr_dim", p.attr_dim.to_string());
                kv("synth_spread", p.cluster_spread.to_string());
                kv("synth_seed", p.seed.to_string());
            }
            DataSource::Directory(dir) => kv("data", dir.display().to_string()),
        }
        o
    }

    /// Checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.code_lengths().contains(&0) {
            return Err(Error::invalid("code length must be at least 1"));
        }
        if self.n_trials == 0 {
            return Err(Error::invalid("n_trials must be at least 1"));
        }
        if !(self.kmeans.beta >= 0.0 && self.kmeans.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {}", self.kmeans.beta)));
        }
        if self.kmeans.max_iter == 0 || !(self.kmeans.tol >= 0.0) {
            return Err(Error::invalid("max_iter must be >= 1 and tol >= 0"));
        }
        if !(self.eval.query_fraction > 0.0 && self.eval.query_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "query_fraction must be in (0, 1), got {}",
                self.eval.query_fraction
            )));
        }
        if self.hash.s == 0 || !(self.hash.omega >= 1.0 && self.hash.omega.is_finite()) {
            return Err(Error::invalid("s must be >= 1 and omega >= 1"));
        }
        if let Sigma::Fixed(v) = self.hash.sigma {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("sigma must be positive"));
            }
        }
        if let Bandwidth::Fixed(v) = self.embedder.bandwidth {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("bandwidth must be positive"));
            }
        }
        if self.embedder.kind == EmbedderKind::External {
            return Err(Error::invalid("the experiment runner needs a computed embedder"));
        }
        if self.synthesis_top_s == Some(0) {
            return Err(Error::invalid("synthesis_top_s must be >= 1"));
        }
        self.zsl.validate()?;
        if self.resplit == Resplit::Classes && matches!(self.unseen, Some(UnseenSelection::Fixed(_))) {
            return Err(Error::invalid(
                "resplit = classes re-draws unseen classes; use n_unseen instead of unseen_classes",
            ));
        }
        Ok(())
    }

    /// Checks against the number of seen classes, before any training work.
    pub fn validate_for(&self, n_seen: usize) -> Result<()> {
        self.validate()?;
        for b in self.code_lengths() {
            if b > n_seen {
                return Err(Error::invalid(format!(
                    "code length {b} exceeds the number of seen classes {n_seen}; \
                     the code length is bounded by the number of anchors (b <= n_s)"
                )));
            }
        }
        self.hash.validate(n_seen)?;
        self.embedder.validate(n_seen)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelSidecar {
    sigma: f64,
    feature_dim: usize,
    seen_class_ids: Vec<usize>,
}

/// Everything needed to hash new seen-class instances and to extend to
/// unseen classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub anchors: AnchorSet,
    pub embedding: AnchorEmbedding,
    pub zsl: ZslModel,
    pub config: ExperimentConfig,
    /// Resolved RBF width.
    pub sigma: f64,
    /// Seen-class signatures in class order.
    pub seen_signatures: SignatureMatrix,
    /// Source ids of the seen classes.
    pub seen_class_ids: Vec<usize>,
}

impl TrainedModel {
    pub fn n_anchors(&self) -> usize {
        self.anchors.n_anchors()
    }

    pub fn feature_dim(&self) -> usize {
        self.anchors.dim()
    }

    pub fn code_length(&self) -> usize {
        self.embedding.code_length()
    }

    /// Seen signatures with column `q` describing the class of anchor `q`.
    pub fn anchor_signatures(&self) -> DMatrix<f64> {
        let s = self.seen_signatures.matrix();
        DMatrix::from_fn(s.nrows(), self.n_anchors(), |i, q| s[(i, self.anchors.class_of_anchor[q])])
    }

    pub fn seen_hasher(&self) -> Result<SeenHasher<'_>> {
        SeenHasher::new(&self.anchors.centers, &self.embedding, self.sigma, self.config.hash.s, self.config.hash.omega)
    }

    pub fn anchor_codes(&self) -> HashCodeSet {
        anchor_hash_codes(&self.embedding)
    }

    pub fn hash_seen(&self, x: &FeatureMatrix) -> Result<HashCodeSet> {
        self.check_dim(x)?;
        self.seen_hasher()?.hash_all(x)
    }

    pub fn check_dim(&self, x: &FeatureMatrix) -> Result<()> {
        if x.dim() != self.feature_dim() {
            return Err(Error::data(format!(
                "features have dimension {} but the model expects {}",
                x.dim(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// Synthesizes one anchor per column of `unseen` signatures.
    pub fn extend(&self, unseen: &SignatureMatrix, unseen_class_ids: &[usize]) -> Result<ExtendedAnchorSet> {
        if unseen.attr_dim() != self.seen_signatures.attr_dim() {
            return Err(Error::data(format!(
                "unseen signatures have {} attributes, the model has {}",
                unseen.attr_dim(),
                self.seen_signatures.attr_dim()
            )));
        }
        extend_anchor_set(
            &self.embedding,
            &self.anchor_signatures(),
            unseen.matrix(),
            unseen_class_ids,
            &self.config.synthesis_options(),
        )
    }

    pub fn hash_unseen(&self, x: &FeatureMatrix, ext: &ExtendedAnchorSet, unseen: &SignatureMatrix) -> Result<HashCodeSet> {
        self.check_dim(x)?;
        UnseenHasher::new(&self.zsl, ext, unseen.matrix(), &self.config.hash)?.hash_all(x)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.anchors.save(dir, "anchors")?;
        self.embedding.save(dir, "embedding")?;
        self.zsl.save(dir, "zsl")?;
        self.config.save(&dir.join("config.cfg"))?;
        io::write_matrix_csv(&dir.join("seen_signatures.csv"), self.seen_signatures.matrix())?;
        self.anchor_codes().write_binary(&dir.join("anchor_codes.bin"))?;
        io::write_labels_csv(&dir.join("anchor_classes.csv"), &self.anchors.class_of_anchor)?;
        io::write_sidecar(
            &dir.join("model.json"),
            &ModelSidecar {
                sigma: self.sigma,
                feature_dim: self.feature_dim(),
                seen_class_ids: self.seen_class_ids.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let anchors = AnchorSet::load(dir, "anchors")?;
        let embedding = AnchorEmbedding::load(dir, "embedding")?;
        let zsl = ZslModel::load(dir, "zsl")?;
        let config = ExperimentConfig::load(&dir.join("config.cfg"))?;
        let seen_signatures = SignatureMatrix::load(&dir.join("seen_signatures.csv"))?;
        let side: ModelSidecar = io::read_sidecar(&dir.join("model.json"))?;
        let n = anchors.n_anchors();
        if embedding.n_anchors() != n || seen_signatures.n_classes() != n || side.seen_class_ids.len() != n {
            return Err(Error::data("model files disagree on the number of anchors"));
        }
        if zsl.feature_dim() != anchors.dim() || side.feature_dim != anchors.dim() {
            return Err(Error::data("model files disagree on the feature dimension"));
        }
        if zsl.attr_dim() != seen_signatures.attr_dim() {
            return Err(Error::data("model files disagree on the attribute dimension"));
        }
        if !(side.sigma > 0.0 && side.sigma.is_finite()) {
            return Err(Error::data("stored sigma is not positive"));
        }
        Ok(TrainedModel {
            anchors,
            embedding,
            zsl,
            config,
            sigma: side.sigma,
            seen_signatures,
            seen_class_ids: side.seen_class_ids,
        })
    }
}

/// Fits anchors, binds them to classes, embeds them and fits the zero-shot
/// predictor. Seen class ids default to `0..n_s`.
pub fn train(seen: &DatasetBundle, config: &ExperimentConfig) -> Result<TrainedModel> {
    train_with_ids(seen, config, &(0..seen.n_classes()).collect::<Vec<_>>())
}

pub fn train_with_ids(seen: &DatasetBundle, config: &ExperimentConfig, seen_class_ids: &[usize]) -> Result<TrainedModel> {
    let n_s = seen.n_classes();
    config.validate_for(n_s)?;
    if config.sweep.len() > 1 {
        return Err(Error::invalid("train takes a single code length, not a sweep"));
    }
    let b = config.code_lengths()[0];
    if seen_class_ids.len() != n_s {
        return Err(Error::shape("one source id per seen class is required"));
    }
    let mut anchors = penalized_kmeans(&seen.features, &seen.labels, &config.kmeans)?;
    anchors.bind_to_classes(&seen.features, &seen.labels)?;
    let embedding = embed_anchors(&anchors.centers, &config.embedder, b)?;
    let zsl = fit_eszsl_bundle(seen, config.zsl)?;
    let sigma = config.hash.resolve_sigma(&seen.features, &anchors.centers);
    let mut stored = config.clone();
    stored.code_length = b;
    stored.sweep.clear();
    Ok(TrainedModel {
        anchors,
        embedding,
        zsl,
        config: stored,
        sigma,
        seen_signatures: seen.signatures.clone(),
        seen_class_ids: seen_class_ids.to_vec(),
    })
}

/// Measurements of one trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub code_length: usize,
    pub train_accuracy: AccuracyReport,
    pub test_accuracy: AccuracyReport,
    pub retrieval: RetrievalMetrics,
    /// Mean over queries of the share of database items in the query's class.
    pub class_prior: f64,
    pub unseen_class_ids: Vec<usize>,
}

impl TrialOutcome {
    pub fn row(&self, config: &ExperimentConfig) -> MetricsRow {
        MetricsRow {
            method: config.embedder.kind.to_string(),
            code_length: self.code_length,
            s: config.hash.s,
            radius: config.eval.radius,
            precision: self.retrieval.precision,
            recall: self.retrieval.recall,
            f1: self.retrieval.f1,
            map: self.retrieval.map,
            accuracy_train: self.train_accuracy.accuracy,
            accuracy_test: self.test_accuracy.accuracy,
            trial: self.trial.to_string(),
            resplit: config.resplit.to_string(),
        }
    }
}

/// Mean share of database items sharing the query's class.
pub fn class_prior(query_labels: &LabelVector, db_labels: &LabelVector) -> f64 {
    if query_labels.is_empty() || db_labels.is_empty() {
        return 0.0;
    }
    let n = query_labels.n_classes().max(db_labels.n_classes());
    let mut counts = vec![0usize; n];
    for &l in db_labels.as_slice() {
        counts[l] += 1;
    }
    let total: f64 = query_labels
        .as_slice()
        .iter()
        .map(|&l| counts[l] as f64 / db_labels.len() as f64)
        .sum();
    total / query_labels.len() as f64
}

/// One train → hash → extend → evaluate pass on a fixed split.
pub fn run_trial(split: &SeenUnseenSplit, config: &ExperimentConfig, code_length: usize, trial: usize) -> Result<TrialOutcome> {
    let t = trial as u64;
    let mut cfg = config.clone();
    cfg.code_length = code_length;
    cfg.sweep.clear();
    cfg.kmeans.seed = config.kmeans.seed.wrapping_add(t);
    let model = train_with_ids(&split.seen, &cfg, &split.seen_class_ids)?;

    let seen_codes = model.hash_seen(&split.seen.features)?;
    let train_accuracy = anchor_assignment_accuracy(
        &seen_codes,
        &split.seen.labels,
        &model.anchor_codes(),
        &model.anchors.class_of_anchor,
    )?;

    let n_u = split.unseen.n_classes();
    let ext = model.extend(&split.unseen.signatures, &(0..n_u).collect::<Vec<_>>())?;
    let unseen_codes = model.hash_unseen(&split.unseen.features, &ext, &split.unseen.signatures)?;
    let test_accuracy = anchor_assignment_accuracy(
        &unseen_codes,
        &split.unseen.labels,
        &ext.unseen_codes(),
        &(0..n_u).collect::<Vec<_>>(),
    )?;

    let (pool, pool_labels) = match cfg.eval.retrieval {
        RetrievalSet::Unseen => (unseen_codes, split.unseen.labels.clone()),
        RetrievalSet::Seen => (seen_codes, split.seen.labels.clone()),
        RetrievalSet::All => {
            let n_s = split.seen.n_classes();
            let mut codes = seen_codes.codes().to_vec();
            codes.extend_from_slice(unseen_codes.codes());
            let mut labels = split.seen.labels.as_slice().to_vec();
            labels.extend(split.unseen.labels.as_slice().iter().map(|&l| l + n_s));
            (
                HashCodeSet::new(codes, code_length)?,
                LabelVector::new(labels, n_s + n_u)?,
            )
        }
    };
    let (qi, di) = split_indices(pool.len(), cfg.eval.query_fraction, cfg.eval.split_seed.wrapping_add(t))?;
    let (queries, database) = (pool.select(&qi), pool.select(&di));
    let (ql, dl) = (pool_labels.select(&qi), pool_labels.select(&di));
    let mut retrieval = lookup_metrics_with(&queries, &ql, &database, &dl, cfg.eval.radius, cfg.eval.empty_retrieval)?;
    retrieval.map = mean_average_precision(&queries, &ql, &database, &dl)?;

    Ok(TrialOutcome {
        trial,
        code_length,
        train_accuracy,
        test_accuracy,
        retrieval,
        class_prior: class_prior(&ql, &dl),
        unseen_class_ids: split.unseen_class_ids.clone(),
    })
}

fn split_for_trial(base: &SeenUnseenSplit, merged: Option<&DatasetBundle>, config: &ExperimentConfig, trial: usize) -> Result<SeenUnseenSplit> {
    match (config.resplit, merged) {
        (Resplit::Classes, Some(all)) => {
            let (count, seed) = match &config.unseen {
                Some(UnseenSelection::Random { count, seed }) => (*count, *seed),
                _ => (base.n_unseen_classes(), 0),
            };
            let ids = draw_unseen_classes(all.n_classes(), count, seed.wrapping_add(trial as u64))?;
            split_seen_unseen(all, &ids)
        }
        _ => Ok(base.clone()),
    }
}

/// All trials for every configured code length, in (code length, trial)
/// order.
pub fn run_trials(split: &SeenUnseenSplit, config: &ExperimentConfig) -> Result<Vec<TrialOutcome>> {
    config.validate()?;
    let merged = match config.resplit {
        Resplit::Classes => Some(split.merged()?),
        Resplit::Queries => None,
    };
    let mut jobs = Vec::new();
    for b in config.code_lengths() {
        for t in 0..config.n_trials {
            jobs.push((b, t));
        }
    }
    jobs.into_par_iter()
        .map(|(b, t)| {
            let s = split_for_trial(split, merged.as_ref(), config, t)?;
            run_trial(&s, config, b, t)
        })
        .collect()
}

/// Runs every trial and returns the metrics CSV: header, then per code
/// length the trial rows followed by their mean row.
pub fn run_experiment(split: &SeenUnseenSplit, config: &ExperimentConfig) -> Result<String> {
    let outcomes = run_trials(split, config)?;
    let mut out = String::new();
    out.push_str(MetricsRow::HEADER);
    out.push('\n');
    for b in config.code_lengths() {
        let rows: Vec<MetricsRow> = outcomes
            .iter()
            .filter(|o| o.code_length == b)
            .map(|o| o.row(config))
            .collect();
        for r in &rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        if let Some(m) = MetricsRow::mean(&rows) {
            out.push_str(&m.to_csv());
            out.push('\n');
        }
    }
    Ok(out)
}

/// Builds the split a config describes from its data source.
pub fn load_split(config: &ExperimentConfig) -> Result<SeenUnseenSplit> {
    let base = match &config.data {
        DataSource::Synthetic(p) => {
            let split = generate_synthetic(p)?;
            if config.unseen.is_none() {
                return Ok(split);
            }
            split.merged()?
        }
        DataSource::Directory(dir) => DatasetBundle::load_dir(dir)?,
    };
    let ids = match &config.unseen {
        Some(UnseenSelection::Fixed(ids)) => ids.clone(),
        Some(UnseenSelection::Random { count, seed }) => draw_unseen_classes(base.n_classes(), *count, *seed)?,
        None => {
            return Err(Error::invalid(
                "data directory given without unseen classes; set unseen_classes or n_unseen",
            ))
        }
    };
    split_seen_unseen(&base, &ids)
}

/// Loads the configured data and runs the experiment.
pub fn run_from_config(config: &ExperimentConfig) -> Result<String> {
    config.validate()?;
    let split = load_split(config)?;
    config.validate_for(split.n_seen_classes())?;
    run_experiment(&split, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.n_trials = 2;
        c.data = DataSource::Synthetic(SyntheticParams::new(6, 2, 20, 12, 8, 0.1, 3));
        c.code_length = 4;
        c
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = ExperimentConfig::default();
        assert_eq!(c.kmeans.beta, 0.9);
        assert_eq!(c.hash.s, 5);
        assert_eq!(c.hash.omega, 5.0);
        assert_eq!(c.eval.radius, 2);
        assert_eq!(c.eval.query_fraction, 0.25);
        assert_eq!(c.hash.sigma, Sigma::Auto);
        assert_eq!((c.zsl.gamma, c.zsl.lambda), (10.0, 100.0));
    }

    #[test]
    fn config_text_round_trips() {
        let mut c = small_config();
        c.sweep = vec![2, 4];
        c.unseen = Some(UnseenSelection::Random { count: 2, seed: 7 });
        c.resplit = Resplit::Classes;
        c.hash.sigma = Sigma::Fixed(0.75);
        c.synthesis_top_s = Some(3);
        c.embedder = EmbedderSpec::isomap(3);
        let text = c.to_config_string();
        assert_eq!(ExperimentConfig::parse_str(&text).unwrap(), c);

        let mut d = ExperimentConfig::default();
        d.data = DataSource::Directory("some/dir".into());
        d.unseen = Some(UnseenSelection::Fixed(vec![1, 4]));
        assert_eq!(ExperimentConfig::parse_str(&d.to_config_string()).unwrap(), d);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        for bad in ["colour = red", "beta = -1", "query_fraction = 1.5", "bits", "n_trials = 0", "embedder = pca"] {
            let e = ExperimentConfig::parse_str(bad).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{bad}");
        }
        assert_eq!(ExperimentConfig::parse_str("preset = sun").unwrap().zsl, ZslHyperparams::SUN);
    }

    #[test]
    fn train_shapes_and_bound() {
        let split = generate_synthetic(&SyntheticParams::new(8, 2, 20, 16, 8, 0.1, 1)).unwrap();
        let mut c = ExperimentConfig::default();
        c.code_length = 8;
        let m = train(&split.seen, &c).unwrap();
        assert_eq!(m.n_anchors(), 8);
        assert_eq!((m.embedding.m.nrows(), m.embedding.m.ncols()), (8, 8));
        c.code_length = 9;
        let e = train(&split.seen, &c).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("b <= n_s"));
    }

    #[test]
    fn train_is_deterministic_on_disk() {
        let split = generate_synthetic(&SyntheticParams::new(6, 2, 15, 12, 8, 0.1, 2)).unwrap();
        let mut c = ExperimentConfig::default();
        c.code_length = 4;
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            train(&split.seen, &c).unwrap().save(d.path()).unwrap();
        }
        let mut names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 8);
        for n in names {
            let a = std::fs::read(dirs[0].path().join(&n)).unwrap();
            let b = std::fs::read(dirs[1].path().join(&n)).unwrap();
            assert_eq!(a, b, "{n:?}");
        }
    }

    #[test]
    fn model_round_trips() {
        let split = generate_synthetic(&SyntheticParams::new(6, 2, 15, 12, 8, 0.1, 2)).unwrap();
        let mut c = ExperimentConfig::default();
        c.code_length = 4;
        let m = train(&split.seen, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = TrainedModel::load(dir.path()).unwrap();
        assert_eq!(back.hash_seen(&split.seen.features).unwrap(), m.hash_seen(&split.seen.features).unwrap());
        assert_eq!(back.sigma, m.sigma);
        assert_eq!(back.anchors.centers, m.anchors.centers);
    }

    #[test]
    fn anchor_signatures_follow_anchor_classes() {
        let split = generate_synthetic(&SyntheticParams::new(5, 1, 10, 8, 6, 0.1, 4)).unwrap();
        let mut c = ExperimentConfig::default();
        c.code_length = 3;
        let mut m = train(&split.seen, &c).unwrap();
        m.anchors.class_of_anchor = vec![4, 3, 2, 1, 0];
        let s = m.anchor_signatures();
        for q in 0..5 {
            assert_eq!(s.column(q), split.seen.signatures.matrix().column(4 - q));
        }
    }

    #[test]
    fn one_trial_mean_equals_trial() {
        let mut c = small_config();
        c.n_trials = 1;
        let csv = run_from_config(&c).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let strip = |l: &str| l.rsplitn(3, ',').nth(2).unwrap().to_string();
        assert_eq!(strip(lines[1]), strip(lines[2]));
        assert!(lines[2].contains(",mean,"));
    }

    #[test]
    fn trials_and_sweeps_produce_row_groups() {
        let mut c = small_config();
        c.n_trials = 3;
        c.sweep = vec![2, 4, 6];
        let csv = run_from_config(&c).unwrap();
        let lines: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(lines.len(), 3 * 4);
        for (g, b) in [2, 4, 6].iter().enumerate() {
            for l in &lines[g * 4..(g + 1) * 4] {
                assert_eq!(l.split(',').nth(1).unwrap(), b.to_string());
            }
        }
    }

    #[test]
    fn output_is_deterministic_and_class_resplit_changes_unseen_sets() {
        let mut c = small_config();
        c.n_trials = 3;
        assert_eq!(run_from_config(&c).unwrap(), run_from_config(&c).unwrap());

        c.resplit = Resplit::Classes;
        c.unseen = Some(UnseenSelection::Random { count: 2, seed: 5 });
        let split = load_split(&c).unwrap();
        let outcomes = run_trials(&split, &c).unwrap();
        let distinct: std::collections::BTreeSet<_> = outcomes.iter().map(|o| o.unseen_class_ids.clone()).collect();
        assert!(distinct.len() > 1);
        assert!(run_experiment(&split, &c).unwrap().contains(",classes\n"));
    }

    #[test]
    fn class_prior_example() {
        let q = LabelVector::new(vec![0, 1], 2).unwrap();
        let d = LabelVector::new(vec![0, 0, 0, 1], 2).unwrap();
        assert_eq!(class_prior(&q, &d), 0.5);
    }

    #[test]
    fn retrieval_sets() {
        let mut c = small_config();
        c.n_trials = 1;
        for r in [RetrievalSet::Seen, RetrievalSet::All] {
            c.eval.retrieval = r;
            let split = load_split(&c).unwrap();
            let o = run_trial(&split, &c, 4, 0).unwrap();
            let pool = match r {
                RetrievalSet::Seen => split.seen.n_instances(),
                _ => split.seen.n_instances() + split.unseen.n_instances(),
            };
            assert_eq!(o.retrieval.n_queries, (pool as f64 * 0.25).round() as usize);
        }
    }
}
