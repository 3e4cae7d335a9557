use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use zshash::dataset::{generate_synthetic, split_seen_unseen, DatasetBundle, LabelVector, SignatureMatrix, SyntheticParams};
use zshash::eval::{anchor_assignment_accuracy, lookup_metrics_with, mean_average_precision, EmptyRetrieval, MetricsRow};
use zshash::hashing::HashCodeSet;
use zshash::io;
use zshash::pipeline::{self, ExperimentConfig, TrainedModel, UnseenSelection};
use zshash::zsl::ExtendedAnchorSet;
use zshash::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "zshash", version, about = "Class-anchored binary hashing with zero-shot extension to unseen classes")]
struct Cli {
    /// Worker threads for the data-parallel stages (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Only print warnings and errors on stderr
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic dataset (all classes, plus seen/ and unseen/ parts)
    Synth(SynthArgs),
    /// Fit anchors, embedding and zero-shot predictor; write a model directory
    Train(TrainArgs),
    /// Hash a feature file with a trained model
    Hash(HashArgs),
    /// Synthesize anchors for unseen classes from their signatures
    Extend(ExtendArgs),
    /// Print the metrics row for a set of codes
    Eval(EvalArgs),
    /// Run the full experiment and print the metrics CSV
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    n_seen: usize,
    #[arg(long, default_value_t = 2)]
    n_unseen: usize,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    attr_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Experiment settings. Precedence: built-in defaults < --config file <
/// individual flags < --set entries.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Key-value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Code length b, at most the number of seen classes [default: 8]
    #[arg(long)]
    bits: Option<usize>,
    /// Comma-separated code lengths to sweep
    #[arg(long)]
    sweep_bits: Option<String>,
    /// kernel_pca | isomap | lle [default: kernel_pca]
    #[arg(long)]
    embedder: Option<String>,
    /// Kernel-PCA RBF bandwidth or "median" [default: median]
    #[arg(long)]
    bandwidth: Option<String>,
    /// Neighbours for Isomap and LLE [default: 5]
    #[arg(long)]
    n_neighbors: Option<usize>,
    /// Hashing RBF width or "auto" [default: auto]
    #[arg(long)]
    sigma: Option<String>,
    /// Nearest anchors kept per instance [default: 5]
    #[arg(short = 's', long = "s")]
    s: Option<usize>,
    /// Rank boost base [default: 5]
    #[arg(long)]
    omega: Option<f64>,
    /// Label penalty of the anchor clustering [default: 0.9]
    #[arg(long)]
    beta: Option<f64>,
    /// Clustering iteration cap [default: 300]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Clustering relative objective tolerance [default: 1e-7]
    #[arg(long)]
    tol: Option<f64>,
    /// Clustering seed [default: 0]
    #[arg(long)]
    kmeans_seed: Option<u64>,
    /// Zero-shot regularizer preset: awa (10, 100) | sun (0.01, 1) [default: awa]
    #[arg(long)]
    preset: Option<String>,
    /// Zero-shot feature-side regularizer gamma [default: 10]
    #[arg(long)]
    gamma: Option<f64>,
    /// Zero-shot attribute-side regularizer lambda [default: 100]
    #[arg(long)]
    lambda: Option<f64>,
    /// Seen anchors kept when synthesizing unseen anchors, or "all" [default: all]
    #[arg(long)]
    synthesis_top_s: Option<String>,
    /// Hamming lookup radius [default: 2]
    #[arg(long)]
    radius: Option<usize>,
    /// Share of retrieval codes used as queries [default: 0.25]
    #[arg(long)]
    query_fraction: Option<f64>,
    /// Query/database split seed [default: 0]
    #[arg(long)]
    split_seed: Option<u64>,
    /// Retrieval pool: unseen | seen | all [default: unseen]
    #[arg(long)]
    retrieval: Option<String>,
    /// Queries retrieving nothing: zero (precision 0) | skip [default: zero]
    #[arg(long)]
    empty_retrieval: Option<String>,
    /// Trials per code length [default: 30]
    #[arg(long)]
    n_trials: Option<usize>,
    /// What trials re-draw: queries | classes [default: queries]
    #[arg(long)]
    resplit: Option<String>,
    /// Comma-separated unseen class ids
    #[arg(long)]
    unseen_classes: Option<String>,
    /// Draw this many unseen classes at random
    #[arg(long)]
    n_unseen: Option<usize>,
    /// Seed of the unseen class draw [default: 0]
    #[arg(long)]
    unseen_seed: Option<u64>,
    /// Extra config entries, KEY=VALUE
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let flags: [(&str, Option<String>); 26] = [
            ("bits", self.bits.map(|v| v.to_string())),
            ("sweep_bits", self.sweep_bits.clone()),
            ("embedder", self.embedder.clone()),
            ("bandwidth", self.bandwidth.clone()),
            ("n_neighbors", self.n_neighbors.map(|v| v.to_string())),
            ("sigma", self.sigma.clone()),
            ("s", self.s.map(|v| v.to_string())),
            ("omega", self.omega.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("max_iter", self.max_iter.map(|v| v.to_string())),
            ("tol", self.tol.map(|v| v.to_string())),
            ("kmeans_seed", self.kmeans_seed.map(|v| v.to_string())),
            ("preset", self.preset.clone()),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("synthesis_top_s", self.synthesis_top_s.clone()),
            ("radius", self.radius.map(|v| v.to_string())),
            ("query_fraction", self.query_fraction.map(|v| v.to_string())),
            ("split_seed", self.split_seed.map(|v| v.to_string())),
            ("retrieval", self.retrieval.clone()),
            ("empty_retrieval", self.empty_retrieval.clone()),
            ("n_trials", self.n_trials.map(|v| v.to_string())),
            ("resplit", self.resplit.clone()),
            ("unseen_classes", self.unseen_classes.clone()),
            ("n_unseen", self.n_unseen.map(|v| v.to_string())),
            ("unseen_seed", self.unseen_seed.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for entry in &self.set {
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got {entry:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory (features.csv, labels.csv, signatures.csv)
    #[arg(long)]
    data: PathBuf,
    /// Model output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct HashArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature CSV to hash
    #[arg(long)]
    features: PathBuf,
    /// Binary code file to write
    #[arg(long)]
    out: PathBuf,
    /// Also write codes as a ±1 CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Hash as unseen-class instances against this `extend` output directory
    #[arg(long)]
    unseen: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtendArgs {
    #[arg(long)]
    model: PathBuf,
    /// Unseen class signatures, one column per class
    #[arg(long)]
    signatures: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated ids recorded for the unseen classes [default: 0..n_u]
    #[arg(long)]
    class_ids: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Binary code file
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Anchor codes for assignment accuracy (accuracy_test column)
    #[arg(long, requires = "anchor_classes")]
    anchors: Option<PathBuf>,
    /// Class of each anchor, one per line
    #[arg(long)]
    anchor_classes: Option<PathBuf>,
    /// Training codes for the accuracy_train column
    #[arg(long, requires_all = ["train_labels", "train_anchors", "train_anchor_classes"])]
    train_codes: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    train_anchors: Option<PathBuf>,
    #[arg(long)]
    train_anchor_classes: Option<PathBuf>,
    /// Hamming lookup radius
    #[arg(long, default_value_t = 2)]
    radius: usize,
    #[arg(long, default_value_t = 0.25)]
    query_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// zero | skip
    #[arg(long, default_value = "zero")]
    empty_retrieval: String,
    /// Value of the method column
    #[arg(long, default_value = "codes")]
    method: String,
    /// Value of the s column
    #[arg(long, default_value_t = 5)]
    s: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Dataset directory; omit for the configured data source
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the CSV here
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn invalid(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

fn parse_ids(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| invalid(format!("bad class id {t:?}"))))
        .collect()
}

fn timed<T>(what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    info!("{what}: {:.3} s", start.elapsed().as_secs_f64());
    Ok(out)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let p = SyntheticParams::new(a.n_seen, a.n_unseen, a.per_class, a.dim, a.attr_dim, a.spread, a.seed);
    let split = timed("generate", || generate_synthetic(&p))?;
    split.merged()?.write(&a.out)?;
    split.seen.write(&a.out.join("seen"))?;
    split.unseen.write(&a.out.join("unseen"))?;
    io::write_sidecar(
        &a.out.join("split.json"),
        &serde_json::json!({
            "seen_class_ids": split.seen_class_ids,
            "unseen_class_ids": split.unseen_class_ids,
        }),
    )
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let bundle = DatasetBundle::load_dir(&a.data)?;
    let (seen, ids) = match &cfg.unseen {
        None => {
            let n = bundle.n_classes();
            (bundle, (0..n).collect())
        }
        Some(sel) => {
            let unseen = match sel {
                UnseenSelection::Fixed(ids) => ids.clone(),
                UnseenSelection::Random { count, seed } => {
                    zshash::dataset::draw_unseen_classes(bundle.n_classes(), *count, *seed)?
                }
            };
            let split = split_seen_unseen(&bundle, &unseen)?;
            (split.seen, split.seen_class_ids)
        }
    };
    cfg.validate_for(seen.n_classes())?;
    let model = timed("train", || pipeline::train_with_ids(&seen, &cfg, &ids))?;
    model.save(&a.out)
}

fn hash(a: &HashArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let x = zshash::dataset::FeatureMatrix::new(io::read_matrix_csv(&a.features)?)?;
    let codes = match &a.unseen {
        None => timed("hash", || model.hash_seen(&x))?,
        Some(dir) => {
            let ext = ExtendedAnchorSet::load(dir, "extended")?;
            let sigs = SignatureMatrix::load(&dir.join("unseen_signatures.csv"))?;
            if ext.code_length() != model.code_length() {
                return Err(Error::Data("extension and model code lengths differ".into()));
            }
            timed("hash", || model.hash_unseen(&x, &ext, &sigs))?
        }
    };
    codes.write_binary(&a.out)?;
    if let Some(csv) = &a.csv {
        io::write_string(csv, &codes.to_sign_csv())?;
    }
    Ok(())
}

fn extend(a: &ExtendArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let sigs = SignatureMatrix::load(&a.signatures)?;
    let ids = match &a.class_ids {
        Some(text) => parse_ids(text)?,
        None => (0..sigs.n_classes()).collect(),
    };
    let ext = timed("extend", || model.extend(&sigs, &ids))?;
    ext.save(&a.out, "extended")?;
    io::write_matrix_csv(&a.out.join("unseen_signatures.csv"), sigs.matrix())?;
    ext.unseen_codes().write_binary(&a.out.join("unseen_anchor_codes.bin"))?;
    io::write_labels_csv(&a.out.join("unseen_anchor_classes.csv"), &(0..ext.n_unseen()).collect::<Vec<_>>())
}

fn load_labels(path: &Path, n_codes: usize, what: &str) -> Result<LabelVector> {
    let raw = io::read_labels_csv(path)?;
    if raw.len() != n_codes {
        return Err(Error::Data(format!("{} {what} labels for {n_codes} codes", raw.len())));
    }
    let n = raw.iter().copied().max().map_or(0, |m| m + 1);
    LabelVector::new(raw, n)
}

fn accuracy(codes: &HashCodeSet, labels: &LabelVector, anchors: &Path, classes: &Path) -> Result<f64> {
    let anchor_codes = HashCodeSet::read_binary(anchors)?;
    let anchor_classes = io::read_labels_csv(classes)?;
    let n = labels.n_classes().max(anchor_classes.iter().copied().max().map_or(0, |m| m + 1));
    let labels = LabelVector::new(labels.as_slice().to_vec(), n)?;
    Ok(anchor_assignment_accuracy(codes, &labels, &anchor_codes, &anchor_classes)?.accuracy)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let empty: EmptyRetrieval = a.empty_retrieval.parse()?;
    let codes = HashCodeSet::read_binary(&a.codes)?;
    let labels = load_labels(&a.labels, codes.len(), "query/database")?;
    let (qi, di) = zshash::split_query_database(&codes, &labels, a.query_fraction, a.split_seed)?;
    let (q, d) = (codes.select(&qi), codes.select(&di));
    let (ql, dl) = (labels.select(&qi), labels.select(&di));
    let m = lookup_metrics_with(&q, &ql, &d, &dl, a.radius, empty)?;
    let map = mean_average_precision(&q, &ql, &d, &dl)?;
    let accuracy_test = match (&a.anchors, &a.anchor_classes) {
        (Some(an), Some(ac)) => accuracy(&codes, &labels, an, ac)?,
        _ => f64::NAN,
    };
    let accuracy_train = match (&a.train_codes, &a.train_labels, &a.train_anchors, &a.train_anchor_classes) {
        (Some(tc), Some(tl), Some(ta), Some(tac)) => {
            let c = HashCodeSet::read_binary(tc)?;
            let l = load_labels(tl, c.len(), "training")?;
            accuracy(&c, &l, ta, tac)?
        }
        _ => f64::NAN,
    };
    let row = MetricsRow {
        method: a.method.clone(),
        code_length: codes.code_length(),
        s: a.s,
        radius: a.radius,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        map,
        accuracy_train,
        accuracy_test,
        trial: "0".into(),
        resplit: "queries".into(),
    };
    println!("{}\n{}", MetricsRow::HEADER, row.to_csv());
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(dir) = &a.data {
        cfg.set("data", &dir.display().to_string())?;
    }
    let csv = timed("run", || pipeline::run_from_config(&cfg))?;
    if let Some(out) = &a.out {
        io::write_string(out, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .parse_default_env()
        .format_timestamp(None)
        .init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Hash(a) => hash(a),
        Command::Extend(a) => extend(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
