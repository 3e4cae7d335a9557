//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use zshash::anchors::{penalized_kmeans, KMeansParams};
use zshash::dataset::{generate_synthetic, split_indices, FeatureMatrix, LabelVector, SyntheticParams};
use zshash::embedding::{embed_anchors, EmbedderKind, EmbedderSpec};
use zshash::eval::{hamming_distance, lookup_metrics, mean_average_precision};
use zshash::hashing::{anchor_hash_codes, binarize, HashCode, HashCodeSet, HashParams, SeenHasher, Sigma};
use zshash::pipeline::{self, ExperimentConfig};
use zshash::zsl::{eszsl_gradient, fit_eszsl, ZslHyperparams};

struct Outcome {
    pass: bool,
    /// Reported but not gated.
    info: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, info: false, detail: detail.into() }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Labelled Gaussian blobs with every class non-empty.
fn blobs(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, sep: f64, noise: f64) -> (FeatureMatrix, LabelVector) {
    let centres = gaussian(rng, k, d) * sep;
    let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    let x = DMatrix::from_fn(n, d, |i, j| centres[(labels[i], j)] + noise * rng.sample::<f64, _>(StandardNormal));
    (FeatureMatrix::new(x).unwrap(), LabelVector::new(labels, k).unwrap())
}

fn sq_objective(x: &DMatrix<f64>, labels: &[usize], centres: &DMatrix<f64>, assign: &[usize], beta: f64) -> f64 {
    let mut total = 0.0;
    for (n, &k) in assign.iter().enumerate() {
        total += (x.row(n) - centres.row(k)).norm_squared();
        if k != labels[n] {
            total += beta;
        }
    }
    total
}

fn em_monotonicity() -> Outcome {
    let mut violations = 0;
    let mut mismatched_final = 0;
    let mut steps = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..=8);
        let d = rng.random_range(1..=16);
        let n = rng.random_range(k..=200);
        let (x, labels) = blobs(&mut rng, n, d, k, 2.0, 1.0);
        let beta = rng.random_range(0.0..5.0);
        let fit = penalized_kmeans(&x, &labels, &KMeansParams { beta, seed, ..Default::default() }).unwrap();
        let t = &fit.objective_trace;
        steps += t.len();
        // Rounding slack only: 1e-12 relative.
        violations += t.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12)).count();
        let last = *t.last().unwrap();
        let direct = sq_objective(x.matrix(), labels.as_slice(), &fit.centers, &fit.assignments, beta);
        if (last - direct).abs() > 1e-9 * direct.max(1.0) {
            mismatched_final += 1;
        }
    }
    outcome(
        violations == 0 && mismatched_final == 0,
        format!("{violations} increases over {steps} recorded steps, 100 seeds; {mismatched_final} traces disagree with a direct recomputation"),
    )
}

fn beta_dominance() -> Outcome {
    let mut worst_centre = 0.0f64;
    let mut wrong_assign = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let k = rng.random_range(2..=8);
        let d = rng.random_range(2..=16);
        let (x, labels) = blobs(&mut rng, 120, d, k, 10.0, 0.5);
        let fit = penalized_kmeans(&x, &labels, &KMeansParams { beta: 1e6, seed, ..Default::default() }).unwrap();
        wrong_assign += fit.assignments.iter().zip(labels.as_slice()).filter(|(a, l)| a != l).count();
        for c in 0..k {
            let members: Vec<usize> = (0..120).filter(|&i| labels.get(i) == c).collect();
            for j in 0..d {
                let mean = members.iter().map(|&i| x.matrix()[(i, j)]).sum::<f64>() / members.len() as f64;
                worst_centre = worst_centre.max((fit.centers[(c, j)] - mean).abs());
            }
        }
    }
    outcome(
        wrong_assign == 0 && worst_centre <= 1e-9,
        format!("{wrong_assign} assignments differ from labels; max |centre - class mean| = {worst_centre:.2e} (tol 1e-9), 20 datasets"),
    )
}

/// vec(V) from the normal equations `(B ⊗ A) vec(V) = vec(XᵀYSᵀ)`, with
/// `A = XᵀX + γI`, `B = SSᵀ + λI` (column-major vec).
fn kron_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64, lambda: f64) -> DMatrix<f64> {
    let (d, a) = (x.ncols(), s.nrows());
    let am = x.transpose() * x + DMatrix::identity(d, d) * gamma;
    let bm = s * s.transpose() + DMatrix::identity(a, a) * lambda;
    let big = bm.kronecker(&am);
    let rhs = x.transpose() * y * s.transpose();
    let rhs_vec = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let sol = big.lu().solve(&rhs_vec).expect("oracle system is nonsingular");
    DMatrix::from_column_slice(d, a, sol.as_slice())
}

fn objective(v: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>, s: &DMatrix<f64>, g: f64, l: f64) -> f64 {
    (x * v * s - y).norm_squared() + g * (v * s).norm_squared() + l * (x * v).norm_squared() + g * l * v.norm_squared()
}

fn closed_form() -> Outcome {
    let mut worst_rel = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut worst_fd = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let d = rng.random_range(2..=8);
        let a = rng.random_range(2..=(64 / d).min(8));
        let ns = rng.random_range(2..=6);
        let n = rng.random_range(10..=30);
        let x = gaussian(&mut rng, n, d);
        let s = DMatrix::from_fn(a, ns, |_, _| rng.random_range(0.0..1.0));
        let y = DMatrix::from_fn(n, ns, |i, c| if i % ns == c { 1.0 } else { -1.0 });
        let (g, l) = if seed % 2 == 0 { (10.0, 100.0) } else { (0.01, 1.0) };
        let fit = fit_eszsl(&x, &y, &s, g, l).unwrap();
        let oracle = kron_oracle(&x, &y, &s, g, l);
        worst_rel = worst_rel.max((&fit.v - &oracle).norm() / oracle.norm().max(1e-300));

        let g0 = eszsl_gradient(&DMatrix::zeros(d, a), &x, &y, &s, g, l).unwrap().norm();
        let gf = eszsl_gradient(&fit.v, &x, &y, &s, g, l).unwrap().norm();
        worst_grad = worst_grad.max(gf / (1.0 + g0));

        // Central differences at a random point, step 1e-5.
        let v = gaussian(&mut rng, d, a);
        let analytic = eszsl_gradient(&v, &x, &y, &s, g, l).unwrap();
        let h = 1e-5;
        let mut numeric = DMatrix::zeros(d, a);
        for i in 0..d {
            for j in 0..a {
                let mut vp = v.clone();
                vp[(i, j)] += h;
                let mut vm = v.clone();
                vm[(i, j)] -= h;
                numeric[(i, j)] = (objective(&vp, &x, &y, &s, g, l) - objective(&vm, &x, &y, &s, g, l)) / (2.0 * h);
            }
        }
        worst_fd = worst_fd.max((&analytic - &numeric).norm() / analytic.norm().max(1e-300));
    }
    outcome(
        worst_rel <= 1e-8 && worst_grad <= 1e-6 && worst_fd <= 1e-4,
        format!(
            "50 instances: max rel. diff to normal-equation oracle {worst_rel:.2e} (tol 1e-8); \
             max |grad(V)|/(1+|grad(0)|) {worst_grad:.2e} (tol 1e-6); max finite-difference rel. error {worst_fd:.2e} (tol 1e-4)"
        ),
    )
}

/// Returns (failures, checks, LLE full-length rejected as documented).
fn fixed_point() -> (Outcome, Outcome) {
    let n_s = 10;
    let mut failures = 0;
    let mut checks = 0;
    let mut lle_full_rejected = 0;
    let mut datasets = 0;
    for data_seed in [1u64, 2, 3] {
        let split = generate_synthetic(&SyntheticParams::new(n_s, 1, 20, 24, 12, 0.3, data_seed)).unwrap();
        let fit = penalized_kmeans(&split.seen.features, &split.seen.labels, &KMeansParams::default()).unwrap();
        let sigma = HashParams::default().resolve_sigma(&split.seen.features, &fit.centers);
        datasets += 1;
        for kind in [EmbedderKind::KernelPca, EmbedderKind::Isomap, EmbedderKind::Lle] {
            let spec = EmbedderSpec { kind, ..EmbedderSpec::default() };
            for b in [4, 8, n_s] {
                let emb = match embed_anchors(&fit.centers, &spec, b) {
                    Ok(e) => e,
                    Err(e) if kind == EmbedderKind::Lle && b == n_s && e.exit_code() == 1 => {
                        lle_full_rejected += 1;
                        continue;
                    }
                    Err(e) => panic!("{kind} b={b}: {e}"),
                };
                let hasher = SeenHasher::new(&fit.centers, &emb, sigma, 1, 5.0).unwrap();
                let anchor_codes = anchor_hash_codes(&emb);
                for q in 0..n_s {
                    let mu: Vec<f64> = fit.centers.row(q).iter().copied().collect();
                    let m_q: Vec<f64> = emb.m.row(q).iter().copied().collect();
                    checks += 1;
                    let code = hasher.hash(&mu).unwrap();
                    if code != binarize(&m_q) || &code != anchor_codes.get(q) {
                        failures += 1;
                    }
                }
            }
        }
    }
    (
        outcome(
            failures == 0,
            format!("{failures} failures over {checks} anchor checks (Kernel-PCA, Isomap: b in {{4, 8, {n_s}}}; LLE: b in {{4, 8}}), {datasets} anchor sets"),
        ),
        outcome(
            lle_full_rejected == datasets,
            format!(
                "LLE with b = n_s = {n_s} is rejected as a usage error on {lle_full_rejected}/{datasets} anchor sets \
                 (only n_s - 1 non-constant bottom eigenvectors exist)"
            ),
        ),
    )
}

fn naive_hamming(a: &[i8], b: &[i8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Brute-force radius metrics from ±1 vectors.
fn oracle_lookup(q: &[Vec<i8>], ql: &[usize], d: &[Vec<i8>], dl: &[usize], radius: usize) -> (f64, f64) {
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut r_n = 0;
    for (qi, qc) in q.iter().enumerate() {
        let hits: Vec<usize> = (0..d.len()).filter(|&i| naive_hamming(qc, &d[i]) <= radius).collect();
        let relevant = hits.iter().filter(|&&i| dl[i] == ql[qi]).count();
        p_sum += if hits.is_empty() { 0.0 } else { relevant as f64 / hits.len() as f64 };
        let class_size = dl.iter().filter(|&&l| l == ql[qi]).count();
        if class_size > 0 {
            r_sum += relevant as f64 / class_size as f64;
            r_n += 1;
        }
    }
    (p_sum / q.len() as f64, if r_n > 0 { r_sum / r_n as f64 } else { 0.0 })
}

fn oracle_map(q: &[Vec<i8>], ql: &[usize], d: &[Vec<i8>], dl: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (qi, qc) in q.iter().enumerate() {
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by_key(|&i| (naive_hamming(qc, &d[i]), i));
        let mut hits = 0;
        let mut ap = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            if dl[i] == ql[qi] {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        if hits > 0 {
            sum += ap / hits as f64;
            n += 1;
        }
    }
    if n > 0 { sum / n as f64 } else { 0.0 }
}

fn metrics_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut compared = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let signs: Vec<Vec<i8>> = (0..200)
            .map(|_| (0..8).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
            .collect();
        let n_classes = rng.random_range(2..=6);
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..n_classes)).collect();
        let codes = HashCodeSet::from_codes(signs.iter().map(|s| HashCode::from_signs(s)).collect()).unwrap();
        let lv = LabelVector::new(labels.clone(), n_classes).unwrap();
        let (qi, di) = split_indices(200, 0.25, seed).unwrap();
        let pick = |idx: &[usize]| -> (Vec<Vec<i8>>, Vec<usize>) {
            (idx.iter().map(|&i| signs[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
        };
        let (qs, ql) = pick(&qi);
        let (ds, dl) = pick(&di);
        for radius in [0, 1, 2, 3, 8] {
            let m = lookup_metrics(&codes.select(&qi), &lv.select(&qi), &codes.select(&di), &lv.select(&di), radius).unwrap();
            let (p, r) = oracle_lookup(&qs, &ql, &ds, &dl, radius);
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            compared += 3;
            mismatches += [m.precision != p, m.recall != r, m.f1 != f1].iter().filter(|&&b| b).count();
        }
        let map = mean_average_precision(&codes.select(&qi), &lv.select(&qi), &codes.select(&di), &lv.select(&di)).unwrap();
        compared += 1;
        if map != oracle_map(&qs, &ql, &ds, &dl) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} inexact values out of {compared} (precision/recall/F1 at radii 0,1,2,3,8 and MAP; 200 codes x 20 seeds)"),
    )
}

fn hamming_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    let mut lengths = std::collections::BTreeSet::new();
    for _ in 0..10_000 {
        let b = rng.random_range(1..=128);
        lengths.insert(b);
        let a: Vec<i8> = (0..b).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let c: Vec<i8> = (0..b).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let packed = hamming_distance(&HashCode::from_signs(&a), &HashCode::from_signs(&c)).unwrap();
        if packed != naive_hamming(&a, &c) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches over 10000 pairs, {} distinct code lengths in 1..=128", lengths.len()),
    )
}

fn shipped_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.cfg")
}

/// Re-derives unseen codes directly from V, the signatures and the synthesized
/// anchors: scores, shift if any kept score is non-positive, boost by rank,
/// weighted sum, sign.
fn oracle_unseen_code(x: &[f64], v: &DMatrix<f64>, s_unseen: &DMatrix<f64>, anchors: &DMatrix<f64>, s: usize, omega: f64) -> HashCode {
    let xv = DMatrix::from_row_slice(1, x.len(), x) * v;
    let scores: Vec<f64> = (0..s_unseen.ncols()).map(|c| (&xv * s_unseen.column(c))[(0, 0)]).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(s.min(scores.len()));
    let lo = order.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
    let hi = order.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut w = vec![0.0; scores.len()];
    for (rank, &i) in order.iter().enumerate() {
        w[i] = if lo == hi {
            1.0
        } else {
            let base = if lo <= 0.0 { scores[i] - lo + 1e-6 } else { scores[i] };
            base * omega.powi(-(rank as i32 + 1))
        };
    }
    let total: f64 = w.iter().sum();
    let m: Vec<f64> = (0..anchors.ncols())
        .map(|j| (0..anchors.nrows()).map(|i| w[i] / total * anchors[(i, j)]).sum())
        .collect();
    binarize(&m)
}

fn synthetic_end_to_end() -> (Outcome, Outcome) {
    let cfg = ExperimentConfig::load(&shipped_config()).unwrap();
    let p = match &cfg.data {
        pipeline::DataSource::Synthetic(p) => p.clone(),
        other => panic!("shipped config must be synthetic, got {other:?}"),
    };
    assert_eq!(p, SyntheticParams::new(8, 2, 50, 32, 16, 0.1, 1));
    assert_eq!(cfg.code_length, 8);
    let split = generate_synthetic(&p).unwrap();
    let outcomes = pipeline::run_trials(&split, &cfg).unwrap();
    let min_acc = outcomes.iter().map(|o| o.test_accuracy.accuracy).fold(f64::INFINITY, f64::min);
    let bad_precision = outcomes.iter().filter(|o| o.retrieval.precision <= o.class_prior).count();
    let t0 = &outcomes[0];

    // Cross-check the pipeline's unseen codes against a direct re-derivation.
    let model = pipeline::train(&split.seen, &cfg).unwrap();
    let ext = model.extend(&split.unseen.signatures, &[0, 1]).unwrap();
    let codes = model.hash_unseen(&split.unseen.features, &ext, &split.unseen.signatures).unwrap();
    let oracle_mismatch = (0..split.unseen.n_instances())
        .filter(|&i| {
            let x = split.unseen.features.row(i);
            &oracle_unseen_code(&x, &model.zsl.v, split.unseen.signatures.matrix(), &ext.unseen_embeddings, cfg.hash.s, cfg.hash.omega)
                != codes.get(i)
        })
        .count();

    let main = outcome(
        min_acc >= 0.8 && bad_precision == 0 && oracle_mismatch == 0,
        format!(
            "shipped config, {} trials: min unseen accuracy {min_acc:.3} (need >= 0.8); trial 0 precision@2 {:.3} vs class prior {:.3}; \
             {bad_precision} trials at or below prior; {oracle_mismatch} unseen codes differ from direct re-derivation",
            outcomes.len(),
            t0.retrieval.precision,
            t0.class_prior
        ),
    );

    // Informational: the same run with unseen anchors averaged over every
    // seen anchor.
    let mut all = cfg.clone();
    all.synthesis_top_s = None;
    all.n_trials = 1;
    let o = pipeline::run_trials(&split, &all).unwrap().remove(0);
    let info = Outcome {
        pass: true,
        info: true,
        detail: format!(
            "all-seen-anchor synthesis: unseen accuracy {:.3}, precision@2 {:.3} vs class prior {:.3}",
            o.test_accuracy.accuracy, o.retrieval.precision, o.class_prior
        ),
    };
    (main, info)
}

fn determinism() -> Outcome {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_zshash"))
            .args(["--quiet", "run", "--config"])
            .arg(shipped_config())
            .output()
            .expect("spawn zshash")
    };
    let (a, b) = (run(), run());
    let ok = a.status.success() && b.status.success() && a.stdout == b.stdout && !a.stdout.is_empty();
    outcome(
        ok,
        format!(
            "two `run` invocations: exit {:?}/{:?}, {} and {} stdout bytes, identical = {}",
            a.status.code(),
            b.status.code(),
            a.stdout.len(),
            b.stdout.len(),
            a.stdout == b.stdout
        ),
    )
}

const DEFAULTS_SNAPSHOT: &str = "\
bits = 8
embedder = kernel_pca
bandwidth = median
n_neighbors = 5
lle_reg = 0.001
sigma = auto
s = 5
omega = 5
beta = 0.9
max_iter = 300
tol = 0.0000001
kmeans_seed = 0
gamma = 10
lambda = 100
synthesis_top_s = all
radius = 2
query_fraction = 0.25
split_seed = 0
retrieval = unseen
empty_retrieval = zero
n_trials = 30
resplit = queries
unseen_classes = given
data = synthetic
synth_n_seen = 8
synth_n_unseen = 2
synth_per_class = 50
synth_dim = 32
synth_attr_dim = 16
synth_spread = 0.1
synth_seed = 1
";

fn defaults_audit() -> Outcome {
    let c = ExperimentConfig::default();
    let mut problems = Vec::new();
    if c.to_config_string() != DEFAULTS_SNAPSHOT {
        problems.push("config snapshot differs".to_string());
    }
    let checks = [
        ("beta", c.kmeans.beta, 0.9),
        ("omega", c.hash.omega, 5.0),
        ("s", c.hash.s as f64, 5.0),
        ("radius", c.eval.radius as f64, 2.0),
        ("default gamma", c.zsl.gamma, 10.0),
        ("default lambda", c.zsl.lambda, 100.0),
        ("awa gamma", ZslHyperparams::AWA.gamma, 10.0),
        ("awa lambda", ZslHyperparams::AWA.lambda, 100.0),
        ("sun gamma", ZslHyperparams::SUN.gamma, 0.01),
        ("sun lambda", ZslHyperparams::SUN.lambda, 1.0),
    ];
    for (name, got, want) in checks {
        if got != want {
            problems.push(format!("{name} = {got}, expected {want}"));
        }
    }
    if ZslHyperparams::preset("awa") != Some(ZslHyperparams::AWA) || ZslHyperparams::preset("sun") != Some(ZslHyperparams::SUN) {
        problems.push("preset lookup".into());
    }
    if c.hash.sigma != Sigma::Auto {
        problems.push("sigma default".into());
    }
    let help = Command::new(env!("CARGO_BIN_EXE_zshash")).args(["run", "--help"]).output().unwrap();
    let text = String::from_utf8_lossy(&help.stdout);
    for needle in ["--beta", "[default: 0.9]", "--omega", "[default: 5]", "--s ", "--radius", "[default: 2]"] {
        if !text.contains(needle) {
            problems.push(format!("`run --help` lacks {needle:?}"));
        }
    }
    if help.status.code() != Some(0) {
        problems.push("`--help` exit code".into());
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "beta 0.9, omega 5, s 5, radius 2, presets awa (10, 100) / sun (0.01, 1); snapshot and --help agree".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Vec<Outcome>| {
        let start = Instant::now();
        let results = f();
        let elapsed = start.elapsed();
        let over = limit.is_some_and(|l| elapsed > l);
        for (i, r) in results.iter().enumerate() {
            let label = if i == 0 { name.to_string() } else { format!("{name} (note)") };
            let pass = r.pass && !(i == 0 && over);
            if !pass {
                failed += 1;
            }
            let timing = match (i, limit) {
                (0, Some(l)) => format!(" [{:.2} s, limit {} s]", elapsed.as_secs_f64(), l.as_secs()),
                (0, None) => format!(" [{:.2} s]", elapsed.as_secs_f64()),
                _ => String::new(),
            };
            let status = match (r.info, pass) {
                (true, _) => "INFO",
                (false, true) => "PASS",
                (false, false) => "FAIL",
            };
            println!("{status} {label}: {}{timing}", r.detail);
        }
    };
    let secs = |s| Some(Duration::from_secs(s));
    report("em-monotonicity", secs(10), &mut || vec![em_monotonicity()]);
    report("beta-dominance", secs(5), &mut || vec![beta_dominance()]);
    report("closed-form", secs(30), &mut || vec![closed_form()]);
    report("fixed-point-hashing", None, &mut || {
        let (a, b) = fixed_point();
        vec![a, b]
    });
    report("metrics-oracle", None, &mut || vec![metrics_oracle()]);
    report("hamming-equivalence", None, &mut || vec![hamming_equivalence()]);
    report("synthetic-end-to-end", secs(60), &mut || {
        let (a, b) = synthetic_end_to_end();
        vec![a, b]
    });
    report("determinism", None, &mut || vec![determinism()]);
    report("defaults-audit", None, &mut || vec![defaults_audit()]);
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
