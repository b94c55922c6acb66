//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use speechmark_core::corpus::{load_manifest, TokenSequence};
use speechmark_core::eval::{load_dataset, run_cv_with_fault, FaultInjection, PipelineConfig, Stage};
use speechmark_core::frontend::FeatureMatrix;
use speechmark_core::gmm::{train_ubm_traced, GmmModel, UbmOptions};
use speechmark_core::ivector::{accumulate_stats, train_t_matrix, IvectorOptions, TotalVariabilityModel};
use speechmark_core::ngram::{train_ngram, NgramOptions, Smoothing};
use speechmark_core::synth::{generate_corpus, SynthOptions};
use speechmark_core::xvector::{XvectorConfig, XvectorNet};
use speechmark_core::Error;

fn seconds(limit: u64) -> Option<Duration> {
    Some(Duration::from_secs(limit))
}

/// Work directory shared by the end-to-end criteria.
struct Workspace {
    _root: tempfile::TempDir,
    corpus: PathBuf,
    work_a: PathBuf,
    work_b: PathBuf,
}

impl Workspace {
    fn new() -> Result<Self> {
        let root = tempfile::tempdir()?;
        let p = root.path().to_path_buf();
        Ok(Self { corpus: p.join("corpus"), work_a: p.join("work-a"), work_b: p.join("work-b"), _root: root })
    }

    fn manifest(&self) -> PathBuf {
        self.corpus.join("manifest.csv")
    }
}

fn config_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.cfg")
}

fn speechmark(ws: &Workspace, work: &Path, args: &[&str]) -> Result<String> {
    let out = Command::new(env!("CARGO_BIN_EXE_speechmark"))
        .arg("--config")
        .arg(config_file())
        .args(args)
        .arg("--paths.manifest")
        .arg(ws.manifest())
        .arg("--paths.work_dir")
        .arg(work)
        .env_remove("SPEECHMARK_LOG")
        .output()?;
    ensure!(
        out.status.success(),
        "speechmark {args:?} exited with {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(String::from_utf8(out.stdout)?)
}

fn artifact(dir: &Path, prefix: &str, ext: &str) -> Result<PathBuf> {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with(prefix) && name.ends_with(ext)
        })
        .collect();
    ensure!(hits.len() == 1, "expected one {prefix}*{ext} in {}, found {}", dir.display(), hits.len());
    Ok(hits.remove(0))
}

fn jsonl(path: &Path) -> Result<Vec<serde_json::Value>> {
    fs::read_to_string(path)?.lines().map(|l| serde_json::from_str(l).map_err(Into::into)).collect()
}

fn accuracy(v: &serde_json::Value) -> Result<f64> {
    v["accuracy"].as_f64().ok_or_else(|| anyhow!("report without accuracy"))
}

fn words(ids: &[usize]) -> TokenSequence {
    TokenSequence(ids.iter().map(|w| format!("w{w}")).collect())
}

fn ngram_opts(order: usize, smoothing: Smoothing) -> NgramOptions {
    NgramOptions { unk_threshold: 0, ..NgramOptions::new(order, smoothing) }
}

fn mass_conservation() -> Result<String> {
    let mut worst: f64 = 0.0;
    let mut models = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = rng.random_range(2..=50);
        let corpus: Vec<TokenSequence> = (0..rng.random_range(5..40))
            .map(|_| {
                let ids: Vec<usize> = (0..rng.random_range(1..15)).map(|_| rng.random_range(0..vocab)).collect();
                words(&ids)
            })
            .collect();
        for order in 2..=4 {
            for s in [Smoothing::GoodTuring, Smoothing::KneserNey] {
                let err = train_ngram(&corpus, &ngram_opts(order, s))?.max_normalization_error();
                ensure!(err < 1e-8, "corpus {seed}, {s} order {order}: off by {err:e}");
                worst = worst.max(err);
                models += 1;
            }
        }
    }
    Ok(format!("{models} models, max |sum - 1| = {worst:.1e}"))
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    (0..items.len())
        .flat_map(|i| {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            permutations(&rest).into_iter().map(move |mut p| {
                p.insert(0, head);
                p
            })
        })
        .collect()
}

fn perplexity_oracle() -> Result<String> {
    let line: Vec<usize> = (0..29).collect();
    let uniform = train_ngram(&vec![words(&line); 4], &ngram_opts(1, Smoothing::Mle))?;
    let ppl = uniform.perplexity(&words(&[3, 17, 17, 0, 28]))?;
    // 29 words plus the end marker
    ensure!((ppl - 30.0).abs() < 1e-12, "uniform unigram perplexity {ppl}, expected 30");

    let sentence = [4, 1, 3, 2];
    let perms = permutations(&sentence);
    ensure!(perms.len() == 24);
    for s in [Smoothing::Mle, Smoothing::GoodTuring, Smoothing::KneserNey] {
        let m = train_ngram(&[words(&sentence)], &ngram_opts(2, s))?;
        let own = m.perplexity(&words(&sentence))?;
        for p in perms.iter().filter(|p| p.as_slice() != sentence) {
            let other = m.perplexity(&words(p))?;
            ensure!(own < other, "{s}: permutation {p:?} scores {other} <= trained {own}");
        }
    }
    Ok(format!("uniform PPL {ppl}, trained order beats 23 permutations under 3 estimators"))
}

fn gaussian_frames(seed: u64, n: usize, dim: usize, clusters: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> =
        (0..clusters).map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
    let spread = rng.random_range(0.3..1.5);
    let data: Vec<f64> = (0..n)
        .flat_map(|_| {
            let c = &centers[rng.random_range(0..clusters)];
            c.iter().map(|m| m + spread * normal.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix::from_flat(data, n, dim).unwrap()
}

fn em_monotonicity() -> Result<String> {
    let mut steps = 0;
    for seed in 0..10u64 {
        let feats = gaussian_frames(100 + seed, 2000, 4, 5);
        for k in [1, 2, 8] {
            let opts = UbmOptions { components: k, iters: 10, seed, ..Default::default() };
            let (_, trace) = train_ubm_traced(std::slice::from_ref(&feats), &opts)?;
            for (i, w) in trace.windows(2).enumerate() {
                ensure!(w[1] >= w[0] - 1e-6 * w[0].abs(), "dataset {seed}, k={k}, iteration {i}: {} -> {}", w[0], w[1]);
                steps += 1;
            }
        }
    }
    Ok(format!("{steps} EM steps over 10 datasets x k in {{1, 2, 8}}"))
}

fn random_ubm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let means = (0..k * d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let vars = (0..k * d).map(|_| rng.random_range(0.05..4.0)).collect();
    GmmModel::new(w.iter().map(|v| v / total).collect(), means, vars).unwrap()
}

fn baum_welch_identity() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for i in 0..200u64 {
        let (k, d) = (rng.random_range(1..=32), rng.random_range(1..=20));
        let ubm = random_ubm(&mut rng, k, d);
        let frames = rng.random_range(1..400);
        let mut feats = gaussian_frames(i, frames, d, 3);
        if i % 10 == 0 {
            // far outliers exercise the log-sum-exp path
            let data: Vec<f64> = feats.as_slice().iter().map(|v| v * 1e3).collect();
            feats = FeatureMatrix::from_flat(data, frames, d)?;
        }
        let s = accumulate_stats(&ubm, &feats)?;
        let err = (s.zero_order.iter().sum::<f64>() - frames as f64).abs();
        ensure!(err <= 1e-6, "extraction {i}: sum N = frames off by {err:e}");
        worst = worst.max(err);
        n += 1;
    }
    Ok(format!("{n} extractions, max |sum N - frames| = {worst:.1e}"))
}

fn ivector_oracles() -> Result<String> {
    let (mean, var, t) = (-0.3, 1.7, 0.9);
    let ubm = GmmModel::new(vec![1.0], vec![mean], vec![var])?;
    let model = TotalVariabilityModel::new(DMatrix::from_element(1, 1, t), &ubm)?;
    let xs = [0.4, 1.8, -1.1, 2.2, 0.9, 0.0, 1.3];
    let w = model.extract(&accumulate_stats(&ubm, &FeatureMatrix::from_flat(xs.to_vec(), xs.len(), 1)?)?)?;
    let log_post = |w: f64| -0.5 * w * w - xs.iter().map(|x| (x - mean - t * w).powi(2) / (2.0 * var)).sum::<f64>();
    let (mut z, mut m1) = (0.0, 0.0);
    for i in 0..=200_000 {
        let g = -10.0 + i as f64 * 1e-4;
        let p = log_post(g).exp();
        z += p;
        m1 += g * p;
    }
    let scalar_err = (w.values()[0] - m1 / z).abs();
    ensure!(scalar_err < 1e-4, "scalar i-vector {} vs grid mean {}", w.values()[0], m1 / z);

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let ubm = random_ubm(&mut rng, 4, 3);
    let zero = TotalVariabilityModel::new(DMatrix::zeros(12, 3), &ubm)?;
    let w0 = zero.extract(&accumulate_stats(&ubm, &gaussian_frames(51, 300, 3, 4))?)?;
    ensure!(w0.values().iter().all(|&v| v == 0.0), "T = 0 gave {:?}", w0.values());

    let (k, d) = (8, 3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let means: Vec<f64> = (0..k * d).map(|i| if i % d == 0 { 5.0 * (i / d) as f64 } else { 0.0 }).collect();
    let ubm = GmmModel::new(vec![1.0 / k as f64; k], means.clone(), vec![1.0; k * d])?;
    let t0: Vec<f64> = (0..k * d).map(|_| normal.sample(&mut rng)).collect();
    let stats = (0..400)
        .map(|_| {
            let w = normal.sample(&mut rng);
            let data: Vec<f64> = (0..200)
                .flat_map(|_| {
                    let c = rng.random_range(0..k);
                    (0..d).map(|i| means[c * d + i] + t0[c * d + i] * w + normal.sample(&mut rng)).collect::<Vec<_>>()
                })
                .collect();
            accumulate_stats(&ubm, &FeatureMatrix::from_flat(data, 200, d)?)
        })
        .collect::<speechmark_core::Result<Vec<_>>>()?;
    let trained = train_t_matrix(&stats, &ubm, &IvectorOptions { rank: 1, iters: 20, seed: 3 })?;
    let t = trained.t_matrix().column(0).clone_owned();
    let dot: f64 = t.iter().zip(&t0).map(|(a, b)| a * b).sum();
    let cos = dot / (t.norm() * t0.iter().map(|v| v * v).sum::<f64>().sqrt());
    ensure!(cos.abs() > 0.95, "known-T recovery |cosine| {:.4}", cos.abs());
    Ok(format!("scalar error {scalar_err:.1e}, T=0 exact, recovery |cosine| {:.4}", cos.abs()))
}

fn xvector_checks() -> Result<String> {
    // desk-scale widths: 16-wide frame layers, 64 pre-pooling, 8-wide segments
    let cfg = XvectorConfig::with_widths(20, 16, 64, 8, 2);
    let mut net = XvectorNet::new(cfg.clone(), 61)?;
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let feats = |t: usize, rng: &mut ChaCha8Rng| {
        FeatureMatrix::from_flat((0..t * 20).map(|_| normal.sample(rng)).collect(), t, 20).unwrap()
    };

    // balanced two-class data at initialization
    let batch: Vec<_> = (0..20).map(|i| (feats(rng.random_range(27..60), &mut rng), i % 2)).collect();
    let mean_loss = batch.iter().map(|(x, y)| net.loss(x, *y)).sum::<speechmark_core::Result<f64>>()? / 20.0;
    ensure!((mean_loss - 2f64.ln()).abs() < 1e-6, "initial loss {mean_loss}");

    // the output layer starts at zero, which would leave every other gradient zero
    let n = net.params().num_params();
    let out = net.params().0.last().map(|a| a.w.len() + a.b.len()).unwrap_or(0);
    for i in n - out..n {
        *net.params_mut().get_mut(i) = 0.5 * normal.sample(&mut rng);
    }
    let x = feats(40, &mut rng);
    let (_, grad, _) = net.loss_and_gradient(&x, 1)?;
    let eps = 1e-5;
    let (mut worst, mut tiny) = (0.0f64, 0);
    for i in 0..n {
        let orig = net.params().get(i);
        let mut loss_at = |h: f64| {
            *net.params_mut().get_mut(i) = orig + h;
            let l = net.loss(&x, 1);
            *net.params_mut().get_mut(i) = orig;
            l
        };
        // fourth-order central stencil; units whose pooled std sits near the
        // floor are too curved for the two-point formula at this step
        let numeric = (8.0 * (loss_at(eps)? - loss_at(-eps)?) - (loss_at(2.0 * eps)? - loss_at(-2.0 * eps)?)) / (12.0 * eps);
        let analytic = grad.get(i);
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-7 {
            // below the finite-difference noise floor only absolute agreement is meaningful
            ensure!((analytic - numeric).abs() < 1e-9, "parameter {i}: {analytic} vs {numeric}");
            tiny += 1;
            continue;
        }
        let rel = (analytic - numeric).abs() / scale;
        ensure!(rel < 1e-4, "parameter {i}: analytic {analytic} numeric {numeric} rel {rel:.2e}");
        worst = worst.max(rel);
    }

    let free = XvectorNet::new(cfg.context_free(), 63)?;
    for _ in 0..20 {
        let t = rng.random_range(1..80);
        let x = feats(t, &mut rng);
        let mut order: Vec<usize> = (0..t).collect();
        order.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
        let xp = FeatureMatrix::from_rows(rows, 0.01, 0.025)?;
        ensure!(free.embed(&x)?.values() == free.embed(&xp)?.values(), "context-free embedding changed under permutation");
    }
    Ok(format!(
        "{n} parameters, max rel error {worst:.1e} ({tiny} below 1e-7), loss at init {mean_loss:.9}, pooling exact"
    ))
}

struct EndToEnd {
    evaluate_accuracy: f64,
    table5: Vec<(String, f64)>,
}

fn end_to_end(ws: &Workspace) -> Result<String> {
    speechmark(ws, &ws.work_a, &["synth-data", "--out", ws.corpus.to_str().context("utf-8 path")?])?;
    let r = run_end_to_end(ws)?;
    ensure!(r.evaluate_accuracy >= 90.0, "evaluate accuracy {:.1}% < 90%", r.evaluate_accuracy);
    ensure!(r.table5.len() == 7, "table5 has {} rows", r.table5.len());
    let singles = r.table5.iter().filter(|(cell, _)| cell.matches("yes").count() == 1);
    let best_single = singles.map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);
    let fused = r.table5.iter().find(|(cell, _)| cell.matches("yes").count() == 3).map(|(_, a)| *a);
    let fused = fused.ok_or_else(|| anyhow!("no fused row"))?;
    ensure!(fused >= best_single - 2.0, "fused {fused:.1}% < best single {best_single:.1}% - 2");
    let rows: Vec<String> = r.table5.iter().map(|(c, a)| format!("{}={a:.1}", c.trim_start_matches("table5/"))).collect();
    Ok(format!("evaluate {:.1}%, fused {fused:.1}% vs best single {best_single:.1}% [{}]", r.evaluate_accuracy, rows.join(" ")))
}

fn run_end_to_end(ws: &Workspace) -> Result<EndToEnd> {
    let stdout = speechmark(ws, &ws.work_a, &["evaluate"])?;
    let report = jsonl(&artifact(&ws.work_a, "report-", ".jsonl")?)?;
    ensure!(report.len() == 1, "report has {} lines", report.len());
    ensure!(stdout.contains("accuracy"), "evaluate printed no accuracy");
    speechmark(ws, &ws.work_a, &["ablate", "--grid", "table5"])?;
    let table5 = jsonl(&artifact(&ws.work_a, "ablation-table5-", ".jsonl")?)?
        .iter()
        .map(|v| Ok((v["cell"].as_str().unwrap_or_default().to_string(), accuracy(v)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EndToEnd { evaluate_accuracy: accuracy(&report[0])?, table5 })
}

fn leakage_guard(ws: &Workspace) -> Result<String> {
    let dir = ws.corpus.with_file_name("leak");
    let opts = SynthOptions { n_cases: 30, seed: 5, ..Default::default() };
    let manifest = generate_corpus(&dir, &opts)?;
    let mut cfg = PipelineConfig { k_folds: 5, ..Default::default() };
    cfg.ubm.components = 4;
    cfg.ubm.iters = 2;
    cfg.ivector.rank = 2;
    cfg.ivector.iters = 1;
    cfg.xvector.hidden = 8;
    cfg.xvector.pre_pool = 16;
    cfg.xvector.segment = 8;
    cfg.xvector.train.epochs = 1;
    let cases = load_dataset(&load_manifest(&manifest, cfg.k_folds, 1)?, &cfg)?;
    run_cv_with_fault(&cases, &cfg, None).context("clean run failed")?;
    for stage in Stage::ALL {
        match run_cv_with_fault(&cases, &cfg, Some(FaultInjection { fold: 2, stage })) {
            Err(Error::Leakage { fold: 2, stage: s, .. }) if s == stage.to_string() => {}
            Err(e) => bail!("{stage}: wrong error {e}"),
            Ok(_) => bail!("{stage}: injected test id was not detected"),
        }
    }
    Ok(format!("clean run passes; injection aborts in all {} stages", Stage::ALL.len()))
}

fn determinism(ws: &Workspace) -> Result<String> {
    ensure!(ws.manifest().is_file(), "synthetic corpus missing");
    // the first work dir already holds a full run; this one starts empty
    speechmark(ws, &ws.work_b, &["evaluate"])?;
    let mut compared = Vec::new();
    for ext in [".jsonl", ".txt"] {
        let (a, b) = (artifact(&ws.work_a, "report-", ext)?, artifact(&ws.work_b, "report-", ext)?);
        ensure!(a.file_name() == b.file_name(), "fingerprints differ: {a:?} vs {b:?}");
        ensure!(fs::read(&a)? == fs::read(&b)?, "{} differs between runs", a.display());
        compared.push(b.file_name().unwrap().to_string_lossy().into_owned());
    }
    Ok(format!("identical {}", compared.join(", ")))
}

fn table_layout(ws: &Workspace) -> Result<String> {
    ensure!(ws.manifest().is_file(), "synthetic corpus missing");
    speechmark(ws, &ws.work_a, &["ablate", "--grid", "all"])?;
    let mut counts = Vec::new();
    for (grid, rows) in [("table3", 6), ("table4", 16), ("table5", 7)] {
        let lines = jsonl(&artifact(&ws.work_a, &format!("ablation-{grid}-"), ".jsonl")?)?.len();
        let text = fs::read_to_string(artifact(&ws.work_a, &format!("ablation-{grid}-"), ".txt")?)?;
        let body = text.lines().skip_while(|l| !l.starts_with("---")).skip(1).filter(|l| !l.trim().is_empty()).count();
        ensure!(lines == rows && body == rows, "{grid}: {lines} report lines, {body} table rows, expected {rows}");
        counts.push(format!("{grid} {rows}"));
    }
    Ok(counts.join(", "))
}

fn main() -> ExitCode {
    let ws = match Workspace::new() {
        Ok(ws) => ws,
        Err(e) => {
            eprintln!("cannot create workspace: {e}");
            return ExitCode::FAILURE;
        }
    };
    type Check<'a> = Box<dyn Fn() -> Result<String> + 'a>;
    let criteria: Vec<(&str, Option<Duration>, Check)> = vec![
        ("1 smoothing mass conservation", seconds(10), Box::new(mass_conservation)),
        ("2 perplexity oracle", seconds(5), Box::new(perplexity_oracle)),
        ("3 EM monotonicity", seconds(60), Box::new(em_monotonicity)),
        ("4 Baum-Welch identity", None, Box::new(baum_welch_identity)),
        ("5 i-vector oracles", seconds(60), Box::new(ivector_oracles)),
        ("6 x-vector gradient check", seconds(120), Box::new(xvector_checks)),
        ("7 synthetic end-to-end", seconds(15 * 60), Box::new(|| end_to_end(&ws))),
        ("8 leakage guard", None, Box::new(|| leakage_guard(&ws))),
        ("9 determinism", None, Box::new(|| determinism(&ws))),
        ("10 table layout", None, Box::new(|| table_layout(&ws))),
    ];
    let mut failed = 0;
    for (name, limit, check) in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(anyhow!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(limit)) if took > *limit => Err(anyhow!("took {took:.1?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name} ({took:.1?}): {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name} ({took:.1?}): {e:#}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
