//! End-to-end acceptance checks. Runs without the test harness so the
//! PASS/FAIL line of every criterion is always printed; exits non-zero if any
//! criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mgtraj::datamodel::{ModelConfig, Point};
use mgtraj::ingest::{load_dataset, SynthSpec};
use mgtraj::metrics::{ade, fde, min_of_k};
use mgtraj::model::{MultiGenModel, PreparedSample};
use mgtraj::nn::{Adam, ParamStore, Tape, Tensor};
use mgtraj::selector::{self, posterior, Selector};
use mgtraj::training::{self, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Iteration budgets for the synthetic specialization runs.
const T_JUNCTION_ITERATIONS: usize = 2000;
const CROSSROAD_ITERATIONS: usize = 2000;
const MODEL_SEED: u64 = 0;
const DATA_SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Posterior from direct densities, no log space.
fn brute_posterior(y: &[f64], samples: &[Vec<Vec<f64>>], sigma: f64) -> Vec<f64> {
    let d = y.len() as f64;
    let norm = (2.0 * std::f64::consts::PI * sigma).powf(-d / 2.0);
    let lik: Vec<f64> = samples
        .iter()
        .map(|per_g| {
            per_g
                .iter()
                .map(|m| {
                    let sq: f64 = y.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                    norm * (-sq / (2.0 * sigma)).exp()
                })
                .sum::<f64>()
                / per_g.len() as f64
        })
        .collect();
    let total: f64 = lik.iter().sum();
    lik.iter().map(|l| l / total).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n_g = rng.random_range(1..=5);
        let t_fut = rng.random_range(1..=3);
        let l = rng.random_range(1..=4);
        let sigma = rng.random_range(0.5..2.0);
        let y: Vec<f64> = (0..2 * t_fut).map(|_| rng.random_range(-1.5..1.5)).collect();
        let samples: Vec<Vec<Vec<f64>>> =
            (0..n_g).map(|_| (0..l).map(|_| (0..2 * t_fut).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()).collect();
        let ll: Vec<f64> = samples.iter().map(|s| selector::mc_log_likelihood(&y, s, sigma)).collect();
        let fast = posterior(&ll).unwrap().posterior;
        let slow = brute_posterior(&y, &samples, sigma);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }

    // The model's own Monte-Carlo path against the same oracle.
    let cfg = ModelConfig { l_mc: 3, ..common::mini_config() };
    let model = MultiGenModel::new(cfg.clone()).unwrap();
    let (eps, scene) = common::crowded(&cfg);
    let s = &model.prepare(&eps[0], &scene).unwrap()[0];
    let future: Vec<Point> = s.futures[0].clone();
    let cond = model.condition_values(&[s]);
    let ctx = MultiGenModel::gen_context(&[s]).rows(&[0; 3]);
    let cond3 = Tensor::new(vec![3, cond.len()], cond.data().repeat(3));
    let mut ll = Vec::new();
    let mut samples = Vec::new();
    for g in 0..cfg.n_g {
        ll.push(model.mc_likelihood(s, &future, g, 40 + g as u64).unwrap());
        let z = mgtraj::gan::sample_noise(3, cfg.noise_dim, 40 + g as u64);
        let y = model.generate_values(&[g; 3], &cond3, &z, &ctx).unwrap();
        samples.push((0..3).map(|k| y.row(k).to_vec()).collect::<Vec<_>>());
    }
    let fast = posterior(&ll).unwrap().posterior;
    let slow = brute_posterior(&selector::flatten(&future), &samples, cfg.sigma);
    for (a, b) in fast.iter().zip(&slow) {
        worst = worst.max((a - b).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-9 && secs < 10.0, format!("max |log-space - direct| = {worst:.2e} over 1001 instances in {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sel = Selector::new(&mut store, "selector", &cfg, &mut rng);
    let n = 1000;
    let d = cfg.cond_dim();
    let cond = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    // Posteriors scattered around a skewed mean.
    let base = [0.55f64, 0.25, 0.15, 0.05];
    let mut post = Vec::with_capacity(n * 4);
    for _ in 0..n {
        let logits: Vec<f64> = base.iter().map(|b| b.ln() + 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        post.extend(posterior(&logits).unwrap().posterior);
    }
    let post = Tensor::new(vec![n, 4], post);
    let mut mean_post = [0.0; 4];
    for i in 0..n {
        for g in 0..4 {
            mean_post[g] += post.row(i)[g] / n as f64;
        }
    }
    let ids = store.ids().collect();
    let mut adam = Adam::new(&store, ids, 0.003, 0.9, 0.999);
    for _ in 0..400 {
        let grads = {
            let tape = Tape::new(&store);
            let logits = sel.logits(&tape, tape.constant(cond.clone()));
            selector::selector_loss_var(logits, &post).backward()
        };
        adam.step(&mut store, &grads);
    }
    // Mean prior on held-out conditions.
    let held = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    let tape = Tape::new(&store);
    let logits = sel.logits(&tape, tape.constant(held)).value();
    let mut mean_s = [0.0; 4];
    for i in 0..n {
        let p = selector::SelectorPriors::from_logits(logits.row(i), cfg.activation_threshold).priors;
        for g in 0..4 {
            mean_s[g] += p[g] / n as f64;
        }
    }
    let gap = (0..4).map(|g| (mean_s[g] - mean_post[g]).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        gap <= 0.02 && secs < 60.0,
        format!("mean posterior {mean_post:.3?}, learned prior {mean_s:.3?}, max gap {gap:.4} in {secs:.1}s"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let checks = common::gradient_suite(32, 7);
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let covered = ["gen_enc/", "stg/", "gen/", "disc/"].iter().all(|p| checks.iter().any(|c| c.name.starts_with(p)));
    let pass = covered && checks.iter().all(|c| c.max_rel_error < 1e-4) && secs < 300.0;
    outcome(pass, format!("{} blocks, worst {} at {:.2e}, {secs:.1}s", checks.len(), worst.name, worst.max_rel_error))
}

fn t_junction_spec() -> SynthSpec {
    SynthSpec { seed: DATA_SEED, ..SynthSpec::default() }
}

fn criterion_4(run: &common::SynthRun) -> Outcome {
    let n_active = run.active.len();
    let extra_ok = match n_active {
        2 => true,
        3 => run.active.iter().map(|&g| run.final_priors[g]).fold(f64::INFINITY, f64::min) < 0.10,
        _ => false,
    };
    let pass = extra_ok && run.purity >= 0.9 && run.recall >= 0.9;
    outcome(
        pass,
        format!(
            "active {:?}, priors {:.3?}, purity {:.3}, recall {:.3}, precision {:.3}",
            run.active, run.final_priors, run.purity, run.recall, run.precision
        ),
    )
}

fn criterion_5(run: &common::SynthRun) -> Outcome {
    let pass = run.active.len() >= 3 && run.recall >= 0.9 && run.purity >= 0.85;
    outcome(
        pass,
        format!(
            "active {:?}, priors {:.3?}, purity {:.3}, recall {:.3}, precision {:.3}",
            run.active, run.final_priors, run.purity, run.recall, run.precision
        ),
    )
}

fn criterion_6(multi: &common::SynthRun, single: &common::SynthRun) -> Outcome {
    let gap = multi.precision - single.precision;
    let recall_gap = (multi.recall - single.recall).abs();
    outcome(
        gap >= 0.15 && recall_gap <= 0.05,
        format!(
            "precision n_G=4 {:.3} vs n_G=1 {:.3} (gap {gap:.3}), recall {:.3} vs {:.3}",
            multi.precision, single.precision, multi.recall, single.recall
        ),
    )
}

fn random_traj(rng: &mut impl Rng, len: usize) -> Vec<Point> {
    (0..len).map(|_| Point::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0))).collect()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=12);
        let gt = random_traj(&mut rng, len);
        let k = rng.random_range(1..=6);
        let preds: Vec<Vec<Point>> = (0..k).map(|_| random_traj(&mut rng, len)).collect();
        let p = &preds[0];
        worst = worst.max((ade(p, &gt).unwrap() - common::brute_ade(p, &gt)).abs());
        worst = worst.max((fde(p, &gt).unwrap() - common::brute_fde(p, &gt)).abs());
        let (ma, mf) = min_of_k(&common::prediction_set(preds.clone()), &gt).unwrap();
        let mut ba = f64::INFINITY;
        let mut bf = f64::INFINITY;
        for q in &preds {
            ba = ba.min(common::brute_ade(q, &gt));
            bf = bf.min(common::brute_fde(q, &gt));
        }
        worst = worst.max((ma - ba).abs()).max((mf - bf).abs());
    }
    let mut monotone = true;
    for _ in 0..1000 {
        let len = rng.random_range(1..=12);
        let gt = random_traj(&mut rng, len);
        let n = rng.random_range(2..=10);
        let all: Vec<Vec<Point>> = (0..n).map(|_| random_traj(&mut rng, len)).collect();
        let cut = rng.random_range(1..n);
        let small = min_of_k(&common::prediction_set(all[..cut].to_vec()), &gt).unwrap();
        let big = min_of_k(&common::prediction_set(all), &gt).unwrap();
        monotone &= big.0 <= small.0 && big.1 <= small.1;
    }
    outcome(
        worst <= 1e-12 && monotone,
        format!("max oracle difference {worst:.2e} over 10^4 cases, monotone over 10^3 nested sets: {monotone}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mgtraj")).args(args).env("RUST_LOG", "warn").status().map(|s| s.success()).unwrap_or(false)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("synth.toml"), "layout = \"crossroad\"\nbranch_probs = [0.3, 0.4, 0.3]\nn_agents = 30\nseed = 8\n")
        .unwrap();
    std::fs::write(
        root.join("run.toml"),
        "[model]\nn_G = 3\nseed = 5\nlearning_rate = 0.001\n\n[train]\niterations = 20\nbatch_size = 8\n",
    )
    .unwrap();
    let data = root.join("data");
    let mut ok = run_cli(&["synth", "--config", s(&root.join("synth.toml")), "--out", s(&data)]);
    let mut outputs: Vec<(PathBuf, PathBuf)> = Vec::new();
    for r in ["a", "b"] {
        let out = root.join(format!("train_{r}"));
        ok &= run_cli(&["train", "--config", s(&root.join("run.toml")), "--data", s(&data), "--out", s(&out), "--seed", "5"]);
        let pred = root.join(format!("pred_{r}"));
        ok &= run_cli(&[
            "predict",
            "--checkpoint",
            s(&out.join("model.ckpt")),
            "--data",
            s(&data),
            "--out",
            s(&pred),
            "--episodes",
            "crossroad:0,crossroad:25",
            "--k",
            "20",
            "--seed",
            "3",
            "--heatmap-samples",
            "300",
        ]);
        outputs.push((out.join("train_report.csv"), pred.join("samples.csv")));
    }
    let read = |p: &Path| std::fs::read(p).unwrap_or_default();
    let train_same = ok && read(&outputs[0].0) == read(&outputs[1].0) && !read(&outputs[0].0).is_empty();
    let pred_same = ok && read(&outputs[0].1) == read(&outputs[1].1) && !read(&outputs[0].1).is_empty();
    outcome(
        train_same && pred_same,
        format!("commands ok: {ok}, train CSV identical: {train_same}, samples CSV identical: {pred_same}"),
    )
}

fn criterion_9() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/eth_fixture");
    let ds = load_dataset(&dir).unwrap();
    let cfg = ModelConfig::default();
    let mut model = MultiGenModel::new(cfg.clone()).unwrap();
    let data: Vec<PreparedSample> = ds.episodes.iter().flat_map(|e| model.prepare(e, &ds.scene).unwrap()).collect();
    let neighbors: usize = data.iter().map(|s| s.neighbor_steps.len()).sum();
    let tc = TrainConfig { iterations: 200, ..TrainConfig::from_model(&cfg) };
    match training::train(&mut model, &data, &tc) {
        Ok(report) => {
            let finite = report.records.len() == 200
                && report
                    .records
                    .iter()
                    .all(|r| [r.d_adv, r.g_adv, r.variety, r.cls_d, r.cls_g, r.selector_ce].iter().all(|v| v.is_finite()));
            let last = report.last().unwrap();
            outcome(
                finite,
                format!(
                    "{} episodes, {} targets, {} neighbor slots; 200 iterations finite: {finite}; final variety {:.3}",
                    ds.episodes.len(),
                    data.len(),
                    neighbors,
                    last.variety
                ),
            )
        }
        Err(e) => outcome(false, format!("training failed: {e}")),
    }
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        println!("{} {n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(1, "posterior oracle", criterion_1());
    record(2, "selector optimality", criterion_2());
    record(3, "gradient suite", criterion_3());

    let t0 = Instant::now();
    let multi = common::synthetic_run(&t_junction_spec(), 4, T_JUNCTION_ITERATIONS, MODEL_SEED);
    let t_multi = t0.elapsed().as_secs_f64();
    record(4, "T-junction specialization", criterion_4(&multi));
    let t0 = Instant::now();
    let cross =
        common::synthetic_run(&SynthSpec { seed: DATA_SEED, ..SynthSpec::crossroad() }, 4, CROSSROAD_ITERATIONS, MODEL_SEED);
    let t_cross = t0.elapsed().as_secs_f64();
    record(5, "crossroad coverage", criterion_5(&cross));
    let single = common::synthetic_run(&t_junction_spec(), 1, T_JUNCTION_ITERATIONS, MODEL_SEED);
    record(6, "OOD suppression vs single generator", criterion_6(&multi, &single));
    println!("(training time: T-junction {t_multi:.0}s, crossroad {t_cross:.0}s)");

    record(7, "metric exactness", criterion_7());
    record(8, "determinism", criterion_8());
    record(9, "ETH-format smoke run", criterion_9());

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("{} {}", r.0, r.1)).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
