use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mgtraj::cli::RunConfig;
use mgtraj::MultiGenModel;

fn mgtraj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgtraj")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: &str = "layout = \"t_junction\"\nn_agents = 12\nseed = 3\n";

const RUN: &str = "[model]
n_G = 2
noise_dim = 2
social_dim = 4
physical_dim = 2
attention_dim = 2
stg_hidden = 2
stg_dim = 2
decoder_hidden = 6
disc_hidden = 6
selector_hidden = 6
seed = 4

[train]
iterations = 3
batch_size = 4
";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("synth.toml"), SYNTH).unwrap();
        fs::write(dir.path().join("run.toml"), RUN).unwrap();
        let f = Self { dir };
        let out = mgtraj(&["synth", "--config", p(&f.path("synth.toml")), "--out", p(&f.path("data"))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        f
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, config: &str) -> Output {
        mgtraj(&["train", "--config", p(&self.path(config)), "--data", p(&self.path("data")), "--out", p(&self.path(out))])
    }
}

#[test]
fn synth_writes_three_identical_files() {
    let f = Fixture::new();
    let out = mgtraj(&["synth", "--config", p(&f.path("synth.toml")), "--out", p(&f.path("again"))]);
    assert!(out.status.success());
    let names: Vec<_> = fs::read_dir(f.path("data")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 3);
    for n in names {
        assert_eq!(fs::read(f.path("data").join(&n)).unwrap(), fs::read(f.path("again").join(&n)).unwrap());
    }
}

#[test]
fn synth_rejects_bad_branch_probs() {
    let f = Fixture::new();
    fs::write(f.path("bad.toml"), "layout = \"t_junction\"\nbranch_probs = [0.2, 0.3, 0.5]\n").unwrap();
    let out = mgtraj(&["synth", "--config", p(&f.path("bad.toml")), "--out", p(&f.path("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("branch_probs"));
}

#[test]
fn train_is_deterministic_and_checkpoints() {
    let f = Fixture::new();
    assert!(f.train("a", "run.toml").status.success());
    assert!(f.train("b", "run.toml").status.success());
    let csv = fs::read_to_string(f.path("a/train_report.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(f.path("b/train_report.csv")).unwrap());
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(fs::read(f.path("a/model.ckpt")).unwrap(), fs::read(f.path("b/model.ckpt")).unwrap());
}

#[test]
fn zero_iterations_saves_the_initialisation() {
    let f = Fixture::new();
    fs::write(f.path("zero.toml"), RUN.replace("iterations = 3", "iterations = 0")).unwrap();
    assert!(f.train("z", "zero.toml").status.success());
    let run = RunConfig::parse(RUN).unwrap();
    let init = MultiGenModel::new(run.model).unwrap();
    let loaded = MultiGenModel::load(f.path("z/model.ckpt")).unwrap();
    for id in init.store.ids() {
        assert_eq!(init.store.get(id), loaded.store.get(id));
    }
}

#[test]
fn train_input_and_numeric_errors() {
    let f = Fixture::new();
    let out = mgtraj(&["train", "--config", p(&f.path("run.toml")), "--data", p(&f.path("missing")), "--out", p(&f.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(f.path("nan.toml"), RUN.replace("seed = 4", "seed = 4\nsigma = 1e-320")).unwrap();
    let out = f.train("n", "nan.toml");
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration 0"));
}

#[test]
fn eval_writes_metrics_and_checks_artifacts() {
    let f = Fixture::new();
    assert!(f.train("m", "run.toml").status.success());
    let ckpt = f.path("m/model.ckpt");
    let out = mgtraj(&["eval", "--checkpoint", p(&ckpt), "--data", p(&f.path("data")), "--out", p(&f.path("ev"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(f.path("ev/metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "episode_id,min_ade,min_fde,precision,recall,f1,purity,active_generators");
    assert_eq!(csv.lines().count(), 1 + 12 + 1);

    fs::write(f.path("four.toml"), RUN.replace("n_G = 2", "n_G = 4")).unwrap();
    let out = mgtraj(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&f.path("data")),
        "--out",
        p(&f.path("ev2")),
        "--config",
        p(&f.path("four.toml")),
    ]);
    assert_eq!(out.status.code(), Some(4));

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    fs::write(f.path("bad.ckpt"), bytes).unwrap();
    let out = mgtraj(&["eval", "--checkpoint", p(&f.path("bad.ckpt")), "--data", p(&f.path("data")), "--out", p(&f.path("ev3"))]);
    assert_eq!(out.status.code(), Some(4));

    fs::create_dir_all(f.path("empty")).unwrap();
    fs::write(f.path("empty/trajectories.txt"), "").unwrap();
    let out = mgtraj(&["eval", "--checkpoint", p(&ckpt), "--data", p(&f.path("empty")), "--out", p(&f.path("ev4"))]);
    assert!(out.status.success());
    let csv = fs::read_to_string(f.path("ev4/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("aggregate(empty)"));
}

#[test]
fn predict_dumps_samples_and_figures() {
    let f = Fixture::new();
    assert!(f.train("m", "run.toml").status.success());
    let ckpt = f.path("m/model.ckpt");
    let run = |out: &str, ep: &str| {
        mgtraj(&[
            "predict",
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&f.path("data")),
            "--out",
            p(&f.path(out)),
            "--episodes",
            ep,
            "--k",
            "20",
            "--seed",
            "11",
            "--heatmap-samples",
            "200",
        ])
    };
    let out = run("p1", "t_junction:0");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run("p2", "t_junction:0").status.success());
    let csv = fs::read_to_string(f.path("p1/samples.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(f.path("p2/samples.csv")).unwrap());
    assert_eq!(csv.lines().count(), 1 + 20 * 12);
    for fig in ["overlay_t_junction_0.png", "heatmap_t_junction_0.png", "priors_t_junction_0.png"] {
        assert!(f.path("p1").join(fig).exists(), "{fig}");
    }
    assert_eq!(run("p3", "nope:1").status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let run = RunConfig::parse(&fs::read_to_string(configs.join("train.toml")).unwrap()).unwrap();
    assert_eq!(run.model.n_g, 4);
    assert_eq!(run.train.learning_rate, 0.001);
    assert_eq!(run.train.iterations, 2000);

    let dir = tempfile::tempdir().unwrap();
    for name in ["synth_t_junction.toml", "synth_crossroad.toml"] {
        let out = dir.path().join(name);
        let o = mgtraj(&["synth", "--config", p(&configs.join(name)), "--out", p(&out)]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
