#![allow(dead_code)]

use mgtraj::datamodel::{AgentTrack, ModelConfig, Point, PredictedSample, PredictionSet, SceneGrid, TrajectoryEpisode};
use mgtraj::gan::sample_noise;
use mgtraj::ingest::{synthesize, SynthSpec};
use mgtraj::metrics::{self, MetricReport};
use mgtraj::model::{MultiGenModel, PreparedSample};
use mgtraj::nn::gradcheck::{check_blocks, BlockCheck};
use mgtraj::nn::{ParamStore, Tape, Tensor};
use mgtraj::selector;
use mgtraj::training::{self, DiscriminatorPlan, GeneratorPlan, TrainConfig};

/// Every dimension at most 8.
pub fn mini_config() -> ModelConfig {
    ModelConfig {
        n_g: 3,
        noise_dim: 3,
        grid_len: 5,
        grid_wid: 5,
        social_dim: 6,
        physical_dim: 3,
        attention_dim: 4,
        stg_hidden: 3,
        stg_dim: 4,
        decoder_hidden: 8,
        disc_hidden: 8,
        selector_hidden: 8,
        t_obs: 4,
        t_fut: 3,
        ..ModelConfig::default()
    }
}

fn walker(id: &str, x0: f64, y0: f64, vx: f64, vy: f64, t_obs: usize, t_fut: usize, target: bool) -> AgentTrack {
    let at = |t: usize| Point::new(x0 + vx * t as f64 + 0.03 * (t * t) as f64, y0 + vy * t as f64);
    AgentTrack {
        agent_id: id.into(),
        observed: (0..t_obs).map(at).collect(),
        futures: if target { vec![(t_obs..t_obs + t_fut).map(at).collect()] } else { vec![] },
    }
}

/// Two crowded episodes with neighbors inside the graph and a wall nearby.
pub fn crowded(cfg: &ModelConfig) -> (Vec<TrajectoryEpisode>, SceneGrid) {
    let (o, f) = (cfg.t_obs, cfg.t_fut);
    let mut scene = SceneGrid::open(40, 40, 0.5, Point::new(-10.0, -10.0));
    for c in 0..40 {
        scene.cells[23 * 40 + c] = 1;
    }
    let e1 = TrajectoryEpisode {
        id: "a".into(),
        scene_id: "s".into(),
        timestep_duration: 0.4,
        t_obs: o,
        t_fut: f,
        agents: vec![
            walker("t", 0.0, -1.0, 0.1, 0.4, o, f, true),
            walker("n1", 0.8, -0.5, -0.1, 0.35, o, f, true),
            walker("n2", -1.2, 0.2, 0.3, 0.1, o, f, false),
        ],
    };
    let e2 = TrajectoryEpisode {
        id: "b".into(),
        scene_id: "s".into(),
        timestep_duration: 0.4,
        t_obs: o,
        t_fut: f,
        agents: vec![walker("u", 2.0, 0.0, -0.3, 0.2, o, f, true), walker("m", 1.5, 1.0, 0.0, -0.2, o, f, false)],
    };
    (vec![e1, e2], scene)
}

/// Central-difference check of every parameter block against the sum of the
/// generator, discriminator and selector objectives on a miniature model.
pub fn gradient_suite(points: usize, seed: u64) -> Vec<BlockCheck> {
    let cfg = mini_config();
    let mut model = MultiGenModel::new(cfg.clone()).unwrap();
    let (eps, scene) = crowded(&cfg);
    let data: Vec<PreparedSample> = eps.iter().flat_map(|e| model.prepare(e, &scene).unwrap()).collect();
    assert!(data.iter().any(|s| !s.neighbor_steps.is_empty()));
    let batch: Vec<&PreparedSample> = data.iter().collect();
    let b = batch.len();
    let width = 2 * cfg.t_fut;
    let real = Tensor::new(vec![b, width], batch.iter().flat_map(|s| s.future_flat()).collect());
    let which: Vec<usize> = (0..b).map(|i| i % cfg.n_g).collect();
    let assigned: Vec<usize> = (0..b).map(|i| (i + 1) % cfg.n_g).collect();
    let gen_ctx = MultiGenModel::gen_context(&batch);
    let disc_ctx = model.disc_context(&batch);
    let g_plan = GeneratorPlan {
        batch: batch.clone(),
        gen_ctx,
        disc_ctx: disc_ctx.clone(),
        real: real.clone(),
        which: which.clone(),
        noise: sample_noise(b, cfg.noise_dim, seed),
        assigned,
        variety_noise: sample_noise(b, cfg.noise_dim, seed + 1),
    };
    let fake = real.map(|v| v + 0.3);
    let d_plan = DiscriminatorPlan { ctx: disc_ctx, real, fake, which };
    let post = Tensor::new(
        vec![b, cfg.n_g],
        (0..b)
            .flat_map(|i| {
                let mut p = vec![0.1; cfg.n_g];
                p[i % cfg.n_g] = 1.0 - 0.1 * (cfg.n_g - 1) as f64;
                p
            })
            .collect(),
    );
    let tc = TrainConfig::default();
    let mut store = std::mem::take(&mut model.store);
    let ids: Vec<_> = store.ids().collect();
    let m = &model;
    check_blocks(&mut store, &ids, points, 1e-5, seed, |tape| {
        let g = training::generator_loss(tape, m, &g_plan, &tc).unwrap().total;
        let d = training::discriminator_loss(tape, m, &d_plan, tc.lambda_cls).total;
        let cond = m.condition(tape, &g_plan.batch).cond;
        let s = selector::selector_loss_var(m.selector.logits(tape, cond), &post);
        g.add(d).add(s)
    })
}

pub fn store_with(blocks: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in blocks {
        s.insert(*n, t.clone());
    }
    s
}

pub fn tape_value(store: &ParamStore, f: impl for<'t> Fn(&'t Tape<'t>) -> mgtraj::nn::Var<'t>) -> f64 {
    let tape = Tape::new(store);
    let v = f(&tape).value().item();
    v
}

/// Naive displacement errors.
pub fn brute_ade(p: &[Point], g: &[Point]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let dx = p[i].x - g[i].x;
        let dy = p[i].y - g[i].y;
        s += (dx * dx + dy * dy).sqrt();
    }
    s / p.len() as f64
}

pub fn brute_fde(p: &[Point], g: &[Point]) -> f64 {
    let n = p.len() - 1;
    ((p[n].x - g[n].x).powi(2) + (p[n].y - g[n].y).powi(2)).sqrt()
}

pub fn prediction_set(trajs: Vec<Vec<Point>>) -> PredictionSet {
    PredictionSet {
        agent_id: "a".into(),
        samples: trajs.into_iter().map(|trajectory| PredictedSample { trajectory, generator_index: 0, noise_seed: 0 }).collect(),
    }
}

/// Outcome of training and evaluating on one synthetic layout.
#[derive(Debug)]
pub struct SynthRun {
    pub final_priors: Vec<f64>,
    pub active: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub purity: f64,
}

/// Trains on 160 synthetic episodes and evaluates K samples on the other 40.
pub fn synthetic_run(spec: &SynthSpec, n_g: usize, iterations: usize, seed: u64) -> SynthRun {
    let (episodes, scene) = synthesize(spec).unwrap();
    let split = episodes.len() * 4 / 5;
    let (train, test) = episodes.split_at(split);
    let cfg = ModelConfig { n_g, learning_rate: 0.001, seed, ..ModelConfig::default() };
    let mut model = MultiGenModel::new(cfg.clone()).unwrap();
    let data: Vec<PreparedSample> = train.iter().flat_map(|e| model.prepare(e, &scene).unwrap()).collect();
    let tc = TrainConfig { iterations, ..TrainConfig::from_model(&cfg) };
    training::train(&mut model, &data, &tc).unwrap();

    let eps = spec.corridor_width / 2.0;
    let mut rows = Vec::new();
    let mut priors_sum = vec![0.0; n_g];
    let mut active_votes = vec![0usize; n_g];
    for (i, ep) in test.iter().enumerate() {
        for s in model.prepare(ep, &scene).unwrap() {
            let (priors, preds) = model.predict(&s, cfg.k, 1000 + i as u64).unwrap();
            for g in 0..n_g {
                priors_sum[g] += priors.priors[g];
                active_votes[g] += usize::from(priors.active_mask[g]);
            }
            rows.push(MetricReport::evaluate(&ep.id, &preds, &s.futures, eps, priors.active_count(), n_g).unwrap());
        }
    }
    let n = rows.len();
    let agg = metrics::aggregate(&rows);
    SynthRun {
        final_priors: priors_sum.iter().map(|p| p / n as f64).collect(),
        // A generator counts as active when it is active for the majority of
        // test targets.
        active: (0..n_g).filter(|&g| active_votes[g] * 2 > n).collect(),
        precision: agg.precision,
        recall: agg.recall,
        purity: agg.purity,
    }
}
