//! The assembled forecaster: generator-side encoders, spatiotemporal graph
//! encoder, generator bank, discriminator and selector sharing one parameter
//! store.
//!
//! Training and prediction both go through [`PreparedSample`], the
//! parameter-free part of an `(episode, target)` pair, so that a whole batch
//! can be encoded on one tape.

use std::cmp::Ordering;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{ModelConfig, Point, PredictedSample, PredictionSet, SceneGrid, Trajectory, TrajectoryEpisode};
use crate::encoders::{crop_raster, displacements, ConditionFeature, Encoders, SocialEncoder};
use crate::gan::{self, sample_noise, DiscContext, Discriminator, GenContext, GeneratorBank};
use crate::nn::{ParamStore, Tape, Tensor, Var};
use crate::selector::{self, Selector, SelectorPriors};
use crate::stgraph::{GridSpec, StGraphEncoder};
use crate::{Error, Result};

/// Parameter-name prefixes of the three optimiser groups.
pub const GENERATOR_PREFIXES: [&str; 3] = ["gen_enc/", "stg/", "gen/"];
pub const DISCRIMINATOR_PREFIX: &str = "disc/";
pub const SELECTOR_PREFIX: &str = "selector/";

/// Everything about one target that does not depend on parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub episode_id: String,
    pub agent_id: String,
    /// Target displacements, one per observed frame (first is zero).
    pub target_steps: Vec<Point>,
    /// Neighbor displacement tracks in canonical order.
    pub neighbor_steps: Vec<Vec<Point>>,
    /// Neighbor minus target position at the last observed frame.
    pub neighbor_offsets: Vec<Point>,
    /// `cells[t][n]`: grid cell of neighbor `n` at frame `t`.
    pub cells: Vec<Vec<Option<usize>>>,
    /// Scene rasters around the target, one grid per observed frame.
    pub rasters: Vec<f64>,
    pub last_pos: Point,
    pub last_disp: Point,
    /// Annotated futures; the first is the one that happened.
    pub futures: Vec<Trajectory>,
}

impl PreparedSample {
    /// Realized future flattened to `x0 y0 x1 y1 …`.
    pub fn future_flat(&self) -> Vec<f64> {
        selector::flatten(&self.futures[0])
    }
}

fn cmp_tracks(a: &[Point], b: &[Point]) -> Ordering {
    for (p, q) in a.iter().zip(b) {
        let o = p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Prepares every target of `ep`. Neighbors are all other agents, sorted by
/// their observed coordinates so the encoding does not depend on the order
/// agents were listed in.
pub fn prepare_episode(ep: &TrajectoryEpisode, scene: &SceneGrid, grid: &GridSpec) -> Vec<PreparedSample> {
    ep.targets().map(|i| prepare_target(ep, i, scene, grid)).collect()
}

pub fn prepare_target(ep: &TrajectoryEpisode, target: usize, scene: &SceneGrid, grid: &GridSpec) -> PreparedSample {
    let tgt = &ep.agents[target];
    let mut neighbors: Vec<usize> = (0..ep.agents.len()).filter(|&j| j != target).collect();
    neighbors.sort_by(|&a, &b| cmp_tracks(&ep.agents[a].observed, &ep.agents[b].observed));
    let last = tgt.last_observed();
    let mut rasters = Vec::with_capacity(ep.t_obs * grid.cells());
    let mut cells = Vec::with_capacity(ep.t_obs);
    for t in 0..ep.t_obs {
        let center = tgt.observed[t];
        rasters.extend(crop_raster(scene, center, grid.cell, grid.rows, grid.cols));
        cells.push(
            neighbors
                .iter()
                .map(|&j| grid.cell_of(ep.agents[j].observed[t].sub(center)).map(|(r, c)| r * grid.cols + c))
                .collect(),
        );
    }
    let target_steps = displacements(&tgt.observed);
    PreparedSample {
        episode_id: ep.id.clone(),
        agent_id: tgt.agent_id.clone(),
        last_disp: *target_steps.last().unwrap(),
        target_steps,
        neighbor_steps: neighbors.iter().map(|&j| displacements(&ep.agents[j].observed)).collect(),
        neighbor_offsets: neighbors.iter().map(|&j| ep.agents[j].last_observed().sub(last)).collect(),
        cells,
        rasters,
        last_pos: last,
        futures: tgt.futures.clone(),
    }
}

/// Intermediate outputs of the batched condition forward pass.
pub struct ConditionParts<'t> {
    pub cond: Var<'t>,
    pub social_weights: Option<Var<'t>>,
    pub physical_weights: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct MultiGenModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub stg: StGraphEncoder,
    pub generators: GeneratorBank,
    pub discriminator: Discriminator,
    pub selector: Selector,
}

impl MultiGenModel {
    /// Fresh model initialised from `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoders = Encoders::new(&mut store, "gen_enc", &cfg, &mut rng);
        let stg = StGraphEncoder::new(&mut store, "stg/graph", &cfg, &mut rng);
        let generators = GeneratorBank::new(&mut store, "gen", &cfg, &mut rng);
        let discriminator = Discriminator::new(&mut store, "disc", &cfg, &mut rng);
        let selector = Selector::new(&mut store, "selector", &cfg, &mut rng);
        Ok(Self { cfg, store, encoders, stg, generators, discriminator, selector })
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::from_config(&self.cfg)
    }

    pub fn prepare(&self, ep: &TrajectoryEpisode, scene: &SceneGrid) -> Result<Vec<PreparedSample>> {
        if ep.t_obs != self.cfg.t_obs || ep.t_fut != self.cfg.t_fut {
            return Err(Error::invalid(
                "episode",
                format!(
                    "{} has t_obs/t_fut {}/{}, model expects {}/{}",
                    ep.id, ep.t_obs, ep.t_fut, self.cfg.t_obs, self.cfg.t_fut
                ),
            ));
        }
        Ok(prepare_episode(ep, scene, &self.grid()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        gan::save_checkpoint(path, &self.cfg, &self.store)
    }

    /// Rebuilds the model from its configuration and overwrites every block
    /// with the stored values.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = gan::load_checkpoint(path)?;
        let mut model = Self::new(ck.config)?;
        if ck.blocks.len() != model.store.len() {
            return Err(Error::Checkpoint(format!("{} parameter blocks, model has {}", ck.blocks.len(), model.store.len())));
        }
        for (name, value) in ck.blocks {
            let id = model.store.id(&name).ok_or_else(|| Error::Checkpoint(format!("unknown block {name}")))?;
            let slot = model.store.get_mut(id);
            if slot.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "block {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok(model)
    }

    /// Condition vectors `[B, cond_dim]` for a batch, on `tape`.
    pub fn condition<'t>(&self, tape: &'t Tape<'t>, batch: &[&PreparedSample]) -> ConditionParts<'t> {
        let cfg = &self.cfg;
        let b = batch.len();
        let t_obs = cfg.t_obs;
        let grid = self.grid();
        let hw = grid.cells();
        let (ds, dp) = (cfg.social_dim, cfg.physical_dim);

        // Social encoder over targets then all neighbors.
        let mut tracks: Vec<Vec<Point>> = batch.iter().map(|s| s.target_steps.clone()).collect();
        let mut seg = Vec::new();
        let mut offsets = Vec::new();
        for (i, s) in batch.iter().enumerate() {
            tracks.extend(s.neighbor_steps.iter().cloned());
            seg.extend(std::iter::repeat_n(i, s.neighbor_steps.len()));
            offsets.extend(s.neighbor_offsets.iter().flat_map(|p| [p.x, p.y]));
        }
        let m = seg.len();
        let h = self.encoders.social.forward(tape, &SocialEncoder::step_tensors(&tracks));
        let q = h.gather_rows(&(0..b).collect::<Vec<_>>());

        let (social_summary, social_weights, social_frames) = if m == 0 {
            (tape.constant(Tensor::zeros(&[b, ds])), None, tape.constant(Tensor::zeros(&[b * t_obs, ds, grid.rows, grid.cols])))
        } else {
            let hn = h.gather_rows(&(b..b + m).collect::<Vec<_>>());
            let keys = tape.concat(&[hn, tape.constant(Tensor::new(vec![m, 2], offsets))], 1);
            let w = self.encoders.social_attention.weights(tape, q, keys, &seg, b);
            let weighted = hn.scale_rows(w);
            let summary = weighted.scatter_rows(&seg, b);
            let mut src = Vec::new();
            let mut dst = Vec::new();
            let mut base = 0;
            for (i, s) in batch.iter().enumerate() {
                for (t, frame) in s.cells.iter().enumerate() {
                    for (n, cell) in frame.iter().enumerate() {
                        if let Some(c) = cell {
                            src.push(base + n);
                            dst.push((i * t_obs + t) * hw + c);
                        }
                    }
                }
                base += s.neighbor_steps.len();
            }
            let frames = if src.is_empty() {
                tape.constant(Tensor::zeros(&[b * t_obs, ds, grid.rows, grid.cols]))
            } else {
                weighted
                    .gather_rows(&src)
                    .scatter_rows(&dst, b * t_obs * hw)
                    .reshape(&[b * t_obs, hw, ds])
                    .swap_last()
                    .reshape(&[b * t_obs, ds, grid.rows, grid.cols])
            };
            (summary, Some(w), frames)
        };

        // Scene features for every observed frame; physical attention runs
        // over the cells of the last one.
        let rasters: Vec<f64> = batch.iter().flat_map(|s| s.rasters.iter().copied()).collect();
        let feats =
            self.encoders.physical.forward(tape, tape.constant(Tensor::new(vec![b * t_obs, 1, grid.rows, grid.cols], rasters)));
        let last_idx: Vec<usize> = (0..b).map(|i| i * t_obs + t_obs - 1).collect();
        let cells = feats.gather_rows(&last_idx).reshape(&[b, dp, hw]).swap_last().reshape(&[b * hw, dp]);
        let cell_seg: Vec<usize> = (0..b * hw).map(|k| k / hw).collect();
        let pw = self.encoders.physical_attention.weights(tape, q, cells, &cell_seg, b);
        let physical_summary = cells.scale_rows(pw).scatter_rows(&cell_seg, b);

        let frames = tape.concat(&[feats, social_frames], 1);
        let stg = self.stg.forward(tape, frames, b, t_obs);
        ConditionParts { cond: tape.concat(&[social_summary, physical_summary, stg], 1), social_weights, physical_weights: pw }
    }

    /// Condition of a single sample as a plain vector.
    pub fn condition_feature(&self, sample: &PreparedSample) -> ConditionFeature {
        let tape = Tape::new(&self.store);
        ConditionFeature(self.condition(&tape, &[sample]).cond.value().data().to_vec())
    }

    pub fn condition_values(&self, batch: &[&PreparedSample]) -> Tensor {
        let tape = Tape::new(&self.store);
        (*self.condition(&tape, batch).cond.value()).clone()
    }

    pub fn gen_context(batch: &[&PreparedSample]) -> GenContext {
        let last: Vec<Point> = batch.iter().map(|s| s.last_pos).collect();
        let disp: Vec<Point> = batch.iter().map(|s| s.last_disp).collect();
        GenContext::from_points(&last, &disp)
    }

    pub fn disc_context(&self, batch: &[&PreparedSample]) -> DiscContext {
        let grid = self.grid();
        let hw = grid.cells();
        let t_obs = self.cfg.t_obs;
        let tracks: Vec<Vec<Point>> = batch.iter().map(|s| s.target_steps.clone()).collect();
        let rasters = batch.iter().flat_map(|s| s.rasters[(t_obs - 1) * hw..t_obs * hw].iter().copied()).collect();
        DiscContext {
            observed: SocialEncoder::step_tensors(&tracks),
            last_pos: Tensor::new(vec![batch.len(), 2], batch.iter().flat_map(|s| [s.last_pos.x, s.last_pos.y]).collect()),
            rasters: Tensor::new(vec![batch.len(), 1, grid.rows, grid.cols], rasters),
        }
    }

    /// Priors for each row of a `[B, cond_dim]` condition matrix.
    pub fn priors(&self, cond: &Tensor) -> Vec<SelectorPriors> {
        let tape = Tape::new(&self.store);
        let logits = self.selector.logits(&tape, tape.constant(cond.clone())).value();
        (0..cond.rows()).map(|i| SelectorPriors::from_logits(logits.row(i), self.selector.threshold)).collect()
    }

    /// Runs `which[i]` on row `i` without recording gradients; returns
    /// `[n, 2 · t_fut]` positions.
    pub fn generate_values(&self, which: &[usize], cond: &Tensor, noise: &Tensor, ctx: &GenContext) -> Result<Tensor> {
        let tape = Tape::new(&self.store);
        let c = tape.constant(cond.clone());
        Ok((*self.generators.forward_mixed(&tape, which, c, noise, ctx)?.value()).clone())
    }

    /// Monte-Carlo `log p(Y | g)` for every row and generator, `[B][n_G]`.
    /// `futures` holds one flattened future per row.
    pub fn log_likelihoods(
        &self,
        cond: &Tensor,
        ctx: &GenContext,
        futures: &[Vec<f64>],
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let (b, l, n_g) = (cond.rows(), self.cfg.l_mc, self.cfg.n_g);
        let rep: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, l)).collect();
        let cond_rep = Tensor::new(vec![b * l, cond.row_len()], rep.iter().flat_map(|&i| cond.row(i).to_vec()).collect());
        let ctx_rep = ctx.rows(&rep);
        let mut out = vec![vec![0.0; n_g]; b];
        for g in 0..n_g {
            let z = gan::noise_from(rng, b * l, self.cfg.noise_dim);
            let y = self.generate_values(&vec![g; b * l], &cond_rep, &z, &ctx_rep)?;
            for (i, row) in out.iter_mut().enumerate() {
                let samples: Vec<Vec<f64>> = (0..l).map(|k| y.row(i * l + k).to_vec()).collect();
                row[g] = selector::mc_log_likelihood(&futures[i], &samples, self.cfg.sigma);
            }
        }
        Ok(out)
    }

    /// Monte-Carlo `log p(Y | g)` for a single target and generator.
    pub fn mc_likelihood(&self, sample: &PreparedSample, future: &[Point], g: usize, seed: u64) -> Result<f64> {
        if g >= self.cfg.n_g {
            return Err(Error::GeneratorIndex { index: g, n_g: self.cfg.n_g });
        }
        let cond = Tensor::new(vec![1, self.cfg.cond_dim()], self.condition_feature(sample).0);
        let l = self.cfg.l_mc;
        let ctx = Self::gen_context(&[sample]).rows(&vec![0; l]);
        let cond = Tensor::new(vec![l, cond.len()], cond.data().repeat(l));
        let y = self.generate_values(&vec![g; l], &cond, &sample_noise(l, self.cfg.noise_dim, seed), &ctx)?;
        let samples: Vec<Vec<f64>> = (0..l).map(|k| y.row(k).to_vec()).collect();
        Ok(selector::mc_log_likelihood(&selector::flatten(future), &samples, self.cfg.sigma))
    }

    /// `k` samples from the active generators. Sample `i` uses noise seeded
    /// with `seed + i` and the generator draw is seeded with `seed`.
    pub fn predict(&self, sample: &PreparedSample, k: usize, seed: u64) -> Result<(SelectorPriors, PredictionSet)> {
        if k == 0 {
            return Err(Error::invalid("K", "must be at least 1"));
        }
        let cond = self.condition_feature(sample);
        let priors = self.selector.predict_priors(&self.store, &cond);
        let which = selector::sample_generator_indices(&priors, k, seed);
        let seeds: Vec<u64> = (0..k as u64).map(|i| seed.wrapping_add(i)).collect();
        let noise = Tensor::new(
            vec![k, self.cfg.noise_dim],
            seeds.iter().flat_map(|&s| sample_noise(1, self.cfg.noise_dim, s).into_data()).collect(),
        );
        let cond_rep = Tensor::new(vec![k, cond.0.len()], cond.0.repeat(k));
        let ctx = Self::gen_context(&[sample]).rows(&vec![0; k]);
        let y = self.generate_values(&which, &cond_rep, &noise, &ctx)?;
        let samples = (0..k)
            .map(|i| PredictedSample {
                trajectory: y.row(i).chunks(2).map(|c| Point::new(c[0], c[1])).collect(),
                generator_index: which[i],
                noise_seed: seeds[i],
            })
            .collect();
        Ok((priors, PredictionSet { agent_id: sample.agent_id.clone(), samples }))
    }
}
