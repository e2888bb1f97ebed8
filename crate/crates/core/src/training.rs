//! Alternating optimisation: discriminator/classifier step, generator step,
//! then selector steps against Bayes posteriors of the real futures.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::ModelConfig;
use crate::gan::{noise_from, DiscContext, GenContext};
use crate::model::{MultiGenModel, PreparedSample, DISCRIMINATOR_PREFIX, GENERATOR_PREFIXES, SELECTOR_PREFIX};
use crate::nn::{Adam, Grads, ParamId, ParamStore, Tape, Tensor, Var};
use crate::selector::{self, argmax, SelectorPriors};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_variety: f64,
    pub lambda_cls: f64,
    pub k_variety: usize,
    pub selector_steps_per_gan_step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 32,
            learning_rate: 0.0002,
            lambda_variety: 1.0,
            lambda_cls: 1.0,
            k_variety: 4,
            selector_steps_per_gan_step: 1,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the rate, loss weights and seed taken from the model
    /// configuration.
    pub fn from_model(cfg: &ModelConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            lambda_variety: cfg.lambda_variety,
            lambda_cls: cfg.lambda_cls,
            seed: cfg.seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("k_variety", self.k_variety),
            ("selector_steps_per_gan_step", self.selector_steps_per_gan_step),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        for (field, v) in [("lambda_variety", self.lambda_variety), ("lambda_cls", self.lambda_cls)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be non-negative"));
            }
        }
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(field, "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Scalars logged for one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub d_adv: f64,
    pub g_adv: f64,
    pub variety: f64,
    pub cls_d: f64,
    pub cls_g: f64,
    pub selector_ce: f64,
    pub prior_means: Vec<f64>,
    pub active_generators: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
}

impl TrainReport {
    pub fn csv_header(n_g: usize) -> String {
        let mut h = String::from("iteration,d_adv,g_adv,variety,cls_d,cls_g,selector_ce");
        for g in 0..n_g {
            let _ = write!(h, ",prior_{g}");
        }
        h.push_str(",active_generators");
        h
    }

    pub fn csv_row(r: &IterationRecord) -> String {
        let mut s = format!("{},{},{},{},{},{},{}", r.iteration, r.d_adv, r.g_adv, r.variety, r.cls_d, r.cls_g, r.selector_ce);
        for p in &r.prior_means {
            let _ = write!(s, ",{p}");
        }
        let _ = write!(s, ",{}", r.active_generators);
        s
    }

    pub fn to_csv(&self, n_g: usize) -> String {
        let mut out = Self::csv_header(n_g);
        out.push('\n');
        for r in &self.records {
            out.push_str(&Self::csv_row(r));
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `(loss_D, loss_G)` of the saturating adversarial game from realness
/// logits: `loss_D = -mean log D(real) - mean log(1 - D(fake))`,
/// `loss_G = mean log(1 - D(fake))`.
pub fn adversarial_loss(real_logits: &[f64], fake_logits: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let fake = mean(fake_logits, &softplus);
    (mean(real_logits, &|x| softplus(-x)) + fake, -fake)
}

/// Cross-entropy of softmax(`logits`) against the true index.
pub fn classification_loss(logits: &[f64], true_index: usize) -> f64 {
    selector::log_sum_exp(logits) - logits[true_index]
}

/// Mean squared coordinate error between two flattened trajectories.
pub fn squared_error(pred: &[f64], gt: &[f64]) -> f64 {
    pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / gt.len() as f64
}

/// Minimum over candidates of [`squared_error`], with the argmin.
pub fn variety_loss(candidates: &[Vec<f64>], gt: &[f64]) -> (f64, usize) {
    let errs: Vec<f64> = candidates.iter().map(|c| squared_error(c, gt)).collect();
    let best = (0..errs.len()).fold(0, |b, i| if errs[i] < errs[b] { i } else { b });
    (errs[best], best)
}

fn one_hot(idx: &[usize], n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[idx.len(), n]);
    for (i, &g) in idx.iter().enumerate() {
        t.data_mut()[i * n + g] = 1.0;
    }
    t
}

/// Batched cross-entropy on the tape.
pub fn classification_loss_var<'t>(logits: Var<'t>, idx: &[usize]) -> Var<'t> {
    let n = logits.shape()[1];
    let tape = logits.tape();
    logits.log_softmax_rows().mul(tape.constant(one_hot(idx, n))).sum().scale(-1.0 / idx.len() as f64)
}

/// Random draws fixed before a discriminator step.
pub struct DiscriminatorPlan {
    pub ctx: DiscContext,
    pub real: Tensor,
    pub fake: Tensor,
    pub which: Vec<usize>,
}

pub struct DiscriminatorLoss<'t> {
    pub total: Var<'t>,
    pub adv: Var<'t>,
    pub cls: Var<'t>,
}

pub fn discriminator_loss<'t>(
    tape: &'t Tape<'t>,
    model: &MultiGenModel,
    plan: &DiscriminatorPlan,
    lambda_cls: f64,
) -> DiscriminatorLoss<'t> {
    let d = &model.discriminator;
    let (real_logit, _) = d.forward(tape, &plan.ctx, tape.constant(plan.real.clone()));
    let (fake_logit, fake_cls) = d.forward(tape, &plan.ctx, tape.constant(plan.fake.clone()));
    let adv = real_logit.scale(-1.0).softplus().mean().add(fake_logit.softplus().mean());
    let cls = classification_loss_var(fake_cls, &plan.which);
    DiscriminatorLoss { total: adv.add(cls.scale(lambda_cls)), adv, cls }
}

/// Random draws fixed before a generator step.
pub struct GeneratorPlan<'a> {
    pub batch: Vec<&'a PreparedSample>,
    pub gen_ctx: GenContext,
    pub disc_ctx: DiscContext,
    pub real: Tensor,
    /// Generators sampled from the priors, with their noise.
    pub which: Vec<usize>,
    pub noise: Tensor,
    /// Generator assigned by the posterior, with the best of the variety
    /// candidates' noise.
    pub assigned: Vec<usize>,
    pub variety_noise: Tensor,
}

pub struct GeneratorLoss<'t> {
    pub total: Var<'t>,
    pub adv: Var<'t>,
    pub variety: Var<'t>,
    pub cls: Var<'t>,
}

pub fn generator_loss<'t>(
    tape: &'t Tape<'t>,
    model: &MultiGenModel,
    plan: &GeneratorPlan,
    cfg: &TrainConfig,
) -> Result<GeneratorLoss<'t>> {
    let cond = model.condition(tape, &plan.batch).cond;
    let fake = model.generators.forward_mixed(tape, &plan.which, cond, &plan.noise, &plan.gen_ctx)?;
    let (fake_logit, fake_cls) = model.discriminator.forward(tape, &plan.disc_ctx, fake);
    let adv = fake_logit.softplus().mean().scale(-1.0);
    let cls = classification_loss_var(fake_cls, &plan.which);
    let best = model.generators.forward_mixed(tape, &plan.assigned, cond, &plan.variety_noise, &plan.gen_ctx)?;
    let variety = best.sub(tape.constant(plan.real.clone())).square().mean();
    let total = adv.add(variety.scale(cfg.lambda_variety)).add(cls.scale(cfg.lambda_cls));
    Ok(GeneratorLoss { total, adv, variety, cls })
}

fn group(store: &ParamStore, prefixes: &[&str]) -> Vec<ParamId> {
    let mut ids: Vec<ParamId> = prefixes.iter().flat_map(|p| store.ids_with_prefix(p)).collect();
    ids.sort();
    ids
}

fn finite(iteration: usize, term: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { iteration, term: term.into() })
    }
}

fn finite_grads(iteration: usize, term: &str, g: Grads) -> Result<Grads> {
    if g.all_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite { iteration, term: format!("gradient of {term}") })
    }
}

fn stack_rows(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Tensor {
    let data: Vec<f64> = rows.flatten().collect();
    Tensor::new(vec![data.len() / width, width], data)
}

/// Optimiser state for the three parameter groups.
pub struct Trainer {
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    opt_g: Adam,
    opt_d: Adam,
    opt_s: Adam,
    iteration: usize,
}

impl Trainer {
    pub fn new(model: &MultiGenModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let s = &model.store;
        let adam = |ids| Adam::new(s, ids, cfg.learning_rate, cfg.beta1, cfg.beta2);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            opt_g: adam(group(s, &GENERATOR_PREFIXES)),
            opt_d: adam(group(s, &[DISCRIMINATOR_PREFIX])),
            opt_s: adam(group(s, &[SELECTOR_PREFIX])),
            iteration: 0,
            cfg,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One full alternating iteration on a random batch of `data`.
    pub fn step(&mut self, model: &mut MultiGenModel, data: &[PreparedSample]) -> Result<IterationRecord> {
        let it = self.iteration;
        let cfg = self.cfg.clone();
        let mcfg = model.cfg.clone();
        let (b, n_g, nd) = (cfg.batch_size, mcfg.n_g, mcfg.noise_dim);
        let width = 2 * mcfg.t_fut;
        let batch: Vec<&PreparedSample> = (0..b).map(|_| &data[self.rng.random_range(0..data.len())]).collect();
        let gen_ctx = MultiGenModel::gen_context(&batch);
        let disc_ctx = model.disc_context(&batch);
        let futures: Vec<Vec<f64>> = batch.iter().map(|s| s.future_flat()).collect();
        let real = stack_rows(futures.iter().cloned(), width);

        let cond = model.condition_values(&batch);
        let priors: Vec<SelectorPriors> = model.priors(&cond);
        let which: Vec<usize> = priors.iter().map(|p| selector::draw(&p.renormalized, &mut self.rng)).collect();

        // (a) discriminator and classifier
        let z = noise_from(&mut self.rng, b, nd);
        let fake = model.generate_values(&which, &cond, &z, &gen_ctx)?;
        let d_plan = DiscriminatorPlan { ctx: disc_ctx.clone(), real: real.clone(), fake, which: which.clone() };
        let (d_adv, cls_d, grads) = {
            let tape = Tape::new(&model.store);
            let l = discriminator_loss(&tape, model, &d_plan, cfg.lambda_cls);
            let d_adv = finite(it, "discriminator adversarial loss", l.adv.value().item())?;
            let cls_d = finite(it, "discriminator classification loss", l.cls.value().item())?;
            (d_adv, cls_d, l.total.backward())
        };
        self.opt_d.step(&mut model.store, &finite_grads(it, "discriminator loss", grads)?);

        // Posteriors of the real futures drive both the variety assignment
        // and the selector target.
        let ll = model.log_likelihoods(&cond, &gen_ctx, &futures, &mut self.rng)?;
        let mut post = Vec::with_capacity(b);
        for row in &ll {
            match selector::posterior(row) {
                Ok(p) => post.push(p.posterior),
                Err(_) => return Err(Error::NonFinite { iteration: it, term: "generator posterior".into() }),
            }
        }
        let assigned: Vec<usize> = post.iter().map(|p| argmax(p)).collect();

        let k = cfg.k_variety;
        let rep: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let cand_noise = noise_from(&mut self.rng, b * k, nd);
        let cand_cond = stack_rows(rep.iter().map(|&i| cond.row(i).to_vec()), cond.row_len());
        let cand_which: Vec<usize> = rep.iter().map(|&i| assigned[i]).collect();
        let cands = model.generate_values(&cand_which, &cand_cond, &cand_noise, &gen_ctx.rows(&rep))?;
        let best: Vec<usize> = (0..b)
            .map(|i| {
                let rows: Vec<Vec<f64>> = (0..k).map(|j| cands.row(i * k + j).to_vec()).collect();
                i * k + variety_loss(&rows, &futures[i]).1
            })
            .collect();
        let variety_noise = stack_rows(best.iter().map(|&r| cand_noise.row(r).to_vec()), nd);

        // (b) generators
        let g_plan = GeneratorPlan {
            batch: batch.clone(),
            gen_ctx,
            disc_ctx,
            real,
            which,
            noise: noise_from(&mut self.rng, b, nd),
            assigned,
            variety_noise,
        };
        let (g_adv, variety, cls_g, grads) = {
            let tape = Tape::new(&model.store);
            let l = generator_loss(&tape, model, &g_plan, &cfg)?;
            let g_adv = finite(it, "generator adversarial loss", l.adv.value().item())?;
            let variety = finite(it, "variety loss", l.variety.value().item())?;
            let cls_g = finite(it, "generator classification loss", l.cls.value().item())?;
            (g_adv, variety, cls_g, l.total.backward())
        };
        self.opt_g.step(&mut model.store, &finite_grads(it, "generator loss", grads)?);

        // (c) selector
        let target = stack_rows(post.into_iter(), n_g);
        let mut selector_ce = 0.0;
        for _ in 0..cfg.selector_steps_per_gan_step {
            let grads = {
                let tape = Tape::new(&model.store);
                let logits = model.selector.logits(&tape, tape.constant(cond.clone()));
                let loss = selector::selector_loss_var(logits, &target);
                selector_ce = finite(it, "selector cross-entropy", loss.value().item())?;
                loss.backward()
            };
            self.opt_s.step(&mut model.store, &finite_grads(it, "selector cross-entropy", grads)?);
        }

        let mut prior_means = vec![0.0; n_g];
        for p in &priors {
            for (m, v) in prior_means.iter_mut().zip(&p.priors) {
                *m += v / b as f64;
            }
        }
        let active_generators = priors.iter().map(|p| p.active_count() as f64).sum::<f64>() / b as f64;
        self.iteration += 1;
        Ok(IterationRecord { iteration: it, d_adv, g_adv, variety, cls_d, cls_g, selector_ce, prior_means, active_generators })
    }
}

/// Runs `cfg.iterations` iterations. `on_iteration` sees every record and
/// the model after the update, e.g. to stream the report or checkpoint.
pub fn train_with(
    model: &mut MultiGenModel,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationRecord, &MultiGenModel) -> Result<()>,
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut report = TrainReport::default();
    if cfg.iterations == 0 {
        return Ok(report);
    }
    if data.is_empty() {
        return Err(Error::invalid("dataset", "no training targets"));
    }
    for _ in 0..cfg.iterations {
        let r = trainer.step(model, data)?;
        on_iteration(&r, model)?;
        report.records.push(r);
    }
    Ok(report)
}

pub fn train(model: &mut MultiGenModel, data: &[PreparedSample], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, data, cfg, |_, _| Ok(()))
}
