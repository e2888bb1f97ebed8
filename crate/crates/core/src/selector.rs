//! Generator Selector: prior over generators, Monte-Carlo likelihood of an
//! observed future under each generator, the Bayes posterior, and the
//! cross-entropy that pulls the prior towards the average posterior.
//!
//! All probability arithmetic is done in log space; densities of
//! 24-dimensional futures underflow `f64` as soon as a sample is a few
//! meters off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{ModelConfig, Point};
use crate::encoders::ConditionFeature;
use crate::nn::{Mlp, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// `log Σ exp(x)`; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log (1/n Σ exp(x))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Log density of `y` under an isotropic Gaussian centred at `mean` with
/// per-coordinate variance `sigma`.
pub fn gaussian_log_density(y: &[f64], mean: &[f64], sigma: f64) -> f64 {
    assert_eq!(y.len(), mean.len(), "density dimension mismatch");
    let d = y.len() as f64;
    let sq: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI * sigma).ln() - sq / (2.0 * sigma)
}

/// Flattens a trajectory to `x0 y0 x1 y1 …`.
pub fn flatten(traj: &[Point]) -> Vec<f64> {
    traj.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Monte-Carlo estimate of `log p(Y | g)` from generator samples drawn with
/// independent noise.
pub fn mc_log_likelihood(y: &[f64], samples: &[Vec<f64>], sigma: f64) -> f64 {
    assert!(!samples.is_empty(), "at least one Monte-Carlo sample");
    let terms: Vec<f64> = samples.iter().map(|s| gaussian_log_density(y, s, sigma)).collect();
    log_mean_exp(&terms)
}

/// Prior over generators with its activation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorPriors {
    pub priors: Vec<f64>,
    pub active_mask: Vec<bool>,
    /// Zero on inactive generators.
    pub renormalized: Vec<f64>,
}

impl SelectorPriors {
    /// A generator is active when its prior strictly exceeds `threshold`. If
    /// none does, the most probable one is activated so predictions are never
    /// empty.
    pub fn from_probs(priors: Vec<f64>, threshold: f64) -> Self {
        let mut active_mask: Vec<bool> = priors.iter().map(|&p| p > threshold).collect();
        if !active_mask.iter().any(|&a| a) {
            let best = argmax(&priors);
            active_mask[best] = true;
        }
        let mass: f64 = priors.iter().zip(&active_mask).filter(|(_, &a)| a).map(|(p, _)| p).sum();
        let renormalized = priors.iter().zip(&active_mask).map(|(&p, &a)| if a { p / mass } else { 0.0 }).collect();
        Self { priors, active_mask, renormalized }
    }

    pub fn from_logits(logits: &[f64], threshold: f64) -> Self {
        let lse = log_sum_exp(logits);
        Self::from_probs(logits.iter().map(|l| (l - lse).exp()).collect(), threshold)
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.priors.len()).filter(|&g| self.active_mask[g]).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `p(g | Y)` with the log-likelihoods it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEstimate {
    pub log_likelihoods: Vec<f64>,
    pub posterior: Vec<f64>,
}

/// Bayes posterior under a uniform prior: the softmax of the log-likelihoods.
pub fn posterior(log_likelihoods: &[f64]) -> Result<PosteriorEstimate> {
    if log_likelihoods.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::invalid("log_likelihoods", "entries must be finite or -inf"));
    }
    let lse = log_sum_exp(log_likelihoods);
    if lse == f64::NEG_INFINITY {
        return Err(Error::NoSupport);
    }
    let mut post: Vec<f64> = log_likelihoods.iter().map(|l| (l - lse).exp()).collect();
    let total: f64 = post.iter().sum();
    for p in &mut post {
        *p /= total;
    }
    Ok(PosteriorEstimate { log_likelihoods: log_likelihoods.to_vec(), posterior: post })
}

/// `H(p, s) = -Σ p(g|Y) log s(g)` with `s = softmax(logits)`.
pub fn selector_loss(posterior: &PosteriorEstimate, logits: &[f64]) -> f64 {
    assert_eq!(posterior.posterior.len(), logits.len());
    let lse = log_sum_exp(logits);
    -posterior.posterior.iter().zip(logits).filter(|(p, _)| **p > 0.0).map(|(p, l)| p * (l - lse)).sum::<f64>()
}

/// Batched selector loss on the tape. `posteriors` is a constant `[n, n_G]`
/// target, so no gradient reaches whatever produced it.
pub fn selector_loss_var<'t>(logits: Var<'t>, posteriors: &Tensor) -> Var<'t> {
    let n = posteriors.rows() as f64;
    let tape = logits.tape();
    logits.log_softmax_rows().mul(tape.constant(posteriors.clone())).sum().scale(-1.0 / n)
}

/// `count` i.i.d. draws from the renormalized priors.
pub fn sample_generator_indices(priors: &SelectorPriors, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| draw(&priors.renormalized, &mut rng)).collect()
}

/// One draw from a discrete distribution; zero-weight entries are never
/// returned.
pub fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Maps a condition to logits over generators.
#[derive(Clone, Debug)]
pub struct Selector {
    mlp: Mlp,
    pub threshold: f64,
}

impl Selector {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(store, &format!("{name}/mlp"), cfg.cond_dim(), cfg.selector_hidden, cfg.n_g, rng),
            threshold: cfg.activation_threshold,
        }
    }

    /// `[n, cond_dim]` conditions to `[n, n_G]` logits.
    pub fn logits<'t>(&self, tape: &'t Tape<'t>, cond: Var<'t>) -> Var<'t> {
        self.mlp.forward(tape, cond)
    }

    pub fn predict_priors(&self, store: &ParamStore, cond: &ConditionFeature) -> SelectorPriors {
        let tape = Tape::new(store);
        let c = tape.constant(Tensor::new(vec![1, cond.0.len()], cond.0.clone()));
        SelectorPriors::from_logits(self.logits(&tape, c).value().data(), self.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn threshold_is_strict() {
        let p = SelectorPriors::from_probs(vec![0.5, 0.45, 0.03, 0.02], 0.03);
        assert_eq!(p.active_mask, vec![true, true, false, false]);
        assert!(close(p.renormalized[0], 0.5 / 0.95, 1e-12));
        assert!(close(p.renormalized[1], 0.45 / 0.95, 1e-12));
        assert_eq!(p.renormalized[2], 0.0);
    }

    #[test]
    fn single_and_uniform_priors() {
        let p = SelectorPriors::from_logits(&[3.7], 0.03);
        assert_eq!(p.priors, vec![1.0]);
        assert_eq!(p.active_mask, vec![true]);
        let p = SelectorPriors::from_logits(&[0.2; 4], 0.03);
        for v in &p.priors {
            assert!(close(*v, 0.25, 1e-15));
        }
        assert_eq!(p.active_count(), 4);
    }

    #[test]
    fn argmax_is_forced_active() {
        let p = SelectorPriors::from_probs(vec![0.02; 50], 0.03);
        assert_eq!(p.active(), vec![0]);
        assert_eq!(p.renormalized[0], 1.0);
    }

    #[test]
    fn gaussian_at_mean() {
        let y = vec![0.3; 24];
        let l = mc_log_likelihood(&y, &[y.clone()], 1.0);
        assert!(close(l, -12.0 * (2.0 * std::f64::consts::PI).ln(), 1e-12));
        let l2 = mc_log_likelihood(&y, &[y.clone()], 2.0);
        assert!(close(l - l2, 12.0 * 2f64.ln(), 1e-12));
        let two = mc_log_likelihood(&y, &[y.clone(), y.clone()], 1.0);
        assert!(close(two, l, 1e-12));
    }

    #[test]
    fn posterior_examples() {
        let p = posterior(&[-3.0, -3.0]).unwrap();
        assert_eq!(p.posterior, vec![0.5, 0.5]);
        let p = posterior(&[0.3f64.ln(), 0.1f64.ln()]).unwrap();
        assert!(close(p.posterior[0], 0.75, 1e-12));
        assert!(close(p.posterior[1], 0.25, 1e-12));
        let p = posterior(&[-1000.0, -1000.0 + 3f64.ln()]).unwrap();
        assert!(close(p.posterior[0], 0.25, 1e-12));
        assert!(close(p.posterior[1], 0.75, 1e-12));
        let p = posterior(&[f64::NEG_INFINITY, -2.0]).unwrap();
        assert_eq!(p.posterior, vec![0.0, 1.0]);
        assert!(matches!(posterior(&[f64::NEG_INFINITY; 3]), Err(Error::NoSupport)));
        assert!(posterior(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn selector_loss_examples() {
        let post = posterior(&[0.2f64.ln(), 0.8f64.ln()]).unwrap();
        let h = selector_loss(&post, &[0.2f64.ln(), 0.8f64.ln()]);
        let entropy = -(0.2 * 0.2f64.ln() + 0.8 * 0.8f64.ln());
        assert!(close(h, entropy, 1e-12));
        let one_hot = PosteriorEstimate { log_likelihoods: vec![0.0, f64::NEG_INFINITY], posterior: vec![1.0, 0.0] };
        assert!(close(selector_loss(&one_hot, &[0.0, 0.0]), 2f64.ln(), 1e-12));
        let half = posterior(&[0.0, 0.0]).unwrap();
        assert!(close(selector_loss(&half, &[1.0, 1.0]), 2f64.ln(), 1e-12));
    }

    #[test]
    fn tape_loss_matches_scalar_loss() {
        let store = ParamStore::new();
        let tape = Tape::new(&store);
        let logits = [0.3, -1.2, 0.7];
        let post = posterior(&[-1.0, -2.0, -0.5]).unwrap();
        let v = selector_loss_var(
            tape.constant(Tensor::new(vec![1, 3], logits.to_vec())),
            &Tensor::new(vec![1, 3], post.posterior.clone()),
        );
        assert!(close(v.value().item(), selector_loss(&post, &logits), 1e-12));
    }

    #[test]
    fn sampling_respects_support() {
        let p = SelectorPriors::from_probs(vec![0.0, 1.0], 0.03);
        assert!(sample_generator_indices(&p, 100, 1).iter().all(|&g| g == 1));
        let p = SelectorPriors::from_probs(vec![0.5, 0.01, 0.49], 0.03);
        let draws = sample_generator_indices(&p, 100_000, 2);
        assert!(!draws.contains(&1));
        assert_eq!(draws, sample_generator_indices(&p, 100_000, 2));
    }
}
