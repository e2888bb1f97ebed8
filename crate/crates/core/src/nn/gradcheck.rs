//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Worst disagreement found for one parameter block.
#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
}

/// Denominator floor for the relative error; gradients smaller than this are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the scalar `loss` against central
/// differences at up to `points` randomly chosen coordinates of each block.
pub fn check_blocks<F>(
    store: &mut ParamStore,
    blocks: &[ParamId],
    points: usize,
    step: f64,
    seed: u64,
    loss: F,
) -> Vec<BlockCheck>
where
    F: for<'t> Fn(&'t Tape<'t>) -> Var<'t>,
{
    let grads = {
        let tape = Tape::new(store);
        loss(&tape).backward()
    };
    let eval = |store: &ParamStore| {
        let tape = Tape::new(store);
        let v = loss(&tape).value().item();
        v
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &pid in blocks {
        let n = store.get(pid).len();
        let k = points.min(n);
        let mut worst: f64 = 0.0;
        for j in sample(&mut rng, n, k) {
            let analytic = grads.get(pid).map_or(0.0, |g| g.data()[j]);
            let orig = store.get(pid).data()[j];
            store.get_mut(pid).data_mut()[j] = orig + step;
            let plus = eval(store);
            store.get_mut(pid).data_mut()[j] = orig - step;
            let minus = eval(store);
            store.get_mut(pid).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic, numeric));
        }
        out.push(BlockCheck { name: store.name(pid).to_string(), points: k, max_rel_error: worst });
    }
    out
}
