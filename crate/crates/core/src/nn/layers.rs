use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Affine map `x · W + b` on `[n, in]` rows.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = store.glorot(format!("{name}.w"), in_dim, out_dim, rng);
        let b = store.zeros(format!("{name}.b"), &[out_dim]);
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(tape.param(self.w)).add_bias(tape.param(self.b))
    }
}

/// Gated recurrent unit over `[n, in]` inputs and `[n, hidden]` state.
#[derive(Clone, Debug)]
pub struct GruCell {
    wx: Linear,
    wh: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            wx: Linear::new(store, &format!("{name}.x"), in_dim, 3 * hidden, rng),
            wh: Linear::new(store, &format!("{name}.h"), hidden, 3 * hidden, rng),
            hidden,
        }
    }

    pub fn step<'t>(&self, tape: &'t Tape<'t>, x: Var<'t>, h: Var<'t>) -> Var<'t> {
        let hd = self.hidden;
        let gx = self.wx.forward(tape, x);
        let gh = self.wh.forward(tape, h);
        let z = gx.slice(1, 0, hd).add(gh.slice(1, 0, hd)).sigmoid();
        let r = gx.slice(1, hd, hd).add(gh.slice(1, hd, hd)).sigmoid();
        let n = gx.slice(1, 2 * hd, hd).add(r.mul(gh.slice(1, 2 * hd, hd))).tanh();
        z.one_minus().mul(n).add(z.mul(h))
    }
}

/// Same-padded 2D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, k: usize, rng: &mut impl Rng) -> Self {
        let fan = (in_ch * k * k + out_ch * k * k) as f64;
        let w = store.uniform(format!("{name}.w"), &[out_ch, in_ch, k, k], (6.0 / fan).sqrt(), rng);
        let b = store.zeros(format!("{name}.b"), &[out_ch]);
        Self { w, b, in_ch, out_ch }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<'t>, x: Var<'t>) -> Var<'t> {
        x.conv2d(tape.param(self.w), tape.param(self.b))
    }
}

/// Convolutional GRU: the recurrent state is a feature map and every gate is
/// a convolution over `[input, state]` channels.
#[derive(Clone, Debug)]
pub struct ConvGruCell {
    gates: Conv2d,
    cand_x: Conv2d,
    cand_h: Conv2d,
    pub hidden: usize,
}

impl ConvGruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, hidden: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self {
            gates: Conv2d::new(store, &format!("{name}.gates"), in_ch + hidden, 2 * hidden, k, rng),
            cand_x: Conv2d::new(store, &format!("{name}.cand_x"), in_ch, hidden, k, rng),
            cand_h: Conv2d::new(store, &format!("{name}.cand_h"), hidden, hidden, k, rng),
            hidden,
        }
    }

    pub fn step<'t>(&self, tape: &'t Tape<'t>, x: Var<'t>, h: Var<'t>) -> Var<'t> {
        let hd = self.hidden;
        let g = self.gates.forward(tape, tape.concat(&[x, h], 1)).sigmoid();
        let z = g.slice(1, 0, hd);
        let r = g.slice(1, hd, hd);
        let n = self.cand_x.forward(tape, x).add(r.mul(self.cand_h.forward(tape, h))).tanh();
        z.one_minus().mul(n).add(z.mul(h))
    }
}

/// Two-layer perceptron with a tanh hidden layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    hidden: Linear,
    out: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), in_dim, hidden, rng),
            out: Linear::new(store, &format!("{name}.1"), hidden, out_dim, rng),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<'t>, x: Var<'t>) -> Var<'t> {
        self.out.forward(tape, self.hidden.forward(tape, x).tanh())
    }
}
