//! Generator bank, discriminator with its generator-classifier head, and the
//! checkpoint container.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datamodel::{ModelConfig, Point};
use crate::encoders::{PhysicalEncoder, SocialEncoder};
use crate::nn::{GruCell, Linear, Mlp, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// `[count, dim]` i.i.d. standard-normal draws, reproducible under `seed`.
pub fn sample_noise(count: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noise_from(&mut rng, count, dim)
}

pub fn noise_from(rng: &mut impl Rng, count: usize, dim: usize) -> Tensor {
    let data = (0..count * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![count, dim], data)
}

/// Where each generated trajectory continues from.
#[derive(Clone, Debug, PartialEq)]
pub struct GenContext {
    /// `[n, 2]` last observed positions.
    pub last_pos: Tensor,
    /// `[n, 2]` last observed displacements.
    pub last_disp: Tensor,
}

impl GenContext {
    pub fn from_points(last: &[Point], disp: &[Point]) -> Self {
        let flat = |ps: &[Point]| Tensor::new(vec![ps.len(), 2], ps.iter().flat_map(|p| [p.x, p.y]).collect());
        Self { last_pos: flat(last), last_disp: flat(disp) }
    }

    pub fn rows(&self, idx: &[usize]) -> Self {
        let pick = |t: &Tensor| Tensor::new(vec![idx.len(), 2], idx.iter().flat_map(|&i| t.row(i).to_vec()).collect());
        Self { last_pos: pick(&self.last_pos), last_disp: pick(&self.last_disp) }
    }

    pub fn len(&self) -> usize {
        self.last_pos.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Recurrent decoder. Its state starts from a linear map of `(condition,
/// noise)`; each step emits a bounded displacement that is accumulated from
/// the last observed position.
#[derive(Clone, Debug)]
pub struct Generator {
    init: Linear,
    gru: GruCell,
    out: Linear,
}

impl Generator {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self {
            init: Linear::new(store, &format!("{name}.init"), cfg.cond_dim() + cfg.noise_dim, cfg.decoder_hidden, rng),
            gru: GruCell::new(store, &format!("{name}.gru"), 2, cfg.decoder_hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), cfg.decoder_hidden, 2, rng),
        }
    }

    /// Returns `[n, 2 · steps]` positions laid out `x0 y0 x1 y1 …`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<'t>,
        cond: Var<'t>,
        noise: &Tensor,
        ctx: &GenContext,
        steps: usize,
        max_step: f64,
    ) -> Var<'t> {
        let mut h = self.init.forward(tape, tape.concat(&[cond, tape.constant(noise.clone())], 1)).tanh();
        let mut x = tape.constant(ctx.last_disp.clone());
        let mut pos = tape.constant(ctx.last_pos.clone());
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            h = self.gru.step(tape, x, h);
            let d = self.out.forward(tape, h).tanh().scale(max_step);
            pos = pos.add(d);
            out.push(pos);
            x = d;
        }
        tape.concat(&out, 1)
    }
}

/// `n_G` independently parameterised generators.
#[derive(Clone, Debug)]
pub struct GeneratorBank {
    pub generators: Vec<Generator>,
    pub steps: usize,
    pub max_step: f64,
}

impl GeneratorBank {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let generators = (0..cfg.n_g).map(|g| Generator::new(store, &format!("{name}/{g}"), cfg, rng)).collect();
        Self { generators, steps: cfg.t_fut, max_step: cfg.max_step }
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Runs generator `which[i]` on row `i` of `cond`, `noise` and `ctx`.
    pub fn forward_mixed<'t>(
        &self,
        tape: &'t Tape<'t>,
        which: &[usize],
        cond: Var<'t>,
        noise: &Tensor,
        ctx: &GenContext,
    ) -> Result<Var<'t>> {
        let n_g = self.len();
        if let Some(&bad) = which.iter().find(|&&g| g >= n_g) {
            return Err(Error::GeneratorIndex { index: bad, n_g });
        }
        let mut parts = Vec::new();
        let mut order = Vec::with_capacity(which.len());
        for g in 0..n_g {
            let rows: Vec<usize> = (0..which.len()).filter(|&i| which[i] == g).collect();
            if rows.is_empty() {
                continue;
            }
            let z = Tensor::new(vec![rows.len(), noise.row_len()], rows.iter().flat_map(|&i| noise.row(i).to_vec()).collect());
            parts.push(self.generators[g].forward(
                tape,
                cond.gather_rows(&rows),
                &z,
                &ctx.rows(&rows),
                self.steps,
                self.max_step,
            ));
            order.extend(rows);
        }
        let stacked = tape.concat(&parts, 0);
        let mut inverse = vec![0; order.len()];
        for (pos, &row) in order.iter().enumerate() {
            inverse[row] = pos;
        }
        Ok(stacked.gather_rows(&inverse))
    }
}

/// Realness and generator-class outputs of the discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput {
    pub realness: f64,
    pub class_logits: Vec<f64>,
}

/// Discriminator inputs that do not depend on the trajectory under test.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscContext {
    /// Step-major `[n, 2]` observed displacement batches.
    pub observed: Vec<Tensor>,
    pub last_pos: Tensor,
    /// `[n, 1, rows, cols]` scene rasters at the last observed position.
    pub rasters: Tensor,
}

/// Encodes (observed context, trajectory) into its own feature `C^dis` with
/// parameters separate from the generator side, then scores realness and
/// classifies which generator produced the trajectory.
#[derive(Clone, Debug)]
pub struct Discriminator {
    gru: GruCell,
    physical: PhysicalEncoder,
    feature: Linear,
    real: Linear,
    classifier: Mlp,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let dh = cfg.disc_hidden;
        Self {
            gru: GruCell::new(store, &format!("{name}/traj.gru"), 2, dh, rng),
            physical: PhysicalEncoder::new(store, &format!("{name}/physical"), cfg.physical_dim, rng),
            feature: Linear::new(store, &format!("{name}/feature"), dh + cfg.physical_dim, dh, rng),
            real: Linear::new(store, &format!("{name}/real"), dh, 1, rng),
            classifier: Mlp::new(store, &format!("{name}/cls"), dh, dh, cfg.n_g, rng),
        }
    }

    /// Returns `([n] realness logits, [n, n_G] class logits)`.
    pub fn forward<'t>(&self, tape: &'t Tape<'t>, ctx: &DiscContext, traj: Var<'t>) -> (Var<'t>, Var<'t>) {
        let n = ctx.last_pos.rows();
        let steps = traj.shape()[1] / 2;
        let mut h = tape.constant(Tensor::zeros(&[n, self.gru.hidden]));
        for s in &ctx.observed {
            h = self.gru.step(tape, tape.constant(s.clone()), h);
        }
        let mut prev = tape.constant(ctx.last_pos.clone());
        for t in 0..steps {
            let p = traj.slice(1, 2 * t, 2);
            h = self.gru.step(tape, p.sub(prev), h);
            prev = p;
        }
        let fmap = self.physical.forward(tape, tape.constant(ctx.rasters.clone()));
        let shape = fmap.shape();
        let hw = shape[2] * shape[3];
        let scene = fmap.reshape(&[n, shape[1], hw]).sum_last().scale(1.0 / hw as f64);
        let feature = self.feature.forward(tape, tape.concat(&[h, scene], 1)).tanh();
        let realness = self.real.forward(tape, feature).reshape(&[n]);
        (realness, self.classifier.forward(tape, feature))
    }

    /// Single-trajectory evaluation.
    pub fn discriminate(&self, store: &ParamStore, ctx: &DiscContext, traj: &[Point]) -> DiscriminatorOutput {
        let tape = Tape::new(store);
        let t = tape.constant(Tensor::new(vec![1, 2 * traj.len()], traj.iter().flat_map(|p| [p.x, p.y]).collect()));
        let (r, c) = self.forward(&tape, ctx, t);
        DiscriminatorOutput { realness: 1.0 / (1.0 + (-r.value().item()).exp()), class_logits: c.value().data().to_vec() }
    }

    pub fn observed_steps(tracks: &[Vec<Point>]) -> Vec<Tensor> {
        SocialEncoder::step_tensors(tracks)
    }
}

const MAGIC: &[u8; 8] = b"MGTRAJCK";
const VERSION: u32 = 1;

/// Writes a single-file checkpoint: magic, version, the configuration as
/// JSON, then every parameter block keyed by name.
pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.get(id);
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Contents of a checkpoint file.
pub struct Checkpoint {
    pub config: ModelConfig,
    pub blocks: BTreeMap<String, Tensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.buf.len() * 8 + 64)
            .ok_or_else(|| Error::Checkpoint("implausible length".into()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint (bad magic header)", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.len()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.len()?;
    let mut blocks = BTreeMap::new();
    for _ in 0..count {
        let n = r.len()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let total: usize = shape.iter().product();
        let raw = r.take(total.checked_mul(8).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        blocks.insert(name, Tensor::new(shape, data));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { config, blocks })
}
