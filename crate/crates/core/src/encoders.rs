//! Social and physical encoders, attention, and the generator condition.
//!
//! Social attention is scaled dot-product attention: the query comes from the
//! target's social encoding, each key from a neighbor's encoding together
//! with its displacement from the target at the last observed frame. Physical
//! attention uses the same mechanism over the cells of the physical feature
//! map around the target.

use rand::Rng;

use crate::datamodel::{ModelConfig, Point, SceneGrid, TrajectoryEpisode};
use crate::nn::{Conv2d, GruCell, Linear, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Per-step displacements of an observed track; the first entry is zero so the
/// sequence has one element per observed frame.
pub fn displacements(observed: &[Point]) -> Vec<Point> {
    let mut out = Vec::with_capacity(observed.len());
    out.push(Point::default());
    out.extend(observed.windows(2).map(|w| w[1].sub(w[0])));
    out
}

/// `[rows · cols]` occupancy raster centred on `center`; row index grows with
/// `y`, column index with `x`. Cells off the scene read as obstacle.
pub fn crop_raster(scene: &SceneGrid, center: Point, cell: f64, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let dy = (r as f64 - (rows as f64 - 1.0) / 2.0) * cell;
        for c in 0..cols {
            let dx = (c as f64 - (cols as f64 - 1.0) / 2.0) * cell;
            out.push(f64::from(scene.occupancy(Point::new(center.x + dx, center.y + dy))));
        }
    }
    out
}

/// Recurrent encoder over displacement sequences.
#[derive(Clone, Debug)]
pub struct SocialEncoder {
    gru: GruCell,
}

impl SocialEncoder {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self { gru: GruCell::new(store, &format!("{name}.gru"), 2, dim, rng) }
    }

    pub fn dim(&self) -> usize {
        self.gru.hidden
    }

    /// `steps[t]` is a `[n, 2]` displacement batch; returns `[n, dim]`.
    pub fn forward<'t>(&self, tape: &'t Tape<'t>, steps: &[Tensor]) -> Var<'t> {
        let n = steps[0].rows();
        let mut h = tape.constant(Tensor::zeros(&[n, self.dim()]));
        for s in steps {
            h = self.gru.step(tape, tape.constant(s.clone()), h);
        }
        h
    }

    /// Step-major displacement batches for a set of tracks.
    pub fn step_tensors(tracks: &[Vec<Point>]) -> Vec<Tensor> {
        let len = tracks.first().map_or(0, Vec::len);
        (0..len)
            .map(|t| {
                let data = tracks.iter().flat_map(|d| [d[t].x, d[t].y]).collect();
                Tensor::new(vec![tracks.len(), 2], data)
            })
            .collect()
    }
}

/// Three-layer convolutional stack over occupancy rasters.
#[derive(Clone, Debug)]
pub struct PhysicalEncoder {
    layers: Vec<Conv2d>,
}

impl PhysicalEncoder {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..3)
            .map(|i| Conv2d::new(store, &format!("{name}.conv{i}"), if i == 0 { 1 } else { channels }, channels, 3, rng))
            .collect();
        Self { layers }
    }

    pub fn channels(&self) -> usize {
        self.layers.last().unwrap().out_ch
    }

    /// `[n, 1, h, w]` rasters to `[n, channels, h, w]` features.
    pub fn forward<'t>(&self, tape: &'t Tape<'t>, rasters: Var<'t>) -> Var<'t> {
        let mut x = rasters;
        for layer in &self.layers {
            x = layer.forward(tape, x).tanh();
        }
        x
    }
}

/// Feature map produced by [`Encoders::encode_physical`], channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalEncoding {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Scaled dot-product attention scoring.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    query: Linear,
    key: Linear,
}

impl AttentionHead {
    pub fn new(store: &mut ParamStore, name: &str, query_in: usize, key_in: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), query_in, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), key_in, dim, rng),
        }
    }

    /// Attention weights of `keys` rows, grouped by `seg` into `n_seg`
    /// softmax groups; `queries` holds one row per group.
    pub fn weights<'t>(&self, tape: &'t Tape<'t>, queries: Var<'t>, keys: Var<'t>, seg: &[usize], n_seg: usize) -> Var<'t> {
        let q = self.query.forward(tape, queries).gather_rows(seg);
        let k = self.key.forward(tape, keys);
        let scale = 1.0 / (self.query.out_dim as f64).sqrt();
        q.mul(k).sum_last().scale(scale).segment_softmax(seg, n_seg)
    }
}

/// Normalised attention over neighbors and over scene cells.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    /// One weight per neighbor, in the order neighbors were supplied.
    pub social: Vec<f64>,
    /// One weight per feature-map cell, row-major.
    pub physical: Vec<f64>,
}

/// A neighbor as seen by the attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborInput {
    pub encoding: Vec<f64>,
    /// Neighbor position minus target position at the last observed frame.
    pub offset: Point,
}

/// Output of [`Encoders::attend`].
#[derive(Clone, Debug, PartialEq)]
pub struct Attended {
    pub weights: AttentionWeights,
    pub social_summary: Vec<f64>,
    pub physical_summary: Vec<f64>,
}

/// Generator condition `[social summary | physical summary | graph encoding]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionFeature(pub Vec<f64>);

/// Concatenates the three condition segments after checking their sizes.
pub fn build_condition(cfg: &ModelConfig, social: &[f64], physical: &[f64], stg: &[f64]) -> Result<ConditionFeature> {
    for (segment, expected, found) in [
        ("social summary", cfg.social_dim, social.len()),
        ("physical summary", cfg.physical_dim, physical.len()),
        ("spatiotemporal encoding", cfg.stg_dim, stg.len()),
    ] {
        if expected != found {
            return Err(Error::Dimension { segment: segment.into(), expected, found });
        }
    }
    let mut v = Vec::with_capacity(cfg.cond_dim());
    v.extend_from_slice(social);
    v.extend_from_slice(physical);
    v.extend_from_slice(stg);
    Ok(ConditionFeature(v))
}

/// Generator-side encoders.
#[derive(Clone, Debug)]
pub struct Encoders {
    pub social: SocialEncoder,
    pub physical: PhysicalEncoder,
    pub social_attention: AttentionHead,
    pub physical_attention: AttentionHead,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub cell: f64,
}

impl Encoders {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (ds, dp, dk) = (cfg.social_dim, cfg.physical_dim, cfg.attention_dim);
        Self {
            social: SocialEncoder::new(store, &format!("{name}/social"), ds, rng),
            physical: PhysicalEncoder::new(store, &format!("{name}/physical"), dp, rng),
            social_attention: AttentionHead::new(store, &format!("{name}/social_att"), ds, ds + 2, dk, rng),
            physical_attention: AttentionHead::new(store, &format!("{name}/physical_att"), ds, dp, dk, rng),
            grid_rows: cfg.grid_len,
            grid_cols: cfg.grid_wid,
            cell: cfg.graph_cell_size,
        }
    }

    /// Social encodings of every agent in the episode, in agent order.
    pub fn encode_social(&self, store: &ParamStore, ep: &TrajectoryEpisode) -> Vec<Vec<f64>> {
        let tracks: Vec<Vec<Point>> = ep.agents.iter().map(|a| displacements(&a.observed)).collect();
        let tape = Tape::new(store);
        let h = self.social.forward(&tape, &SocialEncoder::step_tensors(&tracks));
        let h = h.value();
        (0..h.rows()).map(|i| h.row(i).to_vec()).collect()
    }

    /// Encodes a square crop `crop_extent` meters wide around `center`,
    /// sampled on the graph grid.
    pub fn encode_physical(&self, store: &ParamStore, scene: &SceneGrid, center: Point, crop_extent: f64) -> PhysicalEncoding {
        let (rows, cols) = (self.grid_rows, self.grid_cols);
        let cell = crop_extent / cols as f64;
        let raster = crop_raster(scene, center, cell, rows, cols);
        let tape = Tape::new(store);
        let x = tape.constant(Tensor::new(vec![1, 1, rows, cols], raster));
        let f = self.physical.forward(&tape, x).value();
        PhysicalEncoding { channels: self.physical.channels(), height: rows, width: cols, data: f.data().to_vec() }
    }

    /// Attention of `target_encoding` over `neighbors` and over the cells of
    /// `physical`.
    pub fn attend(
        &self,
        store: &ParamStore,
        target_encoding: &[f64],
        neighbors: &[NeighborInput],
        physical: &PhysicalEncoding,
    ) -> Attended {
        let tape = Tape::new(store);
        let q = tape.constant(Tensor::new(vec![1, target_encoding.len()], target_encoding.to_vec()));
        let (social, social_summary) = if neighbors.is_empty() {
            (Vec::new(), vec![0.0; self.social.dim()])
        } else {
            let vals = Tensor::from_rows(&neighbors.iter().map(|n| n.encoding.clone()).collect::<Vec<_>>());
            let keys = Tensor::from_rows(
                &neighbors
                    .iter()
                    .map(|n| {
                        let mut k = n.encoding.clone();
                        k.extend([n.offset.x, n.offset.y]);
                        k
                    })
                    .collect::<Vec<_>>(),
            );
            let seg = vec![0; neighbors.len()];
            let w = self.social_attention.weights(&tape, q, tape.constant(keys), &seg, 1);
            let s = tape.constant(vals).scale_rows(w).scatter_rows(&seg, 1);
            (w.value().data().to_vec(), s.value().data().to_vec())
        };
        let hw = physical.height * physical.width;
        let fmap = tape
            .constant(Tensor::new(vec![1, physical.channels, hw], physical.data.clone()))
            .swap_last()
            .reshape(&[hw, physical.channels]);
        let seg = vec![0; hw];
        let w = self.physical_attention.weights(&tape, q, fmap, &seg, 1);
        let p = fmap.scale_rows(w).scatter_rows(&seg, 1);
        Attended {
            weights: AttentionWeights { social, physical: w.value().data().to_vec() },
            social_summary,
            physical_summary: p.value().data().to_vec(),
        }
    }
}
