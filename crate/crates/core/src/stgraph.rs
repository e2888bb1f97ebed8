//! Target-centric fused spatiotemporal graph.
//!
//! Every observed frame becomes a `grid_len × grid_wid` grid of
//! `graph_cell_size` cells centred on the target (world-aligned axes, row
//! index along `y`, column index along `x`). Each cell carries the physical
//! features of the scene under it and, in a second channel group, the sum of
//! the attention-scaled social encodings of the neighbors standing in it.
//! A convolutional GRU runs over the frame sequence; its final state is
//! average-pooled and projected to the graph encoding.

use rand::Rng;

use crate::datamodel::{ModelConfig, Point, SceneGrid, TrajectoryEpisode};
use crate::encoders::{crop_raster, PhysicalEncoder};
use crate::nn::{ConvGruCell, Linear, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Grid geometry shared by graph building and encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell: f64,
}

impl GridSpec {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self { rows: cfg.grid_len, cols: cfg.grid_wid, cell: cfg.graph_cell_size }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell holding a point displaced by `offset` from the grid centre.
    pub fn cell_of(&self, offset: Point) -> Option<(usize, usize)> {
        let c = (offset.x / self.cell + self.cols as f64 / 2.0).floor();
        let r = (offset.y / self.cell + self.rows as f64 / 2.0).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    pub fn center(&self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }
}

/// One grid frame, channel-major `[channels, rows, cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedGraphFrame {
    pub rows: usize,
    pub cols: usize,
    /// Scene feature channels come first, then social channels.
    pub scene_channels: usize,
    pub social_channels: usize,
    pub data: Vec<f64>,
}

impl FusedGraphFrame {
    pub fn channels(&self) -> usize {
        self.scene_channels + self.social_channels
    }

    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.rows + row) * self.cols + col]
    }

    /// Social channel vector of one cell.
    pub fn social_at(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.social_channels).map(|c| self.at(self.scene_channels + c, row, col)).collect()
    }
}

/// Neighbor placement for one `(episode, target)` pair: for each observed
/// frame, the flat cell index each neighbor falls in.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    /// `cells[t][n]` for neighbor `n` at frame `t`.
    pub cells: Vec<Vec<Option<usize>>>,
    /// Scene rasters, one `rows · cols` block per frame.
    pub rasters: Vec<f64>,
}

/// Param-free part of graph construction.
pub fn place(ep: &TrajectoryEpisode, target: usize, neighbors: &[usize], scene: &SceneGrid, grid: &GridSpec) -> Placement {
    let tgt = &ep.agents[target];
    let mut cells = Vec::with_capacity(ep.t_obs);
    let mut rasters = Vec::with_capacity(ep.t_obs * grid.cells());
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
    Placement { cells, rasters }
}

/// Builds the frame sequence of `target` from per-agent social encodings (in
/// episode agent order) and the social attention weights of `neighbors`.
#[allow(clippy::too_many_arguments)]
pub fn build_graph_sequence(
    store: &ParamStore,
    physical: &PhysicalEncoder,
    ep: &TrajectoryEpisode,
    target: usize,
    neighbors: &[usize],
    social: &[Vec<f64>],
    weights: &[f64],
    scene: &SceneGrid,
    grid: &GridSpec,
) -> Vec<FusedGraphFrame> {
    assert_eq!(neighbors.len(), weights.len(), "one attention weight per neighbor");
    let placement = place(ep, target, neighbors, scene, grid);
    let hw = grid.cells();
    let ds = social.first().map_or(0, Vec::len);
    let tape = Tape::new(store);
    let rasters = tape.constant(Tensor::new(vec![ep.t_obs, 1, grid.rows, grid.cols], placement.rasters.clone()));
    let feats = physical.forward(&tape, rasters).value();
    let dp = physical.channels();
    (0..ep.t_obs)
        .map(|t| {
            let mut data = feats.row(t).to_vec();
            let mut soc = vec![0.0; ds * hw];
            for (n, cell) in placement.cells[t].iter().enumerate() {
                if let Some(cell) = cell {
                    for (c, v) in social[neighbors[n]].iter().enumerate() {
                        soc[c * hw + cell] += v * weights[n];
                    }
                }
            }
            data.extend(soc);
            FusedGraphFrame { rows: grid.rows, cols: grid.cols, scene_channels: dp, social_channels: ds, data }
        })
        .collect()
}

/// Convolutional-recurrent encoder of a frame sequence.
#[derive(Clone, Debug)]
pub struct StGraphEncoder {
    cell: ConvGruCell,
    proj: Linear,
    pub in_channels: usize,
}

impl StGraphEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let in_channels = cfg.physical_dim + cfg.social_dim;
        Self {
            cell: ConvGruCell::new(store, &format!("{name}.cell"), in_channels, cfg.stg_hidden, 3, rng),
            proj: Linear::new(store, &format!("{name}.proj"), cfg.stg_hidden, cfg.stg_dim, rng),
            in_channels,
        }
    }

    /// `frames` is `[batch · steps, channels, rows, cols]` ordered batch-major.
    pub fn forward<'t>(&self, tape: &'t Tape<'t>, frames: Var<'t>, batch: usize, steps: usize) -> Var<'t> {
        let shape = frames.shape();
        let (rows, cols) = (shape[2], shape[3]);
        let mut h = tape.constant(Tensor::zeros(&[batch, self.cell.hidden, rows, cols]));
        for t in 0..steps {
            let idx: Vec<usize> = (0..batch).map(|b| b * steps + t).collect();
            h = self.cell.step(tape, frames.gather_rows(&idx), h);
        }
        let pooled = h.reshape(&[batch, self.cell.hidden, rows * cols]).sum_last().scale(1.0 / (rows * cols) as f64);
        self.proj.forward(tape, pooled)
    }

    pub fn encode_graph_sequence(&self, store: &ParamStore, frames: &[FusedGraphFrame]) -> Result<Vec<f64>> {
        let first = frames.first().ok_or_else(|| Error::invalid("frames", "empty frame sequence"))?;
        for (t, f) in frames.iter().enumerate() {
            if (f.rows, f.cols, f.channels()) != (first.rows, first.cols, first.channels())
                || f.data.len() != f.channels() * f.rows * f.cols
            {
                return Err(Error::invalid("frames", format!("frame {t} shape differs from frame 0")));
            }
        }
        if first.channels() != self.in_channels {
            return Err(Error::Dimension {
                segment: "graph frame channels".into(),
                expected: self.in_channels,
                found: first.channels(),
            });
        }
        let data: Vec<f64> = frames.iter().flat_map(|f| f.data.iter().copied()).collect();
        let tape = Tape::new(store);
        let x = tape.constant(Tensor::new(vec![frames.len(), first.channels(), first.rows, first.cols], data));
        Ok(self.forward(&tape, x, 1, frames.len()).value().data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::AgentTrack;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec { rows: 7, cols: 7, cell: 1.0 }
    }

    #[test]
    fn grid_arithmetic() {
        let g = grid();
        assert_eq!(g.cell_of(Point::default()), Some((3, 3)));
        assert_eq!(g.center(), (3, 3));
        assert_eq!(g.cell_of(Point::new(2.0, 0.0)), Some((3, 5)));
        assert_eq!(g.cell_of(Point::new(5.0, 0.0)), None);
        assert_eq!(g.cell_of(Point::new(0.0, -3.4)), Some((0, 3)));
        assert_eq!(g.cell_of(Point::new(0.0, 3.5)), None);
    }

    fn setup() -> (ParamStore, PhysicalEncoder, StGraphEncoder, ModelConfig) {
        let cfg = ModelConfig { social_dim: 3, physical_dim: 2, stg_hidden: 3, stg_dim: 4, ..Default::default() };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phys = PhysicalEncoder::new(&mut store, "phys", cfg.physical_dim, &mut rng);
        let enc = StGraphEncoder::new(&mut store, "stg", &cfg, &mut rng);
        (store, phys, enc, cfg)
    }

    fn walker(id: &str, start: Point) -> AgentTrack {
        AgentTrack {
            agent_id: id.into(),
            observed: (0..8).map(|t| Point::new(start.x + 0.5 * t as f64, start.y)).collect(),
            futures: vec![],
        }
    }

    fn ep(agents: Vec<AgentTrack>) -> TrajectoryEpisode {
        TrajectoryEpisode { id: "e".into(), scene_id: "s".into(), timestep_duration: 0.4, t_obs: 8, t_fut: 12, agents }
    }

    #[test]
    fn lone_target_has_empty_social_channels() {
        let (store, phys, _, _) = setup();
        let scene = SceneGrid::open(60, 60, 0.5, Point::new(-15.0, -15.0));
        let e = ep(vec![walker("a", Point::new(-2.0, 0.0))]);
        let frames = build_graph_sequence(&store, &phys, &e, 0, &[], &[vec![0.1, 0.2, 0.3]], &[], &scene, &grid());
        assert_eq!(frames.len(), 8);
        for f in &frames {
            assert_eq!(f.channels(), 5);
            assert!(f.data[2 * 49..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn neighbor_lands_in_expected_cell() {
        let (store, phys, _, _) = setup();
        let scene = SceneGrid::open(60, 60, 0.5, Point::new(-15.0, -15.0));
        let e =
            ep(vec![walker("a", Point::new(-2.0, 0.0)), walker("b", Point::new(0.0, 0.0)), walker("c", Point::new(3.0, 0.0))]);
        let social = vec![vec![0.0; 3], vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let frames = build_graph_sequence(&store, &phys, &e, 0, &[1, 2], &social, &[0.25, 0.75], &scene, &grid());
        // b is 2 cells east, c is 5 cells east (outside).
        assert_eq!(frames[0].social_at(3, 5), vec![0.25, 0.5, 0.75]);
        let total: f64 = frames[0].data[2 * 49..].iter().sum();
        assert_eq!(total, 0.25 * 6.0);
    }

    #[test]
    fn encoder_contracts() {
        let (store, _, enc, cfg) = setup();
        let zero = FusedGraphFrame { rows: 7, cols: 7, scene_channels: 2, social_channels: 3, data: vec![0.0; 5 * 49] };
        let a = enc.encode_graph_sequence(&store, &vec![zero.clone(); 8]).unwrap();
        let b = enc.encode_graph_sequence(&store, &vec![zero.clone(); 8]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), cfg.stg_dim);
        assert_eq!(enc.encode_graph_sequence(&store, &[zero.clone()]).unwrap().len(), cfg.stg_dim);
        assert!(enc.encode_graph_sequence(&store, &[]).is_err());
        let small = FusedGraphFrame { rows: 5, cols: 5, scene_channels: 2, social_channels: 3, data: vec![0.0; 5 * 25] };
        assert!(enc.encode_graph_sequence(&store, &[zero, small]).is_err());
    }

    #[test]
    fn encoder_is_order_sensitive() {
        let (store, _, enc, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<FusedGraphFrame> = (0..4)
            .map(|_| FusedGraphFrame {
                rows: 7,
                cols: 7,
                scene_channels: 2,
                social_channels: 3,
                data: (0..5 * 49).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let mut reversed = frames.clone();
        reversed.reverse();
        let a = enc.encode_graph_sequence(&store, &frames).unwrap();
        let b = enc.encode_graph_sequence(&store, &reversed).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6, "diff {diff}");
    }
}
