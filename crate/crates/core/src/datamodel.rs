//! Domain types shared by every other module.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Error;

/// World position in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

pub type Trajectory = Vec<Point>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: String,
    pub observed: Trajectory,
    /// Annotated futures. Real data carries one; synthetic multi-future data
    /// carries one per manifold with the realized future first.
    pub futures: Vec<Trajectory>,
}

impl AgentTrack {
    pub fn last_observed(&self) -> Point {
        *self.observed.last().expect("observed track is never empty")
    }

    pub fn is_target(&self) -> bool {
        !self.futures.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEpisode {
    pub id: String,
    pub scene_id: String,
    pub timestep_duration: f64,
    pub t_obs: usize,
    pub t_fut: usize,
    pub agents: Vec<AgentTrack>,
}

impl TrajectoryEpisode {
    /// Indices of agents that carry at least one future.
    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.agents.iter().enumerate().filter(|(_, a)| a.is_target()).map(|(i, _)| i)
    }

    pub fn agent_index(&self, agent_id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.agent_id == agent_id)
    }

    /// Every position of every agent shifted by `offset`.
    pub fn translated(&self, offset: Point) -> Self {
        let mut ep = self.clone();
        for a in &mut ep.agents {
            for p in a.observed.iter_mut().chain(a.futures.iter_mut().flatten()) {
                *p = p.add(offset);
            }
        }
        ep
    }
}

/// One broken invariant, located by agent and field.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub agent_id: Option<String>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.agent_id {
            Some(a) => write!(f, "agent {a}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Reports every broken episode invariant; an empty list means valid.
pub fn validate_episode(ep: &TrajectoryEpisode) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |agent: Option<&str>, field: String, message: String| {
        out.push(Violation { agent_id: agent.map(str::to_string), field, message });
    };
    if ep.t_obs < 1 {
        push(None, "t_obs".into(), "must be at least 1".into());
    }
    if ep.t_fut < 1 {
        push(None, "t_fut".into(), "must be at least 1".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    for a in &ep.agents {
        let id = Some(a.agent_id.as_str());
        if !seen.insert(a.agent_id.as_str()) {
            push(id, "agent_id".into(), "duplicate within episode".into());
        }
        if a.observed.len() != ep.t_obs {
            push(id, "observed".into(), format!("has {} positions, expected t_obs = {}", a.observed.len(), ep.t_obs));
        }
        for (t, p) in a.observed.iter().enumerate() {
            if !p.is_finite() {
                push(id, format!("observed[{t}]"), "non-finite coordinate".into());
            }
        }
        for (k, fut) in a.futures.iter().enumerate() {
            if fut.len() != ep.t_fut {
                push(id, format!("futures[{k}]"), format!("has {} positions, expected t_fut = {}", fut.len(), ep.t_fut));
            }
            for (t, p) in fut.iter().enumerate() {
                if !p.is_finite() {
                    push(id, format!("futures[{k}][{t}]"), "non-finite coordinate".into());
                }
            }
        }
    }
    out
}

pub const WALKABLE: u8 = 0;
pub const OBSTACLE: u8 = 1;

/// Binary semantic raster. Cell `(row, col)` covers
/// `[origin.x + col·cell_size, +cell_size) × [origin.y + row·cell_size, +cell_size)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub origin: Point,
    pub cells: Vec<u8>,
}

impl SceneGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, origin: Point, cells: Vec<u8>) -> Result<Self, Error> {
        let grid = Self { width, height, cell_size, origin, cells };
        grid.check()?;
        Ok(grid)
    }

    /// An all-walkable scene.
    pub fn open(width: usize, height: usize, cell_size: f64, origin: Point) -> Self {
        Self { width, height, cell_size, origin, cells: vec![WALKABLE; width * height] }
    }

    pub fn check(&self) -> Result<(), Error> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::invalid("scene", "width and height must be at least 1"));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::invalid("scene", "cell_size must be positive"));
        }
        if self.cells.len() != self.width * self.height {
            return Err(Error::invalid(
                "scene",
                format!("expected {} cells, found {}", self.width * self.height, self.cells.len()),
            ));
        }
        if let Some(v) = self.cells.iter().find(|&&v| v > OBSTACLE) {
            return Err(Error::invalid("scene", format!("cell value {v} is not 0 or 1")));
        }
        Ok(())
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin.x) / self.cell_size).floor();
        let r = ((p.y - self.origin.y) / self.cell_size).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    /// Occupancy at a world position; everything outside the grid is obstacle.
    pub fn occupancy(&self, p: Point) -> u8 {
        self.cell_of(p).map_or(OBSTACLE, |(r, c)| self.get(r, c))
    }

    pub fn is_walkable(&self, p: Point) -> bool {
        self.occupancy(p) == WALKABLE
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(self.origin.x + (col as f64 + 0.5) * self.cell_size, self.origin.y + (row as f64 + 0.5) * self.cell_size)
    }

    pub fn translated(&self, offset: Point) -> Self {
        Self { origin: self.origin.add(offset), ..self.clone() }
    }
}

/// One sampled future with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedSample {
    pub trajectory: Trajectory,
    /// Zero-based generator index.
    pub generator_index: usize,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub agent_id: String,
    pub samples: Vec<PredictedSample>,
}

impl PredictionSet {
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.samples.iter().map(|s| &s.trajectory)
    }
}

/// Architecture and sampling hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "n_G")]
    pub n_g: usize,
    pub noise_dim: usize,
    pub grid_len: usize,
    pub grid_wid: usize,
    pub graph_cell_size: f64,
    /// Social encoder hidden size (`d_s`).
    pub social_dim: usize,
    /// Physical encoder channels (`d_p`).
    pub physical_dim: usize,
    /// Attention key size.
    pub attention_dim: usize,
    /// Spatiotemporal encoder hidden channels.
    pub stg_hidden: usize,
    /// Spatiotemporal encoding size (`d_stg`).
    pub stg_dim: usize,
    pub decoder_hidden: usize,
    pub disc_hidden: usize,
    pub selector_hidden: usize,
    /// Largest per-step displacement a decoder can emit, meters.
    pub max_step: f64,
    pub t_obs: usize,
    pub t_fut: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: f64,
    pub l_mc: usize,
    pub lambda_variety: f64,
    pub lambda_cls: f64,
    pub activation_threshold: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_g: 4,
            noise_dim: 8,
            grid_len: 7,
            grid_wid: 7,
            graph_cell_size: 1.0,
            social_dim: 16,
            physical_dim: 4,
            attention_dim: 8,
            stg_hidden: 4,
            stg_dim: 8,
            decoder_hidden: 32,
            disc_hidden: 32,
            selector_hidden: 32,
            max_step: 2.5,
            t_obs: 8,
            t_fut: 12,
            k: 20,
            sigma: 1.0,
            l_mc: 1,
            lambda_variety: 1.0,
            lambda_cls: 1.0,
            activation_threshold: 0.03,
            learning_rate: 0.0002,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Dimension of the generator condition.
    pub fn cond_dim(&self) -> usize {
        self.social_dim + self.physical_dim + self.stg_dim
    }

    pub fn validate(&self) -> Result<(), Error> {
        let dims = [
            ("n_G", self.n_g),
            ("noise_dim", self.noise_dim),
            ("grid_len", self.grid_len),
            ("grid_wid", self.grid_wid),
            ("social_dim", self.social_dim),
            ("physical_dim", self.physical_dim),
            ("attention_dim", self.attention_dim),
            ("stg_hidden", self.stg_hidden),
            ("stg_dim", self.stg_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("disc_hidden", self.disc_hidden),
            ("selector_hidden", self.selector_hidden),
            ("t_obs", self.t_obs),
            ("t_fut", self.t_fut),
            ("K", self.k),
            ("l_mc", self.l_mc),
        ];
        for (name, v) in dims {
            if v < 1 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.activation_threshold) {
            return Err(Error::invalid("activation_threshold", "must lie in [0, 1)"));
        }
        for (name, v) in [("graph_cell_size", self.graph_cell_size), ("sigma", self.sigma), ("max_step", self.max_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.lambda_variety < 0.0 || self.lambda_cls < 0.0 {
            return Err(Error::invalid("lambda", "loss weights must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode() -> TrajectoryEpisode {
        let observed = (0..8).map(|t| Point::new(t as f64 * 0.5, 0.0)).collect();
        let future = (8..20).map(|t| Point::new(t as f64 * 0.5, 0.0)).collect();
        TrajectoryEpisode {
            id: "e0".into(),
            scene_id: "s".into(),
            timestep_duration: 0.4,
            t_obs: 8,
            t_fut: 12,
            agents: vec![AgentTrack { agent_id: "a".into(), observed, futures: vec![future] }],
        }
    }

    #[test]
    fn well_formed_episode_is_valid() {
        assert!(validate_episode(&episode()).is_empty());
    }

    #[test]
    fn short_observation_names_the_agent() {
        let mut ep = episode();
        ep.agents[0].observed.pop();
        let v = validate_episode(&ep);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].agent_id.as_deref(), Some("a"));
        assert_eq!(v[0].field, "observed");
    }

    #[test]
    fn nan_names_the_frame() {
        let mut ep = episode();
        ep.agents[0].observed[3].y = f64::NAN;
        let v = validate_episode(&ep);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "observed[3]");
    }

    #[test]
    fn duplicate_agent_and_bad_horizon() {
        let mut ep = episode();
        ep.agents.push(ep.agents[0].clone());
        ep.t_fut = 0;
        let v = validate_episode(&ep);
        assert!(v.iter().any(|v| v.field == "agent_id"));
        assert!(v.iter().any(|v| v.field == "t_fut"));
    }

    #[test]
    fn model_config_defaults() {
        let c = ModelConfig::default();
        assert_eq!(c.learning_rate, 0.0002);
        assert_eq!((c.grid_len, c.grid_wid), (7, 7));
        assert_eq!(c.activation_threshold, 0.03);
        assert_eq!((c.k, c.t_obs, c.t_fut, c.l_mc), (20, 8, 12, 1));
        assert_eq!((c.sigma, c.lambda_variety, c.lambda_cls), (1.0, 1.0, 1.0));
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_threshold() {
        let c = ModelConfig { activation_threshold: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { n_g: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn scene_lookup_and_padding() {
        let mut g = SceneGrid::open(4, 3, 0.5, Point::new(-1.0, -1.0));
        g.cells[1 * 4 + 2] = OBSTACLE;
        assert_eq!(g.cell_of(Point::new(0.1, -0.4)), Some((1, 2)));
        assert!(!g.is_walkable(Point::new(0.1, -0.4)));
        assert!(g.is_walkable(Point::new(-0.9, -0.9)));
        assert_eq!(g.occupancy(Point::new(5.0, 0.0)), OBSTACLE);
        assert!(SceneGrid::new(2, 2, 1.0, Point::default(), vec![0, 1, 2, 0]).is_err());
    }
}
