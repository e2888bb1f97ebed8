//! Trajectory files, sliding-window episodes and synthetic intersections.
//!
//! On-disk formats (all plain text, whitespace separated):
//!
//! - trajectories: one `frame agent_id x y` record per line
//! - scene: a `width height cell_size origin_x origin_y` header followed by
//!   row-major `0`/`1` cell values
//! - metadata sidecar: `key = value` lines
//!
//! A dataset directory holds `trajectories.txt`, `scene.txt` and `meta.txt`.
//! Synthetic dumps store every annotated future of agent `a` as an extra track
//! `a#k` covering the future frames, `a#0` being the realized one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{AgentTrack, Point, SceneGrid, TrajectoryEpisode, OBSTACLE, WALKABLE};
use crate::{Error, Result};

pub const TRAJECTORY_FILE: &str = "trajectories.txt";
pub const SCENE_FILE: &str = "scene.txt";
pub const META_FILE: &str = "meta.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct TrackRow {
    pub frame: i64,
    pub agent_id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RawTrackTable {
    /// Sorted by `(agent_id, frame)`.
    pub rows: Vec<TrackRow>,
    pub frame_stride: i64,
    pub warnings: Vec<String>,
}

impl RawTrackTable {
    pub fn agent_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.agent_id.as_str()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Separator {
    /// Any run of spaces or tabs.
    #[default]
    Whitespace,
    Tab,
}

/// How to read a trajectory file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackFormat {
    pub separator: Separator,
    /// Multiplier taking file units to meters.
    pub scale: f64,
    /// Overrides the inferred stride.
    pub frame_stride: Option<i64>,
}

impl Default for TrackFormat {
    fn default() -> Self {
        Self { separator: Separator::Whitespace, scale: 1.0, frame_stride: None }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_track_table(path: impl AsRef<Path>, format: &TrackFormat) -> Result<RawTrackTable> {
    let path = path.as_ref();
    parse_track_table(&read_text(path)?, format, &path.display().to_string())
}

pub fn parse_track_table(text: &str, format: &TrackFormat, source_name: &str) -> Result<RawTrackTable> {
    let parse_err = |line: usize, message: String| Error::Parse { source_name: source_name.to_string(), line, message };
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    // agent -> (last frame seen, current segment number)
    let mut segments: BTreeMap<String, (i64, usize)> = BTreeMap::new();
    let mut seen: BTreeMap<(i64, String), usize> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = match format.separator {
            Separator::Whitespace => line.split_whitespace().collect(),
            Separator::Tab => line.split('\t').map(str::trim).collect(),
        };
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let frame = parse_frame(fields[0]).ok_or_else(|| parse_err(line_no, format!("bad frame '{}'", fields[0])))?;
        let x: f64 = fields[2].parse().map_err(|_| parse_err(line_no, format!("bad x '{}'", fields[2])))?;
        let y: f64 = fields[3].parse().map_err(|_| parse_err(line_no, format!("bad y '{}'", fields[3])))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(parse_err(line_no, "non-finite coordinate".into()));
        }
        let base_id = normalize_id(fields[1]);

        let entry = segments.entry(base_id.clone()).or_insert((frame, 0));
        if frame < entry.0 {
            entry.1 += 1;
            let msg = format!("{source_name}:{line_no}: agent {base_id} frame {frame} after frame {}; track split", entry.0);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        entry.0 = frame;
        let agent_id = if entry.1 == 0 { base_id } else { format!("{base_id}~{}", entry.1) };

        if let Some(first) = seen.insert((frame, agent_id.clone()), line_no) {
            return Err(parse_err(line_no, format!("duplicate row for frame {frame}, agent {agent_id} (first at line {first})")));
        }
        rows.push(TrackRow { frame, agent_id, x: x * format.scale, y: y * format.scale });
    }

    rows.sort_by(|a, b| a.agent_id.cmp(&b.agent_id).then(a.frame.cmp(&b.frame)));
    let frame_stride = match format.frame_stride {
        Some(s) if s > 0 => s,
        Some(s) => return Err(Error::invalid("frame_stride", format!("must be positive, got {s}"))),
        None => infer_stride(&rows),
    };
    Ok(RawTrackTable { rows, frame_stride, warnings })
}

fn parse_frame(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    // ETH/UCY distributions often write integral frames as floats.
    let v: f64 = s.parse().ok()?;
    (v.fract() == 0.0 && v.abs() < 9e15).then_some(v as i64)
}

fn normalize_id(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 9e15 && s.contains('.') => format!("{}", v as i64),
        _ => s.to_string(),
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn infer_stride(rows: &[TrackRow]) -> i64 {
    let mut g = 0;
    for w in rows.windows(2) {
        if w[0].agent_id == w[1].agent_id {
            g = gcd(g, w[1].frame - w[0].frame);
        }
    }
    if g == 0 {
        1
    } else {
        g
    }
}

pub fn format_track_table(rows: &[TrackRow]) -> String {
    let mut out = String::new();
    for r in rows {
        writeln!(out, "{} {} {} {}", r.frame, r.agent_id, r.x, r.y).unwrap();
    }
    out
}

/// Sliding-window parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSpec {
    pub t_obs: usize,
    pub t_fut: usize,
    pub scene_id: String,
    pub timestep_duration: f64,
}

/// Cuts a table into episodes, one per window start at which at least one
/// agent is present for all `t_obs + t_fut` frames. Such agents become
/// targets with a single future; agents present for the whole observation
/// but not the whole future are kept as neighbors.
pub fn window_episodes(table: &RawTrackTable, spec: &WindowSpec) -> Result<Vec<TrajectoryEpisode>> {
    let total = spec.t_obs + spec.t_fut;
    if spec.t_obs < 1 || spec.t_fut < 1 || total < 2 {
        return Err(Error::invalid("window", "t_obs and t_fut must be at least 1"));
    }
    let stride = table.frame_stride.max(1);
    let mut tracks: BTreeMap<&str, BTreeMap<i64, Point>> = BTreeMap::new();
    for r in &table.rows {
        tracks.entry(r.agent_id.as_str()).or_default().insert(r.frame, Point::new(r.x, r.y));
    }
    let starts: BTreeSet<i64> = table.rows.iter().map(|r| r.frame).collect();

    let mut episodes = Vec::new();
    for &start in &starts {
        let frames: Vec<i64> = (0..total as i64).map(|k| start + k * stride).collect();
        let mut agents = Vec::new();
        for (&id, track) in &tracks {
            let take = |fs: &[i64]| fs.iter().map(|f| track.get(f).copied()).collect::<Option<Vec<Point>>>();
            let Some(observed) = take(&frames[..spec.t_obs]) else { continue };
            let futures = take(&frames[spec.t_obs..]).into_iter().collect();
            agents.push(AgentTrack { agent_id: id.to_string(), observed, futures });
        }
        if agents.iter().any(AgentTrack::is_target) {
            episodes.push(TrajectoryEpisode {
                id: format!("{}:{start}", spec.scene_id),
                scene_id: spec.scene_id.clone(),
                timestep_duration: spec.timestep_duration,
                t_obs: spec.t_obs,
                t_fut: spec.t_fut,
                agents,
            });
        }
    }
    Ok(episodes)
}

pub fn format_scene(scene: &SceneGrid) -> String {
    let mut out = format!("{} {} {} {} {}\n", scene.width, scene.height, scene.cell_size, scene.origin.x, scene.origin.y);
    for row in scene.cells.chunks(scene.width) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_scene(text: &str, source_name: &str) -> Result<SceneGrid> {
    let parse_err = |line: usize, message: String| Error::Parse { source_name: source_name.to_string(), line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 {
        return Err(parse_err(hl + 1, "header must be 'width height cell_size origin_x origin_y'".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(hl + 1, format!("bad number '{s}'")));
    let width: usize = h[0].parse().map_err(|_| parse_err(hl + 1, format!("bad width '{}'", h[0])))?;
    let height: usize = h[1].parse().map_err(|_| parse_err(hl + 1, format!("bad height '{}'", h[1])))?;
    let cell_size = num(h[2])?;
    let origin = Point::new(num(h[3])?, num(h[4])?);
    let mut cells = Vec::with_capacity(width * height);
    for (ln, line) in lines {
        for tok in line.split_whitespace() {
            match tok {
                "0" => cells.push(WALKABLE),
                "1" => cells.push(OBSTACLE),
                other => return Err(parse_err(ln + 1, format!("cell value '{other}' is not 0 or 1"))),
            }
        }
    }
    SceneGrid::new(width, height, cell_size, origin, cells)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneGrid> {
    let path = path.as_ref();
    parse_scene(&read_text(path)?, &path.display().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    TJunction,
    Crossroad,
}

impl Layout {
    pub fn n_branches(self) -> usize {
        match self {
            Layout::TJunction => 2,
            Layout::Crossroad => 3,
        }
    }

    /// Unit heading of each outgoing arm, in branch order.
    pub fn branch_dirs(self) -> &'static [Point] {
        const LEFT: Point = Point::new(-1.0, 0.0);
        const RIGHT: Point = Point::new(1.0, 0.0);
        const STRAIGHT: Point = Point::new(0.0, 1.0);
        match self {
            Layout::TJunction => &[LEFT, RIGHT],
            Layout::Crossroad => &[LEFT, STRAIGHT, RIGHT],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::TJunction => "t_junction",
            Layout::Crossroad => "crossroad",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "t_junction" => Some(Layout::TJunction),
            "crossroad" => Some(Layout::Crossroad),
            _ => None,
        }
    }
}

/// Synthetic intersection dataset. Agents walk north up the incoming arm,
/// reach the junction centre during their first future step and leave along
/// one outgoing arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub layout: Layout,
    pub corridor_width: f64,
    pub arm_length: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub branch_probs: Vec<f64>,
    pub n_agents: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub t_obs: usize,
    pub t_fut: usize,
    pub timestep_duration: f64,
    pub cell_size: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            layout: Layout::TJunction,
            corridor_width: 2.0,
            arm_length: 12.0,
            speed_mean: 1.2,
            speed_std: 0.1,
            branch_probs: vec![0.5, 0.5],
            n_agents: 200,
            noise_std: 0.05,
            seed: 0,
            t_obs: 8,
            t_fut: 12,
            timestep_duration: 0.4,
            cell_size: 0.25,
        }
    }
}

impl SynthSpec {
    pub fn crossroad() -> Self {
        Self { layout: Layout::Crossroad, branch_probs: vec![1.0 / 3.0; 3], ..Self::default() }
    }

    fn step_bounds(&self) -> (f64, f64) {
        let lo = (self.speed_mean * 0.5) * self.timestep_duration;
        let hi = (self.speed_mean * 1.5) * self.timestep_duration;
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layout.n_branches();
        if self.branch_probs.len() != n {
            return Err(Error::invalid(
                "branch_probs",
                format!("{} expects {n} entries, found {}", self.layout.name(), self.branch_probs.len()),
            ));
        }
        if self.branch_probs.iter().any(|&p| p.is_nan() || p < 0.0) || (self.branch_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("branch_probs", "must be non-negative and sum to 1"));
        }
        for (name, v) in [
            ("corridor_width", self.corridor_width),
            ("arm_length", self.arm_length),
            ("speed_mean", self.speed_mean),
            ("timestep_duration", self.timestep_duration),
            ("cell_size", self.cell_size),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(self.speed_std >= 0.0 && self.noise_std >= 0.0) {
            return Err(Error::invalid("speed_std", "standard deviations must be non-negative"));
        }
        if self.t_obs < 1 || self.t_fut < 1 {
            return Err(Error::invalid("t_obs", "t_obs and t_fut must be at least 1"));
        }
        if self.n_agents < 1 {
            return Err(Error::invalid("n_agents", "must be at least 1"));
        }
        if self.jitter_bound() <= 0.0 {
            return Err(Error::invalid("corridor_width", "corridor must be wider than two scene cells"));
        }
        let (_, hi) = self.step_bounds();
        let reach = self.arm_length - self.corridor_width / 2.0 - self.cell_size;
        if self.t_obs as f64 * hi > reach || self.t_fut as f64 * hi > reach {
            return Err(Error::invalid(
                "arm_length",
                format!(
                    "arms of {} m cannot hold {} observed and {} future steps at up to {hi:.3} m per step",
                    self.arm_length, self.t_obs, self.t_fut
                ),
            ));
        }
        Ok(())
    }

    /// Frames reserved per episode in a dump.
    fn frame_block(&self) -> i64 {
        (self.t_obs + self.t_fut + 5) as i64
    }

    fn jitter_bound(&self) -> f64 {
        self.corridor_width / 2.0 - self.cell_size
    }

    pub fn scene(&self) -> SceneGrid {
        let n = (2.0 * self.arm_length / self.cell_size).ceil() as usize;
        let origin = Point::new(-self.arm_length, -self.arm_length);
        let mut scene = SceneGrid::open(n, n, self.cell_size, origin);
        let hw = self.corridor_width / 2.0;
        for r in 0..n {
            for c in 0..n {
                let p = scene.cell_center(r, c);
                let stem = p.x.abs() <= hw && p.y <= hw;
                let bar = p.y.abs() <= hw;
                let north = self.layout == Layout::Crossroad && p.x.abs() <= hw;
                scene.cells[r * n + c] = if stem || bar || north { WALKABLE } else { OBSTACLE };
            }
        }
        scene
    }

    fn centerline(&self, branch: usize, s: f64) -> Point {
        // Arc length s = 0 at the junction centre.
        if s <= 0.0 {
            Point::new(0.0, s)
        } else {
            let d = self.layout.branch_dirs()[branch];
            Point::new(d.x * s, d.y * s)
        }
    }
}

/// Generates episodes plus the scene they live in. Deterministic in `seed`.
pub fn synthesize(spec: &SynthSpec) -> Result<(Vec<TrajectoryEpisode>, SceneGrid)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speed = Normal::new(spec.speed_mean, spec.speed_std).map_err(|e| Error::invalid("speed_std", e.to_string()))?;
    let jitter = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid("noise_std", e.to_string()))?;
    let bound = spec.jitter_bound();
    let (lo, hi) = spec.step_bounds();
    let cumulative: Vec<f64> = spec
        .branch_probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let live: Vec<usize> = (0..spec.branch_probs.len()).filter(|&b| spec.branch_probs[b] > 0.0).collect();

    let jittered = |p: Point, rng: &mut ChaCha8Rng| {
        let jx = jitter.sample(rng).clamp(-bound, bound);
        let jy = jitter.sample(rng).clamp(-bound, bound);
        Point::new(p.x + jx, p.y + jy)
    };

    let mut episodes = Vec::with_capacity(spec.n_agents);
    for i in 0..spec.n_agents {
        let step = (speed.sample(&mut rng) * spec.timestep_duration).clamp(lo, hi);
        let u: f64 = rng.random();
        let u = u.min(0.999);
        let pick: f64 = rng.random();
        let realized = cumulative.iter().position(|&c| pick < c).unwrap_or(spec.branch_probs.len() - 1);
        let realized = if spec.branch_probs[realized] > 0.0 { realized } else { *live.last().unwrap() };

        let s_last = -u * step;
        let observed: Vec<Point> = (0..spec.t_obs)
            .map(|k| {
                let s = s_last - (spec.t_obs - 1 - k) as f64 * step;
                jittered(spec.centerline(0, s), &mut rng)
            })
            .collect();
        let mut order = vec![realized];
        order.extend(live.iter().copied().filter(|&b| b != realized));
        let futures = order
            .iter()
            .map(|&b| (1..=spec.t_fut).map(|k| jittered(spec.centerline(b, s_last + k as f64 * step), &mut rng)).collect())
            .collect();
        episodes.push(TrajectoryEpisode {
            id: format!("{}:{}", spec.layout.name(), i as i64 * spec.frame_block()),
            scene_id: spec.layout.name().to_string(),
            timestep_duration: spec.timestep_duration,
            t_obs: spec.t_obs,
            t_fut: spec.t_fut,
            agents: vec![AgentTrack { agent_id: i.to_string(), observed, futures }],
        });
    }
    Ok((episodes, spec.scene()))
}

/// Index of the outgoing arm a trajectory ends on, by final heading from the
/// junction centre.
pub fn branch_of(layout: Layout, end: Point) -> usize {
    layout
        .branch_dirs()
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1.x * end.x + a.1.y * end.y).total_cmp(&(b.1.x * end.x + b.1.y * end.y)))
        .map(|(i, _)| i)
        .unwrap()
}

/// Key-value sidecar describing a dataset directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub entries: BTreeMap<String, String>,
}

impl DatasetMeta {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::invalid(key, format!("cannot parse '{v}'"))),
        }
    }

    pub fn format(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message: "expected 'key = value'".into(),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }
}

/// Episodes plus the scene they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<TrajectoryEpisode>,
    pub scene: SceneGrid,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Out-of-distribution radius recorded with the data, if any.
    pub fn ood_eps(&self) -> Option<f64> {
        self.meta.get_parsed("ood_eps").ok().flatten()
    }

    pub fn find(&self, id: &str) -> Option<&TrajectoryEpisode> {
        self.episodes.iter().find(|e| e.id == id)
    }
}

fn synth_meta(spec: &SynthSpec, frame_block: i64) -> DatasetMeta {
    let probs: Vec<String> = spec.branch_probs.iter().map(|p| p.to_string()).collect();
    let mut e = BTreeMap::new();
    for (k, v) in [
        ("kind", "synthetic".to_string()),
        ("layout", spec.layout.name().to_string()),
        ("branch_probs", probs.join(",")),
        ("seed", spec.seed.to_string()),
        ("n_agents", spec.n_agents.to_string()),
        ("corridor_width", spec.corridor_width.to_string()),
        ("arm_length", spec.arm_length.to_string()),
        ("speed_mean", spec.speed_mean.to_string()),
        ("speed_std", spec.speed_std.to_string()),
        ("noise_std", spec.noise_std.to_string()),
        ("t_obs", spec.t_obs.to_string()),
        ("t_fut", spec.t_fut.to_string()),
        ("timestep_duration", spec.timestep_duration.to_string()),
        ("frame_stride", "1".to_string()),
        ("frame_block", frame_block.to_string()),
        ("scene_id", spec.layout.name().to_string()),
        ("ood_eps", (spec.corridor_width / 2.0).to_string()),
    ] {
        e.insert(k.to_string(), v);
    }
    DatasetMeta { entries: e }
}

/// Serialises synthetic episodes as trajectory, scene and metadata files.
pub fn write_synthetic(dir: impl AsRef<Path>, spec: &SynthSpec, episodes: &[TrajectoryEpisode], scene: &SceneGrid) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frame_block = spec.frame_block();
    let mut rows = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        let base = i as i64 * frame_block;
        for a in &ep.agents {
            let realized = a.futures.first();
            for (k, p) in a.observed.iter().chain(realized.into_iter().flatten()).enumerate() {
                rows.push(TrackRow { frame: base + k as i64, agent_id: a.agent_id.clone(), x: p.x, y: p.y });
            }
            for (j, fut) in a.futures.iter().enumerate() {
                for (k, p) in fut.iter().enumerate() {
                    rows.push(TrackRow {
                        frame: base + (ep.t_obs + k) as i64,
                        agent_id: format!("{}#{j}", a.agent_id),
                        x: p.x,
                        y: p.y,
                    });
                }
            }
        }
    }
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(TRAJECTORY_FILE, format_track_table(&rows))?;
    write(SCENE_FILE, format_scene(scene))?;
    write(META_FILE, synth_meta(spec, frame_block).format())?;
    Ok(())
}

/// Loads a dataset directory. `meta.txt` is optional for real data; without a
/// scene file an all-walkable scene covering the tracks is used.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::invalid("data", format!("{} is not a directory", dir.display())));
    }
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        DatasetMeta::parse(&read_text(&meta_path)?, &meta_path.display().to_string())?
    } else {
        DatasetMeta { entries: BTreeMap::new() }
    };
    let format = TrackFormat {
        scale: meta.get_parsed("scale")?.unwrap_or(1.0),
        frame_stride: meta.get_parsed("frame_stride")?,
        ..TrackFormat::default()
    };
    let table = load_track_table(dir.join(TRAJECTORY_FILE), &format)?;

    // Split alternative-future tracks off before windowing.
    let (alts, base): (Vec<TrackRow>, Vec<TrackRow>) = table.rows.into_iter().partition(|r| r.agent_id.contains('#'));
    let table = RawTrackTable { rows: base, ..table };

    let scene_path = dir.join(SCENE_FILE);
    let scene = if scene_path.exists() { load_scene(&scene_path)? } else { bounding_scene(&table) };
    let spec = WindowSpec {
        t_obs: meta.get_parsed("t_obs")?.unwrap_or(8),
        t_fut: meta.get_parsed("t_fut")?.unwrap_or(12),
        scene_id: meta.get("scene_id").unwrap_or("scene").to_string(),
        timestep_duration: meta.get_parsed("timestep_duration")?.unwrap_or(0.4),
    };
    let mut episodes = window_episodes(&table, &spec)?;

    if !alts.is_empty() {
        let mut by_agent: BTreeMap<(String, usize), BTreeMap<i64, Point>> = BTreeMap::new();
        for r in &alts {
            let (agent, k) = r.agent_id.split_once('#').unwrap();
            let k: usize = k.parse().map_err(|_| Error::invalid("agent_id", format!("bad future suffix in {}", r.agent_id)))?;
            by_agent.entry((agent.to_string(), k)).or_default().insert(r.frame, Point::new(r.x, r.y));
        }
        let stride = table.frame_stride.max(1);
        for ep in &mut episodes {
            let start: i64 = ep.id.rsplit(':').next().and_then(|s| s.parse().ok()).unwrap_or(0);
            for a in ep.agents.iter_mut().filter(|a| a.is_target()) {
                let mut futures = Vec::new();
                for k in 0.. {
                    let Some(track) = by_agent.get(&(a.agent_id.clone(), k)) else { break };
                    let fut: Option<Vec<Point>> =
                        (0..ep.t_fut).map(|j| track.get(&(start + (ep.t_obs + j) as i64 * stride)).copied()).collect();
                    match fut {
                        Some(f) => futures.push(f),
                        None => break,
                    }
                }
                if !futures.is_empty() {
                    a.futures = futures;
                }
            }
        }
    }
    Ok(Dataset { episodes, scene, meta })
}

fn bounding_scene(table: &RawTrackTable) -> SceneGrid {
    let (mut lo, mut hi) = (Point::new(f64::MAX, f64::MAX), Point::new(f64::MIN, f64::MIN));
    for r in &table.rows {
        lo = Point::new(lo.x.min(r.x), lo.y.min(r.y));
        hi = Point::new(hi.x.max(r.x), hi.y.max(r.y));
    }
    if table.rows.is_empty() {
        return SceneGrid::open(1, 1, 1.0, Point::default());
    }
    let margin = 5.0;
    let cell = 0.5;
    let origin = Point::new((lo.x - margin).floor(), (lo.y - margin).floor());
    let w = ((hi.x + margin - origin.x) / cell).ceil() as usize;
    let h = ((hi.y + margin - origin.y) / cell).ceil() as usize;
    SceneGrid::open(w.max(1), h.max(1), cell, origin)
}
