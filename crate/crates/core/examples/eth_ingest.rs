//! Reads a whitespace-separated `frame agent x y` file, cuts it into
//! observation/future windows and summarises the result.
//!
//! `cargo run --example eth_ingest -- [dataset_dir]`

use std::path::PathBuf;

use mgtraj::ingest::{load_dataset, load_track_table, TrackFormat, TRAJECTORY_FILE};
use mgtraj::validate_episode;

fn main() -> mgtraj::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/eth_fixture"));

    let table = load_track_table(dir.join(TRAJECTORY_FILE), &TrackFormat::default())?;
    println!("{} rows, {} agents, frame stride {}", table.rows.len(), table.agent_ids().len(), table.frame_stride);
    for w in &table.warnings {
        println!("warning: {w}");
    }

    let ds = load_dataset(&dir)?;
    let targets: usize = ds.episodes.iter().map(|e| e.targets().count()).sum();
    let neighbors_only: usize = ds.episodes.iter().map(|e| e.agents.len() - e.targets().count()).sum();
    let violations: usize = ds.episodes.iter().map(|e| validate_episode(e).len()).sum();
    println!(
        "{} episodes, {} targets, {} observation-only neighbors, {} violations",
        ds.episodes.len(),
        targets,
        neighbors_only,
        violations
    );
    if let Some(busiest) = ds.episodes.iter().max_by_key(|e| e.agents.len()) {
        println!("busiest window {} holds {} agents", busiest.id, busiest.agents.len());
    }
    Ok(())
}
