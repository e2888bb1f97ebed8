//! Generates a synthetic crossroad, writes it to disk in the on-disk dataset
//! layout and reads it back.
//!
//! `cargo run --example synthetic_dataset -- [out_dir]`

use std::collections::BTreeMap;

use mgtraj::ingest::{branch_of, load_dataset, synthesize, write_synthetic, SynthSpec};
use mgtraj::validate_episode;

fn main() -> mgtraj::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("mgtraj_crossroad"));
    let spec = SynthSpec { n_agents: 60, seed: 4, ..SynthSpec::crossroad() };
    let (episodes, scene) = synthesize(&spec)?;
    write_synthetic(&out, &spec, &episodes, &scene)?;

    let ds = load_dataset(&out)?;
    assert_eq!(ds.episodes.len(), episodes.len());
    let invalid = ds.episodes.iter().filter(|e| !validate_episode(e).is_empty()).count();

    let mut realized: BTreeMap<usize, usize> = BTreeMap::new();
    for ep in &ds.episodes {
        for t in ep.targets() {
            let end = *ep.agents[t].futures[0].last().unwrap();
            *realized.entry(branch_of(spec.layout, end)).or_default() += 1;
        }
    }

    println!("wrote {} episodes to {}", ds.episodes.len(), out.display());
    println!("scene {}x{} cells of {} m, {} invalid episodes", scene.width, scene.height, scene.cell_size, invalid);
    println!("realized branch counts: {realized:?}");
    println!("ood radius from meta: {:?}", ds.ood_eps());
    let first = &ds.episodes[0];
    println!("{}: {} agents, {} futures on the first target", first.id, first.agents.len(), first.agents[0].futures.len());
    Ok(())
}
