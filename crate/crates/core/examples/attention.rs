//! Social and physical attention of one pedestrian in the bundled pedestrian
//! fixture, with an untrained model.
//!
//! `cargo run --example attention`

use mgtraj::encoders::NeighborInput;
use std::path::Path;

use mgtraj::ingest::load_dataset;
use mgtraj::{ModelConfig, MultiGenModel};

fn main() -> mgtraj::Result<()> {
    let ds = load_dataset(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/eth_fixture"))?;
    let scene = ds.scene;
    let ep = ds.episodes.iter().max_by_key(|e| e.agents.len()).unwrap();
    let model = MultiGenModel::new(ModelConfig::default())?;
    let enc = &model.encoders;

    let social = enc.encode_social(&model.store, ep);
    let target = ep.targets().next().unwrap();
    let here = ep.agents[target].last_observed();
    let neighbors: Vec<NeighborInput> = (0..ep.agents.len())
        .filter(|&j| j != target)
        .map(|j| NeighborInput { encoding: social[j].clone(), offset: ep.agents[j].last_observed().sub(here) })
        .collect();
    let extent = enc.cell * enc.grid_cols as f64;
    let physical = enc.encode_physical(&model.store, &scene, here, extent);
    let att = enc.attend(&model.store, &social[target], &neighbors, &physical);

    println!("target {} at ({:.2}, {:.2}) with {} neighbors", ep.agents[target].agent_id, here.x, here.y, neighbors.len());
    for (n, w) in neighbors.iter().zip(&att.weights.social) {
        println!("  neighbor at offset ({:+.2}, {:+.2}) weight {w:.3}", n.offset.x, n.offset.y);
    }
    println!("physical attention over the {}x{} crop:", physical.height, physical.width);
    for row in att.weights.physical.chunks(physical.width).rev() {
        println!("  {}", row.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>().join(" "));
    }
    let sum: f64 = att.weights.physical.iter().sum();
    println!("physical weights sum to {sum:.6}");
    Ok(())
}
