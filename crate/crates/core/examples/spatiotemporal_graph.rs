//! Builds the target-centric graph frames for one pedestrian of the bundled
//! fixture and encodes them.
//!
//! `cargo run --example spatiotemporal_graph`

use std::path::Path;

use mgtraj::ingest::load_dataset;
use mgtraj::stgraph::{build_graph_sequence, place, GridSpec};
use mgtraj::{ModelConfig, MultiGenModel};

fn main() -> mgtraj::Result<()> {
    let ds = load_dataset(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/eth_fixture"))?;
    let scene = ds.scene;
    let ep = ds.episodes.iter().max_by_key(|e| e.agents.len()).unwrap();
    let cfg = ModelConfig::default();
    let model = MultiGenModel::new(cfg.clone())?;
    let grid = GridSpec::from_config(&cfg);

    let target = ep.targets().next().unwrap();
    let neighbors: Vec<usize> = (0..ep.agents.len()).filter(|&j| j != target).collect();
    let placement = place(ep, target, &neighbors, &scene, &grid);
    for (t, cells) in placement.cells.iter().enumerate() {
        let inside = cells.iter().filter(|c| c.is_some()).count();
        let walls = placement.rasters[t * grid.cells()..(t + 1) * grid.cells()].iter().filter(|&&v| v > 0.5).count();
        println!("frame {t}: {inside}/{} neighbors on the grid, {walls} obstacle cells", neighbors.len());
    }

    let social = model.encoders.encode_social(&model.store, ep);
    let uniform = vec![1.0 / neighbors.len().max(1) as f64; neighbors.len()];
    let frames =
        build_graph_sequence(&model.store, &model.encoders.physical, ep, target, &neighbors, &social, &uniform, &scene, &grid);
    let f = &frames[frames.len() - 1];
    println!("{} frames of {} channels on a {}x{} grid", frames.len(), f.channels(), f.rows, f.cols);
    for r in 0..f.rows {
        for c in 0..f.cols {
            let v = f.social_at(r, c);
            if v.iter().any(|x| *x != 0.0) {
                println!("occupied cell ({r}, {c}), first social channels {:.4?}", &v[..4]);
            }
        }
    }

    let code = model.stg.encode_graph_sequence(&model.store, &frames)?;
    let shown: Vec<String> = code.iter().map(|v| format!("{v:.2e}")).collect();
    println!("graph encoding ({} values): {}", code.len(), shown.join(" "));
    Ok(())
}
