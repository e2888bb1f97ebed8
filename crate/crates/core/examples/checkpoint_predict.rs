//! Short training run, checkpoint round trip, then sampling and figures for
//! one pedestrian.
//!
//! `cargo run --release --example checkpoint_predict -- [out_dir]`

use mgtraj::ingest::{synthesize, SynthSpec};
use mgtraj::training::{train, TrainConfig};
use mgtraj::viz;
use mgtraj::{ModelConfig, MultiGenModel};

fn main() -> mgtraj::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("mgtraj_predict"));
    std::fs::create_dir_all(&out).map_err(|e| mgtraj::Error::io(&out, e))?;

    let (episodes, scene) = synthesize(&SynthSpec { n_agents: 40, ..SynthSpec::default() })?;
    let cfg = ModelConfig { n_g: 3, learning_rate: 1e-3, ..ModelConfig::default() };
    let mut model = MultiGenModel::new(cfg.clone())?;
    let data: Vec<_> = episodes[..32].iter().map(|e| model.prepare(e, &scene)).collect::<Result<Vec<_>, _>>()?.concat();
    let report = train(&mut model, &data, &TrainConfig { iterations: 50, batch_size: 16, ..TrainConfig::from_model(&cfg) })?;
    println!("trained {} iterations, last priors {:.3?}", report.records.len(), report.last().unwrap().prior_means);

    let ckpt = out.join("model.ckpt");
    model.save(&ckpt)?;
    let restored = MultiGenModel::load(&ckpt)?;

    let ep = &episodes[35];
    let sample = &restored.prepare(ep, &scene)?[0];
    let (priors, preds) = restored.predict(sample, 20, 9)?;
    let (again, _) = model.predict(sample, 20, 9)?;
    assert_eq!(priors, again, "restored model matches the trained one");
    println!("priors {:.3?}, active {:?}", priors.priors, priors.active());

    let agent = &ep.agents[ep.agent_index(&preds.agent_id).unwrap()];
    viz::save_png(&viz::overlay(&scene, &agent.observed, &agent.futures, &preds), out.join("overlay.png"))?;
    viz::save_png(&viz::heatmap(&scene, preds.trajectories().flatten()), out.join("heatmap.png"))?;
    viz::save_png(&viz::prior_bars(&priors.priors, cfg.activation_threshold), out.join("priors.png"))?;
    println!("figures written to {}", out.display());
    Ok(())
}
