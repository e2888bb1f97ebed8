//! Trains on a synthetic intersection and reports which generators stay
//! active and how cleanly they split the branches.
//!
//! `cargo run --release --example specialization -- [t_junction|crossroad] [iterations] [n_G] [seed]`
//!
//! Defaults: `t_junction 2000 4 0`. Expect several minutes in release mode.

use std::time::Instant;

use mgtraj::ingest::{synthesize, Layout, SynthSpec};
use mgtraj::metrics::{aggregate, MetricReport};
use mgtraj::training::{train_with, TrainConfig};
use mgtraj::{ModelConfig, MultiGenModel};

fn main() -> mgtraj::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let layout = args.first().and_then(|s| Layout::parse(s)).unwrap_or(Layout::TJunction);
    let iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let n_g = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let base = match layout {
        Layout::Crossroad => SynthSpec::crossroad(),
        _ => SynthSpec::default(),
    };
    let spec = SynthSpec { seed: 1, ..base };
    let (episodes, scene) = synthesize(&spec)?;
    let (train, test) = episodes.split_at(episodes.len() * 4 / 5);

    let cfg = ModelConfig { n_g, learning_rate: 1e-3, seed, ..ModelConfig::default() };
    let mut model = MultiGenModel::new(cfg.clone())?;
    let data: Vec<_> = train.iter().map(|e| model.prepare(e, &scene)).collect::<Result<Vec<_>, _>>()?.concat();

    let tc = TrainConfig { iterations, ..TrainConfig::from_model(&cfg) };
    let start = Instant::now();
    train_with(&mut model, &data, &tc, |r, _| {
        if (r.iteration + 1) % 100 == 0 {
            println!(
                "it {:5}  d {:.3}  g {:.3}  var {:.3}  sel {:.3}  priors {:.3?}  ({:.0}s)",
                r.iteration + 1,
                r.d_adv,
                r.g_adv,
                r.variety,
                r.selector_ce,
                r.prior_means,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;

    let eps = spec.corridor_width / 2.0;
    let mut rows = Vec::new();
    for (i, ep) in test.iter().enumerate() {
        for s in model.prepare(ep, &scene)? {
            let (priors, preds) = model.predict(&s, cfg.k, 1000 + i as u64)?;
            rows.push(MetricReport::evaluate(&ep.id, &preds, &s.futures, eps, priors.active_count(), n_g)?);
        }
    }
    let agg = aggregate(&rows);
    println!(
        "precision {:.3}  recall {:.3}  purity {:.3}  minADE {:.3}  minFDE {:.3}  samples per generator {:?}",
        agg.precision, agg.recall, agg.purity, agg.min_ade, agg.min_fde, agg.generator_counts
    );
    Ok(())
}
