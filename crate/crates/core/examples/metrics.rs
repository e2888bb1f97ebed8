//! Forecast metrics on a two-branch toy example: min-of-K displacement,
//! precision/recall against all annotated futures, and purity.
//!
//! `cargo run --example metrics`

use mgtraj::metrics::{min_of_k, to_csv, MetricReport};
use mgtraj::{Point, PredictedSample, PredictionSet};

fn straight(dx: f64, dy: f64, steps: usize) -> Vec<Point> {
    (1..=steps).map(|i| Point::new(dx * i as f64, dy * i as f64)).collect()
}

fn main() -> mgtraj::Result<()> {
    let left = straight(-0.5, 0.1, 6);
    let right = straight(0.5, 0.1, 6);
    let between = straight(0.0, 0.5, 6);
    let futures = vec![left.clone(), right.clone()];

    let sample = |trajectory: Vec<Point>, g| PredictedSample { trajectory, generator_index: g, noise_seed: 0 };
    let good = PredictionSet { agent_id: "a".into(), samples: vec![sample(left.clone(), 0), sample(right.clone(), 1)] };
    let bridged = PredictionSet {
        agent_id: "a".into(),
        samples: vec![sample(left, 0), sample(between.clone(), 0), sample(between, 0), sample(right, 0)],
    };

    let (ade, fde) = min_of_k(&bridged, &futures[0])?;
    println!("min-of-K against the realized future: ADE {ade:.3}, FDE {fde:.3}");

    let rows = vec![
        MetricReport::evaluate("two generators", &good, &futures, 0.5, 2, 2)?,
        MetricReport::evaluate("one generator", &bridged, &futures, 0.5, 1, 2)?,
    ];
    print!("{}", to_csv(&rows));
    Ok(())
}
