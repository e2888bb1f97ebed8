//! Displacement errors, best-of-K, and out-of-distribution precision/recall.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::datamodel::{Point, PredictionSet};
use crate::{Error, Result};

fn check_len(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::invalid("trajectory", format!("length {} vs ground truth {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// Average displacement error.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_len(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| p.dist(*g)).sum::<f64>() / gt.len() as f64)
}

/// Final displacement error.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_len(pred, gt)?;
    Ok(pred.last().unwrap().dist(*gt.last().unwrap()))
}

/// `(min ADE, min FDE)` over the samples, each minimised independently.
pub fn min_of_k(preds: &PredictionSet, gt: &[Point]) -> Result<(f64, f64)> {
    if preds.samples.is_empty() {
        return Err(Error::invalid("predictions", "empty prediction set"));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for t in preds.trajectories() {
        best.0 = best.0.min(ade(t, gt)?);
        best.1 = best.1.min(fde(t, gt)?);
    }
    Ok(best)
}

/// Index of the closest ground-truth future (by ADE) and the distance.
pub fn nearest_future(pred: &[Point], futures: &[Vec<Point>]) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (i, f) in futures.iter().enumerate() {
        let d = ade(pred, f)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// A sample is in-distribution when its ADE to the nearest future is at most
/// `eps`. Precision is the in-distribution fraction of samples; recall is the
/// fraction of futures with some sample within `eps`.
pub fn precision_recall(preds: &PredictionSet, futures: &[Vec<Point>], eps: f64) -> Result<(f64, f64)> {
    if futures.is_empty() {
        return Err(Error::invalid("futures", "no ground-truth futures"));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("eps", "must be positive"));
    }
    if preds.samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut hits = 0;
    let mut covered = vec![false; futures.len()];
    for t in preds.trajectories() {
        let mut inside = false;
        for (i, f) in futures.iter().enumerate() {
            if ade(t, f)? <= eps {
                covered[i] = true;
                inside = true;
            }
        }
        hits += usize::from(inside);
    }
    let precision = hits as f64 / preds.samples.len() as f64;
    let recall = covered.iter().filter(|&&c| c).count() as f64 / futures.len() as f64;
    Ok((precision, recall))
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Share of in-distribution samples that belong to their generator's
/// majority manifold (nearest future). `None` when no sample is within `eps`.
pub fn manifold_purity(preds: &PredictionSet, futures: &[Vec<Point>], eps: f64) -> Result<Option<f64>> {
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut total = 0;
    for s in &preds.samples {
        let (label, d) = nearest_future(&s.trajectory, futures)?;
        if d <= eps {
            *counts.entry(s.generator_index).or_default().entry(label).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Ok(None);
    }
    let majority: usize = counts.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    Ok(Some(majority as f64 / total as f64))
}

/// Samples per generator index.
pub fn generator_counts(preds: &PredictionSet, n_g: usize) -> Vec<usize> {
    let mut c = vec![0; n_g];
    for s in &preds.samples {
        if s.generator_index < n_g {
            c[s.generator_index] += 1;
        }
    }
    c
}

/// Metrics of one target.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub episode_id: String,
    pub min_ade: f64,
    pub min_fde: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `NaN` when no sample is in-distribution.
    pub purity: f64,
    pub active_generators: usize,
    pub generator_counts: Vec<usize>,
}

impl MetricReport {
    /// Evaluates `preds` against `futures`; the first future is the realized
    /// one used for ADE/FDE.
    pub fn evaluate(
        episode_id: &str,
        preds: &PredictionSet,
        futures: &[Vec<Point>],
        eps: f64,
        active_generators: usize,
        n_g: usize,
    ) -> Result<Self> {
        let gt = futures.first().ok_or_else(|| Error::invalid("futures", "no ground-truth futures"))?;
        let (min_ade, min_fde) = min_of_k(preds, gt)?;
        let (precision, recall) = precision_recall(preds, futures, eps)?;
        Ok(Self {
            episode_id: episode_id.to_string(),
            min_ade,
            min_fde,
            precision,
            recall,
            f1: f1(precision, recall),
            purity: manifold_purity(preds, futures, eps)?.unwrap_or(f64::NAN),
            active_generators,
            generator_counts: generator_counts(preds, n_g),
        })
    }
}

pub const CSV_HEADER: &str = "episode_id,min_ade,min_fde,precision,recall,f1,purity,active_generators";

/// Mean of every numeric column; purity averages over rows where it is
/// defined.
pub fn aggregate(rows: &[MetricReport]) -> MetricReport {
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| if rows.is_empty() { f64::NAN } else { rows.iter().map(f).sum::<f64>() / n };
    let pur: Vec<f64> = rows.iter().map(|r| r.purity).filter(|p| !p.is_nan()).collect();
    let n_g = rows.first().map_or(0, |r| r.generator_counts.len());
    let mut counts = vec![0; n_g];
    for r in rows {
        for (c, v) in counts.iter_mut().zip(&r.generator_counts) {
            *c += v;
        }
    }
    MetricReport {
        episode_id: if rows.is_empty() { "aggregate(empty)".into() } else { "aggregate".into() },
        min_ade: mean(&|r| r.min_ade),
        min_fde: mean(&|r| r.min_fde),
        precision: mean(&|r| r.precision),
        recall: mean(&|r| r.recall),
        f1: mean(&|r| r.f1),
        purity: if pur.is_empty() { f64::NAN } else { pur.iter().sum::<f64>() / pur.len() as f64 },
        active_generators: if rows.is_empty() { 0 } else { (mean(&|r| r.active_generators as f64)).round() as usize },
        generator_counts: counts,
    }
}

/// One row per episode plus the aggregate row.
pub fn to_csv(rows: &[MetricReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows.iter().chain(std::iter::once(&aggregate(rows))) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.episode_id, r.min_ade, r.min_fde, r.precision, r.recall, r.f1, r.purity, r.active_generators
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::PredictedSample;

    fn line(n: usize, dx: f64, dy: f64) -> Vec<Point> {
        (0..n).map(|t| Point::new(t as f64 + dx, dy)).collect()
    }

    fn set(trajs: Vec<(Vec<Point>, usize)>) -> PredictionSet {
        PredictionSet {
            agent_id: "a".into(),
            samples: trajs
                .into_iter()
                .map(|(trajectory, generator_index)| PredictedSample { trajectory, generator_index, noise_seed: 0 })
                .collect(),
        }
    }

    #[test]
    fn ade_fde_examples() {
        let gt = line(4, 0.0, 0.0);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
        assert_eq!(ade(&line(4, 3.0, 4.0), &gt).unwrap(), 5.0);
        let mut half = gt.clone();
        half[0] = Point::new(3.0, 4.0);
        half[1] = Point::new(4.0, 4.0);
        assert_eq!(ade(&half, &gt).unwrap(), 2.5);
        let mut end = gt.clone();
        end[3].y += 2.0;
        assert_eq!(fde(&end, &gt).unwrap(), 2.0);
        let mut interior = line(4, 1.0, 1.0);
        interior[3] = gt[3];
        assert_eq!(fde(&interior, &gt).unwrap(), 0.0);
        assert!(ade(&gt[..3], &gt).is_err());
        assert!(fde(&gt[..3], &gt).is_err());
    }

    #[test]
    fn min_of_k_examples() {
        let gt = line(3, 0.0, 0.0);
        let same = set(vec![(line(3, 1.0, 0.0), 0); 4]);
        assert_eq!(min_of_k(&same, &gt).unwrap(), (1.0, 1.0));
        let hit = set(vec![(line(3, 1.0, 0.0), 0), (gt.clone(), 0)]);
        assert_eq!(min_of_k(&hit, &gt).unwrap(), (0.0, 0.0));
        assert!(min_of_k(&set(vec![]), &gt).is_err());
    }

    #[test]
    fn precision_recall_examples() {
        let f = vec![line(3, 0.0, 0.0), line(3, 0.0, 10.0)];
        let all_near_first = set(vec![(line(3, 0.0, 0.5), 0), (line(3, 0.0, -0.5), 1)]);
        assert_eq!(precision_recall(&all_near_first, &f, 1.0).unwrap(), (1.0, 0.5));
        let one_out = set(vec![(line(3, 0.0, 0.5), 0), (line(3, 0.0, 5.0), 1)]);
        assert_eq!(precision_recall(&one_out, &f, 1.0).unwrap(), (0.5, 0.5));
        assert_eq!(precision_recall(&one_out, &f, 1e9).unwrap(), (1.0, 1.0));
        assert!(precision_recall(&one_out, &[], 1.0).is_err());
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert!((f1(1.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn purity_examples() {
        let f = vec![line(3, 0.0, 0.0), line(3, 0.0, 10.0)];
        let pure = set(vec![(line(3, 0.0, 0.1), 0), (line(3, 0.0, 9.9), 1), (line(3, 0.0, 0.2), 0)]);
        assert_eq!(manifold_purity(&pure, &f, 1.0).unwrap(), Some(1.0));
        let split = set(vec![(line(3, 0.0, 0.1), 0), (line(3, 0.0, 9.9), 0), (line(3, 0.0, 0.2), 1), (line(3, 0.0, 9.8), 1)]);
        assert_eq!(manifold_purity(&split, &f, 1.0).unwrap(), Some(0.5));
        let single = set(vec![(line(3, 0.0, 0.1), 2); 3]);
        assert_eq!(manifold_purity(&single, &f[..1], 1.0).unwrap(), Some(1.0));
        assert_eq!(manifold_purity(&set(vec![(line(3, 0.0, 5.0), 0)]), &f, 1.0).unwrap(), None);
    }

    #[test]
    fn csv_layout() {
        let f = vec![line(3, 0.0, 0.0)];
        let r = MetricReport::evaluate("e1", &set(vec![(line(3, 0.0, 0.0), 1)]), &f, 1.0, 2, 3).unwrap();
        assert_eq!(r.generator_counts, vec![0, 1, 0]);
        let csv = to_csv(&[r]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "e1,0,0,1,1,1,1,2");
        assert!(lines[2].starts_with("aggregate,"));
        assert!(to_csv(&[]).lines().nth(1).unwrap().starts_with("aggregate(empty)"));
    }
}
