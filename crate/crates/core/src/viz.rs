//! Raster figures: trajectory overlay, sample heatmap, prior bar chart.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::datamodel::{Point, PredictionSet, SceneGrid, OBSTACLE};
use crate::{Error, Result};

const PX: u32 = 4;
const WALL: Rgb<u8> = Rgb([60, 60, 60]);
const FLOOR: Rgb<u8> = Rgb([245, 245, 240]);
const OBSERVED: Rgb<u8> = Rgb([0, 0, 0]);
const TRUTH: Rgb<u8> = Rgb([0, 160, 0]);

/// Distinct colour per generator index.
pub fn generator_color(g: usize) -> Rgb<u8> {
    const P: [[u8; 3]; 8] = [
        [220, 50, 47],
        [38, 139, 210],
        [211, 130, 0],
        [108, 113, 196],
        [42, 161, 152],
        [211, 54, 130],
        [133, 153, 0],
        [88, 110, 117],
    ];
    Rgb(P[g % P.len()])
}

fn scene_image(scene: &SceneGrid) -> RgbImage {
    let (w, h) = (scene.width as u32 * PX, scene.height as u32 * PX);
    // Image rows grow downwards; scene rows grow with y.
    RgbImage::from_fn(w, h, |x, y| {
        let col = (x / PX) as usize;
        let row = scene.height - 1 - (y / PX) as usize;
        if scene.get(row, col) == OBSTACLE {
            WALL
        } else {
            FLOOR
        }
    })
}

fn to_px(scene: &SceneGrid, p: Point) -> (f64, f64) {
    let s = PX as f64 / scene.cell_size;
    ((p.x - scene.origin.x) * s, scene.height as f64 * PX as f64 - (p.y - scene.origin.y) * s)
}

fn put(img: &mut RgbImage, x: f64, y: f64, c: Rgb<u8>) {
    if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn polyline(img: &mut RgbImage, scene: &SceneGrid, pts: &[Point], c: Rgb<u8>) {
    for w in pts.windows(2) {
        let (a, b) = (to_px(scene, w[0]), to_px(scene, w[1]));
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            put(img, a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t, c);
        }
    }
}

/// Scene with the observed track, annotated futures and predicted samples
/// coloured by generator.
pub fn overlay(scene: &SceneGrid, observed: &[Point], futures: &[Vec<Point>], preds: &PredictionSet) -> RgbImage {
    let mut img = scene_image(scene);
    for s in &preds.samples {
        let mut pts = vec![*observed.last().unwrap()];
        pts.extend_from_slice(&s.trajectory);
        polyline(&mut img, scene, &pts, generator_color(s.generator_index));
    }
    for f in futures {
        let mut pts = vec![*observed.last().unwrap()];
        pts.extend_from_slice(f);
        polyline(&mut img, scene, &pts, TRUTH);
    }
    polyline(&mut img, scene, observed, OBSERVED);
    img
}

/// Per-scene-cell counts of predicted positions.
pub fn histogram<'a>(scene: &SceneGrid, positions: impl IntoIterator<Item = &'a Point>) -> Vec<u32> {
    let mut counts = vec![0u32; scene.width * scene.height];
    for p in positions {
        if let Some((r, c)) = scene.cell_of(*p) {
            counts[r * scene.width + c] += 1;
        }
    }
    counts
}

/// Log-scaled density of predicted positions over the scene.
pub fn heatmap<'a>(scene: &SceneGrid, positions: impl IntoIterator<Item = &'a Point>) -> RgbImage {
    let counts = histogram(scene, positions);
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut img = scene_image(scene);
    for (i, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let v = (1.0 + n as f64).ln() / (1.0 + max).ln();
        let c = Rgb([255, (230.0 * (1.0 - v)) as u8, 0]);
        let (r, col) = (i / scene.width, i % scene.width);
        let y0 = (scene.height - 1 - r) as u32 * PX;
        for dy in 0..PX {
            for dx in 0..PX {
                img.put_pixel(col as u32 * PX + dx, y0 + dy, c);
            }
        }
    }
    img
}

/// One bar per generator with a horizontal line at the activation threshold.
pub fn prior_bars(priors: &[f64], threshold: f64) -> RgbImage {
    let (bar, gap, h) = (40u32, 20u32, 200u32);
    let w = gap + priors.len() as u32 * (bar + gap);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for (g, &p) in priors.iter().enumerate() {
        let top = h - (p.clamp(0.0, 1.0) * (h - 10) as f64) as u32;
        let x0 = gap + g as u32 * (bar + gap);
        for y in top..h {
            for x in x0..x0 + bar {
                img.put_pixel(x, y, generator_color(g));
            }
        }
    }
    let ty = h - 1 - (threshold.clamp(0.0, 1.0) * (h - 10) as f64) as u32;
    for x in 0..w {
        img.put_pixel(x, ty, Rgb([0, 0, 0]));
    }
    img
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::PredictedSample;

    #[test]
    fn histogram_counts_positions_in_cells() {
        let scene = SceneGrid::open(4, 4, 1.0, Point::new(0.0, 0.0));
        let pts = [Point::new(0.5, 0.5), Point::new(0.7, 0.2), Point::new(3.5, 2.5), Point::new(9.0, 9.0)];
        let h = histogram(&scene, &pts);
        assert_eq!(h[0], 2);
        assert_eq!(h[2 * 4 + 3], 1);
        assert_eq!(h.iter().sum::<u32>(), 3);
    }

    #[test]
    fn figures_have_expected_size() {
        let scene = SceneGrid::open(10, 8, 0.5, Point::new(-2.0, -2.0));
        let obs = vec![Point::new(0.0, 0.0), Point::new(0.5, 0.0)];
        let preds = PredictionSet {
            agent_id: "a".into(),
            samples: vec![PredictedSample { trajectory: vec![Point::new(1.0, 0.0)], generator_index: 1, noise_seed: 0 }],
        };
        let img = overlay(&scene, &obs, &[vec![Point::new(1.0, 0.5)]], &preds);
        assert_eq!(img.dimensions(), (40, 32));
        assert_eq!(prior_bars(&[0.5, 0.5], 0.03).width(), 20 + 2 * 60);
    }
}
