use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::render::{sample_ray, SamplingConfig};
use crate::Vec3;

/// One training image with per-pixel rays and supervision, all row-major
/// (`index = row * width + col`, row = line `u`, col = sample `v`).
#[derive(Debug, Clone)]
pub struct TrainView {
    pub width: usize,
    pub height: usize,
    pub rays: Vec<Ray>,
    pub color: Vec<[f64; 3]>,
    /// Absolute fused depth along the ray (canonical units); NaN where absent.
    pub depth: Vec<f64>,
    /// False where the pixel is excluded from depth and normal supervision.
    pub mask: Vec<bool>,
    pub delta_gt: Vec<f64>,
    /// Unit sun direction (east, north, up).
    pub sun: Vec3,
}

impl TrainView {
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    fn interior(&self) -> usize {
        self.height.saturating_sub(2) * self.width.saturating_sub(2)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub views: Vec<TrainView>,
}

/// A supervised pixel: its center ray, the 4-neighbor rays (up, down, left,
/// right) and its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRay {
    pub view: usize,
    pub row: usize,
    pub col: usize,
    pub center: Ray,
    pub neighbors: [Ray; 4],
    pub color: [f64; 3],
    pub depth: f64,
    /// Pixel not excluded by the mask.
    pub mask: bool,
    pub depth_valid: bool,
    pub delta_gt: f64,
    pub sun: Vec3,
}

/// Draws `n` pixels uniformly over all views' interior pixels (a 1-pixel
/// margin keeps the 4-neighbors in bounds).
pub fn build_batch<R: Rng>(data: &TrainData, n: usize, rng: &mut R) -> Result<Vec<BatchRay>> {
    let counts: Vec<usize> = data.views.iter().map(TrainView::interior).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut k = rng.gen_range(0..total);
        let mut vi = 0;
        while k >= counts[vi] {
            k -= counts[vi];
            vi += 1;
        }
        let v = &data.views[vi];
        let iw = v.width - 2;
        let (row, col) = (1 + k / iw, 1 + k % iw);
        let i = v.index(row, col);
        let depth = v.depth[i];
        out.push(BatchRay {
            view: vi,
            row,
            col,
            center: v.rays[i],
            neighbors: [
                v.rays[v.index(row - 1, col)],
                v.rays[v.index(row + 1, col)],
                v.rays[v.index(row, col - 1)],
                v.rays[v.index(row, col + 1)],
            ],
            color: v.color[i],
            depth,
            mask: v.mask[i],
            depth_valid: v.mask[i] && depth.is_finite(),
            delta_gt: v.delta_gt[i],
            sun: v.sun,
        });
    }
    Ok(out)
}

/// Sample positions for every center ray. Per-ray jitter streams are seeded
/// sequentially from `rng`, so the result does not depend on thread count.
pub fn sample_batch<R: Rng>(
    field: &Field,
    params: &[f64],
    batch: &[BatchRay],
    lambda: f64,
    config: &SamplingConfig,
    jitter: bool,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
    batch
        .par_iter()
        .zip(seeds)
        .map(|(b, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            sample_ray(
                &b.center,
                |x| field.sdf(params, x, lambda),
                config,
                jitter.then_some(&mut r),
            )
            .t
        })
        .collect()
}
