//! Training objectives and their per-iteration log.

use std::io::Write as _;
use std::path::Path;

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            depth: 0.1,
            normal: 0.1,
            eikonal: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("loss.depth_weight", self.depth),
            ("loss.normal_weight", self.normal),
            ("loss.eikonal_weight", self.eikonal),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "must be a finite value >= 0"));
            }
        }
        Ok(())
    }
}

/// Pairwise (cascade) summation in a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean over rays of the summed absolute channel differences.
pub fn color_loss(rendered: &[[f64; 3]], truth: &[[f64; 3]]) -> f64 {
    assert_eq!(rendered.len(), truth.len());
    if rendered.is_empty() {
        return 0.0;
    }
    let per: Vec<f64> = rendered
        .iter()
        .zip(truth)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum())
        .collect();
    pairwise_sum(&per) / per.len() as f64
}

/// Mean of `(|g| - 1)^2`.
pub fn eikonal_loss(gradients: &[Vec3]) -> f64 {
    if gradients.is_empty() {
        return 0.0;
    }
    let per: Vec<f64> = gradients.iter().map(|g| (g.norm() - 1.0).powi(2)).collect();
    pairwise_sum(&per) / per.len() as f64
}

/// `(1/K) Σ M_i |D_i - D_i^gt|` with `K` the full batch size, masked rays
/// included in the count.
pub fn depth_loss(rendered: &[f64], target: &[f64], mask: &[bool]) -> f64 {
    assert!(rendered.len() == target.len() && target.len() == mask.len());
    if rendered.is_empty() {
        return 0.0;
    }
    let per: Vec<f64> = (0..rendered.len())
        .map(|i| if mask[i] { (rendered[i] - target[i]).abs() } else { 0.0 })
        .collect();
    pairwise_sum(&per) / per.len() as f64
}

/// Cosine of the angle between `a` and `b` with its partial derivatives.
pub fn cos_with_grad(a: &Vec3, b: &Vec3) -> (f64, Vec3, Vec3) {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return (0.0, Vec3::zeros(), Vec3::zeros());
    }
    let c = a.dot(b) / (na * nb);
    let da = b / (na * nb) - a * (c / (na * na));
    let db = a / (na * nb) - b * (c / (nb * nb));
    (c, da, db)
}

/// Mean cosine between a center normal and its neighbors.
pub fn angular_consistency(center: &Vec3, neighbors: &[Vec3]) -> f64 {
    let sum: f64 = neighbors.iter().map(|n| cos_with_grad(center, n).0).sum();
    sum / neighbors.len() as f64
}

/// Points at which the predicted consistency is evaluated: the center ray
/// and each neighbor ray, all at the center ray's rendered depth `t`.
pub fn consistency_points(center: &Ray, neighbors: &[Ray], t: f64) -> Vec<Vec3> {
    std::iter::once(center.at(t))
        .chain(neighbors.iter().map(|r| r.at(t)))
        .collect()
}

/// `(1/K) Σ (δ_i^pred - δ_i^gt)^2` over the supervised pixels.
pub fn normal_loss(predicted: &[f64], target: &[f64]) -> f64 {
    assert_eq!(predicted.len(), target.len());
    if predicted.is_empty() {
        return 0.0;
    }
    let per: Vec<f64> = predicted.iter().zip(target).map(|(p, t)| (p - t).powi(2)).collect();
    pairwise_sum(&per) / per.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    let t = parts.color + w.depth * parts.depth + w.normal * parts.normal + w.eikonal * parts.eikonal;
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("total loss from {parts:?}")));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLosses {
    pub parts: LossParts,
    pub total: f64,
    pub color_rays: usize,
    pub depth_rays: usize,
    pub normal_pixels: usize,
    pub eikonal_samples: usize,
}

/// Append-only CSV log `iter,color,depth,normal,eikonal,total,lambda_level,s`.
pub struct LossLog {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl LossLog {
    pub const HEADER: &'static str = "iter,color,depth,normal,eikonal,total,lambda_level,s";

    pub fn create(path: &Path) -> Result<Self> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            file: std::io::BufWriter::new(f),
            path: path.to_path_buf(),
        };
        writeln!(log.file, "{}", Self::HEADER).map_err(|e| Error::io(path, e))?;
        Ok(log)
    }

    pub fn append(&mut self, iter: usize, l: &BatchLosses, lambda: f64, s: f64) -> Result<()> {
        let p = &l.parts;
        writeln!(
            self.file,
            "{iter},{},{},{},{},{},{lambda},{s}",
            p.color, p.depth, p.normal, p.eikonal, l.total
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
