//! Depth and normal priors: sparse points turned into ray depths, scale and
//! offset alignment of a relative depth map, fused absolute depth, and normal
//! maps with their neighborhood consistency targets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{RpcModel, SceneBounds};
use crate::error::{Error, Result};
use crate::evaluation::median;
use crate::raster::{read_pfm, read_text, write_pfm, FloatImage};
use crate::Vec3;

/// One tie point seen in an image, with its triangulated position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseObservation {
    /// Line (row) coordinate in pixels.
    pub u: f64,
    /// Sample (column) coordinate in pixels.
    pub v: f64,
    pub lon: f64,
    pub lat: f64,
    pub alt: f64,
    pub reproj_error: f64,
}

pub fn read_sparse_csv(path: &Path) -> Result<Vec<SparseObservation>> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let o: SparseObservation = rec.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        if !(o.reproj_error >= 0.0) {
            return Err(Error::parse(
                path,
                format!("row {}: negative reprojection error", i + 1),
            ));
        }
        out.push(o);
    }
    Ok(out)
}

pub fn write_sparse_csv(path: &Path, obs: &[SparseObservation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    for o in obs {
        w.serialize(o).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pixel of an observation after rounding: (row, col).
pub fn rounded_pixel(obs: &SparseObservation) -> (f64, f64) {
    (obs.u.round(), obs.v.round())
}

/// Distance along the pixel's ray from the upper reference plane to the
/// observed altitude, in canonical units.
pub fn reparameterize_sparse_depth(obs: &SparseObservation, model: &RpcModel, bounds: &SceneBounds) -> Result<f64> {
    let (u, v) = rounded_pixel(obs);
    let (lon, lat) = model.localize(u, v, obs.alt)?;
    let (lon_r, lat_r) = model.localize(u, v, bounds.alt_ref_upper)?;
    let p = bounds.canonicalize(lon, lat, obs.alt)?;
    let p_ref = bounds.canonicalize(lon_r, lat_r, bounds.alt_ref_upper)?;
    Ok((p - p_ref).norm())
}

/// `clamp(1 - e / e95, 0.05, 1)` with `e95` the 95th percentile of the errors.
pub fn reprojection_weights(errors: &[f64]) -> Vec<f64> {
    if errors.is_empty() {
        return Vec::new();
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (0.95 * (sorted.len() - 1) as f64).round() as usize;
    let e95 = sorted[rank];
    errors
        .iter()
        .map(|e| {
            if e95 > 0.0 {
                (1.0 - e / e95).clamp(0.05, 1.0)
            } else {
                1.0
            }
        })
        .collect()
}

/// How per-point weights enter the scale/offset fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitForm {
    /// Minimize `Σ w (D - s·D̂ - o)²`.
    #[default]
    Weighted,
    /// Minimize `Σ (w·D - s·D̂ - o)²`: the weight scales the target.
    ScaledTarget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSample {
    pub relative: f64,
    pub depth: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub scale: f64,
    pub offset: f64,
    pub residual_mean: f64,
    pub residual_median: f64,
    pub points: usize,
}

/// Closed-form weighted line fit `depth ≈ s·relative + o`.
pub fn fit_scale_offset(samples: &[FitSample], form: FitForm) -> Result<FitResult> {
    if samples.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} sparse points, need 2", samples.len())));
    }
    let rows: Vec<(f64, f64, f64)> = samples
        .iter()
        .map(|s| match form {
            FitForm::Weighted => (s.relative, s.depth, s.weight),
            FitForm::ScaledTarget => (s.relative, s.weight * s.depth, 1.0),
        })
        .collect();
    let w: f64 = rows.iter().map(|r| r.2).sum();
    if !(w > 0.0) {
        return Err(Error::DegenerateFit("all weights are zero".into()));
    }
    let mx = rows.iter().map(|r| r.2 * r.0).sum::<f64>() / w;
    let my = rows.iter().map(|r| r.2 * r.1).sum::<f64>() / w;
    let var = rows.iter().map(|r| r.2 * (r.0 - mx).powi(2)).sum::<f64>() / w;
    if var < 1e-12 {
        return Err(Error::DegenerateFit(format!(
            "relative depth variance {var:e} at sparse points"
        )));
    }
    let cov = rows.iter().map(|r| r.2 * (r.0 - mx) * (r.1 - my)).sum::<f64>() / w;
    let scale = cov / var;
    let offset = my - scale * mx;
    let mut res: Vec<f64> = rows
        .iter()
        .filter(|r| r.2 > 0.0)
        .map(|r| (r.1 - scale * r.0 - offset).abs())
        .collect();
    let residual_mean = res.iter().sum::<f64>() / res.len() as f64;
    Ok(FitResult {
        scale,
        offset,
        residual_mean,
        residual_median: median(&mut res),
        points: res.len(),
    })
}

/// Min-max normalizes the finite values to [0, 1]; returns (min, max).
pub fn normalize_relative(values: &mut [f64]) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !lo.is_finite() {
        return None;
    }
    let span = hi - lo;
    for v in values.iter_mut().filter(|v| v.is_finite()) {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    Some((lo, hi))
}

/// Per-pixel normals and their 4-neighbor consistency; NaN where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub delta: Vec<f64>,
}

/// Normals of the depth map read as a height field over the pixel grid,
/// `n ∝ (-∂D/∂u, -∂D/∂v, 1)`, with `pitch` the pixel spacing in depth units.
/// Central differences inside, one-sided where a neighbor is missing.
pub fn normals_from_depth(width: usize, height: usize, depth: &[f64], pitch: f64) -> NormalMap {
    assert_eq!(depth.len(), width * height);
    let at = |r: isize, c: isize| -> Option<f64> {
        if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
            return None;
        }
        let v = depth[r as usize * width + c as usize];
        v.is_finite().then_some(v)
    };
    let deriv = |prev: Option<f64>, here: f64, next: Option<f64>| match (prev, next) {
        (Some(a), Some(b)) => (b - a) / (2.0 * pitch),
        (None, Some(b)) => (b - here) / pitch,
        (Some(a), None) => (here - a) / pitch,
        (None, None) => 0.0,
    };
    let nan = Vec3::repeat(f64::NAN);
    let mut normals = vec![nan; width * height];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let Some(d) = at(r, c) else { continue };
            let du = deriv(at(r - 1, c), d, at(r + 1, c));
            let dv = deriv(at(r, c - 1), d, at(r, c + 1));
            normals[r as usize * width + c as usize] = Vec3::new(-du, -dv, 1.0).normalize();
        }
    }
    let delta = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .map(|(r, c)| gt_consistency(&normals, width, height, r, c))
        .collect();
    NormalMap {
        width,
        height,
        normals,
        delta,
    }
}

/// Normals of a surface given as one 3D point per pixel (NaN where
/// missing): `∂P/∂col × ∂P/∂row`, with central differences inside and
/// one-sided ones where a neighbor is missing. Orientation is consistent
/// across the image, which is all the 4-neighbor consistency needs.
pub fn normals_from_points(width: usize, height: usize, points: &[Vec3]) -> NormalMap {
    assert_eq!(points.len(), width * height);
    let at = |r: isize, c: isize| -> Option<Vec3> {
        if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
            return None;
        }
        let p = points[r as usize * width + c as usize];
        p.iter().all(|v| v.is_finite()).then_some(p)
    };
    let deriv = |prev: Option<Vec3>, here: Vec3, next: Option<Vec3>| match (prev, next) {
        (Some(a), Some(b)) => Some((b - a) * 0.5),
        (None, Some(b)) => Some(b - here),
        (Some(a), None) => Some(here - a),
        (None, None) => None,
    };
    let nan = Vec3::repeat(f64::NAN);
    let mut normals = vec![nan; width * height];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let Some(p) = at(r, c) else { continue };
            let (Some(dc), Some(dr)) = (
                deriv(at(r, c - 1), p, at(r, c + 1)),
                deriv(at(r - 1, c), p, at(r + 1, c)),
            ) else {
                continue;
            };
            let n = dc.cross(&dr);
            if n.norm() > 0.0 {
                normals[r as usize * width + c as usize] = n.normalize();
            }
        }
    }
    let delta = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .map(|(r, c)| gt_consistency(&normals, width, height, r, c))
        .collect();
    NormalMap {
        width,
        height,
        normals,
        delta,
    }
}

/// Mean cosine between the normal at (row, col) and its in-bounds, defined
/// 4-neighbors. NaN if the pixel or all its neighbors are undefined.
pub fn gt_consistency(normals: &[Vec3], width: usize, height: usize, row: usize, col: usize) -> f64 {
    let n = normals[row * width + col];
    if !n.x.is_finite() {
        return f64::NAN;
    }
    let mut sum = 0.0;
    let mut count = 0;
    let (r, c) = (row as isize, col as isize);
    for (rr, cc) in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
        if rr < 0 || cc < 0 || rr >= height as isize || cc >= width as isize {
            continue;
        }
        let m = normals[rr as usize * width + cc as usize];
        if !m.x.is_finite() {
            continue;
        }
        sum += (n.dot(&m) / (n.norm() * m.norm())).clamp(-1.0, 1.0);
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Relative depth aligned to absolute ray depth for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDepthMap {
    pub width: usize,
    pub height: usize,
    /// Normalized to [0, 1]; NaN where the input had no data.
    pub relative: Vec<f64>,
    /// `scale · relative + offset`; NaN where masked.
    pub absolute: Vec<f64>,
    pub mask: Vec<bool>,
    pub fit: FitResult,
}

impl FusedDepthMap {
    /// Paths of the absolute depth PFM and its fit sidecar for `stem`.
    pub fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("{stem}_depth.pfm")),
            dir.join(format!("{stem}_fit.txt")),
        )
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let (pfm, txt) = Self::paths(dir, stem);
        let img = FloatImage {
            width: self.width,
            height: self.height,
            data: self.absolute.iter().map(|v| *v as f32).collect(),
        };
        write_pfm(&pfm, &img)?;
        let mut s = String::new();
        let f = &self.fit;
        let _ = writeln!(s, "scale = {:e}", f.scale);
        let _ = writeln!(s, "offset = {:e}", f.offset);
        let _ = writeln!(s, "residual_mean = {:e}", f.residual_mean);
        let _ = writeln!(s, "residual_median = {:e}", f.residual_median);
        let _ = writeln!(s, "points = {}", f.points);
        std::fs::write(&txt, s).map_err(|e| Error::io(&txt, e))
    }

    /// Reads the absolute depth and fit; the relative map is recovered from
    /// them and the mask from NaN cells.
    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let (pfm, txt) = Self::paths(dir, stem);
        let img = read_pfm(&pfm)?;
        let text = read_text(&txt)?;
        let mut vals = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&txt, format!("bad line `{line}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(&txt, format!("bad value `{line}`")))?;
            vals.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| {
            vals.get(k)
                .copied()
                .ok_or_else(|| Error::parse(&txt, format!("missing `{k}`")))
        };
        let fit = FitResult {
            scale: get("scale")?,
            offset: get("offset")?,
            residual_mean: get("residual_mean")?,
            residual_median: get("residual_median")?,
            points: get("points")? as usize,
        };
        let absolute: Vec<f64> = img.data.iter().map(|v| f64::from(*v)).collect();
        Ok(Self {
            width: img.width,
            height: img.height,
            relative: absolute.iter().map(|a| (a - fit.offset) / fit.scale).collect(),
            mask: absolute.iter().map(|a| a.is_finite()).collect(),
            absolute,
            fit,
        })
    }
}

/// Aligns a relative depth map to the sparse observations of the same view.
///
/// Observations that fail to localize, fall outside the image or land on
/// masked or NoData pixels are dropped with a warning.
pub fn fuse_view(
    relative: &FloatImage,
    mask: Option<&[bool]>,
    observations: &[SparseObservation],
    model: &RpcModel,
    bounds: &SceneBounds,
    form: FitForm,
) -> Result<FusedDepthMap> {
    let (w, h) = (relative.width, relative.height);
    if let Some(m) = mask {
        if m.len() != w * h {
            return Err(Error::InvalidArgument(format!(
                "mask has {} pixels, depth map {}",
                m.len(),
                w * h
            )));
        }
    }
    let mut rel: Vec<f64> = relative.data.iter().map(|v| f64::from(*v)).collect();
    normalize_relative(&mut rel).ok_or(Error::EmptyDataset)?;
    let valid: Vec<bool> = (0..w * h)
        .map(|i| rel[i].is_finite() && mask.is_none_or(|m| m[i]))
        .collect();

    let weights = reprojection_weights(&observations.iter().map(|o| o.reproj_error).collect::<Vec<_>>());
    let mut samples = Vec::new();
    let mut dropped = 0;
    for (o, wt) in observations.iter().zip(weights) {
        let (u, v) = rounded_pixel(o);
        if u < 0.0 || v < 0.0 || u >= h as f64 || v >= w as f64 {
            dropped += 1;
            continue;
        }
        let i = u as usize * w + v as usize;
        if !valid[i] {
            dropped += 1;
            continue;
        }
        match reparameterize_sparse_depth(o, model, bounds) {
            Ok(depth) => samples.push(FitSample {
                relative: rel[i],
                depth,
                weight: wt,
            }),
            Err(e) => {
                log::warn!("dropping sparse point at ({}, {}): {e}", o.u, o.v);
                dropped += 1;
            }
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} of {} sparse points unusable", observations.len());
    }
    let fit = fit_scale_offset(&samples, form)?;
    let absolute = (0..w * h)
        .map(|i| {
            if valid[i] {
                fit.scale * rel[i] + fit.offset
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(FusedDepthMap {
        width: w,
        height: h,
        relative: rel,
        absolute,
        mask: valid,
        fit,
    })
}
