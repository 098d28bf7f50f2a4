//! DSM error statistics and Chamfer distance between point sets.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::Vec3;

/// Median of the values; NaN for an empty slice. Reorders `v`.
pub fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsmDiffReport {
    pub mae: f64,
    pub med: f64,
    pub valid: usize,
    /// Fraction of cells without data in the prediction and in the truth.
    pub nodata_pred: f64,
    pub nodata_truth: f64,
    /// Signed per-cell error `pred - truth`; NaN where either is missing.
    pub errors: Vec<f64>,
}

impl DsmDiffReport {
    pub fn valid_fraction(&self) -> f64 {
        self.valid as f64 / self.errors.len().max(1) as f64
    }
}

/// MAE and median absolute error over cells valid in both grids. With
/// `align`, the median signed offset is removed first.
pub fn dsm_error_stats(pred: &Raster, truth: &Raster, align: bool) -> Result<DsmDiffReport> {
    if !pred.spec.same_as(&truth.spec) {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", pred.spec, truth.spec)));
    }
    let mut errors: Vec<f64> = pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(p, t)| {
            if p.is_finite() && t.is_finite() {
                p - t
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut signed: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
    if signed.is_empty() {
        return Err(Error::NoOverlap);
    }
    if align {
        let shift = median(&mut signed);
        for e in errors.iter_mut() {
            *e -= shift;
        }
    }
    let mut abs: Vec<f64> = errors.iter().filter(|e| e.is_finite()).map(|e| e.abs()).collect();
    let n = pred.data.len() as f64;
    Ok(DsmDiffReport {
        mae: crate::losses::pairwise_sum(&abs) / abs.len() as f64,
        valid: abs.len(),
        med: median(&mut abs),
        nodata_pred: pred.data.iter().filter(|v| !v.is_finite()).count() as f64 / n,
        nodata_truth: truth.data.iter().filter(|v| !v.is_finite()).count() as f64 / n,
        errors,
    })
}

/// One point per valid cell: (easting, northing, height).
pub fn dsm_points(r: &Raster) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(r.valid_count());
    for row in 0..r.spec.height {
        for col in 0..r.spec.width {
            let h = r.get(row, col);
            if h.is_finite() {
                let (e, n) = r.spec.cell_center(row, col);
                out.push(Vec3::new(e, n, h));
            }
        }
    }
    out
}

/// Static 3-d tree for exact nearest-neighbor queries.
pub struct KdTree {
    points: Vec<Vec3>,
    /// Implicit balanced tree over `points` (reordered): node = median of
    /// its range, split axis = depth % 3.
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        Self {
            points: points.to_vec(),
            order,
        }
    }

    /// Squared distance to the nearest stored point; infinite if empty.
    pub fn nearest_sq(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.order.len(), 0, &mut best);
        best
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, depth: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[self.order[mid]];
        let d = (p - q).norm_squared();
        if d < *best {
            *best = d;
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, depth + 1, best);
        if diff * diff < *best {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn build(points: &[Vec3], idx: &mut [usize], depth: usize) {
    if idx.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |a, b| points[*a][axis].total_cmp(&points[*b][axis]));
    let (left, right) = idx.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

fn mean_nearest_sq(from: &[Vec3], to: &KdTree) -> f64 {
    use rayon::prelude::*;
    let d: Vec<f64> = from.par_iter().map(|p| to.nearest_sq(p)).collect();
    crate::losses::pairwise_sum(&d) / d.len() as f64
}

/// Symmetric Chamfer distance with squared nearest-neighbor distances.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    if a.iter().chain(b).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("point set coordinate".into()));
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(mean_nearest_sq(a, &tb) + mean_nearest_sq(b, &ta))
}

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scene: String,
    pub mae: f64,
    pub med: f64,
    pub cd: f64,
    pub valid_fraction: f64,
}

pub const METRICS_HEADER: &str = "scene,mae,med,cd,valid_fraction";

/// Appends a row, writing the header first if the file is new or empty.
pub fn append_metrics(path: &Path, row: &MetricsRow) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    if fresh {
        s.push_str(METRICS_HEADER);
        s.push('\n');
    }
    s.push_str(&format!(
        "{},{},{},{},{}\n",
        row.scene, row.mae, row.med, row.cd, row.valid_fraction
    ));
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
        let one = |x: &[Vec3], y: &[Vec3]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        one(a, b) + one(b, a)
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(0.0..2.0),
                )
            })
            .collect()
    }

    #[test]
    fn chamfer_worked_example() {
        let c = chamfer(&[Vec3::zeros()], &[Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(c, 2.0);
        assert!(matches!(chamfer(&[], &[Vec3::zeros()]), Err(Error::EmptySet)));
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1, 2, 7, 50, 100] {
            let a = cloud(&mut rng, n);
            let b = cloud(&mut rng, 100 - n + 1);
            let fast = chamfer(&a, &b).unwrap();
            assert!((fast - brute_chamfer(&a, &b)).abs() <= 1e-12, "n = {n}");
        }
    }

    #[test]
    fn kd_tree_handles_duplicates() {
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 64];
        let t = KdTree::new(&pts);
        assert_eq!(t.nearest_sq(&Vec3::new(1.0, 1.0, 2.0)), 1.0);
    }

    proptest! {
        #[test]
        fn chamfer_symmetry_and_translation(seed in 0u64..1000, shift in (-100.0f64..100.0, -100.0f64..100.0, -10.0f64..10.0)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, 30);
            let b = cloud(&mut rng, 20);
            let ab = chamfer(&a, &b).unwrap();
            prop_assert!((ab - chamfer(&b, &a).unwrap()).abs() <= 1e-12);
            prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
            let t = Vec3::new(shift.0, shift.1, shift.2);
            let a2: Vec<Vec3> = a.iter().map(|p| p + t).collect();
            let b2: Vec<Vec3> = b.iter().map(|p| p + t).collect();
            prop_assert!((ab - chamfer(&a2, &b2).unwrap()).abs() <= 1e-9);
        }
    }

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec {
            origin: (1000.0, 2000.0),
            cell_size: 0.5,
            width: w,
            height: h,
        }
    }

    #[test]
    fn identical_and_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = Raster {
            spec: spec(8, 6),
            data: (0..48).map(|_| rng.gen_range(0.0..20.0)).collect(),
        };
        let r = dsm_error_stats(&truth, &truth, false).unwrap();
        assert_eq!((r.mae, r.med), (0.0, 0.0));
        let shifted = Raster {
            spec: truth.spec,
            data: truth.data.iter().map(|v| v + 2.0).collect(),
        };
        let r = dsm_error_stats(&shifted, &truth, false).unwrap();
        assert!((r.mae - 2.0).abs() < 1e-12 && (r.med - 2.0).abs() < 1e-12);
        let r = dsm_error_stats(&shifted, &truth, true).unwrap();
        assert!(r.mae < 1e-12);
    }

    #[test]
    fn stats_match_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..35)
                    .map(|_| {
                        if rng.gen_bool(0.15) {
                            f64::NAN
                        } else {
                            rng.gen_range(-5.0..30.0)
                        }
                    })
                    .collect()
            };
            let a = Raster {
                spec: spec(7, 5),
                data: gen(&mut rng),
            };
            let b = Raster {
                spec: spec(7, 5),
                data: gen(&mut rng),
            };
            let mut diffs = Vec::new();
            for i in 0..35 {
                if !a.data[i].is_nan() && !b.data[i].is_nan() {
                    diffs.push((a.data[i] - b.data[i]).abs());
                }
            }
            let mae = diffs.iter().sum::<f64>() / diffs.len() as f64;
            diffs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let k = diffs.len();
            let med = if k % 2 == 1 {
                diffs[k / 2]
            } else {
                (diffs[k / 2 - 1] + diffs[k / 2]) / 2.0
            };
            let r = dsm_error_stats(&a, &b, false).unwrap();
            assert!((r.mae - mae).abs() <= 1e-12 && (r.med - med).abs() <= 1e-12);
            assert_eq!(r.valid, k);
        }
    }

    #[test]
    fn shared_nodata_mask_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Raster {
            spec: spec(5, 5),
            data: (0..25).map(|_| rng.gen_range(0.0..9.0)).collect(),
        };
        let mut b = Raster {
            spec: spec(5, 5),
            data: (0..25).map(|_| rng.gen_range(0.0..9.0)).collect(),
        };
        b.data[3] = f64::NAN;
        let base = dsm_error_stats(&a, &b, false).unwrap();
        let (mut a2, mut b2) = (a.clone(), b.clone());
        for i in [3, 7, 11] {
            a2.data[i] = f64::NAN;
            b2.data[i] = f64::NAN;
        }
        let masked = dsm_error_stats(&a2, &b2, false).unwrap();
        let direct = dsm_error_stats(&a2, &b, false).unwrap();
        assert_eq!(masked.mae, direct.mae);
        assert!(base.valid > masked.valid);
    }

    #[test]
    fn mismatch_and_no_overlap() {
        let a = Raster::filled(spec(4, 4), 1.0);
        let b = Raster::filled(spec(4, 5), 1.0);
        assert!(matches!(dsm_error_stats(&a, &b, false), Err(Error::GridMismatch(_))));
        let c = Raster::filled(spec(4, 4), f64::NAN);
        assert!(matches!(dsm_error_stats(&a, &c, false), Err(Error::NoOverlap)));
    }

    #[test]
    fn metrics_file_gets_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let row = MetricsRow {
            scene: "s".into(),
            mae: 1.5,
            med: 0.25,
            cd: 3.0,
            valid_fraction: 1.0,
        };
        append_metrics(&p, &row).unwrap();
        append_metrics(&p, &row).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "scene,mae,med,cd,valid_fraction\ns,1.5,0.25,3,1\ns,1.5,0.25,3,1\n"
        );
    }
}
