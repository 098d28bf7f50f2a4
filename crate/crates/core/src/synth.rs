//! Synthetic datasets with known geometry: an analytic box scene, pinhole
//! cameras turned into fitted RPC models, rendered images, oracle relative
//! depths, noisy sparse points, masks and the ground-truth DSM.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::utm::{from_utm, to_utm};
use crate::camera::{make_ray, rpc_basis, Normalization, Ray, RpcModel, SceneBounds, UtmZone, RPC_TERMS};
use crate::dataset::{BoundsEntry, ImageEntry, Manifest, TruthEntry};
use crate::error::{Error, Result};
use crate::priors::{write_sparse_csv, SparseObservation};
use crate::raster::{write_mask, write_pfm, write_rgb, FloatImage, GridSpec, Raster};
use crate::Vec3;

pub const BUNDLED_SCENE: &str = include_str!("../scenes/two_boxes.toml");

/// Upright box standing on the ground. Offsets are metres east/north of the
/// scene center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxPrimitive {
    pub center: [f64; 2],
    pub size: [f64; 2],
    /// Height above the ground.
    pub height: f64,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpherePrimitive {
    /// East, north offsets and altitude of the center.
    pub center: [f64; 3],
    pub radius: f64,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticScene {
    pub center_lat: f64,
    pub center_lon: f64,
    /// Half side of the square covered by the ground-truth DSM, metres.
    pub half_extent: f64,
    /// Half side of the reconstruction volume, metres.
    pub bounds_half_extent: f64,
    pub alt_ref_lower: f64,
    pub alt_ref_upper: f64,
    pub ground: f64,
    pub ground_albedo: [f64; 3],
    #[serde(default)]
    pub boxes: Vec<BoxPrimitive>,
    #[serde(default)]
    pub spheres: Vec<SpherePrimitive>,
    /// Optional water rectangle [e0, n0, e1, n1] (offsets) masked out of
    /// depth and normal supervision.
    #[serde(default)]
    pub water: Option<[f64; 4]>,
}

/// Scene geometry resolved into UTM.
#[derive(Debug, Clone)]
pub struct SceneFrame {
    pub scene: AnalyticScene,
    pub zone: UtmZone,
    /// UTM of the scene center (whole metres).
    pub origin: (f64, f64),
    pub bounds: SceneBounds,
    pub dsm_spec: GridSpec,
}

pub const DSM_CELL: f64 = 0.5;

impl AnalyticScene {
    pub fn parse(text: &str) -> Result<Self> {
        let s: AnalyticScene = toml::from_str(text).map_err(|e| Error::config("scene", e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::raster::read_text(path)?).map_err(|e| match e {
            Error::Config { message, .. } => Error::parse(path, message),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alt_ref_upper > self.alt_ref_lower) {
            return Err(Error::config("scene.alt_ref_upper", "must exceed alt_ref_lower"));
        }
        if !(self.half_extent > 0.0 && self.bounds_half_extent >= self.half_extent) {
            return Err(Error::config("scene.bounds_half_extent", "must be >= half_extent > 0"));
        }
        let inside_alt = |z: f64| z > self.alt_ref_lower && z < self.alt_ref_upper;
        if !inside_alt(self.ground) {
            return Err(Error::config(
                "scene.ground",
                "must lie between the reference altitudes",
            ));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let fits = (0..2).all(|a| b.center[a].abs() + 0.5 * b.size[a] <= self.half_extent);
            if !fits || b.size.iter().any(|s| !(*s > 0.0)) || !(b.height > 0.0) || !inside_alt(self.ground + b.height) {
                return Err(Error::config(
                    format!("scene.boxes[{i}]"),
                    "outside the scene or degenerate",
                ));
            }
        }
        for (i, s) in self.spheres.iter().enumerate() {
            let r = s.radius;
            let fits = s.center[0].abs() + r <= self.half_extent
                && s.center[1].abs() + r <= self.half_extent
                && inside_alt(s.center[2] + r);
            if !(r > 0.0) || !fits {
                return Err(Error::config(
                    format!("scene.spheres[{i}]"),
                    "outside the scene or degenerate",
                ));
            }
        }
        Ok(())
    }

    /// Exact signed distance at a local point (east/north offsets, altitude):
    /// the minimum over ground plane, boxes and spheres.
    pub fn sdf_local(&self, p: &Vec3) -> f64 {
        let mut d = p.z - self.ground;
        for b in &self.boxes {
            d = d.min(box_sdf(b, self.ground, p));
        }
        for s in &self.spheres {
            d = d.min((p - Vec3::new(s.center[0], s.center[1], s.center[2])).norm() - s.radius);
        }
        d
    }

    /// Highest surface altitude above a local (east, north) point.
    pub fn height_local(&self, e: f64, n: f64) -> f64 {
        let mut h = self.ground;
        for b in &self.boxes {
            if (e - b.center[0]).abs() <= 0.5 * b.size[0] && (n - b.center[1]).abs() <= 0.5 * b.size[1] {
                h = h.max(self.ground + b.height);
            }
        }
        for s in &self.spheres {
            let r2 = s.radius.powi(2) - (e - s.center[0]).powi(2) - (n - s.center[1]).powi(2);
            if r2 >= 0.0 {
                h = h.max(s.center[2] + r2.sqrt());
            }
        }
        h
    }

    fn albedo_local(&self, p: &Vec3) -> [f64; 3] {
        let mut best = (p.z - self.ground).abs();
        let mut albedo = self.ground_albedo;
        for b in &self.boxes {
            let d = box_sdf(b, self.ground, p).abs();
            if d < best {
                best = d;
                albedo = b.albedo;
            }
        }
        for s in &self.spheres {
            let d = ((p - Vec3::new(s.center[0], s.center[1], s.center[2])).norm() - s.radius).abs();
            if d < best {
                best = d;
                albedo = s.albedo;
            }
        }
        albedo
    }

    fn in_water(&self, e: f64, n: f64) -> bool {
        self.water
            .is_some_and(|w| e >= w[0].min(w[2]) && e <= w[0].max(w[2]) && n >= w[1].min(w[3]) && n <= w[1].max(w[3]))
    }

    /// Resolves the scene center into UTM and builds bounds and DSM grid.
    pub fn frame(&self) -> Result<SceneFrame> {
        let zone = UtmZone::containing(self.center_lon, self.center_lat);
        let (e, n) = to_utm(zone, self.center_lon, self.center_lat);
        let origin = (e.round(), n.round());
        let h = self.bounds_half_extent;
        let mut lat = (f64::INFINITY, f64::NEG_INFINITY);
        let mut lon = (f64::INFINITY, f64::NEG_INFINITY);
        for (de, dn) in [(-h, -h), (h, -h), (h, h), (-h, h)] {
            let (lo, la) = from_utm(zone, origin.0 + de, origin.1 + dn);
            lat = (lat.0.min(la), lat.1.max(la));
            lon = (lon.0.min(lo), lon.1.max(lo));
        }
        let bounds = SceneBounds::new(lat, lon, self.alt_ref_lower, self.alt_ref_upper, zone)?;
        let cells = (2.0 * self.half_extent / DSM_CELL).round() as usize;
        let dsm_spec = GridSpec {
            origin: (origin.0 - self.half_extent, origin.1 - self.half_extent),
            cell_size: DSM_CELL,
            width: cells,
            height: cells,
        };
        Ok(SceneFrame {
            scene: self.clone(),
            zone,
            origin,
            bounds,
            dsm_spec,
        })
    }
}

fn box_sdf(b: &BoxPrimitive, ground: f64, p: &Vec3) -> f64 {
    let half = Vec3::new(0.5 * b.size[0], 0.5 * b.size[1], 0.5 * b.height);
    let c = Vec3::new(b.center[0], b.center[1], ground + half.z);
    let q = (p - c).abs() - half;
    let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    outside + q.x.max(q.y).max(q.z).min(0.0)
}

impl SceneFrame {
    pub fn to_local(&self, utm: &Vec3) -> Vec3 {
        Vec3::new(utm.x - self.origin.0, utm.y - self.origin.1, utm.z)
    }

    /// Signed distance (metres) at a UTM point.
    pub fn analytic_sdf(&self, utm: &Vec3) -> f64 {
        self.scene.sdf_local(&self.to_local(utm))
    }

    /// Ground-truth DSM: analytic maximum height at each cell center.
    pub fn truth_dsm(&self) -> Raster {
        let mut r = Raster::filled(self.dsm_spec, f64::NAN);
        for row in 0..self.dsm_spec.height {
            for col in 0..self.dsm_spec.width {
                let (e, n) = self.dsm_spec.cell_center(row, col);
                r.set(row, col, self.scene.height_local(e - self.origin.0, n - self.origin.1));
            }
        }
        r
    }

    /// Sphere-traces a canonical ray against the analytic scene; returns the
    /// canonical ray parameter of the first hit.
    pub fn trace(&self, ray: &Ray) -> Option<f64> {
        let m = self.bounds.metres_per_unit();
        // metres travelled per unit of t
        let speed = Vec3::new(ray.direction.x * m.x, ray.direction.y * m.y, ray.direction.z * m.z).norm();
        let mut t = ray.t_near;
        for _ in 0..4000 {
            let x = self.bounds.canonical_to_utm(ray.at(t));
            let d = self.analytic_sdf(&x);
            if d < 1e-7 {
                return Some(t);
            }
            t += d / speed;
            if t > ray.t_far + 1e-9 {
                return None;
            }
        }
        Some(t)
    }

    fn normal(&self, utm: &Vec3) -> Vec3 {
        let h = 1e-5;
        let g = Vec3::new(
            self.analytic_sdf(&(utm + Vec3::x() * h)) - self.analytic_sdf(&(utm - Vec3::x() * h)),
            self.analytic_sdf(&(utm + Vec3::y() * h)) - self.analytic_sdf(&(utm - Vec3::y() * h)),
            self.analytic_sdf(&(utm + Vec3::z() * h)) - self.analytic_sdf(&(utm - Vec3::z() * h)),
        );
        g.normalize()
    }
}

/// Pinhole camera in UTM metres. Image rows (`u`) run along `down`, columns
/// (`v`) along `right`; pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub center: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub down: Vec3,
    pub focal: f64,
    pub principal: (f64, f64),
}

impl PinholeCamera {
    /// Camera at `distance` metres from `target`, tilted `off_nadir` degrees
    /// toward `azimuth` (degrees clockwise from north).
    pub fn looking_at(
        target: Vec3,
        distance: f64,
        off_nadir: f64,
        azimuth: f64,
        focal: f64,
        size: (usize, usize),
    ) -> Self {
        let (th, az) = (off_nadir.to_radians(), azimuth.to_radians());
        let offset = Vec3::new(th.sin() * az.sin(), th.sin() * az.cos(), th.cos()) * distance;
        let center = target + offset;
        let forward = (-offset).normalize();
        let right = forward.cross(&Vec3::y()).normalize();
        let down = forward.cross(&right);
        Self {
            center,
            forward,
            right,
            down,
            focal,
            principal: (0.5 * (size.1 as f64 - 1.0), 0.5 * (size.0 as f64 - 1.0)),
        }
    }

    pub fn project(&self, utm: &Vec3) -> (f64, f64) {
        let d = utm - self.center;
        let z = d.dot(&self.forward);
        (
            self.principal.0 + self.focal * d.dot(&self.down) / z,
            self.principal.1 + self.focal * d.dot(&self.right) / z,
        )
    }
}

/// Least-squares RPC fit of any (lon, lat, alt) -> (u, v) map over a
/// 20×20×10 grid of the bounds, checked on a held-out grid at the midpoints.
/// Returns the model and the worst held-out residual in pixels.
pub fn fit_rpc<F: Fn(f64, f64, f64) -> (f64, f64)>(project: F, bounds: &SceneBounds) -> Result<(RpcModel, f64)> {
    let lat = Normalization::new(
        0.5 * (bounds.lat_min + bounds.lat_max),
        0.5 * (bounds.lat_max - bounds.lat_min),
    );
    let lon = Normalization::new(
        0.5 * (bounds.lon_min + bounds.lon_max),
        0.5 * (bounds.lon_max - bounds.lon_min),
    );
    let alt = Normalization::new(
        0.5 * (bounds.alt_ref_lower + bounds.alt_ref_upper),
        0.5 * (bounds.alt_ref_upper - bounds.alt_ref_lower),
    );
    let grid = |n: usize, mid: bool| -> Vec<f64> {
        (0..n)
            .map(|i| {
                if mid {
                    -1.0 + (2.0 * i as f64 + 1.0) / n as f64
                } else {
                    -1.0 + 2.0 * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    };
    let samples = |n: [usize; 3], mid: bool| -> Vec<(f64, f64, f64, f64, f64)> {
        let mut out = Vec::new();
        for l in grid(n[0], mid) {
            for p in grid(n[1], mid) {
                for h in grid(n[2], mid) {
                    let (u, v) = project(lon.denormalize(p), lat.denormalize(l), alt.denormalize(h));
                    out.push((l, p, h, u, v));
                }
            }
        }
        out
    };
    let train = samples([20, 20, 10], false);
    let range = |k: usize| {
        let vals = train.iter().map(|s| if k == 0 { s.3 } else { s.4 });
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        Normalization::new(0.5 * (lo + hi), 0.5 * (hi - lo).max(1.0))
    };
    let (line, samp) = (range(0), range(1));
    let solve = |target: &dyn Fn(&(f64, f64, f64, f64, f64)) -> f64| -> Result<([f64; RPC_TERMS], [f64; RPC_TERMS])> {
        let n = 2 * RPC_TERMS - 1;
        let mut a = DMatrix::<f64>::zeros(train.len(), n);
        let mut y = DVector::<f64>::zeros(train.len());
        for (r, s) in train.iter().enumerate() {
            let b = rpc_basis(s.0, s.1, s.2);
            let t = target(s);
            for k in 0..RPC_TERMS {
                a[(r, k)] = b[k];
            }
            for k in 1..RPC_TERMS {
                a[(r, RPC_TERMS + k - 1)] = -t * b[k];
            }
            y[r] = t;
        }
        let x = a
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::InvalidArgument(format!("rpc fit: {e}")))?;
        let mut num = [0.0; RPC_TERMS];
        let mut den = [0.0; RPC_TERMS];
        den[0] = 1.0;
        for k in 0..RPC_TERMS {
            num[k] = x[k];
        }
        for k in 1..RPC_TERMS {
            den[k] = x[RPC_TERMS + k - 1];
        }
        Ok((num, den))
    };
    let (line_num, line_den) = solve(&|s| line.normalize(s.3))?;
    let (samp_num, samp_den) = solve(&|s| samp.normalize(s.4))?;
    let model = RpcModel {
        line_num,
        line_den,
        samp_num,
        samp_den,
        lat,
        lon,
        alt,
        line,
        samp,
        domain_margin: RpcModel::DEFAULT_MARGIN,
    };
    let mut worst: f64 = 0.0;
    for s in samples([19, 19, 9], true) {
        let (u, v) = model.project(lon.denormalize(s.1), lat.denormalize(s.0), alt.denormalize(s.2))?;
        worst = worst.max((u - s.3).hypot(v - s.4));
    }
    Ok((model, worst))
}

/// Generation settings; the `[synth]` section of the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_views: usize,
    pub width: usize,
    pub height: usize,
    pub off_nadir_deg: f64,
    pub camera_distance: f64,
    /// Nadir ground sample distance, metres per pixel.
    pub gsd: f64,
    pub pixel_noise: f64,
    pub exposure_jitter: f64,
    pub ambient: f64,
    pub sun_elevation_deg: [f64; 2],
    pub sun_azimuth_deg: [f64; 2],
    pub sparse_points: usize,
    /// Standard deviation of the sparse points' pixel error.
    pub sparse_sigma: f64,
    /// Strength of a smooth monotone warp applied to the oracle relative
    /// depth, in [0, 1); 0 keeps it affine.
    pub depth_warp: f64,
    pub max_rpc_residual: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_views: 8,
            width: 96,
            height: 96,
            off_nadir_deg: 20.0,
            camera_distance: 2000.0,
            gsd: 0.5,
            pixel_noise: 0.01,
            exposure_jitter: 0.15,
            ambient: 0.3,
            sun_elevation_deg: [45.0, 75.0],
            sun_azimuth_deg: [100.0, 260.0],
            sparse_points: 300,
            sparse_sigma: 0.3,
            depth_warp: 0.0,
            max_rpc_residual: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views < 2 {
            return Err(Error::config("synth.n_views", "must be >= 2"));
        }
        if self.width < 3 || self.height < 3 {
            return Err(Error::config("synth.width", "images must be at least 3x3"));
        }
        if !(0.0..=25.0).contains(&self.off_nadir_deg) {
            return Err(Error::config("synth.off_nadir_deg", "must be in [0, 25]"));
        }
        if !(self.camera_distance > 0.0 && self.gsd > 0.0) {
            return Err(Error::config("synth.gsd", "camera distance and gsd must be > 0"));
        }
        if !(0.0..1.0).contains(&self.exposure_jitter) {
            return Err(Error::config("synth.exposure_jitter", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.depth_warp) {
            return Err(Error::config("synth.depth_warp", "must be in [0, 1)"));
        }
        if !(self.pixel_noise >= 0.0 && self.sparse_sigma >= 0.0) {
            return Err(Error::config("synth.pixel_noise", "noise levels must be >= 0"));
        }
        if self.sparse_points < 2 {
            return Err(Error::config("synth.sparse_points", "must be >= 2"));
        }
        Ok(())
    }
}

/// One generated view.
#[derive(Debug, Clone)]
pub struct SynthView {
    pub name: String,
    pub camera: PinholeCamera,
    pub rpc: RpcModel,
    pub rpc_residual: f64,
    pub sun_azimuth: f64,
    pub sun_elevation: f64,
    pub gain: f64,
    pub rgb: Vec<[f64; 3]>,
    /// True canonical ray depth per pixel (NaN where the ray misses).
    pub depth: Vec<f64>,
    /// Oracle relative depth in [0, 1].
    pub relative: Vec<f64>,
    /// `depth = relative_scale · relative + relative_offset` when unwarped.
    pub relative_scale: f64,
    pub relative_offset: f64,
    pub mask: Vec<bool>,
    pub sparse: Vec<SparseObservation>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub frame: SceneFrame,
    pub width: usize,
    pub height: usize,
    pub views: Vec<SynthView>,
    pub truth: Raster,
}

/// Unit sun direction (east, north, up) from azimuth and elevation.
pub fn sun_direction(azimuth_deg: f64, elevation_deg: f64) -> Vec3 {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    Vec3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin())
}

pub fn generate_dataset(scene: &AnalyticScene, cfg: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    scene.validate()?;
    cfg.validate()?;
    let frame = scene.frame()?;
    let views = (0..cfg.n_views)
        .into_par_iter()
        .map(|k| generate_view(&frame, cfg, seed, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        truth: frame.truth_dsm(),
        width: cfg.width,
        height: cfg.height,
        frame,
        views,
    })
}

fn generate_view(frame: &SceneFrame, cfg: &SynthConfig, seed: u64, k: usize) -> Result<SynthView> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    let (w, h) = (cfg.width, cfg.height);
    let azimuth = 360.0 * k as f64 / cfg.n_views as f64 + rng.gen_range(-10.0..10.0);
    let target = Vec3::new(frame.origin.0, frame.origin.1, frame.scene.ground + 5.0);
    let focal = cfg.camera_distance / cfg.gsd;
    let camera = PinholeCamera::looking_at(target, cfg.camera_distance, cfg.off_nadir_deg, azimuth, focal, (w, h));
    let zone = frame.zone;
    let (rpc, residual) = fit_rpc(
        |lon, lat, alt| {
            let (e, n) = to_utm(zone, lon, lat);
            camera.project(&Vec3::new(e, n, alt))
        },
        &frame.bounds,
    )?;
    if !(residual <= cfg.max_rpc_residual) {
        return Err(Error::RpcFitFailed {
            residual,
            limit: cfg.max_rpc_residual,
        });
    }
    let sun_azimuth = rng.gen_range(cfg.sun_azimuth_deg[0]..=cfg.sun_azimuth_deg[1]);
    let sun_elevation = rng.gen_range(cfg.sun_elevation_deg[0]..=cfg.sun_elevation_deg[1]);
    let sun = sun_direction(sun_azimuth, sun_elevation);
    let gain = 1.0 + rng.gen_range(-cfg.exposure_jitter..=cfg.exposure_jitter);
    let noise = Normal::new(0.0, cfg.pixel_noise.max(1e-300)).expect("valid sigma");

    let mut rays = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            rays.push(make_ray(&rpc, row as f64, col as f64, &frame.bounds)?);
        }
    }
    let mut rgb = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for ray in &rays {
        let hit = frame.trace(ray);
        let (color, d, valid) = match hit {
            Some(t) => {
                let x = frame.bounds.canonical_to_utm(ray.at(t));
                let local = frame.to_local(&x);
                let a = frame.scene.albedo_local(&local);
                let shade = cfg.ambient + (1.0 - cfg.ambient) * frame.normal(&x).dot(&sun).max(0.0);
                let c = a.map(|v| v * shade * gain);
                (c, t, !frame.scene.in_water(local.x, local.y))
            }
            None => ([0.0; 3], f64::NAN, false),
        };
        let c = color.map(|v| {
            let n = if cfg.pixel_noise > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            // fixed linear tone map, then 8-bit quantization
            ((v + n).clamp(0.0, 1.0) * 255.0).round() / 255.0
        });
        rgb.push(c);
        depth.push(d);
        mask.push(valid);
    }

    let (lo, hi) = depth
        .iter()
        .filter(|d| d.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(*d), b.max(*d)));
    let span = (hi - lo).max(1e-12);
    let warp = cfg.depth_warp;
    let relative = depth
        .iter()
        .map(|d| {
            let x = (d - lo) / span;
            x + warp * x * (1.0 - x)
        })
        .collect();

    let sparse = sample_sparse(frame, &rpc, &depth, &rays, (w, h), cfg, &mut rng)?;
    Ok(SynthView {
        name: format!("view{k:02}"),
        camera,
        rpc,
        rpc_residual: residual,
        sun_azimuth,
        sun_elevation,
        gain,
        rgb,
        depth,
        relative,
        relative_scale: span,
        relative_offset: lo,
        mask,
        sparse,
    })
}

/// Surface points seen at random pixels, reported at a noisy pixel location.
fn sample_sparse(
    frame: &SceneFrame,
    rpc: &RpcModel,
    depth: &[f64],
    rays: &[Ray],
    (w, h): (usize, usize),
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SparseObservation>> {
    let noise = Normal::new(0.0, cfg.sparse_sigma.max(1e-300)).expect("valid sigma");
    let mut out = Vec::with_capacity(cfg.sparse_points);
    let mut attempts = 0;
    while out.len() < cfg.sparse_points && attempts < 100 * cfg.sparse_points {
        attempts += 1;
        let (row, col) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let i = row * w + col;
        if !depth[i].is_finite() {
            continue;
        }
        let x = frame.bounds.canonical_to_utm(rays[i].at(depth[i]));
        let (lon, lat, alt) = frame.bounds.from_utm(x);
        let (u, v) = rpc.project(lon, lat, alt)?;
        let (du, dv) = if cfg.sparse_sigma > 0.0 {
            (noise.sample(rng), noise.sample(rng))
        } else {
            (0.0, 0.0)
        };
        let (u, v) = (u + du, v + dv);
        if u < -0.5 || v < -0.5 || u >= h as f64 - 0.5 || v >= w as f64 - 0.5 {
            continue;
        }
        out.push(SparseObservation {
            u,
            v,
            lon,
            lat,
            alt,
            reproj_error: du.hypot(dv),
        });
    }
    Ok(out)
}

impl SynthDataset {
    /// Writes images, RPCs, relative depths, sparse points, masks, the
    /// ground-truth DSM and `manifest.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut images = Vec::new();
        for v in &self.views {
            let name = &v.name;
            let entry = ImageEntry {
                name: name.clone(),
                image: format!("{name}.png"),
                rpc: format!("{name}_rpc.txt"),
                sun_azimuth: v.sun_azimuth,
                sun_elevation: v.sun_elevation,
                mask: Some(format!("{name}_mask.png")),
                depth: Some(format!("{name}_relative.pfm")),
                sparse: Some(format!("{name}_sparse.csv")),
            };
            write_rgb(&dir.join(&entry.image), self.width, self.height, &v.rgb)?;
            let rpc_path = dir.join(&entry.rpc);
            std::fs::write(&rpc_path, v.rpc.to_text()).map_err(|e| Error::io(&rpc_path, e))?;
            write_mask(
                &dir.join(entry.mask.as_ref().unwrap()),
                self.width,
                self.height,
                &v.mask,
            )?;
            let rel = FloatImage {
                width: self.width,
                height: self.height,
                data: v.relative.iter().map(|x| *x as f32).collect(),
            };
            write_pfm(&dir.join(entry.depth.as_ref().unwrap()), &rel)?;
            write_sparse_csv(&dir.join(entry.sparse.as_ref().unwrap()), &v.sparse)?;
            images.push(entry);
        }
        self.truth.write_asc(&dir.join("truth_dsm.asc"))?;
        let b = &self.frame.bounds;
        let manifest = Manifest {
            bounds: BoundsEntry {
                lat_min: b.lat_min,
                lat_max: b.lat_max,
                lon_min: b.lon_min,
                lon_max: b.lon_max,
                alt_ref_lower: b.alt_ref_lower,
                alt_ref_upper: b.alt_ref_upper,
                utm_zone: b.zone.to_string(),
            },
            truth: Some(TruthEntry {
                dsm: "truth_dsm.asc".into(),
            }),
            image: images,
        };
        manifest.write(&dir.join("manifest.toml"))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> AnalyticScene {
        AnalyticScene::parse(BUNDLED_SCENE).unwrap()
    }

    #[test]
    fn sdf_examples() {
        let s = scene();
        assert_eq!(s.sdf_local(&Vec3::new(-20.0, -20.0, s.ground + 5.0)), 5.0);
        let b = s.boxes[0];
        let c = Vec3::new(b.center[0], b.center[1], s.ground + 0.5 * b.height);
        let half_min = 0.5 * b.size[0].min(b.size[1]).min(b.height);
        assert!((box_sdf(&b, s.ground, &c) + half_min).abs() < 1e-12);
    }

    #[test]
    fn sdf_matches_dense_surface_samples() {
        let s = scene();
        let step = 0.25;
        let mut cloud = Vec::new();
        let grid = |a: f64, b: f64| {
            let n = ((b - a) / step).round() as usize;
            (0..=n).map(move |i| a + (b - a) * i as f64 / n as f64)
        };
        for e in grid(-24.0, 24.0) {
            for n in grid(-24.0, 24.0) {
                let z = s.height_local(e, n);
                cloud.push(Vec3::new(e, n, z));
            }
        }
        for b in &s.boxes {
            let (x0, x1) = (b.center[0] - 0.5 * b.size[0], b.center[0] + 0.5 * b.size[0]);
            let (y0, y1) = (b.center[1] - 0.5 * b.size[1], b.center[1] + 0.5 * b.size[1]);
            for z in grid(s.ground, s.ground + b.height) {
                for x in grid(x0, x1) {
                    cloud.push(Vec3::new(x, y0, z));
                    cloud.push(Vec3::new(x, y1, z));
                }
                for y in grid(y0, y1) {
                    cloud.push(Vec3::new(x0, y, z));
                    cloud.push(Vec3::new(x1, y, z));
                }
            }
        }
        let tree = crate::evaluation::KdTree::new(&cloud);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 1000 {
            let p = Vec3::new(
                rng.gen_range(-14.0..14.0),
                rng.gen_range(-14.0..14.0),
                rng.gen_range(0.0..24.0),
            );
            let d = s.sdf_local(&p);
            if d <= 0.0 {
                continue;
            }
            checked += 1;
            let oracle = tree.nearest_sq(&p).sqrt();
            // nearest sample lies within half a diagonal of the true foot point
            assert!((d - oracle).abs() <= step, "{p:?}: {d} vs {oracle}");
        }
    }

    #[test]
    fn truth_dsm_has_exact_box_heights() {
        let f = scene().frame().unwrap();
        let dsm = f.truth_dsm();
        let b = f.scene.boxes[0];
        for row in 0..dsm.spec.height {
            for col in 0..dsm.spec.width {
                let (e, n) = dsm.spec.cell_center(row, col);
                let (le, ln) = (e - f.origin.0, n - f.origin.1);
                let inside = (le - b.center[0]).abs() < 0.5 * b.size[0] && (ln - b.center[1]).abs() < 0.5 * b.size[1];
                if inside {
                    assert_eq!(dsm.get(row, col), f.scene.ground + b.height);
                }
            }
        }
        let corner = dsm.get(0, 0);
        assert_eq!(corner, f.scene.ground);
    }

    #[test]
    fn rpc_fit_of_pinhole_is_tight() {
        let f = scene().frame().unwrap();
        let cam = PinholeCamera::looking_at(
            Vec3::new(f.origin.0, f.origin.1, 5.0),
            2000.0,
            25.0,
            40.0,
            4000.0,
            (96, 96),
        );
        let zone = f.zone;
        let (rpc, res) = fit_rpc(
            |lon, lat, alt| {
                let (e, n) = to_utm(zone, lon, lat);
                cam.project(&Vec3::new(e, n, alt))
            },
            &f.bounds,
        )
        .unwrap();
        assert!(res <= 0.05, "{res}");
        let (lon, lat) = rpc.localize(47.5, 47.5, 5.0).unwrap();
        let (e, n) = to_utm(zone, lon, lat);
        assert!((e - f.origin.0).hypot(n - f.origin.1) < 0.05);
    }

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_views: 2,
            width: 24,
            height: 24,
            gsd: 2.0,
            sparse_points: 40,
            ..Default::default()
        }
    }

    #[test]
    fn flat_nadir_views_have_constant_depth() {
        let mut s = scene();
        s.boxes.clear();
        let cfg = SynthConfig {
            off_nadir_deg: 0.0,
            pixel_noise: 0.0,
            ..small_cfg()
        };
        let d = generate_dataset(&s, &cfg, 1).unwrap();
        // a pinhole is not orthographic: rays fan out, so depth varies by at
        // most the secant of the widest pixel angle
        let c = cfg.width as f64 * 0.5;
        let widest = (2.0f64.sqrt() * c / (cfg.camera_distance / cfg.gsd)).atan();
        let bound = 1.0 / widest.cos() - 1.0;
        for v in &d.views {
            let (lo, hi) = v
                .depth
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
            assert!((hi - lo) / lo <= bound + 1e-6, "{lo} {hi} {bound}");
            let center = v.depth[cfg.height / 2 * cfg.width + cfg.width / 2];
            let vertical = (d.frame.bounds.alt_ref_upper - s.ground) / d.frame.bounds.metres_per_unit().z;
            assert!((center - vertical).abs() / vertical <= bound);
        }
    }

    #[test]
    fn recorded_depth_is_where_the_ray_meets_the_surface() {
        let d = generate_dataset(&scene(), &small_cfg(), 5).unwrap();
        let f = &d.frame;
        for v in &d.views {
            for (i, t) in v.depth.iter().enumerate() {
                let ray = make_ray(&v.rpc, (i / d.width) as f64, (i % d.width) as f64, &f.bounds).unwrap();
                let x = f.bounds.canonical_to_utm(ray.at(*t));
                assert!(f.analytic_sdf(&x).abs() < 1e-3 * f.bounds.metres_per_unit().min());
            }
        }
    }

    #[test]
    fn generator_relative_depth_is_affine_in_true_depth() {
        let d = generate_dataset(&scene(), &small_cfg(), 2).unwrap();
        for v in &d.views {
            for (r, t) in v.relative.iter().zip(&v.depth) {
                assert!((v.relative_scale * r + v.relative_offset - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_on_disk() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            generate_dataset(&scene(), &small_cfg(), 9).unwrap().write(dir).unwrap();
        }
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() >= 11);
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap(),
                "{n:?}"
            );
        }
    }

    #[test]
    fn bad_scene_reports_key() {
        let text = BUNDLED_SCENE.replace("height = 10.0", "height = 100.0");
        match AnalyticScene::parse(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "scene.boxes[0]"),
            other => panic!("{other:?}"),
        }
    }
}
