//! Multi-resolution hash feature grid and sinusoidal frequency embedding.
//!
//! Level `i` (0-based) has `N_i = floor(N_min * b^i)` vertices per axis over
//! the canonical cube, with `b = exp((ln N_max - ln N_min) / (L - 1))`.
//! Levels whose dense vertex lattice fits in the table are indexed
//! row-major; finer levels use the XOR-of-primes spatial hash. Every level owns
//! exactly `T` entries of `F` features, stored level-major in one flat table.
//!
//! Level `i` is active for gating value `lambda` iff `lambda >= i + 1`.
//! Inactive levels write exact zeros and never touch the table.

use std::sync::Once;

use crate::error::{Error, Result};
use crate::Vec3;

pub const PRIME_Y: u32 = 2_654_435_761;
pub const PRIME_Z: u32 = 805_459_861;

#[derive(Debug, Clone, PartialEq)]
pub struct HashGridConfig {
    pub levels: usize,
    pub base_resolution: u32,
    pub max_resolution: u32,
    pub table_log2: u32,
    pub feature_dim: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 24,
            base_resolution: 16,
            max_resolution: 2048,
            table_log2: 19,
            feature_dim: 2,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("hash_grid.levels", "must be >= 1"));
        }
        if self.base_resolution < 2 {
            return Err(Error::config("hash_grid.base_resolution", "must be >= 2"));
        }
        if self.max_resolution < self.base_resolution {
            return Err(Error::config("hash_grid.max_resolution", "must be >= base_resolution"));
        }
        if !(1..=30).contains(&self.table_log2) {
            return Err(Error::config("hash_grid.table_log2", "must be in 1..=30"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("hash_grid.feature_dim", "must be >= 1"));
        }
        Ok(())
    }

    pub fn growth_factor(&self) -> f64 {
        if self.levels <= 1 {
            return 1.0;
        }
        ((f64::from(self.max_resolution).ln() - f64::from(self.base_resolution).ln()) / (self.levels - 1) as f64).exp()
    }

    /// Vertices per axis at `level` (0-based).
    pub fn resolution(&self, level: usize) -> u32 {
        let r = f64::from(self.base_resolution) * self.growth_factor().powi(level as i32);
        // guard against b^i landing a hair under an integer
        (r + 1e-9).floor() as u32
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_log2
    }

    pub fn is_dense(&self, level: usize) -> bool {
        let n = u64::from(self.resolution(level));
        n * n * n <= self.table_size() as u64
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.feature_dim
    }

    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.feature_dim
    }

    /// Canonical width of one cell at `level`.
    pub fn cell_size(&self, level: usize) -> f64 {
        2.0 / f64::from(self.resolution(level) - 1)
    }

    /// Number of levels active for a gating value.
    pub fn active_levels(&self, lambda: f64) -> usize {
        (0..self.levels).filter(|&l| gate(l, lambda)).count()
    }
}

/// Binary gate of level `level` (0-based) at gating value `lambda`.
#[inline]
pub fn gate(level: usize, lambda: f64) -> bool {
    lambda >= (level + 1) as f64
}

/// Table slot for an integer vertex at `level`.
#[inline]
pub fn hash_index(level: usize, cell: [u32; 3], config: &HashGridConfig) -> usize {
    let t = config.table_size();
    if config.is_dense(level) {
        let n = config.resolution(level) as usize;
        cell[0] as usize + cell[1] as usize * n + cell[2] as usize * n * n
    } else {
        let h = cell[0] ^ cell[1].wrapping_mul(PRIME_Y) ^ cell[2].wrapping_mul(PRIME_Z);
        h as usize & (t - 1)
    }
}

/// Per-level interpolation record kept for the backward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct LevelCache {
    /// Flat offsets (in entries, not features) of the 8 corners in the table.
    pub corners: [u32; 8],
    pub frac: [f64; 3],
    /// d(frac)/d(x) per axis; zero where the coordinate was clamped.
    pub dfrac_dx: [f64; 3],
}

#[derive(Debug, Clone, Default)]
pub struct EncodeCache {
    pub levels: Vec<LevelCache>,
}

#[inline]
fn corner_weight(frac: &[f64; 3], c: usize) -> f64 {
    let wx = if c & 1 != 0 { frac[0] } else { 1.0 - frac[0] };
    let wy = if c & 2 != 0 { frac[1] } else { 1.0 - frac[1] };
    let wz = if c & 4 != 0 { frac[2] } else { 1.0 - frac[2] };
    wx * wy * wz
}

static CLAMP_WARNING: Once = Once::new();

/// Multi-resolution hash grid over a flat level-major table.
#[derive(Debug, Clone)]
pub struct HashGrid {
    pub config: HashGridConfig,
    resolutions: Vec<u32>,
    dense: Vec<bool>,
}

impl HashGrid {
    pub fn new(config: HashGridConfig) -> Result<Self> {
        config.validate()?;
        let resolutions = (0..config.levels).map(|l| config.resolution(l)).collect();
        let dense = (0..config.levels).map(|l| config.is_dense(l)).collect();
        Ok(Self {
            config,
            resolutions,
            dense,
        })
    }

    #[inline]
    fn index(&self, level: usize, v: [u32; 3]) -> usize {
        if self.dense[level] {
            let n = self.resolutions[level] as usize;
            v[0] as usize + v[1] as usize * n + v[2] as usize * n * n
        } else {
            let h = v[0] ^ v[1].wrapping_mul(PRIME_Y) ^ v[2].wrapping_mul(PRIME_Z);
            h as usize & (self.config.table_size() - 1)
        }
    }

    /// Encodes `x` into `out` (length `L * F`). Fills `cache` with one record
    /// per active level when given.
    pub fn encode(&self, x: &Vec3, lambda: f64, table: &[f64], out: &mut [f64], mut cache: Option<&mut EncodeCache>) {
        let f = self.config.feature_dim;
        let t = self.config.table_size();
        debug_assert_eq!(out.len(), self.config.output_dim());
        if let Some(c) = cache.as_deref_mut() {
            c.levels.clear();
        }
        if x.iter().any(|v| v.abs() > 1.0 + 1e-6) {
            CLAMP_WARNING.call_once(|| {
                log::warn!("hash encoding input outside [-1, 1]^3 was clamped");
            });
        }
        for level in 0..self.config.levels {
            let slot = &mut out[level * f..(level + 1) * f];
            if !gate(level, lambda) {
                slot.fill(0.0);
                continue;
            }
            let n = self.resolutions[level];
            let scale = 0.5 * f64::from(n - 1);
            let mut base = [0u32; 3];
            let mut frac = [0.0; 3];
            let mut dfrac = [0.0; 3];
            for a in 0..3 {
                let p = (x[a] + 1.0) * scale;
                let (p, d) = if p <= 0.0 {
                    (0.0, 0.0)
                } else if p >= f64::from(n - 1) {
                    (f64::from(n - 1), 0.0)
                } else {
                    (p, scale)
                };
                let cell = (p.floor() as u32).min(n - 2);
                base[a] = cell;
                frac[a] = p - f64::from(cell);
                dfrac[a] = d;
            }
            let mut rec = LevelCache {
                frac,
                dfrac_dx: dfrac,
                ..Default::default()
            };
            slot.fill(0.0);
            let level_base = level * t;
            for c in 0..8 {
                let v = [
                    base[0] + (c & 1) as u32,
                    base[1] + ((c >> 1) & 1) as u32,
                    base[2] + ((c >> 2) & 1) as u32,
                ];
                let entry = level_base + self.index(level, v);
                rec.corners[c] = entry as u32;
                let w = corner_weight(&frac, c);
                let feats = &table[entry * f..entry * f + f];
                for (o, &v) in slot.iter_mut().zip(feats) {
                    *o += w * v;
                }
            }
            if let Some(cache) = cache.as_deref_mut() {
                cache.levels.push(rec);
            }
        }
    }

    /// Scatters `d_out` (gradient w.r.t. the encoding) into table-parameter
    /// gradients through `sink(flat_param_index, value)`. Only active levels
    /// are recorded in the cache, so gated levels receive nothing.
    pub fn backward_params<F: FnMut(usize, f64)>(&self, cache: &EncodeCache, lambda: f64, d_out: &[f64], mut sink: F) {
        let f = self.config.feature_dim;
        let mut active = (0..self.config.levels).filter(|&l| gate(l, lambda));
        for rec in &cache.levels {
            let level = active.next().expect("cache/gate mismatch");
            let g = &d_out[level * f..(level + 1) * f];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for c in 0..8 {
                let w = corner_weight(&rec.frac, c);
                let entry = rec.corners[c] as usize;
                for (k, gk) in g.iter().enumerate() {
                    sink(entry * f + k, w * gk);
                }
            }
        }
    }

    /// Gradient of `<d_out, encode(x)>` with respect to `x`.
    pub fn backward_input(&self, cache: &EncodeCache, lambda: f64, d_out: &[f64], table: &[f64]) -> Vec3 {
        let f = self.config.feature_dim;
        let mut dx = Vec3::zeros();
        let mut active = (0..self.config.levels).filter(|&l| gate(l, lambda));
        for rec in &cache.levels {
            let level = active.next().expect("cache/gate mismatch");
            let g = &d_out[level * f..(level + 1) * f];
            let fr = &rec.frac;
            for c in 0..8 {
                let entry = rec.corners[c] as usize;
                let feats = &table[entry * f..entry * f + f];
                let proj: f64 = feats.iter().zip(g).map(|(a, b)| a * b).sum();
                if proj == 0.0 {
                    continue;
                }
                let bit = |a: usize| (c >> a) & 1 != 0;
                let w1 = |a: usize| if bit(a) { fr[a] } else { 1.0 - fr[a] };
                let s = |a: usize| if bit(a) { 1.0 } else { -1.0 };
                dx[0] += proj * s(0) * w1(1) * w1(2) * rec.dfrac_dx[0];
                dx[1] += proj * w1(0) * s(1) * w1(2) * rec.dfrac_dx[1];
                dx[2] += proj * w1(0) * w1(1) * s(2) * rec.dfrac_dx[2];
            }
        }
        dx
    }
}

/// `[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{B-1} pi v), cos(2^{B-1} pi v)]`
/// where each entry is a whole vector of the same length as `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyEmbedding {
    pub num_bands: usize,
    pub include_input: bool,
}

impl FrequencyEmbedding {
    pub fn new(num_bands: usize, include_input: bool) -> Self {
        Self {
            num_bands,
            include_input,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.num_bands + usize::from(self.include_input))
    }

    pub fn embed_into(&self, v: &[f64], out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + self.output_dim(v.len()), 0.0);
        self.embed_to_slice(v, &mut out[start..]);
    }

    /// Writes the embedding into `out`, which must hold `output_dim` values.
    pub fn embed_to_slice(&self, v: &[f64], out: &mut [f64]) {
        let k = v.len();
        let mut off = 0;
        if self.include_input {
            out[..k].copy_from_slice(v);
            off = k;
        }
        // higher bands by the double-angle identities
        for i in 0..k {
            let (mut s, mut c) = (std::f64::consts::PI * v[i]).sin_cos();
            for b in 0..self.num_bands {
                out[off + 2 * k * b + i] = s;
                out[off + 2 * k * b + k + i] = c;
                (s, c) = (2.0 * s * c, (c - s) * (c + s));
            }
        }
    }

    pub fn embed(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(v.len()));
        self.embed_into(v, &mut out);
        out
    }

    /// Accumulates d(loss)/dv into `dv` given d(loss)/d(embedding).
    pub fn backward(&self, v: &[f64], d_out: &[f64], dv: &mut [f64]) {
        let k = v.len();
        let mut off = 0;
        if self.include_input {
            for i in 0..k {
                dv[i] += d_out[i];
            }
            off = k;
        }
        let mut freq = std::f64::consts::PI;
        for _ in 0..self.num_bands {
            for i in 0..k {
                let a = freq * v[i];
                dv[i] += d_out[off + i] * freq * a.cos() - d_out[off + k + i] * freq * a.sin();
            }
            off += 2 * k;
            freq *= 2.0;
        }
    }
}
