//! Learnable signed-distance and color field.
//!
//! Every parameter lives in one flat `Vec<f64>` described by [`Layout`]: the
//! hash tables first (level-major), then the SDF MLP, the color MLP and the
//! log-sharpness `ς` with `s = exp(ς)`. Values are kept representable as f32
//! (see [`quantize`]) so checkpoints round-trip bit-exactly while all
//! arithmetic runs in f64.
//!
//! Spatial gradients are central differences of the SDF. Because each stencil
//! point is an ordinary forward evaluation, the reverse pass only ever needs
//! first derivatives: a gradient upstream `dL/dg_k` becomes `±dL/dg_k / 2ε` on
//! the two stencil evaluations along axis `k`.

pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoding::{EncodeCache, FrequencyEmbedding, HashGrid, HashGridConfig};
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub hidden_width: usize,
    /// Width of the intermediate feature passed from the SDF MLP to the color
    /// MLP.
    pub geo_feature_dim: usize,
    pub position_bands: usize,
    pub direction_bands: usize,
    pub softplus_beta: f64,
    /// Initial `s`; 20 gives a logistic 5-95% transition width of about 0.3.
    pub init_sharpness: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            geo_feature_dim: 256,
            position_bands: 6,
            direction_bands: 4,
            softplus_beta: 100.0,
            init_sharpness: 20.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width < 2 {
            return Err(Error::config("field.hidden_width", "must be >= 2"));
        }
        if !(self.softplus_beta > 0.0) {
            return Err(Error::config("field.softplus_beta", "must be > 0"));
        }
        if !(self.init_sharpness > 0.0) {
            return Err(Error::config("field.init_sharpness", "must be > 0"));
        }
        Ok(())
    }
}

/// Offsets of one dense layer inside the flat parameter vector. Weights are
/// row-major `[outputs][inputs]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: usize,
    pub bias: usize,
}

impl Linear {
    fn place(inputs: usize, outputs: usize, offset: &mut usize) -> Self {
        let weights = *offset;
        let bias = weights + inputs * outputs;
        *offset = bias + outputs;
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    #[inline]
    fn row(&self, p: &[f64], o: usize, x: &[f64]) -> f64 {
        let w = &p[self.weights + o * self.inputs..self.weights + (o + 1) * self.inputs];
        p[self.bias + o] + dot(w, x)
    }

    #[inline]
    fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            *y = self.row(p, o, x);
        }
    }

    /// Accumulates weight/bias gradients for the first `d_out.len()` outputs
    /// and, if asked, the input gradient (overwritten, not accumulated).
    fn backward(&self, p: &[f64], x: &[f64], d_out: &[f64], grad: &mut ParamGrad, d_in: Option<&mut [f64]>) {
        let n = self.inputs;
        {
            let gw = grad.dense_mut(self.weights, self.outputs * n);
            for (o, &g) in d_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (w, xi) in gw[o * n..(o + 1) * n].iter_mut().zip(x) {
                    *w += g * xi;
                }
            }
        }
        {
            let gb = grad.dense_mut(self.bias, self.outputs);
            for (b, &g) in gb.iter_mut().zip(d_out) {
                *b += g;
            }
        }
        if let Some(d_in) = d_in {
            d_in.fill(0.0);
            for (o, &g) in d_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let w = &p[self.weights + o * n..self.weights + (o + 1) * n];
                for (di, wi) in d_in.iter_mut().zip(w) {
                    *di += g * wi;
                }
            }
        }
    }
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Where each parameter group sits in the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub table_len: usize,
    pub encoding_dim: usize,
    pub sdf_input: usize,
    pub sdf: [Linear; 3],
    pub color_input: usize,
    pub color: [Linear; 3],
    pub log_s: usize,
    pub total: usize,
}

impl Layout {
    fn new(grid: &HashGridConfig, cfg: &FieldConfig) -> Self {
        let table_len = grid.param_count();
        let encoding_dim = grid.output_dim();
        let pos = FrequencyEmbedding::new(cfg.position_bands, true).output_dim(3);
        let dir = FrequencyEmbedding::new(cfg.direction_bands, true).output_dim(3);
        let h = cfg.hidden_width;
        let sdf_input = encoding_dim + pos;
        let color_input = 3 + 3 + cfg.geo_feature_dim + 2 * dir;
        let mut off = table_len;
        let sdf = [
            Linear::place(sdf_input, h, &mut off),
            Linear::place(h, h, &mut off),
            Linear::place(h, 1 + cfg.geo_feature_dim, &mut off),
        ];
        let color = [
            Linear::place(color_input, h, &mut off),
            Linear::place(h, h, &mut off),
            Linear::place(h, 3, &mut off),
        ];
        let log_s = off;
        Self {
            table_len,
            encoding_dim,
            sdf_input,
            sdf,
            color_input,
            color,
            log_s,
            total: log_s + 1,
        }
    }

    /// Range of the MLP weights (both heads).
    pub fn mlp_range(&self) -> std::ops::Range<usize> {
        self.table_len..self.log_s
    }
}

/// Gradient accumulator: dense for everything after the hash tables, a sparse
/// `(index, value)` list for table entries.
#[derive(Debug, Clone)]
pub struct ParamGrad {
    start: usize,
    pub dense: Vec<f64>,
    pub table: Vec<(u32, f64)>,
}

impl ParamGrad {
    pub fn new(layout: &Layout) -> Self {
        Self {
            start: layout.table_len,
            dense: vec![0.0; layout.total - layout.table_len],
            table: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.dense.fill(0.0);
        self.table.clear();
    }

    #[inline]
    fn dense_mut(&mut self, at: usize, len: usize) -> &mut [f64] {
        &mut self.dense[at - self.start..at - self.start + len]
    }

    #[inline]
    pub fn add(&mut self, index: usize, value: f64) {
        if index < self.start {
            self.table.push((index as u32, value));
        } else {
            self.dense[index - self.start] += value;
        }
    }

    /// Adds `other` into `self`, preserving a deterministic order.
    pub fn merge(&mut self, other: &ParamGrad) {
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            *a += b;
        }
        self.table.extend_from_slice(&other.table);
    }

    /// Materializes the full dense gradient.
    pub fn to_dense(&self, total: usize) -> Vec<f64> {
        let mut g = vec![0.0; total];
        self.add_to(&mut g);
        g
    }

    pub fn add_to(&self, g: &mut [f64]) {
        for &(i, v) in &self.table {
            g[i as usize] += v;
        }
        for (a, b) in g[self.start..].iter_mut().zip(&self.dense) {
            *a += b;
        }
    }
}

/// Rounds every value to the nearest f32.
pub fn quantize(values: &mut [f64]) {
    for v in values {
        *v = f64::from(*v as f32);
    }
}

#[inline]
fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    if z > 30.0 {
        x
    } else {
        z.exp().ln_1p() / beta
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Recorded forward pass of one SDF MLP evaluation.
#[derive(Debug, Clone, Default)]
pub struct SdfTape {
    x: Vec3,
    enc: EncodeCache,
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    /// Full output `[sdf, feature..]`, or just `[sdf]` for stencil points.
    out: Vec<f64>,
}

impl SdfTape {
    pub fn sdf(&self) -> f64 {
        self.out[0]
    }

    pub fn feature(&self) -> &[f64] {
        &self.out[1..]
    }
}

#[derive(Debug, Clone, Default)]
pub struct ColorTape {
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    color: [f64; 3],
}

/// Six stencil evaluations `[+x, -x, +y, -y, +z, -z]` around a point.
#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    stencil: [SdfTape; 6],
    eps: f64,
    pub gradient: Vec3,
}

/// Everything recorded for one ray sample.
#[derive(Debug, Clone, Default)]
pub struct PointTape {
    center: SdfTape,
    grad: GradientTape,
    color: ColorTape,
}

impl PointTape {
    pub fn sdf(&self) -> f64 {
        self.center.sdf()
    }

    pub fn gradient(&self) -> Vec3 {
        self.grad.gradient
    }

    pub fn color(&self) -> [f64; 3] {
        self.color.color
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub sdf: f64,
    pub feature: Vec<f64>,
    pub color: [f64; 3],
    pub gradient: Vec3,
}

#[derive(Debug, Clone)]
pub struct Field {
    pub config: FieldConfig,
    pub grid: HashGrid,
    pub layout: Layout,
    pub position_embedding: FrequencyEmbedding,
    pub direction_embedding: FrequencyEmbedding,
}

impl Field {
    pub fn new(grid: HashGridConfig, config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&grid, &config);
        Ok(Self {
            position_embedding: FrequencyEmbedding::new(config.position_bands, true),
            direction_embedding: FrequencyEmbedding::new(config.direction_bands, true),
            grid: HashGrid::new(grid)?,
            layout,
            config,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn sharpness(&self, p: &[f64]) -> f64 {
        p[self.layout.log_s].exp()
    }

    /// Parameters with the zero level set near the horizontal plane
    /// `z = plane_z` (canonical units).
    ///
    /// Hidden unit 0 of both SDF layers carries `z + 2`, which stays far in
    /// the linear regime of the softplus over the whole domain, and the SDF
    /// output reads only that unit, so `f(x) = z - plane_z` at init. All other
    /// units start random; the color head's last layer starts at zero.
    pub fn init_params(&self, seed: u64, plane_z: f64) -> Vec<f64> {
        let l = &self.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; l.total];
        for v in &mut p[..l.table_len] {
            *v = rng.gen_range(-1e-4..1e-4);
        }
        let mut gaussian = |p: &mut [f64], layer: &Linear, std: f64, rows: std::ops::Range<usize>| {
            let n = Normal::new(0.0, std).expect("positive std");
            for o in rows {
                for i in 0..layer.inputs {
                    p[layer.weights + o * layer.inputs + i] = n.sample(&mut rng);
                }
            }
        };
        let h = self.config.hidden_width;
        let [s1, s2, s3] = l.sdf;
        gaussian(&mut p, &s1, (2.0 / s1.inputs as f64).sqrt(), 1..h);
        gaussian(&mut p, &s2, (2.0 / h as f64).sqrt(), 1..h);
        gaussian(&mut p, &s3, (1.0 / h as f64).sqrt(), 1..s3.outputs);
        // pass-through unit
        let z_index = l.encoding_dim + 2;
        p[s1.weights + z_index] = 1.0;
        p[s1.bias] = 2.0;
        // unit 0 is read only by unit 0 of the next layer
        for o in 0..h {
            p[s2.weights + o * h] = 0.0;
        }
        for o in 0..s3.outputs {
            p[s3.weights + o * h] = 0.0;
        }
        p[s2.weights] = 1.0;
        p[s3.weights] = 1.0;
        p[s3.bias] = -2.0 - plane_z;

        let [c1, c2, _] = l.color;
        gaussian(&mut p, &c1, (2.0 / c1.inputs as f64).sqrt(), 0..h);
        gaussian(&mut p, &c2, (2.0 / h as f64).sqrt(), 0..h);
        p[l.log_s] = self.config.init_sharpness.ln();
        quantize(&mut p);
        p
    }

    /// Default finite-difference step: half the finest active cell.
    pub fn gradient_step(&self, lambda: f64) -> f64 {
        let cfg = &self.grid.config;
        let finest = cfg.active_levels(lambda).max(1) - 1;
        0.5 * cfg.cell_size(finest)
    }

    /// SDF MLP forward. With `full == false` only the SDF row of the last
    /// layer is computed.
    pub fn sdf_forward(&self, p: &[f64], x: &Vec3, lambda: f64, tape: &mut SdfTape, full: bool) -> f64 {
        let l = &self.layout;
        let beta = self.config.softplus_beta;
        tape.x = *x;
        tape.input.resize(l.sdf_input, 0.0);
        let (enc, emb) = tape.input.split_at_mut(l.encoding_dim);
        self.grid.encode(x, lambda, &p[..l.table_len], enc, Some(&mut tape.enc));
        self.position_embedding.embed_to_slice(x.as_slice(), emb);
        let h = self.config.hidden_width;
        tape.pre1.resize(h, 0.0);
        tape.act1.resize(h, 0.0);
        tape.pre2.resize(h, 0.0);
        tape.act2.resize(h, 0.0);
        l.sdf[0].forward(p, &tape.input, &mut tape.pre1);
        for (a, z) in tape.act1.iter_mut().zip(&tape.pre1) {
            *a = softplus(*z, beta);
        }
        l.sdf[1].forward(p, &tape.act1, &mut tape.pre2);
        for (a, z) in tape.act2.iter_mut().zip(&tape.pre2) {
            *a = softplus(*z, beta);
        }
        let outs = if full { l.sdf[2].outputs } else { 1 };
        tape.out.resize(outs, 0.0);
        l.sdf[2].forward(p, &tape.act2, &mut tape.out);
        tape.out[0]
    }

    /// Reverse pass of [`sdf_forward`](Self::sdf_forward). `d_out` covers the
    /// recorded outputs. Returns `dL/dx` when `want_dx`.
    pub fn sdf_backward(
        &self,
        p: &[f64],
        tape: &SdfTape,
        lambda: f64,
        d_out: &[f64],
        grad: &mut ParamGrad,
        want_dx: bool,
    ) -> Vec3 {
        let l = &self.layout;
        let beta = self.config.softplus_beta;
        let h = self.config.hidden_width;
        let mut d_act = vec![0.0; h];
        l.sdf[2].backward(p, &tape.act2, d_out, grad, Some(&mut d_act));
        let d_pre2: Vec<f64> = d_act
            .iter()
            .zip(&tape.pre2)
            .map(|(g, z)| g * sigmoid(beta * z))
            .collect();
        l.sdf[1].backward(p, &tape.act1, &d_pre2, grad, Some(&mut d_act));
        let d_pre1: Vec<f64> = d_act
            .iter()
            .zip(&tape.pre1)
            .map(|(g, z)| g * sigmoid(beta * z))
            .collect();
        let mut d_input = vec![0.0; l.sdf_input];
        l.sdf[0].backward(p, &tape.input, &d_pre1, grad, Some(&mut d_input));
        let (d_enc, d_emb) = d_input.split_at(l.encoding_dim);
        self.grid
            .backward_params(&tape.enc, lambda, d_enc, |i, v| grad.table.push((i as u32, v)));
        if !want_dx {
            return Vec3::zeros();
        }
        let mut dx = self.grid.backward_input(&tape.enc, lambda, d_enc, &p[..l.table_len]);
        let mut de = [0.0; 3];
        self.position_embedding.backward(tape.x.as_slice(), d_emb, &mut de);
        dx += Vec3::from(de);
        dx
    }

    /// SDF only, no gradient bookkeeping.
    pub fn sdf(&self, p: &[f64], x: &Vec3, lambda: f64) -> f64 {
        self.sdf_forward(p, x, lambda, &mut SdfTape::default(), false)
    }

    pub fn gradient_forward(&self, p: &[f64], x: &Vec3, lambda: f64, eps: f64, tape: &mut GradientTape) -> Vec3 {
        tape.eps = eps;
        let mut g = Vec3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = eps;
            let fp = self.sdf_forward(p, &(x + e), lambda, &mut tape.stencil[2 * k], false);
            let fm = self.sdf_forward(p, &(x - e), lambda, &mut tape.stencil[2 * k + 1], false);
            g[k] = (fp - fm) / (2.0 * eps);
        }
        tape.gradient = g;
        g
    }

    /// Backward through the central-difference stencil. Returns `dL/dx` of
    /// the stencil center when `want_dx`.
    pub fn gradient_backward(
        &self,
        p: &[f64],
        tape: &GradientTape,
        lambda: f64,
        d_g: &Vec3,
        grad: &mut ParamGrad,
        want_dx: bool,
    ) -> Vec3 {
        let mut dx = Vec3::zeros();
        for k in 0..3 {
            if d_g[k] == 0.0 {
                continue;
            }
            let c = d_g[k] / (2.0 * tape.eps);
            dx += self.sdf_backward(p, &tape.stencil[2 * k], lambda, &[c], grad, want_dx);
            dx += self.sdf_backward(p, &tape.stencil[2 * k + 1], lambda, &[-c], grad, want_dx);
        }
        dx
    }

    /// Central-difference gradient of the SDF.
    pub fn spatial_gradient(&self, p: &[f64], x: &Vec3, lambda: f64, eps: f64) -> Vec3 {
        self.gradient_forward(p, x, lambda, eps, &mut GradientTape::default())
    }

    fn color_forward(
        &self,
        p: &[f64],
        x: &Vec3,
        g: &Vec3,
        feature: &[f64],
        view: &Vec3,
        sun: &Vec3,
        tape: &mut ColorTape,
    ) -> [f64; 3] {
        let l = &self.layout;
        let h = self.config.hidden_width;
        tape.input.resize(l.color_input, 0.0);
        let inp = &mut tape.input;
        inp[..3].copy_from_slice(x.as_slice());
        inp[3..6].copy_from_slice(g.as_slice());
        let fd = feature.len();
        inp[6..6 + fd].copy_from_slice(feature);
        let dd = self.direction_embedding.output_dim(3);
        self.direction_embedding
            .embed_to_slice(view.as_slice(), &mut inp[6 + fd..6 + fd + dd]);
        self.direction_embedding
            .embed_to_slice(sun.as_slice(), &mut inp[6 + fd + dd..]);
        tape.pre1.resize(h, 0.0);
        tape.act1.resize(h, 0.0);
        tape.pre2.resize(h, 0.0);
        tape.act2.resize(h, 0.0);
        l.color[0].forward(p, &tape.input, &mut tape.pre1);
        for (a, z) in tape.act1.iter_mut().zip(&tape.pre1) {
            *a = z.max(0.0);
        }
        l.color[1].forward(p, &tape.act1, &mut tape.pre2);
        for (a, z) in tape.act2.iter_mut().zip(&tape.pre2) {
            *a = z.max(0.0);
        }
        let mut logits = [0.0; 3];
        l.color[2].forward(p, &tape.act2, &mut logits);
        tape.color = logits.map(sigmoid);
        tape.color
    }

    /// Returns `(dL/dg, dL/dfeature)`.
    fn color_backward(
        &self,
        p: &[f64],
        tape: &ColorTape,
        d_color: &[f64; 3],
        grad: &mut ParamGrad,
    ) -> (Vec3, Vec<f64>) {
        let l = &self.layout;
        let h = self.config.hidden_width;
        let d_logit: Vec<f64> = (0..3)
            .map(|k| d_color[k] * tape.color[k] * (1.0 - tape.color[k]))
            .collect();
        let mut d_act = vec![0.0; h];
        l.color[2].backward(p, &tape.act2, &d_logit, grad, Some(&mut d_act));
        let d_pre2: Vec<f64> = d_act
            .iter()
            .zip(&tape.pre2)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        l.color[1].backward(p, &tape.act1, &d_pre2, grad, Some(&mut d_act));
        let d_pre1: Vec<f64> = d_act
            .iter()
            .zip(&tape.pre1)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        let mut d_input = vec![0.0; l.color_input];
        l.color[0].backward(p, &tape.input, &d_pre1, grad, Some(&mut d_input));
        let fd = self.config.geo_feature_dim;
        (
            Vec3::new(d_input[3], d_input[4], d_input[5]),
            d_input[6..6 + fd].to_vec(),
        )
    }

    /// Full taped evaluation at one sample: SDF, feature, stencil gradient,
    /// color.
    #[allow(clippy::too_many_arguments)]
    pub fn point_forward(
        &self,
        p: &[f64],
        x: &Vec3,
        view: &Vec3,
        sun: &Vec3,
        lambda: f64,
        eps: f64,
        tape: &mut PointTape,
    ) {
        self.sdf_forward(p, x, lambda, &mut tape.center, true);
        let g = self.gradient_forward(p, x, lambda, eps, &mut tape.grad);
        let PointTape { center, color, .. } = tape;
        self.color_forward(p, x, &g, center.feature(), view, sun, color);
    }

    /// Reverse pass of [`point_forward`](Self::point_forward) given upstream
    /// derivatives on the SDF value, the color and the gradient.
    pub fn point_backward(
        &self,
        p: &[f64],
        tape: &PointTape,
        lambda: f64,
        d_sdf: f64,
        d_color: &[f64; 3],
        d_grad: &Vec3,
        grad: &mut ParamGrad,
    ) {
        let (dg_color, d_feat) = if d_color.iter().any(|v| *v != 0.0) {
            self.color_backward(p, &tape.color, d_color, grad)
        } else {
            (Vec3::zeros(), vec![0.0; self.config.geo_feature_dim])
        };
        let mut d_out = Vec::with_capacity(1 + d_feat.len());
        d_out.push(d_sdf);
        d_out.extend_from_slice(&d_feat);
        if d_out.iter().any(|v| *v != 0.0) {
            self.sdf_backward(p, &tape.center, lambda, &d_out, grad, false);
        }
        let dg = d_grad + dg_color;
        self.gradient_backward(p, &tape.grad, lambda, &dg, grad, false);
    }

    /// Untaped evaluation at one point.
    pub fn eval_field(&self, p: &[f64], x: &Vec3, view: &Vec3, sun: &Vec3, lambda: f64) -> Result<FieldSample> {
        let mut tape = PointTape::default();
        self.point_forward(p, x, view, sun, lambda, self.gradient_step(lambda), &mut tape);
        let s = FieldSample {
            sdf: tape.sdf(),
            feature: tape.center.feature().to_vec(),
            color: tape.color(),
            gradient: tape.gradient(),
        };
        let finite = s.sdf.is_finite()
            && s.gradient.iter().all(|v| v.is_finite())
            && s.color.iter().all(|v| v.is_finite())
            && s.feature.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!(
                "field evaluation at ({:.4}, {:.4}, {:.4})",
                x.x, x.y, x.z
            )));
        }
        Ok(s)
    }
}
