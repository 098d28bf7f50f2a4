//! Ray sampling, SDF-to-opacity conversion and front-to-back compositing.
//!
//! For `N` samples there are `N - 1` interval opacities
//! `α_i = max(1 - Φ_s(f_{i+1}) / Φ_s(f_i), 0)`; the last sample gets `α = 0`.
//! Composited depth is the plain weighted sum `Σ w_i t_i` (no division by the
//! accumulated opacity), and the background is black.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub n_uniform: usize,
    pub importance_rounds: usize,
    pub importance_per_round: usize,
    /// Sharpness of the first importance round; doubled every round.
    pub base_sharpness: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_uniform: 64,
            importance_rounds: 4,
            importance_per_round: 16,
            base_sharpness: 64.0,
        }
    }
}

impl SamplingConfig {
    pub fn total(&self) -> usize {
        self.n_uniform + self.importance_rounds * self.importance_per_round
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_uniform < 2 {
            return Err(Error::config("render.n_uniform", "must be >= 2"));
        }
        if !(self.base_sharpness > 0.0) {
            return Err(Error::config("render.base_sharpness", "must be > 0"));
        }
        Ok(())
    }
}

/// `ln Φ(x)` for the logistic `Φ`.
#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
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

/// Opacity of the interval between two consecutive samples.
pub fn alpha_from_sdf(f_i: f64, f_next: f64, s: f64) -> f64 {
    let a = -(log_sigmoid(s * f_next) - log_sigmoid(s * f_i)).exp_m1();
    a.max(0.0)
}

/// `(α, dα/df_i, dα/df_next, dα/ds)`; all derivatives vanish where the clamp
/// is active.
pub fn alpha_with_grad(f_i: f64, f_next: f64, s: f64) -> (f64, f64, f64, f64) {
    let a = alpha_from_sdf(f_i, f_next, s);
    if a <= 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let p = sigmoid(s * f_i);
    let q = sigmoid(s * f_next);
    let r = 1.0 - a; // q / p
    (
        a,
        r * s * (1.0 - p),
        -r * s * (1.0 - q),
        r * (f_i * (1.0 - p) - f_next * (1.0 - q)),
    )
}

fn alphas(sdf: &[f64], s: f64) -> Vec<f64> {
    let mut a: Vec<f64> = sdf.windows(2).map(|w| alpha_from_sdf(w[0], w[1], s)).collect();
    a.push(0.0);
    a
}

/// Transmittance-weighted compositing weights `w_i = T_i α_i`.
pub fn weights_from_alphas(alpha: &[f64]) -> Vec<f64> {
    let mut t = 1.0;
    alpha
        .iter()
        .map(|a| {
            let w = t * a;
            t *= 1.0 - a;
            w
        })
        .collect()
}

/// Stratified uniform samples in `[t_near, t_far]`: one per stratum, at the
/// stratum midpoint when `rng` is `None`.
pub fn stratified<R: Rng>(t_near: f64, t_far: f64, n: usize, rng: Option<&mut R>) -> Vec<f64> {
    let step = (t_far - t_near) / n as f64;
    match rng {
        Some(rng) => (0..n).map(|k| t_near + (k as f64 + rng.gen::<f64>()) * step).collect(),
        None => (0..n).map(|k| t_near + (k as f64 + 0.5) * step).collect(),
    }
}

/// `n` deterministic inverse-CDF draws over the intervals `[t_i, t_{i+1}]`
/// with mass proportional to `w_i + pad`.
fn invert_cdf(t: &[f64], w: &[f64], n: usize) -> Vec<f64> {
    const PAD: f64 = 1e-5;
    let mass: Vec<f64> = w[..t.len() - 1].iter().map(|w| w + PAD).collect();
    let total: f64 = mass.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut i = 0;
    for j in 0..n {
        let u = (j as f64 + 0.5) / n as f64 * total;
        while i + 1 < mass.len() && acc + mass[i] < u {
            acc += mass[i];
            i += 1;
        }
        let frac = ((u - acc) / mass[i]).clamp(0.0, 1.0);
        out.push(t[i] + frac * (t[i + 1] - t[i]));
    }
    out
}

/// Ray samples with the SDF value at each.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub sdf: Vec<f64>,
}

/// Stratified samples refined by rounds of importance sampling from the
/// opacity distribution at progressively doubled sharpness. `sdf` evaluates
/// the field at a point.
pub fn sample_ray<R: Rng, F: FnMut(&Vec3) -> f64>(
    ray: &Ray,
    mut sdf: F,
    config: &SamplingConfig,
    rng: Option<&mut R>,
) -> RaySamples {
    let t = stratified(ray.t_near, ray.t_far, config.n_uniform, rng);
    let f: Vec<f64> = t.iter().map(|&t| sdf(&ray.at(t))).collect();
    let mut pairs: Vec<(f64, f64)> = t.into_iter().zip(f).collect();
    let mut s = config.base_sharpness;
    for _ in 0..config.importance_rounds {
        let (t, f): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let w = weights_from_alphas(&alphas(&f, s));
        for tn in invert_cdf(&t, &w, config.importance_per_round) {
            pairs.push((tn, sdf(&ray.at(tn))));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        s *= 2.0;
    }
    let (t, sdf) = pairs.into_iter().unzip();
    RaySamples { t, sdf }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub alphas: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Composites per-sample colors and depths.
pub fn composite(t: &[f64], sdf: &[f64], colors: &[[f64; 3]], s: f64) -> RenderResult {
    let alphas = alphas(sdf, s);
    let weights = weights_from_alphas(&alphas);
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut opacity = 0.0;
    for ((w, c), t) in weights.iter().zip(colors).zip(t) {
        for k in 0..3 {
            color[k] += w * c[k];
        }
        depth += w * t;
        opacity += w;
    }
    RenderResult {
        color,
        depth,
        opacity,
        alphas,
        weights,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeGrad {
    pub d_sdf: Vec<f64>,
    pub d_color: Vec<[f64; 3]>,
    pub d_s: f64,
}

/// Reverse pass of [`composite`] for upstream derivatives on color, depth
/// and opacity. Samples `t` are treated as constants.
pub fn composite_backward(
    t: &[f64],
    sdf: &[f64],
    colors: &[[f64; 3]],
    s: f64,
    result: &RenderResult,
    d_color: &[f64; 3],
    d_depth: f64,
    d_opacity: f64,
) -> CompositeGrad {
    let n = t.len();
    let a = &result.alphas;
    // suffix composites R_i = α_i v_i + (1 - α_i) R_{i+1}, scalarized with the
    // upstream: v_i = <d_color, c_i> + d_depth t_i + d_opacity
    let v: Vec<f64> = (0..n)
        .map(|i| {
            d_color[0] * colors[i][0]
                + d_color[1] * colors[i][1]
                + d_color[2] * colors[i][2]
                + d_depth * t[i]
                + d_opacity
        })
        .collect();
    let mut d_alpha = vec![0.0; n];
    let mut suffix = 0.0;
    let mut trans = vec![1.0; n];
    for i in 1..n {
        trans[i] = trans[i - 1] * (1.0 - a[i - 1]);
    }
    for i in (0..n).rev() {
        d_alpha[i] = trans[i] * (v[i] - suffix);
        suffix = a[i] * v[i] + (1.0 - a[i]) * suffix;
    }
    let mut d_sdf = vec![0.0; n];
    let mut d_s = 0.0;
    for i in 0..n - 1 {
        if d_alpha[i] == 0.0 {
            continue;
        }
        let (_, da_fi, da_fn, da_s) = alpha_with_grad(sdf[i], sdf[i + 1], s);
        d_sdf[i] += d_alpha[i] * da_fi;
        d_sdf[i + 1] += d_alpha[i] * da_fn;
        d_s += d_alpha[i] * da_s;
    }
    let d_color = result
        .weights
        .iter()
        .map(|w| [w * d_color[0], w * d_color[1], w * d_color[2]])
        .collect();
    CompositeGrad { d_sdf, d_color, d_s }
}

/// A rendered ray with its samples, for inference and debugging.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedRay {
    pub samples: RaySamples,
    pub result: RenderResult,
    /// Field gradient at `o + depth * d`.
    pub normal: Vec3,
}

/// Renders one ray with deterministic (midpoint) stratification.
pub fn render_ray(
    field: &Field,
    params: &[f64],
    ray: &Ray,
    sun: &Vec3,
    lambda: f64,
    config: &SamplingConfig,
) -> Result<RenderedRay> {
    let samples = sample_ray::<rand_chacha::ChaCha8Rng, _>(ray, |x| field.sdf(params, x, lambda), config, None);
    let mut colors = Vec::with_capacity(samples.t.len());
    for &t in &samples.t {
        colors.push(field.eval_field(params, &ray.at(t), &ray.direction, sun, lambda)?.color);
    }
    let result = composite(&samples.t, &samples.sdf, &colors, field.sharpness(params));
    let eps = field.gradient_step(lambda);
    let normal = field.spatial_gradient(params, &ray.at(result.depth), lambda, eps);
    Ok(RenderedRay {
        samples,
        result,
        normal,
    })
}

/// Writes `ray,t,sdf,alpha,weight` rows for inspection.
pub fn write_ray_dump(path: &Path, rays: &[RenderedRay]) -> Result<()> {
    let mut out = String::from("ray,t,sdf,alpha,weight\n");
    for (r, ray) in rays.iter().enumerate() {
        for i in 0..ray.samples.t.len() {
            out.push_str(&format!(
                "{r},{},{},{},{}\n",
                ray.samples.t[i], ray.samples.sdf[i], ray.result.alphas[i], ray.result.weights[i]
            ));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn down_ray() -> Ray {
        Ray {
            origin: Vec3::new(0.1, -0.2, 1.0),
            direction: Vec3::new(0.0, 0.0, -1.0),
            t_near: 0.0,
            t_far: 2.0,
        }
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_from_sdf(0.3, 0.3, 5.0), 0.0);
        assert_eq!(alpha_from_sdf(-0.2, 0.4, 5.0), 0.0);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let oracle = (sig(1.0) - sig(-1.0)) / sig(1.0);
        let a = alpha_from_sdf(1.0, -1.0, 1.0);
        assert!((a - oracle).abs() < 1e-15);
        assert!((a - 0.632121).abs() < 1e-6);
    }

    #[test]
    fn alpha_derivatives_match_finite_differences() {
        let h = 1e-6;
        for &(f0, f1, s) in &[(0.3, -0.1, 7.0), (0.05, 0.01, 40.0), (-0.2, -0.5, 3.0)] {
            let (_, d0, d1, ds) = alpha_with_grad(f0, f1, s);
            let n0 = (alpha_from_sdf(f0 + h, f1, s) - alpha_from_sdf(f0 - h, f1, s)) / (2.0 * h);
            let n1 = (alpha_from_sdf(f0, f1 + h, s) - alpha_from_sdf(f0, f1 - h, s)) / (2.0 * h);
            let ns = (alpha_from_sdf(f0, f1, s + h) - alpha_from_sdf(f0, f1, s - h)) / (2.0 * h);
            assert!((d0 - n0).abs() < 1e-6 * n0.abs().max(1.0));
            assert!((d1 - n1).abs() < 1e-6 * n1.abs().max(1.0));
            assert!((ds - ns).abs() < 1e-6 * ns.abs().max(1.0));
        }
    }

    #[test]
    fn two_sample_compositing_example() {
        // α = (0.5, 0.5) fed through explicit weights
        let w = weights_from_alphas(&[0.5, 0.5]);
        let c = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let t = [1.0, 2.0];
        let mut col = [0.0; 3];
        let mut d = 0.0;
        for i in 0..2 {
            for k in 0..3 {
                col[k] += w[i] * c[i][k];
            }
            d += w[i] * t[i];
        }
        assert_eq!(col, [0.5, 0.25, 0.0]);
        assert_eq!(d, 1.0);
        assert_eq!(w.iter().sum::<f64>(), 0.75);
    }

    #[test]
    fn opaque_first_hit_and_empty_ray() {
        // a huge drop between samples 0 and 1 at large s: α_0 -> 1
        let r = composite(
            &[0.5, 1.0, 1.5],
            &[5.0, -5.0, -5.0],
            &[[0.2, 0.4, 0.6], [1.0; 3], [1.0; 3]],
            1e3,
        );
        assert!((r.alphas[0] - 1.0).abs() < 1e-12);
        assert!((r.color[0] - 0.2).abs() < 1e-12 && (r.depth - 0.5).abs() < 1e-12);
        let e = composite(&[0.5, 1.0], &[1.0, 1.0], &[[1.0; 3], [1.0; 3]], 10.0);
        assert_eq!((e.color, e.depth, e.opacity), ([0.0; 3], 0.0, 0.0));
    }

    #[test]
    fn weights_are_unbiased_on_linear_sdf() {
        let t: Vec<f64> = (0..64).map(|k| 2.0 * k as f64 / 63.0).collect();
        let spacing = t[1] - t[0];
        for &t_star in &[0.37, 1.0, 1.6123] {
            let f: Vec<f64> = t.iter().map(|t| t_star - t).collect();
            for s in [1.0, 10.0, 100.0] {
                let r = composite(&t, &f, &vec![[0.0; 3]; t.len()], s);
                let k = (0..t.len())
                    .max_by(|a, b| r.weights[*a].total_cmp(&r.weights[*b]))
                    .unwrap();
                assert!((t[k] - t_star).abs() <= spacing, "s={s} t*={t_star} argmax={}", t[k]);
            }
        }
    }

    #[test]
    fn uniform_stage_is_stratified() {
        let ray = down_ray();
        let cfg = SamplingConfig {
            importance_rounds: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_ray(&ray, |_| 1.0, &cfg, Some(&mut rng));
        let step = 2.0 / 64.0;
        for (k, t) in s.t.iter().enumerate() {
            assert!(*t >= k as f64 * step && *t < (k + 1) as f64 * step);
        }
    }

    #[test]
    fn importance_samples_concentrate_at_the_crossing() {
        let ray = down_ray();
        let cfg = SamplingConfig::default();
        let t_star = 1.3;
        // linear SDF along the ray: f = z-plane distance
        let plane = ray.origin.z - t_star;
        let s = sample_ray::<ChaCha8Rng, _>(&ray, |x| x.z - plane, &cfg, None);
        assert_eq!(s.t.len(), 128);
        let near = s.t.iter().filter(|t| (*t - t_star).abs() <= 0.05 * 2.0).count();
        assert!(near * 2 >= s.t.len(), "{near}");
        assert!(s.t.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn composite_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 12;
        let t: Vec<f64> = (0..n).map(|k| 0.1 * k as f64 + 0.05).collect();
        let f: Vec<f64> = t.iter().map(|t| 0.6 - t + 0.05 * rng.gen::<f64>()).collect();
        let c: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let s = 9.0;
        let (dc, dd, dop) = ([0.3, -0.7, 0.2], 0.9, -0.4);
        let obj = |f: &[f64], c: &[[f64; 3]], s: f64| {
            let r = composite(&t, f, c, s);
            dc[0] * r.color[0] + dc[1] * r.color[1] + dc[2] * r.color[2] + dd * r.depth + dop * r.opacity
        };
        let r = composite(&t, &f, &c, s);
        let g = composite_backward(&t, &f, &c, s, &r, &dc, dd, dop);
        let h = 1e-6;
        for i in 0..n {
            let mut fp = f.clone();
            fp[i] += h;
            let mut fm = f.clone();
            fm[i] -= h;
            let num = (obj(&fp, &c, s) - obj(&fm, &c, s)) / (2.0 * h);
            assert!((num - g.d_sdf[i]).abs() < 1e-7, "{i}: {num} vs {}", g.d_sdf[i]);
            let mut cp = c.clone();
            cp[i][1] += h;
            let mut cm = c.clone();
            cm[i][1] -= h;
            let num = (obj(&f, &cp, s) - obj(&f, &cm, s)) / (2.0 * h);
            assert!((num - g.d_color[i][1]).abs() < 1e-7);
        }
        let num = (obj(&f, &c, s + h) - obj(&f, &c, s - h)) / (2.0 * h);
        assert!((num - g.d_s).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_minus_transmittance(
            f in proptest::collection::vec(-1.0f64..1.0, 2..40),
            s in 0.5f64..200.0,
        ) {
            let t: Vec<f64> = (0..f.len()).map(|k| k as f64).collect();
            let r = composite(&t, &f, &vec![[0.5; 3]; f.len()], s);
            let trans: f64 = r.alphas.iter().map(|a| 1.0 - a).product();
            prop_assert!(r.weights.iter().all(|w| *w >= 0.0));
            prop_assert!((r.opacity - (1.0 - trans)).abs() < 1e-9);
            prop_assert!(r.opacity <= 1.0 + 1e-6);
        }

        #[test]
        fn colors_behind_an_opaque_sample_do_not_matter(
            c in proptest::collection::vec(0.0f64..1.0, 18),
        ) {
            let t: Vec<f64> = (0..6).map(|k| k as f64).collect();
            let f = [1.0, 0.5, -100.0, -100.0, -100.0, -100.0];
            let cols: Vec<[f64; 3]> = c.chunks(3).map(|x| [x[0], x[1], x[2]]).collect();
            let s = 1e3;
            let a = composite(&t, &f, &cols, s);
            let mut perm = cols.clone();
            perm[3..].reverse();
            let b = composite(&t, &f, &perm, s);
            prop_assert!(a.alphas[1] > 1.0 - 1e-12);
            for k in 0..3 {
                prop_assert!((a.color[k] - b.color[k]).abs() < 1e-12);
            }
        }
    }
}
