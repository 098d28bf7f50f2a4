//! Forward evaluation of the full training objective over a batch and its
//! reverse pass down to every parameter.
//!
//! Sample positions are inputs (held fixed), so the objective is a smooth
//! function of the parameters apart from the usual kinks (|.|, ReLU, the
//! opacity clamp). The normal term depends on the rendered depth `D` through
//! the points `o_j + D d_j`; that path is differentiated via input gradients
//! of the stencil evaluations.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Field, GradientTape, ParamGrad, PointTape};
use crate::losses::{cos_with_grad, pairwise_sum, BatchLosses, LossParts, LossWeights};
use crate::render::{alpha_from_sdf, composite, composite_backward, weights_from_alphas};
use crate::trainer::batch::BatchRay;
use crate::Vec3;

/// Multipliers of the four terms inside the differentiated objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermScales {
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
}

impl TermScales {
    /// `color + λ1 depth + λ2 normal + λ3 eikonal`.
    pub fn from_weights(w: &LossWeights) -> Self {
        Self {
            color: 1.0,
            depth: w.depth,
            normal: w.normal,
            eikonal: w.eikonal,
        }
    }

    pub fn only(term: usize) -> Self {
        let mut s = [0.0; 4];
        s[term] = 1.0;
        Self {
            color: s[0],
            depth: s[1],
            normal: s[2],
            eikonal: s[3],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub losses: BatchLosses,
    pub grad: Option<ParamGrad>,
    /// Accumulated opacity per ray.
    pub opacity: Vec<f64>,
}

const CHUNK: usize = 4;

#[derive(Default)]
struct RayTerms {
    color: f64,
    depth: f64,
    normal: Option<f64>,
    eikonal: Vec<f64>,
    opacity: f64,
}

struct Shared<'a> {
    field: &'a Field,
    params: &'a [f64],
    lambda: f64,
    eps: f64,
    s: f64,
    scales: TermScales,
    /// 1/m (color), 1/K (depth), 1/K' (normal), 1/(m n) (eikonal).
    inv: [f64; 4],
    want_grad: bool,
}

/// Whether each ray passes the opacity gate for normal supervision.
fn normal_gates(
    field: &Field,
    params: &[f64],
    batch: &[BatchRay],
    samples: &[Vec<f64>],
    lambda: f64,
    gate: f64,
) -> Vec<bool> {
    let s = field.sharpness(params);
    batch
        .par_iter()
        .zip(samples)
        .map(|(b, t)| {
            if !b.mask || !b.delta_gt.is_finite() {
                return false;
            }
            let f: Vec<f64> = t.iter().map(|t| field.sdf(params, &b.center.at(*t), lambda)).collect();
            let mut a: Vec<f64> = f.windows(2).map(|w| alpha_from_sdf(w[0], w[1], s)).collect();
            a.push(0.0);
            let opacity: f64 = weights_from_alphas(&a).iter().sum();
            opacity > gate
        })
        .collect()
}

fn ray_pass(
    sh: &Shared,
    b: &BatchRay,
    t: &[f64],
    gated: bool,
    tapes: &mut Vec<PointTape>,
    grad: Option<&mut ParamGrad>,
) -> RayTerms {
    let field = sh.field;
    let p = sh.params;
    let n = t.len();
    if tapes.len() < n {
        tapes.resize_with(n, PointTape::default);
    }
    let d = b.center.direction;
    for k in 0..n {
        field.point_forward(p, &b.center.at(t[k]), &d, &b.sun, sh.lambda, sh.eps, &mut tapes[k]);
    }
    let sdf: Vec<f64> = tapes[..n].iter().map(PointTape::sdf).collect();
    let colors: Vec<[f64; 3]> = tapes[..n].iter().map(PointTape::color).collect();
    let res = composite(t, &sdf, &colors, sh.s);
    let mut out = RayTerms {
        color: (0..3).map(|k| (res.color[k] - b.color[k]).abs()).sum(),
        depth: if b.depth_valid {
            (res.depth - b.depth).abs()
        } else {
            0.0
        },
        eikonal: tapes[..n]
            .iter()
            .map(|tp| (tp.gradient().norm() - 1.0).powi(2))
            .collect(),
        opacity: res.opacity,
        normal: None,
    };

    // normal consistency at the rendered depth
    let mut gtapes: [GradientTape; 5] = Default::default();
    let mut delta = 0.0;
    if gated {
        let rays = std::iter::once(&b.center).chain(b.neighbors.iter());
        for (tape, r) in gtapes.iter_mut().zip(rays) {
            field.gradient_forward(p, &r.at(res.depth), sh.lambda, sh.eps, tape);
        }
        let g0 = gtapes[0].gradient;
        delta = (1..5).map(|j| cos_with_grad(&g0, &gtapes[j].gradient).0).sum::<f64>() / 4.0;
        out.normal = Some((delta - b.delta_gt).powi(2));
    }

    let Some(grad) = grad else {
        return out;
    };
    let sc = &sh.scales;
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let mut d_color = [0.0; 3];
    for k in 0..3 {
        d_color[k] = sc.color * sh.inv[0] * sign(res.color[k] - b.color[k]);
    }
    let mut d_depth = if b.depth_valid {
        sc.depth * sh.inv[1] * sign(res.depth - b.depth)
    } else {
        0.0
    };
    if gated && sc.normal != 0.0 {
        let d_delta = sc.normal * sh.inv[2] * 2.0 * (delta - b.delta_gt) / 4.0;
        let g0 = gtapes[0].gradient;
        let mut dg0 = Vec3::zeros();
        let rays: Vec<_> = std::iter::once(&b.center).chain(b.neighbors.iter()).collect();
        for j in 1..5 {
            let (_, da, db) = cos_with_grad(&g0, &gtapes[j].gradient);
            dg0 += da * d_delta;
            let dx = field.gradient_backward(p, &gtapes[j], sh.lambda, &(db * d_delta), grad, true);
            d_depth += dx.dot(&rays[j].direction);
        }
        let dx = field.gradient_backward(p, &gtapes[0], sh.lambda, &dg0, grad, true);
        d_depth += dx.dot(&rays[0].direction);
    }
    let cg = composite_backward(t, &sdf, &colors, sh.s, &res, &d_color, d_depth, 0.0);
    for k in 0..n {
        let g = tapes[k].gradient();
        let norm = g.norm();
        let d_g = if sc.eikonal != 0.0 && norm > 0.0 {
            g * (sc.eikonal * sh.inv[3] * 2.0 * (norm - 1.0) / norm)
        } else {
            Vec3::zeros()
        };
        field.point_backward(p, &tapes[k], sh.lambda, cg.d_sdf[k], &cg.d_color[k], &d_g, grad);
    }
    grad.add(field.layout.log_s, cg.d_s * sh.s);
    out
}

/// Evaluates all loss terms on a batch with fixed sample positions and, when
/// `want_grad`, the gradient of `Σ scale_k · term_k`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    field: &Field,
    params: &[f64],
    batch: &[BatchRay],
    samples: &[Vec<f64>],
    lambda: f64,
    scales: TermScales,
    opacity_gate: f64,
    want_grad: bool,
) -> Result<Evaluation> {
    assert_eq!(batch.len(), samples.len());
    let m = batch.len();
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    let gates = normal_gates(field, params, batch, samples, lambda, opacity_gate);
    let k_normal = gates.iter().filter(|g| **g).count();
    let n_samples: usize = samples.iter().map(Vec::len).sum();
    let sh = Shared {
        field,
        params,
        lambda,
        eps: field.gradient_step(lambda),
        s: field.sharpness(params),
        scales,
        inv: [
            1.0 / m as f64,
            1.0 / m as f64,
            if k_normal > 0 { 1.0 / k_normal as f64 } else { 0.0 },
            1.0 / n_samples as f64,
        ],
        want_grad,
    };
    let idx: Vec<usize> = (0..m).collect();
    let chunks: Vec<(Vec<RayTerms>, Option<ParamGrad>)> = idx
        .par_chunks(CHUNK)
        .map(|rays| {
            let mut tapes = Vec::new();
            let mut grad = sh.want_grad.then(|| ParamGrad::new(&field.layout));
            let terms = rays
                .iter()
                .map(|&r| ray_pass(&sh, &batch[r], &samples[r], gates[r], &mut tapes, grad.as_mut()))
                .collect();
            (terms, grad)
        })
        .collect();

    let mut color = Vec::with_capacity(m);
    let mut depth = Vec::with_capacity(m);
    let mut normal = Vec::new();
    let mut eikonal = Vec::with_capacity(n_samples);
    let mut opacity = Vec::with_capacity(m);
    let mut grad = want_grad.then(|| ParamGrad::new(&field.layout));
    for (terms, g) in &chunks {
        for t in terms {
            color.push(t.color);
            depth.push(t.depth);
            normal.extend(t.normal);
            eikonal.extend_from_slice(&t.eikonal);
            opacity.push(t.opacity);
        }
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.merge(g);
        }
    }
    let parts = LossParts {
        color: pairwise_sum(&color) * sh.inv[0],
        depth: pairwise_sum(&depth) * sh.inv[1],
        normal: pairwise_sum(&normal) * sh.inv[2],
        eikonal: pairwise_sum(&eikonal) * sh.inv[3],
    };
    let total = scales.color * parts.color
        + scales.depth * parts.depth
        + scales.normal * parts.normal
        + scales.eikonal * parts.eikonal;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss {parts:?}")));
    }
    if let Some(g) = &grad {
        if g.dense.iter().any(|v| !v.is_finite()) || g.table.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
    }
    Ok(Evaluation {
        losses: BatchLosses {
            parts,
            total,
            color_rays: m,
            depth_rays: batch.iter().filter(|b| b.depth_valid).count(),
            normal_pixels: k_normal,
            eikonal_samples: n_samples,
        },
        grad,
        opacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Ray;
    use crate::field::quantize;
    use crate::render::stratified;
    use crate::trainer::tests::toy_field;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tilted_ray(x: f64, y: f64, dx: f64, dy: f64) -> Ray {
        let d = Vec3::new(dx, dy, -1.0).normalize();
        Ray {
            origin: Vec3::new(x, y, 0.9),
            direction: d,
            t_near: 0.0,
            t_far: 1.8 / -d.z,
        }
    }

    fn toy_problem(field: &Field, seed: u64) -> (Vec<f64>, Vec<BatchRay>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = field.init_params(seed, 0.05);
        for v in &mut p[..field.layout.table_len] {
            *v = rng.gen_range(-0.05..0.05);
        }
        for v in &mut p[field.layout.mlp_range()] {
            *v += rng.gen_range(-0.1..0.1);
        }
        quantize(&mut p);
        let step = 0.01;
        let mut batch = Vec::new();
        let mut samples = Vec::new();
        for _ in 0..8 {
            let (x, y) = (rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            let (dx, dy) = (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let center = tilted_ray(x, y, dx, dy);
            let neighbors = [
                tilted_ray(x - step, y, dx, dy),
                tilted_ray(x + step, y, dx, dy),
                tilted_ray(x, y - step, dx, dy),
                tilted_ray(x, y + step, dx, dy),
            ];
            samples.push(stratified(center.t_near, center.t_far, 16, Some(&mut rng)));
            batch.push(BatchRay {
                view: 0,
                row: 1,
                col: 1,
                center,
                neighbors,
                color: [rng.gen(), rng.gen(), rng.gen()],
                depth: rng.gen_range(0.6..1.2),
                mask: true,
                depth_valid: rng.gen_bool(0.8),
                delta_gt: rng.gen_range(0.7..1.0),
                sun: Vec3::new(0.3, 0.2, 0.93).normalize(),
            });
        }
        (p, batch, samples)
    }

    #[test]
    fn every_term_matches_finite_differences() {
        let field = toy_field();
        let lambda = 2.0;
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let (p, batch, samples) = toy_problem(&field, seed);
            for term in 0..5 {
                let scales = if term == 4 {
                    TermScales::from_weights(&LossWeights::default())
                } else {
                    TermScales::only(term)
                };
                let ev = evaluate(&field, &p, &batch, &samples, lambda, scales, 0.5, true).unwrap();
                if term == 2 {
                    assert!(ev.losses.normal_pixels > 0);
                }
                let g = ev.grad.unwrap().to_dense(p.len());
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 7 + term as u64);
                let nonzero: Vec<usize> = (0..p.len()).filter(|i| g[*i] != 0.0).collect();
                for _ in 0..20 {
                    let i = nonzero[rng.gen_range(0..nonzero.len())];
                    let h = 1e-4;
                    let f = |d: f64| {
                        let mut q = p.clone();
                        q[i] += d;
                        evaluate(&field, &q, &batch, &samples, lambda, scales, 0.5, false)
                            .unwrap()
                            .losses
                            .total
                    };
                    let num = (f(h) - f(-h)) / (2.0 * h);
                    let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6);
                    worst = worst.max(rel);
                    assert!(rel <= 1e-4, "term {term} seed {seed} param {i}: {} vs {num}", g[i]);
                }
            }
        }
        eprintln!("worst relative error {worst:e}");
    }
}
