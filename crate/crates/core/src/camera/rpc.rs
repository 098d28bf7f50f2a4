//! Rational polynomial camera model.
//!
//! Polynomials use the RPC00B 20-term cubic basis over normalized
//! latitude `L`, longitude `P` and height `H`. Image coordinates follow the
//! `(u, v) = (line, sample)` convention: line is driven by the latitude-like
//! polynomial pair, sample by the longitude-like pair.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const RPC_TERMS: usize = 20;
const DEN_EPS: f64 = 1e-8;
const JAC_EPS: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_TOL: f64 = 1e-10;
const JAC_STEP: f64 = 1e-6;

/// Monomials of the RPC00B basis in order.
#[inline]
pub fn rpc_basis(l: f64, p: f64, h: f64) -> [f64; RPC_TERMS] {
    [
        1.0,
        l,
        p,
        h,
        l * p,
        l * h,
        p * h,
        l * l,
        p * p,
        h * h,
        p * l * h,
        l * l * l,
        l * p * p,
        l * h * h,
        l * l * p,
        p * p * p,
        p * h * h,
        l * l * h,
        p * p * h,
        h * h * h,
    ]
}

#[inline]
fn dot(c: &[f64; RPC_TERMS], b: &[f64; RPC_TERMS]) -> f64 {
    c.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Offset/scale pair used to normalize one coordinate to roughly [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    pub fn new(offset: f64, scale: f64) -> Self {
        Self { offset, scale }
    }

    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    #[inline]
    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.scale + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcModel {
    pub line_num: [f64; RPC_TERMS],
    pub line_den: [f64; RPC_TERMS],
    pub samp_num: [f64; RPC_TERMS],
    pub samp_den: [f64; RPC_TERMS],
    pub lat: Normalization,
    pub lon: Normalization,
    pub alt: Normalization,
    pub line: Normalization,
    pub samp: Normalization,
    /// How far (in normalized units) inputs may leave [-1, 1] before
    /// `project` reports `OutOfDomain`.
    pub domain_margin: f64,
}

impl RpcModel {
    pub const DEFAULT_MARGIN: f64 = 0.5;

    /// Model whose normalized outputs equal normalized inputs: line <- lat,
    /// sample <- lon, with zero offsets and unit scales.
    pub fn identity() -> Self {
        let mut line_num = [0.0; RPC_TERMS];
        let mut samp_num = [0.0; RPC_TERMS];
        let mut den = [0.0; RPC_TERMS];
        line_num[1] = 1.0;
        samp_num[2] = 1.0;
        den[0] = 1.0;
        let unit = Normalization::new(0.0, 1.0);
        Self {
            line_num,
            line_den: den,
            samp_num,
            samp_den: den,
            lat: unit,
            lon: unit,
            alt: unit,
            line: unit,
            samp: unit,
            domain_margin: Self::DEFAULT_MARGIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("lat", self.lat),
            ("lon", self.lon),
            ("alt", self.alt),
            ("line", self.line),
            ("samp", self.samp),
        ] {
            if !(n.scale > 0.0 && n.scale.is_finite() && n.offset.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "rpc {name} normalization must have a positive finite scale"
                )));
            }
        }
        Ok(())
    }

    /// Normalized (line, sample) at normalized (lat, lon, alt) without any
    /// domain check.
    #[inline]
    pub fn eval_normalized(&self, l: f64, p: f64, h: f64) -> Result<(f64, f64)> {
        let b = rpc_basis(l, p, h);
        let ld = dot(&self.line_den, &b);
        let sd = dot(&self.samp_den, &b);
        if ld.abs() < DEN_EPS {
            return Err(Error::DegenerateDenominator(ld));
        }
        if sd.abs() < DEN_EPS {
            return Err(Error::DegenerateDenominator(sd));
        }
        Ok((dot(&self.line_num, &b) / ld, dot(&self.samp_num, &b) / sd))
    }

    fn check_domain(&self, l: f64, p: f64, h: f64) -> Result<()> {
        let lim = 1.0 + self.domain_margin;
        if !(l.abs() <= lim && p.abs() <= lim && h.abs() <= lim) {
            return Err(Error::OutOfDomain(format!(
                "normalized (lat, lon, alt) = ({l:.4}, {p:.4}, {h:.4}) beyond ±{lim}"
            )));
        }
        Ok(())
    }

    /// Ground (lon, lat, alt) to image (u, v) = (line, sample).
    pub fn project(&self, lon: f64, lat: f64, alt: f64) -> Result<(f64, f64)> {
        let l = self.lat.normalize(lat);
        let p = self.lon.normalize(lon);
        let h = self.alt.normalize(alt);
        self.check_domain(l, p, h)?;
        let (ln, sn) = self.eval_normalized(l, p, h)?;
        Ok((self.line.denormalize(ln), self.samp.denormalize(sn)))
    }

    /// Inverse projection at a fixed altitude: image (u, v) to (lon, lat).
    ///
    /// Damped Newton on the 2x2 system in normalized coordinates, started at
    /// the normalization center, with a central-difference Jacobian.
    pub fn localize(&self, u: f64, v: f64, alt: f64) -> Result<(f64, f64)> {
        let target = (self.line.normalize(u), self.samp.normalize(v));
        let h = self.alt.normalize(alt);
        let residual = |l: f64, p: f64| -> Result<(f64, f64)> {
            let (a, b) = self.eval_normalized(l, p, h)?;
            Ok((a - target.0, b - target.1))
        };
        let (mut l, mut p) = (0.0, 0.0);
        let mut r = residual(l, p)?;
        for _ in 0..NEWTON_MAX_ITERS {
            let (a_lp, b_lp) = residual(l + JAC_STEP, p)?;
            let (a_lm, b_lm) = residual(l - JAC_STEP, p)?;
            let (a_pp, b_pp) = residual(l, p + JAC_STEP)?;
            let (a_pm, b_pm) = residual(l, p - JAC_STEP)?;
            let j11 = (a_lp - a_lm) / (2.0 * JAC_STEP);
            let j21 = (b_lp - b_lm) / (2.0 * JAC_STEP);
            let j12 = (a_pp - a_pm) / (2.0 * JAC_STEP);
            let j22 = (b_pp - b_pm) / (2.0 * JAC_STEP);
            let det = j11 * j22 - j12 * j21;
            if det.abs() < JAC_EPS || !det.is_finite() {
                return Err(Error::DegenerateJacobian(det));
            }
            let dl = -(j22 * r.0 - j12 * r.1) / det;
            let dp = -(j11 * r.1 - j21 * r.0) / det;

            let norm = |r: (f64, f64)| r.0.hypot(r.1);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let cand = (l + step * dl, p + step * dp);
                if let Ok(rc) = residual(cand.0, cand.1) {
                    if norm(rc) <= norm(r) || norm(rc) < NEWTON_TOL {
                        accepted = Some((cand, rc));
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some(((nl, np), rc)) => {
                    let moved = (nl - l).abs().max((np - p).abs());
                    l = nl;
                    p = np;
                    r = rc;
                    if moved < NEWTON_TOL && r.0.abs().max(r.1.abs()) < NEWTON_TOL {
                        return self.finish_localize(l, p, h);
                    }
                }
                // No decrease possible: we are at rounding level.
                None => {
                    if norm(r) < 1e3 * NEWTON_TOL {
                        return self.finish_localize(l, p, h);
                    }
                    return Err(Error::NoConvergence(NEWTON_MAX_ITERS));
                }
            }
        }
        if r.0.abs().max(r.1.abs()) < NEWTON_TOL {
            return self.finish_localize(l, p, h);
        }
        Err(Error::NoConvergence(NEWTON_MAX_ITERS))
    }

    fn finish_localize(&self, l: f64, p: f64, h: f64) -> Result<(f64, f64)> {
        self.check_domain(l, p, h)?;
        Ok((self.lon.denormalize(p), self.lat.denormalize(l)))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = crate::raster::read_text(path)?;
        Self::parse(&text).map_err(|m| Error::parse(path, m))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Parses the `KEY: value` text layout. A trailing unit token after the
    /// value is ignored.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut m = Self::identity();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| format!("line {}: expected `KEY: value`", lineno + 1))?;
            let key = key.trim();
            let value: f64 = rest
                .split_whitespace()
                .next()
                .ok_or_else(|| format!("line {}: missing value for {key}", lineno + 1))?
                .parse()
                .map_err(|e| format!("line {}: bad number for {key}: {e}", lineno + 1))?;
            let slot: &mut f64 = match key {
                "LINE_OFF" => &mut m.line.offset,
                "SAMP_OFF" => &mut m.samp.offset,
                "LAT_OFF" => &mut m.lat.offset,
                "LONG_OFF" => &mut m.lon.offset,
                "HEIGHT_OFF" => &mut m.alt.offset,
                "LINE_SCALE" => &mut m.line.scale,
                "SAMP_SCALE" => &mut m.samp.scale,
                "LAT_SCALE" => &mut m.lat.scale,
                "LONG_SCALE" => &mut m.lon.scale,
                "HEIGHT_SCALE" => &mut m.alt.scale,
                _ => {
                    let (prefix, idx) = key.rsplit_once('_').ok_or_else(|| format!("unknown key {key}"))?;
                    let idx: usize = idx.parse().map_err(|_| format!("unknown key {key}"))?;
                    if !(1..=RPC_TERMS).contains(&idx) {
                        return Err(format!("coefficient index out of range in {key}"));
                    }
                    let arr = match prefix {
                        "LINE_NUM_COEFF" => &mut m.line_num,
                        "LINE_DEN_COEFF" => &mut m.line_den,
                        "SAMP_NUM_COEFF" => &mut m.samp_num,
                        "SAMP_DEN_COEFF" => &mut m.samp_den,
                        _ => return Err(format!("unknown key {key}")),
                    };
                    &mut arr[idx - 1]
                }
            };
            *slot = value;
            seen.insert(key.to_string());
        }
        let expected = 10 + 4 * RPC_TERMS;
        if seen.len() != expected {
            return Err(format!("expected {expected} distinct keys, found {}", seen.len()));
        }
        m.validate().map_err(|e| e.to_string())?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("LINE_OFF", self.line.offset),
            ("SAMP_OFF", self.samp.offset),
            ("LAT_OFF", self.lat.offset),
            ("LONG_OFF", self.lon.offset),
            ("HEIGHT_OFF", self.alt.offset),
            ("LINE_SCALE", self.line.scale),
            ("SAMP_SCALE", self.samp.scale),
            ("LAT_SCALE", self.lat.scale),
            ("LONG_SCALE", self.lon.scale),
            ("HEIGHT_SCALE", self.alt.scale),
        ] {
            let _ = writeln!(s, "{k}: {v}");
        }
        for (prefix, arr) in [
            ("LINE_NUM_COEFF", &self.line_num),
            ("LINE_DEN_COEFF", &self.line_den),
            ("SAMP_NUM_COEFF", &self.samp_num),
            ("SAMP_DEN_COEFF", &self.samp_den),
        ] {
            for (i, c) in arr.iter().enumerate() {
                let _ = writeln!(s, "{prefix}_{}: {c:e}", i + 1);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Horner-style evaluation written independently of `rpc_basis`.
    fn horner_oracle(c: &[f64; 20], l: f64, p: f64, h: f64) -> f64 {
        // group by powers of h
        let h0 = c[0]
            + l * (c[1] + l * (c[7] + l * c[11]) + p * (c[4] + l * c[14] + p * c[12]))
            + p * (c[2] + p * (c[8] + p * c[15]));
        let h1 = c[3] + l * (c[5] + l * c[17]) + p * (c[6] + p * c[18] + l * c[10]);
        let h2 = c[9] + l * c[13] + p * c[16];
        let h3 = c[19];
        h0 + h * (h1 + h * (h2 + h * h3))
    }

    fn random_model(rng: &mut ChaCha8Rng, cubic: bool) -> RpcModel {
        let mut m = RpcModel::identity();
        for arr in [&mut m.line_num, &mut m.samp_num] {
            for (i, c) in arr.iter_mut().enumerate() {
                let mag = if i < 4 {
                    1.0
                } else if cubic {
                    0.02
                } else {
                    0.0
                };
                *c = rng.gen_range(-mag..=mag);
            }
        }
        m.line_num[1] = 1.0 + rng.gen_range(-0.1..0.1);
        m.samp_num[2] = 1.0 + rng.gen_range(-0.1..0.1);
        m.lat = Normalization::new(30.3, 0.01);
        m.lon = Normalization::new(-81.7, 0.01);
        m.alt = Normalization::new(10.0, 50.0);
        m.line = Normalization::new(500.0, 520.0);
        m.samp = Normalization::new(480.0, 510.0);
        m
    }

    #[test]
    fn identity_projection_and_localization() {
        let m = RpcModel::identity();
        let (u, v) = m.project(0.25, -0.5, 0.0).unwrap();
        assert_eq!((u, v), (-0.5, 0.25));
        let (lon, lat) = m.localize(-0.5, 0.25, 0.0).unwrap();
        assert!((lon - 0.25).abs() < 1e-12 && (lat + 0.5).abs() < 1e-12);
    }

    #[test]
    fn center_projection_uses_constant_terms_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, true);
        let (u, v) = m.project(m.lon.offset, m.lat.offset, m.alt.offset).unwrap();
        let eu = m.line_num[0] / m.line_den[0] * m.line.scale + m.line.offset;
        let ev = m.samp_num[0] / m.samp_den[0] * m.samp.scale + m.samp.offset;
        assert!((u - eu).abs() < 1e-12 && (v - ev).abs() < 1e-12);
    }

    #[test]
    fn projection_matches_horner_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut m = random_model(&mut rng, true);
            for c in m.line_num.iter_mut().chain(m.samp_num.iter_mut()) {
                *c = rng.gen_range(-1.0..1.0);
            }
            for _ in 0..50 {
                let (l, p, h): (f64, f64, f64) = (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let lat = m.lat.denormalize(l);
                let lon = m.lon.denormalize(p);
                let alt = m.alt.denormalize(h);
                let (u, v) = m.project(lon, lat, alt).unwrap();
                let (l2, p2, h2) = (m.lat.normalize(lat), m.lon.normalize(lon), m.alt.normalize(alt));
                let eu = m.line.denormalize(horner_oracle(&m.line_num, l2, p2, h2));
                let ev = m.samp.denormalize(horner_oracle(&m.samp_num, l2, p2, h2));
                assert!((u - eu).abs() < 1e-12 * eu.abs().max(1.0), "{u} vs {eu}");
                assert!((v - ev).abs() < 1e-12 * ev.abs().max(1.0), "{v} vs {ev}");
            }
        }
    }

    #[test]
    fn affine_localization_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let m = random_model(&mut rng, false);
            let alt = 12.0;
            let h = m.alt.normalize(alt);
            let a = &m.line_num;
            let b = &m.samp_num;
            for _ in 0..10 {
                let l: f64 = rng.gen_range(-0.9..0.9);
                let p: f64 = rng.gen_range(-0.9..0.9);
                // affine forward written out by hand
                let u = m.line.denormalize(a[0] + a[1] * l + a[2] * p + a[3] * h);
                let v = m.samp.denormalize(b[0] + b[1] * l + b[2] * p + b[3] * h);
                let (lon, lat) = m.localize(u, v, alt).unwrap();
                // closed-form inverse of the 2x2 affine system
                let r0 = m.line.normalize(u) - a[0] - a[3] * h;
                let r1 = m.samp.normalize(v) - b[0] - b[3] * h;
                let det = a[1] * b[2] - a[2] * b[1];
                let lc = (r0 * b[2] - a[2] * r1) / det;
                let pc = (a[1] * r1 - b[1] * r0) / det;
                assert!((m.lat.normalize(lat) - lc).abs() < 1e-12);
                assert!((m.lon.normalize(lon) - pc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn localize_inverts_project_on_cubic_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_model(&mut rng, true);
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..5 {
                    let lat = m.lat.denormalize(-0.9 + 0.2 * f64::from(i));
                    let lon = m.lon.denormalize(-0.9 + 0.2 * f64::from(j));
                    let alt = m.alt.denormalize(-0.8 + 0.4 * f64::from(k));
                    let (u, v) = m.project(lon, lat, alt).unwrap();
                    let (lon2, lat2) = m.localize(u, v, alt).unwrap();
                    assert!((lon - lon2).abs() < 1e-9 && (lat - lat2).abs() < 1e-9);
                    let (u2, v2) = m.project(lon2, lat2, alt).unwrap();
                    assert!((u - u2).abs() < 1e-6 && (v - v2).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn out_of_domain_and_degenerate_errors() {
        let m = RpcModel::identity();
        assert!(matches!(m.project(0.0, 5.0, 0.0), Err(Error::OutOfDomain(_))));
        let mut d = RpcModel::identity();
        d.line_den = [0.0; RPC_TERMS];
        assert!(matches!(d.project(0.0, 0.0, 0.0), Err(Error::DegenerateDenominator(_))));
        let mut flat = RpcModel::identity();
        flat.line_num = [0.0; RPC_TERMS];
        flat.line_num[0] = 0.3;
        assert!(matches!(
            flat.localize(0.1, 0.1, 0.0),
            Err(Error::DegenerateJacobian(_))
        ));
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, true);
        let back = RpcModel::parse(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert!(RpcModel::parse("LINE_OFF: 1\n").is_err());
        let with_units = m.to_text().replace("LINE_OFF: 500\n", "LINE_OFF: +500.00 pixels\n");
        assert_eq!(RpcModel::parse(&with_units).unwrap(), m);
    }
}
