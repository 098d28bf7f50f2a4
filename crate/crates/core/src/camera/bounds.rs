use crate::camera::rpc::RpcModel;
use crate::camera::utm::{from_utm, to_utm, UtmZone};
use crate::error::{Error, Result};
use crate::Vec3;

/// Geographic extent of the scene and the canonical-space transform.
///
/// The canonical cube `[-1, 1]^3` is a per-axis affine image of the UTM box
/// (easting, northing, altitude). Altitude maps `alt_ref_lower -> -1` and
/// `alt_ref_upper -> +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub alt_ref_lower: f64,
    pub alt_ref_upper: f64,
    pub zone: UtmZone,
    pub easting: (f64, f64),
    pub northing: (f64, f64),
    /// Canonical distance beyond the unit cube still accepted.
    pub margin: f64,
}

impl SceneBounds {
    pub const DEFAULT_MARGIN: f64 = 0.5;

    pub fn new(
        lat: (f64, f64),
        lon: (f64, f64),
        alt_ref_lower: f64,
        alt_ref_upper: f64,
        zone: UtmZone,
    ) -> Result<Self> {
        if !(alt_ref_upper > alt_ref_lower) {
            return Err(Error::InvalidArgument(format!(
                "alt_ref_upper ({alt_ref_upper}) must exceed alt_ref_lower ({alt_ref_lower})"
            )));
        }
        if !(lat.1 > lat.0 && lon.1 > lon.0) {
            return Err(Error::InvalidArgument("lat/lon box must have positive extent".into()));
        }
        // UTM box = bounding box of the lat/lon box outline.
        const STEPS: usize = 32;
        let mut e = (f64::INFINITY, f64::NEG_INFINITY);
        let mut n = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=STEPS {
            let f = i as f64 / STEPS as f64;
            let la = lat.0 + f * (lat.1 - lat.0);
            let lo = lon.0 + f * (lon.1 - lon.0);
            for (x, y) in [(lon.0, la), (lon.1, la), (lo, lat.0), (lo, lat.1)] {
                let (ee, nn) = to_utm(zone, x, y);
                e = (e.0.min(ee), e.1.max(ee));
                n = (n.0.min(nn), n.1.max(nn));
            }
        }
        Ok(Self {
            lat_min: lat.0,
            lat_max: lat.1,
            lon_min: lon.0,
            lon_max: lon.1,
            alt_ref_lower,
            alt_ref_upper,
            zone,
            easting: e,
            northing: n,
            margin: Self::DEFAULT_MARGIN,
        })
    }

    /// Metres per canonical unit along each axis.
    pub fn metres_per_unit(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.easting.1 - self.easting.0),
            0.5 * (self.northing.1 - self.northing.0),
            0.5 * (self.alt_ref_upper - self.alt_ref_lower),
        )
    }

    pub fn utm_to_canonical(&self, utm: Vec3) -> Vec3 {
        let s = self.metres_per_unit();
        Vec3::new(
            (utm.x - self.easting.0) / s.x - 1.0,
            (utm.y - self.northing.0) / s.y - 1.0,
            (utm.z - self.alt_ref_lower) / s.z - 1.0,
        )
    }

    pub fn canonical_to_utm(&self, c: Vec3) -> Vec3 {
        let s = self.metres_per_unit();
        Vec3::new(
            (c.x + 1.0) * s.x + self.easting.0,
            (c.y + 1.0) * s.y + self.northing.0,
            (c.z + 1.0) * s.z + self.alt_ref_lower,
        )
    }

    pub fn to_utm(&self, lon: f64, lat: f64, alt: f64) -> Vec3 {
        let (e, n) = to_utm(self.zone, lon, lat);
        Vec3::new(e, n, alt)
    }

    /// (lon, lat, alt) of a UTM point.
    pub fn from_utm(&self, utm: Vec3) -> (f64, f64, f64) {
        let (lon, lat) = from_utm(self.zone, utm.x, utm.y);
        (lon, lat, utm.z)
    }

    fn check(&self, c: Vec3) -> Result<Vec3> {
        let lim = 1.0 + self.margin;
        if c.iter().all(|v| v.abs() <= lim) {
            Ok(c)
        } else {
            Err(Error::OutOfDomain(format!(
                "canonical point ({:.4}, {:.4}, {:.4}) beyond ±{lim}",
                c.x, c.y, c.z
            )))
        }
    }

    pub fn canonicalize(&self, lon: f64, lat: f64, alt: f64) -> Result<Vec3> {
        self.check(self.utm_to_canonical(self.to_utm(lon, lat, alt)))
    }

    /// Inverse of [`canonicalize`](Self::canonicalize): (lon, lat, alt).
    pub fn decanonicalize(&self, c: Vec3) -> Result<(f64, f64, f64)> {
        self.check(c)?;
        Ok(self.from_utm(self.canonical_to_utm(c)))
    }
}

/// Straight ray in canonical space from the upper reference plane down to the
/// lower one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

pub fn make_ray(model: &RpcModel, u: f64, v: f64, bounds: &SceneBounds) -> Result<Ray> {
    let (lon_t, lat_t) = model.localize(u, v, bounds.alt_ref_upper)?;
    let (lon_b, lat_b) = model.localize(u, v, bounds.alt_ref_lower)?;
    let top = bounds.canonicalize(lon_t, lat_t, bounds.alt_ref_upper)?;
    let bottom = bounds.canonicalize(lon_b, lat_b, bounds.alt_ref_lower)?;
    let seg = bottom - top;
    let len = seg.norm();
    if !(len > 0.0) {
        return Err(Error::InvalidArgument("zero-length ray".into()));
    }
    Ok(Ray {
        origin: top,
        direction: seg / len,
        t_near: 0.0,
        t_far: len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::rpc::Normalization;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bounds() -> SceneBounds {
        SceneBounds::new(
            (30.2995, 30.3005),
            (-81.7006, -81.6994),
            -5.0,
            25.0,
            "17N".parse().unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn center_and_corner_map_to_canonical_anchors() {
        let b = bounds();
        let center = Vec3::new(
            0.5 * (b.easting.0 + b.easting.1),
            0.5 * (b.northing.0 + b.northing.1),
            0.5 * (b.alt_ref_lower + b.alt_ref_upper),
        );
        assert!(b.utm_to_canonical(center).norm() < 1e-9);
        let corner = Vec3::new(b.easting.0, b.northing.0, b.alt_ref_lower);
        assert!((b.utm_to_canonical(corner) - Vec3::new(-1.0, -1.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn canonical_roundtrip() {
        let b = bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let c = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let (lon, lat, alt) = b.decanonicalize(c).unwrap();
            let c2 = b.canonicalize(lon, lat, alt).unwrap();
            assert!((c - c2).norm() < 1e-9, "{}", (c - c2).norm());
        }
    }

    #[test]
    fn altitude_order_preserved_and_margin_enforced() {
        let b = bounds();
        let lo = b.canonicalize(-81.7, 30.3, 1.0).unwrap();
        let hi = b.canonicalize(-81.7, 30.3, 2.0).unwrap();
        assert!(hi.z > lo.z);
        assert!(b.canonicalize(-81.7, 30.3, 500.0).is_err());
        assert!(SceneBounds::new((0.0, 1.0), (0.0, 1.0), 5.0, 5.0, b.zone).is_err());
    }

    /// Identity-like RPC anchored in the scene: nadir rays.
    fn nadir_model(b: &SceneBounds) -> RpcModel {
        let mut m = RpcModel::identity();
        m.lat = Normalization::new(30.3, 0.0005);
        m.lon = Normalization::new(-81.7, 0.0006);
        m.alt = Normalization::new(10.0, 15.0);
        m.line = Normalization::new(50.0, 50.0);
        m.samp = Normalization::new(50.0, 50.0);
        let _ = b;
        m
    }

    #[test]
    fn nadir_ray_points_straight_down() {
        let b = bounds();
        let m = nadir_model(&b);
        let r = make_ray(&m, 40.0, 60.0, &b).unwrap();
        assert!((r.direction - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
        assert!((r.t_far - 2.0).abs() < 1e-9);
        assert!((r.origin.z - 1.0).abs() < 1e-12);
        let r2 = make_ray(&m, 10.0, 20.0, &b).unwrap();
        assert!((r2.origin.z - r.origin.z).abs() < 1e-12);
        assert!((r2.origin - r.origin).norm() > 1e-3);
    }

    #[test]
    fn oblique_linear_ray_passes_through_mid_plane_point() {
        let b = bounds();
        let mut m = nadir_model(&b);
        // line and sample drift with height: oblique view
        m.line_num[3] = 0.2;
        m.samp_num[3] = -0.15;
        let (u, v) = (37.0, 61.0);
        let r = make_ray(&m, u, v, &b).unwrap();
        let alt_mid = 7.0;
        let (lon, lat) = m.localize(u, v, alt_mid).unwrap();
        let p = b.canonicalize(lon, lat, alt_mid).unwrap();
        let t = r.t_far * (b.alt_ref_upper - alt_mid) / (b.alt_ref_upper - b.alt_ref_lower);
        assert!((r.at(t) - p).norm() < 1e-6, "{}", (r.at(t) - p).norm());
        assert!((r.direction.norm() - 1.0).abs() < 1e-9);
    }
}
