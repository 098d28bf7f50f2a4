//! Transverse Mercator (UTM) conversion on the WGS84 ellipsoid.
//!
//! Forward mapping uses the Krüger series to third order in the third
//! flattening, which is sub-millimetre inside a zone. The inverse starts from
//! the matching inverse series and is then polished with a few Newton steps
//! against the forward series, so `forward(inverse(e, n))` reproduces its input
//! to rounding level.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hemisphere {
    North,
    South,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UtmZone {
    pub number: u8,
    pub hemisphere: Hemisphere,
}

impl UtmZone {
    pub fn new(number: u8, hemisphere: Hemisphere) -> Result<Self> {
        if !(1..=60).contains(&number) {
            return Err(Error::InvalidArgument(format!(
                "utm zone number {number} outside 1..=60"
            )));
        }
        Ok(Self { number, hemisphere })
    }

    /// Zone containing the given point (no Norway/Svalbard exceptions).
    pub fn containing(lon: f64, lat: f64) -> Self {
        let number = (((lon + 180.0) / 6.0).floor() as i64).rem_euclid(60) as u8 + 1;
        let hemisphere = if lat >= 0.0 {
            Hemisphere::North
        } else {
            Hemisphere::South
        };
        Self { number, hemisphere }
    }

    pub fn central_meridian(&self) -> f64 {
        f64::from(self.number) * 6.0 - 183.0
    }

    fn false_northing(&self) -> f64 {
        match self.hemisphere {
            Hemisphere::North => 0.0,
            Hemisphere::South => FALSE_NORTHING_SOUTH,
        }
    }
}

impl fmt::Display for UtmZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = match self.hemisphere {
            Hemisphere::North => 'N',
            Hemisphere::South => 'S',
        };
        write!(f, "{}{}", self.number, h)
    }
}

impl FromStr for UtmZone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("invalid utm zone `{s}` (expected e.g. 17N)"));
        let (digits, h) = s.split_at(s.len().checked_sub(1).ok_or_else(bad)?);
        let hemisphere = match h {
            "N" | "n" => Hemisphere::North,
            "S" | "s" => Hemisphere::South,
            _ => return Err(bad()),
        };
        let number: u8 = digits.parse().map_err(|_| bad())?;
        UtmZone::new(number, hemisphere)
    }
}

struct Series {
    big_a: f64,
    n: f64,
    alpha: [f64; 3],
    beta: [f64; 3],
    delta: [f64; 3],
}

fn series() -> Series {
    let n = WGS84_F / (2.0 - WGS84_F);
    let n2 = n * n;
    let n3 = n2 * n;
    Series {
        big_a: WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n2 * n2 / 64.0),
        n,
        alpha: [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0,
            61.0 * n3 / 240.0,
        ],
        beta: [
            n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0,
            n2 / 48.0 + n3 / 15.0,
            17.0 * n3 / 480.0,
        ],
        delta: [
            2.0 * n - 2.0 * n2 / 3.0 - 2.0 * n3,
            7.0 * n2 / 3.0 - 8.0 * n3 / 5.0,
            56.0 * n3 / 15.0,
        ],
    }
}

/// (lon, lat) in degrees to (easting, northing) in metres within `zone`.
pub fn to_utm(zone: UtmZone, lon: f64, lat: f64) -> (f64, f64) {
    let s = series();
    let phi = lat.to_radians();
    let dlam = (lon - zone.central_meridian()).to_radians();
    let c = 2.0 * s.n.sqrt() / (1.0 + s.n);
    let t = (phi.sin().atanh() - c * (c * phi.sin()).atanh()).sinh();
    let xi_p = (t / dlam.cos()).atan();
    let eta_p = (dlam.sin() / (1.0 + t * t).sqrt()).atanh();
    let mut e = eta_p;
    let mut nn = xi_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        e += a * (k * xi_p).cos() * (k * eta_p).sinh();
        nn += a * (k * xi_p).sin() * (k * eta_p).cosh();
    }
    (
        FALSE_EASTING + K0 * s.big_a * e,
        zone.false_northing() + K0 * s.big_a * nn,
    )
}

fn inverse_series(zone: UtmZone, easting: f64, northing: f64) -> (f64, f64) {
    let s = series();
    let xi = (northing - zone.false_northing()) / (K0 * s.big_a);
    let eta = (easting - FALSE_EASTING) / (K0 * s.big_a);
    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }
    let chi = (xi_p.sin() / eta_p.cosh()).asin();
    let mut phi = chi;
    for (j, d) in s.delta.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        phi += d * (k * chi).sin();
    }
    let lam = (eta_p.sinh() / xi_p.cos()).atan();
    (zone.central_meridian() + lam.to_degrees(), phi.to_degrees())
}

/// (easting, northing) in metres to (lon, lat) in degrees.
pub fn from_utm(zone: UtmZone, easting: f64, northing: f64) -> (f64, f64) {
    let (mut lon, mut lat) = inverse_series(zone, easting, northing);
    const H: f64 = 1e-6;
    for _ in 0..4 {
        let (e, n) = to_utm(zone, lon, lat);
        let (re, rn) = (easting - e, northing - n);
        if re.abs() < 1e-10 && rn.abs() < 1e-10 {
            break;
        }
        let (e_lp, n_lp) = to_utm(zone, lon + H, lat);
        let (e_lm, n_lm) = to_utm(zone, lon - H, lat);
        let (e_tp, n_tp) = to_utm(zone, lon, lat + H);
        let (e_tm, n_tm) = to_utm(zone, lon, lat - H);
        let de_dlon = (e_lp - e_lm) / (2.0 * H);
        let dn_dlon = (n_lp - n_lm) / (2.0 * H);
        let de_dlat = (e_tp - e_tm) / (2.0 * H);
        let dn_dlat = (n_tp - n_tm) / (2.0 * H);
        let det = de_dlon * dn_dlat - de_dlat * dn_dlon;
        lon += (re * dn_dlat - de_dlat * rn) / det;
        lat += (de_dlon * rn - dn_dlon * re) / det;
    }
    (lon, lat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zone_parse_and_display() {
        let z: UtmZone = "17N".parse().unwrap();
        assert_eq!(z.number, 17);
        assert_eq!(z.hemisphere, Hemisphere::North);
        assert_eq!(z.to_string(), "17N");
        assert!("61N".parse::<UtmZone>().is_err());
        assert!("17X".parse::<UtmZone>().is_err());
        assert!("".parse::<UtmZone>().is_err());
        assert_eq!(UtmZone::containing(-81.7, 30.3).to_string(), "17N");
        assert_eq!(UtmZone::containing(151.2, -33.9).to_string(), "56S");
    }

    #[test]
    fn central_meridian_maps_to_false_easting() {
        let z = UtmZone::new(31, Hemisphere::North).unwrap();
        let (e, n) = to_utm(z, 3.0, 0.0);
        assert!((e - 500_000.0).abs() < 1e-6);
        assert!(n.abs() < 1e-6);
    }

    #[test]
    fn matches_published_reference_point() {
        // Statue of Liberty area: 40.6892 N, 74.0445 W -> 18T 580735.5 E 4504695.3 N
        let z: UtmZone = "18N".parse().unwrap();
        let (e, n) = to_utm(z, -74.0445, 40.6892);
        assert!((e - 580_735.5).abs() < 1.0, "{e}");
        assert!((n - 4_504_695.3).abs() < 1.0, "{n}");
    }

    #[test]
    fn inverse_roundtrip_is_tight() {
        let z: UtmZone = "17N".parse().unwrap();
        for i in 0..20 {
            let lon = -83.5 + 0.25 * f64::from(i);
            let lat = 25.0 + 0.7 * f64::from(i);
            let (e, n) = to_utm(z, lon, lat);
            let (lon2, lat2) = from_utm(z, e, n);
            let (e2, n2) = to_utm(z, lon2, lat2);
            assert!((lon - lon2).abs() < 1e-11);
            assert!((lat - lat2).abs() < 1e-11);
            assert!((e - e2).abs() < 1e-7 && (n - n2).abs() < 1e-7);
        }
    }
}
