//! Float rasters and their file formats: PFM, ESRI ASCII grid and 8-bit PNG
//! masks. Rows are stored top (north, image line 0) first; NoData is NaN in
//! memory.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const ASC_NODATA: f64 = -9999.0;

/// Georeferencing of a north-up grid. `origin` is the lower-left corner
/// (easting, northing) as in the ESRI ASCII header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    /// (easting, northing) of the center of cell (row, col).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_size,
            self.origin.1 + (self.height as f64 - row as f64 - 0.5) * self.cell_size,
        )
    }

    /// Continuous (row, col) of a point, cell centers at integers.
    pub fn to_cell(&self, e: f64, n: f64) -> (f64, f64) {
        (
            self.height as f64 - 0.5 - (n - self.origin.1) / self.cell_size,
            (e - self.origin.0) / self.cell_size - 0.5,
        )
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        const TOL: f64 = 1e-6;
        self.width == other.width
            && self.height == other.height
            && (self.cell_size - other.cell_size).abs() <= TOL
            && (self.origin.0 - other.origin.0).abs() <= TOL
            && (self.origin.1 - other.origin.1).abs() <= TOL
    }
}

/// Georeferenced height grid; NaN marks NoData.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub spec: GridSpec,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Self {
            data: vec![value; spec.len()],
            spec,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.spec.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.spec.width + col] = v;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite()).count()
    }

    pub fn write_asc(&self, path: &Path) -> Result<()> {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "ncols {}", s.width);
        let _ = writeln!(out, "nrows {}", s.height);
        let _ = writeln!(out, "xllcorner {}", s.origin.0);
        let _ = writeln!(out, "yllcorner {}", s.origin.1);
        let _ = writeln!(out, "cellsize {}", s.cell_size);
        let _ = writeln!(out, "NODATA_value {ASC_NODATA}");
        for row in self.data.chunks(s.width.max(1)) {
            let line: Vec<String> = row
                .iter()
                .map(|v| {
                    if v.is_finite() {
                        format!("{v}")
                    } else {
                        format!("{ASC_NODATA}")
                    }
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_asc(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let bad = |m: &str| Error::parse(path, m.to_string());
        let mut header = std::collections::HashMap::new();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
        while let Some(line) = lines.peek() {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or("").to_ascii_lowercase();
            if key.starts_with(|c: char| c.is_ascii_alphabetic()) {
                let val: f64 = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(&format!("bad header line `{line}`")))?;
                header.insert(key, val);
                lines.next();
            } else {
                break;
            }
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| bad(&format!("missing `{k}`")));
        let width = get("ncols")? as usize;
        let height = get("nrows")? as usize;
        let cell_size = get("cellsize")?;
        let x = match header.get("xllcorner") {
            Some(v) => *v,
            None => get("xllcenter")? - 0.5 * cell_size,
        };
        let y = match header.get("yllcorner") {
            Some(v) => *v,
            None => get("yllcenter")? - 0.5 * cell_size,
        };
        let nodata = header.get("nodata_value").copied().unwrap_or(ASC_NODATA);
        let mut data = Vec::with_capacity(width * height);
        for line in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| bad(&format!("bad value `{tok}`")))?;
                data.push(if v == nodata { f64::NAN } else { v });
            }
        }
        if data.len() != width * height {
            return Err(bad(&format!(
                "expected {} values, found {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            spec: GridSpec {
                origin: (x, y),
                cell_size,
                width,
                height,
            },
            data,
        })
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

/// Single-channel float image, rows top first.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Writes a grayscale little-endian PFM (`Pf`). PFM stores the bottom row
/// first.
pub fn write_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for row in img.data.chunks(img.width.max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads a PFM. Color (`PF`) files are reduced to their first channel.
pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    let bytes = read_bytes(path)?;
    let bad = |m: &str| Error::parse(path, m.to_string());
    // header tokens: magic, width, height, scale
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(bad(&format!("unknown magic `{m}`"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;
    let n = width * height * channels;
    if bytes.len() < pos + 4 * n {
        return Err(bad("truncated data"));
    }
    let mut data = vec![0.0f32; width * height];
    for r in 0..height {
        // file row r is image row height-1-r
        let dst = (height - 1 - r) * width;
        for c in 0..width {
            let o = pos + 4 * ((r * width + c) * channels);
            let b = [bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]];
            data[dst + c] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(FloatImage { width, height, data })
}

/// Reads an 8-bit mask: nonzero = valid.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p.0[0] != 0).collect()))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let buf: Vec<u8> = mask.iter().map(|m| if *m { 255 } else { 0 }).collect();
    image::GrayImage::from_raw(width as u32, height as u32, buf)
        .ok_or_else(|| Error::InvalidArgument("mask size mismatch".into()))?
        .save(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Writes a 3-channel 8-bit PNG from values in [0, 1].
pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<()> {
    let buf: Vec<u8> = rgb
        .iter()
        .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    image::RgbImage::from_raw(width as u32, height as u32, buf)
        .ok_or_else(|| Error::InvalidArgument("image size mismatch".into()))?
        .save(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads an 8-bit RGB image as values in [0, 1], rows top first.
pub fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| p.0.map(|v| f64::from(v) / 255.0)).collect();
    Ok((w as usize, h as usize, px))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec {
            origin: (435_000.0, 3_350_000.5),
            cell_size: 0.5,
            width: 4,
            height: 3,
        }
    }

    #[test]
    fn asc_roundtrip_keeps_nodata() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.asc");
        let mut r = Raster::filled(spec(), 1.25);
        r.set(1, 2, f64::NAN);
        r.set(2, 3, -3.5);
        r.write_asc(&p).unwrap();
        let back = Raster::read_asc(&p).unwrap();
        assert_eq!(back.spec, r.spec);
        assert!(back.get(1, 2).is_nan());
        assert_eq!(back.get(2, 3), -3.5);
        assert_eq!(back.valid_count(), 11);
    }

    #[test]
    fn asc_rejects_short_body() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.asc");
        std::fs::write(&p, "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n").unwrap();
        assert!(matches!(Raster::read_asc(&p), Err(Error::Parse { .. })));
        assert!(matches!(
            Raster::read_asc(&dir.path().join("none.asc")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn pfm_roundtrip_and_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let img = FloatImage {
            width: 3,
            height: 2,
            data: vec![0.0, 1.0, 2.0, 10.0, 11.0, f32::NAN],
        };
        write_pfm(&p, &img).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let body = &bytes[bytes.len() - 24..];
        // bottom row first on disk
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 10.0);
        let back = read_pfm(&p).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        assert_eq!(back.data[..5], img.data[..5]);
        assert!(back.data[5].is_nan());
    }

    #[test]
    fn cell_centers_invert() {
        let s = spec();
        let (e, n) = s.cell_center(2, 1);
        assert_eq!(s.to_cell(e, n), (2.0, 1.0));
        assert_eq!(n, s.origin.1 + 0.25);
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = vec![true, false, true, true, false, false];
        write_mask(&p, 3, 2, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), (3, 2, m));
    }
}
