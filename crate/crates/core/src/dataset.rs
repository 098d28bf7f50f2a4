//! Dataset manifest and loading of images, cameras and priors into training
//! views.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{make_ray, RpcModel, SceneBounds};
use crate::error::{Error, Result};
use crate::priors::{normals_from_points, read_sparse_csv, FusedDepthMap, SparseObservation};
use crate::raster::{read_mask, read_pfm, read_rgb, FloatImage};
use crate::trainer::{TrainData, TrainView};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsEntry {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub alt_ref_lower: f64,
    pub alt_ref_upper: f64,
    /// Zone number and hemisphere, e.g. `17N`.
    pub utm_zone: String,
}

/// One image of the manifest. Paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub name: String,
    pub image: String,
    pub rpc: String,
    /// Degrees clockwise from north.
    pub sun_azimuth: f64,
    /// Degrees above the horizon.
    pub sun_elevation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    /// Relative (monocular) depth map, PFM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    /// Sparse tie points, CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEntry {
    /// Ground-truth DSM, ESRI ASCII grid.
    pub dsm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub bounds: BoundsEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthEntry>,
    #[serde(default)]
    pub image: Vec<ImageEntry>,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, e.message().to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&crate::raster::read_text(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn scene_bounds(&self) -> Result<SceneBounds> {
        let b = &self.bounds;
        let zone = b.utm_zone.parse()?;
        SceneBounds::new(
            (b.lat_min, b.lat_max),
            (b.lon_min, b.lon_max),
            b.alt_ref_lower,
            b.alt_ref_upper,
            zone,
        )
    }
}

/// A manifest together with its directory and resolved bounds.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub bounds: SceneBounds,
}

impl Dataset {
    /// Opens `path`, either a manifest file or a directory holding
    /// `manifest.toml`.
    pub fn open(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join("manifest.toml")
        } else {
            path.to_path_buf()
        };
        let manifest = Manifest::read(&file)?;
        if manifest.image.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let bounds = manifest.scene_bounds()?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, manifest, bounds })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn rpc(&self, entry: &ImageEntry) -> Result<RpcModel> {
        RpcModel::read(&self.path(&entry.rpc))
    }

    pub fn mask(&self, entry: &ImageEntry, width: usize, height: usize) -> Result<Vec<bool>> {
        match &entry.mask {
            Some(m) => {
                let path = self.path(m);
                let (w, h, mask) = read_mask(&path)?;
                if (w, h) != (width, height) {
                    return Err(Error::parse(path, format!("mask is {w}x{h}, image {width}x{height}")));
                }
                Ok(mask)
            }
            None => Ok(vec![true; width * height]),
        }
    }

    pub fn relative_depth(&self, entry: &ImageEntry) -> Result<Option<FloatImage>> {
        entry.depth.as_ref().map(|d| read_pfm(&self.path(d))).transpose()
    }

    pub fn sparse(&self, entry: &ImageEntry) -> Result<Vec<SparseObservation>> {
        match &entry.sparse {
            Some(s) => read_sparse_csv(&self.path(s)),
            None => Ok(Vec::new()),
        }
    }

    /// Loads every image into a training view. Fused depth maps are looked
    /// up in `fused_dir` as `{name}_depth.pfm`; images without one get no
    /// depth or normal supervision.
    pub fn load_train_data(&self, fused_dir: Option<&Path>) -> Result<TrainData> {
        let mut views = Vec::with_capacity(self.manifest.image.len());
        for entry in &self.manifest.image {
            let fused = match fused_dir {
                Some(dir) if FusedDepthMap::paths(dir, &entry.name).0.exists() => {
                    Some(FusedDepthMap::read(dir, &entry.name)?)
                }
                _ => None,
            };
            views.push(self.load_view(entry, fused.as_ref())?);
        }
        Ok(TrainData { views })
    }

    pub fn load_view(&self, entry: &ImageEntry, fused: Option<&FusedDepthMap>) -> Result<TrainView> {
        let image_path = self.path(&entry.image);
        let (width, height, color) = read_rgb(&image_path)?;
        let model = self.rpc(entry)?;
        let mut mask = self.mask(entry, width, height)?;
        let mut rays = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                rays.push(make_ray(&model, row as f64, col as f64, &self.bounds)?);
            }
        }
        let (depth, delta_gt) = match fused {
            Some(f) => {
                if (f.width, f.height) != (width, height) {
                    return Err(Error::InvalidArgument(format!(
                        "fused depth for {} is {}x{}, image {width}x{height}",
                        entry.name, f.width, f.height
                    )));
                }
                for (m, fm) in mask.iter_mut().zip(&f.mask) {
                    *m &= *fm;
                }
                let depth: Vec<f64> = f
                    .absolute
                    .iter()
                    .zip(&mask)
                    .map(|(d, m)| if *m { *d } else { f64::NAN })
                    .collect();
                let points: Vec<Vec3> = rays.iter().zip(&depth).map(|(r, d)| r.at(*d)).collect();
                let normals = normals_from_points(width, height, &points);
                (depth, normals.delta)
            }
            None => (vec![f64::NAN; width * height], vec![f64::NAN; width * height]),
        };
        Ok(TrainView {
            width,
            height,
            rays,
            color,
            depth,
            mask,
            delta_gt,
            sun: crate::synth::sun_direction(entry.sun_azimuth, entry.sun_elevation),
        })
    }
}
