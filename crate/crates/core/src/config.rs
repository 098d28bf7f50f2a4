//! Pipeline configuration file: TOML sections mirroring the module configs.
//! Every key is optional; missing keys take their defaults and unknown keys
//! are rejected with their full path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::encoding::HashGridConfig;
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::losses::LossWeights;
use crate::priors::FitForm;
use crate::render::SamplingConfig;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashGridSection {
    pub levels: usize,
    pub base_resolution: u32,
    pub max_resolution: u32,
    pub table_log2: u32,
    pub feature_dim: usize,
    pub point_embed_bands: usize,
    pub dir_embed_bands: usize,
}

impl Default for HashGridSection {
    fn default() -> Self {
        let g = HashGridConfig::default();
        let f = FieldConfig::default();
        Self {
            levels: g.levels,
            base_resolution: g.base_resolution,
            max_resolution: g.max_resolution,
            table_log2: g.table_log2,
            feature_dim: g.feature_dim,
            point_embed_bands: f.position_bands,
            dir_embed_bands: f.direction_bands,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub hidden_width: usize,
    pub geo_feature_dim: usize,
    pub softplus_beta: f64,
    pub init_sharpness: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        let f = FieldConfig::default();
        Self {
            hidden_width: f.hidden_width,
            geo_feature_dim: f.geo_feature_dim,
            softplus_beta: f.softplus_beta,
            init_sharpness: f.init_sharpness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub n_uniform: usize,
    pub importance_rounds: usize,
    pub importance_per_round: usize,
    pub base_sharpness: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            n_uniform: s.n_uniform,
            importance_rounds: s.importance_rounds,
            importance_per_round: s.importance_per_round,
            base_sharpness: s.base_sharpness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub total_iters: usize,
    pub batch_rays: usize,
    pub lambda_init: f64,
    pub lambda_step_fraction: f64,
    pub progressive: bool,
    pub lr_hash: f64,
    pub lr_mlp: f64,
    pub lr_sharpness: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub decay_start: f64,
    pub checkpoint_every: usize,
    pub opacity_gate: f64,
    pub jitter_samples: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            total_iters: t.total_iters,
            batch_rays: t.batch_rays,
            lambda_init: t.lambda_init,
            lambda_step_fraction: t.lambda_step_fraction,
            progressive: t.progressive,
            lr_hash: t.lr_hash,
            lr_mlp: t.lr_mlp,
            lr_sharpness: t.lr_sharpness,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            decay_start: t.decay_start,
            checkpoint_every: t.checkpoint_every,
            opacity_gate: t.opacity_gate,
            jitter_samples: t.jitter_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub depth_weight: f64,
    pub normal_weight: f64,
    pub eikonal_weight: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            depth_weight: w.depth,
            normal_weight: w.normal,
            eikonal_weight: w.eikonal,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorsSection {
    pub fit_form: FitForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    /// Marching-cubes lattice points per axis.
    pub resolution: usize,
    /// Fill DSM holes by inverse-distance weighting.
    pub fill_nodata: bool,
    /// Fill radius in cells.
    pub fill_radius: f64,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self {
            resolution: 128,
            fill_nodata: false,
            fill_radius: 5.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Remove the median height offset before computing MAE and MED.
    pub align: bool,
    /// Chamfer distance from mesh vertices instead of DSM cell points.
    pub chamfer_on_mesh: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Dataset directory or manifest; empty means generate a synthetic one.
    pub dataset: String,
    pub output: String,
    pub seed: u64,
    /// Scene name written to the metrics file.
    pub scene: String,
    /// Synthetic scene description; empty means the bundled two-box scene.
    pub synth_scene: String,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            dataset: String::new(),
            output: "output".into(),
            seed: 0,
            scene: "scene".into(),
            synth_scene: String::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub hash_grid: HashGridSection,
    pub field: FieldSection,
    pub render: RenderSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub priors: PriorsSection,
    pub extract: ExtractSection,
    pub eval: EvalSection,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    /// Parses, checks every key against the schema and validates values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut user: Value = toml::from_str::<toml::Table>(text)
            .map(Value::Table)
            .map_err(|e| Error::config("config", e.to_string().trim().to_string()))?;
        let defaults = Value::try_from(PipelineConfig::default()).expect("defaults serialize");
        check_schema(&mut user, &defaults, "")?;
        let cfg: PipelineConfig = user
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::raster::read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.hash_grid_config().validate()?;
        self.field_config().validate()?;
        self.sampling_config().validate()?;
        self.train_config().validate()?;
        self.synth.validate()?;
        let e = &self.extract;
        if !(8..=512).contains(&e.resolution) {
            return Err(Error::config("extract.resolution", "must be in 8..=512"));
        }
        if !(e.fill_radius > 0.0) {
            return Err(Error::config("extract.fill_radius", "must be > 0"));
        }
        Ok(())
    }

    pub fn hash_grid_config(&self) -> HashGridConfig {
        let h = &self.hash_grid;
        HashGridConfig {
            levels: h.levels,
            base_resolution: h.base_resolution,
            max_resolution: h.max_resolution,
            table_log2: h.table_log2,
            feature_dim: h.feature_dim,
        }
    }

    pub fn field_config(&self) -> FieldConfig {
        let f = &self.field;
        FieldConfig {
            hidden_width: f.hidden_width,
            geo_feature_dim: f.geo_feature_dim,
            position_bands: self.hash_grid.point_embed_bands,
            direction_bands: self.hash_grid.dir_embed_bands,
            softplus_beta: f.softplus_beta,
            init_sharpness: f.init_sharpness,
        }
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        let r = &self.render;
        SamplingConfig {
            n_uniform: r.n_uniform,
            importance_rounds: r.importance_rounds,
            importance_per_round: r.importance_per_round,
            base_sharpness: r.base_sharpness,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            depth: self.loss.depth_weight,
            normal: self.loss.normal_weight,
            eikonal: self.loss.eikonal_weight,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            total_iters: t.total_iters,
            batch_rays: t.batch_rays,
            lambda_init: t.lambda_init,
            lambda_step_fraction: t.lambda_step_fraction,
            progressive: t.progressive,
            lr_hash: t.lr_hash,
            lr_mlp: t.lr_mlp,
            lr_sharpness: t.lr_sharpness,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            decay_start: t.decay_start,
            seed: self.pipeline.seed,
            checkpoint_every: t.checkpoint_every,
            opacity_gate: t.opacity_gate,
            jitter_samples: t.jitter_samples,
            weights: self.loss_weights(),
        }
    }

    pub fn fill_radius(&self) -> Option<f64> {
        self.extract.fill_nodata.then_some(self.extract.fill_radius)
    }
}

/// Rejects keys absent from `defaults` and values of the wrong type, naming
/// the dotted key path. Integers are widened to floats where a float is
/// expected.
fn check_schema(user: &mut Value, defaults: &Value, path: &str) -> Result<()> {
    let join = |k: &str| {
        if path.is_empty() {
            k.to_string()
        } else {
            format!("{path}.{k}")
        }
    };
    match (user, defaults) {
        (Value::Table(u), Value::Table(d)) => {
            for (k, v) in u.iter_mut() {
                match d.get(k) {
                    Some(dv) => check_schema(v, dv, &join(k))?,
                    None => return Err(Error::config(join(k), "unknown key")),
                }
            }
            Ok(())
        }
        (u @ Value::Integer(_), Value::Float(_)) => {
            if let Value::Integer(i) = *u {
                *u = Value::Float(i as f64);
            }
            Ok(())
        }
        (Value::Array(u), Value::Array(d)) => {
            if let Some(first) = d.first() {
                for (i, v) in u.iter_mut().enumerate() {
                    check_schema(v, first, &format!("{path}[{i}]"))?;
                }
            }
            Ok(())
        }
        (u, d) if std::mem::discriminant(u) == std::mem::discriminant(d) => Ok(()),
        (u, d) => Err(Error::config(
            path,
            format!("expected {}, found {}", d.type_str(), u.type_str()),
        )),
    }
}
