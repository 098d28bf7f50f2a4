//! The stages behind the command line: synthesize, fuse depth, train,
//! extract and evaluate, each reading and writing files in a directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{append_metrics, chamfer, dsm_error_stats, dsm_points, MetricsRow};
use crate::extraction::{marching_cubes, rasterize_dsm, TriangleMesh};
use crate::field::checkpoint::Checkpoint;
use crate::field::Field;
use crate::priors::{fuse_view, FitForm, FitResult};
use crate::raster::{write_pfm, FloatImage, GridSpec, Raster};
use crate::render::{render_ray, write_ray_dump};
use crate::synth::{generate_dataset, AnalyticScene, SynthDataset, BUNDLED_SCENE, DSM_CELL};
use crate::trainer::{train, TrainReport, TrainState};
use crate::Vec3;

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

pub fn load_scene(cfg: &PipelineConfig) -> Result<AnalyticScene> {
    match cfg.pipeline.synth_scene.as_str() {
        "" => AnalyticScene::parse(BUNDLED_SCENE),
        p => AnalyticScene::load(Path::new(p)),
    }
}

/// Generates the synthetic dataset into `out`.
pub fn synth(cfg: &PipelineConfig, scene: &AnalyticScene, out: &Path) -> Result<SynthDataset> {
    let data = generate_dataset(scene, &cfg.synth, cfg.pipeline.seed)?;
    data.write(out)?;
    for v in &data.views {
        log::info!("{}: rpc fit residual {:.2e} px", v.name, v.rpc_residual);
    }
    Ok(data)
}

/// Aligns every image's relative depth to its sparse points. Writes
/// `{name}_depth.pfm`, `{name}_fit.txt` and `fit_report.csv` into `out`.
pub fn fuse_depth(dataset: &Dataset, out: &Path, form: FitForm) -> Result<Vec<(String, FitResult)>> {
    create_dir(out)?;
    let mut fits = Vec::new();
    for entry in &dataset.manifest.image {
        let Some(relative) = dataset.relative_depth(entry)? else {
            log::warn!("{}: no relative depth, skipped", entry.name);
            continue;
        };
        let mask = dataset.mask(entry, relative.width, relative.height)?;
        let sparse = dataset.sparse(entry)?;
        let model = dataset.rpc(entry)?;
        let fused = fuse_view(&relative, Some(&mask), &sparse, &model, &dataset.bounds, form)?;
        fused.write(out, &entry.name)?;
        log::info!(
            "{}: scale {:.6} offset {:.6} residual median {:.3e} over {} points",
            entry.name,
            fused.fit.scale,
            fused.fit.offset,
            fused.fit.residual_median,
            fused.fit.points
        );
        fits.push((entry.name.clone(), fused.fit));
    }
    let mut report = String::from("name,scale,offset,residual_mean,residual_median,points\n");
    for (name, f) in &fits {
        let _ = writeln!(
            report,
            "{name},{},{},{},{},{}",
            f.scale, f.offset, f.residual_mean, f.residual_median, f.points
        );
    }
    let path = out.join("fit_report.csv");
    std::fs::write(&path, report).map_err(|e| Error::io(&path, e))?;
    Ok(fits)
}

pub fn build_field(cfg: &PipelineConfig) -> Result<Field> {
    Field::new(cfg.hash_grid_config(), cfg.field_config())
}

/// Canonical height of the starting plane: the mean altitude of the sparse
/// points, or the middle of the altitude range when there are none.
pub fn initial_plane(dataset: &Dataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for entry in &dataset.manifest.image {
        for o in dataset.sparse(entry)? {
            sum += o.alt;
            n += 1;
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    let b = &dataset.bounds;
    let alt = sum / n as f64;
    Ok((2.0 * (alt - b.alt_ref_lower) / (b.alt_ref_upper - b.alt_ref_lower) - 1.0).clamp(-0.9, 0.9))
}

pub struct Trained {
    pub field: Field,
    pub state: TrainState,
    pub report: TrainReport,
}

/// Trains on `dataset` with fused depths from `fused_dir`, writing the loss
/// log, checkpoints and a config echo into `out`. With `resume`, continues
/// from that checkpoint.
pub fn train_model(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    fused_dir: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    dump_rays: bool,
) -> Result<Trained> {
    create_dir(out)?;
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    let field = build_field(cfg)?;
    let data = dataset.load_train_data(fused_dir)?;
    let mut state = match resume {
        Some(p) => TrainState::from_checkpoint(&field, Checkpoint::read(&field, p)?)?,
        None => TrainState::new(&field, field.init_params(cfg.pipeline.seed, initial_plane(dataset)?)),
    };
    let tc = cfg.train_config();
    let report = train(&field, &tc, &cfg.sampling_config(), &data, &mut state, Some(out))?;
    if dump_rays {
        let view = &data.views[0];
        let row = view.height / 2;
        let lambda = field.grid.config.levels as f64;
        let rendered = (0..16)
            .map(|k| {
                let col = k * (view.width - 1) / 15;
                render_ray(
                    &field,
                    &state.params,
                    &view.rays[view.index(row, col)],
                    &view.sun,
                    lambda,
                    &cfg.sampling_config(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        write_ray_dump(&out.join("rays.csv"), &rendered)?;
    }
    Ok(Trained { field, state, report })
}

/// DSM grid for a dataset: the ground-truth grid when the manifest has one,
/// otherwise 0.5 m cells over the scene bounds.
pub fn dsm_grid(dataset: &Dataset) -> Result<GridSpec> {
    if let Some(t) = &dataset.manifest.truth {
        return Ok(Raster::read_asc(&dataset.path(&t.dsm))?.spec);
    }
    let b = &dataset.bounds;
    Ok(GridSpec {
        origin: (b.easting.0, b.northing.0),
        cell_size: DSM_CELL,
        width: ((b.easting.1 - b.easting.0) / DSM_CELL).floor() as usize,
        height: ((b.northing.1 - b.northing.0) / DSM_CELL).floor() as usize,
    })
}

pub struct Extracted {
    pub mesh: TriangleMesh,
    pub dsm: Raster,
}

/// Marching cubes at full resolution gating, then the DSM. Writes
/// `mesh.ply`, `mesh.obj`, `dsm.asc` and `dsm.pfm` into `out`.
pub fn extract(
    cfg: &PipelineConfig,
    field: &Field,
    params: &[f64],
    dataset: &Dataset,
    out: &Path,
    fill: bool,
) -> Result<Extracted> {
    create_dir(out)?;
    let mesh = marching_cubes(field, params, cfg.extract.resolution)?.to_utm(&dataset.bounds);
    mesh.write_ply(&out.join("mesh.ply"))?;
    mesh.write_obj(&out.join("mesh.obj"))?;
    let radius = (fill || cfg.extract.fill_nodata).then_some(cfg.extract.fill_radius);
    let dsm = rasterize_dsm(&mesh, dsm_grid(dataset)?, radius);
    dsm.write_asc(&out.join("dsm.asc"))?;
    let img = FloatImage {
        width: dsm.spec.width,
        height: dsm.spec.height,
        data: dsm.data.iter().map(|v| *v as f32).collect(),
    };
    write_pfm(&out.join("dsm.pfm"), &img)?;
    Ok(Extracted { mesh, dsm })
}

pub fn extract_from_checkpoint(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    checkpoint: &Path,
    out: &Path,
    fill: bool,
) -> Result<Extracted> {
    let field = build_field(cfg)?;
    let ck = Checkpoint::read(&field, checkpoint)?;
    extract(cfg, &field, &ck.params, dataset, out, fill)
}

/// DSM errors and chamfer distance. Chamfer uses the given point sets or,
/// without them, the DSM cell points.
pub fn evaluate(
    scene: &str,
    pred: &Raster,
    truth: &Raster,
    points: Option<(&[Vec3], &[Vec3])>,
    align: bool,
) -> Result<MetricsRow> {
    let stats = dsm_error_stats(pred, truth, align)?;
    let cd = match points {
        Some((a, b)) => chamfer(a, b)?,
        None => chamfer(&dsm_points(pred), &dsm_points(truth))?,
    };
    Ok(MetricsRow {
        scene: scene.to_string(),
        mae: stats.mae,
        med: stats.med,
        cd,
        valid_fraction: stats.valid_fraction(),
    })
}

/// Writes a metrics file holding the header and one row.
pub fn write_metrics(path: &Path, row: &MetricsRow) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    append_metrics(path, row)
}

pub struct PipelineOutput {
    pub dataset: PathBuf,
    pub trained: Trained,
    pub extracted: Extracted,
    pub metrics: Option<MetricsRow>,
}

/// Every stage in order under `out`: `data/` (when synthesizing), `fused/`,
/// `train/`, `extract/` and `metrics.csv` when the dataset has a truth DSM.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, fill: bool) -> Result<PipelineOutput> {
    create_dir(out)?;
    let dataset_path = match cfg.pipeline.dataset.as_str() {
        "" => {
            let dir = out.join("data");
            synth(cfg, &load_scene(cfg)?, &dir)?;
            dir
        }
        p => {
            let p = PathBuf::from(p);
            require(&p)?;
            p
        }
    };
    let dataset = Dataset::open(&dataset_path)?;
    let fused = out.join("fused");
    fuse_depth(&dataset, &fused, cfg.priors.fit_form)?;
    let trained = train_model(cfg, &dataset, Some(&fused), &out.join("train"), None, false)?;
    let extracted = extract(
        cfg,
        &trained.field,
        &trained.state.params,
        &dataset,
        &out.join("extract"),
        fill,
    )?;
    let metrics = match &dataset.manifest.truth {
        Some(t) => {
            let truth = Raster::read_asc(&dataset.path(&t.dsm))?;
            let row = if cfg.eval.chamfer_on_mesh {
                let truth_pts = dsm_points(&truth);
                evaluate(
                    &cfg.pipeline.scene,
                    &extracted.dsm,
                    &truth,
                    Some((&extracted.mesh.vertices, &truth_pts)),
                    cfg.eval.align,
                )?
            } else {
                evaluate(&cfg.pipeline.scene, &extracted.dsm, &truth, None, cfg.eval.align)?
            };
            write_metrics(&out.join("metrics.csv"), &row)?;
            log::info!("mae {:.3} m, med {:.3} m, cd {:.3} m", row.mae, row.med, row.cd);
            Some(row)
        }
        None => None,
    };
    Ok(PipelineOutput {
        dataset: dataset_path,
        trained,
        extracted,
        metrics,
    })
}
