//! The commands behind the `pufm` binary, as library functions.
//!
//! Commands write human-readable progress to the supplied writer and
//! artifacts through [`crate::io`] (atomically).

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::{record_loss_profile, train_stage1, train_stage2, TrainingSet};
use crate::geometry::{assemble_patches, extract_patch_pairs, fps, knn, midpoint_interpolate, NormalizationTransform, PointCloud};
use crate::io::{self, Checkpoint, MetricReport};
use crate::metrics;
use crate::model::{AnyModel, VelocityModel};
use crate::sampler::integrate;
use crate::scheduler::{schedule_from_profile, LossProfile, TimeSchedule};
use crate::toy::generate_pair;

const SPARSE_SUFFIX: &str = ".sparse.xyz";
const DENSE_SUFFIX: &str = ".dense.xyz";

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// A named sparse/dense pair on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub name: String,
    pub sparse: PointCloud,
    pub dense: PointCloud,
}

/// Seed of the `index`-th toy cloud.
pub fn toy_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Writes `toy_count` pairs `<shape>_<i>.sparse.xyz` / `.dense.xyz` into `out_dir`.
pub fn cmd_gen_toy(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for i in 0..cfg.toy_count {
        let pair = generate_pair(cfg.toy_shape, cfg.toy_points, cfg.rate, toy_seed(cfg.seed, i))?;
        let stem = format!("{}_{i:03}", cfg.toy_shape);
        let sparse = out_dir.join(format!("{stem}{SPARSE_SUFFIX}"));
        let dense = out_dir.join(format!("{stem}{DENSE_SUFFIX}"));
        io::write_xyz(&sparse, &pair.sparse)?;
        io::write_xyz(&dense, &pair.dense)?;
        written.push(sparse);
        written.push(dense);
    }
    Ok(written)
}

/// Every `<name>.sparse.xyz` in `dir` with its `<name>.dense.xyz`, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let file = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = file.strip_suffix(SPARSE_SUFFIX) {
            names.push(stem.to_string());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::invalid(format!(
            "{} contains no *{SPARSE_SUFFIX} files",
            dir.display()
        )));
    }
    names
        .into_iter()
        .map(|name| {
            let sparse = io::read_xyz(&dir.join(format!("{name}{SPARSE_SUFFIX}")))?;
            let dense = io::read_xyz(&dir.join(format!("{name}{DENSE_SUFFIX}")))?;
            Ok(DatasetItem { name, sparse, dense })
        })
        .collect()
}

/// Patch pairs from every item, OT-aligned when `cfg.train.align` is set.
pub fn build_training_set(cfg: &RunConfig, items: &[DatasetItem]) -> Result<TrainingSet> {
    let mut pairs = Vec::new();
    for (i, item) in items.iter().enumerate() {
        pairs.extend(extract_patch_pairs(
            &item.sparse,
            &item.dense,
            cfg.patch_size,
            cfg.train_patches,
            cfg.rate,
            toy_seed(cfg.seed, i),
        )?);
    }
    TrainingSet::new(pairs, cfg.train.align, cfg.train.epsilon_final)
}

fn require<'a>(p: Option<&'a Path>, what: &str) -> Result<&'a Path> {
    p.ok_or_else(|| Error::invalid(format!("no {what} given")))
}

fn load_model(path: &Path) -> Result<(AnyModel, Option<LossProfile>)> {
    let ckpt = Checkpoint::load(path)?;
    Ok((ckpt.to_model()?, ckpt.loss_profile()?))
}

/// Stage 1 from a fresh model; writes the checkpoint.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, checkpoint_out: &Path, out: &mut dyn Write) -> Result<AnyModel> {
    cfg.validate()?;
    let items = load_dataset(data_dir)?;
    let data = build_training_set(cfg, &items)?;
    let mut model = AnyModel::new(cfg.model, cfg.seed)?;
    let mut failed = None;
    train_stage1(&mut model, &data, &cfg.train, |e, l| {
        if failed.is_none() {
            failed = emit(out, format_args!("epoch {e} loss {l}")).err();
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    Checkpoint::from_model(&model, None).save(checkpoint_out)?;
    Ok(model)
}

/// Stage 2 on top of a stage-1 checkpoint. The optimizer restarts and any
/// stored profile is dropped, since it describes the old weights.
pub fn cmd_refine(
    cfg: &RunConfig,
    data_dir: &Path,
    checkpoint_in: &Path,
    checkpoint_out: &Path,
    out: &mut dyn Write,
) -> Result<AnyModel> {
    cfg.validate()?;
    let (mut model, _) = load_model(checkpoint_in)?;
    model.params_mut().set_adam_state(None)?;
    let items = load_dataset(data_dir)?;
    let data = build_training_set(cfg, &items)?;
    let mut failed = None;
    train_stage2(&mut model, &data, &cfg.train, |e, l| {
        if failed.is_none() {
            failed = emit(out, format_args!("epoch {e} loss {l}")).err();
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    Checkpoint::from_model(&model, None).save(checkpoint_out)?;
    Ok(model)
}

/// Records the loss profile of a frozen checkpoint and stores it back into
/// the checkpoint (weights untouched). Optionally also writes the profile
/// JSON on its own.
pub fn cmd_profile(
    cfg: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    profile_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<LossProfile> {
    cfg.validate()?;
    let mut ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.to_model()?;
    let items = load_dataset(data_dir)?;
    let data = build_training_set(cfg, &items)?;
    let profile = record_loss_profile(&model, &data, cfg.profile_intervals)?;
    for e in profile.entries() {
        emit(out, format_args!("t {} loss {}", e.t, e.loss))?;
    }
    ckpt.profile = Some(profile.entries());
    ckpt.save(checkpoint)?;
    if let Some(p) = profile_out {
        io::write_profile(p, &profile)?;
    }
    Ok(profile)
}

/// The inference schedule for `cfg`, from `profile` when ATS is enabled.
pub fn inference_schedule(cfg: &RunConfig, profile: Option<&LossProfile>) -> Result<TimeSchedule> {
    if cfg.sampler.use_ats {
        let profile = profile.ok_or_else(|| {
            Error::invalid("adaptive schedule requested but the checkpoint has no loss profile; run `pufm profile` or pass --uniform-schedule")
        })?;
        schedule_from_profile(profile, &cfg.scheduler, cfg.sampler.steps)
    } else {
        TimeSchedule::uniform(cfg.sampler.steps)
    }
}

/// Number of inference patches for `n` sparse points with patches of
/// `sparse_patch` points.
pub fn inference_patch_count(cfg: &RunConfig, n: usize, sparse_patch: usize) -> usize {
    if sparse_patch >= n {
        return 1;
    }
    let m = if cfg.infer_patches > 0 {
        cfg.infer_patches
    } else {
        (2 * n).div_ceil(sparse_patch)
    };
    m.min(n)
}

/// Patch-wise upsampling of `sparse` to `rate * sparse.len()` points.
///
/// Each patch is densified by midpoints, normalized by a transform fitted to
/// the densified patch, integrated, and mapped back; the union is reduced by
/// FPS.
pub fn upsample_cloud<M: VelocityModel + ?Sized>(
    model: &M,
    sparse: &PointCloud,
    cfg: &RunConfig,
    schedule: &TimeSchedule,
) -> Result<PointCloud> {
    cfg.sampler.validate()?;
    let n = sparse.len();
    if n < 2 {
        return Err(Error::invalid("upsampling needs at least two input points"));
    }
    let qs = cfg.sparse_patch_size().min(n);
    let m = inference_patch_count(cfg, n, qs);
    let centres = fps(sparse, m, 0)?;
    let patches = centres
        .par_iter()
        .map(|&c| {
            let idx: Vec<usize> = knn(sparse, sparse.get(c), qs)?.into_iter().map(|nb| nb.index).collect();
            let x0 = midpoint_interpolate(&sparse.select(&idx), cfg.rate)?;
            let tf = NormalizationTransform::fit(&x0, &[]);
            let x = integrate(model, &tf.apply(&x0), schedule, &cfg.sampler)?;
            Ok((x, tf))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_patches(&patches, cfg.rate * n)
}

pub fn cmd_upsample(cfg: &RunConfig, checkpoint: &Path, input: &Path, output: &Path) -> Result<PointCloud> {
    cfg.validate()?;
    let (model, profile) = load_model(checkpoint)?;
    let schedule = inference_schedule(cfg, profile.as_ref())?;
    let sparse = io::read_cloud(input)?;
    let dense = upsample_cloud(&model, &sparse, cfg, &schedule)?;
    io::write_cloud(output, &dense)?;
    Ok(dense)
}

/// Metrics of `candidate` against `reference`.
pub fn evaluate_clouds(
    reference: &PointCloud,
    candidate: &PointCloud,
    mesh: Option<&metrics::TriangleMesh>,
    jsd_resolution: usize,
) -> Result<MetricReport> {
    Ok(MetricReport {
        reference_points: reference.len(),
        candidate_points: candidate.len(),
        chamfer: metrics::chamfer(candidate, reference)?,
        hausdorff: metrics::hausdorff(candidate, reference)?,
        jsd: metrics::jsd(candidate, reference, jsd_resolution)?,
        jsd_resolution,
        p2f: mesh.map(|m| metrics::p2f(candidate, m)).transpose()?,
    })
}

pub fn cmd_eval(
    cfg: &RunConfig,
    reference: &Path,
    candidate: &Path,
    mesh: Option<&Path>,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> Result<MetricReport> {
    let r = io::read_cloud(reference)?;
    let c = io::read_cloud(candidate)?;
    let mesh = mesh.map(io::read_mesh).transpose()?;
    let rep = evaluate_clouds(&r, &c, mesh.as_ref(), cfg.jsd_resolution)?;
    emit(out, format_args!("chamfer {}", rep.chamfer))?;
    emit(out, format_args!("hausdorff {}", rep.hausdorff))?;
    emit(out, format_args!("jsd {}", rep.jsd))?;
    if let Some(p) = rep.p2f {
        emit(out, format_args!("p2f {p}"))?;
    }
    if let Some(path) = report {
        io::write_report(path, &rep)?;
    }
    Ok(rep)
}

/// Resolves an optional path argument against the configuration fallback.
pub fn path_or<'a>(arg: Option<&'a Path>, fallback: Option<&'a PathBuf>, what: &str) -> Result<&'a Path> {
    require(arg.or(fallback.map(PathBuf::as_path)), what)
}
