//! Run configuration: defaults, a flat `key = value` file format, and
//! overrides.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flow::{TrainConfig, DEFAULT_PROFILE_INTERVALS};
use crate::metrics::DEFAULT_JSD_RESOLUTION;
use crate::model::ModelKind;
use crate::sampler::SamplerConfig;
use crate::scheduler::SchedulerConfig;
use crate::toy::Shape;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelKind,
    /// Dense patch size `Q`.
    pub patch_size: usize,
    pub rate: usize,
    /// Patches per training cloud.
    pub train_patches: usize,
    /// Patches per input cloud at inference; 0 picks `ceil(2 N / (Q / rate))`.
    pub infer_patches: usize,
    pub profile_intervals: usize,
    pub jsd_resolution: usize,
    pub toy_shape: Shape,
    pub toy_count: usize,
    pub toy_points: usize,
    pub train: TrainConfig,
    pub scheduler: SchedulerConfig,
    pub sampler: SamplerConfig,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelKind::Mlp,
            patch_size: 256,
            rate: 4,
            train_patches: 8,
            infer_patches: 0,
            profile_intervals: DEFAULT_PROFILE_INTERVALS,
            jsd_resolution: DEFAULT_JSD_RESOLUTION,
            toy_shape: Shape::Sphere,
            toy_count: 4,
            toy_points: 1024,
            train: TrainConfig::default(),
            scheduler: SchedulerConfig::default(),
            sampler: SamplerConfig::default(),
            data_dir: None,
            checkpoint: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("'{value}' is not a valid value for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("'{value}' is not a boolean for '{key}'"))),
    }
}

impl RunConfig {
    /// Every recognised key, as accepted by [`set`](Self::set).
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "model",
        "patch_size",
        "rate",
        "train_patches",
        "infer_patches",
        "profile_intervals",
        "jsd_resolution",
        "toy_shape",
        "toy_count",
        "toy_points",
        "stage1_lr",
        "stage2_lr",
        "stage1_epochs",
        "stage2_epochs",
        "batch_size",
        "sigma",
        "epsilon_final",
        "align",
        "beta",
        "psi",
        "steps",
        "alpha_cur",
        "alpha",
        "curvature_k",
        "manifold_k",
        "use_ats",
        "postprocess",
        "data_dir",
        "checkpoint",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.train.seed = self.seed;
            }
            "model" => self.model = v.parse()?,
            "patch_size" => self.patch_size = parse(key, v)?,
            "rate" => self.rate = parse(key, v)?,
            "train_patches" => self.train_patches = parse(key, v)?,
            "infer_patches" => self.infer_patches = parse(key, v)?,
            "profile_intervals" => self.profile_intervals = parse(key, v)?,
            "jsd_resolution" => self.jsd_resolution = parse(key, v)?,
            "toy_shape" => self.toy_shape = v.parse()?,
            "toy_count" => self.toy_count = parse(key, v)?,
            "toy_points" => self.toy_points = parse(key, v)?,
            "stage1_lr" => self.train.stage1_lr = parse(key, v)?,
            "stage2_lr" => self.train.stage2_lr = parse(key, v)?,
            "stage1_epochs" => self.train.stage1_epochs = parse(key, v)?,
            "stage2_epochs" => self.train.stage2_epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "sigma" => self.train.sigma = parse(key, v)?,
            "epsilon_final" => self.train.epsilon_final = parse(key, v)?,
            "align" => self.train.align = parse_bool(key, v)?,
            "beta" => self.scheduler.beta = parse(key, v)?,
            "psi" => self.scheduler.psi = parse(key, v)?,
            "steps" => self.sampler.steps = parse(key, v)?,
            "alpha_cur" => self.sampler.alpha_cur = parse(key, v)?,
            "alpha" => self.sampler.alpha = parse(key, v)?,
            "curvature_k" => self.sampler.curvature_k = parse(key, v)?,
            "manifold_k" => self.sampler.manifold_k = parse(key, v)?,
            "use_ats" => self.sampler.use_ats = parse_bool(key, v)?,
            "postprocess" => self.sampler.postprocess = parse_bool(key, v)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            _ => return Err(Error::invalid(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', found '{line}'")))?;
            self.set(key.trim(), value.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::default();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        c.apply_text(&text, path)?;
        Ok(c)
    }

    /// Sparse patch size `Q / rate`.
    pub fn sparse_patch_size(&self) -> usize {
        self.patch_size / self.rate.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate < 2 {
            return Err(Error::invalid(format!("rate must be at least 2, got {}", self.rate)));
        }
        if self.patch_size == 0 || self.patch_size % self.rate != 0 || self.sparse_patch_size() < 2 {
            return Err(Error::invalid(format!(
                "patch_size {} must be a positive multiple of rate {} with at least two sparse points",
                self.patch_size, self.rate
            )));
        }
        if self.train_patches == 0 {
            return Err(Error::invalid("train_patches must be at least 1"));
        }
        if self.profile_intervals == 0 {
            return Err(Error::invalid("profile_intervals must be at least 1"));
        }
        if self.jsd_resolution == 0 {
            return Err(Error::invalid("jsd_resolution must be at least 1"));
        }
        if self.toy_count == 0 {
            return Err(Error::invalid("toy_count must be at least 1"));
        }
        self.train.validate()?;
        self.scheduler.validate()?;
        self.sampler.validate()
    }
}
