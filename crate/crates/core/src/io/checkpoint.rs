use std::collections::BTreeMap;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::model::{AnyModel, MlpConfig, MlpField, ModelKind, Rin, RinConfig, VelocityModel};
use crate::nn::{AdamState, ParamStore, Tensor};
use crate::scheduler::{LossProfile, ProfileEntry};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelArch {
    Mlp(MlpConfig),
    Rin(RinConfig),
}

/// On-disk model: architecture, weights, optional optimizer state and loss
/// profile. Numbers are written in shortest round-trip decimal form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub arch: ModelArch,
    pub params: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<ProfileEntry>>,
}

impl Checkpoint {
    pub fn from_model(model: &AnyModel, profile: Option<&LossProfile>) -> Self {
        let arch = match model {
            AnyModel::Mlp(m) => ModelArch::Mlp(m.config()),
            AnyModel::Rin(m) => ModelArch::Rin(m.config()),
        };
        let (params, optimizer) = model.params().clone().into_parts();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: model.kind(),
            arch,
            params,
            optimizer,
            profile: profile.map(LossProfile::entries),
        }
    }

    pub fn to_model(&self) -> Result<AnyModel> {
        let store = ParamStore::from_parts(self.params.clone(), self.optimizer.clone())?;
        match (self.kind, self.arch) {
            (ModelKind::Mlp, ModelArch::Mlp(c)) => Ok(AnyModel::Mlp(MlpField::from_params(c, store)?)),
            (ModelKind::Rin, ModelArch::Rin(c)) => Ok(AnyModel::Rin(Rin::from_params(c, store)?)),
            (kind, _) => Err(Error::invalid(format!("checkpoint architecture does not match kind '{kind}'"))),
        }
    }

    pub fn loss_profile(&self) -> Result<Option<LossProfile>> {
        self.profile.as_deref().map(LossProfile::from_entries).transpose()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "{}: checkpoint format version {} (this build reads {CHECKPOINT_FORMAT_VERSION})",
                path.display(),
                c.format_version
            )));
        }
        Ok(c)
    }
}

/// Metrics of a candidate cloud against a reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub reference_points: usize,
    pub candidate_points: usize,
    pub chamfer: f64,
    pub hausdorff: f64,
    pub jsd: f64,
    pub jsd_resolution: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p2f: Option<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// JSON array of `{"t": .., "loss": ..}`.
pub fn write_profile(path: &Path, profile: &LossProfile) -> Result<()> {
    write_json(path, &profile.entries())
}

pub fn read_profile(path: &Path) -> Result<LossProfile> {
    let entries: Vec<ProfileEntry> = read_json(path)?;
    LossProfile::from_entries(&entries)
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    read_json(path)
}
