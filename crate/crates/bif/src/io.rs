//! JSON checkpoints for trained states and small file helpers.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bif_core::sgmcmc::{SampleBuffer, SamplerKind};
use bif_core::vi::{MeanFieldGaussianParams, SigmaBounds};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::experiment::Trained;

/// On-disk form of a [`Trained`] state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    MeanField {
        model_id: String,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        sigma_min: f64,
        sigma_max: f64,
    },
    /// Draws as sampled plus the translation applied by forgetting.
    Samples {
        model_id: String,
        sampler: SamplerKind,
        seed: u64,
        retain_last: usize,
        dim: usize,
        samples: Vec<Vec<f64>>,
        drift: Vec<f64>,
    },
}

impl Checkpoint {
    pub fn from_trained(t: &Trained, model_id: &str) -> Self {
        match t {
            Trained::Vi(p) => Checkpoint::MeanField {
                model_id: model_id.into(),
                mu: p.mu().to_vec(),
                sigma: p.sigma().to_vec(),
                sigma_min: p.bounds().min,
                sigma_max: p.bounds().max,
            },
            Trained::Mcmc(b) => Checkpoint::Samples {
                model_id: b.model_id.clone(),
                sampler: b.kind,
                seed: b.seed,
                retain_last: b.retain_last,
                dim: b.dim(),
                samples: b.original_samples(),
                drift: b.drift().to_vec(),
            },
        }
    }

    pub fn model_id(&self) -> &str {
        match self {
            Checkpoint::MeanField { model_id, .. } | Checkpoint::Samples { model_id, .. } => model_id,
        }
    }

    pub fn into_trained(self) -> Result<Trained> {
        Ok(match self {
            Checkpoint::MeanField { mu, sigma, sigma_min, sigma_max, .. } => {
                Trained::Vi(MeanFieldGaussianParams::new(mu, sigma, SigmaBounds { min: sigma_min, max: sigma_max })?)
            }
            Checkpoint::Samples { model_id, sampler, seed, retain_last, dim, samples, drift } => {
                Trained::Mcmc(SampleBuffer::new(dim, samples, sampler, &model_id, seed, retain_last)?.with_drift(drift)?)
            }
        })
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn save_checkpoint(path: &Path, t: &Trained, model_id: &str) -> Result<()> {
    write_json(path, &Checkpoint::from_trained(t, model_id))
}

pub fn load_checkpoint(path: &Path, model_id: &str) -> Result<Trained> {
    let c: Checkpoint = read_json(path)?;
    if c.model_id() != model_id {
        bail!("{} holds a `{}` checkpoint, expected `{model_id}`", path.display(), c.model_id());
    }
    c.into_trained()
}

/// Checkpoint file name for a phase: `params_<phase>.json` or `samples_<phase>.json`.
pub fn checkpoint_name(t: &Trained, phase: &str) -> String {
    match t {
        Trained::Vi(_) => format!("params_{phase}.json"),
        Trained::Mcmc(_) => format!("samples_{phase}.json"),
    }
}
