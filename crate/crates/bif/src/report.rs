//! Run reports and per-batch metrics.

use std::path::Path;

use anyhow::{Context, Result};
use bif_core::bounds::BoundReport;
use bif_core::certificate::Certificate;
use bif_core::forget::AuditRecord;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Wall-clock seconds per phase. The only nondeterministic part of a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_secs: f64,
    /// Sum of the per-batch forgetting times, metric bookkeeping excluded.
    pub forget_secs: f64,
    pub retrain_secs: f64,
    /// `train_secs / forget_secs`.
    pub acceleration_rate: f64,
    /// `retrain_secs / forget_secs`.
    pub retrain_speedup: f64,
}

impl Timings {
    pub fn finish(&mut self) {
        let f = self.forget_secs.max(1e-9);
        self.acceleration_rate = self.train_secs / f;
        self.retrain_speedup = self.retrain_secs / f;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitErrors {
    pub removed: f64,
    pub remaining: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateErrors {
    pub original: SplitErrors,
    pub processed: SplitErrors,
    pub retrained: SplitErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub original_to_retrain: f64,
    pub processed_to_retrain: f64,
    /// Largest matched-center distance, mixture models only.
    pub center_original_to_retrain: Option<f64>,
    pub center_processed_to_retrain: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForgetSummary {
    pub batches: usize,
    pub hvp_calls: usize,
    pub spectral_warnings: usize,
    pub max_spectral_estimate: f64,
    pub total_influence_norm: f64,
    /// Reads of masked items; zero when removed data is never touched again.
    pub masked_reads: u64,
}

impl ForgetSummary {
    pub fn from_audit(audit: &[AuditRecord], masked_reads: u64) -> Self {
        Self {
            batches: audit.len(),
            hvp_calls: audit.iter().map(|a| a.hvp_calls).sum(),
            spectral_warnings: audit.iter().filter(|a| a.spectral_warning).count(),
            max_spectral_estimate: audit.iter().map(|a| a.spectral_estimate).fold(0.0, f64::max),
            total_influence_norm: audit.iter().map(|a| a.influence_norm).sum(),
            masked_reads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub phase: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub model_id: String,
    pub n_train: usize,
    pub n_removed: usize,
    pub n_remaining: usize,
    pub timings: Timings,
    pub forget: ForgetSummary,
    pub errors: Option<StateErrors>,
    pub distances: Option<Distances>,
    pub certificate: Option<Certificate>,
    pub bounds: Vec<BoundReport>,
    pub failure: Option<Failure>,
}

impl RunReport {
    pub fn new(config: ExperimentConfig, model_id: &str) -> Self {
        Self {
            config,
            model_id: model_id.into(),
            n_train: 0,
            n_removed: 0,
            n_remaining: 0,
            timings: Timings::default(),
            forget: ForgetSummary::default(),
            errors: None,
            distances: None,
            certificate: None,
            bounds: Vec::new(),
            failure: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    /// The report with timing fields zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        Self { timings: Timings::default(), ..self.clone() }
    }
}

/// One row of `metrics.csv`, written after every forgetting batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub batch: usize,
    pub n_active: usize,
    pub influence_norm: f64,
    pub c: f64,
    pub spectral_estimate: f64,
    pub spectral_warning: bool,
    pub hvp_calls: usize,
    pub err_removed: f64,
    pub err_remaining: f64,
    pub err_test: f64,
    pub elapsed_secs: f64,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    if rows.is_empty() {
        w.write_record([
            "batch", "n_active", "influence_norm", "c", "spectral_estimate", "spectral_warning", "hvp_calls", "err_removed",
            "err_remaining", "err_test", "elapsed_secs",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
