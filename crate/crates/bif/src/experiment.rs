//! Train, forget, retrain, certify and report.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use bif_core::bounds::{mcmc_bound, pac_bayes_bound, vi_bound, BoundReport};
use bif_core::certificate::{fisher_information, kl_meanfield, mcmc_certificate, vi_certificate, with_caveat, Certificate};
use bif_core::clock::{Clock, SystemClock};
use bif_core::forget::{forget_mcmc_observed, forget_vi_observed, AuditRecord, ForgetRequest};
use bif_core::linalg::{norm2, DenseMatrix};
use bif_core::matching::{matched_center_distance, optimal_matching};
use bif_core::models::{BayesModel, BayesianClassifier, ClassifierArch, ConjugateGaussianMean, Gmm};
use bif_core::sgmcmc::{run_chain, SampleBuffer};
use bif_core::vi::{vi_train, MeanFieldGaussianParams};
use bif_core::Dataset;

use crate::config::{ExperimentConfig, InferenceKind, ModelKind};
use crate::data;
use crate::io;
use crate::report::{
    Distances, Failure, ForgetSummary, MetricsRow, RunReport, SplitErrors, StateErrors,
};

/// A trained posterior: variational parameters or retained chain draws.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Vi(MeanFieldGaussianParams),
    Mcmc(SampleBuffer),
}

impl Trained {
    /// μ for VI, the buffer mean for MCMC.
    pub fn point(&self) -> Vec<f64> {
        match self {
            Trained::Vi(p) => p.mu().to_vec(),
            Trained::Mcmc(b) => b.mean(),
        }
    }

    /// Parameter vectors at which split errors are averaged.
    pub fn eval_points(&self, m: usize) -> Vec<Vec<f64>> {
        match self {
            Trained::Vi(p) => vec![p.mu().to_vec()],
            Trained::Mcmc(b) => b.evenly_spaced(m).into_iter().map(|i| b.sample(i)).collect(),
        }
    }

    /// The vector forgetting edits: flat λ for VI, the buffer mean for MCMC.
    pub fn state_vector(&self) -> Vec<f64> {
        match self {
            Trained::Vi(p) => p.flat(),
            Trained::Mcmc(b) => b.mean(),
        }
    }
}

pub fn build_model(cfg: &ExperimentConfig) -> Box<dyn BayesModel> {
    match cfg.model {
        ModelKind::Gmm => Box::new(Gmm::new(cfg.k, cfg.dim, cfg.prior_std)),
        ModelKind::Conjugate => Box::new(ConjugateGaussianMean::new(cfg.dim, cfg.prior_std)),
        ModelKind::Classifier => {
            let arch = if cfg.hidden == 0 {
                ClassifierArch::logistic(cfg.dim, cfg.k)
            } else {
                ClassifierArch::one_hidden(cfg.dim, cfg.hidden, cfg.k)
            };
            Box::new(BayesianClassifier::new(arch, cfg.prior_std))
        }
    }
}

pub fn train(cfg: &ExperimentConfig, model: &dyn BayesModel, data: &Dataset) -> Result<Trained> {
    Ok(match cfg.inference.sampler() {
        None => Trained::Vi(vi_train(model, data, &cfg.vi_config())?),
        Some(kind) => Trained::Mcmc(run_chain(model, data, &cfg.chain_config(), kind)?),
    })
}

/// Trains from scratch, with the configured seed, on `data` with `removed` masked.
pub fn retrain_oracle(cfg: &ExperimentConfig, model: &dyn BayesModel, data: &Dataset, removed: &[usize]) -> Result<Trained> {
    train(cfg, model, &data.remove(removed)?)
}

/// Result of the forgetting phase; `error` is set when the loop stopped early.
pub struct ForgetRun {
    pub state: Trained,
    pub data: Dataset,
    pub audit: Vec<AuditRecord>,
    pub metrics: Vec<MetricsRow>,
    pub error: Option<bif_core::Error>,
}

/// Runs the batched forgetting loop, recording split errors after every batch.
pub fn forget(
    cfg: &ExperimentConfig,
    model: &dyn BayesModel,
    state: Trained,
    data: Dataset,
    removed: &[usize],
    test: &Dataset,
) -> ForgetRun {
    let req = ForgetRequest::new(removed.to_vec(), cfg.forget_batch, cfg.influence_config());
    let clock = SystemClock::default();
    let mut metrics = Vec::new();
    let m = cfg.mc_samples;
    let mut row = |rec: &AuditRecord, t: &Trained, d: &Dataset| {
        let e = state_errors(model, t, d, removed, test, m);
        metrics.push(MetricsRow {
            batch: rec.batch,
            n_active: rec.n_active_after,
            influence_norm: rec.influence_norm,
            c: rec.c,
            spectral_estimate: rec.spectral_estimate,
            spectral_warning: rec.spectral_warning,
            hvp_calls: rec.hvp_calls,
            err_removed: e.removed,
            err_remaining: e.remaining,
            err_test: e.test,
            elapsed_secs: rec.elapsed_secs,
        });
    };
    let (state, data, audit, error) = match state {
        Trained::Vi(p) => {
            let mut obs = |rec: &AuditRecord, s: &MeanFieldGaussianParams, d: &Dataset| row(rec, &Trained::Vi(s.clone()), d);
            match forget_vi_observed(model, p, data, &req, &clock, &mut obs) {
                Ok(o) => (Trained::Vi(o.state), o.data, o.audit, None),
                Err(f) => (Trained::Vi(f.state), f.data, f.audit, Some(f.error)),
            }
        }
        Trained::Mcmc(b) => {
            let mut obs = |rec: &AuditRecord, s: &SampleBuffer, d: &Dataset| row(rec, &Trained::Mcmc(s.clone()), d);
            match forget_mcmc_observed(model, b, data, &req, &clock, &mut obs) {
                Ok(o) => (Trained::Mcmc(o.state), o.data, o.audit, None),
                Err(f) => (Trained::Mcmc(f.state), f.data, f.audit, Some(f.error)),
            }
        }
    };
    ForgetRun { state, data, audit, metrics, error }
}

fn mean_loss(model: &dyn BayesModel, points: &[Vec<f64>], data: &Dataset, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for p in points {
        for &i in idx {
            total += model.bounded_loss(p, data.datum_unaudited(i));
        }
    }
    total / (points.len() * idx.len()) as f64
}

/// Mean bounded loss on the removed items, the items still active, and the test set.
pub fn state_errors(model: &dyn BayesModel, t: &Trained, data: &Dataset, removed: &[usize], test: &Dataset, m: usize) -> SplitErrors {
    let pts = t.eval_points(m);
    let mut is_removed = vec![false; data.len()];
    removed.iter().for_each(|&i| is_removed[i] = true);
    let remaining: Vec<usize> = (0..data.len()).filter(|&i| !is_removed[i]).collect();
    let all_test: Vec<usize> = (0..test.len()).collect();
    SplitErrors {
        removed: mean_loss(model, &pts, data, removed),
        remaining: mean_loss(model, &pts, data, &remaining),
        test: mean_loss(model, &pts, test, &all_test),
    }
}

/// Reorders the mixture components of `other` to best match `reference`.
/// Applies to flat λ = (centers, σ) as well as to plain center vectors.
pub fn align_components(k: usize, dim: usize, reference: &[f64], other: &[f64]) -> Vec<f64> {
    let rows = |v: &[f64]| -> Vec<Vec<f64>> { v[..k * dim].chunks(dim).map(|c| c.to_vec()).collect() };
    let perm = optimal_matching(&rows(reference), &rows(other));
    let mut out = other.to_vec();
    for block in 0..other.len() / (k * dim) {
        let base = block * k * dim;
        for (i, &j) in perm.iter().enumerate() {
            out[base + i * dim..base + (i + 1) * dim].copy_from_slice(&other[base + j * dim..base + (j + 1) * dim]);
        }
    }
    out
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

fn centers(cfg: &ExperimentConfig, v: &[f64]) -> Vec<Vec<f64>> {
    v[..cfg.k * cfg.dim].chunks(cfg.dim).map(|c| c.to_vec()).collect()
}

/// Parameter distances original↔retrain and processed↔retrain.
pub fn distances(cfg: &ExperimentConfig, original: &Trained, processed: &Trained, retrained: &Trained) -> Distances {
    let (o, p, r) = (original.point(), processed.point(), retrained.point());
    let (center_original_to_retrain, center_processed_to_retrain) = if cfg.model == ModelKind::Gmm {
        (
            Some(matched_center_distance(&centers(cfg, &o), &centers(cfg, &r))),
            Some(matched_center_distance(&centers(cfg, &p), &centers(cfg, &r))),
        )
    } else {
        (None, None)
    };
    let r_aligned = if cfg.model == ModelKind::Gmm { align_components(cfg.k, cfg.dim, &p, &r) } else { r.clone() };
    let o_aligned = if cfg.model == ModelKind::Gmm { align_components(cfg.k, cfg.dim, &r, &o) } else { o.clone() };
    Distances {
        original_to_retrain: distance(&o_aligned, &r),
        processed_to_retrain: distance(&p, &r_aligned),
        center_original_to_retrain,
        center_processed_to_retrain,
    }
}

/// The certificate comparing the processed state with the retrained one.
pub fn certify(
    cfg: &ExperimentConfig,
    model: &dyn BayesModel,
    original: &Trained,
    processed: &Trained,
    retrained: &Trained,
    remaining: &Dataset,
) -> Result<Certificate> {
    let align = |reference: &[f64], v: Vec<f64>| if cfg.model == ModelKind::Gmm { align_components(cfg.k, cfg.dim, reference, &v) } else { v };
    match (processed, retrained) {
        (Trained::Vi(p), Trained::Vi(r)) => {
            let pf = p.flat();
            let rf = align(&pf, r.flat());
            Ok(vi_certificate(&pf, &rf, cfg.sigma_min, cfg.sigma_max)?)
        }
        (Trained::Mcmc(p), Trained::Mcmc(r)) => {
            let t1 = original.point();
            let t1p = p.mean();
            let t2 = align(&t1p, r.mean());
            let j1 = precision_per_datum(model, &t1, remaining, cfg.n)?;
            let j2 = precision_per_datum(model, &t2, remaining, cfg.n)?;
            let c = mcmc_certificate(&t1p, &t2, &j1, &j2, cfg.n)?;
            Ok(with_caveat(c, cfg.model == ModelKind::Gmm))
        }
        _ => Err(anyhow!("processed and retrained states have different kinds")),
    }
}

/// `J(θ) + I / (n σ₀²)`: the Fisher information plus the prior's share of the posterior
/// precision. Keeps the matrix positive definite for models whose Fisher has null
/// directions, such as a softmax classifier.
fn precision_per_datum(model: &dyn BayesModel, theta: &[f64], data: &Dataset, n: usize) -> Result<DenseMatrix> {
    let mut j = fisher_information(model, theta, data)?;
    let s0 = model.prior_std();
    for i in 0..theta.len() {
        j.add_at(i, i, 1.0 / (n as f64 * s0 * s0));
    }
    Ok(j)
}

/// Generalization bounds of the processed state on the remaining items.
pub fn bound_reports(
    cfg: &ExperimentConfig,
    model: &dyn BayesModel,
    original: &Trained,
    processed: &Trained,
    remaining: &Dataset,
    risk: f64,
) -> Result<Vec<BoundReport>> {
    let n = remaining.n_active();
    let delta = cfg.bound_delta;
    match (original, processed) {
        (Trained::Vi(o), Trained::Vi(p)) => {
            let lam = o.flat();
            let shift: Vec<f64> = lam.iter().zip(p.flat()).map(|(a, b)| a - b).collect();
            let mut prior = vec![0.0; lam.len() / 2];
            prior.extend(std::iter::repeat_n(cfg.prior_std, lam.len() / 2));
            let kl = kl_meanfield(&p.flat(), &prior)?;
            Ok(vec![vi_bound(risk, &lam, &shift, n, delta)?, pac_bayes_bound(risk, kl, n, delta)?])
        }
        (Trained::Mcmc(o), Trained::Mcmc(p)) => {
            let j = precision_per_datum(model, &p.mean(), remaining, cfg.n)?;
            Ok(vec![mcmc_bound(risk, &o.mean(), p.drift(), &j, n, delta)?])
        }
        _ => Err(anyhow!("original and processed states have different kinds")),
    }
}

/// Everything a run produces.
pub struct RunOutput {
    pub report: RunReport,
    pub metrics: Vec<MetricsRow>,
    pub original: Option<Trained>,
    pub processed: Option<Trained>,
    pub retrained: Option<Trained>,
}

fn secs<T>(clock: &SystemClock, f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = clock.now_secs();
    let out = f();
    (out, clock.now_secs() - t0)
}

/// Train → forget → retrain → certify → bound. A failing phase ends the run and is
/// recorded in `report.failure`; fields of later phases stay empty.
pub fn run_experiment(cfg: &ExperimentConfig) -> RunOutput {
    let model = build_model(cfg);
    let mut out = RunOutput { report: RunReport::new(cfg.clone(), model.id()), metrics: Vec::new(), original: None, processed: None, retrained: None };
    if let Err((phase, e)) = run_phases(cfg, model.as_ref(), &mut out) {
        out.report.failure = Some(Failure { phase: phase.into(), message: format!("{e:#}") });
    }
    out
}

fn run_phases(cfg: &ExperimentConfig, model: &dyn BayesModel, out: &mut RunOutput) -> std::result::Result<(), (&'static str, anyhow::Error)> {
    fn at<T, E: Into<anyhow::Error>>(phase: &'static str, r: std::result::Result<T, E>) -> std::result::Result<T, (&'static str, anyhow::Error)> {
        r.map_err(|e| (phase, e.into()))
    }
    let clock = SystemClock::default();
    let (train_set, test) = at("data", data::generate(cfg))?;
    let removed = at("data", data::removal_set(cfg, &train_set))?;
    let report = &mut out.report;
    report.n_train = train_set.len();
    report.n_removed = removed.len();
    report.n_remaining = train_set.len().saturating_sub(removed.len());

    let (trained, train_secs) = secs(&clock, || train(cfg, model, &train_set));
    let original = at("train", trained)?;
    report.timings.train_secs = train_secs;
    let m = cfg.mc_samples;
    let original_errors = state_errors(model, &original, &train_set, &removed, &test, m);

    let run = forget(cfg, model, original.clone(), train_set.clone(), &removed, &test);
    report.timings.forget_secs = run.audit.iter().map(|a| a.elapsed_secs).sum();
    report.forget = ForgetSummary::from_audit(&run.audit, run.data.masked_reads());
    out.metrics = run.metrics;
    out.original = Some(original.clone());
    out.processed = Some(run.state.clone());
    if let Some(e) = run.error {
        return Err(("forget", e.into()));
    }
    let processed = run.state;
    let remaining = run.data;

    let (retrained, retrain_secs) = secs(&clock, || retrain_oracle(cfg, model, &train_set, &removed));
    let retrained = at("retrain", retrained)?;
    report.timings.retrain_secs = retrain_secs;
    report.timings.finish();
    out.retrained = Some(retrained.clone());

    let processed_errors = state_errors(model, &processed, &train_set, &removed, &test, m);
    let retrained_errors = state_errors(model, &retrained, &train_set, &removed, &test, m);
    report.errors = Some(StateErrors { original: original_errors, processed: processed_errors, retrained: retrained_errors });
    report.distances = Some(distances(cfg, &original, &processed, &retrained));
    report.certificate = Some(at("certify", certify(cfg, model, &original, &processed, &retrained, &remaining))?);
    report.bounds = at("bound", bound_reports(cfg, model, &original, &processed, &remaining, processed_errors.remaining))?;
    Ok(())
}

/// Writes `report.json`, `metrics.csv`, the config and checkpoints into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    io::write_json(&dir.join("report.json"), &out.report)?;
    crate::report::write_metrics(&dir.join("metrics.csv"), &out.metrics)?;
    let id = out.report.model_id.as_str();
    for (phase, t) in [("original", &out.original), ("processed", &out.processed), ("retrained", &out.retrained)] {
        if let Some(t) = t {
            io::save_checkpoint(&dir.join(io::checkpoint_name(t, phase)), t, id)?;
        }
    }
    Ok(())
}

/// True when the configured inference produces a sample buffer.
pub fn is_mcmc(cfg: &ExperimentConfig) -> bool {
    cfg.inference != InferenceKind::Vi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_permutes_every_block() {
        let reference = [0.0, 0.0, 5.0, 5.0];
        let other = [5.1, 5.0, 0.1, 0.0, 0.3, 0.4, 0.1, 0.2];
        assert_eq!(align_components(2, 2, &reference, &other), vec![0.1, 0.0, 5.1, 5.0, 0.1, 0.2, 0.3, 0.4]);
    }
}
