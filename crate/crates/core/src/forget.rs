//! Batched forgetting loops for variational and sample-based posteriors.

use alloc::vec::Vec;

use crate::clock::Clock;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::influence::{
    check_stationary, influence_exact, influence_with_matrix, CurvatureCache, CurvatureMode, InfluenceConfig, NeumannReport,
};
use crate::linalg::norm2;
use crate::models::{BayesModel, EnergyModel};
use crate::rng::{streams, RngStream};
use crate::sgmcmc::SampleBuffer;
use crate::vi::{vi_energy, MeanFieldGaussianParams};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForgetRequest {
    /// Items to remove, processed in this order.
    pub indices: Vec<usize>,
    /// Items per batch; 0 removes the whole request in one batch.
    pub batch_size: usize,
    pub influence: InfluenceConfig,
}

impl ForgetRequest {
    pub fn new(indices: Vec<usize>, batch_size: usize, influence: InfluenceConfig) -> Self {
        Self { indices, batch_size, influence }
    }

    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        let size = if self.batch_size == 0 { self.indices.len().max(1) } else { self.batch_size };
        self.indices.chunks(size)
    }
}

/// One row of the audit log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AuditRecord {
    pub batch: usize,
    pub removed: Vec<usize>,
    pub n_active_after: usize,
    pub influence_norm: f64,
    pub c: f64,
    pub damping: f64,
    pub spectral_estimate: f64,
    pub spectral_warning: bool,
    pub hvp_calls: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ForgetOutcome<S> {
    pub state: S,
    pub data: Dataset,
    pub audit: Vec<AuditRecord>,
}

/// A loop that stopped early. `state` and `data` reflect the completed batches.
#[derive(Debug, Clone)]
pub struct ForgetFailure<S> {
    pub error: Error,
    pub state: S,
    pub data: Dataset,
    pub audit: Vec<AuditRecord>,
}

impl<S> ForgetFailure<S> {
    pub fn batches_done(&self) -> usize {
        self.audit.len()
    }
}

pub type ForgetResult<S> = core::result::Result<ForgetOutcome<S>, ForgetFailure<S>>;

fn run_loop<S, E: EnergyModel + ?Sized, C: Clock + ?Sized>(
    energy_model: &E,
    mut state: S,
    mut data: Dataset,
    req: &ForgetRequest,
    clock: &C,
    points: impl Fn(&S, usize) -> Vec<Vec<f64>>,
    apply: impl Fn(&mut S, &[f64]) -> Result<()>,
    observe: &mut dyn FnMut(&AuditRecord, &S, &Dataset),
) -> ForgetResult<S> {
    let mut audit = Vec::new();
    let cfg = &req.influence;
    let mut cache: Option<CurvatureCache> = None;
    for (b, batch) in req.batches().enumerate() {
        let start = clock.now_secs();
        let step = (|| -> Result<(Vec<f64>, NeumannReport)> {
            let pts = points(&state, b);
            let (delta, report) = match cfg.curvature {
                CurvatureMode::Exact => influence_exact(energy_model, &pts, &data, batch, cfg)?,
                CurvatureMode::Cached { refresh_every } => {
                    let stale = match &cache {
                        None => true,
                        Some(c) => refresh_every > 0 && c.batches_since_build() >= refresh_every,
                    };
                    if stale {
                        cache = Some(CurvatureCache::build(energy_model, pts.clone(), &data)?);
                    }
                    let cc = cache.as_ref().expect("cache was just built");
                    let hm = cc.operator(energy_model, &pts, cfg.damping)?;
                    influence_with_matrix(energy_model, &pts, &data, batch, cfg, &hm)?
                }
            };
            apply(&mut state, &delta)?;
            if let Some(c) = cache.as_mut() {
                c.downdate(energy_model, &data, batch);
            }
            data.remove_in_place(batch)?;
            Ok((delta, report))
        })();
        match step {
            Ok((delta, report)) => {
                let rec = AuditRecord {
                    batch: b,
                    removed: batch.to_vec(),
                    n_active_after: data.n_active(),
                    influence_norm: norm2(&delta),
                    c: report.c,
                    damping: cfg.damping,
                    spectral_estimate: report.spectral_estimate,
                    spectral_warning: report.spectral_warning,
                    hvp_calls: report.hvp_calls,
                    elapsed_secs: clock.now_secs() - start,
                };
                observe(&rec, &state, &data);
                audit.push(rec);
            }
            Err(error) => return Err(ForgetFailure { error, state, data, audit }),
        }
    }
    Ok(ForgetOutcome { state, data, audit })
}

fn precheck(data: &Dataset, req: &ForgetRequest) -> Result<()> {
    req.influence.validate()?;
    let rest = data.remove(&req.indices)?;
    if !req.indices.is_empty() && rest.n_active() == 0 {
        return Err(Error::EmptyActiveSet);
    }
    Ok(())
}

/// Removes `req.indices` from a variational posterior: per batch, `λ ← λ − I` with the
/// group influence at the current λ and active set, then the batch is masked.
pub fn forget_vi<M: BayesModel + ?Sized, C: Clock + ?Sized>(
    model: &M,
    lam: MeanFieldGaussianParams,
    data: Dataset,
    req: &ForgetRequest,
    clock: &C,
) -> ForgetResult<MeanFieldGaussianParams> {
    forget_vi_observed(model, lam, data, req, clock, &mut |_, _, _| {})
}

/// [`forget_vi`] calling `observe` after each completed batch. Time spent in
/// `observe` is not counted in the audit timings.
pub fn forget_vi_observed<M: BayesModel + ?Sized, C: Clock + ?Sized>(
    model: &M,
    lam: MeanFieldGaussianParams,
    data: Dataset,
    req: &ForgetRequest,
    clock: &C,
    observe: &mut dyn FnMut(&AuditRecord, &MeanFieldGaussianParams, &Dataset),
) -> ForgetResult<MeanFieldGaussianParams> {
    let cfg = &req.influence;
    let mut rng = RngStream::with_stream(cfg.seed, streams::MC);
    let e = vi_energy(model, cfg.mc_samples, &mut rng);
    let pre = precheck(&data, req).and_then(|_| {
        if req.indices.is_empty() {
            Ok(())
        } else {
            check_stationary(e.as_ref(), &lam, &data, cfg.stationarity_tol)
        }
    });
    if let Err(error) = pre {
        return Err(ForgetFailure { error, state: lam, data, audit: Vec::new() });
    }
    run_loop(e.as_ref(), lam, data, req, clock, |l, _| alloc::vec![l.flat()], |l, d| l.shift(d), observe)
}

/// Removes `req.indices` from a buffer of posterior draws: per batch, every draw is
/// shifted by the same group influence, averaged over `mc_samples` evenly spaced draws.
/// Batch `b` reads its draws at phase `b` (see [`SampleBuffer::evenly_spaced_at`]), so
/// successive batches average over different draws.
pub fn forget_mcmc<M: BayesModel + ?Sized, C: Clock + ?Sized>(
    model: &M,
    buffer: SampleBuffer,
    data: Dataset,
    req: &ForgetRequest,
    clock: &C,
) -> ForgetResult<SampleBuffer> {
    forget_mcmc_observed(model, buffer, data, req, clock, &mut |_, _, _| {})
}

/// [`forget_mcmc`] with a per-batch observer, as in [`forget_vi_observed`].
pub fn forget_mcmc_observed<M: BayesModel + ?Sized, C: Clock + ?Sized>(
    model: &M,
    buffer: SampleBuffer,
    data: Dataset,
    req: &ForgetRequest,
    clock: &C,
    observe: &mut dyn FnMut(&AuditRecord, &SampleBuffer, &Dataset),
) -> ForgetResult<SampleBuffer> {
    let pre = precheck(&data, req).and_then(|_| {
        if buffer.is_empty() {
            Err(Error::InvalidConfig("empty sample buffer".into()))
        } else if req.influence.mc_samples > buffer.len() {
            Err(Error::InvalidConfig("mc_samples exceeds buffer length".into()))
        } else {
            Ok(())
        }
    });
    if let Err(error) = pre {
        return Err(ForgetFailure { error, state: buffer, data, audit: Vec::new() });
    }
    let m = req.influence.mc_samples;
    run_loop(
        model,
        buffer,
        data,
        req,
        clock,
        |buf: &SampleBuffer, b| buf.evenly_spaced_at(m, b).into_iter().map(|i| buf.sample(i)).collect(),
        |b, d| b.shift(d),
        observe,
    )
}
