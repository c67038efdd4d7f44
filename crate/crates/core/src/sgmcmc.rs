//! SGLD and SGHMC samplers and the retained-sample buffer.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, DenseMatrix};
use crate::math;
use crate::models::{BayesModel, EnergyModel};
use crate::rng::{streams, RngStream};
use crate::schedule::{coupled_alpha, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SamplerKind {
    Sgld,
    Sghmc,
}

impl SamplerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerKind::Sgld => "sgld",
            SamplerKind::Sghmc => "sghmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainConfig {
    pub iterations: usize,
    /// Mini-batch size; 0 means the full active set.
    pub batch_size: usize,
    /// ε_t for SGLD, η_t for SGHMC.
    pub step: Schedule,
    /// Initial SGHMC friction α₁; ignored by SGLD.
    pub alpha0: f64,
    pub retain_last: usize,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self, kind: SamplerKind) -> Result<()> {
        self.step.validate()?;
        if self.iterations == 0 || self.retain_last == 0 || self.retain_last > self.iterations {
            return Err(Error::InvalidConfig("need 0 < retain_last <= iterations".into()));
        }
        if kind == SamplerKind::Sghmc && !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(Error::InvalidConfig("alpha0 must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Uniform mini-batches without replacement, reshuffled every epoch.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: RngStream,
}

impl BatchSampler {
    /// `batch_size == 0` or `≥ n′` yields the full active set in storage order every time.
    pub fn new(data: &Dataset, batch_size: usize, mut rng: RngStream) -> Self {
        let mut order = data.active_indices();
        let size = if batch_size == 0 { order.len() } else { batch_size.min(order.len()) };
        if size < order.len() {
            rng.shuffle(&mut order);
        }
        Self { order, pos: 0, size, rng }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.size < self.order.len() && self.pos + self.size > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos += self.size;
        if self.size == self.order.len() {
            self.pos = 0;
        }
        &self.order[start..start + self.size]
    }
}

/// `∇Ũ(θ) = (n′ / |B|) Σ_{z ∈ B} ∇h(θ, z) + ∇f(θ)`.
pub fn stochastic_grad_u<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    batch: &[usize],
) -> Result<Vec<f64>> {
    if data.n_active() == 0 || batch.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    check_dim(model.dim_param(), theta.len())?;
    let scale = data.n_active() as f64 / batch.len() as f64;
    let mut g = vec![0.0; theta.len()];
    for &i in batch {
        model.add_grad_h(theta, data.datum(i), scale, &mut g);
    }
    model.add_grad_f(theta, 1.0, &mut g);
    Ok(g)
}

/// `θ − ε g + √(2ε) ξ`.
pub fn sgld_step(theta: &[f64], g: &[f64], eps: f64, rng: &mut RngStream) -> Vec<f64> {
    let s = math::sqrt(2.0 * eps);
    theta.iter().zip(g).map(|(t, gi)| t - eps * gi + s * rng.normal()).collect()
}

/// `θ′ = θ + v`, `v′ = (1 − α) v − η g + √(2αη) ξ`.
pub fn sghmc_step(theta: &[f64], v: &[f64], g: &[f64], eta: f64, alpha: f64, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let s = math::sqrt(2.0 * alpha * eta);
    let th = theta.iter().zip(v).map(|(t, vi)| t + vi).collect();
    let nv = v.iter().zip(g).map(|(vi, gi)| (1.0 - alpha) * vi - eta * gi + s * rng.normal()).collect();
    (th, nv)
}

/// Retained draws of one chain.
///
/// Forgetting translates every draw by the same vector. The buffer keeps the
/// original draws and the accumulated translation separately, so the geometry of
/// the sample cloud (pairwise differences, covariance) is computed from untouched
/// values and never picks up rounding from the shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    dim: usize,
    base: Vec<f64>,
    drift: Vec<f64>,
    pub kind: SamplerKind,
    pub model_id: String,
    pub seed: u64,
    pub retain_last: usize,
}

impl SampleBuffer {
    pub fn new(dim: usize, samples: Vec<Vec<f64>>, kind: SamplerKind, model_id: &str, seed: u64, retain_last: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("empty sample buffer".into()));
        }
        let mut base = Vec::with_capacity(samples.len() * dim);
        for s in &samples {
            check_dim(dim, s.len())?;
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
            base.extend_from_slice(s);
        }
        Ok(Self { dim, base, drift: vec![0.0; dim], kind, model_id: model_id.into(), seed, retain_last })
    }

    pub fn len(&self) -> usize {
        self.base.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total translation applied so far; draw `i` is `original_i − drift`.
    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    fn original(&self, i: usize) -> &[f64] {
        &self.base[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sample(&self, i: usize) -> Vec<f64> {
        self.original(i).iter().zip(&self.drift).map(|(a, b)| a - b).collect()
    }

    pub fn samples(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }

    /// Draws as produced by the chain, before any shift.
    pub fn original_samples(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.original(i).to_vec()).collect()
    }

    /// Replaces the accumulated translation, e.g. when restoring a checkpoint.
    pub fn with_drift(mut self, drift: Vec<f64>) -> Result<Self> {
        check_dim(self.dim, drift.len())?;
        if drift.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.drift = drift;
        Ok(self)
    }

    /// `θ_a − θ_b`.
    pub fn difference(&self, a: usize, b: usize) -> Vec<f64> {
        self.original(a).iter().zip(self.original(b)).map(|(x, y)| x - y).collect()
    }

    /// Subtracts `delta` from every draw.
    pub fn shift(&mut self, delta: &[f64]) -> Result<()> {
        check_dim(self.dim, delta.len())?;
        let drift: Vec<f64> = self.drift.iter().zip(delta).map(|(a, b)| a + b).collect();
        if drift.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.drift = drift;
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = self.original_mean();
        m.iter_mut().zip(&self.drift).for_each(|(a, b)| *a -= b);
        m
    }

    fn original_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            m.iter_mut().zip(self.original(i)).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= self.len() as f64);
        m
    }

    /// Sample covariance (divisor `len − 1`, or 1 for a single draw).
    pub fn covariance(&self) -> DenseMatrix {
        let m = self.original_mean();
        let p = self.dim;
        let mut c = vec![0.0; p * p];
        for i in 0..self.len() {
            let x = self.original(i);
            for a in 0..p {
                for b in 0..p {
                    c[a * p + b] += (x[a] - m[a]) * (x[b] - m[b]);
                }
            }
        }
        let denom = (self.len().max(2) - 1) as f64;
        c.iter_mut().for_each(|v| *v /= denom);
        DenseMatrix::from_row_major(p, p, c).expect("covariance entries are finite")
    }

    /// `m` evenly spaced draw indices over the buffer.
    pub fn evenly_spaced(&self, m: usize) -> Vec<usize> {
        let len = self.len();
        let m = m.clamp(1, len);
        self.evenly_spaced_at(m, 0)
    }

    /// [`Self::evenly_spaced`] with every index moved `phase` places along its bin,
    /// wrapping within the bin. Phase 0 gives the bin midpoints.
    pub fn evenly_spaced_at(&self, m: usize, phase: usize) -> Vec<usize> {
        let len = self.len();
        let m = m.clamp(1, len);
        let stride = (len / m).max(1);
        let offset = (len / (2 * m) + phase) % stride;
        (0..m).map(|i| ((i * len) / m + offset).min(len - 1)).collect()
    }
}

/// Runs a chain on the active items of `data` and keeps the last `retain_last` draws.
pub fn run_chain<M: BayesModel + ?Sized>(model: &M, data: &Dataset, cfg: &ChainConfig, kind: SamplerKind) -> Result<SampleBuffer> {
    cfg.validate(kind)?;
    if data.n_active() == 0 {
        return Err(Error::EmptyActiveSet);
    }
    let root = RngStream::with_stream(cfg.seed, 0);
    let mut init_rng = root.substream(streams::INIT);
    let mut noise = root.substream(streams::NOISE);
    let mut batches = BatchSampler::new(data, cfg.batch_size, root.substream(streams::BATCH));
    let n = data.n_active();
    let mut theta = model.initial_params(data, &mut init_rng);
    check_dim(model.dim_param(), theta.len())?;

    let eta1 = cfg.step.at(1, n);
    let mut v: Vec<f64> = match kind {
        SamplerKind::Sgld => Vec::new(),
        SamplerKind::Sghmc => (0..theta.len()).map(|_| math::sqrt(eta1) * noise.normal()).collect(),
    };
    let start = cfg.iterations - cfg.retain_last;
    let mut kept = Vec::with_capacity(cfg.retain_last);
    for t in 1..=cfg.iterations {
        let g = stochastic_grad_u(model, &theta, data, batches.next_batch())?;
        let step = cfg.step.at(t, n);
        match kind {
            SamplerKind::Sgld => theta = sgld_step(&theta, &g, step, &mut noise),
            SamplerKind::Sghmc => {
                let alpha = coupled_alpha(cfg.alpha0, step, eta1);
                let (th, nv) = sghmc_step(&theta, &v, &g, step, alpha, &mut noise);
                theta = th;
                v = nv;
            }
        }
        if theta.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::ChainDiverged(t));
        }
        if t > start {
            kept.push(theta.clone());
        }
    }
    SampleBuffer::new(theta.len(), kept, kind, model.id(), cfg.seed, cfg.retain_last)
}

/// Effective sample size of a scalar series by Geyer's initial positive sequence.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| (0..n - lag).map(|i| (xs[i] - mean) * (xs[i + lag] - mean)).sum::<f64>() / (n as f64 * c0);
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau.max(1.0)
}
