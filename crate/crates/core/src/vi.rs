//! Mean-field Gaussian variational inference.
//!
//! The variational energy is `F_VI(λ, S) = Σ_z E_q h(θ, z) + KL(q ‖ prior)`, i.e. the
//! negative ELBO. Models with a closed form ([`BayesModel::analytic_vi`]) use it;
//! everything else goes through [`McVi`], a reparameterised estimate with a fixed
//! set of standard-normal draws.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, Datum};
use crate::energy::{energy, grad_energy};
use crate::error::{Error, Result};
use crate::linalg::check_dim;
use crate::math;
use crate::models::{prior_kl, BayesModel, EnergyModel};
use crate::rng::{streams, RngStream};
use crate::schedule::Schedule;
use crate::sgmcmc::BatchSampler;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SigmaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for SigmaBounds {
    fn default() -> Self {
        Self { min: 1e-3, max: 1e3 }
    }
}

impl SigmaBounds {
    pub fn validate(&self) -> Result<()> {
        if self.min > 0.0 && self.min <= self.max && self.max.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("invalid sigma bounds {self:?}")))
        }
    }
}

/// λ = (μ, σ) of `q = N(μ, diag σ²)`, with every σ kept inside [`SigmaBounds`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldGaussianParams {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    bounds: SigmaBounds,
}

impl MeanFieldGaussianParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, bounds: SigmaBounds) -> Result<Self> {
        bounds.validate()?;
        check_dim(mu.len(), sigma.len())?;
        if mu.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if mu.iter().chain(&sigma).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        for (index, &value) in sigma.iter().enumerate() {
            if value < bounds.min || value > bounds.max {
                return Err(Error::SigmaOutOfBounds { index, value, min: bounds.min, max: bounds.max });
            }
        }
        Ok(Self { mu, sigma, bounds })
    }

    /// From the flat layout (μ₁..μ_d, σ₁..σ_d).
    pub fn from_flat(flat: &[f64], bounds: SigmaBounds) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch { expected: flat.len() + 1, got: flat.len() });
        }
        let (mu, sigma) = flat.split_at(flat.len() / 2);
        Self::new(mu.to_vec(), sigma.to_vec(), bounds)
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend_from_slice(&self.sigma);
        v
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn bounds(&self) -> SigmaBounds {
        self.bounds
    }

    /// True when every σ lies strictly inside the bounds.
    pub fn is_interior(&self) -> bool {
        self.sigma.iter().all(|&s| s > self.bounds.min && s < self.bounds.max)
    }

    /// `λ ← λ − delta` followed by σ projection.
    pub fn shift(&mut self, delta: &[f64]) -> Result<()> {
        check_dim(2 * self.dim(), delta.len())?;
        let d = self.dim();
        let mu: Vec<f64> = self.mu.iter().zip(&delta[..d]).map(|(a, b)| a - b).collect();
        let sigma: Vec<f64> = self.sigma.iter().zip(&delta[d..]).map(|(a, b)| a - b).collect();
        if mu.iter().chain(&sigma).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.mu = mu;
        self.sigma = sigma;
        self.project();
        Ok(())
    }

    fn project(&mut self) {
        let SigmaBounds { min, max } = self.bounds;
        self.sigma.iter_mut().for_each(|s| *s = s.clamp(min, max));
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViConfig {
    pub iterations: usize,
    /// Mini-batch size; 0 means the full active set.
    pub batch_size: usize,
    pub lr: Schedule,
    pub mc_samples: usize,
    pub sigma_bounds: SigmaBounds,
    /// Initial σ for every coordinate.
    pub sigma_init: f64,
    pub seed: u64,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 0,
            lr: Schedule::Constant { a: 2.0 },
            mc_samples: 5,
            sigma_bounds: SigmaBounds::default(),
            sigma_init: 0.1,
            seed: 0,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
        }
        self.lr.validate()?;
        self.sigma_bounds.validate()
    }
}

/// Reparameterised variational energy of a [`BayesModel`] with frozen draws ε_s:
/// `h(λ, z) = (1/m) Σ_s h(μ + σ ⊙ ε_s, z)`, `f(λ) = KL(q ‖ prior)` in closed form.
pub struct McVi<'a, M: ?Sized> {
    model: &'a M,
    eps: Vec<f64>,
}

impl<'a, M: BayesModel + ?Sized> McVi<'a, M> {
    pub fn new(model: &'a M, mc_samples: usize, rng: &mut RngStream) -> Self {
        let mut eps = vec![0.0; mc_samples.max(1) * model.dim_param()];
        rng.fill_normal(&mut eps);
        Self { model, eps }
    }

    fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.eps.chunks(self.model.dim_param())
    }

    fn m(&self) -> f64 {
        (self.eps.len() / self.model.dim_param()) as f64
    }

    fn theta(lam: &[f64], e: &[f64]) -> Vec<f64> {
        let d = e.len();
        (0..d).map(|k| lam[k] + lam[d + k] * e[k]).collect()
    }
}

impl<M: BayesModel + ?Sized> EnergyModel for McVi<'_, M> {
    fn dim_param(&self) -> usize {
        2 * self.model.dim_param()
    }

    fn dim_datum(&self) -> usize {
        self.model.dim_datum()
    }

    fn h(&self, lam: &[f64], z: Datum<'_>) -> f64 {
        self.draws().map(|e| self.model.h(&Self::theta(lam, e), z)).sum::<f64>() / self.m()
    }

    fn f(&self, lam: &[f64]) -> f64 {
        let (mu, sigma) = lam.split_at(self.model.dim_param());
        prior_kl::value(mu, sigma, self.model.prior_std())
    }

    fn add_grad_h(&self, lam: &[f64], z: Datum<'_>, scale: f64, out: &mut [f64]) {
        let d = self.model.dim_param();
        let w = scale / self.m();
        let mut g = vec![0.0; d];
        for e in self.draws() {
            g.iter_mut().for_each(|x| *x = 0.0);
            self.model.add_grad_h(&Self::theta(lam, e), z, 1.0, &mut g);
            for k in 0..d {
                out[k] += w * g[k];
                out[d + k] += w * g[k] * e[k];
            }
        }
    }

    fn add_grad_f(&self, lam: &[f64], scale: f64, out: &mut [f64]) {
        let (mu, sigma) = lam.split_at(self.model.dim_param());
        prior_kl::add_grad(mu, sigma, self.model.prior_std(), scale, out);
    }

    fn add_hvp_h(&self, lam: &[f64], z: Datum<'_>, v: &[f64], scale: f64, out: &mut [f64]) {
        // The direction in θ of (v_μ, v_σ) is v_μ + v_σ ⊙ ε.
        let d = self.model.dim_param();
        let w = scale / self.m();
        let mut dir = vec![0.0; d];
        let mut hv = vec![0.0; d];
        for e in self.draws() {
            for k in 0..d {
                dir[k] = v[k] + v[d + k] * e[k];
            }
            hv.iter_mut().for_each(|x| *x = 0.0);
            self.model.add_hvp_h(&Self::theta(lam, e), z, &dir, 1.0, &mut hv);
            for k in 0..d {
                out[k] += w * hv[k];
                out[d + k] += w * hv[k] * e[k];
            }
        }
    }

    fn add_hvp_f(&self, lam: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let sigma = &lam[self.model.dim_param()..];
        prior_kl::add_hvp(sigma, self.model.prior_std(), v, scale, out);
    }
}

/// The variational energy used for training and influence: closed form when the
/// model has one, otherwise [`McVi`] with `mc_samples` frozen draws from `rng`.
pub fn vi_energy<'a, M: BayesModel + ?Sized>(
    model: &'a M,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Box<dyn EnergyModel + 'a> {
    match model.analytic_vi() {
        Some(e) => e,
        None => Box::new(McVi::new(model, mc_samples, rng)),
    }
}

fn check_params<M: BayesModel + ?Sized>(model: &M, lam: &MeanFieldGaussianParams) -> Result<()> {
    check_dim(model.dim_param(), lam.dim())?;
    let b = lam.bounds();
    for (index, &value) in lam.sigma().iter().enumerate() {
        if value < b.min || value > b.max {
            return Err(Error::SigmaOutOfBounds { index, value, min: b.min, max: b.max });
        }
    }
    Ok(())
}

/// ELBO of `q_λ` on the active items of `s`: exact for models with a closed form,
/// otherwise the reparameterised estimate of `E_q[log p(θ, S) − log q(θ)]`.
pub fn elbo<M: BayesModel + ?Sized>(
    model: &M,
    lam: &MeanFieldGaussianParams,
    s: &Dataset,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    check_params(model, lam)?;
    match model.analytic_vi() {
        Some(e) => Ok(-energy(e.as_ref(), &lam.flat(), s)?),
        None => elbo_mc(model, lam, s, mc_samples, rng),
    }
}

/// Monte-Carlo ELBO regardless of whether a closed form exists.
pub fn elbo_mc<M: BayesModel + ?Sized>(
    model: &M,
    lam: &MeanFieldGaussianParams,
    s: &Dataset,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    check_params(model, lam)?;
    let d = lam.dim();
    let mut e = vec![0.0; d];
    let mut total = 0.0;
    for _ in 0..mc_samples.max(1) {
        rng.fill_normal(&mut e);
        let theta: Vec<f64> = (0..d).map(|k| lam.mu[k] + lam.sigma[k] * e[k]).collect();
        let log_q: f64 = (0..d)
            .map(|k| -math::ln(lam.sigma[k]) - 0.5 * e[k] * e[k] - 0.5 * math::LN_2PI)
            .sum();
        let mut lp = model.log_prior(&theta) - log_q;
        for (_, z) in s.iter_active() {
            lp -= model.h(&theta, z);
        }
        total += lp;
    }
    Ok(total / mc_samples.max(1) as f64)
}

/// Gradient of the ELBO in (μ, σ). Exact for closed-form models, otherwise the
/// reparameterisation (Bayes-by-Backprop) estimate.
pub fn elbo_grad<M: BayesModel + ?Sized>(
    model: &M,
    lam: &MeanFieldGaussianParams,
    s: &Dataset,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_params(model, lam)?;
    match model.analytic_vi() {
        Some(e) => Ok(grad_energy(e.as_ref(), &lam.flat(), s)?.into_iter().map(|g| -g).collect()),
        None => elbo_grad_mc(model, lam, s, mc_samples, rng),
    }
}

pub fn elbo_grad_mc<M: BayesModel + ?Sized>(
    model: &M,
    lam: &MeanFieldGaussianParams,
    s: &Dataset,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_params(model, lam)?;
    let d = lam.dim();
    let m = mc_samples.max(1);
    let inv_s2 = 1.0 / (model.prior_std() * model.prior_std());
    let mut e = vec![0.0; d];
    let mut out = vec![0.0; 2 * d];
    let mut g = vec![0.0; d];
    for _ in 0..m {
        rng.fill_normal(&mut e);
        let theta: Vec<f64> = (0..d).map(|k| lam.mu[k] + lam.sigma[k] * e[k]).collect();
        // ∇_θ log p(θ, S)
        g.iter_mut().zip(&theta).for_each(|(gk, t)| *gk = -t * inv_s2);
        for (_, z) in s.iter_active() {
            model.add_grad_h(&theta, z, -1.0, &mut g);
        }
        for k in 0..d {
            out[k] += g[k] / m as f64;
            out[d + k] += g[k] * e[k] / m as f64;
        }
    }
    for k in 0..d {
        out[d + k] += 1.0 / lam.sigma[k];
    }
    Ok(out)
}

/// Stochastic gradient ascent on the ELBO.
pub fn vi_train<M: BayesModel + ?Sized>(model: &M, s: &Dataset, cfg: &ViConfig) -> Result<MeanFieldGaussianParams> {
    vi_train_traced(model, s, cfg, usize::MAX).map(|(p, _)| p)
}

/// [`vi_train`] that also records the full-data ELBO after every iteration `t ≥ trace_from`.
pub fn vi_train_traced<M: BayesModel + ?Sized>(
    model: &M,
    s: &Dataset,
    cfg: &ViConfig,
    trace_from: usize,
) -> Result<(MeanFieldGaussianParams, Vec<f64>)> {
    cfg.validate()?;
    if s.n_active() == 0 {
        return Err(Error::EmptyActiveSet);
    }
    let root = RngStream::with_stream(cfg.seed, 0);
    let mut init_rng = root.substream(streams::INIT);
    let mut mc_rng = root.substream(streams::MC);
    let mut batches = BatchSampler::new(s, cfg.batch_size, root.substream(streams::BATCH));

    let d = model.dim_param();
    let b = cfg.sigma_bounds;
    let mut lam = model.initial_params(s, &mut init_rng);
    check_dim(d, lam.len())?;
    lam.extend(core::iter::repeat_n(cfg.sigma_init.clamp(b.min, b.max), d));

    let analytic = model.analytic_vi();
    let n = s.n_active();
    let mut grad = vec![0.0; 2 * d];
    let mut trace = Vec::new();
    for t in 1..=cfg.iterations {
        let batch = batches.next_batch();
        let scale = n as f64 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mc;
        let e: &dyn EnergyModel = match &analytic {
            Some(e) => e.as_ref(),
            None => {
                mc = McVi::new(model, cfg.mc_samples, &mut mc_rng);
                &mc
            }
        };
        for &i in batch {
            e.add_grad_h(&lam, s.datum(i), scale, &mut grad);
        }
        e.add_grad_f(&lam, 1.0, &mut grad);
        let lr = cfg.lr.at(t, n);
        for (l, g) in lam.iter_mut().zip(&grad) {
            *l -= lr * g;
        }
        if lam.iter().any(|x| !x.is_finite()) {
            return Err(Error::TrainingDiverged(t));
        }
        lam[d..].iter_mut().for_each(|x| *x = x.clamp(b.min, b.max));
        if t >= trace_from {
            if let Some(a) = &analytic {
                trace.push(-energy(a.as_ref(), &lam, s)?);
            }
        }
    }
    let params = MeanFieldGaussianParams::from_flat(&lam, b)?;
    Ok((params, trace))
}
