use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{prior_kl, BayesModel, EnergyModel};
use crate::dataset::{Dataset, Datum};
use crate::math;

/// Gaussian mean with known unit noise: `z ~ N(θ, I)`, `θ ~ N(0, σ₀² I)`.
///
/// `h(θ, z) = ½‖z − θ‖²` and `f(θ) = ‖θ‖² / (2σ₀²)`, with no constants, so the
/// energy of `θ = 0` on `S = {0}` is exactly zero. The posterior is
/// `N(Σz / (n + σ₀⁻²), (n + σ₀⁻²)⁻¹ I)`, which makes this model the closed-form
/// oracle for every forgetting routine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateGaussianMean {
    pub dim: usize,
    pub prior_std: f64,
}

impl ConjugateGaussianMean {
    pub fn new(dim: usize, prior_std: f64) -> Self {
        assert!(dim > 0 && prior_std > 0.0);
        Self { dim, prior_std }
    }

    /// Posterior precision `n + σ₀⁻²` for `n` active items.
    pub fn posterior_precision(&self, n: usize) -> f64 {
        n as f64 + 1.0 / (self.prior_std * self.prior_std)
    }

    /// Exact posterior mean and (isotropic) variance on the active items of `data`.
    pub fn posterior(&self, data: &Dataset) -> (Vec<f64>, f64) {
        let a = self.posterior_precision(data.n_active());
        let mut mean = vec![0.0; self.dim];
        for (_, z) in data.iter_active() {
            for (m, x) in mean.iter_mut().zip(z.x) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= a);
        (mean, 1.0 / a)
    }

    /// The exact variational optimum: the posterior itself, flattened as (μ, σ).
    pub fn vi_optimum(&self, data: &Dataset) -> Vec<f64> {
        let (mut mean, var) = self.posterior(data);
        mean.extend(core::iter::repeat_n(math::sqrt(var), self.dim));
        mean
    }

    /// `log p(S)` in the same constant convention as [`ConjugateVi`] (the ELBO upper bound).
    pub fn log_evidence(&self, data: &Dataset) -> f64 {
        // ELBO at the exact posterior equals the log evidence.
        let vi = ConjugateVi { model: *self };
        let lam = self.vi_optimum(data);
        -crate::energy::energy(&vi, &lam, data).unwrap_or(f64::NAN)
    }
}

impl EnergyModel for ConjugateGaussianMean {
    fn dim_param(&self) -> usize {
        self.dim
    }

    fn dim_datum(&self) -> usize {
        self.dim
    }

    fn h(&self, theta: &[f64], z: Datum<'_>) -> f64 {
        0.5 * theta.iter().zip(z.x).map(|(t, x)| (x - t) * (x - t)).sum::<f64>()
    }

    fn f(&self, theta: &[f64]) -> f64 {
        theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * self.prior_std * self.prior_std)
    }

    fn add_grad_h(&self, theta: &[f64], z: Datum<'_>, scale: f64, out: &mut [f64]) {
        for ((o, t), x) in out.iter_mut().zip(theta).zip(z.x) {
            *o += scale * (t - x);
        }
    }

    fn add_grad_f(&self, theta: &[f64], scale: f64, out: &mut [f64]) {
        let inv = 1.0 / (self.prior_std * self.prior_std);
        for (o, t) in out.iter_mut().zip(theta) {
            *o += scale * inv * t;
        }
    }

    fn has_analytic_hvp(&self) -> bool {
        true
    }

    fn add_hvp_h(&self, _theta: &[f64], _z: Datum<'_>, v: &[f64], scale: f64, out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o += scale * vi;
        }
    }

    fn add_hvp_f(&self, _theta: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let inv = 1.0 / (self.prior_std * self.prior_std);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += scale * inv * vi;
        }
    }
}

impl BayesModel for ConjugateGaussianMean {
    fn id(&self) -> &'static str {
        "conjugate"
    }

    fn prior_std(&self) -> f64 {
        self.prior_std
    }

    fn analytic_vi(&self) -> Option<Box<dyn EnergyModel + '_>> {
        Some(Box::new(ConjugateVi { model: *self }))
    }
}

/// Negative ELBO of the conjugate model in λ = (μ, σ):
/// `h(λ, z) = E_q ½‖z − θ‖² = ½‖z − μ‖² + ½Σσ²`, `f(λ) = KL(q ‖ N(0, σ₀² I))`.
#[derive(Debug, Clone, Copy)]
pub struct ConjugateVi {
    pub model: ConjugateGaussianMean,
}

impl EnergyModel for ConjugateVi {
    fn dim_param(&self) -> usize {
        2 * self.model.dim
    }

    fn dim_datum(&self) -> usize {
        self.model.dim
    }

    fn h(&self, lam: &[f64], z: Datum<'_>) -> f64 {
        let (mu, sigma) = lam.split_at(self.model.dim);
        self.model.h(mu, z) + 0.5 * sigma.iter().map(|s| s * s).sum::<f64>()
    }

    fn f(&self, lam: &[f64]) -> f64 {
        let (mu, sigma) = lam.split_at(self.model.dim);
        prior_kl::value(mu, sigma, self.model.prior_std)
    }

    fn add_grad_h(&self, lam: &[f64], z: Datum<'_>, scale: f64, out: &mut [f64]) {
        let d = self.model.dim;
        for k in 0..d {
            out[k] += scale * (lam[k] - z.x[k]);
            out[d + k] += scale * lam[d + k];
        }
    }

    fn add_grad_f(&self, lam: &[f64], scale: f64, out: &mut [f64]) {
        let (mu, sigma) = lam.split_at(self.model.dim);
        prior_kl::add_grad(mu, sigma, self.model.prior_std, scale, out);
    }

    fn has_analytic_hvp(&self) -> bool {
        true
    }

    fn add_hvp_h(&self, _lam: &[f64], _z: Datum<'_>, v: &[f64], scale: f64, out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o += scale * vi;
        }
    }

    fn add_hvp_f(&self, lam: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let sigma = &lam[self.model.dim..];
        prior_kl::add_hvp(sigma, self.model.prior_std, v, scale, out);
    }
}
