//! Energy models `F(γ, S) = Σ_z h(γ, z) + f(γ)`.
//!
//! [`EnergyModel`] is the capability every forgetting routine consumes: values,
//! gradients and Hessian-vector products of the per-datum term `h` and the prior
//! term `f`. The same trait is implemented both by posterior models in θ
//! coordinates (used by the samplers and the MCMC influence) and by variational
//! energies in λ = (μ, σ) coordinates (used by VI training and the VI influence).

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, Datum};
use crate::linalg::{norm2, DenseMatrix};
use crate::math;
use crate::rng::RngStream;

mod classifier;
mod conjugate;
mod gmm;

pub use classifier::{BayesianClassifier, ClassifierArch};
pub use conjugate::{ConjugateGaussianMean, ConjugateVi};
pub use gmm::{Gmm, GmmVi};

pub trait EnergyModel {
    fn dim_param(&self) -> usize;
    fn dim_datum(&self) -> usize;

    /// Per-datum energy term.
    fn h(&self, gamma: &[f64], z: Datum<'_>) -> f64;
    /// Prior energy term.
    fn f(&self, gamma: &[f64]) -> f64;

    /// `out += scale * ∇h(γ, z)`
    fn add_grad_h(&self, gamma: &[f64], z: Datum<'_>, scale: f64, out: &mut [f64]);
    /// `out += scale * ∇f(γ)`
    fn add_grad_f(&self, gamma: &[f64], scale: f64, out: &mut [f64]);

    /// True when `add_hvp_h` / `add_hvp_f` are analytic rather than finite differences.
    fn has_analytic_hvp(&self) -> bool {
        false
    }

    /// `out += scale * ∇²h(γ, z) v`; forward differences of the gradient unless overridden.
    fn add_hvp_h(&self, gamma: &[f64], z: Datum<'_>, v: &[f64], scale: f64, out: &mut [f64]) {
        fd_hvp(|g, o| self.add_grad_h(g, z, 1.0, o), gamma, v, scale, out);
    }

    /// `out += scale * ∇²f(γ) v`
    fn add_hvp_f(&self, gamma: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        fd_hvp(|g, o| self.add_grad_f(g, 1.0, o), gamma, v, scale, out);
    }

    /// `out += scale * ∇²h(γ, z)` built column by column from HVPs.
    fn add_hessian_h(&self, gamma: &[f64], z: Datum<'_>, scale: f64, out: &mut DenseMatrix) {
        hessian_by_columns(|v, o| self.add_hvp_h(gamma, z, v, 1.0, o), self.dim_param(), scale, out);
    }

    fn add_hessian_f(&self, gamma: &[f64], scale: f64, out: &mut DenseMatrix) {
        hessian_by_columns(|v, o| self.add_hvp_f(gamma, v, 1.0, o), self.dim_param(), scale, out);
    }
}

/// A Bayesian model over θ whose prior is the isotropic Gaussian `N(0, prior_std² I)`.
///
/// `h(θ, z) = -log p(z | θ)` and `f(θ) = -log p(θ)` up to constants that each model
/// documents.
pub trait BayesModel: EnergyModel {
    /// Identifier written into checkpoints.
    fn id(&self) -> &'static str;

    fn prior_std(&self) -> f64;

    /// Normalised `log N(θ; 0, prior_std² I)`.
    fn log_prior(&self, theta: &[f64]) -> f64 {
        let s2 = self.prior_std() * self.prior_std();
        let d = theta.len() as f64;
        -0.5 * theta.iter().map(|t| t * t).sum::<f64>() / s2 - 0.5 * d * (math::LN_2PI + math::ln(s2))
    }

    /// Starting point for training and sampling.
    fn initial_params(&self, _data: &Dataset, _rng: &mut RngStream) -> Vec<f64> {
        vec![0.0; self.dim_param()]
    }

    /// Loss in [0, 1] used by generalization bounds and split errors.
    fn bounded_loss(&self, theta: &[f64], z: Datum<'_>) -> f64 {
        (self.h(theta, z) / 10.0).clamp(0.0, 1.0)
    }

    /// `out += scale * J(θ; z)`, the per-datum Fisher information. Defaults to the
    /// observed information `∇²h(θ, z)`.
    fn add_fisher(&self, theta: &[f64], z: Datum<'_>, scale: f64, out: &mut DenseMatrix) {
        self.add_hessian_h(theta, z, scale, out);
    }

    /// Closed-form variational energy in (μ, σ) coordinates, when the model has one.
    fn analytic_vi(&self) -> Option<Box<dyn EnergyModel + '_>> {
        None
    }
}

/// Forward-difference Hessian-vector product of a gradient map.
///
/// The step is `√ε_mach · (1 + ‖γ‖)` along the unit direction `v / ‖v‖`.
pub fn fd_hvp<G>(grad: G, gamma: &[f64], v: &[f64], scale: f64, out: &mut [f64])
where
    G: Fn(&[f64], &mut [f64]),
{
    let vn = norm2(v);
    if vn == 0.0 {
        return;
    }
    let step = math::sqrt(f64::EPSILON) * (1.0 + norm2(gamma));
    let p = gamma.len();
    let mut g0 = vec![0.0; p];
    let mut g1 = vec![0.0; p];
    grad(gamma, &mut g0);
    let shifted: Vec<f64> = gamma.iter().zip(v).map(|(g, vi)| g + step * vi / vn).collect();
    grad(&shifted, &mut g1);
    let k = scale * vn / step;
    for ((o, a), b) in out.iter_mut().zip(&g1).zip(&g0) {
        *o += k * (a - b);
    }
}

fn hessian_by_columns<H>(hvp: H, p: usize, scale: f64, out: &mut DenseMatrix)
where
    H: Fn(&[f64], &mut [f64]),
{
    let mut e = vec![0.0; p];
    let mut col = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        col.iter_mut().for_each(|c| *c = 0.0);
        hvp(&e, &mut col);
        for (i, c) in col.iter().enumerate() {
            out.add_at(i, j, scale * c);
        }
        e[j] = 0.0;
    }
}

/// `out += scale * ∇²(−LSE_k a_k)` for scores with `∇a_k = g_k` on coordinates `idx[k]`
/// and `∇²a_k = −I` there: block (k, l) is `δ_kl r_k (I − g_k g_kᵀ) + r_k r_l g_k g_lᵀ`.
pub(crate) fn add_neg_lse_hessian(idx: &[Vec<usize>], g: &[Vec<f64>], r: &[f64], scale: f64, out: &mut DenseMatrix) {
    for k in 0..idx.len() {
        for (a, &i) in idx[k].iter().enumerate() {
            out.add_at(i, i, scale * r[k]);
            for l in 0..idx.len() {
                let w = scale * r[k] * (r[l] - if k == l { 1.0 } else { 0.0 });
                for (b, &j) in idx[l].iter().enumerate() {
                    out.add_at(i, j, w * g[k][a] * g[l][b]);
                }
            }
        }
    }
}

/// KL(N(μ, diag σ²) ‖ N(0, s0² I)) and its derivatives, shared by the variational energies.
pub(crate) mod prior_kl {
    use crate::math;

    pub fn value(mu: &[f64], sigma: &[f64], s0: f64) -> f64 {
        let s02 = s0 * s0;
        mu.iter()
            .zip(sigma)
            .map(|(m, s)| (m * m + s * s) / (2.0 * s02) - math::ln(*s) + math::ln(s0) - 0.5)
            .sum()
    }

    /// Gradient into `out` laid out as (μ, σ).
    pub fn add_grad(mu: &[f64], sigma: &[f64], s0: f64, scale: f64, out: &mut [f64]) {
        let d = mu.len();
        let s02 = s0 * s0;
        for k in 0..d {
            out[k] += scale * mu[k] / s02;
            out[d + k] += scale * (sigma[k] / s02 - 1.0 / sigma[k]);
        }
    }

    pub fn add_hvp(sigma: &[f64], s0: f64, v: &[f64], scale: f64, out: &mut [f64]) {
        let d = sigma.len();
        let inv = 1.0 / (s0 * s0);
        for k in 0..d {
            out[k] += scale * inv * v[k];
            out[d + k] += scale * (inv + 1.0 / (sigma[k] * sigma[k])) * v[d + k];
        }
    }
}
