//! PAC-Bayes generalization bounds for processed models, with the standard normal prior.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{check_dim, norm2, DenseMatrix};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BoundKind {
    Vi,
    Mcmc,
    PacBayes,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundReport {
    pub kind: BoundKind,
    pub empirical_risk: f64,
    pub bound: f64,
    /// The complexity constant C (the KL for the plain PAC-Bayes form).
    pub complexity: f64,
    pub n: usize,
    pub delta: f64,
    pub components: Vec<(String, f64)>,
}

fn check_common(risk: f64, n: usize, delta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&risk) {
        return Err(Error::Domain("empirical risk must lie in [0, 1]".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain("delta must lie in (0, 1)".into()));
    }
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    Ok(())
}

fn finish(kind: BoundKind, risk: f64, complexity: f64, numerator: f64, denom: f64, n: usize, delta: f64, mut components: Vec<(String, f64)>) -> Result<BoundReport> {
    if !(numerator.is_finite() && numerator >= 0.0) {
        return Err(Error::Domain("bound radicand is negative or non-finite".into()));
    }
    let radical = math::sqrt(numerator / denom);
    components.push(("radical".into(), radical));
    Ok(BoundReport { kind, empirical_risk: risk, bound: risk + radical, complexity, n, delta, components })
}

/// `R̂ + √((KL + log(1/δ) + log n + 2) / (2n − 1))`.
pub fn pac_bayes_bound(risk: f64, kl: f64, n: usize, delta: f64) -> Result<BoundReport> {
    check_common(risk, n, delta)?;
    if !(kl >= 0.0) {
        return Err(Error::Domain("KL must be nonnegative".into()));
    }
    let nf = n as f64;
    let num = kl + math::ln(1.0 / delta) + math::ln(nf) + 2.0;
    finish(BoundKind::PacBayes, risk, kl, num, 2.0 * nf - 1.0, n, delta, alloc::vec![("kl".into(), kl)])
}

/// Bound for a processed mean-field Gaussian `λ − Δ`, λ = (μ, σ) flat:
/// `R̂ + √((C − d + 2 log(1/δ) + 2 log n + 4) / (4n − 2))`, with
/// `C = ‖Δ‖² + 2‖λ‖‖Δ‖ + ‖λ‖² − 2 Σ log(σ_k − Δσ_k)` (norms over all of λ).
pub fn vi_bound(risk: f64, lam: &[f64], delta_lam: &[f64], n: usize, delta: f64) -> Result<BoundReport> {
    check_common(risk, n, delta)?;
    check_dim(lam.len(), delta_lam.len())?;
    let d = lam.len() / 2;
    let mut log_term = 0.0;
    for k in 0..d {
        let s = lam[d + k] - delta_lam[d + k];
        if s <= 0.0 {
            return Err(Error::Domain("sigma - delta_sigma must be positive".into()));
        }
        log_term += math::ln(s);
    }
    let (nl, nd) = (norm2(lam), norm2(delta_lam));
    let c = nd * nd + 2.0 * nl * nd + nl * nl - 2.0 * log_term;
    let nf = n as f64;
    let num = c - d as f64 + 2.0 * math::ln(1.0 / delta) + 2.0 * math::ln(nf) + 4.0;
    finish(
        BoundKind::Vi,
        risk,
        c,
        num,
        4.0 * nf - 2.0,
        n,
        delta,
        alloc::vec![
            ("delta_sq".into(), nd * nd),
            ("cross".into(), 2.0 * nl * nd),
            ("lambda_sq".into(), nl * nl),
            ("log_sigma".into(), -2.0 * log_term),
        ],
    )
}

/// Bound for a processed Gaussian posterior `N(θ₁ − Δ, (nJ)⁻¹)`:
/// `R̂ + √((C_p + 2 log(1/δ) + (d + 2) log n − d + 4) / (4n − 2))`, with
/// `C_p = ‖Δ‖² + 2‖θ₁‖‖Δ‖ + ‖θ₁‖² + tr(J⁻¹)/n + log|J|`.
pub fn mcmc_bound(risk: f64, theta1: &[f64], delta_theta: &[f64], j: &DenseMatrix, n: usize, delta: f64) -> Result<BoundReport> {
    check_common(risk, n, delta)?;
    let d = theta1.len();
    check_dim(d, delta_theta.len())?;
    check_dim(d, j.rows())?;
    let ch = j.cholesky()?;
    let nf = n as f64;
    let (nt, nd) = (norm2(theta1), norm2(delta_theta));
    let tr = ch.inverse().trace() / nf;
    let ld = ch.log_det();
    let c = nd * nd + 2.0 * nt * nd + nt * nt + tr + ld;
    let num = c + 2.0 * math::ln(1.0 / delta) + (d as f64 + 2.0) * math::ln(nf) - d as f64 + 4.0;
    finish(
        BoundKind::Mcmc,
        risk,
        c,
        num,
        4.0 * nf - 2.0,
        n,
        delta,
        alloc::vec![
            ("delta_sq".into(), nd * nd),
            ("cross".into(), 2.0 * nt * nd),
            ("theta_sq".into(), nt * nt),
            ("trace".into(), tr),
            ("log_det".into(), ld),
        ],
    )
}
