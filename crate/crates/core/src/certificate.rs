//! ε-certificates: KL(processed ‖ retrained) ≤ ε.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, norm1, norm2, DenseMatrix};
use crate::math;
use crate::models::BayesModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CertificateKind {
    /// Mean-field Gaussian VI, σ bounded in [M₁, M₂].
    Vi,
    /// Asymptotically Gaussian MCMC posterior.
    Mcmc,
}

impl CertificateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CertificateKind::Vi => "vi",
            CertificateKind::Mcmc => "mcmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Certificate {
    pub epsilon: f64,
    pub kind: CertificateKind,
    /// Named addends; `epsilon` is their sum.
    pub components: Vec<(String, f64)>,
    /// Inputs the value depends on (σ bounds, n, ...).
    pub inputs: Vec<(String, f64)>,
    /// Set when the Gaussian-posterior assumption behind the MCMC value is doubtful,
    /// e.g. for a multimodal mixture posterior.
    pub asymptotic_caveat: bool,
}

impl Certificate {
    fn from_parts(kind: CertificateKind, components: Vec<(String, f64)>, inputs: Vec<(String, f64)>) -> Self {
        let epsilon = components.iter().map(|(_, v)| v).sum();
        Self { epsilon, kind, components, inputs, asymptotic_caveat: false }
    }
}

/// Exact KL(N(μ₁, diag σ₁²) ‖ N(μ₂, diag σ₂²)) for flat (μ, σ) vectors.
pub fn kl_meanfield(l1: &[f64], l2: &[f64]) -> Result<f64> {
    check_dim(l1.len(), l2.len())?;
    let d = l1.len() / 2;
    let mut kl = 0.0;
    for k in 0..d {
        let (m1, s1, m2, s2) = (l1[k], l1[d + k], l2[k], l2[d + k]);
        if s1 <= 0.0 || s2 <= 0.0 {
            return Err(Error::NonPositiveSigma);
        }
        let v2 = s2 * s2;
        kl += 0.5 * ((s1 * s1 - v2) / v2 + (m1 - m2) * (m1 - m2) / v2 + 2.0 * math::ln(s2 / s1));
    }
    Ok(kl)
}

fn check_sigma(l: &[f64], m1: f64, m2: f64) -> Result<()> {
    let d = l.len() / 2;
    for (index, &value) in l[d..].iter().enumerate() {
        if value < m1 || value > m2 {
            return Err(Error::SigmaOutOfBounds { index, value, min: m1, max: m2 });
        }
    }
    Ok(())
}

/// `ε = (2(M₁ + M₂)‖Δ‖₁ + ‖Δ‖₂²) / (2M₁²)` with Δ = λ⁻ − λ_retrain.
pub fn vi_certificate(processed: &[f64], retrained: &[f64], m1: f64, m2: f64) -> Result<Certificate> {
    check_dim(processed.len(), retrained.len())?;
    if !(m1 > 0.0 && m1 <= m2) {
        return Err(Error::InvalidConfig("need 0 < M1 <= M2".into()));
    }
    check_sigma(processed, m1, m2)?;
    check_sigma(retrained, m1, m2)?;
    let diff: Vec<f64> = processed.iter().zip(retrained).map(|(a, b)| a - b).collect();
    let l1 = norm1(&diff);
    let l2 = norm2(&diff);
    let k = 1.0 / (2.0 * m1 * m1);
    Ok(Certificate::from_parts(
        CertificateKind::Vi,
        alloc::vec![("l1_term".into(), k * 2.0 * (m1 + m2) * l1), ("l2_term".into(), k * l2 * l2)],
        alloc::vec![("m1".into(), m1), ("m2".into(), m2)],
    ))
}

/// `ε = (n − 1)ΔᵀJ₂Δ + tr(J₁⁻¹(J₂ − J₁)) + log(|J₁| / |J₂|)`, Δ = θ₁′ − θ₂.
pub fn mcmc_certificate(theta1: &[f64], theta2: &[f64], j1: &DenseMatrix, j2: &DenseMatrix, n: usize) -> Result<Certificate> {
    let d = theta1.len();
    check_dim(d, theta2.len())?;
    check_dim(d, j1.rows())?;
    check_dim(d, j2.rows())?;
    if n < 2 {
        return Err(Error::Domain("need n >= 2".into()));
    }
    let c1 = j1.cholesky()?;
    let c2 = j2.cholesky()?;
    let delta: Vec<f64> = theta1.iter().zip(theta2).map(|(a, b)| a - b).collect();
    let mut jd = alloc::vec![0.0; d];
    j2.matvec(&delta, &mut jd);
    let quad: f64 = delta.iter().zip(&jd).map(|(a, b)| a * b).sum();
    let mut diff = j2.clone();
    diff.add_scaled(-1.0, j1);
    let trace = c1.inverse().matmul(&diff).trace();
    let log_det = c1.log_det() - c2.log_det();
    Ok(Certificate::from_parts(
        CertificateKind::Mcmc,
        alloc::vec![("drift".into(), (n - 1) as f64 * quad), ("trace".into(), trace), ("log_det".into(), log_det)],
        alloc::vec![("n".into(), n as f64)],
    ))
}

/// Per-datum Fisher information estimate: the mean of [`BayesModel::add_fisher`] over
/// the active items.
pub fn fisher_information<M: BayesModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<DenseMatrix> {
    let n = data.n_active();
    if n == 0 {
        return Err(Error::EmptyActiveSet);
    }
    let p = model.dim_param();
    check_dim(p, theta.len())?;
    let mut j = DenseMatrix::zeros(p, p);
    for (_, z) in data.iter_active() {
        model.add_fisher(theta, z, 1.0 / n as f64, &mut j);
    }
    j.symmetrize();
    if j.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateCurvature);
    }
    Ok(j)
}

/// Marks a certificate as computed outside the regime its formula assumes.
pub fn with_caveat(mut c: Certificate, caveat: bool) -> Certificate {
    c.asymptotic_caveat = caveat;
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn kl_hand_values() {
        assert_eq!(kl_meanfield(&[0.3, 1.2], &[0.3, 1.2]).unwrap(), 0.0);
        assert!((kl_meanfield(&[0.0, 1.0], &[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        let a = kl_meanfield(&[0.0, 1.0], &[0.0, 2.0]).unwrap();
        let b = kl_meanfield(&[0.0, 2.0], &[0.0, 1.0]).unwrap();
        assert!((a - 0.5 * (0.25 - 1.0 + 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!((b - 0.5 * (4.0 - 1.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!((a - b).abs() > 0.1);
        assert_eq!(kl_meanfield(&[0.0, 0.0], &[0.0, 1.0]), Err(Error::NonPositiveSigma));
    }

    #[test]
    fn vi_hand_value() {
        let c = vi_certificate(&[0.1, 1.0], &[0.0, 1.0], 1.0, 1.0).unwrap();
        assert!((c.epsilon - 0.205).abs() < 1e-12);
        assert_eq!(vi_certificate(&[0.0, 1.0], &[0.0, 1.0], 0.5, 2.0).unwrap().epsilon, 0.0);
        assert!(matches!(vi_certificate(&[0.0, 3.0], &[0.0, 1.0], 0.5, 2.0), Err(Error::SigmaOutOfBounds { .. })));
    }

    #[test]
    fn vi_certificate_dominates_kl() {
        let mut rng = seeded_rng(31);
        let (m1, m2) = (0.2, 3.0);
        for _ in 0..1000 {
            let d = 1 + rng.below(5);
            let mut a: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
            let mut b: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
            a.extend((0..d).map(|_| m1 + (m2 - m1) * rng.uniform()));
            b.extend((0..d).map(|_| m1 + (m2 - m1) * rng.uniform()));
            let kl = kl_meanfield(&a, &b).unwrap();
            assert!(kl <= vi_certificate(&a, &b, m1, m2).unwrap().epsilon);
        }
    }

    #[test]
    fn mcmc_hand_values() {
        let one = DenseMatrix::identity(1);
        assert_eq!(mcmc_certificate(&[0.5], &[0.5], &one, &one, 10).unwrap().epsilon, 0.0);
        let c = mcmc_certificate(&[0.01], &[0.0], &one, &one, 101).unwrap();
        assert!((c.epsilon - 0.01).abs() < 1e-15);
        let bad = DenseMatrix::diagonal(&[-1.0]);
        assert_eq!(mcmc_certificate(&[0.0], &[0.0], &bad, &one, 10).map(|c| c.epsilon), Err(Error::NotSpd));
    }

    /// KL(N(a, Σa) ‖ N(b, Σb)) from covariances, written independently of the certificate.
    fn gaussian_kl(a: &[f64], sa: &DenseMatrix, b: &[f64], sb: &DenseMatrix) -> f64 {
        let cb = sb.cholesky().unwrap();
        let ca = sa.cholesky().unwrap();
        let d = a.len() as f64;
        let tr = cb.inverse().matmul(sa).trace();
        let diff: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let sol = cb.solve(&diff);
        let quad: f64 = diff.iter().zip(&sol).map(|(x, y)| x * y).sum();
        0.5 * (tr + quad - d + cb.log_det() - ca.log_det())
    }

    #[test]
    fn mcmc_gap_to_exact_gaussian_kl() {
        let j = DenseMatrix::from_row_major(2, 2, vec![2.0, 0.3, 0.3, 1.0]).unwrap();
        let t1 = [0.4, -0.2];
        let t2 = [0.41, -0.19];
        for n in [100usize, 1000, 10_000] {
            let eps = mcmc_certificate(&t1, &t2, &j, &j, n).unwrap().epsilon;
            let inv = j.cholesky().unwrap().inverse();
            let (mut s1, mut s2) = (DenseMatrix::zeros(2, 2), DenseMatrix::zeros(2, 2));
            s1.add_scaled(1.0 / n as f64, &inv);
            s2.add_scaled(1.0 / (n - 1) as f64, &inv);
            let kl = gaussian_kl(&t1, &s1, &t2, &s2);
            let nf = n as f64;
            assert!((eps - 2.0 * kl).abs() <= 2.0 * (1.0 / nf + (nf / (nf - 1.0)).ln()));
            assert!(((eps - 2.0 * kl) - (2.0 / nf - 2.0 * (nf / (nf - 1.0)).ln())).abs() < 1e-9);
        }
    }

    #[test]
    fn fisher_of_conjugate_is_identity() {
        let m = crate::models::ConjugateGaussianMean::new(2, 1.0);
        let s = Dataset::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]], None).unwrap();
        let j = fisher_information(&m, &[0.0, 0.0], &s).unwrap();
        assert_eq!(j, DenseMatrix::identity(2));
    }
}
