//! Dataset-level energy `F(γ, S)`, its gradient and curvature.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, DenseMatrix};
use crate::models::EnergyModel;

fn check<M: EnergyModel + ?Sized>(model: &M, gamma: &[f64], s: &Dataset) -> Result<()> {
    check_dim(model.dim_param(), gamma.len())?;
    if !s.is_empty() {
        check_dim(model.dim_datum(), s.dim())?;
    }
    Ok(())
}

/// `Σ_{active z} h(γ, z) + f(γ)`.
pub fn energy<M: EnergyModel + ?Sized>(model: &M, gamma: &[f64], s: &Dataset) -> Result<f64> {
    check(model, gamma, s)?;
    let mut total = 0.0;
    for (_, z) in s.iter_active() {
        total += model.h(gamma, z);
    }
    Ok(total + model.f(gamma))
}

/// `Σ_{active z} ∇h(γ, z) + ∇f(γ)`.
pub fn grad_energy<M: EnergyModel + ?Sized>(model: &M, gamma: &[f64], s: &Dataset) -> Result<Vec<f64>> {
    check(model, gamma, s)?;
    let mut g = vec![0.0; gamma.len()];
    for (_, z) in s.iter_active() {
        model.add_grad_h(gamma, z, 1.0, &mut g);
    }
    model.add_grad_f(gamma, 1.0, &mut g);
    Ok(g)
}

/// `(∇²F(γ, S) + τ ∇²h(γ, z_j)) v`, where `extra = (τ, j)` and `τ ∈ [−1, 0]`.
pub fn hvp_energy<M: EnergyModel + ?Sized>(
    model: &M,
    gamma: &[f64],
    s: &Dataset,
    v: &[f64],
    extra: Option<(f64, usize)>,
) -> Result<Vec<f64>> {
    check(model, gamma, s)?;
    check_dim(gamma.len(), v.len())?;
    let mut out = vec![0.0; gamma.len()];
    for (_, z) in s.iter_active() {
        model.add_hvp_h(gamma, z, v, 1.0, &mut out);
    }
    model.add_hvp_f(gamma, v, 1.0, &mut out);
    if let Some((tau, j)) = extra {
        if !(-1.0..=0.0).contains(&tau) {
            return Err(Error::Domain("tau must lie in [-1, 0]".into()));
        }
        if j >= s.len() {
            return Err(Error::IndexOutOfRange { index: j, len: s.len() });
        }
        model.add_hvp_h(gamma, s.datum(j), v, tau, &mut out);
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateCurvature);
    }
    Ok(out)
}

/// Dense `Σ_{active z} ∇²h(γ, z)`, without the prior term.
pub fn data_hessian<M: EnergyModel + ?Sized>(model: &M, gamma: &[f64], s: &Dataset) -> Result<DenseMatrix> {
    check(model, gamma, s)?;
    let p = gamma.len();
    let mut hm = DenseMatrix::zeros(p, p);
    for (_, z) in s.iter_active() {
        model.add_hessian_h(gamma, z, 1.0, &mut hm);
    }
    hm.symmetrize();
    Ok(hm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::models::{testing, BayesianClassifier, ClassifierArch, ConjugateGaussianMean, Gmm, GmmVi};
    use crate::rng::seeded_rng;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn rows(v: &[f64]) -> Dataset {
        let r: Vec<Vec<f64>> = v.iter().map(|x| vec![*x]).collect();
        Dataset::from_rows(&r, None).unwrap()
    }

    #[test]
    fn conjugate_hand_values() {
        let m = ConjugateGaussianMean::new(1, 1.0);
        assert_eq!(energy(&m, &[0.0], &rows(&[0.0])).unwrap(), 0.0);
        assert_eq!(energy(&m, &[1.0], &rows(&[2.0])).unwrap(), 1.0);
        assert_eq!(grad_energy(&m, &[1.0], &rows(&[2.0])).unwrap(), vec![0.0]);
        assert_eq!(grad_energy(&m, &[2.0], &rows(&[])).unwrap()[0], 2.0);
    }

    #[test]
    fn conjugate_hessian_closed_form() {
        let m = ConjugateGaussianMean::new(2, 1.0);
        let s = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]], None).unwrap();
        assert_eq!(hvp_energy(&m, &[0.3, 0.1], &s, &[1.0, 0.0], None).unwrap(), vec![4.0, 0.0]);
        assert_eq!(hvp_energy(&m, &[0.3, 0.1], &s, &[0.0, 0.0], None).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let m = ConjugateGaussianMean::new(2, 1.0);
        assert!(matches!(energy(&m, &[0.0], &rows(&[1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gradient_matches_fd_of_energy() {
        let mut rng = seeded_rng(11);
        let data: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let s = Dataset::from_rows(&data, None).unwrap();
        let m = Gmm::new(3, 2, 1.0);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let g = grad_energy(&m, &theta, &s).unwrap();
            let fd = testing::central_grad(|t| energy(&m, t, &s).unwrap(), &theta);
            assert!(testing::rel_err(&g, &fd) < 1e-5);
        }
    }

    #[test]
    fn tau_minus_one_equals_removal() {
        let mut rng = seeded_rng(12);
        let data: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let labels: Vec<usize> = (0..15).map(|i| i % 2).collect();
        let s = Dataset::from_rows(&data, Some(labels)).unwrap();
        let m = BayesianClassifier::new(ClassifierArch::one_hidden(2, 4, 2), 0.5);
        let theta: Vec<f64> = (0..m.arch.num_params()).map(|_| 0.5 * rng.normal()).collect();
        let v: Vec<f64> = (0..theta.len()).map(|_| rng.normal()).collect();
        let a = hvp_energy(&m, &theta, &s, &v, Some((-1.0, 4))).unwrap();
        let b = hvp_energy(&m, &theta, &s.remove(&[4]).unwrap(), &v, None).unwrap();
        assert!(testing::rel_err(&a, &b) < 1e-6);
    }

    #[test]
    fn strong_convexity_near_optimum() {
        let mut rng = seeded_rng(13);
        let centers = [[-2.0, -2.0], [2.0, 2.0]];
        let data: Vec<Vec<f64>> =
            (0..200).map(|i| centers[i % 2].iter().map(|c| c + rng.normal()).collect()).collect();
        let s = Dataset::from_rows(&data, None).unwrap();
        let gmm = Gmm::new(2, 2, 1.0);
        let vi = GmmVi { model: gmm };
        let theta = [-2.0, -2.0, 2.0, 2.0];
        let lam = [-2.0, -2.0, 2.0, 2.0, 0.1, 0.1, 0.1, 0.1];
        for _ in 0..100 {
            let mut v: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let nv = crate::linalg::norm2(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            assert!(dot(&v, &hvp_energy(&gmm, &theta, &s, &v, None).unwrap()) > 0.0);
            let mut w: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let nw = crate::linalg::norm2(&w);
            w.iter_mut().for_each(|x| *x /= nw);
            assert!(dot(&w, &hvp_energy(&vi, &lam, &s, &w, None).unwrap()) > 0.0);
        }
    }

    #[test]
    fn hvp_symmetry_probe() {
        let mut rng = seeded_rng(14);
        let data: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let s = Dataset::from_rows(&data, None).unwrap();
        let m = Gmm::new(4, 2, 1.0);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let u: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let v: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let a = dot(&u, &hvp_energy(&m, &theta, &s, &v, None).unwrap());
            let b = dot(&v, &hvp_energy(&m, &theta, &s, &u, None).unwrap());
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()));
        }
    }

    proptest! {
        #[test]
        fn energy_is_additive(xs in proptest::collection::vec(-5.0f64..5.0, 2..20), split in 1usize..19, t in -3.0f64..3.0) {
            let split = split.min(xs.len() - 1);
            let m = ConjugateGaussianMean::new(1, 1.3);
            let all = rows(&xs);
            let a = rows(&xs[..split]);
            let b = rows(&xs[split..]);
            let lhs = energy(&m, &[t], &all).unwrap();
            let rhs = energy(&m, &[t], &a).unwrap() + energy(&m, &[t], &b).unwrap() - m.f(&[t]);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn conjugate_gradient_vanishes_at_posterior_mean(xs in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let m = ConjugateGaussianMean::new(1, 2.0);
            let s = rows(&xs);
            let (mean, _) = m.posterior(&s);
            let g = grad_energy(&m, &mean, &s).unwrap();
            prop_assert!(g[0].abs() < 1e-12 * (1.0 + xs.iter().map(|x| x.abs()).sum::<f64>()));
        }
    }
}
