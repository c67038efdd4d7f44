use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{prior_kl, BayesModel, EnergyModel};
use super::add_neg_lse_hessian;
use crate::dataset::{Dataset, Datum};
use crate::linalg::DenseMatrix;
use crate::math;
use crate::rng::RngStream;

/// Gaussian mixture with `K` unit-covariance components and uniform weights.
///
/// θ = (μ₁, …, μ_K) flattened, each μ_k ∈ ℝᵈ. The assignments are summed out, so
/// `h(θ, x) = −log((1/K) Σ_k N(x; μ_k, I))` and
/// `f(θ) = ‖θ‖² / (2σ²) + (Kd/2) log(2πσ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gmm {
    pub k: usize,
    pub dim: usize,
    pub prior_std: f64,
}

impl Gmm {
    pub fn new(k: usize, dim: usize, prior_std: f64) -> Self {
        assert!(k > 0 && dim > 0 && prior_std > 0.0);
        Self { k, dim, prior_std }
    }

    /// Component log densities `ℓ_k = log N(x; μ_k, I)`.
    fn component_logs(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (k, o) in out.iter_mut().enumerate() {
            let mu = &theta[k * d..(k + 1) * d];
            let sq: f64 = mu.iter().zip(x).map(|(m, xi)| (xi - m) * (xi - m)).sum();
            *o = -0.5 * sq - 0.5 * d as f64 * math::LN_2PI;
        }
    }

    /// Posterior responsibilities of each component for `x`.
    pub fn responsibilities(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut l = vec![0.0; self.k];
        self.component_logs(theta, x, &mut l);
        let mut r = vec![0.0; self.k];
        math::softmax_into(&l, &mut r);
        r
    }

    /// Centers as rows.
    pub fn centers(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        theta[..self.k * self.dim].chunks(self.dim).map(|c| c.to_vec()).collect()
    }
}

impl EnergyModel for Gmm {
    fn dim_param(&self) -> usize {
        self.k * self.dim
    }

    fn dim_datum(&self) -> usize {
        self.dim
    }

    fn h(&self, theta: &[f64], z: Datum<'_>) -> f64 {
        let mut l = vec![0.0; self.k];
        self.component_logs(theta, z.x, &mut l);
        -math::log_sum_exp(&l) + math::ln(self.k as f64)
    }

    fn f(&self, theta: &[f64]) -> f64 {
        let s2 = self.prior_std * self.prior_std;
        theta.iter().map(|t| t * t).sum::<f64>() / (2.0 * s2)
            + 0.5 * theta.len() as f64 * (math::LN_2PI + math::ln(s2))
    }

    fn add_grad_h(&self, theta: &[f64], z: Datum<'_>, scale: f64, out: &mut [f64]) {
        let r = self.responsibilities(theta, z.x);
        let d = self.dim;
        for k in 0..self.k {
            for j in 0..d {
                out[k * d + j] -= scale * r[k] * (z.x[j] - theta[k * d + j]);
            }
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

    fn add_hvp_h(&self, theta: &[f64], z: Datum<'_>, v: &[f64], scale: f64, out: &mut [f64]) {
        // −∇² LSE: per block φ_k (v_k − g_k (t_k − t̄)) with g_k = x − μ_k, t_k = g_k·v_k.
        let r = self.responsibilities(theta, z.x);
        let d = self.dim;
        let mut t = vec![0.0; self.k];
        for k in 0..self.k {
            t[k] = (0..d).map(|j| (z.x[j] - theta[k * d + j]) * v[k * d + j]).sum();
        }
        let tbar: f64 = r.iter().zip(&t).map(|(a, b)| a * b).sum();
        for k in 0..self.k {
            for j in 0..d {
                let g = z.x[j] - theta[k * d + j];
                out[k * d + j] += scale * r[k] * (v[k * d + j] - g * (t[k] - tbar));
            }
        }
    }

    fn add_hvp_f(&self, _theta: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let inv = 1.0 / (self.prior_std * self.prior_std);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += scale * inv * vi;
        }
    }

    fn add_hessian_h(&self, theta: &[f64], z: Datum<'_>, scale: f64, out: &mut DenseMatrix) {
        let (d, p) = (self.dim, self.dim_param());
        let mut buf = [0.0; 64];
        let mut heap = Vec::new();
        let (g, rest) = if 2 * p + self.k <= buf.len() {
            buf[..2 * p + self.k].split_at_mut(p)
        } else {
            heap.resize(2 * p + self.k, 0.0);
            heap.split_at_mut(p)
        };
        let (u, r) = rest.split_at_mut(p);
        let mut mx = f64::NEG_INFINITY;
        for k in 0..self.k {
            let mut sq = 0.0;
            for j in 0..d {
                let v = z.x[j] - theta[k * d + j];
                g[k * d + j] = v;
                sq += v * v;
            }
            r[k] = -0.5 * sq;
            mx = mx.max(r[k]);
        }
        let mut total = 0.0;
        for v in r.iter_mut() {
            *v = math::exp(*v - mx);
            total += *v;
        }
        for v in r.iter_mut() {
            *v /= total;
        }
        // Row a of block k: scale·r_k·g_a·(u − g restricted to block k), u_b = r_l g_b.
        for l in 0..self.k {
            for b in l * d..(l + 1) * d {
                u[b] = r[l] * g[b];
            }
        }
        let h = out.data_mut();
        for k in 0..self.k {
            let blk = k * d..(k + 1) * d;
            for a in blk.clone() {
                let w = scale * r[k] * g[a];
                let row = &mut h[a * p..(a + 1) * p];
                for (o, ub) in row.iter_mut().zip(u.iter()) {
                    *o += w * ub;
                }
                for b in blk.clone() {
                    row[b] -= w * g[b];
                }
                row[a] += scale * r[k];
            }
        }
    }

    fn add_hessian_f(&self, _theta: &[f64], scale: f64, out: &mut DenseMatrix) {
        let inv = 1.0 / (self.prior_std * self.prior_std);
        for i in 0..self.dim_param() {
            out.add_at(i, i, scale * inv);
        }
    }
}

impl BayesModel for Gmm {
    fn id(&self) -> &'static str {
        "gmm"
    }

    fn prior_std(&self) -> f64 {
        self.prior_std
    }

    /// k-means++ seeding over the active items.
    fn initial_params(&self, data: &Dataset, rng: &mut RngStream) -> Vec<f64> {
        kmeans_pp(data, self.k, rng)
    }

    /// Clipped negative log-likelihood: `clamp((h − (d/2) log 2π) / 10, 0, 1)`.
    fn bounded_loss(&self, theta: &[f64], z: Datum<'_>) -> f64 {
        let excess = self.h(theta, z) - 0.5 * self.dim as f64 * math::LN_2PI;
        (excess / 10.0).clamp(0.0, 1.0)
    }

    fn analytic_vi(&self) -> Option<Box<dyn EnergyModel + '_>> {
        Some(Box::new(GmmVi { model: *self }))
    }
}

fn kmeans_pp(data: &Dataset, k: usize, rng: &mut RngStream) -> Vec<f64> {
    let idx = data.active_indices();
    let d = data.dim();
    if idx.is_empty() {
        return vec![0.0; k * d];
    }
    let mut centers: Vec<f64> = Vec::with_capacity(k * d);
    centers.extend_from_slice(data.datum(idx[rng.below(idx.len())]).x);
    let mut dist = vec![f64::INFINITY; idx.len()];
    for c in 1..k {
        let last = &centers[(c - 1) * d..c * d];
        for (di, &i) in dist.iter_mut().zip(&idx) {
            let x = data.datum(i).x;
            let sq: f64 = x.iter().zip(last).map(|(a, b)| (a - b) * (a - b)).sum();
            *di = di.min(sq);
        }
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut chosen = idx.len() - 1;
            for (p, di) in dist.iter().enumerate() {
                if u < *di {
                    chosen = p;
                    break;
                }
                u -= di;
            }
            chosen
        } else {
            rng.below(idx.len())
        };
        centers.extend_from_slice(data.datum(idx[pick]).x);
    }
    centers
}

/// Negative ELBO of the structured mean-field family for [`Gmm`].
///
/// λ = (m₁, …, m_K, s₁, …, s_K), with `q(μ_k) = N(m_k, diag s_k²)` and local
/// responsibilities `φ_k ∝ exp(a_k)`, `a_k = x·m_k − ½(‖m_k‖² + ‖s_k‖²)`. Plugging φ back
/// into the per-datum ELBO collapses it to a log-sum-exp:
/// `h(λ, x) = −LSE_k(a_k) + log K + ½‖x‖² + (d/2) log 2π` and `f(λ) = KL(q ‖ prior)`.
/// Derivatives are total derivatives through φ.
#[derive(Debug, Clone, Copy)]
pub struct GmmVi {
    pub model: Gmm,
}

impl GmmVi {
    fn scores(&self, lam: &[f64], x: &[f64], out: &mut [f64]) {
        let (d, kd) = (self.model.dim, self.model.k * self.model.dim);
        for (k, o) in out.iter_mut().enumerate() {
            let m = &lam[k * d..(k + 1) * d];
            let s = &lam[kd + k * d..kd + (k + 1) * d];
            let xm: f64 = x.iter().zip(m).map(|(a, b)| a * b).sum();
            let sq: f64 = m.iter().chain(s).map(|v| v * v).sum();
            *o = xm - 0.5 * sq;
        }
    }

    fn phi(&self, lam: &[f64], x: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.model.k];
        self.scores(lam, x, &mut a);
        let mut p = vec![0.0; self.model.k];
        math::softmax_into(&a, &mut p);
        p
    }
}

impl EnergyModel for GmmVi {
    fn dim_param(&self) -> usize {
        2 * self.model.k * self.model.dim
    }

    fn dim_datum(&self) -> usize {
        self.model.dim
    }

    fn h(&self, lam: &[f64], z: Datum<'_>) -> f64 {
        let mut a = vec![0.0; self.model.k];
        self.scores(lam, z.x, &mut a);
        let xx: f64 = z.x.iter().map(|v| v * v).sum();
        -math::log_sum_exp(&a)
            + math::ln(self.model.k as f64)
            + 0.5 * xx
            + 0.5 * self.model.dim as f64 * math::LN_2PI
    }

    fn f(&self, lam: &[f64]) -> f64 {
        let (m, s) = lam.split_at(self.model.k * self.model.dim);
        prior_kl::value(m, s, self.model.prior_std)
    }

    fn add_grad_h(&self, lam: &[f64], z: Datum<'_>, scale: f64, out: &mut [f64]) {
        let phi = self.phi(lam, z.x);
        let (d, kd) = (self.model.dim, self.model.k * self.model.dim);
        for k in 0..self.model.k {
            for j in 0..d {
                let (im, is) = (k * d + j, kd + k * d + j);
                out[im] -= scale * phi[k] * (z.x[j] - lam[im]);
                out[is] += scale * phi[k] * lam[is];
            }
        }
    }

    fn add_grad_f(&self, lam: &[f64], scale: f64, out: &mut [f64]) {
        let (m, s) = lam.split_at(self.model.k * self.model.dim);
        prior_kl::add_grad(m, s, self.model.prior_std, scale, out);
    }

    fn has_analytic_hvp(&self) -> bool {
        true
    }

    fn add_hvp_h(&self, lam: &[f64], z: Datum<'_>, v: &[f64], scale: f64, out: &mut [f64]) {
        // Same structure as the marginal model with g_k = (x − m_k, −s_k).
        let phi = self.phi(lam, z.x);
        let (d, kd) = (self.model.dim, self.model.k * self.model.dim);
        let grad_at = |k: usize, j: usize| (z.x[j] - lam[k * d + j], -lam[kd + k * d + j]);
        let mut t = vec![0.0; self.model.k];
        for (k, tk) in t.iter_mut().enumerate() {
            for j in 0..d {
                let (gm, gs) = grad_at(k, j);
                *tk += gm * v[k * d + j] + gs * v[kd + k * d + j];
            }
        }
        let tbar: f64 = phi.iter().zip(&t).map(|(a, b)| a * b).sum();
        for k in 0..self.model.k {
            let w = scale * phi[k];
            for j in 0..d {
                let (gm, gs) = grad_at(k, j);
                let (im, is) = (k * d + j, kd + k * d + j);
                out[im] += w * (v[im] - gm * (t[k] - tbar));
                out[is] += w * (v[is] - gs * (t[k] - tbar));
            }
        }
    }

    fn add_hvp_f(&self, lam: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let s = &lam[self.model.k * self.model.dim..];
        prior_kl::add_hvp(s, self.model.prior_std, v, scale, out);
    }

    fn add_hessian_h(&self, lam: &[f64], z: Datum<'_>, scale: f64, out: &mut DenseMatrix) {
        let phi = self.phi(lam, z.x);
        let (d, kd) = (self.model.dim, self.model.k * self.model.dim);
        let idx: Vec<Vec<usize>> =
            (0..self.model.k).map(|k| (k * d..(k + 1) * d).chain(kd + k * d..kd + (k + 1) * d).collect()).collect();
        let g: Vec<Vec<f64>> = (0..self.model.k)
            .map(|k| (0..d).map(|j| z.x[j] - lam[k * d + j]).chain((0..d).map(|j| -lam[kd + k * d + j])).collect())
            .collect();
        add_neg_lse_hessian(&idx, &g, &phi, scale, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::{central_grad, check_gradients, rel_err};
    use crate::rng::seeded_rng;

    fn probe(rng: &mut RngStream, n: usize, lo: f64) -> Vec<f64> {
        (0..n).map(|_| lo + rng.normal()).collect()
    }

    #[test]
    fn collapsed_centers_give_gaussian_constant() {
        let m = Gmm::new(4, 2, 1.0);
        let x = [0.3, -1.2];
        let theta: Vec<f64> = x.iter().copied().cycle().take(8).collect();
        let h = m.h(&theta, Datum::new(&x));
        assert!((h - math::LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn far_components_do_not_underflow() {
        let m = Gmm::new(2, 1, 1.0);
        let h = m.h(&[100.0, 200.0], Datum::new(&[-100.0]));
        assert!(h.is_finite() && h > 1e4);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = Gmm::new(4, 2, 1.0);
        let vi = GmmVi { model: m };
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            let theta = probe(&mut rng, 8, 0.0);
            let x = probe(&mut rng, 2, 0.0);
            assert!(check_gradients(&m, &theta, Datum::new(&x)) < 1e-5);
            let mut lam = probe(&mut rng, 8, 0.0);
            lam.extend((0..8).map(|_| 0.1 + rng.uniform()));
            assert!(check_gradients(&vi, &lam, Datum::new(&x)) < 1e-5);
        }
    }

    #[test]
    fn analytic_hvp_matches_gradient_differences() {
        let m = Gmm::new(3, 2, 1.0);
        let vi = GmmVi { model: m };
        let mut rng = seeded_rng(4);
        for _ in 0..20 {
            let x = probe(&mut rng, 2, 0.0);
            let theta = probe(&mut rng, 6, 0.0);
            let v = probe(&mut rng, 6, 0.0);
            let mut hv = vec![0.0; 6];
            m.add_hvp_h(&theta, Datum::new(&x), &v, 1.0, &mut hv);
            let fd = central_grad(
                |t| {
                    let mut g = vec![0.0; 6];
                    m.add_grad_h(t, Datum::new(&x), 1.0, &mut g);
                    crate::linalg::dot(&g, &v)
                },
                &theta,
            );
            assert!(rel_err(&hv, &fd) < 1e-6);

            let mut lam = probe(&mut rng, 6, 0.0);
            lam.extend((0..6).map(|_| 0.2 + rng.uniform()));
            let v = probe(&mut rng, 12, 0.0);
            let mut hv = vec![0.0; 12];
            vi.add_hvp_h(&lam, Datum::new(&x), &v, 1.0, &mut hv);
            vi.add_hvp_f(&lam, &v, 1.0, &mut hv);
            let fd = central_grad(
                |l| {
                    let mut g = vec![0.0; 12];
                    vi.add_grad_h(l, Datum::new(&x), 1.0, &mut g);
                    vi.add_grad_f(l, 1.0, &mut g);
                    crate::linalg::dot(&g, &v)
                },
                &lam,
            );
            assert!(rel_err(&hv, &fd) < 1e-6);
        }
    }

    #[test]
    fn dense_hessians_match_hvp_columns() {
        let m = Gmm::new(3, 2, 1.0);
        let vi = GmmVi { model: m };
        let mut rng = seeded_rng(8);
        let x = probe(&mut rng, 2, 0.0);
        let theta = probe(&mut rng, 6, 0.0);
        let mut lam = probe(&mut rng, 6, 0.0);
        lam.extend((0..6).map(|_| 0.2 + rng.uniform()));
        let models: [(&dyn EnergyModel, &[f64]); 2] = [(&m, &theta), (&vi, &lam)];
        for (model, p) in models {
            let n = p.len();
            let mut dense = DenseMatrix::zeros(n, n);
            model.add_hessian_h(p, Datum::new(&x), 1.0, &mut dense);
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut col = vec![0.0; n];
                model.add_hvp_h(p, Datum::new(&x), &e, 1.0, &mut col);
                for i in 0..n {
                    assert!((dense.get(i, j) - col[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kmeans_pp_picks_distinct_points() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i / 10) as f64 * 5.0, 0.0]).collect();
        let d = Dataset::from_rows(&rows, None).unwrap();
        let c = kmeans_pp(&d, 4, &mut seeded_rng(1));
        let mut xs: Vec<f64> = c.chunks(2).map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.0, 5.0, 10.0, 15.0]);
    }
}
