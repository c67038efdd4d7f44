//! Influence functions `I(z) = −H⁻¹ ∇h(γ, z)` and the scaled Neumann inverse-HVP.
//!
//! Removing `z` from the energy moves its minimiser to approximately `γ − I(z)`.
//! For variational inference γ is λ = (μ, σ) and H is the Hessian of the negative
//! ELBO; for MCMC H and ∇h are averaged over posterior draws and every draw is
//! translated by the same vector.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::energy::grad_energy;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot, norm2, DenseMatrix};
use crate::models::{BayesModel, EnergyModel};
use crate::rng::{streams, RngStream};
use crate::sgmcmc::SampleBuffer;
use crate::vi::{vi_energy, MeanFieldGaussianParams};

/// Linear operator `v ↦ H v`.
pub trait HvpOperator {
    fn dim(&self) -> usize;
    /// Overwrites `out` with `H v`.
    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()>;
}

impl HvpOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.cols()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.cols(), v.len())?;
        self.matvec(v, out);
        Ok(())
    }
}

/// Power-iteration steps used to validate `‖cH‖ ≤ 1`.
pub const SPECTRAL_STEPS: usize = 20;
/// Estimates in `(1, SPECTRAL_TOLERANCE]` are accepted with a warning flag.
pub const SPECTRAL_TOLERANCE: f64 = 1.05;

fn start_vector(p: usize) -> Vec<f64> {
    let mut rng = RngStream::with_stream(0x5eed, 0);
    let mut v = vec![0.0; p];
    rng.fill_normal(&mut v);
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Largest-eigenvalue estimate of a symmetric PSD operator by `steps` power iterations.
pub fn power_iteration<H: HvpOperator + ?Sized>(op: &H, steps: usize) -> Result<f64> {
    let p = op.dim();
    let mut x = start_vector(p);
    let mut y = vec![0.0; p];
    let mut est = 0.0;
    for _ in 0..steps.max(1) {
        op.apply(&x, &mut y)?;
        est = norm2(&y);
        if !est.is_finite() {
            return Err(Error::DegenerateCurvature);
        }
        if est == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().zip(&y).for_each(|(a, b)| *a = b / est);
    }
    Ok(est)
}

/// The plain recursion: `x₀ = v`, `x_i = v + (I − cH) x_{i−1}`, result `c · x_j`.
/// Exactly `j` operator applications.
pub fn neumann_series<H: HvpOperator + ?Sized>(op: &H, v: &[f64], j: usize, c: f64) -> Result<Vec<f64>> {
    check_dim(op.dim(), v.len())?;
    let mut x = v.to_vec();
    let mut hx = vec![0.0; v.len()];
    for i in 1..=j {
        op.apply(&x, &mut hx)?;
        for k in 0..x.len() {
            x[k] = v[k] + x[k] - c * hx[k];
        }
        if x.iter().any(|a| !a.is_finite()) {
            return Err(Error::NeumannDiverged(i));
        }
    }
    Ok(x.into_iter().map(|a| c * a).collect())
}

/// What one inverse-HVP solve did.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NeumannReport {
    pub c: f64,
    /// Power-iteration estimate of `‖cH‖`.
    pub spectral_estimate: f64,
    /// Set when the estimate exceeded 1 but stayed within tolerance.
    pub spectral_warning: bool,
    pub hvp_calls: usize,
}

/// `H⁻¹ v ≈ c (cH)_j⁻¹ v` after checking `‖cH‖ ≤ 1` by power iteration.
pub fn neumann_inverse_hvp<H: HvpOperator + ?Sized>(op: &H, v: &[f64], j: usize, c: f64) -> Result<(Vec<f64>, NeumannReport)> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig("Neumann scale c must be positive".into()));
    }
    let est = c * power_iteration(op, SPECTRAL_STEPS)?;
    if est > SPECTRAL_TOLERANCE {
        return Err(Error::SpectralBoundViolated(est));
    }
    let x = neumann_series(op, v, j, c)?;
    Ok((x, NeumannReport { c, spectral_estimate: est, spectral_warning: est > 1.0, hvp_calls: SPECTRAL_STEPS + j }))
}

/// How the Neumann scale `c` is chosen for `n′` active items.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "policy", rename_all = "snake_case"))]
pub enum ScalePolicy {
    /// `c = a / n′`
    InverseActive { a: f64 },
    Fixed { c: f64 },
    /// `c = safety / λ̂_max` with λ̂_max from power iteration.
    Spectral { safety: f64 },
}

impl ScalePolicy {
    pub fn resolve<H: HvpOperator + ?Sized>(&self, n_active: usize, op: &H) -> Result<f64> {
        match *self {
            ScalePolicy::InverseActive { a } => Ok(a / n_active.max(1) as f64),
            ScalePolicy::Fixed { c } => Ok(c),
            ScalePolicy::Spectral { safety } => {
                let lmax = power_iteration(op, 4 * SPECTRAL_STEPS)?;
                if lmax <= 0.0 {
                    return Err(Error::DegenerateCurvature);
                }
                Ok(safety / lmax)
            }
        }
    }
}

/// Where the Hessian comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "snake_case"))]
pub enum CurvatureMode {
    /// Matrix-free: every product sweeps the active set at the current parameters.
    Exact,
    /// Dense data Hessian built once at reference parameters and downdated with the
    /// removed items' Hessians; rebuilt every `refresh_every` batches (0 = never).
    Cached { refresh_every: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InfluenceConfig {
    pub neumann_j: usize,
    pub scale: ScalePolicy,
    /// Posterior draws averaged by the MCMC influence, and frozen ε draws for a
    /// Monte-Carlo variational energy.
    pub mc_samples: usize,
    pub damping: f64,
    /// Stationarity check `‖∇F_VI‖ ≤ tol · n′`.
    pub stationarity_tol: f64,
    pub curvature: CurvatureMode,
    pub seed: u64,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            neumann_j: 32,
            scale: ScalePolicy::InverseActive { a: 1.0 },
            mc_samples: 5,
            damping: 0.0,
            stationarity_tol: 1e-2,
            curvature: CurvatureMode::Exact,
            seed: 0,
        }
    }
}

impl InfluenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neumann_j == 0 {
            return Err(Error::InvalidConfig("neumann_j must be at least 1".into()));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidConfig("damping must be nonnegative".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
        }
        let ok = match self.scale {
            ScalePolicy::InverseActive { a } => a > 0.0,
            ScalePolicy::Fixed { c } => c > 0.0,
            ScalePolicy::Spectral { safety } => safety > 0.0 && safety <= 1.0,
        };
        if !ok {
            return Err(Error::InvalidConfig("invalid scale policy".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InfluenceTarget {
    /// λ = (μ, σ) of a mean-field Gaussian.
    ViLambda,
    /// θ of posterior draws.
    McmcTheta,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InfluenceVector {
    pub delta: Vec<f64>,
    pub target: InfluenceTarget,
    pub removed: Vec<usize>,
}

impl InfluenceVector {
    pub fn norm(&self) -> f64 {
        norm2(&self.delta)
    }
}

/// Componentwise sum of influences computed at the same base parameters.
pub fn group_influence(items: &[InfluenceVector]) -> Result<InfluenceVector> {
    let first = items.first().ok_or_else(|| Error::InvalidConfig("empty influence list".into()))?;
    let mut delta = first.delta.clone();
    let mut removed = first.removed.clone();
    for it in &items[1..] {
        if it.target != first.target {
            return Err(Error::MixedTargets);
        }
        check_dim(delta.len(), it.delta.len())?;
        delta.iter_mut().zip(&it.delta).for_each(|(a, b)| *a += b);
        removed.extend_from_slice(&it.removed);
    }
    removed.sort_unstable();
    removed.dedup();
    Ok(InfluenceVector { delta, target: first.target, removed })
}

/// Matrix-free Hessian of the energy averaged over a set of parameter points, plus damping.
pub struct EnergyHvp<'a, M: ?Sized> {
    pub model: &'a M,
    pub points: &'a [Vec<f64>],
    pub data: &'a Dataset,
    pub damping: f64,
}

impl<M: EnergyModel + ?Sized> HvpOperator for EnergyHvp<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim_param()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), v.len())?;
        let w = 1.0 / self.points.len() as f64;
        out.iter_mut().zip(v).for_each(|(o, x)| *o = self.damping * x);
        for p in self.points {
            for (_, z) in self.data.iter_active() {
                self.model.add_hvp_h(p, z, v, w, out);
            }
            self.model.add_hvp_f(p, v, w, out);
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateCurvature);
        }
        Ok(())
    }
}

/// Dense data-Hessian sum `(1/m) Σ_points Σ_active ∇²h`, kept in step with removals.
#[derive(Debug, Clone)]
pub struct CurvatureCache {
    points: Vec<Vec<f64>>,
    data_hessian: DenseMatrix,
    batches_since_build: usize,
}

impl CurvatureCache {
    pub fn build<M: EnergyModel + ?Sized>(model: &M, points: Vec<Vec<f64>>, data: &Dataset) -> Result<Self> {
        let p = model.dim_param();
        let w = 1.0 / points.len() as f64;
        let mut hm = DenseMatrix::zeros(p, p);
        for pt in &points {
            check_dim(p, pt.len())?;
            for (_, z) in data.iter_active() {
                model.add_hessian_h(pt, z, w, &mut hm);
            }
        }
        hm.symmetrize();
        Ok(Self { points, data_hessian: hm, batches_since_build: 0 })
    }

    /// Removes the contribution of `indices` (read before they are masked).
    pub fn downdate<M: EnergyModel + ?Sized>(&mut self, model: &M, data: &Dataset, indices: &[usize]) {
        let w = 1.0 / self.points.len() as f64;
        for pt in &self.points {
            for &i in indices {
                model.add_hessian_h(pt, data.datum(i), -w, &mut self.data_hessian);
            }
        }
        self.data_hessian.symmetrize();
        self.batches_since_build += 1;
    }

    pub fn batches_since_build(&self) -> usize {
        self.batches_since_build
    }

    /// Cached data Hessian plus the prior Hessian averaged over `current` and damping.
    pub fn operator<M: EnergyModel + ?Sized>(&self, model: &M, current: &[Vec<f64>], damping: f64) -> Result<DenseMatrix> {
        let p = model.dim_param();
        let mut hm = self.data_hessian.clone();
        let w = 1.0 / current.len() as f64;
        for pt in current {
            model.add_hessian_f(pt, w, &mut hm);
        }
        for i in 0..p {
            hm.add_at(i, i, damping);
        }
        hm.symmetrize();
        if hm.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateCurvature);
        }
        Ok(hm)
    }
}

fn check_indices(data: &Dataset, indices: &[usize]) -> Result<()> {
    for &i in indices {
        if i >= data.len() {
            return Err(Error::IndexOutOfRange { index: i, len: data.len() });
        }
        if !data.is_active(i) {
            return Err(Error::IndexAlreadyRemoved(i));
        }
    }
    Ok(())
}

/// Shared core: `−H⁻¹ Σ_points-avg Σ_{z ∈ indices} ∇h(point, z)`.
fn solve_influence<M: EnergyModel + ?Sized>(
    model: &M,
    points: &[Vec<f64>],
    data: &Dataset,
    indices: &[usize],
    cfg: &InfluenceConfig,
    cache: Option<&DenseMatrix>,
) -> Result<(Vec<f64>, NeumannReport)> {
    let p = model.dim_param();
    let w = 1.0 / points.len() as f64;
    let mut g = vec![0.0; p];
    for pt in points {
        for &i in indices {
            model.add_grad_h(pt, data.datum(i), w, &mut g);
        }
    }
    let n = data.n_active();
    let (x, report) = match cache {
        Some(hm) => {
            let c = cfg.scale.resolve(n, hm)?;
            neumann_inverse_hvp(hm, &g, cfg.neumann_j, c)?
        }
        None => {
            let op = EnergyHvp { model, points, data, damping: cfg.damping };
            let c = cfg.scale.resolve(n, &op)?;
            neumann_inverse_hvp(&op, &g, cfg.neumann_j, c)?
        }
    };
    Ok((x.into_iter().map(|a| -a).collect(), report))
}

/// Checks that λ̂ is interior and approximately stationary for `energy_model` on `data`.
pub fn check_stationary<M: EnergyModel + ?Sized>(
    energy_model: &M,
    lam: &MeanFieldGaussianParams,
    data: &Dataset,
    tol: f64,
) -> Result<()> {
    let tolerance = tol * data.n_active().max(1) as f64;
    if !lam.is_interior() {
        return Err(Error::StationarityViolated { grad_norm: f64::INFINITY, tolerance });
    }
    let g = grad_energy(energy_model, &lam.flat(), data)?;
    let grad_norm = norm2(&g);
    if grad_norm > tolerance {
        return Err(Error::StationarityViolated { grad_norm, tolerance });
    }
    Ok(())
}

/// Variational influence of removing `indices` (summed), `−H⁻¹ Σ ∇_λ h_VI(λ̂, z)`,
/// with H the Hessian of the negative ELBO on the active items of `data`.
pub fn vi_influence<M: BayesModel + ?Sized>(
    model: &M,
    lam: &MeanFieldGaussianParams,
    data: &Dataset,
    indices: &[usize],
    cfg: &InfluenceConfig,
) -> Result<(InfluenceVector, NeumannReport)> {
    cfg.validate()?;
    check_indices(data, indices)?;
    let mut rng = RngStream::with_stream(cfg.seed, streams::MC);
    let e = vi_energy(model, cfg.mc_samples, &mut rng);
    check_stationary(e.as_ref(), lam, data, cfg.stationarity_tol)?;
    let points = [lam.flat()];
    let (delta, report) = solve_influence(e.as_ref(), &points, data, indices, cfg, None)?;
    Ok((InfluenceVector { delta, target: InfluenceTarget::ViLambda, removed: indices.to_vec() }, report))
}

/// MCMC influence of removing `indices`: `−A⁻¹ b` with A and b averaged over
/// `cfg.mc_samples` evenly spaced draws of the buffer.
pub fn mcmc_influence<M: BayesModel + ?Sized>(
    model: &M,
    buffer: &SampleBuffer,
    data: &Dataset,
    indices: &[usize],
    cfg: &InfluenceConfig,
) -> Result<(InfluenceVector, NeumannReport)> {
    cfg.validate()?;
    check_indices(data, indices)?;
    if buffer.is_empty() {
        return Err(Error::InvalidConfig("empty sample buffer".into()));
    }
    if cfg.mc_samples > buffer.len() {
        return Err(Error::InvalidConfig("mc_samples exceeds buffer length".into()));
    }
    let points: Vec<Vec<f64>> = buffer.evenly_spaced(cfg.mc_samples).into_iter().map(|i| buffer.sample(i)).collect();
    let (delta, report) = solve_influence(model, &points, data, indices, cfg, None)?;
    Ok((InfluenceVector { delta, target: InfluenceTarget::McmcTheta, removed: indices.to_vec() }, report))
}

/// Influence against a prebuilt dense curvature matrix (cached mode).
pub(crate) fn influence_with_matrix<M: EnergyModel + ?Sized>(
    model: &M,
    points: &[Vec<f64>],
    data: &Dataset,
    indices: &[usize],
    cfg: &InfluenceConfig,
    hm: &DenseMatrix,
) -> Result<(Vec<f64>, NeumannReport)> {
    check_indices(data, indices)?;
    solve_influence(model, points, data, indices, cfg, Some(hm))
}

pub(crate) fn influence_exact<M: EnergyModel + ?Sized>(
    model: &M,
    points: &[Vec<f64>],
    data: &Dataset,
    indices: &[usize],
    cfg: &InfluenceConfig,
) -> Result<(Vec<f64>, NeumannReport)> {
    check_indices(data, indices)?;
    solve_influence(model, points, data, indices, cfg, None)
}

/// `⟨u, H v⟩` helper used by curvature probes.
pub fn quadratic_form<H: HvpOperator + ?Sized>(op: &H, u: &[f64], v: &[f64]) -> Result<f64> {
    let mut hv = vec![0.0; v.len()];
    op.apply(v, &mut hv)?;
    Ok(dot(u, &hv))
}
