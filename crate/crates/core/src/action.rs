//! Discretized path weights for the classical degrees of freedom.
//!
//! All q-dependent coefficients are evaluated at the pre-point (Itô), the
//! same convention [`sample_path`] uses, so action differences are exact
//! log-ratios of Euler-Maruyama transition densities.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CqError, Result};
use crate::generator::common_eigenbasis;
use crate::model::{CQModel, ScalarPoly};
use crate::psd::{tradeoff_verdict, Verdict};
use crate::state::{fmt_f64, HybridState, PhaseGrid};
use crate::unravel::trajectory_rng;

/// Absolute tolerance on `q_{k+1} − q_k − p_k dt/m`.
pub const CONSTRAINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalPath {
    pub dt: f64,
    pub q: Vec<f64>,
    /// Absent for configuration-space paths.
    pub p: Option<Vec<f64>>,
}

impl ClassicalPath {
    pub fn new(dt: f64, q: Vec<f64>, p: Option<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CqError::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if q.len() < 2 {
            return Err(CqError::InvalidInput(format!("a path needs at least 2 points, got {}", q.len())));
        }
        if let Some(p) = &p {
            if p.len() != q.len() {
                return Err(CqError::ShapeMismatch(format!(
                    "q has {} points but p has {}",
                    q.len(),
                    p.len()
                )));
            }
        }
        Ok(ClassicalPath { dt, q, p })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.q.len() - 1
    }

    fn momenta(&self) -> Result<&[f64]> {
        self.p
            .as_deref()
            .ok_or_else(|| CqError::InvalidInput("phase-space action needs momenta".into()))
    }

    /// CSV with columns `t,q,p` (`p` left empty for configuration paths).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,q,p\n");
        for (k, q) in self.q.iter().enumerate() {
            let p = self.p.as_ref().map_or(String::new(), |p| fmt_f64(p[k]));
            let _ = writeln!(out, "{},{},{}", fmt_f64(k as f64 * self.dt), fmt_f64(*q), p);
        }
        out
    }
}

/// Bra and ket branch indices in the eigenbasis of `V_I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchPair {
    pub a: usize,
    pub b: usize,
}

/// A model prepared for path evaluation: scalar coefficient polynomials
/// and, for commuting diagonalizable models, one eigenvalue polynomial of
/// `V_I` per branch.
#[derive(Debug, Clone)]
pub struct PathModel {
    model: CQModel,
    force: ScalarPoly,
    branch_slopes: std::result::Result<Vec<ScalarPoly>, CqError>,
}

impl PathModel {
    pub fn new(model: &CQModel) -> Result<Self> {
        if !(model.mass > 0.0 && model.mass.is_finite()) {
            return Err(CqError::InvalidInput(format!("mass must be positive, got {}", model.mass)));
        }
        Ok(PathModel {
            model: model.clone(),
            force: model.potential.derivative(),
            branch_slopes: branch_polys(model).map(|v| v.iter().map(ScalarPoly::derivative).collect()),
        })
    }

    pub fn model(&self) -> &CQModel {
        &self.model
    }

    /// Eigenvalue `l_a(q)` of `∂V_I/∂q` on branch `a`.
    pub fn slope(&self, a: usize, q: f64) -> Result<f64> {
        let slopes = self.branch_slopes.as_ref().map_err(Clone::clone)?;
        slopes.get(a).map(|s| s.eval(q)).ok_or_else(|| {
            CqError::InvalidInput(format!("branch index {a} out of range for dimension {}", slopes.len()))
        })
    }

    fn check_pair(&self, pair: Option<BranchPair>) -> Result<()> {
        if let Some(BranchPair { a, b }) = pair {
            self.slope(a, 0.0)?;
            self.slope(b, 0.0)?;
        }
        Ok(())
    }

    /// `V'(q)` plus the bra/ket-averaged interaction force.
    fn drift_force(&self, q: f64, pair: Option<BranchPair>) -> Result<f64> {
        let mut f = self.force.eval(q);
        if let Some(BranchPair { a, b }) = pair {
            f += 0.5 * (self.slope(a, q)? + self.slope(b, q)?);
        }
        Ok(f)
    }

    fn d2_at(&self, k: usize, q: f64) -> Result<f64> {
        let d2 = self.model.d2.eval(q);
        if d2 > 0.0 && d2.is_finite() {
            Ok(d2)
        } else {
            Err(CqError::InvalidInput(format!("D2 = {d2} at step {k} (q = {q}); path weights need D2 > 0")))
        }
    }
}

/// Eigenvalue polynomials of `V_I` in its fixed eigenbasis.
fn branch_polys(model: &CQModel) -> Result<Vec<ScalarPoly>> {
    let d = model.dim();
    let basis = common_eigenbasis(model)?;
    let mut per_branch = vec![Vec::new(); d];
    for c in model.interaction.coeffs() {
        let t = basis.adjoint() * c.matrix() * &basis;
        for (a, coeffs) in per_branch.iter_mut().enumerate() {
            coeffs.push(t[(a, a)].re);
        }
    }
    Ok(per_branch.into_iter().map(ScalarPoly::new).collect())
}

/// `Σ_k dt r_k² / (2 D2(q_k))` with `r_k = (p_{k+1} − p_k)/dt + V'(q_k)`
/// plus the averaged interaction force when a branch pair is given. The
/// position update is a hard constraint.
pub fn om_action(path: &ClassicalPath, pm: &PathModel, pair: Option<BranchPair>) -> Result<f64> {
    pm.check_pair(pair)?;
    let p = path.momenta()?;
    let (dt, m) = (path.dt, pm.model.mass);
    let mut total = 0.0;
    for k in 0..path.n_steps() {
        let q = path.q[k];
        let gap = path.q[k + 1] - q - p[k] * dt / m;
        if gap.abs() > CONSTRAINT_TOL * (1.0 + path.q[k + 1].abs()) {
            return Err(CqError::PathRejected {
                index: k,
                detail: format!("q_(k+1) - q_k - p_k dt/m = {gap:e}"),
            });
        }
        let d2 = pm.d2_at(k, q)?;
        let r = (p[k + 1] - p[k]) / dt + pm.drift_force(q, pair)?;
        total += dt * r * r / (2.0 * d2);
    }
    Ok(total)
}

/// `Σ_k ½ log D2(q_k)` over the pre-points of every step.
pub fn anomalous_term(path: &ClassicalPath, pm: &PathModel) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..path.n_steps() {
        total += 0.5 * pm.d2_at(k, path.q[k])?.ln();
    }
    Ok(total)
}

/// Decoherence exponent `Σ_k dt (D0(q_k)/2)(l_a − l_b)²`.
pub fn fv_action(path: &ClassicalPath, pm: &PathModel, pair: BranchPair) -> Result<f64> {
    pm.check_pair(Some(pair))?;
    let mut total = 0.0;
    for k in 0..path.n_steps() {
        let q = path.q[k];
        let gap = pm.slope(pair.a, q)? - pm.slope(pair.b, q)?;
        total += path.dt * 0.5 * pm.model.d0.eval(q) * gap * gap;
    }
    Ok(total)
}

/// Per-branch exponent `Σ_k dt (u_k + l_a)² / (4 D2)` with
/// `u_k = (p_{k+1} − p_k)/dt + V'(q_k)`. When the trade-off is saturated
/// along the path, `om_action + fv_action` for the pair `(a, b)` equals
/// `branch_exponent(a) + branch_exponent(b)`.
pub fn branch_exponent(path: &ClassicalPath, pm: &PathModel, a: usize) -> Result<f64> {
    pm.slope(a, 0.0)?;
    let p = path.momenta()?;
    let dt = path.dt;
    let mut total = 0.0;
    for k in 0..path.n_steps() {
        let q = path.q[k];
        let verdict = tradeoff_verdict(&pm.model.coupling_at(q), 1e-12);
        if verdict != Verdict::Saturated {
            return Err(CqError::InvalidInput(format!(
                "trade-off is {verdict:?} at step {k}; the weight does not factorize"
            )));
        }
        let d2 = pm.d2_at(k, q)?;
        let v = (p[k + 1] - p[k]) / dt + pm.force.eval(q) + pm.slope(a, q)?;
        total += dt * v * v / (4.0 * d2);
    }
    Ok(total)
}

/// `−(om_action + anomalous_term)`: the path log-density up to a
/// constant that depends only on `dt` and the step count.
pub fn log_path_weight(path: &ClassicalPath, pm: &PathModel, pair: Option<BranchPair>) -> Result<f64> {
    Ok(-(om_action(path, pm, pair)? + anomalous_term(path, pm)?))
}

/// Configuration-space action
/// `Σ_k dt (m q̈_k + V'(q_k) + averaged force)² / (2 D2(q_k))` over interior
/// points. Momenta, if present, are ignored.
pub fn config_action(path: &ClassicalPath, pm: &PathModel, pair: Option<BranchPair>) -> Result<f64> {
    pm.check_pair(pair)?;
    if path.len() < 3 {
        return Err(CqError::InvalidInput("configuration action needs at least 3 points".into()));
    }
    let (dt, m, q) = (path.dt, pm.model.mass, &path.q);
    let mut total = 0.0;
    for k in 1..path.len() - 1 {
        let acc = (q[k + 1] - 2.0 * q[k] + q[k - 1]) / (dt * dt);
        let d2 = pm.d2_at(k, q[k])?;
        let r = m * acc + pm.drift_force(q[k], pair)?;
        total += dt * r * r / (2.0 * d2);
    }
    Ok(total)
}

/// Euler-Maruyama sample of the path measure, deterministic per seed.
pub fn sample_path(
    pm: &PathModel,
    q0: f64,
    p0: f64,
    n_steps: usize,
    dt: f64,
    pair: Option<BranchPair>,
    seed: u64,
) -> Result<ClassicalPath> {
    sample_path_from(pm, (q0, p0), n_steps, dt, pair, &mut trajectory_rng(seed, 0))
}

fn sample_path_from<R: Rng>(
    pm: &PathModel,
    start: (f64, f64),
    n_steps: usize,
    dt: f64,
    pair: Option<BranchPair>,
    rng: &mut R,
) -> Result<ClassicalPath> {
    pm.check_pair(pair)?;
    if n_steps == 0 {
        return Err(CqError::InvalidInput("n_steps must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CqError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let m = pm.model.mass;
    let mut q = Vec::with_capacity(n_steps + 1);
    let mut p = Vec::with_capacity(n_steps + 1);
    q.push(start.0);
    p.push(start.1);
    for k in 0..n_steps {
        let (qk, pk) = (q[k], p[k]);
        let d2 = pm.d2_at(k, qk)?;
        let xi: f64 = rng.sample(StandardNormal);
        p.push(pk - pm.drift_force(qk, pair)? * dt + (d2 * dt).sqrt() * xi);
        q.push(qk + pk * dt / m);
    }
    ClassicalPath::new(dt, q, Some(p))
}

/// Initial point of each sampled path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PathStart {
    Fixed { q: f64, p: f64 },
    /// Independent Gaussians, drawn from the path's own stream.
    Gaussian { q_mean: f64, q_std: f64, p_mean: f64, p_std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSampling {
    pub dt: f64,
    pub n_steps: usize,
    pub pair: Option<BranchPair>,
}

/// `n` paths on independent streams of `seed`, returned in index order.
pub fn sample_ensemble(
    pm: &PathModel,
    start: PathStart,
    cfg: PathSampling,
    seed: u64,
    n: usize,
) -> Result<Vec<ClassicalPath>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i);
            let z0 = match start {
                PathStart::Fixed { q, p } => (q, p),
                PathStart::Gaussian { q_mean, q_std, p_mean, p_std } => {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    (q_mean + q_std * a, p_mean + p_std * b)
                }
            };
            sample_path_from(pm, z0, cfg.n_steps, cfg.dt, cfg.pair, &mut rng)
        })
        .collect()
}

/// Self-normalized weights `w_i ∝ exp(ℓ_i)`.
pub fn normalized_weights(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Log importance weights `−ΔS` of paths drawn under `reference` when
/// the target is `target`, with `S = om_action + anomalous_term`.
pub fn importance_log_weights(
    paths: &[ClassicalPath],
    target: &PathModel,
    reference: &PathModel,
    pair: Option<BranchPair>,
) -> Result<Vec<f64>> {
    paths
        .par_iter()
        .map(|path| Ok(log_path_weight(path, target, pair)? - log_path_weight(path, reference, pair)?))
        .collect()
}

/// Weighted histogram of path endpoints as a normalized classical density.
/// `None` weighs every path equally.
pub fn marginal_from_paths(paths: &[ClassicalPath], weights: Option<&[f64]>, grid: PhaseGrid) -> Result<HybridState> {
    if paths.is_empty() {
        return Err(CqError::InvalidInput("empty ensemble".into()));
    }
    if let Some(w) = weights {
        if w.len() != paths.len() {
            return Err(CqError::ShapeMismatch(format!("{} weights for {} paths", w.len(), paths.len())));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..paths.len()).map(weight).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(CqError::InvalidInput(format!("total weight must be positive, got {total}")));
    }
    let mut state = HybridState::zeros(grid, 1);
    let scale = 1.0 / (total * grid.cell_volume());
    let (mut outside, mut outside_weight) = (0, 0.0);
    for (i, path) in paths.iter().enumerate() {
        let q = *path.q.last().expect("non-empty");
        let p = path.p.as_ref().map_or(0.0, |p| *p.last().expect("non-empty"));
        match (grid.q.locate(q), grid.p.locate(p)) {
            (Some(iq), Some(ip)) => state.cell_mut(iq, ip)[0] += weight(i) * scale,
            _ => {
                outside += 1;
                outside_weight += weight(i);
            }
        }
    }
    if outside_weight > 1e-3 * total {
        return Err(CqError::OutsideGrid { outside, total: paths.len() });
    }
    Ok(state)
}

/// Columns `weight,q,p` with the endpoint of each path.
pub fn weighted_ensemble_csv(paths: &[ClassicalPath], weights: &[f64]) -> String {
    let mut out = String::from("weight,q,p\n");
    for (path, w) in paths.iter().zip(weights) {
        let q = *path.q.last().expect("non-empty");
        let p = path.p.as_ref().map_or(String::new(), |p| fmt_f64(*p.last().expect("non-empty")));
        let _ = writeln!(out, "{},{},{}", fmt_f64(*w), fmt_f64(q), p);
    }
    out
}
