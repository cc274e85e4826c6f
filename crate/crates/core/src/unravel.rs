//! Pure-state unraveling of continuous measurement dynamics.
//!
//! Each trajectory integrates
//!
//! ```text
//! d|ψ⟩ = [−(i/ħ)H dt − k(Z−⟨Z⟩)² dt + √(2k)(Z−⟨Z⟩) dξ] |ψ⟩
//! dz   = ⟨Z⟩ dt + dξ / √(8k)
//! ```
//!
//! by Euler-Maruyama with renormalization after every step. Random
//! streams are keyed by `(master_seed, trajectory_index)` so ensembles do
//! not depend on scheduling.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CqError, Result};
use crate::model::MeasurementModel;
use crate::generator::{evolve, EvolveOptions, Generator, STABILITY_SAFETY};
use crate::state::{fmt_f64, Axis, Boundary, HybridState, PhaseGrid};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Independent random stream for one trajectory of an ensemble.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Flattened measurement operators, evaluated without allocation.
#[derive(Debug, Clone)]
struct Kernel {
    dim: usize,
    observable: Vec<Vec<Complex64>>,
    hamiltonian: Vec<Complex64>,
    h_active: bool,
    hbar: f64,
}

impl Kernel {
    fn new(m: &MeasurementModel) -> Result<Self> {
        if m.observable.dim() != m.dim() {
            return Err(CqError::ShapeMismatch("observable and Hamiltonian dimensions differ".into()));
        }
        let flat = |h: &crate::psd::HermMatrix| h.matrix().transpose().iter().copied().collect::<Vec<_>>();
        let hamiltonian = flat(&m.hamiltonian);
        Ok(Kernel {
            dim: m.dim(),
            observable: m.observable.coeffs().iter().map(flat).collect(),
            h_active: hamiltonian.iter().any(|z| *z != ZERO),
            hamiltonian,
            hbar: m.hbar,
        })
    }

    fn observable_at(&self, z: f64, out: &mut [Complex64]) {
        out.fill(ZERO);
        for c in self.observable.iter().rev() {
            for (o, x) in out.iter_mut().zip(c) {
                *o = *o * z + x;
            }
        }
    }
}

fn apply(op: &[Complex64], v: &[Complex64], out: &mut [Complex64], d: usize) {
    for i in 0..d {
        out[i] = (0..d).map(|k| op[i * d + k] * v[k]).sum();
    }
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Result of one Euler-Maruyama step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub psi: Vec<Complex64>,
    pub z: f64,
    /// `‖ψ_raw‖²` before renormalization.
    pub raw_norm_sqr: f64,
}

fn step_with(
    kernel: &Kernel,
    m: &MeasurementModel,
    psi: &[Complex64],
    z: f64,
    dt: f64,
    xi: f64,
) -> Result<StepOutcome> {
    let d = kernel.dim;
    let k = m.strength_at(z)?;
    let mut zop = vec![ZERO; d * d];
    kernel.observable_at(z, &mut zop);
    let mut zpsi = vec![ZERO; d];
    apply(&zop, psi, &mut zpsi, d);
    let mean: f64 = psi.iter().zip(&zpsi).map(|(a, b)| (a.conj() * b).re).sum();
    // (Z − ⟨Z⟩)ψ and (Z − ⟨Z⟩)²ψ
    let centred: Vec<Complex64> = zpsi.iter().zip(psi).map(|(a, b)| a - b * mean).collect();
    let mut z_centred = vec![ZERO; d];
    apply(&zop, &centred, &mut z_centred, d);
    let centred2: Vec<Complex64> = z_centred.iter().zip(&centred).map(|(a, b)| a - b * mean).collect();

    let dxi = xi * dt.sqrt();
    let noise = (2.0 * k).sqrt() * dxi;
    let mut raw: Vec<Complex64> = (0..d).map(|i| psi[i] - centred2[i] * (k * dt) + centred[i] * noise).collect();
    if kernel.h_active {
        let mut hpsi = vec![ZERO; d];
        apply(&kernel.hamiltonian, psi, &mut hpsi, d);
        let factor = Complex64::new(0.0, -dt / kernel.hbar);
        raw.iter_mut().zip(&hpsi).for_each(|(r, h)| *r += factor * h);
    }
    let raw_norm_sqr = norm_sqr(&raw);
    if !(raw_norm_sqr.is_finite() && raw_norm_sqr > 0.0) {
        return Err(CqError::NonFinite(format!("state norm {raw_norm_sqr} after step at z = {z}")));
    }
    let inv = 1.0 / raw_norm_sqr.sqrt();
    raw.iter_mut().for_each(|x| *x *= inv);
    let z_next = z + mean * dt + dxi / (8.0 * k).sqrt();
    Ok(StepOutcome { psi: raw, z: z_next, raw_norm_sqr })
}

/// One Euler-Maruyama step driven by the standard normal draw `xi`.
pub fn unravel_step(
    m: &MeasurementModel,
    psi: &[Complex64],
    z: f64,
    dt: f64,
    xi: f64,
) -> Result<StepOutcome> {
    if !(dt > 0.0) {
        return Err(CqError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if psi.len() != m.dim() {
        return Err(CqError::ShapeMismatch(format!("state has {} components, model {}", psi.len(), m.dim())));
    }
    let kernel = Kernel::new(m)?;
    step_with(&kernel, m, psi, z, dt, xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub index: u64,
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    pub psi: Vec<Vec<Complex64>>,
    /// Largest `|‖ψ_raw‖² − 1|` seen over the run.
    pub max_raw_norm_drift: f64,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let d = self.psi.first().map_or(0, |p| p.len());
        let mut out = format!("# seed={} index={}\nt,z", self.seed, self.index);
        for i in 0..d {
            let _ = write!(out, ",re{i},im{i}");
        }
        out.push('\n');
        for ((t, z), psi) in self.times.iter().zip(&self.z).zip(&self.psi) {
            let _ = write!(out, "{},{}", fmt_f64(*t), fmt_f64(*z));
            for c in psi {
                let _ = write!(out, ",{},{}", fmt_f64(c.re), fmt_f64(c.im));
            }
            out.push('\n');
        }
        out
    }

    pub fn final_state(&self) -> (f64, &[Complex64]) {
        (*self.z.last().expect("non-empty"), self.psi.last().expect("non-empty"))
    }
}

/// Where each trajectory's signal starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SignalStart {
    Fixed(f64),
    /// Drawn from the trajectory's own stream before the first step.
    Gaussian { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnravelConfig {
    pub dt: f64,
    pub n_steps: usize,
    /// Store every `stride`-th step (the initial and final points are
    /// always kept).
    pub stride: usize,
}

fn normalized(psi: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = norm_sqr(psi).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(CqError::InvalidInput("initial state has zero norm".into()));
    }
    Ok(psi.iter().map(|x| x / n).collect())
}

fn run_with_rng(
    kernel: &Kernel,
    m: &MeasurementModel,
    psi0: &[Complex64],
    start: SignalStart,
    cfg: &UnravelConfig,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    let mut rng = trajectory_rng(seed, index);
    let z0 = match start {
        SignalStart::Fixed(z) => z,
        SignalStart::Gaussian { mean, std } => {
            let x: f64 = StandardNormal.sample(&mut rng);
            mean + std * x
        }
    };
    let stride = cfg.stride.max(1);
    let mut psi = normalized(psi0)?;
    let mut z = z0;
    let capacity = cfg.n_steps / stride + 2;
    let mut traj = Trajectory {
        seed,
        index,
        times: Vec::with_capacity(capacity),
        z: Vec::with_capacity(capacity),
        psi: Vec::with_capacity(capacity),
        max_raw_norm_drift: 0.0,
    };
    traj.times.push(0.0);
    traj.z.push(z);
    traj.psi.push(psi.clone());
    for step in 1..=cfg.n_steps {
        let xi: f64 = StandardNormal.sample(&mut rng);
        let out = step_with(kernel, m, &psi, z, cfg.dt, xi)?;
        traj.max_raw_norm_drift = traj.max_raw_norm_drift.max((out.raw_norm_sqr - 1.0).abs());
        psi = out.psi;
        z = out.z;
        if step % stride == 0 || step == cfg.n_steps {
            traj.times.push(step as f64 * cfg.dt);
            traj.z.push(z);
            traj.psi.push(psi.clone());
        }
    }
    Ok(traj)
}

/// Single trajectory; deterministic for fixed `(seed, index)`.
pub fn run_trajectory(
    m: &MeasurementModel,
    psi0: &[Complex64],
    start: SignalStart,
    cfg: &UnravelConfig,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    if !(cfg.dt > 0.0) {
        return Err(CqError::InvalidInput(format!("dt must be positive, got {}", cfg.dt)));
    }
    if psi0.len() != m.dim() {
        return Err(CqError::ShapeMismatch(format!("state has {} components, model {}", psi0.len(), m.dim())));
    }
    let kernel = Kernel::new(m)?;
    run_with_rng(&kernel, m, psi0, start, cfg, seed, index)
}

/// Trajectories `0..n` of an ensemble, returned in index order.
pub fn run_ensemble(
    m: &MeasurementModel,
    psi0: &[Complex64],
    start: SignalStart,
    cfg: &UnravelConfig,
    seed: u64,
    n: usize,
) -> Result<Vec<Trajectory>> {
    if psi0.len() != m.dim() {
        return Err(CqError::ShapeMismatch(format!("state has {} components, model {}", psi0.len(), m.dim())));
    }
    let kernel = Kernel::new(m)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| run_with_rng(&kernel, m, psi0, start, cfg, seed, i))
        .collect()
}

fn sample_index(traj: &Trajectory, t: f64) -> Result<usize> {
    let (idx, dist) = traj
        .times
        .iter()
        .enumerate()
        .map(|(i, s)| (i, (s - t).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| CqError::InvalidInput("empty trajectory".into()))?;
    if dist > 1e-9 * (1.0 + t.abs()) {
        return Err(CqError::InvalidInput(format!("trajectory {} has no sample at t = {t}", traj.index)));
    }
    Ok(idx)
}

/// Ensemble average `(1/N) Σ |ψ⟩⟨ψ| δ(z − z_n)` binned on the signal axis.
pub fn ensemble_to_hybrid(trajectories: &[Trajectory], z_axis: Axis, t: f64) -> Result<HybridState> {
    let n = trajectories.len();
    if n == 0 {
        return Err(CqError::InvalidInput("empty ensemble".into()));
    }
    let d = trajectories[0].psi[0].len();
    let grid = PhaseGrid::signal(z_axis);
    let mut state = HybridState::zeros(grid, d);
    let weight = 1.0 / (n as f64 * grid.cell_volume());
    let mut outside = 0;
    for traj in trajectories {
        let k = sample_index(traj, t)?;
        let Some(iz) = z_axis.locate(traj.z[k]) else {
            outside += 1;
            continue;
        };
        let psi = &traj.psi[k];
        let cell = state.cell_mut(iz, 0);
        for i in 0..d {
            for j in 0..d {
                cell[i * d + j] += psi[i] * psi[j].conj() * weight;
            }
        }
    }
    if outside as f64 > 1e-3 * n as f64 {
        return Err(CqError::OutsideGrid { outside, total: n });
    }
    Ok(state)
}

/// The same measurement evolved on the grid generator, returned on the
/// signal axis. The signal is the momentum axis of the equivalent hybrid
/// model; the position axis is a three-point periodic stub that is frozen
/// by a very large mass, and only its `q = 0` row is kept so that the
/// embedding's `q`-dependent interaction phase never enters.
pub fn measurement_grid_reference(
    m: &MeasurementModel,
    psi0: &[Complex64],
    start: SignalStart,
    z_axis: Axis,
    t: f64,
) -> Result<HybridState> {
    let SignalStart::Gaussian { mean, std } = start else {
        return Err(CqError::InvalidInput("the grid reference needs a Gaussian signal start".into()));
    };
    if std < 2.0 * z_axis.spacing() {
        return Err(CqError::InvalidInput(format!(
            "initial signal width {std} is not resolved by spacing {}",
            z_axis.spacing()
        )));
    }
    let mut model = m.as_grid_model()?;
    model.mass = 1e12;
    let grid = PhaseGrid::new(Axis::new(-1.0, 1.0, 3)?, z_axis, Boundary::Periodic);
    let psi = normalized(psi0)?;
    let s0 = HybridState::pure_product(grid, |_, z| (-0.5 * ((z - mean) / std).powi(2)).exp(), &psi)?;
    let generator = Generator::new(&model, grid)?;
    let dt = generator.stability_limit(STABILITY_SAFETY);
    let (state, _) = evolve(&generator, &s0, t, dt, &EvolveOptions::default())?;
    let d = m.dim();
    let row: Vec<Complex64> = (0..z_axis.count).flat_map(|ip| state.cell(1, ip).to_vec()).collect();
    debug_assert_eq!(row.len(), z_axis.count * d * d);
    HybridState::from_cells(PhaseGrid::signal(z_axis), d, row)?.normalize()
}

/// Binned short-time moments of the signal.
#[derive(Debug, Clone, PartialEq)]
pub struct KmEstimate {
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    /// `E[Δz | z]/lag`
    pub drift: Vec<f64>,
    /// `Var[Δz | z]/lag`
    pub diffusion: Vec<f64>,
}

/// Conditional first and second moments of consecutive stored increments,
/// binned by the starting signal value. Bins with fewer than two
/// increments report NaN.
pub fn estimate_km_moments(trajectories: &[Trajectory], bins: Axis, lag: f64) -> Result<KmEstimate> {
    if !(lag > 0.0) {
        return Err(CqError::InvalidInput(format!("lag must be positive, got {lag}")));
    }
    let nb = bins.count;
    let mut count = vec![0usize; nb];
    let mut sum = vec![0.0; nb];
    let mut sum_sq = vec![0.0; nb];
    for traj in trajectories {
        for w in traj.z.windows(2).zip(traj.times.windows(2)) {
            let (zs, ts) = w;
            if ((ts[1] - ts[0]) - lag).abs() > 1e-9 * lag {
                continue;
            }
            if let Some(b) = bins.locate(zs[0]) {
                let dz = zs[1] - zs[0];
                count[b] += 1;
                sum[b] += dz;
                sum_sq[b] += dz * dz;
            }
        }
    }
    let mut drift = vec![f64::NAN; nb];
    let mut diffusion = vec![f64::NAN; nb];
    for b in 0..nb {
        if count[b] >= 2 {
            let c = count[b] as f64;
            let mean = sum[b] / c;
            drift[b] = mean / lag;
            diffusion[b] = (sum_sq[b] / c - mean * mean) * c / (c - 1.0) / lag;
        }
    }
    Ok(KmEstimate { centers: bins.values(), counts: count, drift, diffusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{pauli_z, ScalarPoly};
    use crate::psd::HermMatrix;
    use crate::state::coarse_l1;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn cfg(dt: f64, n_steps: usize) -> UnravelConfig {
        UnravelConfig { dt, n_steps, stride: 1 }
    }

    #[test]
    fn eigenstates_are_fixed_points() {
        let m = MeasurementModel::constant(pauli_z(), 2.0);
        let psi = [c(0.0), c(1.0)];
        let (dt, xi) = (0.01, 0.7);
        let out = unravel_step(&m, &psi, 0.3, dt, xi).unwrap();
        assert_eq!(out.psi, psi.to_vec());
        assert_abs_diff_eq!(out.z - 0.3, -dt + xi * dt.sqrt() / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.raw_norm_sqr, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_positive_strength() {
        let mut m = MeasurementModel::constant(pauli_z(), 1.0);
        m.strength = ScalarPoly::new(vec![0.0, 1.0]);
        let err = unravel_step(&m, &[c(1.0), c(0.0)], -0.5, 0.01, 0.0).unwrap_err();
        assert!(matches!(err, CqError::NonPositiveStrength { .. }));
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let m = MeasurementModel::constant(pauli_z(), 1.0);
        let psi = [c(0.6), c(0.8)];
        let a = run_trajectory(&m, &psi, SignalStart::Fixed(0.0), &cfg(0.01, 200), 5, 3).unwrap();
        let b = run_trajectory(&m, &psi, SignalStart::Fixed(0.0), &cfg(0.01, 200), 5, 3).unwrap();
        assert_eq!(a, b);
        let other = run_trajectory(&m, &psi, SignalStart::Fixed(0.0), &cfg(0.01, 200), 5, 4).unwrap();
        assert_ne!(a.z, other.z);
    }

    #[test]
    fn ensemble_matches_individual_runs() {
        let m = MeasurementModel::constant(pauli_z(), 1.0);
        let psi = [c(0.6), c(0.8)];
        let start = SignalStart::Gaussian { mean: 0.0, std: 0.2 };
        let ens = run_ensemble(&m, &psi, start, &cfg(0.01, 50), 9, 8).unwrap();
        for (i, t) in ens.iter().enumerate() {
            assert_eq!(t, &run_trajectory(&m, &psi, start, &cfg(0.01, 50), 9, i as u64).unwrap());
        }
    }

    #[test]
    fn norms_stay_unit() {
        let mut m = MeasurementModel::constant(HermMatrix::from_diag(&[1.0, 0.0, -0.5]), 3.0);
        m.hamiltonian = HermMatrix::from_real(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let psi = [c(0.5), c(0.5), c(0.5f64.sqrt())];
        let t = run_trajectory(&m, &psi, SignalStart::Fixed(0.0), &cfg(0.001, 1000), 1, 0).unwrap();
        for p in &t.psi {
            assert!((norm_sqr(p) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_trajectory_reconstruction_is_a_pure_projector() {
        let m = MeasurementModel::constant(pauli_z(), 1.0);
        let psi = [c(0.6), c(0.8)];
        let t = run_trajectory(&m, &psi, SignalStart::Fixed(0.0), &cfg(0.01, 100), 2, 0).unwrap();
        let axis = Axis::new(-5.0, 5.0, 101).unwrap();
        let s = ensemble_to_hybrid(std::slice::from_ref(&t), axis, 1.0).unwrap();
        assert_abs_diff_eq!(s.total_trace(), 1.0, epsilon = 1e-12);
        let occupied: Vec<_> = (0..101).filter(|&i| s.cell(i, 0)[0].norm() + s.cell(i, 0)[3].norm() > 0.0).collect();
        assert_eq!(occupied.len(), 1);
        assert_abs_diff_eq!(s.purity_of_marginal(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn too_many_outside_samples_abort() {
        let m = MeasurementModel::constant(pauli_z(), 1.0);
        let t = run_trajectory(&m, &[c(1.0), c(0.0)], SignalStart::Fixed(10.0), &cfg(0.01, 10), 2, 0).unwrap();
        let axis = Axis::new(-1.0, 1.0, 11).unwrap();
        assert!(matches!(ensemble_to_hybrid(&[t], axis, 0.1), Err(CqError::OutsideGrid { .. })));
    }

    #[test]
    fn union_average_is_weighted_average() {
        let m = MeasurementModel::constant(pauli_z(), 1.0);
        let psi = [c(0.6), c(0.8)];
        let start = SignalStart::Gaussian { mean: 0.0, std: 0.3 };
        let all = run_ensemble(&m, &psi, start, &cfg(0.01, 20), 4, 30).unwrap();
        let axis = Axis::new(-3.0, 3.0, 31).unwrap();
        let whole = ensemble_to_hybrid(&all, axis, 0.2).unwrap();
        let a = ensemble_to_hybrid(&all[..12], axis, 0.2).unwrap();
        let b = ensemble_to_hybrid(&all[12..], axis, 0.2).unwrap();
        for ((w, x), y) in whole.cells().iter().zip(a.cells()).zip(b.cells()) {
            let combined = (x * 12.0 + y * 18.0) / 30.0;
            assert!((w - combined).norm() <= 1e-14 * (1.0 + w.norm()));
        }
    }

    #[test]
    fn identity_measurement_does_not_decohere() {
        let m = MeasurementModel::constant(HermMatrix::identity(2).scale(0.7), 2.0);
        let psi = [c(0.6), c(0.8)];
        let ens = run_ensemble(&m, &psi, SignalStart::Fixed(0.0), &cfg(0.01, 100), 3, 200).unwrap();
        for t in &ens {
            assert_eq!(t.psi.last().unwrap(), &psi.to_vec());
        }
        let bins = Axis::new(-3.0, 3.0, 3).unwrap();
        let km = estimate_km_moments(&ens, bins, 0.01).unwrap();
        let mid = km.counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
        // standard error of the drift estimate is about 0.02 here
        assert!((km.drift[mid] - 0.7).abs() < 0.1);
    }

    #[test]
    fn grid_reference_matches_a_small_ensemble() {
        let m = MeasurementModel::constant(pauli_z(), 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = [c(h), c(h)];
        let start = SignalStart::Gaussian { mean: 0.0, std: 0.5 };
        let axis = Axis::new(-4.0, 4.0, 201).unwrap();
        let reference = measurement_grid_reference(&m, &psi, start, axis, 0.5).unwrap();
        assert_abs_diff_eq!(reference.total_trace(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(reference.p_moments().0, 0.0, epsilon = 1e-10);
        let trajs = run_ensemble(&m, &psi, start, &cfg(1e-3, 500), 3, 4000).unwrap();
        let ens = ensemble_to_hybrid(&trajs, axis, 0.5).unwrap();
        let l1 = coarse_l1(&ens.classical_marginal(), &reference.classical_marginal(), axis.spacing(), 10).unwrap();
        assert!(l1 < 0.08, "L1 = {l1}");
        assert!(measurement_grid_reference(&m, &psi, SignalStart::Fixed(0.0), axis, 0.5).is_err());
    }
}
