//! Finite-difference generator of the continuous hybrid master equation
//!
//! ```text
//! ∂ϱ/∂t = {H_c, ϱ} − (i/ħ)[H_q, ϱ] + ½ ∂²_p(D2 ϱ)
//!         + ½(L ∂_pϱ + ∂_pϱ L) + D0 (L ϱ L − ½{L², ϱ}),   L = ∂V_I/∂q
//! ```
//!
//! on a phase-space grid, together with an RK4 stepper and a
//! branch-decomposed evaluation used as an oracle for models whose
//! operators share an eigenbasis.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CqError, Result};
use crate::model::CQModel;
use crate::psd::HermMatrix;
use crate::state::{fmt_f64, Axis, Boundary, HybridState, PhaseGrid, POSITIVITY_TOL};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const MAX_DIM: usize = 8;

/// Tolerance used when auditing the model couplings on the grid.
pub const CP_AUDIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
struct Stencil {
    len: usize,
    taps: [(usize, f64); 4],
}

impl Stencil {
    fn new(taps: &[(usize, f64)]) -> Self {
        let mut t = [(0, 0.0); 4];
        t[..taps.len()].copy_from_slice(taps);
        Stencil { len: taps.len(), taps: t }
    }

    fn taps(&self) -> &[(usize, f64)] {
        &self.taps[..self.len]
    }
}

/// Second-order first-derivative stencils (unscaled by the spacing).
fn first_derivative_stencils(n: usize, boundary: Boundary) -> Vec<Stencil> {
    (0..n)
        .map(|i| match boundary {
            Boundary::Periodic => Stencil::new(&[((i + n - 1) % n, -0.5), ((i + 1) % n, 0.5)]),
            Boundary::Truncate if i == 0 => Stencil::new(&[(0, -1.5), (1, 2.0), (2, -0.5)]),
            Boundary::Truncate if i == n - 1 => Stencil::new(&[(n - 1, 1.5), (n - 2, -2.0), (n - 3, 0.5)]),
            Boundary::Truncate => Stencil::new(&[(i - 1, -0.5), (i + 1, 0.5)]),
        })
        .collect()
}

/// Second-order second-derivative stencils (unscaled by the spacing²).
fn second_derivative_stencils(n: usize, boundary: Boundary) -> Vec<Stencil> {
    (0..n)
        .map(|i| match boundary {
            Boundary::Periodic => Stencil::new(&[((i + n - 1) % n, 1.0), (i, -2.0), ((i + 1) % n, 1.0)]),
            Boundary::Truncate if i == 0 && n >= 4 => Stencil::new(&[(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)]),
            Boundary::Truncate if i == n - 1 && n >= 4 => {
                Stencil::new(&[(n - 1, 2.0), (n - 2, -5.0), (n - 3, 4.0), (n - 4, -1.0)])
            }
            Boundary::Truncate if i == 0 => Stencil::new(&[(0, 1.0), (1, -2.0), (2, 1.0)]),
            Boundary::Truncate if i == n - 1 => Stencil::new(&[(n - 3, 1.0), (n - 2, -2.0), (n - 1, 1.0)]),
            Boundary::Truncate => Stencil::new(&[(i - 1, 1.0), (i, -2.0), (i + 1, 1.0)]),
        })
        .collect()
}

/// Finite-difference machinery shared by the full and branch generators.
#[derive(Debug, Clone)]
struct Stencils {
    grid: PhaseGrid,
    dq: Vec<Stencil>,
    dp: Vec<Stencil>,
    dpp: Vec<Stencil>,
    inv_hq: f64,
    inv_hp: f64,
    inv_hp2: f64,
}

impl Stencils {
    fn new(grid: PhaseGrid) -> Result<Self> {
        if !grid.has_stencil() {
            return Err(CqError::InvalidInput(
                "the generator needs at least 3 points on both axes".into(),
            ));
        }
        let hq = grid.q.spacing();
        let hp = grid.p.spacing();
        Ok(Stencils {
            grid,
            dq: first_derivative_stencils(grid.q.count, grid.boundary),
            dp: first_derivative_stencils(grid.p.count, grid.boundary),
            dpp: second_derivative_stencils(grid.p.count, grid.boundary),
            inv_hq: 1.0 / hq,
            inv_hp: 1.0 / hp,
            inv_hp2: 1.0 / (hp * hp),
        })
    }

    /// Writes `∂_q`, `∂_p` and `∂²_p` of cell `(iq, ip)` into the buffers.
    fn derivatives(
        &self,
        cells: &[Complex64],
        n: usize,
        iq: usize,
        ip: usize,
        dq: &mut [Complex64],
        dp: &mut [Complex64],
        dpp: &mut [Complex64],
    ) {
        let np = self.grid.p.count;
        dq[..n].fill(ZERO);
        dp[..n].fill(ZERO);
        dpp[..n].fill(ZERO);
        for &(j, w) in self.dq[iq].taps() {
            let src = &cells[(j * np + ip) * n..][..n];
            let w = w * self.inv_hq;
            dq[..n].iter_mut().zip(src).for_each(|(o, x)| *o += x * w);
        }
        for &(j, w) in self.dp[ip].taps() {
            let src = &cells[(iq * np + j) * n..][..n];
            let w = w * self.inv_hp;
            dp[..n].iter_mut().zip(src).for_each(|(o, x)| *o += x * w);
        }
        for &(j, w) in self.dpp[ip].taps() {
            let src = &cells[(iq * np + j) * n..][..n];
            let w = w * self.inv_hp2;
            dpp[..n].iter_mut().zip(src).for_each(|(o, x)| *o += x * w);
        }
    }
}

/// `out = a · b` for row-major `d × d` blocks.
fn matmul(a: &[Complex64], b: &[Complex64], out: &mut [Complex64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = ZERO;
            for k in 0..d {
                acc += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

fn flat(m: &HermMatrix) -> Vec<Complex64> {
    m.matrix().transpose().iter().copied().collect()
}

fn is_zero(m: &[Complex64]) -> bool {
    m.iter().all(|z| *z == ZERO)
}

/// The assembled hybrid generator for one model on one grid.
#[derive(Debug, Clone)]
pub struct Generator {
    model: CQModel,
    stencils: Stencils,
    dim: usize,
    h: Vec<Complex64>,
    h_active: bool,
    force_grad: Vec<f64>,
    d2: Vec<f64>,
    d0: Vec<f64>,
    lindblad: Vec<Vec<Complex64>>,
    lindblad_sq: Vec<Vec<Complex64>>,
    lindblad_active: Vec<bool>,
    velocity: Vec<f64>,
}

impl Generator {
    /// Validates the model (including the complete-positivity audit at
    /// every q node of the grid) and precomputes per-node coefficients.
    pub fn new(model: &CQModel, grid: PhaseGrid) -> Result<Self> {
        let stencils = Stencils::new(grid)?;
        let dim = model.dim();
        if dim > MAX_DIM {
            return Err(CqError::InvalidInput(format!("Hilbert dimension {dim} exceeds {MAX_DIM}")));
        }
        let qs = grid.q.values();
        model.validate(&qs, CP_AUDIT_TOL)?;
        let h = flat(&model.h_quantum);
        let lind_poly = model.interaction.derivative();
        let mut lindblad = Vec::with_capacity(qs.len());
        let mut lindblad_sq = Vec::with_capacity(qs.len());
        for &q in &qs {
            let l = lind_poly.eval(q);
            let l2 = HermMatrix::symmetrized(l.matrix() * l.matrix());
            lindblad.push(flat(&l));
            lindblad_sq.push(flat(&l2));
        }
        let lindblad_active = lindblad.iter().map(|l| !is_zero(l)).collect();
        Ok(Generator {
            model: model.clone(),
            dim,
            h_active: !is_zero(&h),
            h,
            force_grad: qs.iter().map(|&q| model.force_gradient(q)).collect(),
            d2: qs.iter().map(|&q| model.d2.eval(q)).collect(),
            d0: qs.iter().map(|&q| model.d0.eval(q)).collect(),
            lindblad,
            lindblad_sq,
            lindblad_active,
            velocity: grid.p.values().iter().map(|p| p / model.mass).collect(),
            stencils,
        })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.stencils.grid
    }

    pub fn model(&self) -> &CQModel {
        &self.model
    }

    fn check_state(&self, s: &HybridState) -> Result<()> {
        if s.grid() != self.grid() || s.dim() != self.dim {
            return Err(CqError::ShapeMismatch("state does not live on the generator's grid".into()));
        }
        Ok(())
    }

    /// `dϱ/dt` evaluated cellwise.
    pub fn apply(&self, s: &HybridState) -> Result<HybridState> {
        self.check_state(s)?;
        let rate = self.rate(s.cells());
        if rate.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(CqError::NonFinite("generator produced a non-finite rate".into()));
        }
        HybridState::from_cells(*self.grid(), self.dim, rate)
    }

    fn rate(&self, cells: &[Complex64]) -> Vec<Complex64> {
        let d = self.dim;
        let n = d * d;
        let np = self.grid().p.count;
        let mut out = vec![ZERO; cells.len()];
        let inv_hbar = 1.0 / self.model.hbar;
        out.par_chunks_mut(np * n).enumerate().for_each(|(iq, row)| {
            let mut dq = [ZERO; MAX_DIM * MAX_DIM];
            let mut dp = [ZERO; MAX_DIM * MAX_DIM];
            let mut dpp = [ZERO; MAX_DIM * MAX_DIM];
            let mut t1 = [ZERO; MAX_DIM * MAX_DIM];
            let mut t2 = [ZERO; MAX_DIM * MAX_DIM];
            let l = &self.lindblad[iq];
            let l2 = &self.lindblad_sq[iq];
            let (fg, d2, d0) = (self.force_grad[iq], self.d2[iq], self.d0[iq]);
            for ip in 0..np {
                let rho = &cells[(iq * np + ip) * n..][..n];
                let o = &mut row[ip * n..][..n];
                self.stencils.derivatives(cells, n, iq, ip, &mut dq, &mut dp, &mut dpp);
                let v = self.velocity[ip];
                // Poisson bracket and momentum diffusion
                for k in 0..n {
                    o[k] = dp[k] * fg - dq[k] * v + dpp[k] * (0.5 * d2);
                }
                if self.h_active {
                    matmul(&self.h, rho, &mut t1, d);
                    matmul(rho, &self.h, &mut t2, d);
                    for k in 0..n {
                        o[k] += Complex64::new(0.0, -inv_hbar) * (t1[k] - t2[k]);
                    }
                }
                if self.lindblad_active[iq] {
                    // back-reaction ½(L ∂_pϱ + ∂_pϱ L)
                    matmul(l, &dp, &mut t1, d);
                    matmul(&dp, l, &mut t2, d);
                    for k in 0..n {
                        o[k] += 0.5 * (t1[k] + t2[k]);
                    }
                    if d0 != 0.0 {
                        matmul(l, rho, &mut t1, d);
                        matmul(&t1[..n], l, &mut t2, d);
                        for k in 0..n {
                            o[k] += d0 * t2[k];
                        }
                        matmul(l2, rho, &mut t1, d);
                        matmul(rho, l2, &mut t2, d);
                        for k in 0..n {
                            o[k] -= 0.5 * d0 * (t1[k] + t2[k]);
                        }
                    }
                }
            }
        });
        out
    }

    /// Largest stable RK4 step, `safety · min(Δp²/D2, Δp/|F|, Δq·m/|p|,
    /// ħ/‖H_q‖, 1/(D0‖L‖²))` over the grid.
    pub fn stability_limit(&self, safety: f64) -> f64 {
        let g = self.grid();
        let hp = g.p.spacing();
        let hq = g.q.spacing();
        let mut limit = f64::INFINITY;
        for iq in 0..g.q.count {
            let lnorm = self.lindblad[iq].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if self.d2[iq] > 0.0 {
                limit = limit.min(hp * hp / self.d2[iq]);
            }
            let force = self.force_grad[iq].abs() + lnorm;
            if force > 0.0 {
                limit = limit.min(hp / force);
            }
            let rate = self.d0[iq] * lnorm * lnorm;
            if rate > 0.0 {
                limit = limit.min(1.0 / rate);
            }
        }
        let vmax = self.velocity.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if vmax > 0.0 {
            limit = limit.min(hq / vmax);
        }
        let hnorm = self.h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if hnorm > 0.0 {
            limit = limit.min(self.model.hbar / hnorm);
        }
        safety * limit
    }

    /// One classical fourth-order Runge-Kutta step.
    pub fn step_rk4(&self, s: &HybridState, dt: f64) -> Result<HybridState> {
        self.check_state(s)?;
        let limit = self.stability_limit(STABILITY_SAFETY);
        if !(dt > 0.0) || dt > limit {
            return Err(CqError::StepTooLarge { dt, limit });
        }
        let next = rk4(s.cells(), dt, |y| self.rate(y));
        let out = HybridState::from_cells(*self.grid(), self.dim, next)?;
        if !out.is_finite() {
            return Err(CqError::NonFinite("RK4 step produced a non-finite state".into()));
        }
        Ok(out)
    }
}

pub const STABILITY_SAFETY: f64 = 0.9;

pub fn rk4<F>(y: &[Complex64], dt: f64, f: F) -> Vec<Complex64>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let axpy = |a: &[Complex64], k: &[Complex64], h: f64| -> Vec<Complex64> {
        a.iter().zip(k).map(|(x, k)| x + k * h).collect()
    };
    let k1 = f(y);
    let k2 = f(&axpy(y, &k1, 0.5 * dt));
    let k3 = f(&axpy(y, &k2, 0.5 * dt));
    let k4 = f(&axpy(y, &k3, dt));
    y.iter()
        .enumerate()
        .map(|(i, x)| x + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0))
        .collect()
}

/// `apply_generator` without keeping the assembled generator around.
pub fn apply_generator(model: &CQModel, s: &HybridState) -> Result<HybridState> {
    Generator::new(model, *s.grid())?.apply(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Diagnostics are recorded every `stride` steps (and at the end).
    pub stride: usize,
    pub positivity_tol: f64,
    pub trace_tol: f64,
    pub leak_tol: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { stride: 10, positivity_tol: POSITIVITY_TOL, trace_tol: 1e-6, leak_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub trace: f64,
    pub min_eig: f64,
    pub purity: f64,
    pub mean_p: f64,
    pub var_p: f64,
    pub coh_01: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvolutionDiagnostics {
    pub rows: Vec<DiagnosticRow>,
}

impl EvolutionDiagnostics {
    fn record(&mut self, t: f64, s: &HybridState) -> DiagnosticRow {
        let (mean_p, var_p) = s.p_moments();
        let row = DiagnosticRow {
            t,
            trace: s.total_trace(),
            min_eig: s.min_cell_eigenvalue(),
            purity: s.purity_of_marginal(),
            mean_p,
            var_p,
            coh_01: if s.dim() > 1 { s.coherence_norm(0, 1) } else { 0.0 },
        };
        self.rows.push(row);
        row
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("t,trace,min_eig,purity,mean_p,var_p,coh_01\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt_f64(r.t),
                fmt_f64(r.trace),
                fmt_f64(r.min_eig),
                fmt_f64(r.purity),
                fmt_f64(r.mean_p),
                fmt_f64(r.var_p),
                fmt_f64(r.coh_01)
            );
        }
        out
    }
}

/// Repeated RK4 steps to `t_final`. The step is shrunk so that an integer
/// number of steps lands exactly on `t_final`.
pub fn evolve(
    generator: &Generator,
    s0: &HybridState,
    t_final: f64,
    dt: f64,
    opts: &EvolveOptions,
) -> Result<(HybridState, EvolutionDiagnostics)> {
    if !(t_final >= 0.0 && dt > 0.0) {
        return Err(CqError::InvalidInput(format!("need t_final >= 0 and dt > 0, got {t_final}, {dt}")));
    }
    let n_steps = (t_final / dt - 1e-9).ceil().max(0.0) as usize;
    let h = if n_steps == 0 { 0.0 } else { t_final / n_steps as f64 };
    let stride = opts.stride.max(1);
    let mut diag = EvolutionDiagnostics::default();
    let trace0 = s0.total_trace();
    diag.record(0.0, s0);
    let mut s = s0.clone();
    for step in 1..=n_steps {
        s = generator.step_rk4(&s, h)?;
        let t = step as f64 * h;
        let trace = s.total_trace();
        let drift = (trace - trace0).abs() / trace0.abs().max(f64::MIN_POSITIVE);
        if drift > opts.trace_tol {
            return Err(CqError::TraceDrift { t, trace, drift });
        }
        if step % stride == 0 || step == n_steps {
            let row = diag.record(t, &s);
            if row.min_eig < -10.0 * opts.positivity_tol {
                return Err(CqError::Negativity { t, min_eig: row.min_eig });
            }
            let leaked = s.boundary_mass();
            if leaked > opts.leak_tol {
                return Err(CqError::BoundaryLeak { t, mass: leaked });
            }
        }
    }
    Ok((s, diag))
}

/// Evaluation of the generator in the common eigenbasis of `H_q` and
/// `V_I(q)`: each matrix element `ϱ_ab` moves under the branch-averaged
/// force, picks up the phase `(h_a − h_b)/ħ` and decays at
/// `(D0/2)(l_a − l_b)²`.
#[derive(Debug, Clone)]
pub struct BranchGenerator {
    stencils: Stencils,
    dim: usize,
    hbar: f64,
    basis: DMatrix<Complex64>,
    energies: Vec<f64>,
    force_grad: Vec<f64>,
    d2: Vec<f64>,
    d0: Vec<f64>,
    /// Eigenvalues of `∂V_I/∂q` per q node.
    slopes: Vec<Vec<f64>>,
    velocity: Vec<f64>,
}

impl BranchGenerator {
    pub fn new(model: &CQModel, grid: PhaseGrid) -> Result<Self> {
        let stencils = Stencils::new(grid)?;
        let qs = grid.q.values();
        model.validate(&qs, CP_AUDIT_TOL)?;
        let d = model.dim();
        let basis = common_eigenbasis(model)?;
        let diag_in_basis = |m: &HermMatrix, what: &str| -> Result<Vec<f64>> {
            let t = basis.adjoint() * m.matrix() * &basis;
            let scale = 1.0 + t.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for i in 0..d {
                for j in 0..d {
                    if i != j && t[(i, j)].norm() > 1e-10 * scale {
                        return Err(CqError::NonCommuting(format!(
                            "{what} has off-diagonal element {:e} in the common basis",
                            t[(i, j)].norm()
                        )));
                    }
                }
            }
            Ok((0..d).map(|i| t[(i, i)].re).collect())
        };
        let energies = diag_in_basis(&model.h_quantum, "H_q")?;
        let lind = model.interaction.derivative();
        let mut slopes = Vec::with_capacity(qs.len());
        for &q in &qs {
            diag_in_basis(&model.interaction.eval(q), "V_I(q)")?;
            slopes.push(diag_in_basis(&lind.eval(q), "dV_I/dq")?);
        }
        Ok(BranchGenerator {
            stencils,
            dim: d,
            hbar: model.hbar,
            basis,
            energies,
            force_grad: qs.iter().map(|&q| model.force_gradient(q)).collect(),
            d2: qs.iter().map(|&q| model.d2.eval(q)).collect(),
            d0: qs.iter().map(|&q| model.d0.eval(q)).collect(),
            slopes,
            velocity: grid.p.values().iter().map(|p| p / model.mass).collect(),
        })
    }

    pub fn basis(&self) -> &DMatrix<Complex64> {
        &self.basis
    }

    fn conjugate_cells(&self, cells: &[Complex64], to_eigenbasis: bool) -> Vec<Complex64> {
        let d = self.dim;
        let (left, right) = if to_eigenbasis {
            (self.basis.adjoint(), self.basis.clone())
        } else {
            (self.basis.clone(), self.basis.adjoint())
        };
        cells
            .chunks(d * d)
            .flat_map(|c| {
                let m = DMatrix::from_row_slice(d, d, c);
                let t = &left * m * &right;
                t.transpose().iter().copied().collect::<Vec<_>>()
            })
            .collect()
    }

    fn rate_in_eigenbasis(&self, cells: &[Complex64]) -> Vec<Complex64> {
        let d = self.dim;
        let n = d * d;
        let np = self.stencils.grid.p.count;
        let mut out = vec![ZERO; cells.len()];
        out.par_chunks_mut(np * n).enumerate().for_each(|(iq, row)| {
            let mut dq = [ZERO; MAX_DIM * MAX_DIM];
            let mut dp = [ZERO; MAX_DIM * MAX_DIM];
            let mut dpp = [ZERO; MAX_DIM * MAX_DIM];
            let l = &self.slopes[iq];
            for ip in 0..np {
                let rho = &cells[(iq * np + ip) * n..][..n];
                self.stencils.derivatives(cells, n, iq, ip, &mut dq, &mut dp, &mut dpp);
                for a in 0..d {
                    for b in 0..d {
                        let k = a * d + b;
                        let force_grad = self.force_grad[iq] + 0.5 * (l[a] + l[b]);
                        let phase = Complex64::new(0.0, -(self.energies[a] - self.energies[b]) / self.hbar);
                        let damping = 0.5 * self.d0[iq] * (l[a] - l[b]).powi(2);
                        row[ip * n + k] = dp[k] * force_grad - dq[k] * self.velocity[ip]
                            + dpp[k] * (0.5 * self.d2[iq])
                            + (phase - damping) * rho[k];
                    }
                }
            }
        });
        out
    }

    pub fn apply(&self, s: &HybridState) -> Result<HybridState> {
        if s.grid() != &self.stencils.grid || s.dim() != self.dim {
            return Err(CqError::ShapeMismatch("state does not live on the generator's grid".into()));
        }
        let eig = self.conjugate_cells(s.cells(), true);
        let rate = self.rate_in_eigenbasis(&eig);
        HybridState::from_cells(self.stencils.grid, self.dim, self.conjugate_cells(&rate, false))
    }

    /// RK4 step carried out entirely in the eigenbasis.
    pub fn step_rk4(&self, s: &HybridState, dt: f64) -> Result<HybridState> {
        let eig = self.conjugate_cells(s.cells(), true);
        let next = rk4(&eig, dt, |y| self.rate_in_eigenbasis(y));
        HybridState::from_cells(self.stencils.grid, self.dim, self.conjugate_cells(&next, false))
    }
}

/// A basis diagonalizing `H_q` and every coefficient of `V_I`, found by
/// diagonalizing a generic real combination of them. Models that are
/// already diagonal keep the computational basis and its ordering.
pub(crate) fn common_eigenbasis(model: &CQModel) -> Result<DMatrix<Complex64>> {
    let d = model.dim();
    let mut ops: Vec<&HermMatrix> = vec![&model.h_quantum];
    ops.extend(model.interaction.coeffs());
    let mut combo = DMatrix::<Complex64>::zeros(d, d);
    for (j, op) in ops.iter().enumerate() {
        let norm = op.spectral_radius();
        if norm > 0.0 {
            // incommensurate weights keep accidental degeneracies away
            let w = (1.0 + j as f64 * std::f64::consts::SQRT_2).fract() + 0.5;
            combo += op.matrix() * Complex64::new(w / norm, 0.0);
        }
    }
    for (i, a) in ops.iter().enumerate() {
        for b in &ops[i + 1..] {
            let comm = a.matrix() * b.matrix() - b.matrix() * a.matrix();
            let scale = 1.0 + a.spectral_radius() * b.spectral_radius();
            if comm.iter().any(|z| z.norm() > 1e-10 * scale) {
                return Err(CqError::NonCommuting("H_q and the coefficients of V_I do not commute".into()));
            }
        }
    }
    let offdiag = |m: &HermMatrix| {
        let a = m.matrix();
        (0..d).any(|i| (0..d).any(|j| i != j && a[(i, j)].norm() > 0.0))
    };
    if !ops.iter().any(|op| offdiag(op)) {
        return Ok(DMatrix::identity(d, d));
    }
    let basis = HermMatrix::symmetrized(combo).eigen().vectors;
    Ok(basis)
}

/// Convenience grid for tests and scenarios: `count × count` points.
pub fn square_grid(q: (f64, f64, usize), p: (f64, f64, usize), boundary: Boundary) -> Result<PhaseGrid> {
    Ok(PhaseGrid::new(Axis::new(q.0, q.1, q.2)?, Axis::new(p.0, p.1, p.2)?, boundary))
}
