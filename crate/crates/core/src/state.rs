//! Discretized hybrid states: one un-normalized density matrix per
//! phase-space cell.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CqError, Result};
use crate::psd::HermMatrix;

/// Default absolute tolerance on the smallest cell eigenvalue.
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Truncate,
    Periodic,
}

/// Uniform axis of `count` points from `min` to `max` inclusive.
///
/// A single-point axis is "collapsed": it carries unit cell width and is
/// used when a state lives on one classical variable only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 3 {
            return Err(CqError::InvalidInput(format!(
                "axis needs at least 3 points for the stencil, got {count}"
            )));
        }
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(CqError::InvalidInput(format!("axis range [{min}, {max}] is empty")));
        }
        Ok(Axis { min, max, count })
    }

    pub fn point(value: f64) -> Self {
        Axis { min: value, max: value, count: 1 }
    }

    pub fn is_collapsed(&self) -> bool {
        self.count == 1
    }

    pub fn spacing(&self) -> f64 {
        if self.is_collapsed() {
            1.0
        } else {
            (self.max - self.min) / (self.count - 1) as f64
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }

    /// Index of the cell whose centre is nearest to `x`, if `x` falls within
    /// half a spacing of the axis.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if self.is_collapsed() {
            return Some(0);
        }
        let h = self.spacing();
        let idx = ((x - self.min) / h).round();
        if idx < 0.0 || idx >= self.count as f64 || !idx.is_finite() {
            None
        } else {
            Some(idx as usize)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub q: Axis,
    pub p: Axis,
    pub boundary: Boundary,
}

impl PhaseGrid {
    pub fn new(q: Axis, p: Axis, boundary: Boundary) -> Self {
        PhaseGrid { q, p, boundary }
    }

    /// Grid for a single classical signal `z` carried on the q-axis.
    pub fn signal(z: Axis) -> Self {
        PhaseGrid { q: z, p: Axis::point(0.0), boundary: Boundary::Truncate }
    }

    pub fn n_cells(&self) -> usize {
        self.q.count * self.p.count
    }

    pub fn cell_volume(&self) -> f64 {
        self.q.spacing() * self.p.spacing()
    }

    /// Flat index of cell `(iq, ip)`; p varies fastest.
    pub fn index(&self, iq: usize, ip: usize) -> usize {
        iq * self.p.count + ip
    }

    pub fn has_stencil(&self) -> bool {
        self.q.count >= 3 && self.p.count >= 3
    }
}

/// The discretized hybrid state. Cells are stored row-major, `d*d`
/// complex entries per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    grid: PhaseGrid,
    dim: usize,
    cells: Vec<Complex64>,
}

impl HybridState {
    pub fn zeros(grid: PhaseGrid, dim: usize) -> Self {
        HybridState { grid, dim, cells: vec![Complex64::new(0.0, 0.0); grid.n_cells() * dim * dim] }
    }

    pub fn from_cells(grid: PhaseGrid, dim: usize, cells: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || cells.len() != grid.n_cells() * dim * dim {
            return Err(CqError::ShapeMismatch(format!(
                "expected {} entries for {} cells of dimension {dim}, got {}",
                grid.n_cells() * dim * dim,
                grid.n_cells(),
                cells.len()
            )));
        }
        Ok(HybridState { grid, dim, cells })
    }

    /// `f(q, p) · rho` in every cell, normalized to unit total trace.
    pub fn product<F>(grid: PhaseGrid, density: F, rho: &HermMatrix) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64,
    {
        let d = rho.dim();
        let mut s = HybridState::zeros(grid, d);
        for iq in 0..grid.q.count {
            for ip in 0..grid.p.count {
                let w = density(grid.q.value(iq), grid.p.value(ip));
                let cell = s.cell_mut(iq, ip);
                for (c, r) in cell.iter_mut().zip(rho.matrix().transpose().iter()) {
                    *c = r * w;
                }
            }
        }
        s.normalize()
    }

    /// Pure product state `f(q, p) |psi><psi|`.
    pub fn pure_product<F>(grid: PhaseGrid, density: F, psi: &[Complex64]) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64,
    {
        Self::product(grid, density, &projector(psi))
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[Complex64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Complex64] {
        &mut self.cells
    }

    pub fn into_cells(self) -> Vec<Complex64> {
        self.cells
    }

    pub fn cell(&self, iq: usize, ip: usize) -> &[Complex64] {
        let n = self.dim * self.dim;
        let k = self.grid.index(iq, ip) * n;
        &self.cells[k..k + n]
    }

    pub fn cell_mut(&mut self, iq: usize, ip: usize) -> &mut [Complex64] {
        let n = self.dim * self.dim;
        let k = self.grid.index(iq, ip) * n;
        &mut self.cells[k..k + n]
    }

    pub fn cell_matrix(&self, iq: usize, ip: usize) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.dim, self.dim, self.cell(iq, ip))
    }

    fn cell_slices(&self) -> impl Iterator<Item = &[Complex64]> {
        self.cells.chunks(self.dim * self.dim)
    }

    fn cell_trace(&self, cell: &[Complex64]) -> f64 {
        (0..self.dim).map(|i| cell[i * self.dim + i].re).sum()
    }

    /// `Σ Tr ϱ(z) · cell_volume`.
    pub fn total_trace(&self) -> f64 {
        self.cell_slices().map(|c| self.cell_trace(c)).sum::<f64>() * self.grid.cell_volume()
    }

    /// `Tr ϱ(z)` per cell in flat grid order.
    pub fn classical_marginal(&self) -> Vec<f64> {
        self.cell_slices().map(|c| self.cell_trace(c)).collect()
    }

    /// Density of q alone: the classical marginal integrated over p.
    pub fn marginal_q(&self) -> Vec<f64> {
        let g = &self.grid;
        let m = self.classical_marginal();
        (0..g.q.count)
            .map(|iq| (0..g.p.count).map(|ip| m[g.index(iq, ip)]).sum::<f64>() * g.p.spacing())
            .collect()
    }

    /// Density of p alone.
    pub fn marginal_p(&self) -> Vec<f64> {
        let g = &self.grid;
        let m = self.classical_marginal();
        (0..g.p.count)
            .map(|ip| (0..g.q.count).map(|iq| m[g.index(iq, ip)]).sum::<f64>() * g.q.spacing())
            .collect()
    }

    /// `Σ ϱ(z) · cell_volume`.
    pub fn quantum_marginal(&self) -> HermMatrix {
        let n = self.dim * self.dim;
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for c in self.cell_slices() {
            for (a, x) in acc.iter_mut().zip(c) {
                *a += x;
            }
        }
        let vol = self.grid.cell_volume();
        HermMatrix::symmetrized(DMatrix::from_row_slice(self.dim, self.dim, &acc).map(|z| z * vol))
    }

    /// `Tr ρ²` of the normalized quantum marginal.
    pub fn purity_of_marginal(&self) -> f64 {
        let rho = self.quantum_marginal();
        let tr = self.total_trace();
        if tr == 0.0 {
            return 0.0;
        }
        let m = rho.matrix();
        m.iter().map(|z| z.norm_sqr()).sum::<f64>() / (tr * tr)
    }

    /// `|ϱ_ij(z)|` per cell.
    pub fn coherence(&self, i: usize, j: usize) -> Vec<f64> {
        let k = i * self.dim + j;
        self.cell_slices().map(|c| c[k].norm()).collect()
    }

    /// `Σ |ϱ_ij(z)| · cell_volume`.
    pub fn coherence_norm(&self, i: usize, j: usize) -> f64 {
        self.coherence(i, j).iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalize(mut self) -> Result<Self> {
        let tr = self.total_trace();
        if !(tr.is_finite() && tr > 0.0) {
            return Err(CqError::InvalidInput(format!("cannot normalize state with trace {tr}")));
        }
        self.cells.iter_mut().for_each(|c| *c /= tr);
        Ok(self)
    }

    pub fn scaled(&self, s: f64) -> Self {
        HybridState { grid: self.grid, dim: self.dim, cells: self.cells.iter().map(|c| c * s).collect() }
    }

    /// `Σ f(q, p) Tr(A ϱ(q, p)) · cell_volume`.
    pub fn expectation<F>(&self, f: F, a: &HermMatrix) -> Complex64
    where
        F: Fn(f64, f64) -> f64,
    {
        let d = self.dim;
        let am = a.matrix();
        let g = &self.grid;
        let mut total = Complex64::new(0.0, 0.0);
        for iq in 0..g.q.count {
            for ip in 0..g.p.count {
                let c = self.cell(iq, ip);
                let mut tr = Complex64::new(0.0, 0.0);
                for i in 0..d {
                    for k in 0..d {
                        tr += am[(i, k)] * c[k * d + i];
                    }
                }
                total += tr * f(g.q.value(iq), g.p.value(ip));
            }
        }
        total * g.cell_volume()
    }

    /// Mean and variance of p under the normalized classical marginal.
    pub fn p_moments(&self) -> (f64, f64) {
        moments(&self.marginal_p(), &self.grid.p.values())
    }

    pub fn q_moments(&self) -> (f64, f64) {
        moments(&self.marginal_q(), &self.grid.q.values())
    }

    /// Largest `|ϱ_ij − conj ϱ_ji|` over all cells.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim;
        self.cell_slices()
            .map(|c| {
                let mut worst: f64 = 0.0;
                for i in 0..d {
                    for j in 0..=i {
                        worst = worst.max((c[i * d + j] - c[j * d + i].conj()).norm());
                    }
                }
                worst
            })
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue over all cells.
    pub fn min_cell_eigenvalue(&self) -> f64 {
        self.cell_slices().map(|c| min_eigenvalue(c, self.dim)).fold(f64::INFINITY, f64::min)
    }

    /// Trace mass sitting in the outermost cells of non-periodic axes.
    pub fn boundary_mass(&self) -> f64 {
        if self.grid.boundary == Boundary::Periodic {
            return 0.0;
        }
        let g = &self.grid;
        let m = self.classical_marginal();
        let mut mass = 0.0;
        for iq in 0..g.q.count {
            for ip in 0..g.p.count {
                let edge_q = !g.q.is_collapsed() && (iq == 0 || iq + 1 == g.q.count);
                let edge_p = !g.p.is_collapsed() && (ip == 0 || ip + 1 == g.p.count);
                if edge_q || edge_p {
                    mass += m[g.index(iq, ip)].abs();
                }
            }
        }
        mass * g.cell_volume()
    }

    pub fn is_finite(&self) -> bool {
        self.cells.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Columnar text dump: `#` header lines with grid metadata, then one row
    /// per cell with `q p` followed by `(re, im)` pairs of the row-major
    /// cell entries.
    pub fn to_columnar(&self, extra_header: &str) -> String {
        let g = &self.grid;
        let mut out = String::new();
        for line in extra_header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(
            out,
            "# grid q_min={} q_max={} q_count={} p_min={} p_max={} p_count={} boundary={:?} dim={}",
            fmt_f64(g.q.min),
            fmt_f64(g.q.max),
            g.q.count,
            fmt_f64(g.p.min),
            fmt_f64(g.p.max),
            g.p.count,
            g.boundary,
            self.dim
        );
        let mut cols = vec!["q".to_string(), "p".to_string()];
        for i in 0..self.dim {
            for j in 0..self.dim {
                cols.push(format!("re{i}{j}"));
                cols.push(format!("im{i}{j}"));
            }
        }
        let _ = writeln!(out, "{}", cols.join(","));
        for iq in 0..g.q.count {
            for ip in 0..g.p.count {
                let _ = write!(out, "{},{}", fmt_f64(g.q.value(iq)), fmt_f64(g.p.value(ip)));
                for z in self.cell(iq, ip) {
                    let _ = write!(out, ",{},{}", fmt_f64(z.re), fmt_f64(z.im));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses the output of [`HybridState::to_columnar`].
    pub fn from_columnar(text: &str) -> Result<Self> {
        let bad = |msg: String| CqError::InvalidInput(format!("columnar state: {msg}"));
        let header = text
            .lines()
            .find_map(|l| l.strip_prefix("# grid "))
            .ok_or_else(|| bad("missing grid header".into()))?;
        let mut fields = std::collections::HashMap::new();
        for kv in header.split_whitespace() {
            if let Some((k, v)) = kv.split_once('=') {
                fields.insert(k, v);
            }
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .ok_or_else(|| bad(format!("missing {k}")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("{k}: {e}")))
        };
        let count = |k: &str| -> Result<usize> { Ok(num(k)? as usize) };
        let axis = |lo: f64, hi: f64, n: usize| Axis { min: lo, max: hi, count: n };
        let boundary = match fields.get("boundary").copied() {
            Some("Periodic") => Boundary::Periodic,
            Some("Truncate") => Boundary::Truncate,
            other => return Err(bad(format!("unknown boundary {other:?}"))),
        };
        let grid = PhaseGrid {
            q: axis(num("q_min")?, num("q_max")?, count("q_count")?),
            p: axis(num("p_min")?, num("p_max")?, count("p_count")?),
            boundary,
        };
        let dim = count("dim")?;
        let mut cells = Vec::with_capacity(grid.n_cells() * dim * dim);
        for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .skip(2)
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("{e} in {line:?}"))))
                .collect::<Result<_>>()?;
            for pair in vals.chunks(2) {
                cells.push(Complex64::new(pair[0], *pair.get(1).unwrap_or(&0.0)));
            }
        }
        HybridState::from_cells(grid, dim, cells)
    }
}

/// L1 distance `Σ |a − b| h` between two densities sampled with spacing
/// `h`, after merging every `factor` consecutive cells (the last bin takes
/// any remainder).
pub fn coarse_l1(a: &[f64], b: &[f64], h: f64, factor: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CqError::ShapeMismatch(format!("densities have {} and {} cells", a.len(), b.len())));
    }
    let factor = factor.max(1);
    let nbins = (a.len() / factor).max(1);
    let mut total = 0.0;
    for bin in 0..nbins {
        let end = if bin + 1 == nbins { a.len() } else { (bin + 1) * factor };
        let diff: f64 = (bin * factor..end).map(|i| a[i] - b[i]).sum();
        total += diff.abs() * h;
    }
    Ok(total)
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn projector(psi: &[Complex64]) -> HermMatrix {
    let d = psi.len();
    HermMatrix::symmetrized(DMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj()))
}

fn moments(density: &[f64], x: &[f64]) -> (f64, f64) {
    let mass: f64 = density.iter().sum();
    let mean = density.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / mass;
    let var = density.iter().zip(x).map(|(w, x)| w * (x - mean).powi(2)).sum::<f64>() / mass;
    (mean, var)
}

/// Smallest eigenvalue of one row-major Hermitian cell.
pub fn min_eigenvalue(cell: &[Complex64], d: usize) -> f64 {
    match d {
        1 => cell[0].re,
        2 => {
            let a = cell[0].re;
            let b = cell[3].re;
            let off = 0.5 * (cell[1] + cell[2].conj());
            let mean = 0.5 * (a + b);
            let half_gap = (0.25 * (a - b) * (a - b) + off.norm_sqr()).sqrt();
            mean - half_gap
        }
        _ => HermMatrix::symmetrized(DMatrix::from_row_slice(d, d, cell)).min_eigenvalue(),
    }
}
