//! Positive-semidefinite linear algebra for coupling audits.
//!
//! A continuous classical-quantum generator is completely positive exactly
//! when the block matrix
//!
//! ```text
//!     [ D2   D1 ]
//!     [ D1†  D0 ]
//! ```
//!
//! is positive semi-definite. Equivalently `D0 ⪰ 0`, the Schur complement
//! `D2 − D1 D0⁺ D1† ⪰ 0`, and `(I − D0 D0⁺) D1† = 0`. [`schur_cp_check`]
//! evaluates both routes so that disagreement shows up as a defect.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CqError, Result};

/// Absolute Hermiticity tolerance, scaled by `1 + max|entry|`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Relative eigenvalue cutoff for the generalized inverse.
pub const RANK_TOL: f64 = 1e-10;
/// Relative tolerance for declaring the trade-off saturated.
pub const SATURATION_TOL: f64 = 1e-9;

/// Complex Hermitian matrix. Construction checks Hermiticity and then
/// stores the exactly symmetrized matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermMatrix(DMatrix<Complex64>);

/// Eigen-decomposition with eigenvalues sorted ascending; column `i` of
/// `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct HermEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl HermMatrix {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(CqError::InvalidInput(format!(
                "Hermitian matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = 1.0 + m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let n = m.nrows();
        for i in 0..n {
            for j in 0..=i {
                let a = m[(i, j)];
                let b = m[(j, i)].conj();
                if !(a.re.is_finite() && a.im.is_finite()) {
                    return Err(CqError::InvalidInput(format!("non-finite entry at ({i}, {j})")));
                }
                if (a - b).norm() > HERMITIAN_TOL * scale {
                    return Err(CqError::InvalidInput(format!(
                        "matrix is not Hermitian: entry ({i}, {j}) differs from conj({j}, {i}) by {:e}",
                        (a - b).norm()
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Projects onto the Hermitian part without checking.
    pub fn symmetrized(m: DMatrix<Complex64>) -> Self {
        let h = (&m + m.adjoint()).scale(0.5);
        HermMatrix(h)
    }

    pub fn from_real(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(CqError::InvalidInput("rows of unequal length".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j], 0.0)))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        HermMatrix(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    pub fn scalar(x: f64) -> Self {
        Self::from_diag(&[x])
    }

    pub fn identity(n: usize) -> Self {
        HermMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        HermMatrix(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        HermMatrix(self.0.map(|z| z * s))
    }

    pub fn add(&self, other: &HermMatrix) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(CqError::ShapeMismatch(format!("{} vs {}", self.dim(), other.dim())));
        }
        Ok(HermMatrix(&self.0 + &other.0))
    }

    pub fn eigen(&self) -> HermEigen {
        let eig = self.0.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(self.dim(), self.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
        HermEigen { values, vectors }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().values[0]
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_radius(&self) -> f64 {
        self.eigen().values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// True iff the smallest eigenvalue is at least `−tol·(1 + spectral radius)`.
pub fn is_psd(m: &HermMatrix, tol: f64) -> bool {
    let vals = m.eigen().values;
    let radius = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    vals[0] >= -tol * (1.0 + radius)
}

/// Moore-Penrose inverse through the eigen-decomposition. Eigenvalues with
/// magnitude at most `rank_tol` times the largest magnitude are dropped.
pub fn pseudo_inverse(m: &HermMatrix, rank_tol: f64) -> HermMatrix {
    let HermEigen { values, vectors } = m.eigen();
    let largest = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let n = m.dim();
    let cutoff = rank_tol * largest;
    let inv_vals: Vec<f64> = values
        .iter()
        .map(|&v| if largest > 0.0 && v.abs() > cutoff { 1.0 / v } else { 0.0 })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |r, c| vectors[(r, c)] * inv_vals[c]);
    HermMatrix::symmetrized(scaled * vectors.adjoint())
}

/// The coupling matrices of a continuous generator at one classical point.
///
/// `d1` has one row per classical component and one column per Lindblad
/// operator.
#[derive(Debug, Clone)]
pub struct CouplingTriple {
    pub d2: HermMatrix,
    pub d1: DMatrix<Complex64>,
    pub d0: HermMatrix,
}

impl CouplingTriple {
    pub fn new(d2: HermMatrix, d1: DMatrix<Complex64>, d0: HermMatrix) -> Result<Self> {
        if d1.nrows() != d2.dim() || d1.ncols() != d0.dim() {
            return Err(CqError::ShapeMismatch(format!(
                "D1 is {}x{} but D2 is {}x{} and D0 is {}x{}",
                d1.nrows(),
                d1.ncols(),
                d2.dim(),
                d2.dim(),
                d0.dim(),
                d0.dim()
            )));
        }
        Ok(CouplingTriple { d2, d1, d0 })
    }

    /// One classical component coupled to one Lindblad operator.
    pub fn scalar(d2: f64, d1: f64, d0: f64) -> Self {
        CouplingTriple {
            d2: HermMatrix::scalar(d2),
            d1: DMatrix::from_element(1, 1, Complex64::new(d1, 0.0)),
            d0: HermMatrix::scalar(d0),
        }
    }

    /// Assembles `[[D2, D1], [D1†, D0]]`.
    pub fn block(&self) -> HermMatrix {
        let n = self.d2.dim();
        let m = self.d0.dim();
        let mut b = DMatrix::zeros(n + m, n + m);
        b.view_mut((0, 0), (n, n)).copy_from(self.d2.matrix());
        b.view_mut((0, n), (n, m)).copy_from(&self.d1);
        b.view_mut((n, 0), (m, n)).copy_from(&self.d1.adjoint());
        b.view_mut((n, n), (m, m)).copy_from(self.d0.matrix());
        HermMatrix::symmetrized(b)
    }

    /// `D2 − D1 D0⁺ D1†`.
    pub fn schur_complement(&self) -> HermMatrix {
        let d0_pinv = pseudo_inverse(&self.d0, RANK_TOL);
        let correction = &self.d1 * d0_pinv.matrix() * self.d1.adjoint();
        HermMatrix::symmetrized(self.d2.matrix() - correction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Violated,
    Satisfied,
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPReport {
    pub block_psd: bool,
    pub d0_psd: bool,
    pub d2_psd: bool,
    pub schur_ok: bool,
    pub support_ok: bool,
    pub tradeoff_margin: f64,
    pub verdict: Verdict,
}

impl CPReport {
    /// Verdict of the Schur-complement route alone.
    pub fn schur_route(&self) -> bool {
        self.d0_psd && self.schur_ok && self.support_ok
    }

    pub fn routes_agree(&self) -> bool {
        self.block_psd == self.schur_route()
    }
}

fn frobenius(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Audits a coupling triple by both the Schur route and the full block
/// eigenvalue route.
pub fn schur_cp_check(c: &CouplingTriple, tol: f64) -> CPReport {
    let d0_psd = is_psd(&c.d0, tol);
    let d2_psd = is_psd(&c.d2, tol);

    let schur = c.schur_complement();
    let schur_eig = schur.eigen().values;
    let margin = schur_eig[0];
    let schur_radius = schur_eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let scale = 1.0 + c.d2.spectral_radius() + schur_radius;
    let schur_ok = margin >= -tol * scale;

    let d0_pinv = pseudo_inverse(&c.d0, RANK_TOL);
    let m = c.d0.dim();
    let projector = DMatrix::<Complex64>::identity(m, m) - c.d0.matrix() * d0_pinv.matrix();
    let leak = frobenius(&(projector * c.d1.adjoint()));
    // a kernel leak of size ε shifts block eigenvalues by O(ε²)
    let support_ok = leak <= tol.sqrt() * (1.0 + frobenius(&c.d1));

    let block_psd = is_psd(&c.block(), tol);

    let all_pass = block_psd && d0_psd && schur_ok && support_ok;
    let sat_tol = SATURATION_TOL * (1.0 + c.d2.spectral_radius());
    let verdict = if !all_pass {
        Verdict::Violated
    } else if margin.abs() <= sat_tol {
        Verdict::Saturated
    } else {
        Verdict::Satisfied
    };

    CPReport {
        block_psd,
        d0_psd,
        d2_psd,
        schur_ok,
        support_ok,
        tradeoff_margin: margin,
        verdict,
    }
}

/// Decoherence-diffusion trade-off verdict. Saturation means
/// `D0 = D1† D2⁺ D1`: the decoherence is exactly the minimum the diffusion
/// permits.
pub fn tradeoff_verdict(c: &CouplingTriple, tol: f64) -> Verdict {
    let report = schur_cp_check(c, tol);
    if report.verdict == Verdict::Violated {
        return Verdict::Violated;
    }
    let d2_pinv = pseudo_inverse(&c.d2, RANK_TOL);
    let minimal = c.d1.adjoint() * d2_pinv.matrix() * &c.d1;
    let residual = frobenius(&(c.d0.matrix() - minimal));
    if residual <= SATURATION_TOL * (1.0 + c.d0.spectral_radius()) {
        Verdict::Saturated
    } else {
        Verdict::Satisfied
    }
}
