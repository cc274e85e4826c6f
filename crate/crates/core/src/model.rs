//! Model definitions for the hybrid master equation.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CqError, Result};
use crate::psd::{schur_cp_check, CouplingTriple, HermMatrix, Verdict};

/// Polynomial `Σ c_n q^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarPoly {
    pub coeffs: Vec<f64>,
}

impl ScalarPoly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        ScalarPoly { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        ScalarPoly { coeffs: vec![c] }
    }

    pub fn zero() -> Self {
        ScalarPoly { coeffs: vec![] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> ScalarPoly {
        ScalarPoly {
            coeffs: self.coeffs.iter().enumerate().skip(1).map(|(n, c)| n as f64 * c).collect(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().skip(1).all(|c| *c == 0.0)
    }
}

/// Hermitian-matrix polynomial `Σ A_n q^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPoly {
    dim: usize,
    coeffs: Vec<HermMatrix>,
}

impl MatrixPoly {
    pub fn new(dim: usize, coeffs: Vec<HermMatrix>) -> Result<Self> {
        if let Some(bad) = coeffs.iter().find(|c| c.dim() != dim) {
            return Err(CqError::ShapeMismatch(format!(
                "interaction coefficient is {}x{}, expected {dim}x{dim}",
                bad.dim(),
                bad.dim()
            )));
        }
        Ok(MatrixPoly { dim, coeffs })
    }

    pub fn zero(dim: usize) -> Self {
        MatrixPoly { dim, coeffs: vec![] }
    }

    /// `slope · q · op`.
    pub fn linear(op: &HermMatrix, slope: f64) -> Self {
        MatrixPoly { dim: op.dim(), coeffs: vec![HermMatrix::zeros(op.dim()), op.scale(slope)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[HermMatrix] {
        &self.coeffs
    }

    pub fn eval(&self, q: f64) -> HermMatrix {
        let mut acc = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        for c in self.coeffs.iter().rev() {
            acc = acc * Complex64::new(q, 0.0) + c.matrix();
        }
        HermMatrix::symmetrized(acc)
    }

    /// Analytic q-derivative.
    pub fn derivative(&self) -> MatrixPoly {
        MatrixPoly {
            dim: self.dim,
            coeffs: self.coeffs.iter().enumerate().skip(1).map(|(n, c)| c.scale(n as f64)).collect(),
        }
    }
}

/// One concrete continuous master equation: classical Hamiltonian
/// `p²/2m + V(q)`, quantum Hamiltonian, interaction `V_I(q)` whose
/// derivative is the Lindblad operator, momentum diffusion `D2(q)` and
/// Lindblad coupling `D0(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CQModel {
    pub mass: f64,
    pub potential: ScalarPoly,
    pub h_quantum: HermMatrix,
    pub interaction: MatrixPoly,
    pub d2: ScalarPoly,
    pub d0: ScalarPoly,
    pub hbar: f64,
}

impl CQModel {
    pub fn dim(&self) -> usize {
        self.h_quantum.dim()
    }

    pub fn interaction_at(&self, q: f64) -> HermMatrix {
        self.interaction.eval(q)
    }

    pub fn lindblad_at(&self, q: f64) -> HermMatrix {
        self.interaction.derivative().eval(q)
    }

    /// `∂H_c/∂q = V'(q)`.
    pub fn force_gradient(&self, q: f64) -> f64 {
        self.potential.derivative().eval(q)
    }

    /// The coupling triple at `q`. The back-reaction weight is 1/2 per
    /// Lindblad operator `L = ∂V_I/∂q`, and vanishes where `L` does.
    pub fn coupling_at(&self, q: f64) -> CouplingTriple {
        let l = self.lindblad_at(q);
        let coupled = l.matrix().iter().any(|z| z.norm() > 0.0);
        let d1 = if coupled { 0.5 } else { 0.0 };
        CouplingTriple::scalar(self.d2.eval(q), d1, self.d0.eval(q))
    }

    /// Checks parameters and audits complete positivity at every sample.
    pub fn validate(&self, q_samples: &[f64], tol: f64) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(CqError::InvalidInput(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(CqError::InvalidInput(format!("hbar must be positive, got {}", self.hbar)));
        }
        if self.interaction.dim() != self.dim() {
            return Err(CqError::ShapeMismatch(format!(
                "interaction is {0}x{0} but the quantum Hamiltonian is {1}x{1}",
                self.interaction.dim(),
                self.dim()
            )));
        }
        for &q in q_samples {
            let (d2, d0) = (self.d2.eval(q), self.d0.eval(q));
            if !(d2 >= 0.0 && d0 >= 0.0) {
                return Err(CqError::InvalidInput(format!(
                    "couplings must be non-negative, got D2 = {d2}, D0 = {d0} at q = {q}"
                )));
            }
            let report = schur_cp_check(&self.coupling_at(q), tol);
            if report.verdict == Verdict::Violated {
                return Err(CqError::NotCompletelyPositive {
                    q,
                    detail: format!(
                        "D2 = {d2}, D0 = {d0}, trade-off margin {:e}, support {}",
                        report.tradeoff_margin, report.support_ok
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Continuous measurement of `Z(z)` with strength `k(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub observable: MatrixPoly,
    pub strength: ScalarPoly,
    pub hamiltonian: HermMatrix,
    pub hbar: f64,
}

impl MeasurementModel {
    /// Constant-strength measurement of a fixed operator.
    pub fn constant(z: HermMatrix, k: f64) -> Self {
        let d = z.dim();
        MeasurementModel {
            observable: MatrixPoly::new(d, vec![z]).expect("dimension matches"),
            strength: ScalarPoly::constant(k),
            hamiltonian: HermMatrix::zeros(d),
            hbar: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn strength_at(&self, z: f64) -> Result<f64> {
        let k = self.strength.eval(z);
        if k > 0.0 && k.is_finite() {
            Ok(k)
        } else {
            Err(CqError::NonPositiveStrength { z, k })
        }
    }

    /// Couplings of the equivalent hybrid master equation:
    /// `D1 = 1/2`, `D0 = 2k`, `D2 = 1/(8k)`.
    pub fn coupling_at(&self, z: f64) -> Result<CouplingTriple> {
        let k = self.strength_at(z)?;
        Ok(CouplingTriple::scalar(1.0 / (8.0 * k), 0.5, 2.0 * k))
    }

    pub fn validate(&self, z_samples: &[f64]) -> Result<()> {
        if self.observable.dim() != self.dim() {
            return Err(CqError::ShapeMismatch("observable and Hamiltonian dimensions differ".into()));
        }
        if !(self.hbar > 0.0) {
            return Err(CqError::InvalidInput(format!("hbar must be positive, got {}", self.hbar)));
        }
        for &z in z_samples {
            self.strength_at(z)?;
        }
        Ok(())
    }

    /// The grid model whose momentum axis plays the signal: `V_I = −q Z`
    /// gives drift `+Z` on p, `D0 = 2k`, `D2 = 1/(8k)`. Only constant
    /// strength and a signal-independent observable are representable.
    pub fn as_grid_model(&self) -> Result<CQModel> {
        if !self.strength.is_constant() || self.observable.coeffs().len() > 1 {
            return Err(CqError::InvalidInput(
                "only constant strength and a fixed observable map onto the grid generator".into(),
            ));
        }
        let k = self.strength_at(0.0)?;
        let d = self.dim();
        let z = self.observable.coeffs().first().cloned().unwrap_or_else(|| HermMatrix::zeros(d));
        Ok(CQModel {
            mass: 1.0,
            potential: ScalarPoly::zero(),
            h_quantum: self.hamiltonian.clone(),
            interaction: MatrixPoly::linear(&z, -1.0),
            d2: ScalarPoly::constant(1.0 / (8.0 * k)),
            d0: ScalarPoly::constant(2.0 * k),
            hbar: self.hbar,
        })
    }
}

pub fn pauli_z() -> HermMatrix {
    HermMatrix::from_diag(&[1.0, -1.0])
}

pub fn pauli_x() -> HermMatrix {
    HermMatrix::from_real(&[vec![0.0, 1.0], vec![1.0, 0.0]]).expect("symmetric")
}
