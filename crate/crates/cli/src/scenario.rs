//! Scenario files: TOML documents describing one run.

use std::fmt;

use cqdyn::action::BranchPair;
use cqdyn::model::{CQModel, MatrixPoly, MeasurementModel, ScalarPoly};
use cqdyn::psd::{CouplingTriple, HermMatrix};
use cqdyn::state::{Axis, Boundary, PhaseGrid};
use cqdyn::zerodim::{Monomial, QuadratureOptions, ToyParams};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunType {
    Evolve,
    Unravel,
    SamplePaths,
    ZeroDim,
    CpCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub run_type: RunType,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Real coupling blocks for a CP audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub d2: Matrix,
    pub d1: Matrix,
    pub d0: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub hbar: f64,
    /// Coefficients of `V(q)` in increasing powers.
    #[serde(default)]
    pub potential: Vec<f64>,
    pub h_quantum: Matrix,
    /// Coefficient matrices of `V_I(q)` in increasing powers.
    #[serde(default)]
    pub interaction: Vec<Matrix>,
    pub d2: Vec<f64>,
    #[serde(default)]
    pub d0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    /// Coefficient matrices of `Z(z)` in increasing powers.
    pub observable: Vec<Matrix>,
    /// Coefficients of `k(z)`.
    pub strength: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<Matrix>,
    #[serde(default = "one")]
    pub hbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub m_phi: f64,
    pub m_q: f64,
    pub lambda: f64,
    #[serde(default = "one")]
    pub hbar: f64,
    pub d2: f64,
    pub observables: Vec<String>,
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
    #[serde(default = "yes")]
    pub quadrature: bool,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_widths")]
    pub widths: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Absent for unraveling, whose signal lives on `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<AxisSpec>,
    pub p: AxisSpec,
    #[serde(default = "truncate")]
    pub boundary: Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub q_mean: f64,
    #[serde(default)]
    pub q_std: f64,
    #[serde(default)]
    pub p_mean: f64,
    #[serde(default)]
    pub p_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_im: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every path counts equally.
    Uniform,
    /// `exp(−fv_action)` for the configured branch pair.
    FeynmanVernon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trajectories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_pair: Option<[usize; 2]>,
    #[serde(default = "uniform")]
    pub weighting: Weighting,
    #[serde(default = "default_cp_tol")]
    pub cp_tol: f64,
    #[serde(default = "default_positivity_tol")]
    pub positivity_tol: f64,
    #[serde(default = "default_trace_tol")]
    pub trace_tol: f64,
    #[serde(default = "default_leak_tol")]
    pub leak_tol: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            dt: None,
            t_final: None,
            n_steps: None,
            n_trajectories: None,
            branch_pair: None,
            weighting: Weighting::Uniform,
            cp_tol: default_cp_tol(),
            positivity_tol: default_positivity_tol(),
            trace_tol: default_trace_tol(),
            leak_tol: default_leak_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Diagnostics and trajectory storage interval in steps.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Number of individual trajectories or paths to dump.
    #[serde(default)]
    pub paths: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { stride: default_stride(), paths: 0 }
    }
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn truncate() -> Boundary {
    Boundary::Truncate
}
fn uniform() -> Weighting {
    Weighting::Uniform
}
fn default_orders() -> Vec<usize> {
    vec![0, 1, 2]
}
fn default_theta() -> f64 {
    QuadratureOptions::default().theta
}
fn default_widths() -> f64 {
    QuadratureOptions::default().widths
}
fn default_cp_tol() -> f64 {
    1e-10
}
fn default_positivity_tol() -> f64 {
    1e-8
}
fn default_trace_tol() -> f64 {
    1e-6
}
fn default_leak_tol() -> f64 {
    1e-4
}
fn default_stride() -> usize {
    10
}

/// One problem in a scenario file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// All problems found in a scenario file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioErrors {}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `[section]` header or `key =` assignment named `key`.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        let header = l.strip_prefix('[').map(|r| r.trim_end().trim_end_matches(']').trim());
        header == Some(key) || l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioErrors> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        let mut message = e.message().trim().to_string();
        let snippet = e.span().and_then(|s| text.get(s)).map(str::trim).unwrap_or("");
        if !snippet.is_empty() && !snippet.contains('\n') && !message.contains(snippet) {
            message = format!("{message}: `{snippet}`");
        }
        ScenarioErrors(vec![ScenarioError { line, message }])
    })?;
    let errors = scenario.problems();
    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioErrors(
            errors
                .into_iter()
                .map(|(key, message)| ScenarioError { line: line_of_key(text, key), message })
                .collect(),
        ))
    }
}

impl Scenario {
    /// The scenario with every default filled in, as TOML.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Semantic problems, each keyed by the section or key to blame.
    fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let blocks = [
            ("coupling", self.coupling.is_some(), RunType::CpCheck),
            ("measurement", self.measurement.is_some(), RunType::Unravel),
            ("toy", self.toy.is_some(), RunType::ZeroDim),
        ];
        let wanted_model = matches!(self.run_type, RunType::Evolve | RunType::SamplePaths);
        if wanted_model != self.model.is_some() {
            out.push(("model", block_message("model", wanted_model, self.run_type)));
        }
        for (name, present, owner) in blocks {
            if present != (self.run_type == owner) {
                out.push((name, block_message(name, !present, self.run_type)));
            }
        }
        let n = &self.numerics;
        for (key, v) in [
            ("cp_tol", n.cp_tol),
            ("positivity_tol", n.positivity_tol),
            ("trace_tol", n.trace_tol),
            ("leak_tol", n.leak_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push((key, format!("{key} must be positive, got {v}")));
            }
        }
        if let Some(dt) = n.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                out.push(("dt", format!("dt must be positive, got {dt}")));
            }
        }
        if self.output.stride == 0 {
            out.push(("stride", "stride must be at least 1".into()));
        }
        let need = |out: &mut Vec<(&'static str, String)>, key: &'static str, present: bool| {
            if !present {
                out.push((key, format!("{key} is required for run_type {:?}", self.run_type)));
            }
        };
        match self.run_type {
            RunType::Evolve => {
                need(&mut out, "t_final", n.t_final.is_some());
                need(&mut out, "grid", self.grid.as_ref().is_some_and(|g| g.q.is_some()));
                need(&mut out, "initial", self.initial.is_some());
            }
            RunType::Unravel => {
                need(&mut out, "dt", n.dt.is_some());
                need(&mut out, "n_steps", n.n_steps.is_some());
                need(&mut out, "n_trajectories", n.n_trajectories.is_some());
                need(&mut out, "initial", self.initial.as_ref().is_some_and(|i| i.psi.is_some()));
                need(&mut out, "grid", self.grid.is_some());
                if self.grid.as_ref().is_some_and(|g| g.q.is_some()) {
                    out.push(("grid", "unraveling uses only the signal axis grid.p".into()));
                }
            }
            RunType::SamplePaths => {
                need(&mut out, "dt", n.dt.is_some());
                need(&mut out, "n_steps", n.n_steps.is_some());
                need(&mut out, "n_trajectories", n.n_trajectories.is_some());
                if n.weighting == Weighting::FeynmanVernon {
                    need(&mut out, "branch_pair", n.branch_pair.is_some());
                }
            }
            RunType::ZeroDim => {
                if let Some(toy) = &self.toy {
                    for o in &toy.observables {
                        if let Err(e) = o.parse::<Monomial>() {
                            out.push(("observables", e.to_string()));
                        }
                    }
                }
            }
            RunType::CpCheck => {}
        }
        out
    }

    pub fn grid(&self) -> cqdyn::Result<PhaseGrid> {
        let g = self.grid.as_ref().ok_or_else(|| cqdyn::CqError::InvalidInput("missing [grid]".into()))?;
        let q = g.q.ok_or_else(|| cqdyn::CqError::InvalidInput("missing grid.q".into()))?;
        Ok(PhaseGrid::new(axis(q)?, axis(g.p)?, g.boundary))
    }

    pub fn signal_axis(&self) -> cqdyn::Result<Option<Axis>> {
        self.grid.as_ref().map(|g| axis(g.p)).transpose()
    }

    pub fn branch_pair(&self) -> Option<BranchPair> {
        self.numerics.branch_pair.map(|[a, b]| BranchPair { a, b })
    }
}

fn block_message(name: &str, wanted: bool, run_type: RunType) -> String {
    if wanted {
        format!("[{name}] is required for run_type {run_type:?}")
    } else {
        format!("[{name}] does not belong in a {run_type:?} scenario")
    }
}

pub fn axis(a: AxisSpec) -> cqdyn::Result<Axis> {
    Axis::new(a.min, a.max, a.count)
}

fn herm(rows: &Matrix, what: &str) -> cqdyn::Result<HermMatrix> {
    HermMatrix::from_real(rows).map_err(|e| cqdyn::CqError::InvalidInput(format!("{what}: {e}")))
}

fn complex(rows: &Matrix, what: &str) -> cqdyn::Result<DMatrix<Complex64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(cqdyn::CqError::ShapeMismatch(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| Complex64::new(rows[i][j], 0.0)))
}

impl CouplingSpec {
    pub fn triple(&self) -> cqdyn::Result<CouplingTriple> {
        CouplingTriple::new(herm(&self.d2, "d2")?, complex(&self.d1, "d1")?, herm(&self.d0, "d0")?)
    }
}

impl ModelSpec {
    pub fn model(&self) -> cqdyn::Result<CQModel> {
        let h = herm(&self.h_quantum, "h_quantum")?;
        let d = h.dim();
        let coeffs = self
            .interaction
            .iter()
            .enumerate()
            .map(|(n, m)| herm(m, &format!("interaction[{n}]")))
            .collect::<cqdyn::Result<Vec<_>>>()?;
        Ok(CQModel {
            mass: self.mass,
            potential: ScalarPoly::new(self.potential.clone()),
            h_quantum: h,
            interaction: MatrixPoly::new(d, coeffs)?,
            d2: ScalarPoly::new(self.d2.clone()),
            d0: ScalarPoly::new(self.d0.clone()),
            hbar: self.hbar,
        })
    }
}

impl MeasurementSpec {
    pub fn model(&self) -> cqdyn::Result<MeasurementModel> {
        let coeffs = self
            .observable
            .iter()
            .enumerate()
            .map(|(n, m)| herm(m, &format!("observable[{n}]")))
            .collect::<cqdyn::Result<Vec<_>>>()?;
        let d = coeffs.first().map(HermMatrix::dim).ok_or_else(|| {
            cqdyn::CqError::InvalidInput("observable needs at least one coefficient".into())
        })?;
        let hamiltonian = match &self.hamiltonian {
            Some(h) => herm(h, "hamiltonian")?,
            None => HermMatrix::zeros(d),
        };
        Ok(MeasurementModel {
            observable: MatrixPoly::new(d, coeffs)?,
            strength: ScalarPoly::new(self.strength.clone()),
            hamiltonian,
            hbar: self.hbar,
        })
    }
}

impl ToySpec {
    pub fn params(&self) -> ToyParams {
        ToyParams { m_phi: self.m_phi, m_q: self.m_q, lambda: self.lambda, hbar: self.hbar, d2: self.d2 }
    }

    pub fn observables(&self) -> cqdyn::Result<Vec<Monomial>> {
        self.observables.iter().map(|o| o.parse()).collect()
    }

    pub fn quadrature_options(&self) -> QuadratureOptions {
        QuadratureOptions { theta: self.theta, widths: self.widths, ..Default::default() }
    }
}

impl InitialSpec {
    pub fn psi(&self) -> cqdyn::Result<Option<Vec<Complex64>>> {
        let Some(re) = &self.psi else { return Ok(None) };
        let im = self.psi_im.clone().unwrap_or_else(|| vec![0.0; re.len()]);
        if im.len() != re.len() {
            return Err(cqdyn::CqError::ShapeMismatch("psi and psi_im differ in length".into()));
        }
        Ok(Some(re.iter().zip(&im).map(|(r, i)| Complex64::new(*r, *i)).collect()))
    }
}
