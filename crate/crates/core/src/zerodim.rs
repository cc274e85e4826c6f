//! Zero-dimensional hybrid toy theory: one classical variable `q` and a
//! doubled quantum variable `φ±` with action
//!
//! `I = −(i/ħ) m_φ² φ+²/2 + (i/ħ) m_φ² φ−²/2
//!      − (1/2D2)(q² m_q⁴ + ½λ² q²(φ+⁴ + φ−⁴) + ½λ q m_q²(φ+² + φ−²))`.
//!
//! Moments are computed perturbatively by Wick contraction and directly
//! by quadrature on a rotated contour.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CqError, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Highest interaction order the perturbative engine accepts by default.
pub const ORDER_CAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub m_phi: f64,
    pub m_q: f64,
    pub lambda: f64,
    pub hbar: f64,
    pub d2: f64,
}

impl ToyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m_phi", self.m_phi), ("m_q", self.m_q), ("hbar", self.hbar), ("d2", self.d2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CqError::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.lambda.is_finite() {
            return Err(CqError::InvalidInput("lambda must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceTriple {
    pub j_plus: f64,
    pub j_minus: f64,
    pub j_q: f64,
}

/// `φ+^plus φ−^minus q^q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Monomial {
    pub plus: u32,
    pub minus: u32,
    pub q: u32,
}

impl Monomial {
    pub fn new(plus: u32, minus: u32, q: u32) -> Self {
        Monomial { plus, minus, q }
    }

    pub fn degree(&self) -> u32 {
        self.plus + self.minus + self.q
    }

    fn counts(&self) -> [u32; 3] {
        [self.plus, self.minus, self.q]
    }

    fn mul(&self, o: &Monomial) -> Monomial {
        Monomial::new(self.plus + o.plus, self.minus + o.minus, self.q + o.q)
    }

    fn eval(&self, plus: Complex64, minus: Complex64, q: f64) -> Complex64 {
        plus.powu(self.plus) * minus.powu(self.minus) * q.powi(self.q as i32)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = [("phi+", self.plus), ("phi-", self.minus), ("q", self.q)]
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| if *n == 1 { s.to_string() } else { format!("{s}^{n}") })
            .collect();
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join(" "))
        }
    }
}

impl std::str::FromStr for Monomial {
    type Err = CqError;

    /// Parses products such as `q^2`, `phi+^2 phi-` or `1`.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Monomial::default();
        for factor in s.split(|c: char| c.is_whitespace() || c == '*').filter(|f| !f.is_empty()) {
            if factor == "1" {
                continue;
            }
            let (name, power) = match factor.split_once('^') {
                Some((n, p)) => (
                    n,
                    p.parse::<u32>()
                        .map_err(|_| CqError::InvalidInput(format!("bad exponent in {factor:?}")))?,
                ),
                None => (factor, 1),
            };
            match name {
                "phi+" => m.plus += power,
                "phi-" => m.minus += power,
                "q" => m.q += power,
                _ => return Err(CqError::InvalidInput(format!("unknown variable {name:?}; use phi+, phi- or q"))),
            }
        }
        Ok(m)
    }
}

/// `Z0` with the prefactors exactly as printed for the free theory:
/// `(−2πiħ/m_φ²)(2πiħ/m_φ²)(πD2/m_q⁴)`.
pub fn z0_printed(p: &ToyParams) -> Complex64 {
    let m2 = p.m_phi * p.m_phi;
    let mq4 = p.m_q.powi(4);
    (-2.0 * PI * I * p.hbar / m2) * (2.0 * PI * I * p.hbar / m2) * (PI * p.d2 / mq4)
}

/// The value of the three Gaussian integrals:
/// `√(−2πiħ/m_φ²) √(2πiħ/m_φ²) √(2πD2/m_q⁴)`.
pub fn z0_exact(p: &ToyParams) -> Complex64 {
    let m2 = p.m_phi * p.m_phi;
    let mq4 = p.m_q.powi(4);
    (-2.0 * PI * I * p.hbar / m2).sqrt() * (2.0 * PI * I * p.hbar / m2).sqrt() * (2.0 * PI * p.d2 / mq4).sqrt()
}

fn source_factor(p: &ToyParams, s: &SourceTriple) -> Complex64 {
    let m2 = p.m_phi * p.m_phi;
    let exponent = I * s.j_plus * s.j_plus / (2.0 * p.hbar * m2) - I * s.j_minus * s.j_minus / (2.0 * p.hbar * m2)
        + s.j_q * s.j_q / (2.0 * p.d2 * p.m_q.powi(4));
    exponent.exp()
}

/// Free partition function with sources, using the printed `Z0`.
pub fn z_free(p: &ToyParams, s: &SourceTriple) -> Complex64 {
    z0_printed(p) * source_factor(p, s)
}

/// Free partition function with sources and the exact Gaussian prefactor.
pub fn z_free_exact(p: &ToyParams, s: &SourceTriple) -> Complex64 {
    z0_exact(p) * source_factor(p, s)
}

/// `(⟨φ+φ+⟩, ⟨φ−φ−⟩, ⟨qq⟩)`.
pub fn free_propagators(p: &ToyParams) -> (Complex64, Complex64, f64) {
    let m2 = p.m_phi * p.m_phi;
    (-I * p.hbar / m2, I * p.hbar / m2, p.d2 / p.m_q.powi(4))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VertexKind {
    /// `q φ²`
    Cubic,
    /// `q² φ⁴`
    Sextic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub kind: VertexKind,
    pub branch: Branch,
    pub value: f64,
}

/// Vertex values `−(2!/4D2) λ m_q²` and `−λ² 4! 2!/(4D2)` on each branch.
pub fn vertex_factors(p: &ToyParams) -> Vec<Vertex> {
    let tri = -(2.0 / (4.0 * p.d2)) * p.lambda * p.m_q * p.m_q;
    let sextic = -(p.lambda * p.lambda * 24.0 * 2.0) / (4.0 * p.d2);
    let mut out = Vec::with_capacity(4);
    for branch in [Branch::Plus, Branch::Minus] {
        out.push(Vertex { kind: VertexKind::Cubic, branch, value: tri });
        out.push(Vertex { kind: VertexKind::Sextic, branch, value: sextic });
    }
    out
}

/// Interaction part of the action as a real polynomial.
pub fn interaction_terms(p: &ToyParams) -> Vec<(Monomial, f64)> {
    let quartic = -p.lambda * p.lambda / (4.0 * p.d2);
    let cubic = -p.lambda * p.m_q * p.m_q / (4.0 * p.d2);
    vec![
        (Monomial::new(4, 0, 2), quartic),
        (Monomial::new(0, 4, 2), quartic),
        (Monomial::new(2, 0, 1), cubic),
        (Monomial::new(0, 2, 1), cubic),
    ]
}

/// Gaussian moments by exact pairing enumeration. Labels are `φ+`, `φ−`
/// and `q`; pairings with identical label multisets are counted together.
#[derive(Debug, Clone)]
pub struct Wick {
    propagator: [[Complex64; 3]; 3],
    memo: HashMap<[u32; 3], Complex64>,
}

impl Wick {
    pub fn new(propagator: [[Complex64; 3]; 3]) -> Self {
        Wick { propagator, memo: HashMap::new() }
    }

    pub fn free(p: &ToyParams) -> Self {
        let (pp, mm, qq) = free_propagators(p);
        let z = Complex64::new(0.0, 0.0);
        Wick::new([[pp, z, z], [z, mm, z], [z, z, Complex64::new(qq, 0.0)]])
    }

    /// Sum over perfect matchings of the product of pair propagators.
    pub fn moment(&mut self, m: &Monomial) -> Complex64 {
        self.contract(m.counts())
    }

    fn contract(&mut self, counts: [u32; 3]) -> Complex64 {
        if counts.iter().sum::<u32>() % 2 == 1 {
            return Complex64::new(0.0, 0.0);
        }
        let Some(first) = counts.iter().position(|&c| c > 0) else {
            return Complex64::new(1.0, 0.0);
        };
        if let Some(v) = self.memo.get(&counts) {
            return *v;
        }
        let mut rest = counts;
        rest[first] -= 1;
        let mut total = Complex64::new(0.0, 0.0);
        for j in 0..3 {
            let g = self.propagator[first][j];
            if rest[j] == 0 || g == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mut next = rest;
            next[j] -= 1;
            total += g * rest[j] as f64 * self.contract(next);
        }
        self.memo.insert(counts, total);
        total
    }
}

type Poly = BTreeMap<Monomial, f64>;

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ma, ca) in a {
        for (mb, cb) in b {
            *out.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
        }
    }
    out
}

/// `⟨O e^{I_int}⟩ / ⟨e^{I_int}⟩` with both expansions truncated at `order`.
pub fn moment_perturbative(p: &ToyParams, observable: &Monomial, order: usize) -> Result<Complex64> {
    moment_perturbative_capped(p, observable, order, ORDER_CAP)
}

pub fn moment_perturbative_capped(p: &ToyParams, observable: &Monomial, order: usize, cap: usize) -> Result<Complex64> {
    Ok(perturbative_series(p, observable, order, cap)?.last().copied().expect("order 0 is always present"))
}

/// Partial sums of the normalized moment for orders `0..=order`.
pub fn perturbative_series(p: &ToyParams, observable: &Monomial, order: usize, cap: usize) -> Result<Vec<Complex64>> {
    p.validate()?;
    if order > cap {
        return Err(CqError::OrderCap { order, cap });
    }
    let interaction: Poly = interaction_terms(p).into_iter().collect();
    let mut wick = Wick::free(p);
    let mut power: Poly = [(Monomial::default(), 1.0)].into_iter().collect();
    let (mut num, mut den) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    let mut factorial = 1.0;
    let mut sums = Vec::with_capacity(order + 1);
    for k in 0..=order {
        if k > 0 {
            power = poly_mul(&power, &interaction);
            factorial *= k as f64;
        }
        for (m, c) in &power {
            num += wick.moment(&m.mul(observable)) * (c / factorial);
            den += wick.moment(m) * (c / factorial);
        }
        sums.push(num / den);
    }
    Ok(sums)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// Contour angle: `φ+ = e^{−iθ}x`, `φ− = e^{iθ}y`. Must lie in
    /// `(0, π/8)` when `λ ≠ 0` for the quartic term to stay damped.
    pub theta: f64,
    /// Half-width of the integration box in free Gaussian widths.
    pub widths: f64,
    /// Composite panels per axis over the base box.
    pub panels: usize,
    /// Gauss-Legendre points per panel.
    pub points: usize,
    /// Relative change allowed when the box is doubled.
    pub tail_tol: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { theta: PI / 12.0, widths: 8.0, panels: 8, points: 16, tail_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: Complex64,
    /// `|value(2L) − value(L)|` for box half-width `L`.
    pub error: f64,
    /// Unnormalized integral of `e^I` over the doubled box.
    pub z: Complex64,
}

fn composite_rule(half_width: f64, panels: usize, rule: &GaussLegendre) -> Vec<(f64, f64)> {
    let h = 2.0 * half_width / panels as f64;
    let mut out = Vec::with_capacity(panels * rule.degree());
    for k in 0..panels {
        let a = -half_width + k as f64 * h;
        for &(x, w) in rule.as_node_weight_pairs() {
            out.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

/// Raw integrals `∫ O e^I` for each observable and `∫ e^I` (last entry).
fn integrate(p: &ToyParams, observables: &[Monomial], opts: &QuadratureOptions, scale: f64) -> Vec<Complex64> {
    let (s, c) = (opts.theta.sin(), opts.theta.cos());
    let rot_plus = Complex64::new(c, -s);
    let rot_minus = rot_plus.conj();
    let phi_width = (p.hbar / (p.m_phi * p.m_phi * (2.0 * opts.theta).sin())).sqrt();
    let q_width = p.d2.sqrt() / (p.m_q * p.m_q);
    let rule = GaussLegendre::new(NonZeroUsize::new(opts.points).expect("points > 0"));
    let panels = (opts.panels as f64 * scale).round() as usize;
    let phi_nodes = composite_rule(opts.widths * phi_width * scale, panels, &rule);
    let q_nodes = composite_rule(opts.widths * q_width * scale, panels, &rule);
    // dφ+ dφ− = e^{−iθ} e^{iθ} dx dy
    let jacobian = rot_plus * rot_minus;

    let m2 = p.m_phi * p.m_phi;
    let mq2 = p.m_q * p.m_q;
    let n = observables.len();
    let rows: Vec<Vec<Complex64>> = phi_nodes
        .par_iter()
        .map(|&(x, wx)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n + 1];
            let fp = rot_plus * x;
            let fp2 = fp * fp;
            for &(y, wy) in &phi_nodes {
                let fm = rot_minus * y;
                let fm2 = fm * fm;
                let quantum = -I * m2 * fp2 / (2.0 * p.hbar) + I * m2 * fm2 / (2.0 * p.hbar);
                let quartic = fp2 * fp2 + fm2 * fm2;
                let quadratic = fp2 + fm2;
                for &(q, wq) in &q_nodes {
                    let classical = -(q * q * mq2 * mq2
                        + 0.5 * p.lambda * p.lambda * q * q * quartic
                        + 0.5 * p.lambda * q * mq2 * quadratic)
                        / (2.0 * p.d2);
                    let f = (quantum + classical).exp() * (wx * wy * wq);
                    for (a, m) in acc.iter_mut().zip(observables) {
                        *a += f * m.eval(fp, fm, q);
                    }
                    acc[n] += f;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Complex64::new(0.0, 0.0); n + 1];
    for row in rows {
        for (t, r) in total.iter_mut().zip(row) {
            *t += r;
        }
    }
    total.iter().map(|t| t * jacobian).collect()
}

/// Normalized moments by direct integration, refusing when doubling the
/// box moves any result by more than `tail_tol` relative.
pub fn moments_quadrature(
    p: &ToyParams,
    observables: &[Monomial],
    opts: &QuadratureOptions,
) -> Result<Vec<QuadratureResult>> {
    p.validate()?;
    if !(opts.theta > 0.0 && opts.theta < PI / 4.0) {
        return Err(CqError::Quadrature(format!("rotation angle {} outside (0, π/4)", opts.theta)));
    }
    if p.lambda != 0.0 && opts.theta >= PI / 8.0 {
        return Err(CqError::Quadrature(format!(
            "rotation angle {} undamps the quartic term; use θ < π/8 when λ ≠ 0",
            opts.theta
        )));
    }
    if opts.panels == 0 || opts.points == 0 {
        return Err(CqError::Quadrature("panels and points must be positive".into()));
    }
    let base = integrate(p, observables, opts, 1.0);
    let wide = integrate(p, observables, opts, 2.0);
    let (z1, z2) = (base[observables.len()], wide[observables.len()]);
    if !(z1.norm().is_finite() && z2.norm().is_finite()) || z2.norm() == 0.0 {
        return Err(CqError::Quadrature("normalization integral is not finite".into()));
    }
    let tail = (z2 - z1).norm() / z2.norm();
    if tail > opts.tail_tol {
        return Err(CqError::Quadrature(format!("tail mass {tail:e} exceeds {:e}", opts.tail_tol)));
    }
    let mut out = Vec::with_capacity(observables.len());
    for (i, m) in observables.iter().enumerate() {
        let (v1, v2) = (base[i] / z1, wide[i] / z2);
        let error = (v2 - v1).norm();
        if error > opts.tail_tol * (1.0 + v2.norm()) {
            return Err(CqError::Quadrature(format!("moment {m} changes by {error:e} when the box doubles")));
        }
        out.push(QuadratureResult { value: v2, error, z: z2 });
    }
    Ok(out)
}

pub fn moment_quadrature(p: &ToyParams, observable: &Monomial, opts: &QuadratureOptions) -> Result<QuadratureResult> {
    Ok(moments_quadrature(p, std::slice::from_ref(observable), opts)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexValue {
    fn from(z: Complex64) -> Self {
        ComplexValue { re: z.re, im: z.im }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum Engine {
    Perturbative { order: usize },
    Quadrature { theta: f64, widths: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub params: ToyParams,
    pub observable: String,
    pub engine: Engine,
    pub value: ComplexValue,
    /// Size of the last perturbative correction, or the box-doubling
    /// change for quadrature.
    pub error_estimate: f64,
}

pub fn perturbative_report(p: &ToyParams, observable: &Monomial, order: usize) -> Result<MomentReport> {
    let series = perturbative_series(p, observable, order, ORDER_CAP)?;
    let value = series[order];
    let error_estimate = if order == 0 { value.norm() } else { (value - series[order - 1]).norm() };
    Ok(MomentReport {
        params: *p,
        observable: observable.to_string(),
        engine: Engine::Perturbative { order },
        value: value.into(),
        error_estimate,
    })
}

pub fn quadrature_report(p: &ToyParams, observable: &Monomial, opts: &QuadratureOptions) -> Result<MomentReport> {
    let r = moment_quadrature(p, observable, opts)?;
    Ok(MomentReport {
        params: *p,
        observable: observable.to_string(),
        engine: Engine::Quadrature { theta: opts.theta, widths: opts.widths },
        value: r.value.into(),
        error_estimate: r.error,
    })
}
