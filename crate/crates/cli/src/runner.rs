//! Executes scenarios and writes their artifacts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use cqdyn::action::{fv_action, marginal_from_paths, sample_ensemble, weighted_ensemble_csv, PathModel, PathSampling, PathStart};
use cqdyn::generator::{evolve, EvolveOptions, Generator, STABILITY_SAFETY};
use cqdyn::psd::{schur_cp_check, Verdict};
use cqdyn::state::{coarse_l1, fmt_f64, projector, HybridState, PhaseGrid};
use cqdyn::unravel::{
    ensemble_to_hybrid, measurement_grid_reference, run_ensemble, SignalStart, Trajectory, UnravelConfig,
};
use cqdyn::zerodim::{
    free_propagators, moments_quadrature, perturbative_report, vertex_factors, z0_exact, z0_printed, ComplexValue,
    Engine, MomentReport,
};
use cqdyn::CqError;
use num_complex::Complex64;
use serde_json::json;

use crate::scenario::{RunType, Scenario, Weighting};

#[derive(Debug)]
pub enum RunError {
    Core(CqError),
    Io(std::io::Error),
    Setup(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
            RunError::Setup(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<CqError> for RunError {
    fn from(e: CqError) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub message: String,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

fn header(s: &Scenario) -> String {
    format!("scenario:\n{}", s.resolved_toml())
}

fn commented(s: &Scenario) -> String {
    header(s).lines().map(|l| format!("# {l}\n")).collect()
}

fn json_text(value: serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(&value).expect("serializable");
    text.push('\n');
    text
}

/// Runs `scenario`, writing artifacts into `out` (created if missing).
pub fn run(scenario: &Scenario, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let mut w = Writer { dir: out, files: Vec::new() };
    let message = match scenario.run_type {
        RunType::CpCheck => run_cp_check(scenario, &mut w)?,
        RunType::Evolve => run_evolve(scenario, &mut w)?,
        RunType::Unravel => run_unravel(scenario, &mut w)?,
        RunType::SamplePaths => run_sample_paths(scenario, &mut w)?,
        RunType::ZeroDim => run_zero_dim(scenario, &mut w)?,
    };
    Ok(RunSummary { files: w.files, message })
}

fn missing(what: &str) -> RunError {
    RunError::Setup(format!("scenario has no {what}"))
}

fn run_cp_check(s: &Scenario, w: &mut Writer) -> Result<String> {
    let triple = s.coupling.as_ref().ok_or_else(|| missing("[coupling]"))?.triple()?;
    let report = schur_cp_check(&triple, s.numerics.cp_tol);
    w.write(
        "cp_report.json",
        &json_text(json!({
            "scenario": s,
            "report": report,
            "routes_agree": report.routes_agree(),
        })),
    )?;
    Ok(format!("verdict {:?}, trade-off margin {:e}", report.verdict, report.tradeoff_margin))
}

fn initial_psi(s: &Scenario, dim: usize) -> Result<Vec<Complex64>> {
    let psi = s.initial.as_ref().map(|i| i.psi()).transpose()?.flatten();
    let psi = psi.unwrap_or_else(|| {
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        v[0] = Complex64::new(1.0, 0.0);
        v
    });
    if psi.len() != dim {
        return Err(RunError::Setup(format!("psi has {} components, model has dimension {dim}", psi.len())));
    }
    Ok(psi)
}

fn run_evolve(s: &Scenario, w: &mut Writer) -> Result<String> {
    let model = s.model.as_ref().ok_or_else(|| missing("[model]"))?.model()?;
    let grid = s.grid()?;
    let init = s.initial.as_ref().ok_or_else(|| missing("[initial]"))?;
    if !(init.q_std > 0.0 && init.p_std > 0.0) {
        return Err(RunError::Setup("evolution needs q_std > 0 and p_std > 0".into()));
    }
    let psi = initial_psi(s, model.dim())?;
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let rho = projector(&psi.iter().map(|z| z / norm).collect::<Vec<_>>());
    let s0 = HybridState::product(
        grid,
        |q, p| (-0.5 * ((q - init.q_mean) / init.q_std).powi(2) - 0.5 * ((p - init.p_mean) / init.p_std).powi(2)).exp(),
        &rho,
    )?;
    let generator = Generator::new(&model, grid)?;
    let dt = match s.numerics.dt {
        Some(dt) => dt,
        None => generator.stability_limit(STABILITY_SAFETY),
    };
    let t_final = s.numerics.t_final.ok_or_else(|| missing("t_final"))?;
    let opts = EvolveOptions {
        stride: s.output.stride,
        positivity_tol: s.numerics.positivity_tol,
        trace_tol: s.numerics.trace_tol,
        leak_tol: s.numerics.leak_tol,
    };
    let (state, diagnostics) = evolve(&generator, &s0, t_final, dt, &opts)?;
    let head = header(s);
    w.write("diagnostics.csv", &diagnostics.to_csv(&head))?;
    w.write("final_state.csv", &state.to_columnar(&head))?;
    let (mean_p, var_p) = state.p_moments();
    Ok(format!("t = {t_final}: trace {:.12}, <p> = {mean_p:.6}, Var(p) = {var_p:.6}", state.total_trace()))
}

fn signal_start(s: &Scenario) -> SignalStart {
    match &s.initial {
        Some(i) if i.p_std > 0.0 => SignalStart::Gaussian { mean: i.p_mean, std: i.p_std },
        Some(i) => SignalStart::Fixed(i.p_mean),
        None => SignalStart::Fixed(0.0),
    }
}

fn moments_csv(s: &Scenario, trajs: &[Trajectory]) -> String {
    let mut out = commented(s);
    out.push_str("t,mean_z,var_z\n");
    let n = trajs.len() as f64;
    for (k, t) in trajs[0].times.iter().enumerate() {
        let mean = trajs.iter().map(|tr| tr.z[k]).sum::<f64>() / n;
        let var = trajs.iter().map(|tr| (tr.z[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        out.push_str(&format!("{},{},{}\n", fmt_f64(*t), fmt_f64(mean), fmt_f64(var)));
    }
    out
}

fn run_unravel(s: &Scenario, w: &mut Writer) -> Result<String> {
    let m = s.measurement.as_ref().ok_or_else(|| missing("[measurement]"))?.model()?;
    let axis = s.signal_axis()?.ok_or_else(|| missing("[grid] signal axis p"))?;
    m.validate(&axis.values())?;
    let psi = initial_psi(s, m.dim())?;
    let start = signal_start(s);
    let n_steps = s.numerics.n_steps.ok_or_else(|| missing("n_steps"))?;
    let dt = s.numerics.dt.ok_or_else(|| missing("dt"))?;
    let n = s.numerics.n_trajectories.ok_or_else(|| missing("n_trajectories"))?;
    if n < 2 {
        return Err(RunError::Setup("need at least 2 trajectories".into()));
    }
    let cfg = UnravelConfig { dt, n_steps, stride: s.output.stride };
    let trajs = run_ensemble(&m, &psi, start, &cfg, s.seed, n)?;
    let t = n_steps as f64 * dt;
    let ensemble = ensemble_to_hybrid(&trajs, axis, t)?;
    let head = header(s);
    w.write("ensemble_summary.csv", &ensemble.to_columnar(&head))?;
    w.write("ensemble_moments.csv", &moments_csv(s, &trajs))?;

    // convergence of the signal density against the grid generator when the
    // model maps onto it, otherwise against the full ensemble
    let reference = measurement_grid_reference(&m, &psi, start, axis, t).ok();
    let against = if reference.is_some() { "grid" } else { "ensemble" };
    let reference = reference.unwrap_or_else(|| ensemble.clone());
    let factor = (axis.count / 20).max(1);
    let rf = reference.classical_marginal();
    let mut table = commented(s);
    table.push_str(&format!("# reference={against} bin_cells={factor}\nn,blocks,l1\n"));
    let mut size = n;
    let mut sizes = Vec::new();
    while size >= 10 && sizes.len() < 3 {
        sizes.push(size);
        size /= 10;
    }
    let mut last = f64::NAN;
    for &size in sizes.iter().rev() {
        let blocks = n / size;
        let mut total = 0.0;
        for b in 0..blocks {
            let e = ensemble_to_hybrid(&trajs[b * size..(b + 1) * size], axis, t)?;
            total += coarse_l1(&e.classical_marginal(), &rf, axis.spacing(), factor)?;
        }
        last = total / blocks as f64;
        table.push_str(&format!("{size},{blocks},{}\n", fmt_f64(last)));
    }
    w.write("convergence.csv", &table)?;
    for tr in trajs.iter().take(s.output.paths) {
        w.write(&format!("trajectory_{:04}.csv", tr.index), &tr.to_csv())?;
    }
    let drift = trajs.iter().map(|t| t.max_raw_norm_drift).fold(0.0, f64::max);
    Ok(format!("{n} trajectories to t = {t}; L1 vs {against} at N = {n}: {last:.4}; max raw norm drift {drift:.3e}"))
}

fn run_sample_paths(s: &Scenario, w: &mut Writer) -> Result<String> {
    let model = s.model.as_ref().ok_or_else(|| missing("[model]"))?.model()?;
    let pm = PathModel::new(&model)?;
    let start = match &s.initial {
        Some(i) if i.q_std > 0.0 || i.p_std > 0.0 => {
            PathStart::Gaussian { q_mean: i.q_mean, q_std: i.q_std, p_mean: i.p_mean, p_std: i.p_std }
        }
        Some(i) => PathStart::Fixed { q: i.q_mean, p: i.p_mean },
        None => PathStart::Fixed { q: 0.0, p: 0.0 },
    };
    let pair = s.branch_pair();
    let cfg = PathSampling {
        dt: s.numerics.dt.ok_or_else(|| missing("dt"))?,
        n_steps: s.numerics.n_steps.ok_or_else(|| missing("n_steps"))?,
        pair,
    };
    let n = s.numerics.n_trajectories.ok_or_else(|| missing("n_trajectories"))?;
    let paths = sample_ensemble(&pm, start, cfg, s.seed, n)?;
    let weights: Vec<f64> = match s.numerics.weighting {
        Weighting::Uniform => vec![1.0 / n as f64; n],
        Weighting::FeynmanVernon => {
            let pair = pair.ok_or_else(|| missing("branch_pair"))?;
            paths.iter().map(|p| Ok((-fv_action(p, &pm, pair)?).exp())).collect::<Result<_>>()?
        }
    };
    let mut csv = commented(s);
    csv.push_str(&weighted_ensemble_csv(&paths, &weights));
    w.write("weighted_ensemble.csv", &csv)?;
    if s.grid.as_ref().is_some_and(|g| g.q.is_some()) {
        let grid: PhaseGrid = s.grid()?;
        let marginal = marginal_from_paths(&paths, Some(&weights), grid)?;
        w.write("marginal.csv", &marginal.to_columnar(&header(s)))?;
    }
    for (i, p) in paths.iter().enumerate().take(s.output.paths) {
        w.write(&format!("path_{i:04}.csv"), &p.to_csv())?;
    }
    let mean_w = weights.iter().sum::<f64>() / n as f64;
    Ok(format!("{n} paths of {} steps; mean weight {mean_w:.6}", cfg.n_steps))
}

fn run_zero_dim(s: &Scenario, w: &mut Writer) -> Result<String> {
    let toy = s.toy.as_ref().ok_or_else(|| missing("[toy]"))?;
    let params = toy.params();
    params.validate()?;
    let observables = toy.observables()?;
    let mut reports: Vec<MomentReport> = Vec::new();
    for obs in &observables {
        for &order in &toy.orders {
            reports.push(perturbative_report(&params, obs, order)?);
        }
    }
    if toy.quadrature {
        let opts = toy.quadrature_options();
        let results = moments_quadrature(&params, &observables, &opts)?;
        for (obs, r) in observables.iter().zip(results) {
            reports.push(MomentReport {
                params,
                observable: obs.to_string(),
                engine: Engine::Quadrature { theta: opts.theta, widths: opts.widths },
                value: r.value.into(),
                error_estimate: r.error,
            });
        }
    }
    let (pp, mm, qq) = free_propagators(&params);
    w.write(
        "moments.json",
        &json_text(json!({
            "scenario": s,
            "free_propagators": {
                "phi_plus": ComplexValue::from(pp),
                "phi_minus": ComplexValue::from(mm),
                "q": qq,
            },
            "z0_printed": ComplexValue::from(z0_printed(&params)),
            "z0_exact": ComplexValue::from(z0_exact(&params)),
            "vertices": vertex_factors(&params),
            "reports": reports,
        })),
    )?;
    Ok(format!("{} moment reports", reports.len()))
}

/// Parse-level and CP audit of a scenario without running it.
pub fn check(s: &Scenario) -> Result<String> {
    match s.run_type {
        RunType::CpCheck => {
            let triple = s.coupling.as_ref().ok_or_else(|| missing("[coupling]"))?.triple()?;
            let report = schur_cp_check(&triple, s.numerics.cp_tol);
            if report.verdict == Verdict::Violated {
                return Err(RunError::Setup(format!(
                    "couplings are not completely positive: trade-off margin {:e}, support condition {}",
                    report.tradeoff_margin, report.support_ok
                )));
            }
            Ok(format!("couplings are completely positive ({:?})", report.verdict))
        }
        RunType::Evolve | RunType::SamplePaths => {
            let model = s.model.as_ref().ok_or_else(|| missing("[model]"))?.model()?;
            let qs = match s.grid.as_ref().and_then(|g| g.q) {
                Some(_) => s.grid()?.q.values(),
                None => (0..=200).map(|i| -10.0 + 0.1 * i as f64).collect(),
            };
            model.validate(&qs, s.numerics.cp_tol)?;
            Ok(format!("model is completely positive at {} sample points", qs.len()))
        }
        RunType::Unravel => {
            let m = s.measurement.as_ref().ok_or_else(|| missing("[measurement]"))?.model()?;
            let axis = s.signal_axis()?.ok_or_else(|| missing("[grid] signal axis p"))?;
            m.validate(&axis.values())?;
            Ok(format!("measurement strength positive at {} signal points", axis.count))
        }
        RunType::ZeroDim => {
            let toy = s.toy.as_ref().ok_or_else(|| missing("[toy]"))?;
            toy.params().validate()?;
            toy.observables()?;
            Ok("toy parameters valid".into())
        }
    }
}
