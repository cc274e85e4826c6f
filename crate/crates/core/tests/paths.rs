use cqdyn::action::{
    fv_action, importance_log_weights, marginal_from_paths, normalized_weights, om_action, sample_ensemble, BranchPair,
    PathModel, PathSampling, PathStart,
};
use cqdyn::generator::{evolve, square_grid, EvolveOptions, Generator};
use cqdyn::model::{pauli_z, CQModel, MatrixPoly, ScalarPoly};
use cqdyn::psd::HermMatrix;
use cqdyn::state::{coarse_l1, Boundary, HybridState};
use num_complex::Complex64;

fn gaussian(x: f64, mean: f64, std: f64) -> f64 {
    (-0.5 * ((x - mean) / std).powi(2)).exp()
}

fn classical(d2: ScalarPoly) -> CQModel {
    CQModel {
        mass: 1.0,
        potential: ScalarPoly::new(vec![0.0, 0.0, 0.5]),
        h_quantum: HermMatrix::zeros(1),
        interaction: MatrixPoly::zero(1),
        d2,
        d0: ScalarPoly::zero(),
        hbar: 1.0,
    }
}

#[test]
fn feynman_vernon_weights_reproduce_coherence_decay() {
    // frozen position, decoherence rate depending on where the particle sits
    let lambda = 0.5;
    let model = CQModel {
        mass: 1e6,
        potential: ScalarPoly::zero(),
        h_quantum: HermMatrix::zeros(2),
        interaction: MatrixPoly::new(2, vec![HermMatrix::zeros(2), pauli_z().scale(lambda)]).unwrap(),
        d2: ScalarPoly::constant(0.25),
        d0: ScalarPoly::new(vec![1.0, 0.0, 0.5]),
        hbar: 1.0,
    };
    let (q_std, p_std, t) = (0.8, 0.7, 1.0);
    let grid = square_grid((-3.5, 3.5, 71), (-6.0, 6.0, 121), Boundary::Truncate).unwrap();
    let half = Complex64::new(0.5f64.sqrt(), 0.0);
    let s0 = HybridState::pure_product(grid, |q, p| gaussian(q, 0.0, q_std) * gaussian(p, 0.0, p_std), &[half, half])
        .unwrap();
    let generator = Generator::new(&model, grid).unwrap();
    let dt = 0.01f64.min(generator.stability_limit(0.9));
    let (s1, _) = evolve(&generator, &s0, t, dt, &EvolveOptions::default()).unwrap();
    let grid_ratio = s1.coherence_norm(0, 1) / s0.coherence_norm(0, 1);

    let pm = PathModel::new(&model).unwrap();
    let pair = BranchPair { a: 0, b: 1 };
    let cfg = PathSampling { dt: 0.01, n_steps: 100, pair: Some(pair) };
    let start = PathStart::Gaussian { q_mean: 0.0, q_std, p_mean: 0.0, p_std };
    let paths = sample_ensemble(&pm, start, cfg, 17, 8000).unwrap();
    let weights: Vec<f64> = paths.iter().map(|p| (-fv_action(p, &pm, pair).unwrap()).exp()).collect();
    let path_ratio = weights.iter().sum::<f64>() / weights.len() as f64;
    assert!((path_ratio - grid_ratio).abs() < 0.02 * grid_ratio, "{path_ratio} vs {grid_ratio}");
}

#[test]
fn sampled_endpoints_match_the_fokker_planck_solution() {
    let model = classical(ScalarPoly::new(vec![0.2, 0.0, 0.1]));
    let grid = square_grid((-5.0, 5.0, 101), (-5.0, 5.0, 101), Boundary::Truncate).unwrap();
    let (q0, std) = (0.5, 0.5);
    let s0 = HybridState::product(grid, |q, p| gaussian(q, q0, std) * gaussian(p, 0.0, std), &HermMatrix::scalar(1.0))
        .unwrap();
    let generator = Generator::new(&model, grid).unwrap();
    let dt = generator.stability_limit(0.9);
    let (s1, _) = evolve(&generator, &s0, 1.0, dt, &EvolveOptions::default()).unwrap();

    let pm = PathModel::new(&model).unwrap();
    let cfg = PathSampling { dt: 1e-3, n_steps: 1000, pair: None };
    let start = PathStart::Gaussian { q_mean: q0, q_std: std, p_mean: 0.0, p_std: std };
    let paths = sample_ensemble(&pm, start, cfg, 23, 20_000).unwrap();
    let sampled = marginal_from_paths(&paths, None, grid).unwrap();
    let h = grid.q.spacing();
    let lq = coarse_l1(&sampled.marginal_q(), &s1.marginal_q(), h, 5).unwrap();
    let lp = coarse_l1(&sampled.marginal_p(), &s1.marginal_p(), h, 5).unwrap();
    assert!(lq < 0.05 && lp < 0.05, "{lq} {lp}");
}

fn p_second_moment(paths: &[cqdyn::action::ClassicalPath], w: &[f64]) -> f64 {
    paths.iter().zip(w).map(|(path, w)| w * path.p.as_ref().unwrap().last().unwrap().powi(2)).sum()
}

#[test]
fn reweighting_to_state_dependent_diffusion_needs_the_anomalous_term() {
    let reference = PathModel::new(&classical(ScalarPoly::constant(0.6))).unwrap();
    let target = PathModel::new(&classical(ScalarPoly::new(vec![0.4, 0.0, 0.2]))).unwrap();
    let cfg = PathSampling { dt: 0.05, n_steps: 20, pair: None };
    let start = PathStart::Gaussian { q_mean: 0.0, q_std: 0.7, p_mean: 0.0, p_std: 0.3 };
    let n = 40_000;

    let direct = sample_ensemble(&target, start, cfg, 31, n).unwrap();
    let exact = p_second_moment(&direct, &vec![1.0 / n as f64; n]);

    let drawn = sample_ensemble(&reference, start, cfg, 32, n).unwrap();
    let full = normalized_weights(&importance_log_weights(&drawn, &target, &reference, None).unwrap());
    let reweighted = p_second_moment(&drawn, &full);
    assert!((reweighted - exact).abs() < 0.03 * exact, "{reweighted} vs {exact}");

    // dropping the normalization of the state-dependent Gaussian biases the estimate
    let om_only: Vec<f64> = drawn
        .iter()
        .map(|p| om_action(p, &reference, None).unwrap() - om_action(p, &target, None).unwrap())
        .collect();
    let biased = p_second_moment(&drawn, &normalized_weights(&om_only));
    assert!((biased - exact).abs() > 3.0 * (reweighted - exact).abs(), "{biased} vs {exact}");
}
