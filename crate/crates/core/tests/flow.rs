use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ntk_spectra::kernel_flow::*;
use ntk_spectra::ntk_kernels::{Kernel, NtkDescriptor};
use ntk_spectra::rng::substream;
use ntk_spectra::spectral_estimator::{DistributionKind, SampleDistribution};
use proptest::prelude::*;

fn truth(d: usize, seed: u64) -> Target {
    let target = kernel_target(d, 2, seed).unwrap();
    Arc::new(move |x: &[f64]| target.predict(x))
}

fn noisy_task(d: usize, n: usize, sigma: f64, seed: u64) -> RegressionTask {
    let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, d, seed);
    synthetic_task(truth(d, seed), &dist, n, sigma, &mut substream(seed, "flow-test", 0)).unwrap()
}

/// `K(x, X) K⁻¹ (I − exp(−K t/n)) y` with a dense matrix exponential.
fn oracle(kernel: &NtkDescriptor, task: &RegressionTask, x: &[f64], t: f64) -> f64 {
    let n = task.n();
    let k = kernel.gram_matrix(&task.x);
    let decay = (&k * (-t / n as f64)).exp();
    let y = DVector::from_column_slice(&task.y);
    let filtered = (DMatrix::identity(n, n) - decay) * y;
    let c = k.clone().cholesky().expect("PD Gram").solve(&filtered);
    let row = DVector::from_iterator(n, task.x.iter().map(|xi| kernel.eval(x, xi)));
    row.dot(&c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closed_form_matches_matrix_exponential(seed in any::<u64>(), n in 3usize..=20, d in 1usize..=3, log_t in -1.0f64..2.5) {
        let kernel = NtkDescriptor::full(2).unwrap();
        let task = noisy_task(d, n, 0.3, seed);
        let flow = FlowPredictor::new(kernel, &task).unwrap();
        let t = 10f64.powf(log_t);
        let probes = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.5, hi: 1.5 }, d, seed ^ 1);
        let probes = ntk_spectra::spectral_estimator::sample(&probes, 5).unwrap();
        let scale = task.y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for x in &probes {
            let a = flow.predict(x, t).unwrap();
            let b = oracle(&kernel, &task, x, t);
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(scale), "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn train_residual_is_a_matrix_exponential(seed in any::<u64>(), n in 3usize..=20, log_t in -1.0f64..3.0) {
        let kernel = NtkDescriptor::full(3).unwrap();
        let task = noisy_task(2, n, 0.3, seed);
        let flow = FlowPredictor::new(kernel, &task).unwrap();
        let t = 10f64.powf(log_t);
        let k = kernel.gram_matrix(&task.x);
        let y = DVector::from_column_slice(&task.y);
        let exact = ((&k * (-t / n as f64)).exp() * &y).norm();
        let fitted = (flow.train_predictions(t).unwrap() - &y).norm();
        prop_assert!((flow.train_residual(t).unwrap() - exact).abs() <= 1e-10 * y.norm());
        prop_assert!((fitted - exact).abs() <= 1e-10 * y.norm());
        prop_assert!(flow.train_residual(t).unwrap() <= flow.residual_envelope(t) * (1.0 + 1e-12));
    }

    #[test]
    fn training_fit_never_increases(seed in any::<u64>()) {
        let task = noisy_task(1, 30, 0.5, seed);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        let times = log_grid(1e-3, 1e8, 60);
        let residuals: Vec<f64> = times.iter().map(|&t| flow.train_residual(t).unwrap()).collect();
        for w in residuals.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn predictor_follows_its_ode(seed in any::<u64>(), log_t in 0.0f64..3.0) {
        let task = noisy_task(2, 15, 0.3, seed);
        let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
        let t = 10f64.powf(log_t);
        let h = 1e-4 * t;
        let x = vec![0.3, -0.4];
        let fd = (flow.predict(&x, t + h).unwrap() - flow.predict(&x, t - h).unwrap()) / (2.0 * h);
        let residual = flow.train_predictions(t).unwrap() - DVector::from_column_slice(&task.y);
        let row = DVector::from_iterator(task.n(), task.x.iter().map(|xi| flow.kernel().eval(&x, xi)));
        let rhs = -row.dot(&residual) / task.n() as f64;
        prop_assert!((fd - rhs).abs() <= 1e-6 * rhs.abs().max(1e-3));
    }
}

#[test]
fn predictor_starts_at_zero() {
    let task = noisy_task(2, 12, 0.3, 4);
    let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
    assert_eq!(flow.predict(&[0.1, 0.2], 0.0).unwrap(), 0.0);
    assert!(flow.train_predictions(0.0).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn noiseless_flow_interpolates() {
    let task = noisy_task(1, 25, 0.0, 9);
    let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
    let y = DVector::from_column_slice(&task.y).norm();
    assert!(flow.train_residual(1e14).unwrap() < 1e-6 * y);
}

#[test]
fn holdout_risk_is_u_shaped() {
    let runs = 50;
    let mut interior = 0;
    for run in 0..runs {
        let seed = 500 + run as u64;
        let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, 1, seed);
        let f = truth(1, seed);
        let mut rng = substream(seed, "u-shape", 0);
        let task = synthetic_task(f.clone(), &dist, 100, 0.3, &mut rng).unwrap();
        let holdout = synthetic_task(f, &dist, 100, 0.3, &mut rng).unwrap();
        let flow = FlowPredictor::new_tolerant(NtkDescriptor::full(2).unwrap(), &task, GRAM_TOLERANCE).unwrap();
        let times = log_grid(1e-1, 1e9, 41);
        let curve = risk_curve(&flow, &times, (&holdout.x, &holdout.y), None, None).unwrap();
        let best = curve
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.holdout_risk.total_cmp(&b.1.holdout_risk))
            .map(|(i, _)| i)
            .unwrap();
        if best > 0 && best + 1 < curve.len() {
            interior += 1;
        }
    }
    assert!(interior * 10 >= runs * 8, "interior minimum in {interior}/{runs} runs");
}

#[test]
fn cv_selection_prefers_smallest_time_on_ties() {
    // Zero labels give the zero predictor at every time, so all scores tie.
    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![-1.0 + 0.2 * i as f64]).collect();
    let task = RegressionTask::new(x, vec![0.0; 10]).unwrap();
    let flow = FlowPredictor::new(NtkDescriptor::full(2).unwrap(), &task).unwrap();
    let sel = cv_select_stopping(&flow, &[1.0, 2.0, 4.0], &[vec![0.5]], &[0.3], 1.0).unwrap();
    assert_eq!(sel.index, 0);
    assert_eq!(sel.t_cv, 1.0);
}

#[test]
fn risk_helpers_on_trivial_predictors() {
    let dist = SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, 2, 0);
    let one = |_: &[f64]| 1.0;
    let zero = |_: &[f64]| 0.0;
    assert_eq!(l2_risk(&zero, &one, &dist, 200, 1).unwrap(), 1.0);
    assert_eq!(l2_risk(&one, &one, &dist, 200, 1).unwrap(), 0.0);
    assert_eq!(sup_risk(&one, &one, &[vec![0.0, 0.0]]), 0.0);
}
