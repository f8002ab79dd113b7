//! Parameter gradients of every loss mode against central finite differences.

use sfdsfi::numerics::{finite_diff_grad, Matrix, Rng};
use sfdsfi::predictor::{batch_loss_and_grad, FfnnModel, GruModel, LossMode, Trainable};

/// Elementwise `|a − f| / max(|a|, |f|, 1e-6)`, maximized.
fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-6)).fold(0.0, f64::max)
}

fn check<M: Trainable<f64>>(model: &M, x: &Matrix<f64>, lambda: f64, mode: LossMode) -> f64 {
    let t0 = model.first_target();
    let t1 = x.cols();
    let mut carry = model.initial_carry();
    let (_, grad) = batch_loss_and_grad(model, x, t0, t1, &mut carry, lambda, mode).unwrap();
    let numeric = finite_diff_grad(
        |p: &[f64]| {
            let mut m = model.clone();
            m.params_mut().copy_from_slice(p);
            let mut c = m.initial_carry();
            batch_loss_and_grad(&m, x, t0, t1, &mut c, lambda, mode).unwrap().0.total
        },
        model.params(),
        1e-5,
    )
    .unwrap();
    max_rel_err(&grad, &numeric)
}

fn modes(s: usize) -> Vec<(f64, LossMode)> {
    vec![(0.0, LossMode::None), (0.5, LossMode::Full), (0.5, LossMode::Targeted(s - 1)), (0.01, LossMode::Full)]
}

#[test]
fn gru_gradients_match_finite_differences() {
    for trial in 0..6u64 {
        let mut rng = Rng::new(100 + trial);
        let s = 1 + (trial as usize % 3);
        let h = 1 + (trial as usize % 4);
        let len = 6 + (trial as usize * 3) % 7;
        let model = GruModel::new(s, h, &mut rng).unwrap();
        let x = Matrix::from_fn(s, len, |_, _| rng.normal());
        for (lambda, mode) in modes(s) {
            let err = check(&model, &x, lambda, mode);
            assert!(err <= 1e-4, "trial {trial} s={s} h={h} {mode:?}: {err:e}");
        }
    }
}

#[test]
fn gru_two_sensor_three_hidden_twelve_steps() {
    let mut rng = Rng::new(7);
    let model = GruModel::new(2, 3, &mut rng).unwrap();
    let x = Matrix::from_fn(2, 13, |_, _| rng.normal());
    let err = check(&model, &x, 0.01, LossMode::Full);
    assert!(err <= 1e-4, "{err:e}");
}

#[test]
fn ffnn_gradients_match_finite_differences() {
    for trial in 0..4u64 {
        let mut rng = Rng::new(200 + trial);
        let s = 1 + (trial as usize % 3);
        let model = FfnnModel::new(s, 2, 4, &mut rng).unwrap();
        let x = Matrix::from_fn(s, 12, |_, _| rng.normal());
        for (lambda, mode) in modes(s) {
            let err = check(&model, &x, lambda, mode);
            assert!(err <= 1e-4, "trial {trial} {mode:?}: {err:e}");
        }
    }
}

#[test]
fn ffnn_three_sensors_window_two_is_tight() {
    let mut rng = Rng::new(9);
    let model = FfnnModel::new(3, 2, 5, &mut rng).unwrap();
    let x = Matrix::from_fn(3, 12, |_, _| rng.normal());
    let err = check(&model, &x, 0.0, LossMode::None);
    assert!(err <= 1e-6, "{err:e}");
}
