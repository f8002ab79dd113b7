//! GreedyIso and closed-loop bias estimation on a linear-Gaussian system whose
//! optimal one-step predictor is known in closed form.

use sfdsfi::dataset::{inject_fault, simulate_var1, FaultSpec};
use sfdsfi::numerics::{Matrix, Rng};
use sfdsfi::predictor::{predict_series, FeedMode, LinearPredictor};
use sfdsfi::residuals::{ResidualProfile, ResidualStream};
use sfdsfi::sfd::choose_k;
use sfdsfi::sfi::{
    estimate_bias_closedloop, greedy_iso, greedy_iso_sparse, Aggregation, CandidateOrder, IsolationSetup, SfiWindow,
    SparseSolveConfig,
};

const S: usize = 4;

fn transition() -> Matrix<f64> {
    Matrix::from_fn(S, S, |i, j| {
        if i == j {
            0.3
        } else if (i + 1) % S == j {
            0.15
        } else {
            0.0
        }
    })
}

fn calibrated_gamma(p_fa: f64) -> f64 {
    let a = transition();
    let model = LinearPredictor::new(a.clone()).unwrap();
    let healthy = simulate_var1(&a, 1.0, 100_000, 999).unwrap();
    let run = predict_series(&model, healthy.values(), &FeedMode::OpenLoop, 0, 100_000).unwrap();
    let norms = ResidualStream::from_run(healthy.values(), &run).unwrap().norms;
    ResidualProfile::calibrate(&norms, p_fa).unwrap().gamma
}

struct Trial {
    x: Matrix<f64>,
    window: SfiWindow,
    channel: usize,
}

fn trial(seed: u64, delta: f64) -> Trial {
    let a = transition();
    let series = simulate_var1(&a, 1.0, 900, seed).unwrap();
    let channel = Rng::new(seed).split(7).below(S);
    let window = SfiWindow::after_detection(500, 60, 60, 200);
    let mut d = vec![0.0; S];
    d[channel] = delta;
    let x = inject_fault(&series, &FaultSpec { delta: d, onset: window.t_star }).unwrap();
    Trial { x: x.values().clone(), window, channel }
}

#[test]
fn closed_loop_gap_tracks_injected_bias() {
    let model = LinearPredictor::new(transition()).unwrap();
    let mut errs = Vec::new();
    for seed in 0..30 {
        for sign in [1.0, -1.0] {
            let t = trial(seed, 5.0 * sign);
            let d = estimate_bias_closedloop(&model, &t.x, &t.window, &[t.channel]).unwrap();
            assert_eq!(d[0].signum(), sign);
            errs.push((d[0] - 5.0 * sign).abs());
        }
        let clean = trial(seed, 0.0);
        let d = estimate_bias_closedloop(&model, &clean.x, &clean.window, &[clean.channel]).unwrap();
        assert!(d[0].abs() < 1.5, "null estimate {}", d[0]);
    }
    let mean_err = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean_err < 0.5, "mean |Δ̂ − Δ*| = {mean_err}");
}

#[test]
fn greedy_iso_recovers_single_faults() {
    let p_fa = 1e-4;
    let gamma = calibrated_gamma(p_fa);
    let rule = choose_k(60, p_fa, 0.1).unwrap();
    let model = LinearPredictor::new(transition()).unwrap();
    let mut exact = 0;
    let mut sparse_agree = 0;
    let mut rel_errs = Vec::new();
    for seed in 0..50 {
        let t = trial(1000 + seed, 5.0);
        let setup = IsolationSetup { window: t.window, gamma, rule, aggregation: Aggregation::Absolute };
        let rep = greedy_iso(&model, &t.x, &setup, &CandidateOrder::Contribution).unwrap();
        assert!(rep.candidate_evaluations() <= S);
        if rep.fault_list == vec![t.channel] {
            exact += 1;
            rel_errs.push((rep.delta_hat[0] - 5.0).abs() / 5.0);
        }
        let sp =
            greedy_iso_sparse(&model, &t.x, &setup, &SparseSolveConfig { eta: 0.0, ..Default::default() }).unwrap();
        if sp.fault_list == rep.fault_list {
            sparse_agree += 1;
        }
    }
    eprintln!("exact {exact}/50, sparse agrees {sparse_agree}/50, rel errs {rel_errs:?}");
    assert!(exact >= 48, "exact recovery {exact}/50");
    assert!(sparse_agree >= 48);
    assert!(rel_errs.iter().all(|&e| e <= 0.1), "{rel_errs:?}");
}

#[test]
fn clean_window_yields_empty_list() {
    let p_fa = 1e-4;
    let gamma = calibrated_gamma(p_fa);
    let rule = choose_k(60, p_fa, 0.1).unwrap();
    let model = LinearPredictor::new(transition()).unwrap();
    let t = trial(5, 0.0);
    let setup = IsolationSetup { window: t.window, gamma, rule, aggregation: Aggregation::Absolute };
    let rep = greedy_iso(&model, &t.x, &setup, &CandidateOrder::Contribution).unwrap();
    if rep.initial.pd == 0.0 {
        assert!(rep.fault_list.is_empty());
        assert!(rep.iterations.is_empty());
    }
}
