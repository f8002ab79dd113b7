use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean, std_dev, Matrix, Rng};

use super::SensorSeries;

/// Knobs of the synthetic plant generator.
///
/// Channels are driven by `latents` shared processes, each a sum of two slow
/// sinusoids plus a stable AR(2) component, mixed by a random full-rank map,
/// bent by a mild monotone nonlinearity `u + κ·tanh(u)` and observed with
/// i.i.d. Gaussian noise. Every channel is then given a positive offset of
/// `mean_ratio` times its standard deviation, so an offset level `β` means a
/// bias of roughly `β·mean_ratio` standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub latents: usize,
    pub ar_coeffs: [f64; 2],
    /// Stationary standard deviation of each AR(2) component.
    pub ar_std: f64,
    pub noise_std: f64,
    /// Seed for the structural draws (mixing map, periods, offsets). Falls back
    /// to the series seed.
    pub mix_seed: Option<u64>,
    pub period_range: [f64; 2],
    /// Upper bound of the per-channel nonlinearity strength `κ`.
    pub nonlinearity: f64,
    pub mean_ratio_range: [f64; 2],
    pub scale_range: [f64; 2],
    /// Channel whose fault signature is buried: small mean relative to its
    /// spread and a raised noise floor.
    pub hard_channel: Option<usize>,
    pub hard_noise_factor: f64,
    pub hard_mean_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            latents: 3,
            ar_coeffs: [1.6, -0.7],
            ar_std: 0.3,
            noise_std: 0.05,
            mix_seed: None,
            period_range: [150.0, 1500.0],
            nonlinearity: 0.3,
            mean_ratio_range: [10.0, 20.0],
            scale_range: [0.5, 20.0],
            hard_channel: Some(0),
            hard_noise_factor: 2.0,
            hard_mean_ratio: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, s: usize) -> Result<()> {
        if self.latents == 0 {
            return Err(Error::config("latents", "need at least one latent process"));
        }
        let [p1, p2] = self.ar_coeffs;
        if !(p2.abs() < 1.0 && p1 + p2 < 1.0 && p2 - p1 < 1.0) {
            return Err(Error::config("ar_coeffs", format!("AR(2) with {p1}, {p2} is not stationary")));
        }
        for (name, v) in [
            ("ar_std", self.ar_std),
            ("noise_std", self.noise_std),
            ("nonlinearity", self.nonlinearity),
            ("hard_noise_factor", self.hard_noise_factor),
            ("hard_mean_ratio", self.hard_mean_ratio),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        for (name, [lo, hi]) in [
            ("period_range", self.period_range),
            ("mean_ratio_range", self.mean_ratio_range),
            ("scale_range", self.scale_range),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::config(name, format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if let Some(h) = self.hard_channel {
            if h >= s {
                return Err(Error::config("hard_channel", format!("{h} out of range for {s} channels")));
            }
        }
        Ok(())
    }

    /// Innovation standard deviation giving the AR(2) component `ar_std`.
    fn ar_innovation_std(&self) -> f64 {
        let [p1, p2] = self.ar_coeffs;
        let gain = (1.0 - p2) / ((1.0 + p2) * ((1.0 - p2).powi(2) - p1 * p1));
        self.ar_std / gain.sqrt()
    }
}

/// Generates an `s × n` raw-unit series; identical arguments give identical output.
pub fn gen_synthetic(s: usize, n: usize, seed: u64, config: &SynthConfig) -> Result<SensorSeries<f64>> {
    if s < 2 {
        return Err(Error::config("s", "need at least two channels"));
    }
    if n < 1000 {
        return Err(Error::config("n", "need at least 1000 samples"));
    }
    config.validate(s)?;
    let q = config.latents;
    let mut structure = Rng::new(config.mix_seed.unwrap_or(seed)).split(0);
    let mut signal = Rng::new(seed).split(1);

    let mixing = full_rank_mixing(&mut structure, s, q);
    let waves: Vec<[(f64, f64, f64); 2]> = (0..q)
        .map(|_| {
            [(); 2].map(|_| {
                let period = structure.uniform(config.period_range[0], config.period_range[1]);
                let amp = structure.uniform(0.5, 1.0);
                let phase = structure.uniform(0.0, std::f64::consts::TAU);
                (amp, std::f64::consts::TAU / period, phase)
            })
        })
        .collect();
    let kappa: Vec<f64> = (0..s).map(|_| structure.uniform(0.0, config.nonlinearity)).collect();
    let scale: Vec<f64> = (0..s).map(|_| structure.uniform(config.scale_range[0], config.scale_range[1])).collect();
    let ratio: Vec<f64> = (0..s)
        .map(|i| {
            let r = structure.uniform(config.mean_ratio_range[0], config.mean_ratio_range[1]);
            if config.hard_channel == Some(i) {
                config.hard_mean_ratio
            } else {
                r
            }
        })
        .collect();

    // latent processes
    let innov = config.ar_innovation_std();
    let [p1, p2] = config.ar_coeffs;
    let burn_in = 500;
    let mut latent = Matrix::zeros(q, n);
    for k in 0..q {
        let (mut a1, mut a2) = (0.0, 0.0);
        for t in 0..burn_in + n {
            let a = p1 * a1 + p2 * a2 + innov * signal.normal();
            a2 = a1;
            a1 = a;
            if t >= burn_in {
                let j = t - burn_in;
                let tf = j as f64;
                let wave: f64 = waves[k].iter().map(|&(amp, w, ph)| amp * (w * tf + ph).sin()).sum();
                latent.set(k, j, wave + a);
            }
        }
    }

    let norm = (q as f64).sqrt();
    let mut values = Matrix::zeros(s, n);
    for i in 0..s {
        let noise_sd =
            if config.hard_channel == Some(i) { config.noise_std * config.hard_noise_factor } else { config.noise_std };
        let row: Vec<f64> = (0..n)
            .map(|j| {
                let u: f64 = (0..q).map(|k| mixing.get(i, k) * latent.get(k, j)).sum::<f64>() / norm;
                u + kappa[i] * u.tanh() + noise_sd * signal.normal()
            })
            .collect();
        let sd = std_dev(&row);
        let m = mean(&row);
        let offset = ratio[i] * sd;
        for (j, v) in row.iter().enumerate() {
            values.set(i, j, scale[i] * ((v - m) + offset));
        }
    }
    SensorSeries::from_matrix(values)
}

/// Draws an `s × q` Gaussian map whose Gram matrix is well conditioned.
fn full_rank_mixing(rng: &mut Rng, s: usize, q: usize) -> Matrix<f64> {
    loop {
        let b = Matrix::from_fn(s, q, |_, _| rng.normal());
        let gram = b.transpose().matmul(&b).expect("conformable");
        let rank = q.min(s);
        if smallest_pivot(&gram, rank) > 1e-3 * s as f64 {
            return b;
        }
    }
}

fn smallest_pivot(m: &Matrix<f64>, rank: usize) -> f64 {
    let n = m.rows();
    let mut a = m.clone();
    let mut smallest = f64::INFINITY;
    for k in 0..rank.min(n) {
        let p = (k..n).max_by(|&x, &y| a.get(x, k).abs().total_cmp(&a.get(y, k).abs())).unwrap();
        for j in 0..n {
            let tmp = a.get(k, j);
            a.set(k, j, a.get(p, j));
            a.set(p, j, tmp);
        }
        let piv = a.get(k, k);
        smallest = smallest.min(piv.abs());
        if piv == 0.0 {
            return 0.0;
        }
        for i in k + 1..n {
            let f = a.get(i, k) / piv;
            for j in k..n {
                a.set(i, j, a.get(i, j) - f * a.get(k, j));
            }
        }
    }
    smallest
}

/// Simulates the linear-Gaussian system `x_t = A x_{t−1} + σ ε_t`, started from
/// its stationary regime by a burn-in. Its optimal one-step predictor is `A x_{t−1}`.
pub fn simulate_var1(a: &Matrix<f64>, noise_std: f64, n: usize, seed: u64) -> Result<SensorSeries<f64>> {
    if a.rows() != a.cols() {
        return Err(Error::shape("simulate_var1", "square A", format!("{:?}", a.shape())));
    }
    let s = a.rows();
    let mut rng = Rng::new(seed);
    let mut x = vec![0.0; s];
    let mut next = vec![0.0; s];
    let burn_in = 200;
    let mut values = Matrix::zeros(s, n);
    for t in 0..burn_in + n {
        for i in 0..s {
            next[i] = crate::numerics::dot(a.row(i), &x) + noise_std * rng.normal();
        }
        std::mem::swap(&mut x, &mut next);
        if t >= burn_in {
            values.set_column(t - burn_in, &x);
        }
    }
    SensorSeries::from_matrix(values)
}
