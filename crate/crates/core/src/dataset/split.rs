use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::SensorSeries;

/// Chronological train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    /// About 66 / 7 / 27 percent.
    fn default() -> Self {
        Self {
            train_fraction: 122_641.0 / 185_444.0,
            validation_fraction: 13_627.0 / 185_444.0,
            test_fraction: 49_176.0 / 185_444.0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("validation_fraction", self.validation_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(name, format!("must lie in (0, 1), got {f}")));
            }
        }
        let sum = self.train_fraction + self.validation_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::config("split", format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Segment lengths for `n` samples; the test split absorbs rounding.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let n_train = (self.train_fraction * n as f64).round() as usize;
        let n_val = (self.validation_fraction * n as f64).round() as usize;
        let n_test = n.saturating_sub(n_train + n_val);
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::config("split", format!("empty segment for n = {n}: {n_train}/{n_val}/{n_test}")));
        }
        Ok((n_train, n_val, n_test))
    }
}

pub fn split<T: Scalar>(
    series: &SensorSeries<T>,
    spec: &SplitSpec,
) -> Result<(SensorSeries<T>, SensorSeries<T>, SensorSeries<T>)> {
    let n = series.n_samples();
    let (a, b, _) = spec.sizes(n)?;
    if a < 2 || b < 2 || n - a - b < 2 {
        return Err(Error::config("split", "every segment needs at least two samples"));
    }
    Ok((series.slice(0, a)?, series.slice(a, a + b)?, series.slice(a + b, n)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn plant_sizes() {
        assert_eq!(SplitSpec::default().sizes(185_444).unwrap(), (122_641, 13_627, 49_176));
        let approx = SplitSpec { train_fraction: 0.661, validation_fraction: 0.073, test_fraction: 0.266 };
        let (a, b, c) = approx.sizes(185_444).unwrap();
        assert!((a as i64 - 122_641).abs() < 200);
        assert!((b as i64 - 13_627).abs() < 200);
        assert!((c as i64 - 49_176).abs() < 200);
    }

    #[test]
    fn thirds_and_partition() {
        let m = Matrix::from_fn(2, 9, |i, j| (i * 100 + j) as f64);
        let s = SensorSeries::from_matrix(m.clone()).unwrap();
        let third = 1.0 / 3.0;
        let spec = SplitSpec { train_fraction: third, validation_fraction: third, test_fraction: third };
        let (a, b, c) = split(&s, &spec).unwrap();
        assert_eq!((a.n_samples(), b.n_samples(), c.n_samples()), (3, 3, 3));
        let mut joined = Vec::new();
        for part in [&a, &b, &c] {
            joined.extend_from_slice(part.values().row(1));
        }
        assert_eq!(joined, m.row(1));
        assert_eq!(c.time()[0], 6.0);
    }

    #[test]
    fn bad_fractions() {
        let spec = SplitSpec { train_fraction: 0.5, validation_fraction: 0.5, test_fraction: 0.5 };
        assert!(matches!(spec.validate(), Err(Error::Config { .. })));
        let spec = SplitSpec { train_fraction: -0.1, validation_fraction: 0.6, test_fraction: 0.5 };
        assert!(spec.validate().is_err());
    }
}
