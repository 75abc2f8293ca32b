//! Proportion and mean estimators used by every Monte-Carlo check.

use serde::Serialize;

/// Pass margin, in standard errors, applied to every lower-bound check.
pub const PASS_MARGIN_SE: f64 = 3.0;

/// Two-sided 99% normal quantile used for the reported Wilson intervals.
pub const Z_99: f64 = 2.576;

/// Wilson score interval for `successes` out of `trials`.
///
/// Returns `None` when `trials == 0`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Option<(f64, f64)> {
    assert!(successes <= trials, "successes exceed trials");
    if trials == 0 {
        return None;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = (center - half).max(0.0);
    let hi = if successes == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    let lo = if successes == 0 { 0.0 } else { lo };
    Some((lo, hi))
}

/// Binomial proportion with its standard error and Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub mean: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Proportion {
    /// `None` when there were no trials: the estimate is undefined, not zero.
    pub fn new(successes: u64, trials: u64) -> Option<Self> {
        let (ci_lo, ci_hi) = wilson_interval(successes, trials, Z_99)?;
        let n = trials as f64;
        let mean = successes as f64 / n;
        Some(Proportion {
            successes,
            trials,
            mean,
            stderr: (mean * (1.0 - mean) / n).sqrt(),
            ci_lo,
            ci_hi,
        })
    }

    pub fn passes_lower_bound(&self, bound: f64) -> bool {
        self.mean >= bound - PASS_MARGIN_SE * self.stderr
    }

    pub fn passes_upper_bound(&self, bound: f64) -> bool {
        self.mean <= bound + PASS_MARGIN_SE * self.stderr
    }
}

/// Mergeable accumulator for the sample mean of a real-valued quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl MeanAccumulator {
    /// Sequential accumulation, so the floating-point sum is reproducible.
    pub fn from_values(values: &[f64]) -> Self {
        let mut acc = Self::default();
        values.iter().for_each(|&v| acc.push(v));
        acc
    }

    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    /// Standard error of the mean (sample variance with Bessel correction).
    pub fn stderr(&self) -> Option<f64> {
        if self.count < 2 {
            return if self.count == 1 { Some(0.0) } else { None };
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        Some((var / n).sqrt())
    }

    pub fn estimate(&self) -> Option<MeanEstimate> {
        Some(MeanEstimate {
            count: self.count,
            mean: self.mean()?,
            stderr: self.stderr()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub count: u64,
    pub mean: f64,
    pub stderr: f64,
}

impl MeanEstimate {
    pub fn passes_lower_bound(&self, bound: f64) -> bool {
        self.mean >= bound - PASS_MARGIN_SE * self.stderr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_zero_trials_is_undefined() {
        assert_eq!(wilson_interval(0, 0, 1.96), None);
        assert!(Proportion::new(0, 0).is_none());
    }

    #[test]
    fn wilson_half() {
        // Closed form: center 0.5, half-width 1.96*sqrt(0.0025 + 0.000096)/1.038416.
        let (lo, hi) = wilson_interval(50, 100, 1.96).unwrap();
        assert!((lo - 0.40383).abs() < 1e-4, "{lo}");
        assert!((hi - 0.59617).abs() < 1e-4, "{hi}");
    }

    #[test]
    fn wilson_boundaries() {
        let (lo, hi) = wilson_interval(100, 100, 1.96).unwrap();
        assert_eq!(hi, 1.0);
        assert!(lo > 0.95);
        let (lo, _) = wilson_interval(0, 100, 1.96).unwrap();
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn mean_accumulator_matches_direct() {
        let data = [1.0, 2.0, 4.0, 7.0];
        let mut acc = MeanAccumulator::default();
        data.iter().for_each(|&v| acc.push(v));
        assert_eq!(acc.mean(), Some(3.5));
        let var = data.iter().map(|v| (v - 3.5f64).powi(2)).sum::<f64>() / 3.0;
        assert!((acc.stderr().unwrap() - (var / 4.0).sqrt()).abs() < 1e-12);
        let (a, b) = (data[..2].iter(), data[2..].iter());
        let mut x = MeanAccumulator::default();
        let mut y = MeanAccumulator::default();
        a.for_each(|&v| x.push(v));
        b.for_each(|&v| y.push(v));
        assert_eq!(x.merge(y), acc);
    }
}
