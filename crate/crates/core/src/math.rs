//! Small numerical helpers shared by the model and the selection code.

/// `ln(Σ exp(x_i))`, shifted by the maximum so large magnitudes neither
/// overflow nor underflow. Returns `-inf` for an empty slice or all `-inf`.
#[inline]
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-masses in place into probabilities.
///
/// Entries set to `-inf` receive probability exactly zero.
pub fn softmax_in_place(values: &mut [f64]) {
    let lse = logsumexp(values);
    for x in values.iter_mut() {
        *x = (*x - lse).exp();
    }
}

/// Shannon entropy in nats; `0 ln 0` is taken as 0.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Running mean that is exact when every sample is identical.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMean {
    count: usize,
    mean: f64,
}

impl RunningMean {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then_some(self.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct_sum() {
        let v = [-1.0, -2.0, -3.0];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v) - direct).abs() < 1e-14);
    }

    #[test]
    fn logsumexp_survives_large_magnitudes() {
        let v = [-5000.0, -5001.0];
        let expected = -5000.0 + (1.0 + (-1.0f64).exp()).ln();
        assert!((logsumexp(&v) - expected).abs() < 1e-10);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn softmax_zeroes_excluded_entries() {
        let mut v = [0.0, f64::NEG_INFINITY, 0.0];
        softmax_in_place(&mut v);
        assert_eq!(v, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn entropy_of_uniform_is_log_k() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn running_mean_of_identical_values_is_exact() {
        let x = 0.1 + 0.2;
        let mut m = RunningMean::default();
        for _ in 0..7 {
            m.push(x);
        }
        assert_eq!(m.mean(), Some(x));
    }
}
