//! Log-domain arithmetic helpers.
//!
//! All detection statistics in this crate live in log space: the local
//! statistics grow multiplicatively and overflow `f64` within a few dozen
//! steps of a real change, so sums of them are always formed through
//! [`log_add_exp`] / [`log_sum_exp`]. Negative infinity is the additive
//! identity (it represents a term equal to zero) and both helpers treat it
//! exactly.

/// `ln(exp(a) + exp(b))` without leaving log space.
///
/// Handles `-inf` on either side exactly; `log_add_exp(-inf, -inf)` is
/// `-inf`. Accurate to a couple of ulps via `ln_1p` on the smaller term.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(Σ exp(x_i))` over a slice, `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - hi).exp()).sum();
    hi + sum.ln()
}

/// Mean and standard error of the mean of a sample.
///
/// Standard error uses the unbiased (n−1) variance; a sample of size one
/// reports a standard error of zero.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    let var = ss / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_matches_direct_arithmetic() {
        let cases: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 2.0), (-3.5, 4.25), (10.0, 10.0)];
        for (a, b) in cases {
            let direct = (a.exp() + b.exp()).ln();
            assert!((log_add_exp(a, b) - direct).abs() < 1e-12, "({a}, {b})");
        }
    }

    #[test]
    fn log_add_exp_neg_infinity_is_identity() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
        assert_eq!(log_add_exp(3.0, f64::NEG_INFINITY), 3.0);
        assert_eq!(
            log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn log_add_exp_survives_magnitudes_that_overflow_raw_space() {
        // exp(800) overflows f64; the log-domain sum must not.
        let got = log_add_exp(800.0, 800.0);
        assert!((got - (800.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_matches_direct_arithmetic() {
        let xs: [f64; 5] = [0.3, -1.2, 2.5, 2.5, -40.0];
        let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_empty_and_all_neg_inf() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn mean_and_stderr_known_values() {
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        // Sample variance 5/3, so the standard error is sqrt(5/12).
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        let (m1, se1) = mean_and_stderr(&[7.0]);
        assert_eq!((m1, se1), (7.0, 0.0));
    }
}
