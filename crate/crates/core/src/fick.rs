//! Plane-sheet release under Fickian diffusion.
//!
//! A slab on `x in [0, 1]` with unit initial concentration and perfect-sink
//! faces releases
//!
//! ```text
//! M_t / M_inf = 1 - sum_k 8 / ((2k+1)^2 pi^2) * exp(-(2k+1)^2 pi^2 d t)
//! ```
//!
//! where `d` is the diffusivity normalized by the squared thickness.

use core::f64::consts::PI;

/// Terms smaller than this end the series.
pub const SERIES_TOLERANCE: f64 = 1e-12;
/// Hard cap on the number of series terms.
pub const SERIES_MAX_TERMS: usize = 10_000;

/// Below this value of `d * t` the short-time expansion `4 sqrt(d t / pi)`
/// is exact to double precision (its first correction is `exp(-1/(4 d t))`),
/// while the long-time series would need more than the term cap.
const SHORT_TIME_LIMIT: f64 = 1e-6;

/// Cumulative release fraction at normalized time `t`.
///
/// Returns 0 for `t <= 0` and for `d_hat <= 0`.
pub fn release(d_hat: f64, t: f64) -> f64 {
    if t <= 0.0 || d_hat <= 0.0 {
        return 0.0;
    }
    let dt = d_hat * t;
    if dt < SHORT_TIME_LIMIT {
        return 4.0 * libm::sqrt(dt / PI);
    }
    let mut sum = 0.0;
    for k in 0..SERIES_MAX_TERMS {
        let odd = (2 * k + 1) as f64;
        let m = odd * odd * PI * PI;
        let term = 8.0 / m * libm::exp(-m * dt);
        sum += term;
        if term < SERIES_TOLERANCE {
            break;
        }
    }
    (1.0 - sum).clamp(0.0, 1.0)
}

/// Concentration profile of the same problem, `u(x, t)`.
pub fn concentration(d_hat: f64, x: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return if x > 0.0 && x < 1.0 { 1.0 } else { 0.0 };
    }
    let mut sum = 0.0;
    for k in 0..SERIES_MAX_TERMS {
        let odd = (2 * k + 1) as f64;
        let decay = libm::exp(-odd * odd * PI * PI * d_hat * t);
        let amp = 4.0 / (odd * PI) * decay;
        sum += amp * libm::sin(odd * PI * x);
        if amp < SERIES_TOLERANCE {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_releases_nothing() {
        assert_eq!(release(0.01, 0.0), 0.0);
    }

    #[test]
    fn large_diffusivity_saturates() {
        assert!((release(100.0, 1.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn short_time_branch_is_continuous() {
        // across the switch the series and the expansion coincide
        let t0 = SHORT_TIME_LIMIT;
        let below = release(1.0, t0 * (1.0 - 1e-9));
        let above = release(1.0, t0 * (1.0 + 1e-9));
        assert!(above > below);
        assert!((above - below) < 1e-10, "{}", above - below);
        // both forms must agree in the overlap where the series still converges
        let d = 1.0;
        let t = 5e-6;
        let short = 4.0 * libm::sqrt(d * t / PI);
        assert!((release(d, t) - short).abs() < 1e-10);
    }

    #[test]
    fn monotone_in_time_and_diffusivity() {
        let ds = [0.001, 0.005, 0.01, 0.05, 0.2, 1.0];
        let ts: alloc::vec::Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        for &d in &ds {
            for w in ts.windows(2) {
                assert!(release(d, w[1]) >= release(d, w[0]));
            }
        }
        for &t in &ts {
            for w in ds.windows(2) {
                assert!(release(w[1], t) >= release(w[0], t));
            }
        }
    }

    #[test]
    fn profile_mean_matches_release() {
        let (d, t) = (0.02, 0.3);
        let n = 2001;
        let h = 1.0 / (n - 1) as f64;
        let mean: f64 = (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * concentration(d, i as f64 * h, t)
            })
            .sum::<f64>()
            * h;
        assert!((1.0 - mean - release(d, t)).abs() < 1e-6);
    }
}
