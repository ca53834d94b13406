//! Levenberg–Marquardt for small, dense least-squares problems.
//!
//! The Jacobian is taken by central differences, so the residual function
//! only needs to be evaluable.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Relative change of the sum of squares that counts as converged.
    pub ssr_rel_tol: f64,
    pub max_iterations: usize,
    /// Jacobian step is `fd_rel_step * max(|p|, 1)`.
    pub fd_rel_step: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            initial_lambda: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            ssr_rel_tol: 1e-10,
            max_iterations: 500,
            fd_rel_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub ssr: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `sum r_i(p)^2` where `residuals(p, r)` fills `r` (length `m`).
pub fn minimize<F>(mut residuals: F, start: &[f64], m: usize, settings: &LmSettings) -> LmReport
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = start.len();
    let mut p = start.to_vec();
    let mut r = vec![0.0; m];
    residuals(&p, &mut r);
    let mut ssr = sum_sq(&r);
    let mut lambda = settings.initial_lambda;

    let mut jac = vec![0.0; m * n];
    let mut r_plus = vec![0.0; m];
    let mut r_minus = vec![0.0; m];
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    let mut iterations = 0;
    let mut converged = false;
    let mut need_jacobian = true;
    let mut jtj = vec![0.0; n * n];
    let mut jtr = vec![0.0; n];

    while iterations < settings.max_iterations {
        if !ssr.is_finite() {
            break;
        }
        if ssr == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        if need_jacobian {
            let mut q = p.clone();
            for j in 0..n {
                let h = settings.fd_rel_step * p[j].abs().max(1.0);
                q[j] = p[j] + h;
                residuals(&q, &mut r_plus);
                q[j] = p[j] - h;
                residuals(&q, &mut r_minus);
                q[j] = p[j];
                for i in 0..m {
                    jac[i * n + j] = (r_plus[i] - r_minus[i]) / (2.0 * h);
                }
            }
            for a in 0..n {
                jtr[a] = (0..m).map(|i| jac[i * n + a] * r[i]).sum();
                for b in 0..n {
                    jtj[a * n + b] = (0..m).map(|i| jac[i * n + a] * jac[i * n + b]).sum();
                }
            }
            need_jacobian = false;
        }

        let mut system = jtj.clone();
        for a in 0..n {
            // Marquardt scaling, floored so flat directions still get damped
            system[a * n + a] += lambda * jtj[a * n + a].max(1e-12);
        }
        let rhs: Vec<f64> = jtr.iter().map(|g| -g).collect();
        let Some(step) = solve_dense(system, rhs) else {
            lambda *= settings.lambda_up;
            if lambda > 1e20 {
                converged = true;
                break;
            }
            continue;
        };
        for j in 0..n {
            trial[j] = p[j] + step[j];
        }
        residuals(&trial, &mut r_trial);
        let trial_ssr = sum_sq(&r_trial);
        if trial_ssr.is_finite() && trial_ssr <= ssr {
            let rel = (ssr - trial_ssr) / ssr.max(f64::MIN_POSITIVE);
            p.copy_from_slice(&trial);
            r.copy_from_slice(&r_trial);
            ssr = trial_ssr;
            lambda = (lambda / settings.lambda_down).max(1e-15);
            need_jacobian = true;
            if rel < settings.ssr_rel_tol {
                converged = true;
                break;
            }
        } else {
            lambda *= settings.lambda_up;
            if lambda > 1e20 {
                // no descent direction left: stationary to working precision
                converged = true;
                break;
            }
        }
    }
    LmReport { params: p, ssr, iterations, converged }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` system.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 || !a[pivot * n + col].is_finite() {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * libm::exp(-1.3 * t)).collect();
        let rep = minimize(
            |p, r| {
                for (i, (t, y)) in ts.iter().zip(&ys).enumerate() {
                    r[i] = p[0] * libm::exp(-p[1] * t) - y;
                }
            },
            &[1.0, 0.5],
            ts.len(),
            &LmSettings::default(),
        );
        assert!(rep.converged);
        assert!((rep.params[0] - 2.5).abs() < 1e-6);
        assert!((rep.params[1] - 1.3).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock_as_least_squares() {
        let rep = minimize(
            |p, r| {
                r[0] = 10.0 * (p[1] - p[0] * p[0]);
                r[1] = 1.0 - p[0];
            },
            &[-1.2, 1.0],
            2,
            &LmSettings::default(),
        );
        assert!((rep.params[0] - 1.0).abs() < 1e-6, "{:?}", rep);
        assert!((rep.params[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let settings = LmSettings { max_iterations: 1, ..LmSettings::default() };
        let rep = minimize(
            |p, r| {
                r[0] = 10.0 * (p[1] - p[0] * p[0]);
                r[1] = 1.0 - p[0];
            },
            &[-1.2, 1.0],
            2,
            &settings,
        );
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn dense_solver_pivots() {
        let x = solve_dense(alloc::vec![0.0, 1.0, 1.0, 0.0], alloc::vec![2.0, 3.0]).unwrap();
        assert_eq!(x, alloc::vec![3.0, 2.0]);
        assert!(solve_dense(alloc::vec![0.0; 4], alloc::vec![1.0, 1.0]).is_none());
    }
}
