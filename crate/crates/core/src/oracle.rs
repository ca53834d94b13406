//! Brute-force finite-difference solution of the slab diffusion problem, used
//! as an independent check on the series and on trained networks.
//!
//! Crank–Nicolson in time on a grid clustered toward the walls. The unit
//! initial profile jumps to zero at both faces, so early on all the action
//! sits in a boundary layer of width `sqrt(d t)`, far thinner than a uniform
//! cell. Cosine-spaced nodes resolve it, and the first time interval is
//! covered by geometrically graded backward-Euler substeps, which also damp
//! the oscillation Crank–Nicolson would otherwise produce at the jump.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backward-Euler substeps spanning the first time interval.
const STARTUP_SUBSTEPS: usize = 30;
/// Length of the first substep relative to the time step.
const STARTUP_FIRST: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeOracleSolution {
    pub d_hat: f64,
    pub nx: usize,
    pub nt: usize,
    pub t_max: f64,
    /// Node positions, symmetric about 1/2 and clustered at the walls.
    pub x: Vec<f64>,
    /// `nt x nx`, row `j` is the profile at `t_j`.
    pub u: Vec<f64>,
}

impl PdeOracleSolution {
    pub fn t(&self, j: usize) -> f64 {
        self.t_max * j as f64 / (self.nt - 1) as f64
    }

    pub fn profile(&self, j: usize) -> &[f64] {
        &self.u[j * self.nx..(j + 1) * self.nx]
    }

    pub fn at(&self, j: usize, i: usize) -> f64 {
        self.u[j * self.nx + i]
    }

    /// Trapezoid mass of profile `j`.
    pub fn mass(&self, j: usize) -> f64 {
        let p = self.profile(j);
        self.x.windows(2).zip(p.windows(2)).map(|(x, u)| 0.5 * (x[1] - x[0]) * (u[0] + u[1])).sum()
    }

    /// Release fraction at grid time `j`, `1 - M(t) / M(0)`.
    pub fn release(&self, j: usize) -> f64 {
        1.0 - self.mass(j) / self.mass(0)
    }

    /// Release fraction at arbitrary `t`, linearly interpolated in time.
    pub fn release_at(&self, t: f64) -> f64 {
        let s = (t / self.t_max).clamp(0.0, 1.0) * (self.nt - 1) as f64;
        let j = (libm::floor(s) as usize).min(self.nt - 2);
        let w = s - j as f64;
        (1.0 - w) * self.release(j) + w * self.release(j + 1)
    }
}

/// Cosine-spaced nodes on `[0, 1]`, mirrored about 1/2.
fn wall_clustered_grid(nx: usize) -> Vec<f64> {
    let mut x = vec![0.0; nx];
    for i in 0..nx.div_ceil(2) {
        let v = 0.5 * (1.0 - libm::cos(PI * i as f64 / (nx - 1) as f64));
        x[i] = v;
        x[nx - 1 - i] = 1.0 - v;
    }
    if nx % 2 == 1 {
        x[nx / 2] = 0.5;
    }
    x
}

/// Solves `u_t = d u_xx` on `[0, 1] x [0, 1]`, `u(x, 0) = 1`, `u(0, t) = u(1, t) = 0`.
pub fn solve_pde_oracle(d_hat: f64, nx: usize, nt: usize) -> Result<PdeOracleSolution> {
    solve_pde_oracle_until(d_hat, nx, nt, 1.0)
}

pub fn solve_pde_oracle_until(d_hat: f64, nx: usize, nt: usize, t_max: f64) -> Result<PdeOracleSolution> {
    if nx < 3 || nt < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "oracle grid needs nx >= 3 and nt >= 2, got {nx} x {nt}"
        )));
    }
    if !(d_hat >= 0.0 && d_hat.is_finite() && t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidArgument("oracle needs d >= 0 and t_max > 0".into()));
    }
    let x = wall_clustered_grid(nx);
    let m = nx - 2;
    // three-point second difference at interior node i + 1
    let mut lo = vec![0.0; m];
    let mut di = vec![0.0; m];
    let mut up = vec![0.0; m];
    for i in 0..m {
        let hm = x[i + 1] - x[i];
        let hp = x[i + 2] - x[i + 1];
        lo[i] = 2.0 / (hm * (hm + hp));
        up[i] = 2.0 / (hp * (hm + hp));
        di[i] = -2.0 / (hm * hp);
    }

    let dt = t_max / (nt - 1) as f64;
    let mut u = vec![0.0; nt * nx];
    u[1..nx - 1].fill(1.0);
    let mut cur: Vec<f64> = vec![1.0; m];
    let mut rhs = vec![0.0; m];
    let mut work = Tridiagonal::new(m);

    for j in 1..nt {
        if j == 1 {
            let ratio = libm::pow(1.0 / STARTUP_FIRST, 1.0 / (STARTUP_SUBSTEPS - 1) as f64);
            let mut t_prev = 0.0;
            let mut t_next = STARTUP_FIRST * dt;
            for _ in 0..STARTUP_SUBSTEPS {
                let k = d_hat * (t_next - t_prev);
                rhs.copy_from_slice(&cur);
                work.solve(|i| (-k * lo[i], 1.0 - k * di[i], -k * up[i]), &mut rhs);
                cur.copy_from_slice(&rhs);
                t_prev = t_next;
                t_next = (t_next * ratio).min(dt);
            }
        } else {
            let k = 0.5 * d_hat * dt;
            for i in 0..m {
                let left = if i > 0 { cur[i - 1] } else { 0.0 };
                let right = if i + 1 < m { cur[i + 1] } else { 0.0 };
                rhs[i] = cur[i] + k * (lo[i] * left + di[i] * cur[i] + up[i] * right);
            }
            work.solve(|i| (-k * lo[i], 1.0 - k * di[i], -k * up[i]), &mut rhs);
            cur.copy_from_slice(&rhs);
        }
        u[j * nx + 1..j * nx + nx - 1].copy_from_slice(&cur);
    }
    Ok(PdeOracleSolution { d_hat, nx, nt, t_max, x, u })
}

/// Thomas algorithm scratch space.
struct Tridiagonal {
    c: Vec<f64>,
}

impl Tridiagonal {
    fn new(n: usize) -> Self {
        Tridiagonal { c: vec![0.0; n] }
    }

    /// Solves in place; `row(i)` gives `(sub, diag, super)` of row `i`.
    fn solve(&mut self, row: impl Fn(usize) -> (f64, f64, f64), b: &mut [f64]) {
        let n = b.len();
        let (_, d0, u0) = row(0);
        self.c[0] = u0 / d0;
        b[0] /= d0;
        for i in 1..n {
            let (l, d, u) = row(i);
            let denom = d - l * self.c[i - 1];
            self.c[i] = u / denom;
            b[i] = (b[i] - l * b[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            b[i] -= self.c[i] * b[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fick;

    #[test]
    fn no_diffusion_keeps_interior_full() {
        let s = solve_pde_oracle(0.0, 21, 11).unwrap();
        for j in 0..s.nt {
            let p = s.profile(j);
            assert_eq!((p[0], p[20]), (0.0, 0.0));
            assert!(s.x.len() == 21);
            assert!(p[1..20].iter().all(|&v| v == 1.0));
            assert_eq!(s.release(j), 0.0);
        }
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(solve_pde_oracle(0.01, 2, 10).is_err());
        assert!(solve_pde_oracle(0.01, 10, 1).is_err());
        assert!(solve_pde_oracle(-1.0, 10, 10).is_err());
    }

    #[test]
    fn matches_series_at_unit_time() {
        let s = solve_pde_oracle(0.01, 201, 2001).unwrap();
        assert!((s.release(2000) - fick::release(0.01, 1.0)).abs() < 1e-4);
    }

    #[test]
    fn profile_is_symmetric() {
        let s = solve_pde_oracle(0.05, 101, 201).unwrap();
        for j in [1, 50, 200] {
            for i in 0..101 {
                assert!((s.at(j, i) - s.at(j, 100 - i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maximum_principle_holds() {
        for &d in &[0.005, 0.01, 0.05, 0.2] {
            let s = solve_pde_oracle(d, 201, 2001).unwrap();
            let (lo, hi) = s.u.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(lo >= -1e-6 && hi <= 1.0 + 1e-6, "d {d}: [{lo}, {hi}]");
        }
    }

    #[test]
    fn thomas_solves_small_system() {
        // [[2,-1,0],[-1,2,-1],[0,-1,2]] x = [1,0,1] -> x = [1,1,1]
        let mut b = [1.0, 0.0, 1.0];
        Tridiagonal::new(3).solve(|_| (-1.0, 2.0, -1.0), &mut b);
        for v in b {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_is_mirrored() {
        for nx in [3, 4, 101, 200] {
            let x = wall_clustered_grid(nx);
            assert_eq!((x[0], x[nx - 1]), (0.0, 1.0));
            for i in 0..nx {
                assert!((x[nx - 1 - i] - (1.0 - x[i])).abs() < 1e-15);
            }
            assert!(x.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn tracks_series_over_whole_interval() {
        for &d in &[0.005, 0.01, 0.05, 0.2] {
            let s = solve_pde_oracle(d, 201, 2001).unwrap();
            let worst = (0..s.nt)
                .map(|j| (s.release(j) - fick::release(d, s.t(j))).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-3, "d {d}: {worst}");
        }
    }
}
