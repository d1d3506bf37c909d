//! Damped least-squares minimization.
//!
//! Small dense problems only (a handful of parameters), so the normal
//! equations with Marquardt diagonal scaling and a pivoted Gaussian solve
//! are both adequate and dependency-free.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Solver settings; the defaults satisfy every fitter in this crate.
#[derive(Debug, Clone, Copy)]
pub struct LevenbergMarquardt<T> {
    pub max_iterations: usize,
    /// Convergence when the largest relative parameter step falls below this.
    pub step_tol: T,
    /// Convergence when the gradient infinity norm falls below this.
    pub grad_tol: T,
    pub lambda_init: T,
}

impl<T: Real> Default for LevenbergMarquardt<T> {
    fn default() -> Self {
        LevenbergMarquardt {
            max_iterations: 200,
            step_tol: T::of(1e-10),
            grad_tol: T::of(1e-12),
            lambda_init: T::of(1e-3),
        }
    }
}

/// Raw minimizer output, in whatever parameter space the caller used.
#[derive(Debug, Clone)]
pub struct LmOutcome<T> {
    pub params: Vec<T>,
    /// Sum of squared residuals at the optimum.
    pub chi2: T,
    pub iterations: usize,
    pub converged: bool,
    /// Undamped normal matrix at the optimum, for covariance estimates.
    pub jtj: Vec<Vec<T>>,
}

fn sum_sq<T: Real>(r: &[T]) -> T {
    let c: T = r.iter().map(|&x| x * x).sum();
    if c.is_finite() {
        c
    } else {
        T::infinity()
    }
}

#[allow(clippy::needless_range_loop)] // index loops mirror the matrix algebra
fn normal_system<T: Real>(j: &[T], r: &[T], p: usize) -> (Vec<Vec<T>>, Vec<T>) {
    let n = r.len();
    let mut a = vec![vec![T::zero(); p]; p];
    let mut g = vec![T::zero(); p];
    for row in 0..n {
        let jr = &j[row * p..(row + 1) * p];
        for i in 0..p {
            g[i] += jr[i] * r[row];
            for k in i..p {
                a[i][k] += jr[i] * jr[k];
            }
        }
    }
    for i in 0..p {
        for k in 0..i {
            a[i][k] = a[k][i];
        }
    }
    (a, g)
}

impl<T: Real> LevenbergMarquardt<T> {
    /// Minimizes the sum of squared residuals from `x0`.
    ///
    /// `residuals` fills `n_residuals` entries; `jacobian` fills a row-major
    /// `n_residuals x p` matrix. Trial points with non-finite cost are
    /// rejected by raising the damping, so the callbacks may return
    /// non-finite values outside their domain.
    pub fn minimize(
        &self,
        n_residuals: usize,
        x0: &[T],
        mut residuals: impl FnMut(&[T], &mut [T]),
        mut jacobian: impl FnMut(&[T], &mut [T]),
    ) -> LmOutcome<T> {
        let p = x0.len();
        let mut x = x0.to_vec();
        let mut r = vec![T::zero(); n_residuals];
        let mut r_trial = vec![T::zero(); n_residuals];
        let mut j = vec![T::zero(); n_residuals * p];
        residuals(&x, &mut r);
        let mut cost = sum_sq(&r);
        let mut lambda = self.lambda_init;
        let mut converged = false;
        let mut iterations = 0;

        for iter in 1..=self.max_iterations {
            iterations = iter;
            if !cost.is_finite() {
                break;
            }
            jacobian(&x, &mut j);
            let (a, g) = normal_system(&j, &r, p);
            let grad_norm = g.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
            if grad_norm < self.grad_tol {
                converged = true;
                break;
            }
            let mut accepted = false;
            let max_diag = (0..p).fold(T::of(1e-30), |m, i| m.max(a[i][i]));
            for _ in 0..40 {
                let mut m = a.clone();
                for (i, row) in m.iter_mut().enumerate() {
                    // Scale-invariant damping; the relative floor keeps dead
                    // parameters from making the system exactly singular.
                    let d = a[i][i].max(max_diag * T::epsilon().sqrt());
                    row[i] += lambda * d;
                }
                let mut step: Vec<T> = g.iter().map(|&v| -v).collect();
                if solve(&mut m, &mut step).is_err() {
                    lambda *= T::of(10.0);
                    continue;
                }
                let trial: Vec<T> = x.iter().zip(&step).map(|(&xi, &s)| xi + s).collect();
                residuals(&trial, &mut r_trial);
                let trial_cost = sum_sq(&r_trial);
                if trial_cost < cost {
                    let rel_step = x
                        .iter()
                        .zip(&step)
                        .map(|(&xi, &s)| s.abs() / xi.abs().max(T::of(1e-12)))
                        .fold(T::zero(), T::max);
                    x = trial;
                    cost = trial_cost;
                    std::mem::swap(&mut r, &mut r_trial);
                    lambda = (lambda * T::of(0.3)).max(T::of(1e-14));
                    accepted = true;
                    if rel_step < self.step_tol {
                        converged = true;
                    }
                    break;
                }
                // A rejected step already below the step tolerance cannot
                // be refined by more damping; the point is a minimum.
                let rel_step = x
                    .iter()
                    .zip(&step)
                    .map(|(&xi, &s)| s.abs() / xi.abs().max(T::of(1e-12)))
                    .fold(T::zero(), T::max);
                if rel_step < self.step_tol {
                    converged = true;
                    break;
                }
                lambda *= T::of(10.0);
                if lambda > T::of(1e15) {
                    break;
                }
            }
            if converged || !accepted {
                break;
            }
        }

        jacobian(&x, &mut j);
        let (jtj, _) = normal_system(&j, &r, p);
        LmOutcome { params: x, chi2: cost, iterations, converged, jtj }
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting;
/// `b` holds the solution on return.
#[allow(clippy::needless_range_loop)] // index loops mirror the matrix algebra
pub fn solve<T: Real>(a: &mut [Vec<T>], b: &mut [T]) -> Result<()> {
    let n = b.len();
    if a.iter().flat_map(|row| row.iter()).any(|v| !v.is_finite())
        || b.iter().any(|v| !v.is_finite())
    {
        return Err(Error::invalid("matrix", "non-finite entries"));
    }
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(T::zero(), |m, &v| m.max(v.abs()))
        .max(T::of(1e-30));
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &k| a[i][col].abs().partial_cmp(&a[k][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() < scale * T::epsilon() * T::of(100.0) {
            return Err(Error::invalid("matrix", "singular within working precision"));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let bv = b[col];
            b[row] -= f * bv;
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * b[k];
        }
        b[col] = acc / a[col][col];
    }
    Ok(())
}

/// Inverse of a small symmetric positive matrix via column solves.
pub fn invert<T: Real>(a: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let n = a.len();
    let mut inv = vec![vec![T::zero(); n]; n];
    for col in 0..n {
        let mut m: Vec<Vec<T>> = a.to_vec();
        let mut e = vec![T::zero(); n];
        e[col] = T::one();
        solve(&mut m, &mut e)?;
        for row in 0..n {
            inv[row][col] = e[row];
        }
    }
    Ok(inv)
}
