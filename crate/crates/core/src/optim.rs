//! Dense BFGS minimizer with a backtracking line search.
//!
//! Objectives are sums over many subjects, so near the optimum the decrease
//! guaranteed by the Armijo condition drops below the rounding error of the
//! objective itself. Trial points whose value is within a few ulps of the
//! current one are therefore also accepted when the directional derivative
//! shows real progress (approximate Wolfe test), which lets the iteration
//! keep driving the gradient down instead of stalling on rounding noise.

use crate::error::{Error, Result};

const ARMIJO_C1: f64 = 1e-4;
const APPROX_WOLFE_UPPER: f64 = 0.8;
const APPROX_WOLFE_LOWER: f64 = 0.9;
const MAX_BACKTRACKS: usize = 60;
const NOISE_ULPS: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop once the max-norm of the gradient is at or below this.
    pub gradient_tolerance: f64,
    /// Relative objective change counted as a stall. A step stalls only when
    /// the line search could not certify a decrease (the objective moved by
    /// rounding noise alone); two successive stalled steps end the run.
    pub relative_f_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Gradient,
    ObjectiveStall,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Objective value after every accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `objective`, which writes the gradient into its second argument
/// and returns the value (`+inf` or NaN for infeasible points).
pub fn minimize<F>(mut objective: F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Initialization("objective is not finite at the starting point".into()));
    }

    let mut h = identity(n);
    let mut scaled = false;
    let mut trace = vec![f];
    let mut stalled_steps = 0usize;
    let mut iterations = 0usize;

    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut dir = vec![0.0; n];

    let stop = loop {
        let gnorm = max_norm(&g);
        if gnorm <= opts.gradient_tolerance {
            break StopReason::Gradient;
        }
        if stalled_steps >= 2 {
            break StopReason::ObjectiveStall;
        }
        if iterations >= opts.max_iterations {
            break StopReason::MaxIterations;
        }

        mat_vec_neg(&h, &g, &mut dir);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            h = identity(n);
            scaled = false;
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi;
            }
            slope = dot(&g, &dir);
        }

        // The first step follows the raw gradient; keep it from overshooting.
        let mut alpha = if scaled { 1.0 } else { (1.0 / max_norm(&dir)).min(1.0) };
        let noise = NOISE_ULPS * f64::EPSILON * f.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                xn[i] = x[i] + alpha * dir[i];
            }
            let fnew = objective(&xn, &mut gn);
            if fnew.is_finite() && gn.iter().all(|v| v.is_finite()) {
                if fnew <= f + ARMIJO_C1 * alpha * slope {
                    accepted = Some((fnew, false));
                    break;
                }
                let new_slope = dot(&gn, &dir);
                if fnew <= f + noise
                    && new_slope <= -APPROX_WOLFE_UPPER * slope
                    && new_slope >= APPROX_WOLFE_LOWER * slope
                {
                    accepted = Some((fnew, true));
                    break;
                }
                // quadratic interpolation of the step, safeguarded
                let denom = 2.0 * (fnew - f - slope * alpha);
                let trial = if denom > 0.0 { -slope * alpha * alpha / denom } else { 0.5 * alpha };
                alpha = trial.clamp(0.1 * alpha, 0.5 * alpha);
            } else {
                alpha *= 0.25;
            }
        }
        let Some((fnew, within_noise)) = accepted else {
            break StopReason::LineSearchFailure;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * yy.sqrt() {
            if !scaled {
                let gamma = sy / yy;
                h = identity(n);
                h.iter_mut().flatten().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }

        let change = (f - fnew).abs() / f.abs().max(1.0);
        let stalled = within_noise && change <= opts.relative_f_tolerance;
        stalled_steps = if stalled { stalled_steps + 1 } else { 0 };

        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = fnew;
        trace.push(f);
        iterations += 1;
    };

    let gradient_norm = max_norm(&g);
    let converged = gradient_norm <= opts.gradient_tolerance;
    Ok(BfgsOutcome { x, value: f, gradient: g, gradient_norm, iterations, converged, stop, trace })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn mat_vec_neg(h: &[Vec<f64>], g: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(h) {
        *o = -dot(row, g);
    }
}

/// Inverse-Hessian update `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot(row, y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
        }
    }
}
