//! Tamed and plain Euler-Maruyama recursions on equidistant grids, plus the
//! time-continuous tamed interpolation evaluated on a refined grid.
//!
//! Tamed step:
//!
//! ```text
//! X_{k+1} = X_k + mu(X_k) delta / (1 + delta |mu(X_k)|) + sigma(X_k) dW_k
//! ```

use log::warn;

use crate::brownian::IncrementArray;
use crate::error::{Error, Result};
use crate::model::{Coefficients, SdeProblem};

/// Magnitude at which a path is considered to have exploded.
pub const OVERFLOW_THRESHOLD: f64 = 1e150;

/// Step sizes at or above this value trigger a warning.
pub const COARSE_STEP_WARNING: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Tamed,
    Untamed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub delta: f64,
    pub values: Vec<f64>,
    pub overflowed: bool,
}

impl GridSolution {
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

fn check_step(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!(
            "step size must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// `mu / (1 + delta |mu|)`, the per-unit-time tamed drift.
pub fn tame_drift(mu: f64, delta: f64) -> Result<f64> {
    check_step(delta)?;
    Ok(tamed(mu, delta))
}

/// Unchecked taming. The result never exceeds `min(1/delta, |mu|)` in
/// magnitude, rounding included.
#[inline]
pub fn tamed(mu: f64, delta: f64) -> f64 {
    let t = mu / (1.0 + delta * mu.abs());
    let cap = (1.0 / delta).min(mu.abs());
    if t.abs() > cap {
        cap.copysign(mu)
    } else {
        t
    }
}

/// Smallest `c` such that `|mu(x)|/(1 + delta|mu(x)|) <= c min((1+|x|)/sqrt(delta), |mu(x)|)`
/// for all `x`, bounded using `|mu(x)| <= K (1 + |x|)^d` with `K` the largest
/// absolute coefficient sum over the drift pieces.
///
/// For `d <= 2` the bound is uniform in `delta`; for `d >= 3` it grows like
/// `delta^{-(d-2)/(2d)}` as `delta -> 0`.
pub fn taming_constant(problem: &SdeProblem, delta: f64) -> f64 {
    let pieces = problem.drift_fn().pieces();
    let d = problem.drift_fn().max_degree().max(1) as f64;
    // |c_i| |x|^i <= |c_i| (1+|x|)^d
    let k = pieces
        .iter()
        .map(|p| p.coeffs().iter().map(|c| c.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if k == 0.0 {
        return 1.0;
    }
    let a = delta * k;
    // maximise s^(d-1) / (1 + a s^d) over s >= 1
    let s_star = if d > 1.0 { ((d - 1.0) / a).powf(1.0 / d).max(1.0) } else { 1.0 };
    let h = s_star.powf(d - 1.0) / (1.0 + a * s_star.powf(d));
    (k * delta.sqrt() * h).max(1.0)
}

/// One tamed Euler-Maruyama step.
#[inline]
pub fn tamed_em_step<C: Coefficients + ?Sized>(coeffs: &C, x: f64, delta: f64, dw: f64) -> f64 {
    x + tamed(coeffs.drift(x), delta) * delta + coeffs.diffusion(x) * dw
}

#[inline]
fn untamed_em_step<C: Coefficients + ?Sized>(coeffs: &C, x: f64, delta: f64, dw: f64) -> f64 {
    x + coeffs.drift(x) * delta + coeffs.diffusion(x) * dw
}

fn grid_delta(horizon: f64, increments: &IncrementArray) -> Result<f64> {
    if increments.is_empty() {
        return Err(Error::Shape("no increments".into()));
    }
    if (increments.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(Error::Shape(format!(
            "increments span [0, {}] but the problem horizon is {horizon}",
            increments.horizon()
        )));
    }
    let delta = horizon / increments.len() as f64;
    check_step(delta)?;
    if delta >= COARSE_STEP_WARNING {
        warn!("step size {delta} is coarse; convergence guarantees need small steps");
    }
    Ok(delta)
}

fn iterate<C, F>(coeffs: &C, x0: f64, delta: f64, increments: &IncrementArray, step: F) -> GridSolution
where
    C: Coefficients + ?Sized,
    F: Fn(&C, f64, f64, f64) -> f64,
{
    let dws = increments.values();
    let mut values = Vec::with_capacity(dws.len() + 1);
    values.push(x0);
    let mut x = x0;
    let mut overflowed = false;
    for &dw in dws {
        if !overflowed {
            x = step(coeffs, x, delta, dw);
            if !(x.abs() <= OVERFLOW_THRESHOLD) {
                // NaN counts as positive overflow
                x = if x < 0.0 { -OVERFLOW_THRESHOLD } else { OVERFLOW_THRESHOLD };
                overflowed = true;
            }
        }
        values.push(x);
    }
    GridSolution {
        delta,
        values,
        overflowed,
    }
}

pub fn simulate_tamed_em(problem: &SdeProblem, increments: &IncrementArray) -> Result<GridSolution> {
    let delta = grid_delta(problem.horizon(), increments)?;
    Ok(iterate(problem, problem.x0(), delta, increments, tamed_em_step))
}

pub fn simulate_untamed_em(problem: &SdeProblem, increments: &IncrementArray) -> Result<GridSolution> {
    let delta = grid_delta(problem.horizon(), increments)?;
    Ok(iterate(problem, problem.x0(), delta, increments, untamed_em_step))
}

pub fn simulate(problem: &SdeProblem, increments: &IncrementArray, scheme: Scheme) -> Result<GridSolution> {
    match scheme {
        Scheme::Tamed => simulate_tamed_em(problem, increments),
        Scheme::Untamed => simulate_untamed_em(problem, increments),
    }
}

/// Tamed recursion for arbitrary coefficients started at `x0` on `[0, horizon]`.
pub fn simulate_tamed_with<C: Coefficients + ?Sized>(
    coeffs: &C,
    x0: f64,
    horizon: f64,
    increments: &IncrementArray,
) -> Result<GridSolution> {
    let delta = grid_delta(horizon, increments)?;
    Ok(iterate(coeffs, x0, delta, increments, tamed_em_step))
}

/// Tamed scheme for the transformed equation, started at `z0` (normally `G(x0)`).
pub fn simulate_transformed_tamed_em(
    tc: &crate::transform::TransformedCoefficients<'_>,
    z0: f64,
    increments: &IncrementArray,
) -> Result<GridSolution> {
    simulate_tamed_with(tc, z0, tc.problem().horizon(), increments)
}

/// Time-continuous tamed interpolation of `coarse` at every time of the grid
/// carried by `fine_increments`:
///
/// ```text
/// X_t = X_{t_} + mu(X_{t_}) (t - t_) / (1 + delta |mu(X_{t_})|) + sigma(X_{t_}) (W_t - W_{t_})
/// ```
///
/// Values at coarse grid times are copied from `coarse` unchanged. Once the
/// coarse path has overflowed it is held piecewise constant.
pub fn evaluate_on_fine_grid<C: Coefficients + ?Sized>(
    coarse: &GridSolution,
    coeffs: &C,
    fine_increments: &IncrementArray,
) -> Result<Vec<f64>> {
    let n_coarse = coarse.steps();
    let n_fine = fine_increments.len();
    if n_coarse == 0 || n_fine % n_coarse != 0 || !(n_fine / n_coarse).is_power_of_two() {
        return Err(Error::Shape(format!(
            "fine grid of {n_fine} steps does not refine {n_coarse} steps by a power of two"
        )));
    }
    let factor = n_fine / n_coarse;
    let fine_delta = coarse.delta / factor as f64;
    let dws = fine_increments.values();
    let mut out = Vec::with_capacity(n_fine + 1);
    for k in 0..n_coarse {
        let x = coarse.values[k];
        out.push(x);
        let frozen = coarse.overflowed && x.abs() >= OVERFLOW_THRESHOLD;
        let drift = tamed(coeffs.drift(x), coarse.delta);
        let sigma = coeffs.diffusion(x);
        let mut w = 0.0;
        for r in 1..factor {
            w += dws[k * factor + r - 1];
            out.push(if frozen {
                x
            } else {
                x + drift * (r as f64 * fine_delta) + sigma * w
            });
        }
    }
    out.push(coarse.values[n_coarse]);
    Ok(out)
}
