//! Bi-Lipschitz change of variables removing the drift discontinuities.
//!
//! ```text
//! G(x) = x + sum_k alpha_k (x - z_k) |x - z_k| phi((x - z_k) / nu)
//! phi(u) = (1 - u^2)^3 on |u| <= 1, 0 elsewhere
//! alpha_k = (mu(z_k-) - mu(z_k+)) / (2 sigma(z_k)^2)
//! ```
//!
//! `G'(z_k) = 1`, `G = id` outside the bumps, and the jump of `G''` at `z_k`
//! (`4 alpha_k`) cancels the drift jump in `G' mu + G'' sigma^2 / 2`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Coefficients, SdeProblem};

/// Upper bound of `|phi'|` on `[-1, 1]` used in the radius selection.
const PHI_PRIME_BOUND: f64 = 3.0;

#[inline]
fn phi(u: f64) -> f64 {
    let w = 1.0 - u * u;
    w * w * w
}

#[inline]
fn phi_prime(u: f64) -> f64 {
    let w = 1.0 - u * u;
    -6.0 * u * w * w
}

#[inline]
fn phi_second(u: f64) -> f64 {
    let u2 = u * u;
    (1.0 - u2) * (30.0 * u2 - 6.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformG {
    breakpoints: Vec<f64>,
    alphas: Vec<f64>,
    nu: f64,
    identity: bool,
}

impl TransformG {
    pub fn identity() -> Self {
        Self {
            breakpoints: Vec::new(),
            alphas: Vec::new(),
            nu: 1.0,
            identity: true,
        }
    }

    pub fn build(problem: &SdeProblem) -> Result<Self> {
        let breakpoints = problem.breakpoints().to_vec();
        if breakpoints.is_empty() {
            return Ok(Self::identity());
        }
        let mut alphas = Vec::with_capacity(breakpoints.len());
        for (k, &z) in breakpoints.iter().enumerate() {
            let sigma = problem.eval_diffusion(z)?;
            if sigma.abs() <= 1e-12 {
                return Err(Error::Construction(format!(
                    "diffusion vanishes at breakpoint {k} ({z})"
                )));
            }
            alphas.push(problem.drift_jump(k)? / (2.0 * sigma * sigma));
        }
        let min_gap = breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let max_alpha = alphas.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let nu = (0.5 * min_gap)
            .min(1.0)
            .min(1.0 / (2.0 * max_alpha * (2.0 + PHI_PRIME_BOUND) + 1.0));
        Self::from_parts(breakpoints, alphas, nu)
    }

    /// Assembles a transform from explicit parameters, checking that the
    /// bumps do not overlap and that `G'` stays in `[1/2, 3/2]`.
    pub fn from_parts(breakpoints: Vec<f64>, alphas: Vec<f64>, nu: f64) -> Result<Self> {
        if breakpoints.len() != alphas.len() {
            return Err(Error::Construction(
                "one coefficient per breakpoint required".into(),
            ));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Construction(format!("bump radius {nu} not positive")));
        }
        if breakpoints.windows(2).any(|w| 2.0 * nu > w[1] - w[0]) {
            return Err(Error::Construction("bump supports overlap".into()));
        }
        if alphas
            .iter()
            .any(|a| !a.is_finite() || nu * a.abs() * (2.0 + PHI_PRIME_BOUND) >= 0.5)
        {
            return Err(Error::Construction(format!(
                "radius {nu} too large for the jump coefficients"
            )));
        }
        let identity = alphas.iter().all(|&a| a == 0.0);
        Ok(Self {
            breakpoints,
            alphas,
            nu,
            identity,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Radius beyond which `G` is the identity: `max_k |z_k| + nu`.
    pub fn identity_radius(&self) -> f64 {
        self.breakpoints
            .iter()
            .map(|z| z.abs() + self.nu)
            .fold(0.0, f64::max)
    }

    /// Index of the bump containing `x` in its open support, if any.
    #[inline]
    fn active_bump(&self, x: f64) -> Option<usize> {
        if self.identity {
            return None;
        }
        // at most one bump is active
        let i = self.breakpoints.partition_point(|&z| z <= x);
        let near = |k: usize| (x - self.breakpoints[k]).abs() < self.nu;
        if i < self.breakpoints.len() && near(i) {
            Some(i)
        } else if i > 0 && near(i - 1) {
            Some(i - 1)
        } else {
            None
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.active_bump(x) {
            None => x,
            Some(k) => {
                let v = x - self.breakpoints[k];
                x + self.alphas[k] * v * v.abs() * phi(v / self.nu)
            }
        }
    }

    pub fn eval_prime(&self, x: f64) -> f64 {
        match self.active_bump(x) {
            None => 1.0,
            Some(k) => {
                let v = x - self.breakpoints[k];
                let u = v / self.nu;
                let a = v.abs();
                1.0 + self.alphas[k] * (2.0 * a * phi(u) + v * a * phi_prime(u) / self.nu)
            }
        }
    }

    /// Second derivative; at a breakpoint the right-hand limit `2 alpha_k`.
    pub fn eval_second(&self, x: f64) -> f64 {
        match self.active_bump(x) {
            None => 0.0,
            Some(k) => {
                let v = x - self.breakpoints[k];
                let u = v / self.nu;
                let a = v.abs();
                let sign = if v >= 0.0 { 1.0 } else { -1.0 };
                self.alphas[k]
                    * (2.0 * sign * phi(u)
                        + 4.0 * a * phi_prime(u) / self.nu
                        + v * a * phi_second(u) / (self.nu * self.nu))
            }
        }
    }

    /// Bound on `|G(x) - x|`.
    fn max_displacement(&self) -> f64 {
        self.alphas.iter().fold(0.0f64, |m, a| m.max(a.abs())) * self.nu * self.nu
    }

    /// Solves `G(x) = y` by safeguarded Newton iteration inside the bracket
    /// `[y - D, y + D]`, `D = max|alpha| nu^2 + 1`, falling back to bisection
    /// whenever a Newton step leaves the bracket.
    pub fn invert(&self, y: f64) -> f64 {
        if self.active_bump(y).is_none() {
            // G(y) = y and G is strictly increasing
            return y;
        }
        let reach = self.max_displacement() + 1.0;
        let (mut lo, mut hi) = (y - reach, y + reach);
        let tol = 1e-13 * (1.0 + y.abs());
        let mut x = y;
        for _ in 0..200 {
            let r = self.eval(x) - y;
            if r == 0.0 {
                return x;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - r / self.eval_prime(x);
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if next == x || (r.abs() <= tol && (next - x).abs() <= f64::EPSILON * x.abs().max(1.0)) {
                return x;
            }
            x = next;
        }
        x
    }
}

/// `mu~ = (G' mu + G'' sigma^2 / 2) o G^-1`, `sigma~ = (G' sigma) o G^-1`.
#[derive(Debug, Clone, Copy)]
pub struct TransformedCoefficients<'a> {
    problem: &'a SdeProblem,
    transform: &'a TransformG,
}

impl<'a> TransformedCoefficients<'a> {
    pub fn new(problem: &'a SdeProblem, transform: &'a TransformG) -> Self {
        Self { problem, transform }
    }

    pub fn problem(&self) -> &SdeProblem {
        self.problem
    }

    pub fn transform(&self) -> &TransformG {
        self.transform
    }

    pub fn transformed_drift(&self, z: f64) -> f64 {
        if self.transform.is_identity() {
            return self.problem.drift(z);
        }
        let x = self.transform.invert(z);
        let s = self.problem.diffusion(x);
        self.transform.eval_prime(x) * self.problem.drift(x)
            + 0.5 * self.transform.eval_second(x) * s * s
    }

    pub fn transformed_diffusion(&self, z: f64) -> f64 {
        if self.transform.is_identity() {
            return self.problem.diffusion(z);
        }
        let x = self.transform.invert(z);
        self.transform.eval_prime(x) * self.problem.diffusion(x)
    }
}

impl Coefficients for TransformedCoefficients<'_> {
    #[inline]
    fn drift(&self, x: f64) -> f64 {
        self.transformed_drift(x)
    }

    #[inline]
    fn diffusion(&self, x: f64) -> f64 {
        self.transformed_diffusion(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub pass: bool,
    pub value: f64,
    pub tol: f64,
}

impl CheckOutcome {
    fn at_most(value: f64, tol: f64) -> Self {
        Self {
            pass: value <= tol,
            value,
            tol,
        }
    }
}

/// Named numeric checks of the transform; serializes as
/// `{check_name: {pass, value, tol}}`.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct SelfCheckReport {
    pub checks: BTreeMap<String, CheckOutcome>,
}

impl SelfCheckReport {
    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.get(name)
    }
}

const GRID_POINTS: usize = 10_000;

/// One-sided limits of `f` at `z`, extrapolated from offsets 1e-3, 1e-4, 1e-5.
///
/// The limits are approached linearly in the offset, so two rounds of
/// Richardson elimination with ratio 10 remove the first two error terms.
pub fn extrapolated_one_sided_limits(f: impl Fn(f64) -> f64, z: f64) -> (f64, f64) {
    let hs = [1e-3, 1e-4, 1e-5];
    let extrapolate = |v: [f64; 3]| {
        let r1 = (10.0 * v[1] - v[0]) / 9.0;
        let r2 = (10.0 * v[2] - v[1]) / 9.0;
        (100.0 * r2 - r1) / 99.0
    };
    let left = extrapolate(hs.map(|h| f(z - h)));
    let right = extrapolate(hs.map(|h| f(z + h)));
    (left, right)
}

pub fn transform_selfcheck(problem: &SdeProblem, g: &TransformG) -> SelfCheckReport {
    let mut checks = BTreeMap::new();
    let tc = TransformedCoefficients::new(problem, g);
    let bps = g.breakpoints();
    let nu = g.nu();

    let unit_at_breakpoints = bps
        .iter()
        .map(|&z| (g.eval_prime(z) - 1.0).abs())
        .fold(0.0, f64::max);
    checks.insert(
        "g_prime_at_breakpoints".to_string(),
        CheckOutcome::at_most(unit_at_breakpoints, 1e-12),
    );

    // points at distance >= nu from every breakpoint
    let mut outside = vec![-1e3, 1e3, g.identity_radius() + 1.0, -g.identity_radius() - 1.0];
    for &z in bps {
        for i in 0..=20 {
            let d = nu * (1.0 + i as f64 / 10.0);
            outside.push(z + d);
            outside.push(z - d);
        }
    }
    outside.retain(|&x| bps.iter().all(|&z| (x - z).abs() >= nu));
    let outside_dev = outside
        .iter()
        .map(|&x| (g.eval_prime(x) - 1.0).abs())
        .fold(0.0, f64::max);
    checks.insert(
        "g_prime_identity_outside_bumps".to_string(),
        CheckOutcome::at_most(outside_dev, 0.0),
    );

    let (lo, hi) = match (bps.first(), bps.last()) {
        (Some(&a), Some(&b)) => (a - 2.0 * nu, b + 2.0 * nu),
        _ => (-1.0, 1.0),
    };
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let band_dev = grid
        .iter()
        .map(|&x| (g.eval_prime(x) - 1.0).abs())
        .fold(0.0, f64::max);
    checks.insert(
        "g_prime_in_band".to_string(),
        CheckOutcome::at_most(band_dev, 0.5),
    );

    let jump_mismatch = bps
        .iter()
        .map(|&z| {
            let (l, r) = extrapolated_one_sided_limits(|v| tc.transformed_drift(v), g.eval(z));
            (l - r).abs()
        })
        .fold(0.0, f64::max);
    checks.insert(
        "drift_jump_cancelled".to_string(),
        CheckOutcome::at_most(jump_mismatch, 1e-6),
    );

    let (rlo, rhi) = (lo.min(-10.0), hi.max(10.0));
    let round_trip = (0..GRID_POINTS)
        .map(|i| {
            let x = rlo + (rhi - rlo) * (i as f64 + 0.5) / GRID_POINTS as f64;
            (g.invert(g.eval(x)) - x).abs()
        })
        .fold(0.0, f64::max);
    checks.insert(
        "inverse_round_trip".to_string(),
        CheckOutcome::at_most(round_trip, 1e-12),
    );

    SelfCheckReport { checks }
}
