//! Monte Carlo estimators for the strong error and its supporting bounds.
//!
//! Every estimator evaluates paths independently from their [`PathKey`], so
//! results are a deterministic function of the inputs and the master seed.
//! Per-path values are collected in path order and reduced with
//! [`deterministic_sum`], which makes the output independent of the number
//! of worker threads.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::brownian::{coarsen_to_level, generate_increments, IncrementArray, PathKey};
use crate::error::{Error, Result};
use crate::model::{Coefficients, SdeProblem};
use crate::schemes::{
    evaluate_on_fine_grid, simulate, simulate_tamed_em, simulate_tamed_with, GridSolution, Scheme,
};
use crate::transform::{TransformG, TransformedCoefficients};

/// Refinement (as a power of two) of the sub-grid used to resolve the
/// time-continuous scheme inside each step.
pub const SUBGRID_LEVELS: u32 = 3;

pub const DEFAULT_CHUNK_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    /// Block length of the first summation stage.
    pub chunk_size: usize,
    /// Steps of the level-0 grid; level `l` has `base_steps * 2^l` steps.
    pub base_steps: usize,
}

impl McConfig {
    pub fn new(n_paths: usize, master_seed: u64) -> Self {
        Self {
            n_paths,
            master_seed,
            chunk_size: DEFAULT_CHUNK_SIZE,
            base_steps: 1,
        }
    }

    pub fn with_chunk_size(mut self, chunk_size: usize) -> Self {
        self.chunk_size = chunk_size;
        self
    }

    pub fn with_base_steps(mut self, base_steps: usize) -> Self {
        self.base_steps = base_steps;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Argument("n_paths must be at least 1".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Argument("chunk_size must be at least 1".into()));
        }
        Ok(())
    }

    fn increments(&self, problem: &SdeProblem, path: u64, level: u32) -> Result<IncrementArray> {
        generate_increments(
            PathKey::new(self.master_seed, path),
            level,
            self.base_steps,
            problem.horizon(),
        )
    }

    /// Step size at `level` for a problem with the given horizon.
    pub fn delta(&self, horizon: f64, level: u32) -> f64 {
        horizon / (self.base_steps as f64 * (1u64 << level) as f64)
    }
}

/// Blocks of `chunk` values are summed left to right, then the block sums
/// are combined by pairwise (tree) summation.
pub fn deterministic_sum(values: &[f64], chunk: usize) -> f64 {
    let partials: Vec<f64> = values
        .chunks(chunk.max(1))
        .map(|c| c.iter().fold(0.0, |a, &v| a + v))
        .collect();
    pairwise(&partials)
}

fn pairwise(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise(a) + pairwise(b)
        }
    }
}

fn run_paths<T, F>(cfg: &McConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    cfg.validate()?;
    (0..cfg.n_paths as u64).into_par_iter().map(f).collect()
}

/// Point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

struct Moments {
    mean: f64,
    variance: f64,
    n: f64,
}

fn moments(values: &[f64], chunk: usize) -> Moments {
    let n = values.len() as f64;
    let mean = deterministic_sum(values, chunk) / n;
    let centred: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let variance = if values.len() > 1 {
        deterministic_sum(&centred, chunk) / (n - 1.0)
    } else {
        0.0
    };
    Moments { mean, variance, n }
}

/// Sample mean and its standard error.
fn mean_estimate(values: &[f64], chunk: usize) -> Estimate {
    let m = moments(values, chunk);
    Estimate {
        estimate: m.mean,
        std_error: (m.variance / m.n).sqrt(),
    }
}

/// `sqrt(mean(D^2))` with the delta-method standard error
/// `sd(D^2) / (2 sqrt(mean(D^2)) sqrt(n))`.
fn l2_estimate(d: &[f64], chunk: usize) -> Estimate {
    let squares: Vec<f64> = d.iter().map(|v| v * v).collect();
    let m = moments(&squares, chunk);
    let estimate = m.mean.sqrt();
    let std_error = if m.mean > 0.0 {
        m.variance.sqrt() / (2.0 * estimate * m.n.sqrt())
    } else {
        0.0
    };
    Estimate {
        estimate,
        std_error,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest distance on the fine grid between `reference` and the
/// time-continuous interpolation of `coarse`.
fn sup_distance<C: Coefficients + ?Sized>(
    reference: &GridSolution,
    coarse: &GridSolution,
    coeffs: &C,
    fine: &IncrementArray,
) -> Result<f64> {
    let interp = evaluate_on_fine_grid(coarse, coeffs, fine)?;
    Ok(max_abs_diff(&reference.values, &interp))
}

/// `(E[max_t |X^ref_t - X^coarse_t|^2])^{1/2}` over the reference grid.
///
/// The reference is the tamed scheme at `ref_level` on the same Brownian
/// path; `coarse_level == ref_level` gives exactly zero.
pub fn strong_error(
    problem: &SdeProblem,
    coarse_level: u32,
    ref_level: u32,
    cfg: &McConfig,
) -> Result<Estimate> {
    if coarse_level > ref_level {
        return Err(Error::Argument(format!(
            "coarse level {coarse_level} is finer than reference level {ref_level}"
        )));
    }
    let d = run_paths(cfg, |i| {
        let fine = cfg.increments(problem, i, ref_level)?;
        let reference = simulate_tamed_em(problem, &fine)?;
        let coarse = simulate_tamed_em(problem, &coarsen_to_level(&fine, coarse_level)?)?;
        sup_distance(&reference, &coarse, problem, &fine)
    })?;
    Ok(l2_estimate(&d, cfg.chunk_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRow {
    pub delta: f64,
    pub error: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// Paths on which the coarse or the reference run hit the overflow clamp.
    pub overflowed_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
    pub r_squared: f64,
}

impl ErrorTable {
    pub fn from_rows(rows: Vec<ErrorRow>) -> Result<Self> {
        if rows.windows(2).any(|w| w[1].delta >= w[0].delta) {
            return Err(Error::Argument("step sizes must be strictly decreasing".into()));
        }
        let fit = fit_order(&rows.iter().map(|r| (r.delta, r.error)).collect::<Vec<_>>())?;
        Ok(Self {
            rows,
            fitted_slope: fit.slope,
            fitted_intercept: fit.intercept,
            r_squared: fit.r_squared,
        })
    }

    pub fn any_overflow(&self) -> bool {
        self.rows.iter().any(|r| r.overflowed_paths > 0)
    }

    /// Prefactor estimate `2^intercept` of the power law `C delta^slope`.
    pub fn prefactor(&self) -> f64 {
        self.fitted_intercept.exp2()
    }
}

/// Strong errors for each of `levels` against a common reference at
/// `ref_level`, with every level driven by the same Brownian paths, and the
/// fitted order.
pub fn convergence_study(
    problem: &SdeProblem,
    levels: &[u32],
    ref_level: u32,
    cfg: &McConfig,
) -> Result<ErrorTable> {
    if levels.len() < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 levels, got {}",
            levels.len()
        )));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("levels must be strictly increasing".into()));
    }
    if levels.iter().any(|&l| l + 2 >= ref_level) {
        return Err(Error::Argument(format!(
            "reference level {ref_level} must exceed every level by at least 3"
        )));
    }
    let per_path = run_paths(cfg, |i| {
        let fine = cfg.increments(problem, i, ref_level)?;
        let reference = simulate_tamed_em(problem, &fine)?;
        levels
            .iter()
            .map(|&level| {
                let coarse = simulate_tamed_em(problem, &coarsen_to_level(&fine, level)?)?;
                let d = sup_distance(&reference, &coarse, problem, &fine)?;
                Ok((d, coarse.overflowed || reference.overflowed))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = levels
        .iter()
        .enumerate()
        .map(|(j, &level)| {
            let d: Vec<f64> = per_path.iter().map(|p| p[j].0).collect();
            let e = l2_estimate(&d, cfg.chunk_size);
            ErrorRow {
                delta: cfg.delta(problem.horizon(), level),
                error: e.estimate,
                std_error: e.std_error,
                n_paths: cfg.n_paths,
                overflowed_paths: per_path.iter().filter(|p| p[j].1).count(),
            }
        })
        .collect();
    ErrorTable::from_rows(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(log2 delta, log2 error)`. Rows with a
/// non-positive error are dropped with a warning.
pub fn fit_order(rows: &[(f64, f64)]) -> Result<OrderFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|&&(delta, err)| {
            let keep = err > 0.0 && delta > 0.0 && err.is_finite();
            if !keep {
                warn!("dropping row (delta = {delta}, error = {err}) from the order fit");
            }
            keep
        })
        .map(|&(delta, err)| (delta.log2(), err.log2()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!(
            "{} usable rows, need at least 3",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all step sizes are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(OrderFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformDomainError {
    /// L2-sup distance between the coarse transformed scheme and the fine
    /// transformed reference.
    pub z_error: Estimate,
    /// L2-sup of `Z^coarse - G(X^coarse)` over the coarse grid.
    pub gx_discrepancy: Estimate,
}

/// The two terms of the triangle inequality in the transformed domain.
pub fn transform_domain_error(
    problem: &SdeProblem,
    g: &TransformG,
    coarse_level: u32,
    ref_level: u32,
    cfg: &McConfig,
) -> Result<TransformDomainError> {
    if coarse_level > ref_level {
        return Err(Error::Argument(format!(
            "coarse level {coarse_level} is finer than reference level {ref_level}"
        )));
    }
    let tc = TransformedCoefficients::new(problem, g);
    let z0 = g.eval(problem.x0());
    let pairs = run_paths(cfg, |i| {
        let fine = cfg.increments(problem, i, ref_level)?;
        let coarse_inc = coarsen_to_level(&fine, coarse_level)?;
        let z_ref = simulate_tamed_with(&tc, z0, problem.horizon(), &fine)?;
        let z_coarse = simulate_tamed_with(&tc, z0, problem.horizon(), &coarse_inc)?;
        let x_coarse = simulate_tamed_em(problem, &coarse_inc)?;
        let dz = sup_distance(&z_ref, &z_coarse, &tc, &fine)?;
        let dg = z_coarse
            .values
            .iter()
            .zip(&x_coarse.values)
            .map(|(z, x)| (z - g.eval(*x)).abs())
            .fold(0.0, f64::max);
        Ok((dz, dg))
    })?;
    let dz: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let dg: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(TransformDomainError {
        z_error: l2_estimate(&dz, cfg.chunk_size),
        gx_discrepancy: l2_estimate(&dg, cfg.chunk_size),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub p: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Fraction of paths that hit the overflow clamp.
    pub overflow_fraction: f64,
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 2.0 && p.is_finite()) {
        return Err(Error::Argument(format!("moment order must be >= 2, got {p}")));
    }
    Ok(())
}

/// `E[max_k |X_{t_k}|^p]` for the given scheme at `level`.
pub fn moment_sup(
    problem: &SdeProblem,
    level: u32,
    p: f64,
    scheme: Scheme,
    cfg: &McConfig,
) -> Result<MomentEstimate> {
    check_p(p)?;
    let per_path = run_paths(cfg, |i| {
        let sol = simulate(problem, &cfg.increments(problem, i, level)?, scheme)?;
        let sup = sol.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok((sup.powf(p), sol.overflowed))
    })?;
    let values: Vec<f64> = per_path.iter().map(|v| v.0).collect();
    let e = mean_estimate(&values, cfg.chunk_size);
    let overflowed = per_path.iter().filter(|v| v.1).count();
    Ok(MomentEstimate {
        p,
        estimate: e.estimate,
        std_error: e.std_error,
        overflow_fraction: overflowed as f64 / cfg.n_paths as f64,
    })
}

/// Tamed path at `level` together with its time-continuous values on the
/// `2^SUBGRID_LEVELS` times finer grid.
fn resolved_path(problem: &SdeProblem, cfg: &McConfig, i: u64, level: u32) -> Result<(GridSolution, Vec<f64>)> {
    let fine = cfg.increments(problem, i, level + SUBGRID_LEVELS)?;
    let coarse = simulate_tamed_em(problem, &coarsen_to_level(&fine, level)?)?;
    let values = evaluate_on_fine_grid(&coarse, problem, &fine)?;
    Ok((coarse, values))
}

/// `max_k (E[max_{s in [t_k, t_{k+1}]} |X_s - X_{t_k}|^p])^{1/p}`, with the
/// inner maximum taken over a sub-grid eight times finer than the scheme.
pub fn increment_moment(problem: &SdeProblem, level: u32, p: f64, cfg: &McConfig) -> Result<Estimate> {
    check_p(p)?;
    let sub = 1usize << SUBGRID_LEVELS;
    let per_path = run_paths(cfg, |i| {
        let (coarse, values) = resolved_path(problem, cfg, i, level)?;
        Ok((0..coarse.steps())
            .map(|k| {
                let base = values[k * sub];
                values[k * sub + 1..=(k + 1) * sub]
                    .iter()
                    .map(|v| (v - base).abs())
                    .fold(0.0, f64::max)
                    .powf(p)
            })
            .collect::<Vec<f64>>())
    })?;
    let steps = per_path[0].len();
    let mut best = Estimate {
        estimate: 0.0,
        std_error: 0.0,
    };
    for k in 0..steps {
        let column: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
        let e = mean_estimate(&column, cfg.chunk_size);
        let root = e.estimate.powf(1.0 / p);
        if root > best.estimate {
            // delta method for m^{1/p}
            let se = e.std_error * root / (p * e.estimate);
            best = Estimate {
                estimate: root,
                std_error: se,
            };
        }
    }
    Ok(best)
}

/// `E[delta sum_j 1{|X_{t_j} - z_k| <= eps}]`, a left-endpoint Riemann sum of
/// the time the scheme spends within `eps` of breakpoint `k` (0-based).
pub fn occupation_time(
    problem: &SdeProblem,
    level: u32,
    k: usize,
    eps: f64,
    cfg: &McConfig,
) -> Result<Estimate> {
    let zeta = *problem.breakpoints().get(k).ok_or(Error::Index {
        index: k,
        len: problem.num_breakpoints(),
    })?;
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("radius must be positive, got {eps}")));
    }
    let values = run_paths(cfg, |i| {
        let sol = simulate_tamed_em(problem, &cfg.increments(problem, i, level)?)?;
        let hits = sol.values[..sol.steps()]
            .iter()
            .filter(|&&x| (x - zeta).abs() <= eps)
            .count();
        Ok(sol.delta * hits as f64)
    })?;
    Ok(mean_estimate(&values, cfg.chunk_size))
}

/// `(E[A^2])^{1/2}` where `A` is the time during which the time-continuous
/// scheme and its last grid value lie on different sides of (or on) some
/// breakpoint, measured on the sub-grid eight times finer than the scheme.
pub fn crossing_statistic(problem: &SdeProblem, level: u32, cfg: &McConfig) -> Result<Estimate> {
    let bps = problem.breakpoints();
    if bps.is_empty() {
        return Err(Error::Argument(
            "crossing statistic needs at least one breakpoint".into(),
        ));
    }
    let sub = 1usize << SUBGRID_LEVELS;
    let values = run_paths(cfg, |i| {
        let (coarse, values) = resolved_path(problem, cfg, i, level)?;
        let sub_delta = coarse.delta / sub as f64;
        let mut count = 0usize;
        for k in 0..coarse.steps() {
            let base = values[k * sub];
            count += values[k * sub + 1..=(k + 1) * sub]
                .iter()
                .filter(|&&x| bps.iter().any(|&z| (base - z) * (x - z) <= 0.0))
                .count();
        }
        Ok(sub_delta * count as f64)
    })?;
    Ok(l2_estimate(&values, cfg.chunk_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncrementEntry {
    pub p: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupationEntry {
    /// 0-based breakpoint index.
    pub k: usize,
    pub eps: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub delta: f64,
    pub n_paths: usize,
    pub moment_sup: Vec<MomentEstimate>,
    pub increment: Vec<IncrementEntry>,
    pub occupation: Vec<OccupationEntry>,
    pub crossing: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRequest {
    pub level: u32,
    pub moment_orders: Vec<f64>,
    pub occupation_radii: Vec<f64>,
    /// Breakpoints for the occupation estimates; all when `None`.
    pub breakpoints: Option<Vec<usize>>,
    pub crossing: bool,
}

pub fn run_diagnostics(
    problem: &SdeProblem,
    request: &DiagnosticsRequest,
    cfg: &McConfig,
) -> Result<DiagnosticsReport> {
    let level = request.level;
    let mut moment = Vec::new();
    let mut increment = Vec::new();
    for &p in &request.moment_orders {
        moment.push(moment_sup(problem, level, p, Scheme::Tamed, cfg)?);
        let e = increment_moment(problem, level, p, cfg)?;
        increment.push(IncrementEntry {
            p,
            estimate: e.estimate,
            std_error: e.std_error,
        });
    }
    let ks = request
        .breakpoints
        .clone()
        .unwrap_or_else(|| (0..problem.num_breakpoints()).collect());
    let mut occupation = Vec::new();
    for &k in &ks {
        for &eps in &request.occupation_radii {
            let e = occupation_time(problem, level, k, eps, cfg)?;
            occupation.push(OccupationEntry {
                k,
                eps,
                estimate: e.estimate,
                std_error: e.std_error,
            });
        }
    }
    let crossing = if request.crossing {
        Some(crossing_statistic(problem, level, cfg)?)
    } else {
        None
    };
    Ok(DiagnosticsReport {
        delta: cfg.delta(problem.horizon(), level),
        n_paths: cfg.n_paths,
        moment_sup: moment,
        increment,
        occupation,
        crossing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog;

    fn frozen(x0: f64) -> SdeProblem {
        SdeProblem::smooth(vec![0.0], vec![0.0], x0, 1.0).unwrap()
    }

    #[test]
    fn fit_examples() {
        let rows = [(2f64.powi(-4), 0.25), (2f64.powi(-6), 0.125), (2f64.powi(-8), 0.0625)];
        let fit = fit_order(&rows).unwrap();
        assert_eq!(fit.slope, 0.5);
        assert_eq!(fit.r_squared, 1.0);

        let flat = [(0.1, 2.0), (0.01, 2.0), (0.001, 2.0)];
        assert_eq!(fit_order(&flat).unwrap().slope, 0.0);

        let power: Vec<(f64, f64)> = (3..9)
            .map(|l| {
                let d = 2f64.powi(-l);
                (d, 1.7 * d.powf(0.3))
            })
            .collect();
        let fit = fit_order(&power).unwrap();
        assert!((fit.slope - 0.3).abs() < 1e-12);
        assert!((fit.intercept - 1.7f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn fit_drops_nonpositive_rows() {
        let rows = [(0.5, 0.0), (0.25, 0.5), (0.125, 0.25), (0.0625, -1.0)];
        assert!(matches!(fit_order(&rows), Err(Error::Fit(_))));
        let rows = [(0.5, 0.0), (0.25, 0.5), (0.125, 0.25), (0.0625, 0.125)];
        assert_eq!(fit_order(&rows).unwrap().slope, 1.0);
    }

    #[test]
    fn deterministic_sum_is_order_fixed() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((deterministic_sum(&v, 256) - naive).abs() < 1e-12);
        assert_eq!(deterministic_sum(&v, 256), deterministic_sum(&v, 256));
        assert_eq!(deterministic_sum(&[], 4), 0.0);
    }

    #[test]
    fn zero_error_cases() {
        let p = catalog::cubic_with_jump(0.5, 1.0);
        let cfg = McConfig::new(20, 1);
        assert_eq!(strong_error(&p, 6, 6, &cfg).unwrap().estimate, 0.0);
        assert_eq!(strong_error(&frozen(0.4), 2, 8, &cfg).unwrap().estimate, 0.0);
        assert!(strong_error(&p, 6, 5, &cfg).is_err());
        assert!(strong_error(&p, 2, 6, &McConfig::new(0, 1)).is_err());
    }

    #[test]
    fn study_validates_levels() {
        let p = catalog::linear(1.0, 1.0);
        let cfg = McConfig::new(4, 1);
        assert!(convergence_study(&p, &[2, 3], 8, &cfg).is_err());
        assert!(convergence_study(&p, &[2, 4, 3], 8, &cfg).is_err());
        assert!(convergence_study(&p, &[2, 3, 6], 8, &cfg).is_err());
        let t = convergence_study(&p, &[2, 3, 4], 8, &cfg).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!(t.fitted_slope.is_finite());
    }

    #[test]
    fn study_rows_match_strong_error() {
        let p = catalog::cubic_with_jump(0.5, 1.0);
        let cfg = McConfig::new(16, 77);
        let table = convergence_study(&p, &[3, 4, 5], 9, &cfg).unwrap();
        let single = strong_error(&p, 4, 9, &cfg).unwrap();
        assert_eq!(table.rows[1].error, single.estimate);
        assert_eq!(table.rows[1].std_error, single.std_error);
    }

    #[test]
    fn linear_additive_noise_is_order_one() {
        // with constant diffusion the scheme coincides with Milstein
        let p = catalog::linear(1.0, 1.0);
        let cfg = McConfig::new(2000, 5);
        let e6 = strong_error(&p, 6, 11, &cfg).unwrap().estimate;
        let e8 = strong_error(&p, 8, 11, &cfg).unwrap().estimate;
        let ratio = e6 / e8;
        assert!((3.0..=5.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn transform_domain_identity() {
        let p = catalog::cubic(1.0, 0.5, 1.0);
        let g = TransformG::build(&p).unwrap();
        let cfg = McConfig::new(10, 3);
        let r = transform_domain_error(&p, &g, 4, 8, &cfg).unwrap();
        assert_eq!(r.gx_discrepancy.estimate, 0.0);
        let x = strong_error(&p, 4, 8, &cfg).unwrap();
        assert_eq!(r.z_error.estimate, x.estimate);

        let r = transform_domain_error(&frozen(1.0), &TransformG::identity(), 3, 7, &cfg).unwrap();
        assert_eq!(r.z_error.estimate, 0.0);
        assert_eq!(r.gx_discrepancy.estimate, 0.0);
    }

    #[test]
    fn moments_of_frozen_path() {
        let cfg = McConfig::new(8, 0);
        let m = moment_sup(&frozen(-1.5), 4, 3.0, Scheme::Tamed, &cfg).unwrap();
        assert!((m.estimate - 1.5f64.powi(3)).abs() < 1e-14);
        assert_eq!(m.std_error, 0.0);
        assert!(moment_sup(&frozen(1.0), 4, 1.0, Scheme::Tamed, &cfg).is_err());
        let inc = increment_moment(&frozen(2.0), 4, 2.0, &cfg).unwrap();
        assert_eq!(inc.estimate, 0.0);
    }

    #[test]
    fn occupation_limits() {
        let p = catalog::cubic_with_jump(0.5, 1.0);
        let cfg = McConfig::new(50, 8);
        let all = occupation_time(&p, 5, 0, 1e3, &cfg).unwrap();
        assert!((all.estimate - 1.0).abs() < 1e-12);
        let far = crate::model::SdeProblem::new(
            p.drift_fn().clone(),
            crate::model::PiecewisePolynomial::smooth(crate::model::Polynomial::constant(0.01)).unwrap(),
            100.0,
            0.1,
        )
        .unwrap();
        let none = occupation_time(&far, 5, 0, 0.1, &cfg).unwrap();
        assert_eq!(none.estimate, 0.0);
        assert!(occupation_time(&p, 5, 1, 0.1, &cfg).is_err());
        assert!(occupation_time(&p, 5, 0, 0.0, &cfg).is_err());
    }

    #[test]
    fn crossing_limits() {
        let cfg = McConfig::new(50, 8);
        let p = catalog::cubic_with_jump(0.5, 1.0);
        let far = p.with_x0(0.0).unwrap().with_horizon(1.0).unwrap();
        let started_on = crossing_statistic(&far, 5, &cfg).unwrap();
        assert!(started_on.estimate > 0.0);
        assert!(started_on.estimate <= 1.0);

        let remote = crate::model::SdeProblem::new(
            p.drift_fn().clone(),
            crate::model::PiecewisePolynomial::smooth(crate::model::Polynomial::constant(0.01)).unwrap(),
            100.0,
            0.1,
        )
        .unwrap();
        assert_eq!(crossing_statistic(&remote, 5, &cfg).unwrap().estimate, 0.0);
        assert!(crossing_statistic(&catalog::linear(0.0, 1.0), 5, &cfg).is_err());
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let p = catalog::cubic_with_jump(0.5, 1.0);
        let cfg = McConfig::new(300, 99);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| convergence_study(&p, &[2, 3, 4], 8, &cfg).unwrap())
        };
        assert_eq!(run(1), run(5));
    }
}
