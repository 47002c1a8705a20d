//! Seed-addressable Brownian increments on nested dyadic grids.
//!
//! Increments come from a ChaCha8 keystream keyed by the master seed, with
//! the path index selecting the stream. Position `j` of the stream is the
//! `j`-th finest-level increment, so any increment can be produced without
//! generating its predecessors and the result does not depend on how paths
//! are scheduled across workers.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// Largest supported number of steps on any grid.
pub const MAX_STEPS: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathKey {
    pub master_seed: u64,
    pub path_index: u64,
}

impl PathKey {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            path_index,
        }
    }

    fn stream(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.path_index);
        rng
    }
}

/// Brownian increments `W_{t_{j+1}} - W_{t_j}` on an equidistant grid of
/// `base_steps * 2^level` steps over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementArray {
    level: u32,
    base_steps: usize,
    horizon: f64,
    values: Vec<f64>,
}

impl IncrementArray {
    /// Wraps explicit increments. `values.len()` must equal `base_steps * 2^level`.
    pub fn from_values(level: u32, base_steps: usize, horizon: f64, values: Vec<f64>) -> Result<Self> {
        let n = step_count(base_steps, level)?;
        if values.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} increments for level {level}, got {}",
                values.len()
            )));
        }
        if !(horizon > 0.0) {
            return Err(Error::Argument("horizon must be positive".into()));
        }
        Ok(Self {
            level,
            base_steps,
            horizon,
            values,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.values.len() as f64
    }
}

pub fn step_count(base_steps: usize, level: u32) -> Result<usize> {
    if base_steps == 0 {
        return Err(Error::Argument("base_steps must be at least 1".into()));
    }
    1usize
        .checked_shl(level)
        .filter(|_| level < usize::BITS)
        .and_then(|f| f.checked_mul(base_steps))
        .filter(|&n| n <= MAX_STEPS)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "base_steps {base_steps} * 2^{level} exceeds {MAX_STEPS} steps"
            ))
        })
}

/// Maps a 64-bit word to the open unit interval.
#[inline]
fn to_open_unit(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn standard_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Finest-level increments for `key`.
pub fn generate_increments(
    key: PathKey,
    finest_level: u32,
    base_steps: usize,
    horizon: f64,
) -> Result<IncrementArray> {
    let n = step_count(base_steps, finest_level)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
    }
    let scale = (horizon / n as f64).sqrt();
    let mut rng = key.stream();
    let values = (0..n)
        .map(|_| standard_normal_quantile(to_open_unit(rng.next_u64())) * scale)
        .collect();
    Ok(IncrementArray {
        level: finest_level,
        base_steps,
        horizon,
        values,
    })
}

/// The `j`-th increment of the grid with `n_steps` steps, computed directly
/// from its stream position.
pub fn increment_at(key: PathKey, j: u64, n_steps: usize, horizon: f64) -> f64 {
    let mut rng = key.stream();
    rng.set_word_pos(2 * j as u128);
    standard_normal_quantile(to_open_unit(rng.next_u64())) * (horizon / n_steps as f64).sqrt()
}

/// Sums blocks of `factor` consecutive increments.
///
/// Blocks are summed as a balanced binary tree, so coarsening by `2^a` then
/// by `2^b` reproduces coarsening by `2^(a+b)` bit for bit.
pub fn coarsen(fine: &IncrementArray, factor: usize) -> Result<IncrementArray> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::Shape(format!("factor {factor} is not a power of two")));
    }
    if fine.len() % factor != 0 {
        return Err(Error::Shape(format!(
            "factor {factor} does not divide {} increments",
            fine.len()
        )));
    }
    let halvings = factor.trailing_zeros();
    if fine.level < halvings {
        return Err(Error::Shape(format!(
            "cannot coarsen level {} by factor {factor}",
            fine.level
        )));
    }
    let mut values = fine.values.clone();
    for _ in 0..halvings {
        values = values.chunks_exact(2).map(|p| p[0] + p[1]).collect();
    }
    Ok(IncrementArray {
        level: fine.level - halvings,
        base_steps: fine.base_steps,
        horizon: fine.horizon,
        values,
    })
}

/// Coarsens `fine` down to `level`.
pub fn coarsen_to_level(fine: &IncrementArray, level: u32) -> Result<IncrementArray> {
    if level > fine.level {
        return Err(Error::Shape(format!(
            "target level {level} is finer than {}",
            fine.level
        )));
    }
    coarsen(fine, 1usize << (fine.level - level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn arr(values: Vec<f64>) -> IncrementArray {
        let n = values.len();
        let level = n.trailing_zeros();
        IncrementArray::from_values(level, n >> level, 1.0, values).unwrap()
    }

    #[test]
    fn coarsen_definition() {
        let x = arr(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(coarsen(&x, 2).unwrap().values(), &[3.0, 7.0]);
        assert_eq!(coarsen(&x, 1).unwrap(), x);
        assert!(coarsen(&x, 3).is_err());
        assert!(coarsen(&x, 8).is_err());
    }

    #[test]
    fn coarsen_composes_exactly() {
        let x = generate_increments(PathKey::new(3, 9), 10, 1, 1.0).unwrap();
        let twice = coarsen(&coarsen(&x, 2).unwrap(), 2).unwrap();
        let once = coarsen(&x, 4).unwrap();
        assert_eq!(twice.values(), once.values());
        assert_eq!(once.level(), 8);
    }

    #[test]
    fn telescoping_sum() {
        let x = generate_increments(PathKey::new(1, 2), 12, 1, 2.0).unwrap();
        let w_t: f64 = x.values().iter().sum();
        for level in [0, 3, 7, 11] {
            let c = coarsen_to_level(&x, level).unwrap();
            let s: f64 = c.values().iter().sum();
            assert!((s - w_t).abs() <= 1e-12 * w_t.abs().max(1.0));
        }
    }

    #[test]
    fn deterministic_and_addressable() {
        let key = PathKey::new(42, 7);
        let a = generate_increments(key, 8, 3, 1.5).unwrap();
        let b = generate_increments(key, 8, 3, 1.5).unwrap();
        assert_eq!(a, b);
        for j in [0usize, 1, 17, 767] {
            assert_eq!(increment_at(key, j as u64, a.len(), 1.5), a.values()[j]);
        }
        let other = generate_increments(PathKey::new(42, 8), 8, 3, 1.5).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn capacity_limit() {
        assert!(matches!(
            generate_increments(PathKey::new(0, 0), 32, 1, 1.0),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(
            generate_increments(PathKey::new(0, 0), 31, 2, 1.0),
            Err(Error::Capacity(_))
        ));
        assert!(step_count(1, 31).is_ok());
    }

    #[test]
    fn quantile_accuracy() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for &u in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            let z = standard_normal_quantile(u);
            assert!((n.cdf(z) - u).abs() <= 1e-9 * u.min(1.0 - u).max(1e-3));
        }
    }

    #[test]
    fn moments_of_increments() {
        // 2^20 increments over a grid with N = 2^10 steps per unit time
        let n_steps = 1usize << 10;
        let x = generate_increments(PathKey::new(2024, 0), 20, 1, 1024.0).unwrap();
        let var_target = 1024.0 / x.len() as f64;
        assert!((var_target - 1.0 / n_steps as f64).abs() < 1e-18);
        let m = x.len() as f64;
        let mean = x.values().iter().sum::<f64>() / m;
        let var = x.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!(mean.abs() <= 4.0 * (var_target / m).sqrt());
        assert!((var / var_target - 1.0).abs() < 0.01);
    }

    #[test]
    fn kolmogorov_smirnov() {
        let n = 100_000;
        let x = generate_increments(PathKey::new(7, 3), 0, n, 4.0).unwrap();
        let scale = (4.0 / n as f64).sqrt();
        let mut z: Vec<f64> = x.values().iter().map(|v| v / scale).collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = Normal::new(0.0, 1.0).unwrap();
        let d = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = normal.cdf(v);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d <= 1.95 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn independent_paths() {
        let a = generate_increments(PathKey::new(5, 10), 0, 10_000, 1.0).unwrap();
        let b = generate_increments(PathKey::new(5, 11), 0, 10_000, 1.0).unwrap();
        let corr = correlation(a.values(), b.values());
        assert!(corr.abs() <= 0.05, "correlation {corr}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
