//! SDE problem definition: piecewise-polynomial drift, polynomial diffusion,
//! initial value and horizon, together with a checker for the structural
//! assumptions the tamed scheme's convergence theory relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that can supply drift and diffusion values to a scheme.
pub trait Coefficients: Sync {
    fn drift(&self, x: f64) -> f64;
    fn diffusion(&self, x: f64) -> f64;
}

/// Dense polynomial, coefficients in ascending order of power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(Vec<f64>);

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial(coeffs)
    }

    pub fn constant(c: f64) -> Self {
        Polynomial(vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Degree ignoring trailing zero coefficients. The zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    /// Coefficient of the highest nonzero power (0 for the zero polynomial).
    pub fn leading_coeff(&self) -> f64 {
        self.0.get(self.degree()).copied().unwrap_or(0.0)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.0.len() <= 1 {
            return Polynomial(vec![0.0]);
        }
        Polynomial(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| i as f64 * c)
                .collect(),
        )
    }

    /// Upper bound of `|p(x)|` for `|x| <= radius`.
    pub fn abs_bound(&self, radius: f64) -> f64 {
        self.0
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * radius + c.abs())
    }

    fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }
}

/// Polynomial pieces on `(-inf, b_1), [b_1, b_2), ..., [b_last, inf)`.
///
/// At a breakpoint the right piece is used.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolynomial {
    breakpoints: Vec<f64>,
    pieces: Vec<Polynomial>,
}

impl PiecewisePolynomial {
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<Polynomial>) -> Result<Self> {
        if pieces.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidProblem(format!(
                "{} breakpoints need {} pieces, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                pieces.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidProblem("non-finite breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidProblem(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        for p in &pieces {
            if p.coeffs().is_empty() {
                return Err(Error::InvalidProblem("empty coefficient vector".into()));
            }
            if p.coeffs().iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidProblem("non-finite coefficient".into()));
            }
        }
        Ok(Self {
            breakpoints,
            pieces,
        })
    }

    pub fn smooth(poly: Polynomial) -> Result<Self> {
        Self::new(Vec::new(), vec![poly])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Polynomial] {
        &self.pieces
    }

    #[inline]
    pub fn piece_index(&self, x: f64) -> usize {
        // number of breakpoints <= x
        match self.breakpoints.len() {
            0 => 0,
            1 => (x >= self.breakpoints[0]) as usize,
            _ => self.breakpoints.partition_point(|&b| b <= x),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].eval(x)
    }

    /// Limit from the left at breakpoint `k` (0-based).
    pub fn left_limit(&self, k: usize) -> Result<f64> {
        let b = self.breakpoint(k)?;
        Ok(self.pieces[k].eval(b))
    }

    /// Limit from the right at breakpoint `k` (0-based).
    pub fn right_limit(&self, k: usize) -> Result<f64> {
        let b = self.breakpoint(k)?;
        Ok(self.pieces[k + 1].eval(b))
    }

    fn breakpoint(&self, k: usize) -> Result<f64> {
        self.breakpoints.get(k).copied().ok_or(Error::Index {
            index: k,
            len: self.breakpoints.len(),
        })
    }

    pub fn max_degree(&self) -> usize {
        self.pieces.iter().map(Polynomial::degree).max().unwrap_or(0)
    }
}

/// Scalar SDE `dX = mu(X) dt + sigma(X) dW`, `X_0 = x0`, on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeProblem {
    drift: PiecewisePolynomial,
    diffusion: PiecewisePolynomial,
    x0: f64,
    horizon: f64,
    growth_exponent: f64,
}

impl SdeProblem {
    /// Structural validation only. Nondegeneracy of the diffusion at the
    /// drift breakpoints is reported by [`SdeProblem::validate_assumptions`]
    /// and enforced when a transform is built.
    pub fn new(
        drift: PiecewisePolynomial,
        diffusion: PiecewisePolynomial,
        x0: f64,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if !x0.is_finite() {
            return Err(Error::InvalidProblem("x0 must be finite".into()));
        }
        if !diffusion.breakpoints().is_empty() {
            return Err(Error::InvalidProblem(
                "diffusion must be a single smooth polynomial".into(),
            ));
        }
        let growth_exponent = growth_exponent_of(&drift);
        Ok(Self {
            drift,
            diffusion,
            x0,
            horizon,
            growth_exponent,
        })
    }

    /// Convenience constructor for a drift without breakpoints.
    pub fn smooth(drift: Vec<f64>, diffusion: Vec<f64>, x0: f64, horizon: f64) -> Result<Self> {
        Self::new(
            PiecewisePolynomial::smooth(Polynomial::new(drift))?,
            PiecewisePolynomial::smooth(Polynomial::new(diffusion))?,
            x0,
            horizon,
        )
    }

    pub fn drift_fn(&self) -> &PiecewisePolynomial {
        &self.drift
    }

    pub fn diffusion_fn(&self) -> &PiecewisePolynomial {
        &self.diffusion
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.drift.breakpoints()
    }

    pub fn num_breakpoints(&self) -> usize {
        self.drift.breakpoints().len()
    }

    pub fn with_x0(&self, x0: f64) -> Result<Self> {
        Self::new(self.drift.clone(), self.diffusion.clone(), x0, self.horizon)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.drift.clone(), self.diffusion.clone(), self.x0, horizon)
    }

    pub fn eval_drift(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        Ok(self.drift.eval(x))
    }

    pub fn eval_diffusion(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        Ok(self.diffusion.eval(x))
    }

    /// `mu(zeta_k-) - mu(zeta_k+)` for the 0-based breakpoint index `k`.
    pub fn drift_jump(&self, k: usize) -> Result<f64> {
        Ok(self.drift.left_limit(k)? - self.drift.right_limit(k)?)
    }

    /// Exponent bounding the polynomial growth of the drift derivative,
    /// `max(1, max_piece deg(mu'))`.
    pub fn growth_exponent(&self) -> f64 {
        self.growth_exponent
    }

    pub fn validate_assumptions(&self) -> ValidationReport {
        self.validate_assumptions_with(&ValidationOptions::default())
    }

    pub fn validate_assumptions_with(&self, opts: &ValidationOptions) -> ValidationReport {
        ValidationReport {
            sigma_nonzero: self.check_sigma_nonzero(),
            piecewise_lipschitz: self.check_piecewise_lipschitz(),
            outer_one_sided_lipschitz: self.check_outer_one_sided(),
            diffusion_regular: self.check_diffusion(opts.diffusion_check_radius),
            linear_growth_bound: self.interior_linear_growth_bound(),
        }
    }

    fn check_sigma_nonzero(&self) -> Clause {
        let min_abs = self
            .breakpoints()
            .iter()
            .map(|&z| self.diffusion.eval(z).abs())
            .fold(f64::INFINITY, f64::min);
        if self.breakpoints().is_empty() {
            return Clause::pass(None, "no drift breakpoints");
        }
        if min_abs > SIGMA_NONZERO_TOL {
            Clause::pass(Some(min_abs), "min |sigma(zeta_k)|")
        } else {
            Clause::fail(Some(min_abs), "sigma vanishes at a drift breakpoint")
        }
    }

    /// Lipschitz constant upper bound of the drift pieces strictly inside
    /// `[zeta_1, zeta_m]`.
    fn check_piecewise_lipschitz(&self) -> Clause {
        let bps = self.breakpoints();
        let mut bound: f64 = 0.0;
        for i in 1..bps.len() {
            let radius = bps[i - 1].abs().max(bps[i].abs());
            bound = bound.max(self.drift.pieces()[i].derivative().abs_bound(radius));
        }
        Clause::pass(Some(bound), "derivative bound on [zeta_1, zeta_m]")
    }

    /// One-sided Lipschitz on an outer ray holds iff the derivative of the
    /// outer polynomial is bounded above there, which for polynomials is
    /// decided by the sign of the derivative's leading term at infinity.
    fn check_outer_one_sided(&self) -> Clause {
        let pieces = self.drift.pieces();
        let left = outer_ray_derivative_sign(&pieces[0], Side::Left);
        let right = outer_ray_derivative_sign(&pieces[pieces.len() - 1], Side::Right);
        match (left, right) {
            (RayBehaviour::Bounded, RayBehaviour::Bounded) => {
                Clause::pass(None, "outer derivatives bounded above")
            }
            (RayBehaviour::Unbounded, _) => {
                Clause::fail(None, "left outer piece is not one-sided Lipschitz")
            }
            (_, RayBehaviour::Unbounded) => {
                Clause::fail(None, "right outer piece is not one-sided Lipschitz")
            }
        }
    }

    fn check_diffusion(&self, radius: f64) -> Clause {
        let sigma = &self.diffusion.pieces()[0];
        if sigma.degree() <= 1 {
            let lip = sigma.derivative().eval(0.0).abs();
            return Clause::pass(Some(lip), "affine diffusion, Lipschitz constant");
        }
        let bound = sigma.derivative().abs_bound(radius);
        Clause {
            status: ClauseStatus::Unverified,
            value: Some(bound),
            detail: format!("polynomial diffusion of degree {}; |sigma'| <= value on [-{radius}, {radius}] only", sigma.degree()),
        }
    }

    /// Upper bound for the smallest `c` with `|mu(x)| <= c (1 + |x|)` on
    /// `[zeta_1, zeta_m]` (not the minimal constant).
    fn interior_linear_growth_bound(&self) -> f64 {
        let bps = self.breakpoints();
        let mut bound: f64 = 0.0;
        for i in 1..bps.len() {
            let radius = bps[i - 1].abs().max(bps[i].abs());
            bound = bound.max(self.drift.pieces()[i].abs_bound(radius));
        }
        if let Some(&z) = bps.last() {
            // zeta_m itself is evaluated with the outer right piece
            bound = bound.max(self.drift.eval(z).abs() / (1.0 + z.abs()));
        }
        bound
    }
}

impl Coefficients for SdeProblem {
    #[inline]
    fn drift(&self, x: f64) -> f64 {
        self.drift.eval(x)
    }

    #[inline]
    fn diffusion(&self, x: f64) -> f64 {
        self.diffusion.eval(x)
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("argument {x} is not finite")))
    }
}

fn growth_exponent_of(drift: &PiecewisePolynomial) -> f64 {
    let deg = drift
        .pieces()
        .iter()
        .filter(|p| !p.is_zero())
        .map(|p| p.degree().saturating_sub(1))
        .max()
        .unwrap_or(0);
    deg.max(1) as f64
}

const SIGMA_NONZERO_TOL: f64 = 1e-12;

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

enum RayBehaviour {
    Bounded,
    Unbounded,
}

fn outer_ray_derivative_sign(piece: &Polynomial, side: Side) -> RayBehaviour {
    let d = piece.degree();
    if d <= 1 {
        return RayBehaviour::Bounded;
    }
    // mu'(x) ~ d * a * x^(d-1)
    let a = piece.leading_coeff();
    let sign_at_infinity = match side {
        Side::Right => a.signum(),
        Side::Left => {
            if (d - 1) % 2 == 0 {
                a.signum()
            } else {
                -a.signum()
            }
        }
    };
    if sign_at_infinity < 0.0 {
        RayBehaviour::Bounded
    } else {
        RayBehaviour::Unbounded
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationOptions {
    /// Half-width of the range on which a non-affine diffusion derivative is bounded.
    pub diffusion_check_radius: f64,
}

impl ValidationOptions {
    pub fn new(diffusion_check_radius: f64) -> Self {
        Self {
            diffusion_check_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClauseStatus {
    Pass,
    Fail,
    Unverified,
}

#[derive(Debug, Clone, Serialize)]
pub struct Clause {
    pub status: ClauseStatus,
    pub value: Option<f64>,
    pub detail: String,
}

impl Clause {
    fn pass(value: Option<f64>, detail: &str) -> Self {
        Self {
            status: ClauseStatus::Pass,
            value,
            detail: detail.to_string(),
        }
    }

    fn fail(value: Option<f64>, detail: &str) -> Self {
        Self {
            status: ClauseStatus::Fail,
            value,
            detail: detail.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub sigma_nonzero: Clause,
    pub piecewise_lipschitz: Clause,
    pub outer_one_sided_lipschitz: Clause,
    pub diffusion_regular: Clause,
    pub linear_growth_bound: f64,
}

impl ValidationReport {
    /// No clause failed. Unverified clauses do not count as failures.
    pub fn passed(&self) -> bool {
        [
            &self.sigma_nonzero,
            &self.piecewise_lipschitz,
            &self.outer_one_sided_lipschitz,
            &self.diffusion_regular,
        ]
        .iter()
        .all(|c| c.status != ClauseStatus::Fail)
    }
}

// ---- JSON ingestion ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseDoc {
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<Vec<f64>>,
}

/// On-disk problem description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemDoc {
    pub drift: PiecewiseDoc,
    pub diffusion: PiecewiseDoc,
    pub x0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl ProblemDoc {
    pub fn to_problem(&self) -> Result<SdeProblem> {
        let to_pw = |doc: &PiecewiseDoc| {
            PiecewisePolynomial::new(
                doc.breakpoints.clone(),
                doc.pieces.iter().cloned().map(Polynomial::new).collect(),
            )
        };
        SdeProblem::new(to_pw(&self.drift)?, to_pw(&self.diffusion)?, self.x0, self.horizon)
    }
}

impl From<&SdeProblem> for ProblemDoc {
    fn from(p: &SdeProblem) -> Self {
        let to_doc = |pw: &PiecewisePolynomial| PiecewiseDoc {
            breakpoints: pw.breakpoints().to_vec(),
            pieces: pw.pieces().iter().map(|q| q.coeffs().to_vec()).collect(),
        };
        ProblemDoc {
            drift: to_doc(&p.drift),
            diffusion: to_doc(&p.diffusion),
            x0: p.x0,
            horizon: p.horizon,
        }
    }
}

impl SdeProblem {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidProblem(format!("bad problem JSON: {e}")))?;
        doc.to_problem()
    }
}

/// Problems used throughout the test suites and examples.
pub mod catalog {
    use super::*;

    /// `mu(x) = -x^3 - x + 1` for `x < 0`, `-x^3 - x - 1` for `x >= 0`; unit diffusion.
    pub fn cubic_with_jump(x0: f64, horizon: f64) -> SdeProblem {
        SdeProblem::new(
            PiecewisePolynomial::new(
                vec![0.0],
                vec![
                    Polynomial::new(vec![1.0, -1.0, 0.0, -1.0]),
                    Polynomial::new(vec![-1.0, -1.0, 0.0, -1.0]),
                ],
            )
            .expect("valid drift"),
            PiecewisePolynomial::smooth(Polynomial::constant(1.0)).expect("valid diffusion"),
            x0,
            horizon,
        )
        .expect("valid problem")
    }

    /// Ornstein-Uhlenbeck type `dX = -X dt + dW`.
    pub fn linear(x0: f64, horizon: f64) -> SdeProblem {
        SdeProblem::smooth(vec![0.0, -1.0], vec![1.0], x0, horizon).expect("valid problem")
    }

    /// `dX = -X^3 dt + sigma dW`.
    pub fn cubic(sigma: f64, x0: f64, horizon: f64) -> SdeProblem {
        SdeProblem::smooth(vec![0.0, 0.0, 0.0, -1.0], vec![sigma], x0, horizon)
            .expect("valid problem")
    }
}
