//! Loss functions, their convex conjugates, the L2 regularizer, and the
//! single-coordinate dual maximization used by every solver variant.
//!
//! Conjugates are exposed in the form the dual objective consumes:
//! [`LossModel::conjugate_neg`] returns `φ*(−a)` for a dual variable `a`.
//! Classification losses (squared hinge, logistic) expect labels in `{−1, +1}`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Slack allowed when checking a dual variable against the conjugate domain.
pub const DOMAIN_SLACK: f64 = 1e-12;

/// Logistic dual variables are kept at `a·y ∈ [LOGISTIC_CLIP, 1 − LOGISTIC_CLIP]`.
pub const LOGISTIC_CLIP: f64 = 1e-12;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dual variable a = {a} (label {label}) is outside the conjugate domain of the {loss} loss")]
    Domain { loss: LossKind, a: f64, label: f64 },
    #[error("1-D dual maximization did not converge after {iterations} iterations (gradient residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    SquaredHinge,
    Logistic,
    LeastSquares,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SquaredHinge => "squared_hinge",
            LossKind::Logistic => "logistic",
            LossKind::LeastSquares => "least_squares",
        }
    }

    /// Smoothness constants used throughout the bound checks.
    pub fn default_smoothness(self) -> f64 {
        match self {
            LossKind::SquaredHinge => 2.0,
            LossKind::Logistic => 0.5,
            LossKind::LeastSquares => 1.0,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, LossKind::LeastSquares)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "squared_hinge" => Ok(LossKind::SquaredHinge),
            "logistic" => Ok(LossKind::Logistic),
            "least_squares" => Ok(LossKind::LeastSquares),
            other => Err(format!(
                "unknown loss '{other}' (expected squared_hinge, logistic or least_squares)"
            )),
        }
    }
}

/// A smooth loss `φ(z, y)` together with its smoothness constant `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossModel {
    kind: LossKind,
    smoothness: f64,
    sign_constrained: bool,
}

impl LossModel {
    pub fn new(kind: LossKind) -> Self {
        LossModel {
            kind,
            smoothness: kind.default_smoothness(),
            sign_constrained: true,
        }
    }

    /// Overrides `L`, e.g. the tighter 1/4 for the logistic loss.
    pub fn with_smoothness(mut self, smoothness: f64) -> Self {
        assert!(smoothness > 0.0 && smoothness.is_finite());
        self.smoothness = smoothness;
        self
    }

    /// Whether squared-hinge dual variables are kept in the conjugate domain
    /// `a·y ≥ 0`. When off, the conjugate is the quadratic `−ay + a²/4` on all
    /// reals, which is the conjugate of the untruncated `(1 − yz)²`.
    pub fn with_sign_constraint(mut self, on: bool) -> Self {
        self.sign_constrained = on;
        self
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn sign_constrained(&self) -> bool {
        self.sign_constrained
    }

    pub fn value(&self, z: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::SquaredHinge => {
                let h = (1.0 - y * z).max(0.0);
                h * h
            }
            LossKind::Logistic => softplus(-y * z),
            LossKind::LeastSquares => 0.5 * (y - z) * (y - z),
        }
    }

    /// Derivative of `φ(z, y)` with respect to `z`.
    pub fn grad(&self, z: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::SquaredHinge => -2.0 * y * (1.0 - y * z).max(0.0),
            LossKind::Logistic => -y * sigmoid(-y * z),
            LossKind::LeastSquares => z - y,
        }
    }

    /// `φ*(−a)`, the conjugate evaluated at the negated dual variable.
    pub fn conjugate_neg(&self, a: f64, y: f64) -> Result<f64, ModelError> {
        match self.kind {
            LossKind::LeastSquares => Ok(-a * y + 0.5 * a * a),
            LossKind::SquaredHinge => {
                if self.sign_constrained && a * y < -DOMAIN_SLACK {
                    return Err(self.domain_error(a, y));
                }
                Ok(-a * y + 0.25 * a * a)
            }
            LossKind::Logistic => {
                let p = a * y;
                if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&p) {
                    return Err(self.domain_error(a, y));
                }
                let p = p.clamp(0.0, 1.0);
                Ok(xlogx(p) + xlogx(1.0 - p))
            }
        }
    }

    /// The 1-D objective maximized by [`LossModel::dual_increment`], evaluated at `delta`:
    /// `−φ*(−(α+Δ)) − Δ·margin − scale/(2λn)·Δ²·‖x‖²`.
    pub fn increment_objective(&self, p: &IncrementProblem, delta: f64) -> Result<f64, ModelError> {
        let conj = self.conjugate_neg(p.alpha + delta, p.label)?;
        Ok(-conj - delta * p.margin - p.curvature() * 0.5 * delta * delta)
    }

    /// Maximizer `Δα` of the single-coordinate dual problem.
    pub fn dual_increment(&self, p: &IncrementProblem) -> Result<f64, ModelError> {
        let y = p.label;
        match self.kind {
            LossKind::LeastSquares => Ok((y - p.margin - p.alpha) / (1.0 + p.curvature())),
            LossKind::SquaredHinge => {
                let lambda_n = p.lambda * p.n as f64;
                let step = lambda_n / (2.0 * p.scale * p.x_norm_sq + lambda_n);
                let delta = step * (2.0 * (y - p.margin) - p.alpha);
                if self.sign_constrained && y * (p.alpha + delta) < 0.0 {
                    // concave in Δ: the constrained optimum sits on the boundary a = 0
                    Ok(-p.alpha)
                } else {
                    Ok(delta)
                }
            }
            LossKind::Logistic => logistic_increment(p),
        }
    }

    fn domain_error(&self, a: f64, label: f64) -> ModelError {
        ModelError::Domain {
            loss: self.kind,
            a,
            label,
        }
    }
}

/// Inputs of one coordinate-wise dual maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementProblem {
    pub alpha: f64,
    /// `x·u`, the inner product with whichever primal vector the variant uses.
    pub margin: f64,
    pub x_norm_sq: f64,
    /// `mK` (naive), `K` (practical) or `1` (orthogonal).
    pub scale: f64,
    pub lambda: f64,
    pub n: usize,
    pub label: f64,
}

impl IncrementProblem {
    /// Coefficient of `Δ²/2` in the quadratic penalty.
    pub fn curvature(&self) -> f64 {
        self.scale * self.x_norm_sq / (self.lambda * self.n as f64)
    }
}

// Safeguarded Newton on the log-odds θ of p = (α+Δ)·y. In θ the stationarity
// condition h(θ) = −θ − y·margin − c(σ(θ) − y·α) = 0 has h' ≤ −1, and the root
// is bracketed by [−y·margin − c(1 − y·α), −y·margin + c·y·α].
fn logistic_increment(p: &IncrementProblem) -> Result<f64, ModelError> {
    let y = p.label;
    let c = p.curvature();
    let p0 = (p.alpha * y).clamp(0.0, 1.0);
    let ym = y * p.margin;

    let h = |theta: f64| -theta - ym - c * (sigmoid(theta) - p0);
    let mut lo = -ym - c * (1.0 - p0);
    let mut hi = -ym + c * p0;

    let theta = if c == 0.0 {
        -ym
    } else {
        let start = logit(p0.clamp(LOGISTIC_CLIP, 1.0 - LOGISTIC_CLIP));
        let mut theta = start.clamp(lo, hi);
        let mut converged = false;
        let mut residual = h(theta);
        for _ in 0..NEWTON_MAX_ITER {
            if residual.abs() <= NEWTON_TOL {
                converged = true;
                break;
            }
            if residual > 0.0 {
                lo = theta;
            } else {
                hi = theta;
            }
            if hi - lo <= 4.0 * f64::EPSILON * theta.abs().max(1.0) {
                converged = true;
                break;
            }
            let s = sigmoid(theta);
            let slope = -1.0 - c * s * (1.0 - s);
            let newton = theta - residual / slope;
            theta = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            residual = h(theta);
        }
        if !converged && residual.abs() > NEWTON_TOL {
            return Err(ModelError::NonConvergence {
                iterations: NEWTON_MAX_ITER,
                residual: residual.abs(),
            });
        }
        theta
    };

    let target = sigmoid(theta).clamp(LOGISTIC_CLIP, 1.0 - LOGISTIC_CLIP);
    let delta = y * target - p.alpha;
    // from a = 0 or a·y = 1 the clip can cost more than standing still
    if p0 == 0.0 || p0 == 1.0 {
        let model = LossModel::new(LossKind::Logistic);
        if model.increment_objective(p, delta)? < model.increment_objective(p, 0.0)? {
            return Ok(0.0);
        }
    }
    Ok(delta)
}

/// `g(w) = (λ/2)‖w‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Regularizer {
    lambda: f64,
}

impl L2Regularizer {
    pub fn new(lambda: f64) -> Self {
        assert!(lambda > 0.0 && lambda.is_finite(), "lambda must be positive");
        L2Regularizer { lambda }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        0.5 * self.lambda * norm_sq(w)
    }

    /// `g*(v) = ‖v‖²/(2λ)`.
    pub fn conjugate(&self, v: &[f64]) -> f64 {
        norm_sq(v) / (2.0 * self.lambda)
    }

    /// `∇g*(v) = v/λ`.
    pub fn primal_from_dual(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x / self.lambda).collect()
    }
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
