//! Objective values, duality gap, the inner-step deviation `R` and its
//! discounted accumulation `S`, and the closed-form rate bounds for the naive
//! and orthogonal variants.

use thiserror::Error;

use crate::data::Dataset;
use crate::model::{norm_sq, L2Regularizer, LossModel, ModelError};
use crate::solver::Variant;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("example {index}: {source}")]
    Domain {
        index: usize,
        #[source]
        source: ModelError,
    },
    #[error("no closed-form bound for the {0} variant")]
    UnsupportedVariant(Variant),
}

/// One row of a solver trace. `j == None` marks a round-level record taken
/// after `t` complete rounds; `Some(j)` is inner step `j` of round `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub j: Option<usize>,
    pub dual_obj: f64,
    pub primal_obj: f64,
    pub gap: f64,
    pub epsilon: Option<f64>,
    pub r: Option<f64>,
    pub s: Option<f64>,
    pub dist_to_opt: Option<f64>,
}

impl TraceRecord {
    pub fn new(t: usize, j: Option<usize>, dual_obj: f64, primal_obj: f64) -> Self {
        TraceRecord {
            t,
            j,
            dual_obj,
            primal_obj,
            gap: primal_obj - dual_obj,
            epsilon: None,
            r: None,
            s: None,
            dist_to_opt: None,
        }
    }

    pub fn is_round(&self) -> bool {
        self.j.is_none()
    }
}

/// `(1/n)·Σ φ(x_i·w, y_i) + (λ/2)‖w‖²`.
pub fn primal_objective(ds: &Dataset, w: &[f64], loss: &LossModel, reg: &L2Regularizer) -> f64 {
    loss_sum(ds, 0..ds.len(), w, loss) / ds.len() as f64 + reg.value(w)
}

/// `(1/n)·Σ −φ*(−α_i) − (1/(2λ))‖(1/n)·Σ α_i x_i‖²`.
pub fn dual_objective(
    ds: &Dataset,
    alpha: &[f64],
    loss: &LossModel,
    reg: &L2Regularizer,
) -> Result<f64, DiagnosticsError> {
    let n = ds.len() as f64;
    let conj = neg_conjugate_sum(ds, 0..ds.len(), alpha, loss)?;
    let v = ds.weighted_sum(alpha, 1.0 / n);
    Ok(conj / n - reg.conjugate(&v))
}

/// `P(w(α)) − D(α)` with `w(α) = (1/(λn))·Σ α_i x_i`.
pub fn duality_gap(
    ds: &Dataset,
    alpha: &[f64],
    loss: &LossModel,
    reg: &L2Regularizer,
) -> Result<f64, DiagnosticsError> {
    let w = ds.weighted_sum(alpha, 1.0 / (reg.lambda() * ds.len() as f64));
    Ok(primal_objective(ds, &w, loss, reg) - dual_objective(ds, alpha, loss, reg)?)
}

/// `Σ_{i∈examples} φ(x_i·w, y_i)`, summed in iteration order.
pub fn loss_sum(
    ds: &Dataset,
    examples: impl IntoIterator<Item = usize>,
    w: &[f64],
    loss: &LossModel,
) -> f64 {
    examples
        .into_iter()
        .map(|i| loss.value(ds.row(i).dot(w), ds.label(i)))
        .sum()
}

/// `Σ_i −φ*(−α_i)` over `examples`, where `alpha[k]` belongs to the `k`-th
/// yielded example.
pub fn neg_conjugate_sum(
    ds: &Dataset,
    examples: impl IntoIterator<Item = usize>,
    alpha: &[f64],
    loss: &LossModel,
) -> Result<f64, DiagnosticsError> {
    let mut acc = 0.0;
    for (i, &a) in examples.into_iter().zip(alpha) {
        let c = loss
            .conjugate_neg(a, ds.label(i))
            .map_err(|source| DiagnosticsError::Domain { index: i, source })?;
        acc -= c;
    }
    Ok(acc)
}

/// One worker's contribution to `R` at a single lockstep inner step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTerm {
    /// `−∇φ(x·w)` at the virtual global primal before the step.
    pub omega: f64,
    /// Dual variable before the step.
    pub alpha: f64,
    pub delta: f64,
    /// `x·u` with the worker's local primal before the step.
    pub local_margin: f64,
    /// `x·w` with the virtual global primal before the step.
    pub global_margin: f64,
}

/// `s = n/(cK + n)`, the step weight inside `R`.
pub fn lockstep_weight(c: f64, n: usize, workers: usize) -> f64 {
    let n = n as f64;
    n / (c * workers as f64 + n)
}

/// `R = (1/n)·Σ_k (s(ω_k − α_k) − Δα_k)·(x_k·u_k − x_k·w)`.
pub fn residual_r(terms: &[StepTerm], s: f64, n: usize) -> f64 {
    let total: f64 = terms
        .iter()
        .map(|t| (s * (t.omega - t.alpha) - t.delta) * (t.local_margin - t.global_margin))
        .sum();
    total / n as f64
}

/// `Σ_{j=1..m} μ^{m−j}·R_j`.
pub fn accumulate_s(rs: &[f64], mu: f64) -> f64 {
    rs.iter().fold(0.0, |acc, &r| mu * acc + r)
}

/// Per-step contraction `μ = 1 − 1/(c + n/K)` of the inner-step recursion.
pub fn contraction(c: f64, n: usize, workers: usize) -> f64 {
    1.0 - 1.0 / (c + n as f64 / workers as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub smoothness: f64,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
    pub workers: usize,
    pub epsilon0: f64,
    pub variant: Variant,
}

impl BoundParams {
    /// Condition number `L/λ`.
    pub fn c(&self) -> f64 {
        self.smoothness / self.lambda
    }
}

/// Upper bounds on the expected dual suboptimality and duality gap after `t`
/// rounds.
pub fn theorem_bound(params: &BoundParams, t: usize) -> Result<(f64, f64), DiagnosticsError> {
    let c = params.c();
    let n = params.n as f64;
    let k = params.workers as f64;
    let m = params.m as f64;
    match params.variant {
        Variant::Naive => {
            let q = c + n / (m * k);
            let dual = decay(1.0 / q, t as f64) * params.epsilon0;
            Ok((dual, q * dual))
        }
        Variant::Orthogonal => {
            let q = (c + n) / k;
            let dual = decay(1.0 / q, m * t as f64) * params.epsilon0;
            Ok((dual, q * dual))
        }
        Variant::Practical => Err(DiagnosticsError::UnsupportedVariant(Variant::Practical)),
    }
}

// (1 − rate)^steps without the cancellation of computing 1 − rate first
fn decay(rate: f64, steps: f64) -> f64 {
    if steps == 0.0 {
        1.0
    } else {
        (steps * (-rate).ln_1p()).exp()
    }
}

/// Observed decay of a round-level trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonFit {
    /// `(t, ε^{(t)}/ε^{(t−1)})` for each round with a positive predecessor.
    pub decay: Vec<(usize, f64)>,
    /// `(t, S^{(t,m)}/ε^{(t)})` where both are recorded and `ε^{(t)} > 0`.
    pub s_ratio: Vec<(usize, f64)>,
}

pub fn epsilon_fit(trace: &[TraceRecord]) -> EpsilonFit {
    let rounds: Vec<&TraceRecord> = trace.iter().filter(|r| r.is_round()).collect();
    let mut decay = Vec::new();
    for pair in rounds.windows(2) {
        if let (Some(prev), Some(cur)) = (pair[0].epsilon, pair[1].epsilon) {
            if prev > 0.0 {
                decay.push((pair[1].t, cur / prev));
            }
        }
    }
    let s_ratio = rounds
        .iter()
        .filter_map(|r| match (r.s, r.epsilon) {
            (Some(s), Some(e)) if e > 0.0 => Some((r.t, s / e)),
            _ => None,
        })
        .collect();
    EpsilonFit { decay, s_ratio }
}

/// `‖a − b‖₂`.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn half_norm_sq(lambda: f64, w: &[f64]) -> f64 {
    0.5 * lambda * norm_sq(w)
}
