//! Distributed dual coordinate ascent.
//!
//! Each of `K` workers owns a shard of the examples and their dual variables.
//! A round samples `m` examples per worker, maximizes the dual along each
//! sampled coordinate, and ends with one reduce of the workers' local models.
//! The variants differ only in which primal vector the inner steps read and
//! in how strongly the quadratic term is scaled:
//!
//! | variant    | margin from     | scale | local model factor | reduce  |
//! |------------|-----------------|-------|--------------------|---------|
//! | naive      | round-start `w` | `mK`  | `K/(λn)`           | average |
//! | practical  | local `u`       | `K`   | `K/(λn)`           | average |
//! | orthogonal | local `u`       | `1`   | `1/(λn)`           | sum     |
//!
//! Every driver shares the same reduce arithmetic. A worker contributes
//! `[w_k, Σ −φ*(−α_i), Σ φ(x_i·w)]` where the two trailing sums are taken over
//! its shard at the start of the round, so the objectives of round `t − 1`
//! arrive with the reduce of round `t`; one extra reduce after the last round
//! delivers the final objectives. Simulated, threaded and TCP runs therefore
//! produce bitwise identical round-level traces.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::comm::{apply_op, reduce_local, Collective, CommError, InProcessGroup, ReduceOp};
use crate::data::{orthogonality_residual, Dataset, Partition};
use crate::diagnostics::{
    self, contraction, distance, half_norm_sq, lockstep_weight, loss_sum, neg_conjugate_sum,
    residual_r, DiagnosticsError, StepTerm, TraceRecord,
};
use crate::model::{IncrementProblem, L2Regularizer, LossModel, ModelError};
use crate::trace::{NullSink, TraceSink, VecSink};

/// Largest cross-worker `|x_i·x_j|` accepted by the orthogonal variant.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Rows may exceed the unit ball by this much before validation rejects them.
const UNIT_BALL_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] DiagnosticsError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("non-finite {what} in round {round}")]
    NonFinite { round: usize, what: &'static str },
    #[error("reference not converged: gap {gap:e} after {epochs} epochs")]
    ReferenceNotConverged { epochs: usize, gap: f64 },
    #[error("not supported in this execution mode: {0}")]
    UnsupportedMode(String),
    #[error("trace output failed: {0}")]
    Trace(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Naive,
    Practical,
    Orthogonal,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::Practical => "practical",
            Variant::Orthogonal => "orthogonal",
        }
    }

    /// Multiplier of the quadratic term in each coordinate step.
    pub fn scale(self, inner_steps: usize, workers: usize) -> f64 {
        match self {
            Variant::Naive => (inner_steps * workers) as f64,
            Variant::Practical => workers as f64,
            Variant::Orthogonal => 1.0,
        }
    }

    /// `w_k = (factor/(λn))·Σ α_i x_i` over the worker's shard.
    pub fn model_factor(self, workers: usize) -> f64 {
        match self {
            Variant::Naive | Variant::Practical => workers as f64,
            Variant::Orthogonal => 1.0,
        }
    }

    pub fn reduce_op(self) -> ReduceOp {
        match self {
            Variant::Naive | Variant::Practical => ReduceOp::Average,
            Variant::Orthogonal => ReduceOp::Sum,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Variant::Naive),
            "practical" => Ok(Variant::Practical),
            "orthogonal" => Ok(Variant::Orthogonal),
            other => Err(format!(
                "unknown variant '{other}' (expected naive, practical or orthogonal)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sampling {
    /// `m` independent uniform draws from the shard.
    WithReplacement,
    /// `m` distinct examples per round; when `m` exceeds the shard, whole
    /// shuffled passes are concatenated.
    WithoutReplacement,
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::WithReplacement => "with_replacement",
            Sampling::WithoutReplacement => "without_replacement",
        })
    }
}

impl FromStr for Sampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with_replacement" => Ok(Sampling::WithReplacement),
            "without_replacement" | "without_replacement_per_round" => {
                Ok(Sampling::WithoutReplacement)
            }
            other => Err(format!(
                "unknown sampling '{other}' (expected with_replacement or without_replacement)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// One thread drives every worker.
    Simulated,
    /// One thread per worker, meeting at an in-process barrier.
    Threaded,
}

/// A high-accuracy solution used to measure suboptimality.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub w: Vec<f64>,
    pub alpha: Vec<f64>,
    pub dual: f64,
    pub primal: f64,
    pub gap: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    pub gap_tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            gap_tol: 1e-10,
            max_epochs: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub variant: Variant,
    pub workers: usize,
    /// `m`, coordinate steps per worker per round.
    pub inner_steps: usize,
    /// `T`.
    pub rounds: usize,
    pub lambda: f64,
    pub loss: LossModel,
    /// Worker `k` draws from `seed + k`.
    pub seed: u64,
    pub sampling: Sampling,
    /// Local duality gap at which a one-communication worker stops.
    pub local_gap_tol: f64,
    /// Pass cap for one-communication workers.
    pub max_local_epochs: usize,
    pub orthogonality_tol: f64,
    /// Interleave workers step by step and record `R`, `S` and per-step
    /// objectives. Simulated mode only.
    pub lockstep: bool,
    /// With `lockstep`, emit a step record every this many steps (and at the
    /// last step of each round).
    pub step_stride: usize,
    pub reference: Option<Arc<Reference>>,
}

impl SolverConfig {
    pub fn new(
        variant: Variant,
        workers: usize,
        inner_steps: usize,
        rounds: usize,
        lambda: f64,
        loss: LossModel,
    ) -> Self {
        SolverConfig {
            variant,
            workers,
            inner_steps,
            rounds,
            lambda,
            loss,
            seed: 0,
            sampling: Sampling::WithReplacement,
            local_gap_tol: 1e-6,
            max_local_epochs: 100_000,
            orthogonality_tol: ORTHOGONALITY_TOL,
            lockstep: false,
            step_stride: 1,
            reference: None,
        }
    }

    pub fn scale(&self) -> f64 {
        self.variant.scale(self.inner_steps, self.workers)
    }

    pub fn regularizer(&self) -> L2Regularizer {
        L2Regularizer::new(self.lambda)
    }

    pub fn validate(&self, ds: &Dataset, p: &Partition) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::Config(msg));
        if self.workers == 0 {
            return bad("K must be at least 1".into());
        }
        if p.workers() != self.workers {
            return bad(format!(
                "partition has {} workers but K = {}",
                p.workers(),
                self.workers
            ));
        }
        if p.len() != ds.len() {
            return bad(format!(
                "partition covers {} examples, dataset has {}",
                p.len(),
                ds.len()
            ));
        }
        if self.inner_steps == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.step_stride == 0 {
            return bad("step stride must be at least 1".into());
        }
        if self.local_gap_tol.is_nan() || self.local_gap_tol <= 0.0 {
            return bad("local_gap_tol must be positive".into());
        }
        if self.loss.kind().is_classification() {
            if let Some(i) = ds.labels().iter().position(|&y| y != 1.0 && y != -1.0) {
                return bad(format!(
                    "{} loss needs labels in {{-1, +1}}; example {i} has {}",
                    self.loss.kind(),
                    ds.label(i)
                ));
            }
        }
        if let Some(i) = (0..ds.len()).find(|&i| ds.row(i).norm_sq() > 1.0 + UNIT_BALL_SLACK) {
            return bad(format!(
                "example {i} lies outside the unit ball; normalize the dataset first"
            ));
        }
        if let Some(r) = &self.reference {
            if r.w.len() != ds.dim() || r.alpha.len() != ds.len() {
                return bad("reference solution does not match the dataset".into());
            }
        }
        if self.variant == Variant::Orthogonal {
            let report = orthogonality_residual(ds, p);
            if report.max_abs_dot > self.orthogonality_tol {
                return bad(format!(
                    "orthogonal variant needs orthogonal shards; cross-worker residual {:e} exceeds {:e}{}",
                    report.max_abs_dot,
                    self.orthogonality_tol,
                    if report.exact { "" } else { " (sampled)" }
                ));
            }
        }
        Ok(())
    }

    fn step_params(&self, n: usize) -> StepParams {
        StepParams {
            loss: self.loss,
            scale: self.scale(),
            step_factor: self.variant.model_factor(self.workers) / (self.lambda * n as f64),
            lambda: self.lambda,
            n,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct StepParams {
    loss: LossModel,
    scale: f64,
    /// Coefficient of `Δα·x` added to `u` and `w_k`.
    step_factor: f64,
    lambda: f64,
    n: usize,
}

/// One worker's dual variables, local primal and sampler.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    /// Global indices of the owned examples, ascending.
    pub shard: Vec<usize>,
    /// Dual variables, aligned with `shard`.
    pub alpha: Vec<f64>,
    /// Local primal read by practical and orthogonal steps.
    pub u: Vec<f64>,
    /// This worker's summand of the global model.
    pub w_local: Vec<f64>,
    rng: ChaCha8Rng,
}

impl WorkerState {
    pub fn new(id: usize, shard: Vec<usize>, dim: usize, seed: u64) -> Self {
        WorkerState {
            id,
            alpha: vec![0.0; shard.len()],
            shard,
            u: vec![0.0; dim],
            w_local: vec![0.0; dim],
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(id as u64)),
        }
    }

    /// Shard positions to visit this round.
    pub fn sample_round(&mut self, m: usize, sampling: Sampling) -> Vec<usize> {
        let len = self.shard.len();
        match sampling {
            Sampling::WithReplacement => (0..m).map(|_| self.rng.gen_range(0..len)).collect(),
            Sampling::WithoutReplacement => {
                let mut out = Vec::with_capacity(m);
                while out.len() + len <= m {
                    let mut pass: Vec<usize> = (0..len).collect();
                    pass.shuffle(&mut self.rng);
                    out.extend(pass);
                }
                let rest = m - out.len();
                if rest > 0 {
                    out.extend(index::sample(&mut self.rng, len, rest));
                }
                out
            }
        }
    }

    fn begin_round(&mut self, w_global: &[f64]) {
        self.u.copy_from_slice(w_global);
    }

    fn apply(&mut self, ds: &Dataset, pos: usize, margin: f64, sp: &StepParams) -> Result<f64, SolverError> {
        let i = self.shard[pos];
        let row = ds.row(i);
        let problem = IncrementProblem {
            alpha: self.alpha[pos],
            margin,
            x_norm_sq: row.norm_sq(),
            scale: sp.scale,
            lambda: sp.lambda,
            n: sp.n,
            label: ds.label(i),
        };
        let delta = sp.loss.dual_increment(&problem)?;
        if !delta.is_finite() {
            return Err(SolverError::NonFinite {
                round: 0,
                what: "dual increment",
            });
        }
        self.alpha[pos] += delta;
        Ok(delta)
    }

    /// `(Σ −φ*(−α_i), Σ φ(x_i·w))` over the shard.
    pub fn partials(&self, ds: &Dataset, w_global: &[f64], loss: &LossModel) -> Result<(f64, f64), SolverError> {
        let conj = neg_conjugate_sum(ds, self.shard.iter().copied(), &self.alpha, loss)?;
        let losses = loss_sum(ds, self.shard.iter().copied(), w_global, loss);
        Ok((conj, losses))
    }
}

/// Naive step: the margin comes from the round-start global model, which is
/// left untouched; only `α` and `w_k` move.
pub fn inner_update_naive(
    ws: &mut WorkerState,
    ds: &Dataset,
    pos: usize,
    w_global: &[f64],
    cfg: &SolverConfig,
) -> Result<f64, SolverError> {
    naive_step(ws, ds, pos, w_global, &cfg.step_params(ds.len()))
}

/// Practical or orthogonal step: reads and updates the local primal `u`.
pub fn inner_update_practical(
    ws: &mut WorkerState,
    ds: &Dataset,
    pos: usize,
    cfg: &SolverConfig,
) -> Result<f64, SolverError> {
    local_step(ws, ds, pos, &cfg.step_params(ds.len()))
}

fn naive_step(
    ws: &mut WorkerState,
    ds: &Dataset,
    pos: usize,
    w_global: &[f64],
    sp: &StepParams,
) -> Result<f64, SolverError> {
    let row = ds.row(ws.shard[pos]);
    let delta = ws.apply(ds, pos, row.dot(w_global), sp)?;
    if delta != 0.0 {
        row.axpy(sp.step_factor * delta, &mut ws.w_local);
    }
    Ok(delta)
}

fn local_step(ws: &mut WorkerState, ds: &Dataset, pos: usize, sp: &StepParams) -> Result<f64, SolverError> {
    let row = ds.row(ws.shard[pos]);
    let delta = ws.apply(ds, pos, row.dot(&ws.u), sp)?;
    if delta != 0.0 {
        let a = sp.step_factor * delta;
        row.axpy(a, &mut ws.u);
        row.axpy(a, &mut ws.w_local);
    }
    Ok(delta)
}

fn run_inner(
    ws: &mut WorkerState,
    ds: &Dataset,
    samples: &[usize],
    w_global: &[f64],
    variant: Variant,
    sp: &StepParams,
) -> Result<(), SolverError> {
    for &pos in samples {
        match variant {
            Variant::Naive => naive_step(ws, ds, pos, w_global, sp)?,
            Variant::Practical | Variant::Orthogonal => local_step(ws, ds, pos, sp)?,
        };
    }
    Ok(())
}

/// Combines the local models of co-located workers with the variant's reduce
/// rule, summing in worker order like every transport does.
pub fn reduce_round(workers: &[WorkerState], variant: Variant) -> Result<Vec<f64>, SolverError> {
    let locals: Vec<&[f64]> = workers.iter().map(|w| w.w_local.as_slice()).collect();
    Ok(reduce_local(&locals, variant.reduce_op())?)
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub w: Vec<f64>,
    /// Dual variables indexed by example.
    pub alpha: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub rounds_run: usize,
    /// False when a one-communication worker hit its pass cap first.
    pub locally_converged: bool,
}

/// What one worker knows at the end of a run.
#[derive(Debug, Clone)]
pub struct WorkerOutcome {
    pub worker_id: usize,
    pub w: Vec<f64>,
    pub shard: Vec<usize>,
    pub alpha: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub rounds_run: usize,
}

fn round_record(
    t: usize,
    conj_total: f64,
    loss_total: f64,
    w: &[f64],
    n: usize,
    lambda: f64,
    reference: Option<&Reference>,
) -> TraceRecord {
    let reg = half_norm_sq(lambda, w);
    let n = n as f64;
    let mut rec = TraceRecord::new(t, None, conj_total / n - reg, loss_total / n + reg);
    if let Some(r) = reference {
        rec.epsilon = Some(r.dual - rec.dual_obj);
        rec.dist_to_opt = Some(distance(w, &r.w));
    }
    rec
}

fn check_finite(v: &[f64], round: usize, what: &'static str) -> Result<(), SolverError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::NonFinite { round, what })
    }
}

fn with_round(e: SolverError, round: usize) -> SolverError {
    match e {
        SolverError::NonFinite { what, .. } => SolverError::NonFinite { round, what },
        other => other,
    }
}

/// Runs `T` rounds of the configured variant on `K` workers.
pub fn run_disdca(
    cfg: &SolverConfig,
    ds: &Dataset,
    p: &Partition,
    mode: ExecMode,
    sink: &mut dyn TraceSink,
) -> Result<SolverResult, SolverError> {
    cfg.validate(ds, p)?;
    match mode {
        ExecMode::Simulated => run_simulated(cfg, ds, p, sink),
        ExecMode::Threaded => run_threaded(cfg, ds, p, sink),
    }
}

fn run_simulated(
    cfg: &SolverConfig,
    ds: &Dataset,
    p: &Partition,
    sink: &mut dyn TraceSink,
) -> Result<SolverResult, SolverError> {
    let n = ds.len();
    let dim = ds.dim();
    let sp = cfg.step_params(n);
    let reference = cfg.reference.as_deref();
    let mut states: Vec<WorkerState> = (0..cfg.workers)
        .map(|k| WorkerState::new(k, p.shard(k).to_vec(), dim, cfg.seed))
        .collect();
    let mut w = vec![0.0; dim];
    let mut trace = Vec::new();
    let mut last_s: Option<f64> = None;

    for r in 1..=cfg.rounds + 1 {
        // same per-worker partial sums and the same fold order as the reduce
        let (mut conj, mut losses) = (0.0, 0.0);
        for ws in &states {
            let (c, l) = ws.partials(ds, &w, &cfg.loss)?;
            conj += c;
            losses += l;
        }
        let mut rec = round_record(r - 1, conj, losses, &w, n, cfg.lambda, reference);
        rec.s = last_s;
        sink.record(&rec)?;
        trace.push(rec);
        if r > cfg.rounds {
            break;
        }

        let samples: Vec<Vec<usize>> = states
            .iter_mut()
            .map(|ws| ws.sample_round(cfg.inner_steps, cfg.sampling))
            .collect();
        for ws in states.iter_mut() {
            ws.begin_round(&w);
        }
        if cfg.lockstep {
            let s = lockstep_round(cfg, ds, &mut states, &samples, &w, r, sink, &mut trace)
                .map_err(|e| with_round(e, r))?;
            last_s = Some(s);
        } else {
            for (ws, smp) in states.iter_mut().zip(&samples) {
                run_inner(ws, ds, smp, &w, cfg.variant, &sp).map_err(|e| with_round(e, r))?;
            }
        }

        w = reduce_round(&states, cfg.variant)?;
        check_finite(&w, r, "primal model")?;
    }

    let mut alpha = vec![0.0; n];
    for ws in &states {
        for (&i, &a) in ws.shard.iter().zip(&ws.alpha) {
            alpha[i] = a;
        }
    }
    Ok(SolverResult {
        w,
        alpha,
        trace,
        rounds_run: cfg.rounds,
        locally_converged: true,
    })
}

/// Interleaves the workers' `m` steps (`j` outer, `k` inner), tracking the
/// virtual global model `w(α)` after every step. Returns `S` for the round.
#[allow(clippy::too_many_arguments)]
fn lockstep_round(
    cfg: &SolverConfig,
    ds: &Dataset,
    states: &mut [WorkerState],
    samples: &[Vec<usize>],
    w_start: &[f64],
    round: usize,
    sink: &mut dyn TraceSink,
    trace: &mut Vec<TraceRecord>,
) -> Result<f64, SolverError> {
    let n = ds.len();
    let sp = cfg.step_params(n);
    let c = cfg.loss.smoothness() / cfg.lambda;
    let weight = lockstep_weight(c, n, cfg.workers);
    let mu = contraction(c, n, cfg.workers);
    let to_global = 1.0 / (cfg.lambda * n as f64);
    let reg = cfg.regularizer();
    let reference = cfg.reference.as_deref();

    let mut w_virtual = w_start.to_vec();
    let mut s_acc = 0.0;
    let mut terms = Vec::with_capacity(states.len());
    for j in 0..cfg.inner_steps {
        terms.clear();
        for (ws, smp) in states.iter_mut().zip(samples) {
            let pos = smp[j];
            let i = ws.shard[pos];
            let row = ds.row(i);
            let global_margin = row.dot(&w_virtual);
            let alpha = ws.alpha[pos];
            let (local_margin, delta) = match cfg.variant {
                Variant::Naive => (row.dot(w_start), naive_step(ws, ds, pos, w_start, &sp)?),
                Variant::Practical | Variant::Orthogonal => {
                    (row.dot(&ws.u), local_step(ws, ds, pos, &sp)?)
                }
            };
            terms.push((
                i,
                StepTerm {
                    omega: -cfg.loss.grad(global_margin, ds.label(i)),
                    alpha,
                    delta,
                    local_margin,
                    global_margin,
                },
            ));
        }
        let step_terms: Vec<StepTerm> = terms.iter().map(|&(_, t)| t).collect();
        let r_val = residual_r(&step_terms, weight, n);
        for &(i, t) in &terms {
            if t.delta != 0.0 {
                ds.row(i).axpy(to_global * t.delta, &mut w_virtual);
            }
        }
        s_acc = mu * s_acc + r_val;

        let step = j + 1;
        if step % cfg.step_stride == 0 || step == cfg.inner_steps {
            let mut conj = 0.0;
            for ws in states.iter() {
                conj += neg_conjugate_sum(ds, ws.shard.iter().copied(), &ws.alpha, &cfg.loss)?;
            }
            let dual = conj / n as f64 - half_norm_sq(cfg.lambda, &w_virtual);
            let primal = diagnostics::primal_objective(ds, &w_virtual, &cfg.loss, &reg);
            let mut rec = TraceRecord::new(round, Some(step), dual, primal);
            rec.r = Some(r_val);
            rec.s = Some(s_acc);
            if let Some(rf) = reference {
                rec.epsilon = Some(rf.dual - dual);
                rec.dist_to_opt = Some(distance(&w_virtual, &rf.w));
            }
            sink.record(&rec)?;
            trace.push(rec);
        }
    }
    Ok(s_acc)
}

fn run_threaded(
    cfg: &SolverConfig,
    ds: &Dataset,
    p: &Partition,
    sink: &mut dyn TraceSink,
) -> Result<SolverResult, SolverError> {
    if cfg.lockstep {
        return Err(SolverError::UnsupportedMode(
            "per-step diagnostics need the simulated lockstep driver".into(),
        ));
    }
    let endpoints = InProcessGroup::new(cfg.workers);
    let outcomes: Vec<Result<WorkerOutcome, SolverError>> = thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .map(|mut ep| {
                scope.spawn(move || {
                    let mut records = VecSink::default();
                    let mut out = run_worker_unchecked(cfg, ds, p, &mut ep, &mut records)?;
                    out.trace = records.0;
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });

    let mut alpha = vec![0.0; ds.len()];
    let mut first: Option<WorkerOutcome> = None;
    let mut first_err: Option<SolverError> = None;
    for out in outcomes {
        match out {
            Ok(o) => {
                for (&i, &a) in o.shard.iter().zip(&o.alpha) {
                    alpha[i] = a;
                }
                if o.worker_id == 0 {
                    first = Some(o);
                }
            }
            // the worker that failed first reports the root cause; the rest
            // only saw the abort
            Err(e) => {
                let is_echo = matches!(e, SolverError::Comm(CommError::Remote(_)));
                if first_err.is_none() || (!is_echo && matches!(first_err, Some(SolverError::Comm(CommError::Remote(_))))) {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let lead = first.expect("worker 0 finished");
    for rec in &lead.trace {
        sink.record(rec)?;
    }
    Ok(SolverResult {
        w: lead.w,
        alpha,
        trace: lead.trace,
        rounds_run: lead.rounds_run,
        locally_converged: true,
    })
}

/// One worker's side of a run over any reduce transport. All participants
/// must call this with the same configuration, dataset and partition.
pub fn run_worker<C: Collective + ?Sized>(
    cfg: &SolverConfig,
    ds: &Dataset,
    p: &Partition,
    comm: &mut C,
    sink: &mut dyn TraceSink,
) -> Result<WorkerOutcome, SolverError> {
    if let Err(e) = cfg.validate(ds, p) {
        comm.abort(&e.to_string());
        return Err(e);
    }
    if cfg.lockstep {
        let e = SolverError::UnsupportedMode(
            "per-step diagnostics need the simulated lockstep driver".into(),
        );
        comm.abort(&e.to_string());
        return Err(e);
    }
    run_worker_unchecked(cfg, ds, p, comm, sink)
}

fn run_worker_unchecked<C: Collective + ?Sized>(
    cfg: &SolverConfig,
    ds: &Dataset,
    p: &Partition,
    comm: &mut C,
    sink: &mut dyn TraceSink,
) -> Result<WorkerOutcome, SolverError> {
    let result = worker_loop(cfg, ds, p, comm, sink);
    match result {
        Ok(out) => {
            comm.finish()?;
            Ok(out)
        }
        Err(e) => {
            if !matches!(e, SolverError::Comm(_)) {
                comm.abort(&e.to_string());
            }
            Err(e)
        }
    }
}

fn worker_loop<C: Collective + ?Sized>(
    cfg: &SolverConfig,
    ds: &Dataset,
    p: &Partition,
    comm: &mut C,
    sink: &mut dyn TraceSink,
) -> Result<WorkerOutcome, SolverError> {
    let id = comm.worker_id();
    if comm.workers() != cfg.workers || id >= cfg.workers {
        return Err(SolverError::Config(format!(
            "transport has worker {id} of {}, configuration expects K = {}",
            comm.workers(),
            cfg.workers
        )));
    }
    let n = ds.len();
    let dim = ds.dim();
    let sp = cfg.step_params(n);
    let reference = cfg.reference.as_deref();
    let mut ws = WorkerState::new(id, p.shard(id).to_vec(), dim, cfg.seed);
    let mut w = vec![0.0; dim];
    let mut trace = Vec::new();
    let mut payload = vec![0.0; dim + 2];

    for r in 1..=cfg.rounds + 1 {
        let (conj, losses) = ws.partials(ds, &w, &cfg.loss)?;
        if r <= cfg.rounds {
            let samples = ws.sample_round(cfg.inner_steps, cfg.sampling);
            ws.begin_round(&w);
            run_inner(&mut ws, ds, &samples, &w, cfg.variant, &sp).map_err(|e| with_round(e, r))?;
        }
        payload[..dim].copy_from_slice(&ws.w_local);
        payload[dim] = conj;
        payload[dim + 1] = losses;
        let mut sum = comm.allreduce_sum(&payload)?;
        if sum.len() != dim + 2 {
            return Err(CommError::Protocol(format!(
                "reduce returned {} values, expected {}",
                sum.len(),
                dim + 2
            ))
            .into());
        }
        let losses_total = sum.pop().expect("length checked");
        let conj_total = sum.pop().expect("length checked");
        let rec = round_record(r - 1, conj_total, losses_total, &w, n, cfg.lambda, reference);
        sink.record(&rec)?;
        trace.push(rec);
        w = apply_op(sum, cfg.variant.reduce_op(), cfg.workers);
        check_finite(&w, r, "primal model")?;
    }
    Ok(WorkerOutcome {
        worker_id: id,
        w,
        shard: ws.shard,
        alpha: ws.alpha,
        trace,
        rounds_run: cfg.rounds,
    })
}

/// Local sub-problem values for one-communication workers: with
/// `w_k = (s'/(λn))·Σ α_i x_i`,
/// `D_k = (1/n)·Σ −φ*(−α_i) − (λ/(2s'))‖w_k‖²` and
/// `P_k = (1/n)·Σ φ(x_i·w_k) + (λ/(2s'))‖w_k‖²`.
fn local_objectives(ws: &WorkerState, ds: &Dataset, cfg: &SolverConfig) -> Result<(f64, f64), SolverError> {
    let n = ds.len() as f64;
    let factor = cfg.variant.model_factor(cfg.workers);
    let (conj, losses) = ws.partials(ds, &ws.w_local, &cfg.loss)?;
    let reg = half_norm_sq(cfg.lambda / factor, &ws.w_local);
    Ok((conj / n - reg, losses / n + reg))
}

/// Each worker solves its shard's sub-problem to `local_gap_tol` (checked
/// after every pass of `n_k` steps), then the local models are combined by a
/// single reduce.
pub fn run_one_communication(
    cfg: &SolverConfig,
    ds: &Dataset,
    p: &Partition,
) -> Result<SolverResult, SolverError> {
    cfg.validate(ds, p)?;
    if cfg.variant == Variant::Naive {
        return Err(SolverError::Config(
            "one-communication runs use the practical or orthogonal variant".into(),
        ));
    }
    let n = ds.len();
    let dim = ds.dim();
    let sp = cfg.step_params(n);
    let reference = cfg.reference.as_deref();
    let mut trace = Vec::new();

    let start: Vec<WorkerState> = (0..cfg.workers)
        .map(|k| WorkerState::new(k, p.shard(k).to_vec(), dim, cfg.seed))
        .collect();
    let zero = vec![0.0; dim];
    let (mut conj, mut losses) = (0.0, 0.0);
    for ws in &start {
        let (c, l) = ws.partials(ds, &zero, &cfg.loss)?;
        conj += c;
        losses += l;
    }
    trace.push(round_record(0, conj, losses, &zero, n, cfg.lambda, reference));

    let solved: Vec<Result<(WorkerState, bool), SolverError>> = thread::scope(|scope| {
        let handles: Vec<_> = start
            .into_iter()
            .map(|mut ws| {
                let sp = &sp;
                scope.spawn(move || {
                    let len = ws.shard.len();
                    for _ in 0..cfg.max_local_epochs {
                        let samples = ws.sample_round(len, cfg.sampling);
                        for pos in samples {
                            local_step(&mut ws, ds, pos, sp).map_err(|e| with_round(e, 1))?;
                        }
                        let (dual, primal) = local_objectives(&ws, ds, cfg)?;
                        if primal - dual <= cfg.local_gap_tol {
                            return Ok((ws, true));
                        }
                    }
                    Ok((ws, false))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("local solver panicked"))
            .collect()
    });
    let mut states = Vec::with_capacity(cfg.workers);
    let mut converged = true;
    for s in solved {
        let (ws, ok) = s?;
        converged &= ok;
        states.push(ws);
    }

    let w = reduce_round(&states, cfg.variant)?;
    check_finite(&w, 1, "primal model")?;

    let mut alpha = vec![0.0; n];
    let (mut conj, mut losses) = (0.0, 0.0);
    for ws in &states {
        let (c, l) = ws.partials(ds, &w, &cfg.loss)?;
        conj += c;
        losses += l;
        for (&i, &a) in ws.shard.iter().zip(&ws.alpha) {
            alpha[i] = a;
        }
    }
    trace.push(round_record(1, conj, losses, &w, n, cfg.lambda, reference));
    Ok(SolverResult {
        w,
        alpha,
        trace,
        rounds_run: 1,
        locally_converged: converged,
    })
}

/// Single-machine coordinate ascent with one shuffled pass per epoch, run
/// until the exact duality gap `P(w(α)) − D(α)` is at most `gap_tol`.
pub fn run_sdca_reference(
    ds: &Dataset,
    loss: &LossModel,
    lambda: f64,
    opts: &ReferenceOptions,
) -> Result<Reference, SolverError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SolverError::Config(format!("lambda must be positive, got {lambda}")));
    }
    let n = ds.len();
    let reg = L2Regularizer::new(lambda);
    let to_primal = 1.0 / (lambda * n as f64);
    let sp = StepParams {
        loss: *loss,
        scale: 1.0,
        step_factor: to_primal,
        lambda,
        n,
    };
    let mut ws = WorkerState::new(0, (0..n).collect(), ds.dim(), opts.seed);
    let mut gap = f64::INFINITY;
    for epoch in 1..=opts.max_epochs {
        let samples = ws.sample_round(n, Sampling::WithoutReplacement);
        for pos in samples {
            local_step(&mut ws, ds, pos, &sp).map_err(|e| with_round(e, epoch))?;
        }
        check_finite(&ws.alpha, epoch, "dual variables")?;
        // resynchronize with the exact primal image of α to stop drift
        let w = ds.weighted_sum(&ws.alpha, to_primal);
        ws.u.copy_from_slice(&w);
        let dual = diagnostics::dual_objective(ds, &ws.alpha, loss, &reg)?;
        let primal = diagnostics::primal_objective(ds, &w, loss, &reg);
        gap = primal - dual;
        if gap <= opts.gap_tol {
            return Ok(Reference {
                w,
                alpha: ws.alpha,
                dual,
                primal,
                gap,
                epochs: epoch,
            });
        }
    }
    Err(SolverError::ReferenceNotConverged {
        epochs: opts.max_epochs,
        gap,
    })
}

/// Convenience for callers that do not keep a trace.
pub fn run_disdca_quiet(
    cfg: &SolverConfig,
    ds: &Dataset,
    p: &Partition,
) -> Result<SolverResult, SolverError> {
    run_disdca(cfg, ds, p, ExecMode::Simulated, &mut NullSink)
}
