//! Collective reduce used at the end of every round.
//!
//! Three transports share one arithmetic: contributions are summed
//! element-wise in ascending worker id, starting from `0.0`, and averaging
//! divides that sum by `K` on the receiving side. The coordinator only ever
//! sums, so in-process and TCP runs produce bitwise identical results.

mod inproc;
mod tcp;
pub mod wire;

use std::time::Duration;

use thiserror::Error;

pub use inproc::{InProcessEndpoint, InProcessGroup};
pub use tcp::{coordinator_serve, Coordinator, CoordinatorConfig, CoordinatorReport, TcpWorker};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error{}{}: {msg}", worker_tag(*.worker), round_tag(*.round))]
    Transport {
        worker: Option<usize>,
        round: Option<u32>,
        msg: String,
    },
    #[error("peer reported error: {0}")]
    Remote(String),
}

fn worker_tag(w: Option<usize>) -> String {
    w.map(|w| format!(" (worker {w})")).unwrap_or_default()
}

fn round_tag(r: Option<u32>) -> String {
    r.map(|r| format!(" in round {r}")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Average,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommMode {
    InProcess,
    TcpWorker,
    TcpCoordinator,
}

/// One participant's handle on a collective reduce.
pub trait Collective {
    fn worker_id(&self) -> usize;
    fn workers(&self) -> usize;
    fn mode(&self) -> CommMode;
    /// Number of completed reduces.
    fn round(&self) -> u32;
    /// Element-wise sum over all participants in worker-id order.
    fn allreduce_sum(&mut self, local: &[f64]) -> Result<Vec<f64>, CommError>;
    /// Signals that this participant will not reduce again.
    fn finish(&mut self) -> Result<(), CommError>;
    /// Best-effort notice to the other participants that this one failed.
    fn abort(&mut self, _reason: &str) {}

    fn reduce(&mut self, local: &[f64], op: ReduceOp) -> Result<Vec<f64>, CommError> {
        let sum = self.allreduce_sum(local)?;
        Ok(apply_op(sum, op, self.workers()))
    }
}

/// The single summation routine every transport uses.
pub fn sum_in_order<V: AsRef<[f64]>>(inputs: &[V]) -> Result<Vec<f64>, CommError> {
    let dim = inputs.first().map_or(0, |v| v.as_ref().len());
    let mut acc = vec![0.0; dim];
    for (k, v) in inputs.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(CommError::Protocol(format!(
                "worker {k} contributed {} values, expected {dim}",
                v.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    Ok(acc)
}

pub fn apply_op(mut sum: Vec<f64>, op: ReduceOp, workers: usize) -> Vec<f64> {
    if op == ReduceOp::Average {
        let k = workers as f64;
        sum.iter_mut().for_each(|x| *x /= k);
    }
    sum
}

/// Reduce over vectors already held by one thread.
pub fn reduce_local<V: AsRef<[f64]>>(inputs: &[V], op: ReduceOp) -> Result<Vec<f64>, CommError> {
    Ok(apply_op(sum_in_order(inputs)?, op, inputs.len()))
}
