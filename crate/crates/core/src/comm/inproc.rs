use std::sync::{Arc, Condvar, Mutex};

use super::{sum_in_order, Collective, CommError, CommMode};

struct Slots {
    contributions: Vec<Option<Vec<f64>>>,
    arrived: usize,
    generation: u64,
    last: Result<Arc<Vec<f64>>, CommError>,
    aborted: Option<CommError>,
}

struct Shared {
    workers: usize,
    state: Mutex<Slots>,
    released: Condvar,
}

/// Factory for `K` endpoints that meet at a barrier on every reduce.
pub struct InProcessGroup;

impl InProcessGroup {
    #[allow(clippy::new_ret_no_self)]
    pub fn new(workers: usize) -> Vec<InProcessEndpoint> {
        assert!(workers > 0);
        let shared = Arc::new(Shared {
            workers,
            state: Mutex::new(Slots {
                contributions: vec![None; workers],
                arrived: 0,
                generation: 0,
                last: Ok(Arc::new(Vec::new())),
                aborted: None,
            }),
            released: Condvar::new(),
        });
        (0..workers)
            .map(|id| InProcessEndpoint {
                id,
                shared: Arc::clone(&shared),
                round: 0,
            })
            .collect()
    }
}

/// One thread's handle; all `K` callers are released together with the same
/// result vector once the last contribution arrives.
pub struct InProcessEndpoint {
    id: usize,
    shared: Arc<Shared>,
    round: u32,
}

impl Collective for InProcessEndpoint {
    fn worker_id(&self) -> usize {
        self.id
    }

    fn workers(&self) -> usize {
        self.shared.workers
    }

    fn mode(&self) -> CommMode {
        CommMode::InProcess
    }

    fn round(&self) -> u32 {
        self.round
    }

    fn allreduce_sum(&mut self, local: &[f64]) -> Result<Vec<f64>, CommError> {
        let mut st = self.shared.state.lock().expect("reduce state poisoned");
        if let Some(e) = &st.aborted {
            return Err(e.clone());
        }
        let generation = st.generation;
        st.contributions[self.id] = Some(local.to_vec());
        st.arrived += 1;
        if st.arrived == self.shared.workers {
            let inputs: Vec<Vec<f64>> = st
                .contributions
                .iter_mut()
                .map(|c| c.take().expect("every slot filled"))
                .collect();
            st.last = sum_in_order(&inputs).map(Arc::new);
            st.arrived = 0;
            st.generation += 1;
            self.shared.released.notify_all();
        } else {
            while st.generation == generation && st.aborted.is_none() {
                st = self.shared.released.wait(st).expect("reduce state poisoned");
            }
            if st.generation == generation {
                return Err(st.aborted.clone().expect("woken by abort"));
            }
        }
        self.round += 1;
        st.last.clone().map(|v| v.as_ref().clone())
    }

    fn finish(&mut self) -> Result<(), CommError> {
        Ok(())
    }

    fn abort(&mut self, reason: &str) {
        let mut st = self.shared.state.lock().expect("reduce state poisoned");
        if st.aborted.is_none() {
            st.aborted = Some(CommError::Remote(format!("worker {}: {reason}", self.id)));
        }
        self.shared.released.notify_all();
    }
}
