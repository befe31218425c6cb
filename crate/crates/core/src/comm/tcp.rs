//! Star-topology allreduce over TCP: one coordinator, `K` workers.
//!
//! Workers open a connection and send HELLO `(worker_id, dim)`. Once ids
//! `0..K` are registered, each round every worker sends one CONTRIBUTE for
//! the current round and the coordinator answers all of them with the same
//! RESULT, the sum in worker-id order. The session ends when every worker
//! has sent DONE.

use std::io::{self, ErrorKind};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{Body, ReadError, WireMessage};
use super::{sum_in_order, Collective, CommError, CommMode, DEFAULT_TIMEOUT};

const POLL: Duration = Duration::from_millis(2);

fn transport(worker: Option<usize>, round: Option<u32>, err: impl ToString) -> CommError {
    CommError::Transport {
        worker,
        round,
        msg: err.to_string(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoordinatorConfig {
    pub workers: usize,
    pub dim: usize,
    pub timeout: Duration,
}

impl CoordinatorConfig {
    pub fn new(workers: usize, dim: usize) -> Self {
        CoordinatorConfig {
            workers,
            dim,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordinatorReport {
    /// Completed reduce rounds.
    pub rounds: u32,
    /// Connections turned away during registration.
    pub rejected: usize,
}

pub struct Coordinator {
    listener: TcpListener,
    cfg: CoordinatorConfig,
}

/// Binds `listen_addr` and serves one session.
pub fn coordinator_serve(
    listen_addr: impl ToSocketAddrs,
    workers: usize,
    dim: usize,
) -> Result<CoordinatorReport, CommError> {
    Coordinator::bind(listen_addr, CoordinatorConfig::new(workers, dim))?.serve()
}

impl Coordinator {
    pub fn bind(addr: impl ToSocketAddrs, cfg: CoordinatorConfig) -> Result<Self, CommError> {
        if cfg.workers == 0 {
            return Err(CommError::Protocol("coordinator needs at least one worker".into()));
        }
        let listener = TcpListener::bind(addr).map_err(|e| transport(None, None, e))?;
        Ok(Coordinator { listener, cfg })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn serve(self) -> Result<CoordinatorReport, CommError> {
        let (streams, rejected) = self.register()?;
        drop(self.listener);
        let result = run_rounds(&streams, &self.cfg);
        for s in &streams {
            let _ = s.shutdown(Shutdown::Both);
        }
        result.map(|rounds| CoordinatorReport { rounds, rejected })
    }

    fn register(&self) -> Result<(Vec<TcpStream>, usize), CommError> {
        let k = self.cfg.workers;
        self.listener
            .set_nonblocking(true)
            .map_err(|e| transport(None, None, e))?;
        let (tx, rx) = mpsc::channel::<(TcpStream, Result<WireMessage, ReadError>)>();
        let mut slots: Vec<Option<TcpStream>> = (0..k).map(|_| None).collect();
        let mut registered = 0;
        let mut rejected = 0;
        let mut last_progress = Instant::now();

        while registered < k {
            let mut idle = true;
            match self.listener.accept() {
                Ok((stream, _)) => {
                    idle = false;
                    let tx = tx.clone();
                    let timeout = self.cfg.timeout;
                    thread::spawn(move || {
                        let mut stream = stream;
                        let first = stream
                            .set_nonblocking(false)
                            .and_then(|_| stream.set_read_timeout(Some(timeout)))
                            .map_err(ReadError::Io)
                            .and_then(|_| WireMessage::read_from(&mut stream));
                        let _ = tx.send((stream, first));
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {}
                Err(e) => return Err(transport(None, None, e)),
            }
            while let Ok((mut stream, first)) = rx.try_recv() {
                idle = false;
                let verdict = match first {
                    Ok(WireMessage {
                        body: Body::Hello { worker_id, dim },
                        ..
                    }) => {
                        let id = worker_id as usize;
                        if id >= k {
                            Err(format!("worker id {id} out of range 0..{k}"))
                        } else if dim as usize != self.cfg.dim {
                            Err(format!(
                                "worker {id} declared dim {dim}, coordinator expects {}",
                                self.cfg.dim
                            ))
                        } else if slots[id].is_some() {
                            Err(format!("duplicate worker id {id}"))
                        } else {
                            Ok(id)
                        }
                    }
                    Ok(other) => Err(format!("expected HELLO, got {:?}", other.msg_type())),
                    Err(ReadError::Frame(e)) => Err(e.to_string()),
                    Err(ReadError::Io(e)) => Err(format!("could not read HELLO: {e}")),
                };
                match verdict {
                    Ok(id) => {
                        let _ = stream.set_nodelay(true);
                        slots[id] = Some(stream);
                        registered += 1;
                        last_progress = Instant::now();
                    }
                    Err(msg) => {
                        let _ = WireMessage::new(0, Body::Error(msg)).write_to(&mut stream);
                        let _ = stream.shutdown(Shutdown::Both);
                        rejected += 1;
                    }
                }
            }
            if idle {
                if last_progress.elapsed() > self.cfg.timeout {
                    let missing = slots.iter().position(Option::is_none);
                    return Err(transport(missing, None, "timed out waiting for HELLO"));
                }
                thread::sleep(POLL);
            }
        }
        let streams = slots.into_iter().map(|s| s.expect("all registered")).collect();
        Ok((streams, rejected))
    }
}

fn broadcast(streams: &[TcpStream], msg: &WireMessage) {
    let bytes = msg.encode();
    for s in streams {
        let mut s = s;
        let _ = io::Write::write_all(&mut s, &bytes);
    }
}

fn run_rounds(streams: &[TcpStream], cfg: &CoordinatorConfig) -> Result<u32, CommError> {
    let k = streams.len();
    let (tx, rx) = mpsc::channel::<(usize, Result<WireMessage, ReadError>)>();
    for (id, s) in streams.iter().enumerate() {
        let mut reader = s.try_clone().map_err(|e| transport(Some(id), None, e))?;
        reader
            .set_read_timeout(Some(cfg.timeout))
            .map_err(|e| transport(Some(id), None, e))?;
        let tx = tx.clone();
        thread::spawn(move || loop {
            let msg = WireMessage::read_from(&mut reader);
            let stop = msg.is_err() || matches!(msg, Ok(WireMessage { body: Body::Done, .. }));
            if tx.send((id, msg)).is_err() || stop {
                break;
            }
        });
    }
    drop(tx);

    let mut round: u32 = 1;
    let mut pending: Vec<Option<Vec<f64>>> = vec![None; k];
    let mut done = vec![false; k];

    let fail = |err: CommError| -> Result<u32, CommError> {
        broadcast(streams, &WireMessage::new(0, Body::Error(err.to_string())));
        Err(err)
    };

    loop {
        let (id, msg) = match rx.recv_timeout(cfg.timeout) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) => {
                let missing = (0..k).find(|&i| pending[i].is_none() && !done[i]);
                return fail(transport(missing, Some(round), "timed out waiting for contribution"));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return fail(transport(None, Some(round), "all worker connections closed"));
            }
        };
        match msg {
            Err(ReadError::Io(e)) => {
                let what = if e.kind() == ErrorKind::UnexpectedEof {
                    "peer disconnected".to_string()
                } else {
                    e.to_string()
                };
                return fail(transport(Some(id), Some(round), what));
            }
            Err(ReadError::Frame(e)) => {
                return fail(CommError::Protocol(format!("worker {id}: {e}")));
            }
            Ok(WireMessage {
                round: r,
                body: Body::Contribute(v),
            }) => {
                if done[id] {
                    return fail(CommError::Protocol(format!("worker {id} contributed after DONE")));
                }
                if r != round {
                    return fail(CommError::Protocol(format!(
                        "worker {id} sent round {r} while coordinator is at round {round}"
                    )));
                }
                if pending[id].is_some() {
                    return fail(CommError::Protocol(format!(
                        "worker {id} contributed twice to round {round}"
                    )));
                }
                if v.len() != cfg.dim {
                    return fail(CommError::Protocol(format!(
                        "worker {id} contributed {} values, expected {}",
                        v.len(),
                        cfg.dim
                    )));
                }
                pending[id] = Some(v);
            }
            Ok(WireMessage { body: Body::Done, .. }) => {
                if pending[id].is_some() {
                    return fail(CommError::Protocol(format!(
                        "worker {id} sent DONE with a contribution outstanding"
                    )));
                }
                done[id] = true;
            }
            Ok(WireMessage {
                body: Body::Error(text),
                ..
            }) => {
                return fail(CommError::Remote(format!("worker {id}: {text}")));
            }
            Ok(other) => {
                return fail(CommError::Protocol(format!(
                    "worker {id} sent unexpected {:?}",
                    other.msg_type()
                )));
            }
        }

        let contributed = pending.iter().filter(|p| p.is_some()).count();
        if contributed == k {
            let inputs: Vec<Vec<f64>> = pending.iter_mut().map(|p| p.take().expect("full")).collect();
            let sum = sum_in_order(&inputs)?;
            broadcast(streams, &WireMessage::new(round, Body::Result(sum)));
            round += 1;
        } else if done.iter().all(|&d| d) {
            return Ok(round - 1);
        } else if contributed > 0 && contributed + done.iter().filter(|&&d| d).count() == k {
            return fail(CommError::Protocol(format!(
                "round {round} cannot complete: some workers already sent DONE"
            )));
        }
    }
}

/// Worker-side endpoint of the TCP reduce.
pub struct TcpWorker {
    id: usize,
    workers: usize,
    stream: TcpStream,
    round: u32,
}

impl TcpWorker {
    /// Connects (retrying until `timeout` while the coordinator comes up) and
    /// sends HELLO.
    pub fn connect(
        addr: impl ToSocketAddrs,
        worker_id: usize,
        workers: usize,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, CommError> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|e| transport(Some(worker_id), None, e))?
            .collect();
        if addrs.is_empty() {
            return Err(transport(Some(worker_id), None, "address resolved to nothing"));
        }
        let start = Instant::now();
        let stream = loop {
            let attempt = addrs
                .iter()
                .find_map(|a| TcpStream::connect_timeout(a, timeout).ok());
            match attempt {
                Some(s) => break s,
                None if start.elapsed() < timeout => thread::sleep(Duration::from_millis(20)),
                None => {
                    return Err(transport(Some(worker_id), None, "could not connect to coordinator"))
                }
            }
        };
        stream
            .set_read_timeout(Some(timeout))
            .and_then(|_| stream.set_write_timeout(Some(timeout)))
            .and_then(|_| stream.set_nodelay(true))
            .map_err(|e| transport(Some(worker_id), None, e))?;
        let mut worker = TcpWorker {
            id: worker_id,
            workers,
            stream,
            round: 0,
        };
        let hello = WireMessage::new(
            0,
            Body::Hello {
                worker_id: worker_id as u32,
                dim: dim as u32,
            },
        );
        hello
            .write_to(&mut worker.stream)
            .map_err(|e| transport(Some(worker_id), Some(0), e))?;
        Ok(worker)
    }

    fn read_reply(&mut self) -> Result<WireMessage, CommError> {
        WireMessage::read_from(&mut self.stream).map_err(|e| match e {
            ReadError::Io(e) if e.kind() == ErrorKind::UnexpectedEof => {
                transport(Some(self.id), Some(self.round), "coordinator closed the connection")
            }
            ReadError::Io(e) => transport(Some(self.id), Some(self.round), e),
            ReadError::Frame(e) => e,
        })
    }
}

impl Collective for TcpWorker {
    fn worker_id(&self) -> usize {
        self.id
    }

    fn workers(&self) -> usize {
        self.workers
    }

    fn mode(&self) -> CommMode {
        CommMode::TcpWorker
    }

    fn round(&self) -> u32 {
        self.round
    }

    fn allreduce_sum(&mut self, local: &[f64]) -> Result<Vec<f64>, CommError> {
        let round = self.round + 1;
        let sent = WireMessage::new(round, Body::Contribute(local.to_vec())).write_to(&mut self.stream);
        // a rejected HELLO shows up here: prefer the coordinator's ERROR text
        let reply = self.read_reply();
        if let Err(e) = sent {
            return match reply {
                Ok(WireMessage {
                    body: Body::Error(text),
                    ..
                }) => Err(CommError::Remote(text)),
                _ => Err(transport(Some(self.id), Some(round), e)),
            };
        }
        match reply? {
            WireMessage {
                round: r,
                body: Body::Result(v),
            } => {
                if r != round {
                    return Err(CommError::Protocol(format!(
                        "RESULT for round {r} while waiting for round {round}"
                    )));
                }
                if v.len() != local.len() {
                    return Err(CommError::Protocol(format!(
                        "RESULT has {} values, expected {}",
                        v.len(),
                        local.len()
                    )));
                }
                self.round = round;
                Ok(v)
            }
            WireMessage {
                body: Body::Error(text),
                ..
            } => Err(CommError::Remote(text)),
            other => Err(CommError::Protocol(format!(
                "unexpected {:?} from coordinator",
                other.msg_type()
            ))),
        }
    }

    fn abort(&mut self, reason: &str) {
        let _ = WireMessage::new(self.round, Body::Error(reason.to_string())).write_to(&mut self.stream);
    }

    fn finish(&mut self) -> Result<(), CommError> {
        WireMessage::new(self.round, Body::Done)
            .write_to(&mut self.stream)
            .map_err(|e| transport(Some(self.id), Some(self.round), e))
    }
}
