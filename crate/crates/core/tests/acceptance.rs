//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute in a
//! fixed order and report in a fixed format.

mod common;

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::{golden_argmax, mean_and_se, objective_dd, random_problem, rng, synthetic, synthetic_signs};
use disdca::comm::wire::{Body, WireMessage};
use disdca::comm::{Coordinator, CoordinatorConfig, TcpWorker};
use disdca::data::{partition, Dataset, Partition, PartitionScheme};
use disdca::diagnostics::{theorem_bound, BoundParams, TraceRecord};
use disdca::model::{IncrementProblem, LossKind, LossModel};
use disdca::solver::{
    inner_update_practical, run_disdca, run_disdca_quiet, run_one_communication, run_sdca_reference,
    run_worker, ExecMode, Reference, ReferenceOptions, SolverConfig, Variant, WorkerState,
};
use disdca::trace::{CsvSink, NullSink};
use rand::{Rng, RngCore};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn reference(ds: &Dataset, loss: &LossModel, lambda: f64, gap_tol: f64) -> Arc<Reference> {
    let opts = ReferenceOptions {
        gap_tol,
        ..ReferenceOptions::default()
    };
    Arc::new(run_sdca_reference(ds, loss, lambda, &opts).expect("reference solve"))
}

fn rounds(trace: &[TraceRecord]) -> Vec<TraceRecord> {
    trace.iter().filter(|r| r.is_round()).copied().collect()
}

/// Orthogonal synthetic instance shared by the bound checks.
struct BoundInstance {
    ds: Dataset,
    part: Partition,
    loss: LossModel,
    lambda: f64,
    reference: Arc<Reference>,
}

fn bound_instance() -> BoundInstance {
    let ds = synthetic_signs(5, 5, 200, 1);
    let part = partition(&ds, 5, PartitionScheme::Block, 0).unwrap();
    let loss = LossModel::new(LossKind::SquaredHinge);
    let lambda = 1e-3;
    let reference = reference(&ds, &loss, lambda, 1e-12);
    BoundInstance {
        ds,
        part,
        loss,
        lambda,
        reference,
    }
}

/// Measured suboptimality is taken against the reference primal value, an
/// upper bound on the optimal dual; the initial suboptimality against the
/// reference dual value, a lower bound. Both choices only make the check
/// stricter.
fn check_bound(inst: &BoundInstance, variant: Variant, m: usize, rate_steps: impl Fn(usize) -> f64) -> Outcome {
    let k = 5;
    let t_max = 50;
    let cfg = SolverConfig::new(variant, k, m, t_max, inst.lambda, inst.loss);
    let res = run_disdca_quiet(&cfg, &inst.ds, &inst.part).map_err(|e| e.to_string())?;
    let recs = rounds(&res.trace);
    ensure(recs.len() == t_max + 1, || format!("{} round records", recs.len()))?;
    let eps0 = inst.reference.dual - recs[0].dual_obj;
    let params = BoundParams {
        smoothness: inst.loss.smoothness(),
        lambda: inst.lambda,
        n: inst.ds.len(),
        m,
        workers: k,
        epsilon0: eps0,
        variant,
    };
    let mut worst_margin = f64::INFINITY;
    for rec in &recs {
        let bound = rate_steps(rec.t) * eps0;
        let (lib_bound, _) = theorem_bound(&params, rec.t).map_err(|e| e.to_string())?;
        ensure((lib_bound - bound).abs() <= 1e-12 * bound.abs().max(1e-300), || {
            format!("t={}: library bound {lib_bound:e} vs {bound:e}", rec.t)
        })?;
        let measured = inst.reference.primal - rec.dual_obj;
        ensure(measured <= bound + 1e-9, || {
            format!("t={}: eps {measured:e} > bound {bound:e}", rec.t)
        })?;
        worst_margin = worst_margin.min(bound - measured);
    }
    Ok(format!(
        "eps0={eps0:.4e}, eps(50)={:.3e}, min slack {worst_margin:.3e}",
        inst.reference.primal - recs[t_max].dual_obj
    ))
}

fn criterion_1(inst: &BoundInstance) -> Outcome {
    let start = Instant::now();
    let c = inst.loss.smoothness() / inst.lambda;
    let (n, k, m) = (inst.ds.len() as f64, 5.0, 10);
    let out = check_bound(inst, Variant::Orthogonal, m, |t| {
        (1.0 - k / (c + n)).powf((m * t) as f64)
    })?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("runtime {secs:.1}s"))?;
    Ok(format!("{out}, {secs:.2}s"))
}

fn criterion_2(inst: &BoundInstance) -> Outcome {
    let c = inst.loss.smoothness() / inst.lambda;
    let (n, k, m) = (inst.ds.len() as f64, 5.0, 10);
    check_bound(inst, Variant::Naive, m, |t| {
        (1.0 - 1.0 / (c + n / (m as f64 * k))).powf(t as f64)
    })
}

/// Maximizer by grid and golden section over the conjugate domain.
fn brute_force(loss: &LossModel, p: &IncrementProblem) -> f64 {
    let y = p.label;
    let (lo, hi) = match loss.kind() {
        LossKind::LeastSquares => (-10.0, 10.0),
        LossKind::SquaredHinge => {
            if y > 0.0 {
                ((-p.alpha).max(-10.0), 10.0)
            } else {
                (-10.0, (-p.alpha).min(10.0))
            }
        }
        LossKind::Logistic => {
            let (a, b) = (-p.alpha, y - p.alpha);
            (a.min(b), a.max(b))
        }
    };
    golden_argmax(|d| objective_dd(loss.kind(), loss.sign_constrained(), p, d), lo, hi, 1e-2)
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    let mut r = rng(3);
    for kind in [LossKind::SquaredHinge, LossKind::Logistic, LossKind::LeastSquares] {
        let loss = LossModel::new(kind);
        for i in 0..1000 {
            let p = random_problem(kind, &mut r);
            let got = loss.dual_increment(&p).map_err(|e| e.to_string())?;
            let want = brute_force(&loss, &p);
            let err = (got - want).abs();
            ensure(err <= 1e-8, || format!("{kind} problem {i}: {got} vs {want} ({p:?})"))?;
            worst = worst.max(err);
        }
    }

    // closed form along an actual local sequence; rows are signed unit
    // vectors so ‖x‖² = 1 exactly
    let dim = 7;
    let n = 60;
    let mut g = rng(33);
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| vec![(i % dim, if g.gen_bool(0.5) { 1.0 } else { -1.0 })])
        .collect();
    let labels: Vec<f64> = (0..n).map(|_| if g.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let ds = Dataset::from_rows(dim, rows, labels).map_err(|e| e.to_string())?;
    let k = 4;
    let part = partition(&ds, k, PartitionScheme::Random, 5).unwrap();
    let mut steps = 0;
    let mut clipped = 0;
    for constrained in [false, true] {
        let loss = LossModel::new(LossKind::SquaredHinge).with_sign_constraint(constrained);
        let lambda = 0.05;
        let cfg = SolverConfig::new(Variant::Practical, k, 1, 1, lambda, loss);
        let lambda_n = lambda * n as f64;
        for w in 0..k {
            let mut ws = WorkerState::new(w, part.shard(w).to_vec(), dim, 9);
            for _ in 0..200 {
                let pos = g.gen_range(0..ws.shard.len());
                let i = ws.shard[pos];
                let row = ds.row(i);
                let y = ds.label(i);
                let alpha = ws.alpha[pos];
                let margin = row.dot(&ws.u);
                let expect = lambda_n / (2.0 * k as f64 + lambda_n) * (2.0 * (y - margin) - alpha);
                let got = inner_update_practical(&mut ws, &ds, pos, &cfg).map_err(|e| e.to_string())?;
                if constrained && y * (alpha + expect) < 0.0 {
                    clipped += 1;
                    ensure(got == -alpha, || format!("clipped step {got} vs {}", -alpha))?;
                } else {
                    ensure(got.to_bits() == expect.to_bits(), || {
                        format!("closed form {expect:e} vs step {got:e}")
                    })?;
                }
                steps += 1;
            }
        }
    }
    Ok(format!(
        "3000 problems, max |err| {worst:.2e}; closed form bitwise on {} steps ({clipped} at the domain edge)",
        steps
    ))
}

fn criterion_4() -> Outcome {
    let ds_sh = synthetic_signs(5, 5, 100, 4);
    let mut traces = 0;
    let mut min_gap = f64::INFINITY;
    let mut min_step = f64::INFINITY;
    for kind in [LossKind::SquaredHinge, LossKind::Logistic] {
        let loss = LossModel::new(kind);
        for variant in [Variant::Naive, Variant::Practical, Variant::Orthogonal] {
            for seed in 0..10u64 {
                let scheme = if variant == Variant::Orthogonal {
                    PartitionScheme::Block
                } else {
                    PartitionScheme::Random
                };
                let part = partition(&ds_sh, 5, scheme, seed).unwrap();
                let mut cfg = SolverConfig::new(variant, 5, 20, 20, 1e-2, loss);
                cfg.seed = seed;
                let res = run_disdca_quiet(&cfg, &ds_sh, &part).map_err(|e| e.to_string())?;
                let recs = rounds(&res.trace);
                for pair in recs.windows(2) {
                    let step = pair[1].dual_obj - pair[0].dual_obj;
                    min_step = min_step.min(step);
                    ensure(step >= -1e-12, || {
                        format!("{kind}/{variant}/seed {seed}: D fell by {:e} at t={}", -step, pair[1].t)
                    })?;
                }
                for rec in &recs {
                    min_gap = min_gap.min(rec.gap);
                    ensure(rec.gap >= -1e-10, || {
                        format!("{kind}/{variant}/seed {seed}: gap {:e} at t={}", rec.gap, rec.t)
                    })?;
                }
                traces += 1;
            }
        }
    }
    Ok(format!("{traces} traces, min dual step {min_step:.2e}, min gap {min_gap:.2e}"))
}

fn criterion_5(inst: &BoundInstance) -> Outcome {
    let (k, m, t_max) = (5, 10, 10);
    let n = inst.ds.len() as f64;
    let c = inst.loss.smoothness() / inst.lambda;
    let s = n / (c + n);
    let coeff = s * k as f64 / n;
    let mut per_seed = Vec::new();
    let mut mean_gain = 0.0;
    for seed in 0..20u64 {
        let mut cfg = SolverConfig::new(Variant::Orthogonal, k, m, t_max, inst.lambda, inst.loss);
        cfg.seed = seed;
        cfg.lockstep = true;
        let res = run_disdca_quiet(&cfg, &inst.ds, &inst.part).map_err(|e| e.to_string())?;
        let mut diffs = Vec::new();
        let mut gains = Vec::new();
        for t in 1..=t_max {
            let mut prev = *res
                .trace
                .iter()
                .find(|r| r.is_round() && r.t == t - 1)
                .ok_or("missing round record")?;
            for rec in res.trace.iter().filter(|r| r.t == t && !r.is_round()) {
                let gain = rec.dual_obj - prev.dual_obj;
                diffs.push(gain - coeff * prev.gap);
                gains.push(gain);
                prev = *rec;
            }
        }
        ensure(diffs.len() == m * t_max, || format!("{} step records", diffs.len()))?;
        per_seed.push(diffs.iter().sum::<f64>() / diffs.len() as f64);
        mean_gain += gains.iter().sum::<f64>() / gains.len() as f64 / 20.0;
    }
    let (mean, se) = mean_and_se(&per_seed);
    ensure(mean >= -3.0 * se, || format!("mean excess {mean:e} < -3·SE ({se:e})"))?;
    Ok(format!("mean gain {mean_gain:.3e}, mean excess over bound {mean:.3e} (SE {se:.1e})"))
}

fn criterion_6() -> Outcome {
    let ds = synthetic_signs(5, 5, 200, 6);
    let loss = LossModel::new(LossKind::SquaredHinge);
    let lambda = 1e-3;
    let (k, m, t_max) = (5, 50, 10);
    let rf = reference(&ds, &loss, lambda, 1e-12);
    let n = ds.len();
    let c = loss.smoothness() / lambda;
    let mu = 1.0 - 1.0 / (c + n as f64 / k as f64);
    let mu_m = mu.powi(m as i32);
    let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); t_max];
    for seed in 0..20u64 {
        let part = partition(&ds, k, PartitionScheme::Random, 100 + seed).unwrap();
        let mut cfg = SolverConfig::new(Variant::Practical, k, m, t_max, lambda, loss);
        cfg.seed = seed;
        cfg.lockstep = true;
        cfg.step_stride = m;
        cfg.reference = Some(rf.clone());
        let res = run_disdca_quiet(&cfg, &ds, &part).map_err(|e| e.to_string())?;
        for t in 1..=t_max {
            let start = res.trace.iter().find(|r| r.is_round() && r.t == t - 1).ok_or("missing round")?;
            let end = res
                .trace
                .iter()
                .find(|r| r.t == t && r.j == Some(m))
                .ok_or("missing step record")?;
            let (e0, em, s) = (start.epsilon.unwrap(), end.epsilon.unwrap(), end.s.unwrap());
            diffs[t - 1].push(mu_m * e0 + s - em);
        }
    }
    let slack = rf.gap;
    let mut tightest = f64::INFINITY;
    for (t, d) in diffs.iter().enumerate() {
        let (mean, se) = mean_and_se(d);
        ensure(mean + 3.0 * se + slack >= 0.0, || {
            format!("round {}: mean excess {mean:e} below -3·SE ({se:e})", t + 1)
        })?;
        tightest = tightest.min(mean);
    }
    Ok(format!("mu^m={mu_m:.5}, smallest mean excess {tightest:.3e}"))
}

fn criterion_7() -> Outcome {
    let ds = synthetic(10, 5, 200, 7);
    let loss = LossModel::new(LossKind::LeastSquares);
    let lambda = 1e-3;
    let rf = reference(&ds, &loss, lambda, 1e-12);
    let mut lines = Vec::new();
    for k in [5, 10] {
        let mut gaps = [0.0; 2];
        let mut dists = [0.0; 2];
        for (slot, (scheme, variant)) in [
            (PartitionScheme::Block, Variant::Orthogonal),
            (PartitionScheme::Random, Variant::Practical),
        ]
        .into_iter()
        .enumerate()
        {
            let part = partition(&ds, k, scheme, 70).unwrap();
            let mut cfg = SolverConfig::new(variant, k, 1, 1, lambda, loss);
            cfg.local_gap_tol = 1e-6;
            cfg.reference = Some(rf.clone());
            let res = run_one_communication(&cfg, &ds, &part).map_err(|e| e.to_string())?;
            ensure(res.locally_converged, || format!("K={k} {scheme}: pass cap reached"))?;
            let last = res.trace.last().unwrap();
            gaps[slot] = last.gap;
            dists[slot] = last.dist_to_opt.unwrap();
        }
        ensure(gaps[0] <= 1e-5, || format!("K={k}: block gap {:e}", gaps[0]))?;
        ensure(gaps[1] >= 10.0 * gaps[0], || {
            format!("K={k}: random gap {:e} < 10x block {:e}", gaps[1], gaps[0])
        })?;
        ensure(dists[1] > dists[0], || {
            format!("K={k}: random dist {:e} <= block {:e}", dists[1], dists[0])
        })?;
        lines.push(format!(
            "K={k} gap {:.1e}/{:.1e} dist {:.1e}/{:.1e}",
            gaps[0], gaps[1], dists[0], dists[1]
        ));
    }
    Ok(format!("block/random: {}", lines.join("; ")))
}

fn criterion_8() -> Outcome {
    let ds = synthetic_signs(10, 5, 200, 8);
    let loss = LossModel::new(LossKind::SquaredHinge);
    let lambda = 1e-5;
    let (k, t_max) = (5, 50);
    let rf = reference(&ds, &loss, lambda, 1e-10);
    let part = partition(&ds, k, PartitionScheme::Random, 80).unwrap();
    let run = |variant: Variant, m: usize| -> Result<TraceRecord, String> {
        let mut cfg = SolverConfig::new(variant, k, m, t_max, lambda, loss);
        cfg.seed = 8;
        cfg.reference = Some(rf.clone());
        let res = run_disdca_quiet(&cfg, &ds, &part).map_err(|e| e.to_string())?;
        Ok(*res.trace.last().unwrap())
    };
    let naive = run(Variant::Naive, 100)?;
    let practical = run(Variant::Practical, 100)?;
    ensure(practical.gap <= 0.5 * naive.gap, || {
        format!("practical gap {:e} vs naive {:e}", practical.gap, naive.gap)
    })?;
    let mut eps = Vec::new();
    for m in [10, 100, 1000] {
        eps.push(run(Variant::Practical, m)?.epsilon.unwrap());
    }
    ensure(eps[0] > eps[1] && eps[1] > eps[2], || format!("eps over m: {eps:?}"))?;
    Ok(format!(
        "gap practical {:.3e} vs naive {:.3e}; eps at m=10,100,1000: {:.3e}, {:.3e}, {:.3e}",
        practical.gap, naive.gap, eps[0], eps[1], eps[2]
    ))
}

fn criterion_9() -> Outcome {
    let ds = synthetic(5, 5, 200, 9);
    let loss = LossModel::new(LossKind::LeastSquares);
    let lambda = 1e-2;
    let k = 5;
    let m = 20_000;
    let rf = reference(&ds, &loss, lambda, 1e-12);
    let part = partition(&ds, k, PartitionScheme::Random, 90).unwrap();
    let mut cfg = SolverConfig::new(Variant::Practical, k, m, 1, lambda, loss);
    cfg.lockstep = true;
    cfg.step_stride = 100;
    cfg.reference = Some(rf.clone());
    let res = run_disdca_quiet(&cfg, &ds, &part).map_err(|e| e.to_string())?;
    let steps: Vec<&TraceRecord> = res.trace.iter().filter(|r| !r.is_round()).collect();
    let at = |j: usize| steps.iter().find(|r| r.j == Some(j)).copied().ok_or(format!("no record at {j}"));
    let (half, end) = (at(m / 2)?, at(m)?);
    let (eps_half, eps_end) = (half.epsilon.unwrap(), end.epsilon.unwrap());
    // ε settles deterministically once every shard is solved
    ensure((eps_end - eps_half).abs() <= 1e-6 * eps_end.abs(), || {
        format!("eps still moving: {eps_half:e} -> {eps_end:e}")
    })?;
    // S keeps a sampling jitter from R, so its level is compared across the
    // two quarters of the second half
    let window_mean = |lo: usize, hi: usize| {
        let v: Vec<f64> = steps
            .iter()
            .filter(|r| r.j.is_some_and(|j| j > lo && j <= hi))
            .map(|r| r.s.unwrap())
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        (mean, min)
    };
    let (s_third, min_third) = window_mean(m / 2, 3 * m / 4);
    let (s_fourth, min_fourth) = window_mean(3 * m / 4, m);
    let s_plateau = 0.5 * (s_third + s_fourth);
    let s_min = min_third.min(min_fourth);
    ensure((s_third - s_fourth).abs() <= 0.02 * s_plateau.abs(), || {
        format!("S level moved from {s_third:e} to {s_fourth:e}")
    })?;
    ensure(eps_end > 0.0, || format!("eps plateau {eps_end:e} not positive"))?;
    ensure(eps_end <= s_plateau + 1e-9, || format!("eps plateau {eps_end:e} > S plateau {s_plateau:e}"))?;
    Ok(format!(
        "eps plateau {eps_end:.4e}, S plateau {s_plateau:.4e} (quarters {s_third:.4e}, {s_fourth:.4e}; min {s_min:.4e})"
    ))
}

fn simulated_csv(cfg: &SolverConfig, ds: &Dataset, part: &Partition) -> Result<Vec<u8>, String> {
    let mut sink = CsvSink::new(Vec::new(), &[("K", cfg.workers.to_string())]).unwrap();
    run_disdca(cfg, ds, part, ExecMode::Simulated, &mut sink).map_err(|e| e.to_string())?;
    Ok(sink.into_inner().unwrap())
}

fn tcp_csv(cfg: &SolverConfig, ds: &Dataset, part: &Partition) -> Result<Vec<u8>, String> {
    let k = cfg.workers;
    let width = ds.dim() + 2;
    let coord = Coordinator::bind("127.0.0.1:0", CoordinatorConfig::new(k, width)).map_err(|e| e.to_string())?;
    let addr = coord.local_addr().unwrap();
    let server = thread::spawn(move || coord.serve());
    let results: Vec<Result<Option<Vec<u8>>, String>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..k)
            .rev()
            .map(|id| {
                scope.spawn(move || {
                    let mut comm = TcpWorker::connect(addr, id, k, width, Duration::from_secs(10))
                        .map_err(|e| e.to_string())?;
                    if id == 0 {
                        let mut sink = CsvSink::new(Vec::new(), &[("K", k.to_string())]).unwrap();
                        run_worker(cfg, ds, part, &mut comm, &mut sink).map_err(|e| e.to_string())?;
                        Ok(Some(sink.into_inner().unwrap()))
                    } else {
                        run_worker(cfg, ds, part, &mut comm, &mut NullSink).map_err(|e| e.to_string())?;
                        Ok(None)
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let report = server.join().unwrap().map_err(|e| e.to_string())?;
    ensure(report.rounds as usize == cfg.rounds + 1, || format!("{} reduce rounds", report.rounds))?;
    let mut csv = None;
    for r in results {
        if let Some(bytes) = r? {
            csv = Some(bytes);
        }
    }
    csv.ok_or_else(|| "worker 0 wrote nothing".into())
}

/// Random frame: raw noise, a valid header over a mangled body, or a
/// truncated valid frame.
fn fuzz_frame(g: &mut impl RngCore, width: usize) -> Vec<u8> {
    let mut noise = |len: usize| {
        let mut v = vec![0u8; len];
        g.fill_bytes(&mut v);
        v
    };
    let choice = noise(1)[0] % 4;
    let frame = match choice {
        0 => {
            let len = (noise(1)[0] as usize) % 64;
            noise(len)
        }
        1 => {
            let mut f = b"DDCA\x01".to_vec();
            let rest = noise(13);
            f.extend(&rest);
            let body_len = (rest[5] as usize) % 40;
            f.extend(noise(body_len));
            f
        }
        2 => {
            let body = match noise(1)[0] % 4 {
                0 => Body::Hello {
                    worker_id: u32::from_le_bytes(noise(4).try_into().unwrap()),
                    dim: u32::from_le_bytes(noise(4).try_into().unwrap()),
                },
                1 => Body::Contribute(vec![1.5; width]),
                2 => Body::Done,
                _ => Body::Error("fuzz".into()),
            };
            let mut f = WireMessage::new(noise(1)[0] as u32, body).encode();
            let cut = (noise(1)[0] as usize) % (f.len() + 1);
            if noise(1)[0] % 2 == 0 {
                f.truncate(cut);
            } else if !f.is_empty() {
                let idx = cut % f.len();
                f[idx] ^= noise(1)[0] | 1;
            }
            f
        }
        _ => {
            let mut f = b"GET / HTTP/1.1\r\nHost: x\r\n\r\n".to_vec();
            f.extend(noise(8));
            f
        }
    };
    // a frame that happens to be a well-formed registration is not noise
    if let Ok((WireMessage { body: Body::Hello { .. }, .. }, _)) = WireMessage::decode(&frame) {
        return vec![0xff; 3];
    }
    frame
}

fn fuzz_coordinator(frames: usize) -> Result<String, String> {
    let ds = synthetic(2, 2, 10, 10);
    let part = partition(&ds, 2, PartitionScheme::Random, 1).unwrap();
    let loss = LossModel::new(LossKind::LeastSquares);
    let cfg = SolverConfig::new(Variant::Practical, 2, 5, 3, 0.1, loss);
    let width = ds.dim() + 2;
    let mut ccfg = CoordinatorConfig::new(2, width);
    ccfg.timeout = Duration::from_secs(60);
    let coord = Coordinator::bind("127.0.0.1:0", ccfg).map_err(|e| e.to_string())?;
    let addr: SocketAddr = coord.local_addr().unwrap();
    let server = thread::spawn(move || coord.serve());

    let clients = 8;
    let replies: usize = thread::scope(|scope| {
        let handles: Vec<_> = (0..clients)
            .map(|c| {
                scope.spawn(move || {
                    let mut g = rng(1000 + c as u64);
                    let mut answered = 0;
                    for _ in (c..frames).step_by(clients) {
                        let frame = fuzz_frame(&mut g, width);
                        let Ok(mut s) = TcpStream::connect(addr) else { continue };
                        let _ = s.set_read_timeout(Some(Duration::from_secs(30)));
                        let _ = s.write_all(&frame);
                        let _ = s.shutdown(Shutdown::Write);
                        let mut buf = Vec::new();
                        let _ = s.read_to_end(&mut buf);
                        if !buf.is_empty() {
                            answered += 1;
                        }
                    }
                    answered
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    ensure(!server.is_finished(), || "coordinator exited during fuzzing".into())?;

    // the session still completes for real workers
    let outcomes: Vec<Result<(), String>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..2)
            .map(|id| {
                let (cfg, ds, part) = (&cfg, &ds, &part);
                scope.spawn(move || {
                    let mut comm = TcpWorker::connect(addr, id, 2, width, Duration::from_secs(10))
                        .map_err(|e| e.to_string())?;
                    run_worker(cfg, ds, part, &mut comm, &mut NullSink)
                        .map(|_| ())
                        .map_err(|e| e.to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for o in outcomes {
        o?;
    }
    let report = server
        .join()
        .map_err(|_| "coordinator panicked".to_string())?
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{frames} fuzz frames, {} rejected with a reply ({replies} replies seen), session completed",
        report.rejected
    ))
}

fn criterion_10() -> Outcome {
    let mut notes = Vec::new();
    for k in [2, 5] {
        let ds = synthetic_signs(5, 4, 40, 10 + k as u64);
        let part = partition(&ds, k, PartitionScheme::Random, 3).unwrap();
        for (variant, loss) in [
            (Variant::Practical, LossKind::SquaredHinge),
            (Variant::Naive, LossKind::Logistic),
        ] {
            let loss = LossModel::new(loss);
            let mut cfg = SolverConfig::new(variant, k, 15, 8, 1e-2, loss);
            cfg.seed = 42;
            let simulated = simulated_csv(&cfg, &ds, &part)?;
            let tcp = tcp_csv(&cfg, &ds, &part)?;
            ensure(simulated == tcp, || format!("K={k} {variant}: TCP trace differs from in-process trace"))?;
            notes.push(format!("K={k} {variant} {} bytes", tcp.len()));
        }
    }
    let fuzz = fuzz_coordinator(10_000)?;
    Ok(format!("{}; {fuzz}", notes.join(", ")))
}

fn criterion_11() -> Outcome {
    let mut worst_fd = 0.0f64;
    let mut worst_fy = 0.0f64;
    for kind in [LossKind::SquaredHinge, LossKind::Logistic, LossKind::LeastSquares] {
        let loss = LossModel::new(kind);
        let labels: &[f64] = if kind.is_classification() { &[-1.0, 1.0] } else { &[-1.3, 0.0, 0.7] };
        for &y in labels {
            for i in 0..=200 {
                let z = -5.0 + 0.05 * i as f64 + 1.234e-3;
                let h = 1e-6 * z.abs().max(1.0);
                let fd = (loss.value(z + h, y) - loss.value(z - h, y)) / (2.0 * h);
                let g = loss.grad(z, y);
                let rel = (fd - g).abs() / g.abs().max(1.0);
                worst_fd = worst_fd.max(rel);
                ensure(rel <= 1e-6, || format!("{kind} z={z} y={y}: grad {g} vs fd {fd}"))?;

                // equality at the conjugate pair, inequality elsewhere
                let a = -g;
                let eq = loss.value(z, y) + loss.conjugate_neg(a, y).map_err(|e| e.to_string())? + a * z;
                worst_fy = worst_fy.max(eq.abs());
                ensure(eq.abs() <= 1e-9, || format!("{kind} z={z} y={y}: Fenchel-Young gap {eq:e}"))?;
                for q in 0..=20 {
                    let b = y.signum() * 0.05 * q as f64 * if kind == LossKind::LeastSquares { 4.0 } else { 1.0 };
                    let ineq = loss.value(z, y) + loss.conjugate_neg(b, y).map_err(|e| e.to_string())? + b * z;
                    ensure(ineq >= -1e-9, || format!("{kind} z={z} a={b}: Fenchel-Young violated by {ineq:e}"))?;
                }
            }
        }
    }

    let ds = synthetic_signs(5, 4, 40, 11);
    let lambda = 1e-2;
    let to_primal = 1.0 / (lambda * ds.len() as f64);
    let mut worst_reduce = 0.0f64;
    for (variant, scheme) in [
        (Variant::Naive, PartitionScheme::Random),
        (Variant::Practical, PartitionScheme::Random),
        (Variant::Orthogonal, PartitionScheme::Block),
    ] {
        let part = partition(&ds, 5, scheme, 2).unwrap();
        for t in 1..=10 {
            let mut cfg = SolverConfig::new(variant, 5, 20, t, lambda, LossModel::new(LossKind::SquaredHinge));
            cfg.seed = 5;
            let res = run_disdca_quiet(&cfg, &ds, &part).map_err(|e| e.to_string())?;
            let expect = ds.weighted_sum(&res.alpha, to_primal);
            let err = res.w.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_reduce = worst_reduce.max(err);
            ensure(err <= 1e-12, || format!("{variant} round {t}: reduce off by {err:e}"))?;
        }
    }
    Ok(format!(
        "max fd rel err {worst_fd:.2e}, max Fenchel-Young residual {worst_fy:.2e}, max reduce err {worst_reduce:.2e}"
    ))
}

fn main() -> ExitCode {
    // the shared instance is built lazily so a filter on other criteria
    // does not pay for its reference solve
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |i: usize| filter.is_empty() || filter.contains(&i);
    let mut inst: Option<BoundInstance> = None;

    let mut failed = 0;
    for i in 1..=11 {
        if !wanted(i) {
            continue;
        }
        let start = Instant::now();
        let outcome = match i {
            1 => criterion_1(inst.get_or_insert_with(bound_instance)),
            2 => criterion_2(inst.get_or_insert_with(bound_instance)),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(inst.get_or_insert_with(bound_instance)),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            10 => criterion_10(),
            _ => criterion_11(),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {i}: PASS ({detail}) [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {i}: FAIL ({why}) [{secs:.1}s]");
            }
        }
        let _ = std::io::stdout().flush();
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
