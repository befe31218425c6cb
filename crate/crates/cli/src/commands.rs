use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use disdca::comm::{Coordinator, CoordinatorConfig, TcpWorker};
use disdca::data::{
    generate_synthetic, load_libsvm, orthogonality_residual, partition, save_libsvm, Dataset, Partition,
    PartitionScheme, SyntheticSpec,
};
use disdca::diagnostics::{epsilon_fit, theorem_bound, BoundParams};
use disdca::solver::{
    run_disdca, run_one_communication, run_sdca_reference, run_worker, ExecMode, Reference, ReferenceOptions,
    SolverConfig, Variant, ORTHOGONALITY_TOL,
};
use disdca::trace::{parse_csv, CsvSink, NullSink};

use crate::config::{CommModeSetting, ExperimentConfig};
use crate::error::CliError;

/// Width of the reduce vector for `dim` features: the model plus the two
/// objective partial sums.
pub fn wire_width(dim: usize) -> usize {
    dim + 2
}

fn synthetic_spec(cfg: &ExperimentConfig) -> Result<SyntheticSpec, CliError> {
    Ok(SyntheticSpec::new(
        cfg.parse("data.synthetic.groups")?,
        cfg.parse("data.synthetic.group_dim")?,
        cfg.parse("data.synthetic.points")?,
        cfg.parse("data.synthetic.seed")?,
    ))
}

/// The configured dataset. Synthetic data gets `sign(y − median)` labels
/// under a classification loss.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let path = cfg.get("data.path");
    if !path.is_empty() {
        return Ok(load_libsvm(path)?);
    }
    let ds = generate_synthetic(&synthetic_spec(cfg)?).map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.loss()?.kind().is_classification() {
        let labels = ds.median_sign_labels();
        Ok(ds.with_labels(labels)?)
    } else {
        Ok(ds)
    }
}

fn solver_config(
    cfg: &ExperimentConfig,
    variant: Variant,
    workers: usize,
    m: usize,
    reference: Option<Arc<Reference>>,
) -> Result<SolverConfig, CliError> {
    let mut sc = SolverConfig::new(variant, workers, m, cfg.parse("T")?, cfg.lambda()?, cfg.loss()?);
    sc.seed = cfg.parse("seed")?;
    sc.sampling = cfg.sampling()?;
    sc.local_gap_tol = cfg.parse("local_gap_tol")?;
    sc.max_local_epochs = cfg.parse("max_local_epochs")?;
    sc.lockstep = cfg.bool("diagnostics.lockstep")?;
    sc.step_stride = cfg.parse("diagnostics.step_stride")?;
    sc.reference = reference;
    Ok(sc)
}

fn reference(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Arc<Reference>, CliError> {
    let opts = ReferenceOptions {
        gap_tol: cfg.parse("diagnostics.reference_tol")?,
        ..ReferenceOptions::default()
    };
    Ok(Arc::new(run_sdca_reference(ds, &cfg.loss()?, cfg.lambda()?, &opts)?))
}

fn maybe_reference(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Option<Arc<Reference>>, CliError> {
    if cfg.bool("diagnostics.enabled")? {
        reference(cfg, ds).map(Some)
    } else {
        Ok(None)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

/// `trace.csv` becomes `trace_m100.csv` when sweeping `m`.
pub fn sweep_path(base: &str, m: usize, sweeping: bool) -> PathBuf {
    if !sweeping {
        return PathBuf::from(base);
    }
    let p = Path::new(base);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let name = match p.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_m{m}.{ext}"),
        None => format!("{stem}_m{m}"),
    };
    p.with_file_name(name)
}

fn finish_csv(sink: CsvSink<BufWriter<File>>) -> Result<(), CliError> {
    let mut w = sink.into_inner()?;
    w.flush()?;
    Ok(())
}

pub fn solve(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mode = match cfg.comm_mode()? {
        CommModeSetting::Simulated => ExecMode::Simulated,
        CommModeSetting::Threaded => ExecMode::Threaded,
        CommModeSetting::Tcp => {
            return Err(CliError::Config(
                "comm.mode=tcp runs through the coordinator and worker subcommands".into(),
            ))
        }
    };
    let ds = load_dataset(cfg)?;
    let workers: usize = cfg.single("K")?;
    let part = partition(&ds, workers, cfg.scheme()?, cfg.parse("partition.seed")?)?;
    let reference = maybe_reference(cfg, &ds)?;
    let ms: Vec<usize> = cfg.list("m")?;
    let base = cfg.output_path("trace.csv");
    for &m in &ms {
        let sc = solver_config(cfg, cfg.variant()?, workers, m, reference.clone())?;
        let path = sweep_path(&base, m, ms.len() > 1);
        let mut sink = CsvSink::new(create(&path)?, &cfg.header(&[("m", m.to_string())]))?;
        let res = run_disdca(&sc, &ds, &part, mode, &mut sink)?;
        finish_csv(sink)?;
        let last = res.trace.last().expect("trace has a final record");
        println!(
            "m={m}: {} rounds, dual {:e}, primal {:e}, gap {:e} -> {}",
            res.rounds_run,
            last.dual_obj,
            last.primal_obj,
            last.gap,
            path.display()
        );
    }
    Ok(())
}

/// Block shards run the orthogonal update when the data really is orthogonal
/// across them; everything else runs the practical update.
fn one_comm_variant(ds: &Dataset, part: &Partition) -> Variant {
    if part.scheme() == PartitionScheme::Block && orthogonality_residual(ds, part).max_abs_dot <= ORTHOGONALITY_TOL {
        Variant::Orthogonal
    } else {
        Variant::Practical
    }
}

pub fn one_comm(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let ks: Vec<usize> = cfg.list("K")?;
    let schemes: Vec<PartitionScheme> = cfg.list("one_comm.schemes")?;
    let rf = reference(cfg, &ds)?;
    let path = PathBuf::from(cfg.output_path("one_comm.csv"));
    let mut out = create(&path)?;
    for (k, v) in cfg.header(&[]) {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "K,scheme,dist_to_opt,gap")?;
    for &k in &ks {
        for &scheme in &schemes {
            let part = partition(&ds, k, scheme, cfg.parse("partition.seed")?)?;
            let variant = one_comm_variant(&ds, &part);
            let sc = solver_config(cfg, variant, k, 1, Some(rf.clone()))?;
            let res = run_one_communication(&sc, &ds, &part)?;
            if !res.locally_converged {
                eprintln!("warning: K={k} {scheme}: a worker stopped at max_local_epochs");
            }
            let last = res.trace.last().expect("one-communication trace has two records");
            let dist = last.dist_to_opt.expect("reference attached");
            writeln!(out, "{k},{scheme},{dist:e},{:e}", last.gap)?;
            println!("K={k} {scheme} ({variant}): dist {dist:e}, gap {:e}", last.gap);
        }
    }
    out.flush()?;
    println!("-> {}", path.display());
    Ok(())
}

pub fn check_bounds(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let variant = cfg.variant()?;
    if variant == Variant::Practical {
        return Err(CliError::Config(
            "no closed-form bound for the practical variant; use naive or orthogonal".into(),
        ));
    }
    let ds = load_dataset(cfg)?;
    let workers: usize = cfg.single("K")?;
    let m: usize = cfg.single("m")?;
    let part = partition(&ds, workers, cfg.scheme()?, cfg.parse("partition.seed")?)?;
    let rf = reference(cfg, &ds)?;
    let mut sc = solver_config(cfg, variant, workers, m, Some(rf.clone()))?;
    sc.lockstep = false;
    let res = run_disdca(&sc, &ds, &part, ExecMode::Simulated, &mut NullSink)?;
    let rounds: Vec<_> = res.trace.iter().filter(|r| r.is_round()).collect();
    let eps0 = rounds[0].epsilon.expect("reference attached");
    let params = BoundParams {
        smoothness: sc.loss.smoothness(),
        lambda: sc.lambda,
        n: ds.len(),
        m,
        workers,
        epsilon0: eps0,
        variant,
    };

    let path = PathBuf::from(cfg.output_path("bounds.csv"));
    let mut out = create(&path)?;
    for (k, v) in cfg.header(&[]) {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "t,epsilon,bound,gap,gap_bound,ok")?;
    let slack = rf.gap;
    let mut violations = Vec::new();
    for rec in &rounds {
        let (bound, gap_bound) = theorem_bound(&params, rec.t).map_err(|e| CliError::Config(e.to_string()))?;
        let eps = rec.epsilon.expect("reference attached");
        let ok = eps <= bound + slack;
        if !ok {
            violations.push(rec.t);
        }
        writeln!(out, "{},{eps:e},{bound:e},{:e},{gap_bound:e},{ok}", rec.t, rec.gap)?;
    }
    out.flush()?;
    println!(
        "{} rounds checked against the {variant} bound (reference gap {slack:e}) -> {}",
        rounds.len(),
        path.display()
    );
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Bound(format!("measured epsilon above the bound at rounds {violations:?}")))
    }
}

pub fn synth(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if !cfg.get("data.path").is_empty() {
        return Err(CliError::Config("synth generates data; unset data.path".into()));
    }
    let ds = load_dataset(cfg)?;
    let path = cfg.output_path("synthetic.libsvm");
    save_libsvm(&ds, &path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    println!("{} examples, {} features -> {path}", ds.len(), ds.dim());
    Ok(())
}

pub fn coordinator(listen: &str, workers: usize, dim: usize, timeout: Duration) -> Result<(), CliError> {
    let mut cc = CoordinatorConfig::new(workers, wire_width(dim));
    cc.timeout = timeout;
    let report = Coordinator::bind(listen, cc)?.serve()?;
    println!(
        "session complete: {} reduce rounds, {} connections rejected",
        report.rounds, report.rejected
    );
    Ok(())
}

pub fn worker(cfg: &ExperimentConfig, connect: Option<&str>, worker_id: usize) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let workers: usize = cfg.single("K")?;
    let m: usize = cfg.single("m")?;
    let part = partition(&ds, workers, cfg.scheme()?, cfg.parse("partition.seed")?)?;
    let reference = maybe_reference(cfg, &ds)?;
    let mut sc = solver_config(cfg, cfg.variant()?, workers, m, reference)?;
    sc.lockstep = false;
    let addr = connect.unwrap_or(cfg.get("comm.connect")).to_string();
    let timeout = Duration::from_secs(cfg.parse("comm.timeout_secs")?);
    let mut comm = TcpWorker::connect(addr.as_str(), worker_id, workers, wire_width(ds.dim()), timeout)?;
    if worker_id == 0 {
        let path = PathBuf::from(cfg.output_path("trace.csv"));
        let mut sink = CsvSink::new(create(&path)?, &cfg.header(&[]))?;
        let out = run_worker(&sc, &ds, &part, &mut comm, &mut sink)?;
        finish_csv(sink)?;
        println!("worker 0: {} rounds -> {}", out.rounds_run, path.display());
    } else {
        let out = run_worker(&sc, &ds, &part, &mut comm, &mut NullSink)?;
        println!("worker {worker_id}: {} rounds", out.rounds_run);
    }
    Ok(())
}

/// Summarizes a trace CSV: per-round decay of ε, `S/ε`, and the ascent and
/// weak-duality checks.
pub fn diagnose(trace_path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(trace_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", trace_path.display())))?;
    let trace = parse_csv(&text).map_err(|e| CliError::Io(format!("{}: {e}", trace_path.display())))?;
    let rounds: Vec<_> = trace.iter().filter(|r| r.is_round()).collect();
    let descents = rounds
        .windows(2)
        .filter(|w| w[1].dual_obj < w[0].dual_obj - 1e-12)
        .count();
    let negative_gaps = trace.iter().filter(|r| r.gap < -1e-10).count();
    let fit = epsilon_fit(&trace);

    writeln!(out, "t,gap,epsilon_decay,s_over_epsilon")?;
    for rec in &rounds {
        let decay = fit.decay.iter().find(|(t, _)| *t == rec.t).map(|(_, v)| format!("{v:e}"));
        let ratio = fit.s_ratio.iter().find(|(t, _)| *t == rec.t).map(|(_, v)| format!("{v:e}"));
        writeln!(
            out,
            "{},{:e},{},{}",
            rec.t,
            rec.gap,
            decay.unwrap_or_default(),
            ratio.unwrap_or_default()
        )?;
    }
    let mean_decay = if fit.decay.is_empty() {
        None
    } else {
        Some(fit.decay.iter().map(|(_, v)| v).sum::<f64>() / fit.decay.len() as f64)
    };
    writeln!(out, "# rounds={}", rounds.len())?;
    writeln!(out, "# dual_descents={descents}")?;
    writeln!(out, "# negative_gaps={negative_gaps}")?;
    if let Some(d) = mean_decay {
        writeln!(out, "# mean_epsilon_decay={d:e}")?;
    }
    Ok(())
}

pub fn diagnose_to_stdout(trace_path: &Path) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    diagnose(trace_path, &mut lock)
}
