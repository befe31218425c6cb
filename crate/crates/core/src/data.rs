//! Sparse datasets, libsvm I/O, the grouped synthetic regression generator,
//! partitioning across workers and cross-worker orthogonality measurement.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no examples")]
    Empty,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("cannot split {n} examples across {workers} workers")]
    Partition { n: usize, workers: usize },
}

/// A borrowed sparse row with strictly increasing feature indices.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub indices: &'a [u32],
    pub values: &'a [f64],
}

impl Row<'_> {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&j, &v)| v * dense[j as usize])
            .sum()
    }

    /// `dense += a·x`
    pub fn axpy(&self, a: f64, dense: &mut [f64]) {
        for (&j, &v) in self.indices.iter().zip(self.values) {
            dense[j as usize] += a * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Sparse-sparse inner product by merging the index lists.
    pub fn dot_row(&self, other: &Row<'_>) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Examples stored row-compressed, with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from `(index, value)` rows; indices must be strictly
    /// increasing and below `dim`.
    pub fn from_rows(
        dim: usize,
        rows: Vec<Vec<(usize, f64)>>,
        labels: Vec<f64>,
    ) -> Result<Self, DataError> {
        if rows.len() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        if dim == 0 || dim > u32::MAX as usize {
            return Err(DataError::Invalid(format!("unsupported dimension {dim}")));
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            let mut prev: Option<usize> = None;
            for (j, v) in row {
                if j >= dim {
                    return Err(DataError::Invalid(format!(
                        "row {i}: feature index {j} >= dim {dim}"
                    )));
                }
                if prev.is_some_and(|p| j <= p) {
                    return Err(DataError::Invalid(format!(
                        "row {i}: feature indices not strictly increasing"
                    )));
                }
                if !v.is_finite() {
                    return Err(DataError::Invalid(format!("row {i}: non-finite value")));
                }
                prev = Some(j);
                indices.push(j as u32);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(DataError::Invalid("non-finite label".into()));
        }
        Ok(Dataset {
            dim,
            indptr,
            indices,
            values,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        Row {
            indices: &self.indices[s..e],
            values: &self.values[s..e],
        }
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Same features, new labels.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::Invalid("label count mismatch".into()));
        }
        Ok(Dataset {
            labels,
            ..self.clone()
        })
    }

    /// `(1/(λn))·Σ_i α_i x_i`, computed in example order.
    pub fn weighted_sum(&self, alpha: &[f64], scale: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.row(i).axpy(a, &mut w);
            }
        }
        w.iter_mut().for_each(|x| *x *= scale);
        w
    }

    /// Binary labels `sign(y − median(y))`, with ties mapped to −1.
    pub fn median_sign_labels(&self) -> Vec<f64> {
        let mut sorted = self.labels.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        self.labels
            .iter()
            .map(|&y| if y > median { 1.0 } else { -1.0 })
            .collect()
    }
}

/// Reads libsvm text: `label idx:val idx:val ...`, 1-based indices.
/// Blank lines and `#` comments are skipped.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    parse_libsvm(BufReader::new(File::open(path)?))
}

pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Parse { line: lineno, msg };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label '{label_tok}'")))?;
        if !label.is_finite() {
            return Err(err(format!("non-finite label '{label_tok}'")));
        }
        let mut row = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index '{idx}'")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            if idx <= prev {
                return Err(err(format!(
                    "feature indices must be strictly increasing ({idx} after {prev})"
                )));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad feature value '{val}'")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value '{val}'")));
            }
            prev = idx;
            row.push((idx - 1, val));
        }
        dim = dim.max(prev);
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Dataset::from_rows(dim.max(1), rows, labels)
}

/// Writes libsvm text using shortest round-trip float formatting.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> io::Result<()> {
    for i in 0..ds.len() {
        write!(out, "{}", ds.label(i))?;
        let row = ds.row(i);
        for (&j, &v) in row.indices.iter().zip(row.values) {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn save_libsvm(ds: &Dataset, path: impl AsRef<Path>) -> io::Result<()> {
    write_libsvm(ds, BufWriter::new(File::create(path)?))
}

/// Scales every example by `1/max(1, ‖x‖₂)`; labels are untouched.
pub fn normalize_unit_ball(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for i in 0..out.len() {
        let (s, e) = (out.indptr[i], out.indptr[i + 1]);
        let norm = out.values[s..e].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            out.values[s..e].iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Parameters of the grouped synthetic regression data.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub groups: usize,
    pub group_dim: usize,
    pub points_per_group: usize,
    pub seed: u64,
    /// Linear part of the response; `None` means all ones.
    pub weights: Option<Vec<f64>>,
}

impl SyntheticSpec {
    pub fn new(groups: usize, group_dim: usize, points_per_group: usize, seed: u64) -> Self {
        SyntheticSpec {
            groups,
            group_dim,
            points_per_group,
            seed,
            weights: None,
        }
    }
}

/// Standard normal draws from a seeded ChaCha8 stream.
///
/// Each pair of normals consumes two uniforms `u1, u2` (rand's 53-bit `f64`
/// in `[0, 1)`) and applies Box–Muller:
/// `r = sqrt(−2 ln(1 − u1))`, `z0 = r cos(2π u2)`, `z1 = r sin(2π u2)`.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        NormalStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = self.rng.gen();
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Grouped regression data: group `g` owns features
/// `[g·group_dim, (g+1)·group_dim)`, and its examples are contiguous and
/// supported only on that block. Responses are `y = u·x + Σ_j (x_j/2)³`
/// computed from the raw features; examples are then scaled into the unit ball.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    if spec.groups == 0 || spec.group_dim == 0 || spec.points_per_group == 0 {
        return Err(DataError::Invalid(
            "groups, group_dim and points_per_group must be positive".into(),
        ));
    }
    let dim = spec.groups * spec.group_dim;
    if let Some(u) = &spec.weights {
        if u.len() != dim {
            return Err(DataError::Invalid(format!(
                "weight vector has {} entries, expected {dim}",
                u.len()
            )));
        }
    }
    let weight = |j: usize| spec.weights.as_ref().map_or(1.0, |u| u[j]);
    let mut normals = NormalStream::new(spec.seed);
    let n = spec.groups * spec.points_per_group;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for g in 0..spec.groups {
        let base = g * spec.group_dim;
        for _ in 0..spec.points_per_group {
            let mut row = Vec::with_capacity(spec.group_dim);
            let mut y = 0.0;
            for j in base..base + spec.group_dim {
                let x = normals.next_normal();
                let half = 0.5 * x;
                y += weight(j) * x + half * half * half;
                row.push((j, x));
            }
            rows.push(row);
            labels.push(y);
        }
    }
    let raw = Dataset::from_rows(dim, rows, labels)?;
    Ok(normalize_unit_ball(&raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScheme {
    Block,
    Random,
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionScheme::Block => "block",
            PartitionScheme::Random => "random",
        })
    }
}

impl FromStr for PartitionScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "block" => Ok(PartitionScheme::Block),
            "random" => Ok(PartitionScheme::Random),
            other => Err(format!("unknown partition scheme '{other}'")),
        }
    }
}

/// Assignment of examples to `K` workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    workers: usize,
    scheme: PartitionScheme,
    assignment: Vec<usize>,
    shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn scheme(&self) -> PartitionScheme {
        self.scheme
    }

    pub fn worker_of(&self, example: usize) -> usize {
        self.assignment[example]
    }

    /// Global example indices held by `worker`, ascending.
    pub fn shard(&self, worker: usize) -> &[usize] {
        &self.shards[worker]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Splits `n` examples into `K` contiguous runs (the first `n mod K` runs get
/// one extra example). The random scheme runs the same split over a seeded
/// shuffle of the example order.
pub fn partition(
    ds: &Dataset,
    workers: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Partition, DataError> {
    partition_indices(ds.len(), workers, scheme, seed)
}

pub fn partition_indices(
    n: usize,
    workers: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Partition, DataError> {
    if workers == 0 || workers > n {
        return Err(DataError::Partition { n, workers });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if scheme == PartitionScheme::Random {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (base, extra) = (n / workers, n % workers);
    let mut assignment = vec![0; n];
    let mut shards = Vec::with_capacity(workers);
    let mut start = 0;
    for k in 0..workers {
        let size = base + usize::from(k < extra);
        let mut shard = order[start..start + size].to_vec();
        shard.sort_unstable();
        for &i in &shard {
            assignment[i] = k;
        }
        shards.push(shard);
        start += size;
    }
    Ok(Partition {
        workers,
        scheme,
        assignment,
        shards,
    })
}

/// Largest `|x_i·x_j|` over example pairs held by different workers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthogonalityReport {
    pub max_abs_dot: f64,
    /// `false` when the value comes from a seeded subsample of pairs.
    pub exact: bool,
    pub pairs_examined: u64,
}

/// Candidate-pair budget above which pairs are subsampled.
pub const ORTHOGONALITY_PAIR_BUDGET: u64 = 1_000_000;
const ORTHOGONALITY_SAMPLE_SEED: u64 = 0x005e_ed0f_0d07;

/// Measures cross-worker orthogonality. Pairs that share no feature contribute
/// exactly zero, so only pairs co-occurring in some feature's posting list are
/// examined; above [`ORTHOGONALITY_PAIR_BUDGET`] candidate pairs a seeded
/// sample of that many cross-worker pairs is used instead.
pub fn orthogonality_residual(ds: &Dataset, p: &Partition) -> OrthogonalityReport {
    assert_eq!(ds.len(), p.len(), "partition does not match dataset");
    if p.workers() == 1 {
        return OrthogonalityReport {
            max_abs_dot: 0.0,
            exact: true,
            pairs_examined: 0,
        };
    }
    let mut postings: Vec<Vec<usize>> = vec![Vec::new(); ds.dim()];
    for i in 0..ds.len() {
        for &j in ds.row(i).indices {
            postings[j as usize].push(i);
        }
    }
    // features whose posting list spans a single worker cannot create cross pairs
    let shared: Vec<bool> = postings
        .iter()
        .map(|list| {
            list.first()
                .is_some_and(|&f| list.iter().any(|&i| p.worker_of(i) != p.worker_of(f)))
        })
        .collect();
    if !shared.iter().any(|&s| s) {
        return OrthogonalityReport {
            max_abs_dot: 0.0,
            exact: true,
            pairs_examined: 0,
        };
    }
    let candidates: u64 = postings
        .iter()
        .zip(&shared)
        .filter(|(_, &s)| s)
        .map(|(l, _)| (l.len() as u64) * (l.len() as u64 - 1) / 2)
        .sum();

    if candidates <= ORTHOGONALITY_PAIR_BUDGET {
        let mut max_abs = 0.0_f64;
        let mut seen = HashSet::new();
        let mut examined = 0u64;
        for i in 0..ds.len() {
            seen.clear();
            let row = ds.row(i);
            for &f in row.indices {
                if !shared[f as usize] {
                    continue;
                }
                for &j in &postings[f as usize] {
                    if j > i && p.worker_of(j) != p.worker_of(i) && seen.insert(j) {
                        max_abs = max_abs.max(row.dot_row(&ds.row(j)).abs());
                        examined += 1;
                    }
                }
            }
        }
        return OrthogonalityReport {
            max_abs_dot: max_abs,
            exact: true,
            pairs_examined: examined,
        };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(ORTHOGONALITY_SAMPLE_SEED);
    let n = ds.len();
    let mut max_abs = 0.0_f64;
    let mut examined = 0u64;
    while examined < ORTHOGONALITY_PAIR_BUDGET {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if p.worker_of(i) == p.worker_of(j) {
            continue;
        }
        max_abs = max_abs.max(ds.row(i).dot_row(&ds.row(j)).abs());
        examined += 1;
    }
    OrthogonalityReport {
        max_abs_dot: max_abs,
        exact: false,
        pairs_examined: examined,
    }
}
