//! Destinations for [`TraceRecord`]s and their CSV serialization.

use std::io::{self, Write};

pub use crate::diagnostics::TraceRecord;

pub const CSV_COLUMNS: &str = "t,j,dual_obj,primal_obj,gap,epsilon,R,S,dist_to_opt";

pub trait TraceSink {
    fn record(&mut self, rec: &TraceRecord) -> io::Result<()>;
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _: &TraceRecord) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
pub struct VecSink(pub Vec<TraceRecord>);

impl TraceSink for VecSink {
    fn record(&mut self, rec: &TraceRecord) -> io::Result<()> {
        self.0.push(*rec);
        Ok(())
    }
}

/// Writes `# key=value` lines, the column header, then one row per record.
/// Floats use Rust's shortest round-trip scientific form; absent values are
/// empty fields and round-level rows carry `j = -1`.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new<K: AsRef<str>, V: AsRef<str>>(mut out: W, meta: &[(K, V)]) -> io::Result<Self> {
        for (k, v) in meta {
            writeln!(out, "# {}={}", k.as_ref(), v.as_ref())?;
        }
        writeln!(out, "{CSV_COLUMNS}")?;
        Ok(CsvSink { out })
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TraceSink for CsvSink<W> {
    fn record(&mut self, rec: &TraceRecord) -> io::Result<()> {
        writeln!(self.out, "{}", csv_row(rec))
    }
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    fn record(&mut self, rec: &TraceRecord) -> io::Result<()> {
        (**self).record(rec)
    }
}

pub fn csv_row(rec: &TraceRecord) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let j = rec.j.map_or_else(|| "-1".to_string(), |j| j.to_string());
    format!(
        "{},{},{:e},{:e},{:e},{},{},{},{}",
        rec.t,
        j,
        rec.dual_obj,
        rec.primal_obj,
        rec.gap,
        opt(rec.epsilon),
        opt(rec.r),
        opt(rec.s),
        opt(rec.dist_to_opt)
    )
}

/// Parses the rows written by [`CsvSink`], skipping `#` lines and the header.
pub fn parse_csv(text: &str) -> Result<Vec<TraceRecord>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line == CSV_COLUMNS || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(format!("line {}: expected 9 fields", lineno + 1));
        }
        let err = |what: &str| format!("line {}: bad {what}", lineno + 1);
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(what));
        let opt = |s: &str, what: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, what).map(Some)
            }
        };
        let t = fields[0].parse::<usize>().map_err(|_| err("t"))?;
        let j = match fields[1] {
            "-1" => None,
            s => Some(s.parse::<usize>().map_err(|_| err("j"))?),
        };
        out.push(TraceRecord {
            t,
            j,
            dual_obj: num(fields[2], "dual_obj")?,
            primal_obj: num(fields[3], "primal_obj")?,
            gap: num(fields[4], "gap")?,
            epsilon: opt(fields[5], "epsilon")?,
            r: opt(fields[6], "R")?,
            s: opt(fields[7], "S")?,
            dist_to_opt: opt(fields[8], "dist_to_opt")?,
        });
    }
    Ok(out)
}
