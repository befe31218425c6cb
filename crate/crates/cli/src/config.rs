//! Flat `key=value` experiment configuration.
//!
//! A config file holds one `key=value` per line; blank lines and lines
//! starting with `#` are ignored. `--set key=value` flags are applied after
//! the file. Every key has a default and unknown keys are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use disdca::data::PartitionScheme;
use disdca::model::{LossKind, LossModel};
use disdca::solver::{Sampling, Variant};

use crate::error::CliError;

/// Every accepted key with its default, in header order.
pub const KEYS: &[(&str, &str)] = &[
    ("variant", "practical"),
    ("K", "5"),
    ("m", "100"),
    ("T", "50"),
    ("lambda", "1e-3"),
    ("loss", "squared_hinge"),
    ("loss.sign_constrained", "true"),
    ("seed", "0"),
    ("sampling", "with_replacement"),
    ("local_gap_tol", "1e-6"),
    ("max_local_epochs", "100000"),
    ("data.path", ""),
    ("data.synthetic.groups", "10"),
    ("data.synthetic.group_dim", "5"),
    ("data.synthetic.points", "200"),
    ("data.synthetic.seed", "0"),
    ("partition.scheme", "random"),
    ("partition.seed", "0"),
    ("one_comm.schemes", "block,random"),
    ("comm.mode", "simulated"),
    ("comm.listen", "127.0.0.1:7070"),
    ("comm.connect", "127.0.0.1:7070"),
    ("comm.timeout_secs", "30"),
    ("diagnostics.enabled", "false"),
    ("diagnostics.reference_tol", "1e-10"),
    ("diagnostics.lockstep", "false"),
    ("diagnostics.step_stride", "1"),
    ("output.path", ""),
];

/// Keys left out of CSV headers: they describe where a run happened, not
/// what it computed, so transports produce identical files.
fn is_run_local(key: &str) -> bool {
    key.starts_with("comm.") || key == "output.path"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommModeSetting {
    Simulated,
    Threaded,
    Tcp,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    values: Vec<String>,
    explicit: BTreeSet<&'static str>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            values: KEYS.iter().map(|(_, v)| v.to_string()).collect(),
            explicit: BTreeSet::new(),
        }
    }
}

fn key_index(key: &str) -> Option<usize> {
    KEYS.iter().position(|(k, _)| *k == key)
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("--set expects key=value, got '{o}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut seen = BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key=value", no + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(config_err(format!("line {}: duplicate key '{k}'", no + 1)));
            }
            self.set(k, v.trim())
                .map_err(|e| config_err(format!("line {}: {}", no + 1, strip(&e))))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let idx = key_index(key).ok_or_else(|| config_err(format!("unknown key '{key}'")))?;
        self.values[idx] = value.to_string();
        self.explicit.insert(KEYS[idx].0);
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        let idx = key_index(key).unwrap_or_else(|| panic!("unregistered key {key}"));
        &self.values[idx]
    }

    /// Cross-key checks that do not depend on the subcommand.
    fn check(&self) -> Result<(), CliError> {
        if !self.get("data.path").is_empty() {
            if let Some(k) = self.explicit.iter().find(|k| k.starts_with("data.synthetic.")) {
                return Err(config_err(format!("'{k}' conflicts with data.path")));
            }
        }
        Ok(())
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.parse::<T>()
            .map_err(|e| config_err(format!("{key}={v}: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        let items: Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse::<T>()).collect();
        let items = items.map_err(|e| config_err(format!("{key}={v}: {e}")))?;
        if items.is_empty() {
            return Err(config_err(format!("{key} is empty")));
        }
        Ok(items)
    }

    /// A key that accepts a list elsewhere but must be a single value here.
    pub fn single<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let mut items = self.list::<T>(key)?;
        if items.len() != 1 {
            return Err(config_err(format!("{key} must be a single value for this command")));
        }
        Ok(items.remove(0))
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(config_err(format!("{key}={v}: expected true or false"))),
        }
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        self.parse("variant")
    }

    pub fn sampling(&self) -> Result<Sampling, CliError> {
        self.parse("sampling")
    }

    pub fn scheme(&self) -> Result<PartitionScheme, CliError> {
        self.parse("partition.scheme")
    }

    pub fn loss(&self) -> Result<LossModel, CliError> {
        let kind: LossKind = self.parse("loss")?;
        Ok(LossModel::new(kind).with_sign_constraint(self.bool("loss.sign_constrained")?))
    }

    pub fn lambda(&self) -> Result<f64, CliError> {
        let l: f64 = self.parse("lambda")?;
        if !(l > 0.0 && l.is_finite()) {
            return Err(config_err(format!("lambda must be positive, got {l}")));
        }
        Ok(l)
    }

    pub fn comm_mode(&self) -> Result<CommModeSetting, CliError> {
        match self.get("comm.mode") {
            "simulated" => Ok(CommModeSetting::Simulated),
            "threaded" => Ok(CommModeSetting::Threaded),
            "tcp" => Ok(CommModeSetting::Tcp),
            v => Err(config_err(format!("comm.mode={v}: expected simulated, threaded or tcp"))),
        }
    }

    /// `output.path`, or `fallback` when unset.
    pub fn output_path(&self, fallback: &str) -> String {
        match self.get("output.path") {
            "" => fallback.to_string(),
            p => p.to_string(),
        }
    }

    /// Resolved values for a CSV header, with `replace` substituted.
    pub fn header(&self, replace: &[(&str, String)]) -> Vec<(String, String)> {
        KEYS.iter()
            .zip(&self.values)
            .filter(|((k, _), _)| !is_run_local(k))
            .map(|((k, _), v)| {
                let v = replace
                    .iter()
                    .find(|(rk, _)| rk == k)
                    .map_or_else(|| v.clone(), |(_, rv)| rv.clone());
                (k.to_string(), v)
            })
            .collect()
    }
}

fn strip(e: &CliError) -> String {
    match e {
        CliError::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
