//! Run configuration: an optional TOML file overlaid by flags and
//! `SDEG_*` environment variables.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use sdeg_core::engine::Mode;
use sdeg_core::tree::RequirementOrdering;
use sdeg_core::verifier::{AuditKind, AuditOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config file {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Keys accepted in a config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub mode: Option<String>,
    pub stages: Option<u64>,
    pub ordering: Option<String>,
    pub scenario: Option<String>,
    pub adversary: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub snapshot_every: Option<u64>,
    pub audit: Option<Vec<String>>,
    pub window: Option<u64>,
    pub zbound: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml { path: path.into(), source })
    }

    /// Fills every unset field of `self` from `fallback`.
    pub fn or(self, fallback: FileConfig) -> FileConfig {
        FileConfig {
            mode: self.mode.or(fallback.mode),
            stages: self.stages.or(fallback.stages),
            ordering: self.ordering.or(fallback.ordering),
            scenario: self.scenario.or(fallback.scenario),
            adversary: self.adversary.or(fallback.adversary),
            seed: self.seed.or(fallback.seed),
            trace: self.trace.or(fallback.trace),
            snapshot_every: self.snapshot_every.or(fallback.snapshot_every),
            audit: self.audit.or(fallback.audit),
            window: self.window.or(fallback.window),
            zbound: self.zbound.or(fallback.zbound),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversarySource {
    Builtin(String),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub mode: Mode,
    pub stages: u64,
    pub ordering: RequirementOrdering,
    pub adversary: AdversarySource,
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub snapshot_every: Option<u64>,
    /// Audits to run after the simulation; empty for none.
    pub audits: Vec<AuditKind>,
    pub audit_options: AuditOptions,
}

impl EngineConfig {
    pub fn resolve(raw: FileConfig) -> Result<Self, ConfigError> {
        let bad = |m: String| ConfigError::Invalid(m);
        let mode = match raw.mode.as_deref() {
            None => Mode::Theorem2,
            Some(m) => m.parse().map_err(bad)?,
        };
        let stages = raw.stages.unwrap_or(100);
        if stages == 0 {
            return Err(bad("stages must be at least 1".into()));
        }
        let ordering = match raw.ordering.as_deref() {
            None => RequirementOrdering::default(),
            Some(p) => RequirementOrdering::new(p).map_err(|e| bad(format!("ordering: {e}")))?,
        };
        let adversary = match (raw.scenario, raw.adversary) {
            (Some(_), Some(_)) => return Err(bad("give either a scenario or an adversary file, not both".into())),
            (Some(name), None) => AdversarySource::Builtin(name),
            (None, Some(path)) => AdversarySource::File(path),
            (None, None) => return Err(bad("no adversary: pass --scenario or --adversary".into())),
        };
        let randomized = adversary == AdversarySource::Builtin("random".into());
        match (randomized, raw.seed) {
            (true, None) => return Err(bad("the random scenario needs --seed".into())),
            (false, Some(_)) => return Err(bad("--seed only applies to the random scenario".into())),
            _ => {}
        }
        match (raw.snapshot_every, &raw.trace) {
            (Some(0), _) => return Err(bad("snapshot-every must be at least 1".into())),
            (Some(_), None) => return Err(bad("snapshot-every needs a trace file to write next to".into())),
            _ => {}
        }
        let audits = parse_audits(&raw.audit.unwrap_or_default(), mode).map_err(bad)?;
        let defaults = AuditOptions::default();
        let audit_options = AuditOptions {
            window: raw.window.unwrap_or(defaults.window),
            zbound: raw.zbound.unwrap_or(defaults.zbound),
        };
        Ok(Self {
            mode,
            stages,
            ordering,
            adversary,
            seed: raw.seed,
            trace: raw.trace,
            snapshot_every: raw.snapshot_every,
            audits,
            audit_options,
        })
    }
}

/// Parses audit names, comma separated or repeated; `all` means every audit
/// that applies to `mode`.
pub fn parse_audits(names: &[String], mode: Mode) -> Result<Vec<AuditKind>, String> {
    let mut out = Vec::new();
    for name in names.iter().flat_map(|n| n.split(',')).map(str::trim).filter(|n| !n.is_empty()) {
        if name == "all" {
            out.extend(AuditKind::for_mode(mode));
        } else {
            out.push(name.parse()?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}
