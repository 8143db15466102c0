//! Effective benchmark configuration, echoed into every report.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmap::{DistKind, DistSpec, Map, MapError};
use crate::report::Format;
use crate::runtime::Triples;
use crate::stream::{default_q, StreamParams};

/// 2^24 elements per process: three vectors take 384 MiB.
pub const DEFAULT_N_PER_PROC: usize = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("n_trials must be >= 1 so results can be validated")]
    ZeroTrials,
    #[error("n_per_proc must be >= 1")]
    ZeroElements,
    #[error("q must be finite, got {0}")]
    BadQ(f64),
    #[error("timeout must be positive")]
    ZeroTimeout,
    #[error("global size {n_per_proc} x {np} overflows")]
    Overflow { n_per_proc: usize, np: usize },
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub triples: Triples,
    pub n_per_proc: usize,
    pub n_trials: usize,
    pub q: f64,
    pub dist: DistKind,
    pub block_size: usize,
    pub overlap: usize,
    pub out: PathBuf,
    pub format: Format,
    pub pin: bool,
    pub timeout_secs: f64,
    pub comm_dir: Option<PathBuf>,
    pub hostfile: Option<PathBuf>,
    pub remote_exec: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            triples: Triples::default(),
            n_per_proc: DEFAULT_N_PER_PROC,
            n_trials: 10,
            q: default_q(),
            dist: DistKind::Block,
            block_size: 1,
            overlap: 0,
            out: PathBuf::from("pgas-stream-out"),
            format: Format::Json,
            pin: true,
            timeout_secs: 300.0,
            comm_dir: None,
            hostfile: None,
            remote_exec: "ssh {host}".into(),
        }
    }
}

impl RunConfig {
    pub fn np(&self) -> usize {
        self.triples.np()
    }

    /// Weak scaling: the global size grows with the process count.
    pub fn n_global(&self) -> usize {
        self.n_per_proc.saturating_mul(self.np())
    }

    pub fn dist_spec(&self) -> DistSpec {
        DistSpec::new(self.dist, self.block_size)
    }

    pub fn map(&self) -> Result<Map, MapError> {
        Map::row(self.np(), self.dist_spec(), self.overlap)
    }

    pub fn stream_params(&self) -> StreamParams {
        StreamParams {
            n_global: self.n_global(),
            n_trials: self.n_trials,
            q: self.q,
            threads: self.triples.n_tpn,
            ..StreamParams::default()
        }
    }

    pub fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_trials == 0 {
            return Err(ConfigError::ZeroTrials);
        }
        if self.n_per_proc == 0 {
            return Err(ConfigError::ZeroElements);
        }
        if !self.q.is_finite() {
            return Err(ConfigError::BadQ(self.q));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(ConfigError::ZeroTimeout);
        }
        if self.n_per_proc.checked_mul(self.np()).is_none() {
            return Err(ConfigError::Overflow { n_per_proc: self.n_per_proc, np: self.np() });
        }
        self.map()?;
        Ok(())
    }

    /// Benchmark flags reproducing this configuration on a worker command line.
    /// Launch-only settings (comm dir, hostfile) are not included.
    pub fn to_args(&self) -> Vec<String> {
        vec![
            "--triples".into(),
            self.triples.to_string(),
            "--n-per-proc".into(),
            self.n_per_proc.to_string(),
            "--nt".into(),
            self.n_trials.to_string(),
            // Debug formatting of f64 round-trips exactly
            "--q".into(),
            format!("{:?}", self.q),
            "--dist".into(),
            self.dist.to_string(),
            "--block-size".into(),
            self.block_size.to_string(),
            "--overlap".into(),
            self.overlap.to_string(),
            "--out".into(),
            self.out.display().to_string(),
            "--format".into(),
            self.format.to_string(),
            "--timeout".into(),
            format!("{:?}", self.timeout_secs),
            if self.pin { "--pin" } else { "--no-pin" }.into(),
        ]
    }
}
