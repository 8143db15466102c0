//! Process identity, launching, and file-based coordination.
//!
//! Every process of a run shares `<comm_dir>/<run_id>/`. Coordination files:
//!
//! * `ready.<pid>`: presence registration, created exclusively.
//! * `<label>.arrive.<pid>` / `<label>.release.0`: barrier.
//! * `msg.<phase>.<pid>`: published payload of `pid` for `phase`.
//! * `abort.<pid>`: a process gave up; everyone else fails fast.
//!
//! All files are written to a temporary name and renamed into place, and all
//! carry the envelope from [`message`].

pub mod affinity;
mod launch;
pub mod message;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use affinity::{pin, PinReport, PinStatus};
pub use launch::{launch, read_hostfile, LaunchSpec, LaunchSummary};
pub use message::EnvelopeError;

/// Prefix of every environment variable the harness reads.
pub const ENV_PREFIX: &str = "PGAS_STREAM_";
pub const ENV_PID: &str = "PGAS_STREAM_PID";
pub const ENV_NP: &str = "PGAS_STREAM_NP";
pub const ENV_COMM_DIR: &str = "PGAS_STREAM_COMM_DIR";
pub const ENV_RUN_ID: &str = "PGAS_STREAM_RUN_ID";
pub const ENV_THREADS: &str = "PGAS_STREAM_THREADS";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("missing required parameter {0}")]
    MissingParameter(&'static str),
    #[error("pid {pid} out of range for np {np}")]
    RankOutOfRange { pid: usize, np: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("bad comm dir {path}: {reason}")]
    BadCommDir { path: PathBuf, reason: String },
    #[error("pid {0} is already registered in this run")]
    DuplicatePid(usize),
    #[error("timed out after {waited:?} waiting for {what}; missing pids {missing:?}")]
    Timeout { what: String, waited: Duration, missing: Vec<usize> },
    #[error("corrupt payload in {path}: {source}")]
    CorruptPayload { path: PathBuf, source: EnvelopeError },
    #[error("run aborted by pid {pid}: {reason}")]
    Aborted { pid: usize, reason: String },
    #[error("failed to spawn pid {pid}: {source}")]
    SpawnFailure { pid: usize, source: io::Error },
    #[error("pid {pid} exited with {code:?}")]
    WorkerNonZeroExit { pid: usize, code: Option<i32> },
    #[error("multi-node launch ({n_node} nodes) requires a hostfile")]
    HostfileRequired { n_node: usize },
    #[error("hostfile {path}: {reason}")]
    BadHostfile { path: PathBuf, reason: String },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

pub type Result<T, E = RuntimeError> = std::result::Result<T, E>;

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RuntimeError {
    let context = context.into();
    move |source| RuntimeError::Io { context, source }
}

/// Launch shape: nodes x processes per node x threads per process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triples {
    pub n_node: usize,
    pub n_ppn: usize,
    pub n_tpn: usize,
}

impl Triples {
    pub fn new(n_node: usize, n_ppn: usize, n_tpn: usize) -> Result<Self, String> {
        if n_node == 0 || n_ppn == 0 || n_tpn == 0 {
            return Err(format!("triples must be positive, got {n_node},{n_ppn},{n_tpn}"));
        }
        Ok(Triples { n_node, n_ppn, n_tpn })
    }

    pub fn np(&self) -> usize {
        self.n_node * self.n_ppn
    }
}

impl Default for Triples {
    fn default() -> Self {
        Triples { n_node: 1, n_ppn: 1, n_tpn: 1 }
    }
}

impl fmt::Display for Triples {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.n_node, self.n_ppn, self.n_tpn)
    }
}

impl FromStr for Triples {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim_matches(|c| c == '[' || c == ']').split([',', ' ']).filter(|p| !p.is_empty()).collect();
        if parts.len() != 3 {
            return Err(format!("expected three values NODES,PPN,TPN, got '{s}'"));
        }
        let mut v = [0usize; 3];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part.parse().map_err(|e| format!("bad triples entry '{part}': {e}"))?;
        }
        Triples::new(v[0], v[1], v[2])
    }
}

/// Identity of one process within a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcSet {
    pub np: usize,
    pub pid: usize,
    pub threads_per_proc: usize,
    pub comm_dir: PathBuf,
    pub run_id: String,
}

impl ProcSet {
    pub fn run_dir(&self) -> PathBuf {
        self.comm_dir.join(&self.run_id)
    }

    #[cfg(test)]
    pub(crate) fn serial_for_tests(pid: usize, np: usize, threads: usize) -> Self {
        ProcSet { np, pid, threads_per_proc: threads, comm_dir: std::env::temp_dir(), run_id: "test".into() }
    }
}

/// Worker invocation parameters, from flags or `PGAS_STREAM_*` variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerArgs {
    pub pid: Option<usize>,
    pub np: Option<usize>,
    pub comm_dir: Option<PathBuf>,
    pub run_id: Option<String>,
    pub threads: Option<usize>,
}

impl WorkerArgs {
    /// Reads the worker-contract environment variables.
    pub fn from_env() -> Result<Self> {
        fn num(name: &'static str) -> Result<Option<usize>> {
            match std::env::var(name) {
                Ok(v) => v
                    .parse()
                    .map(Some)
                    .map_err(|e| RuntimeError::InvalidParameter { name, reason: format!("'{v}': {e}") }),
                Err(_) => Ok(None),
            }
        }
        Ok(WorkerArgs {
            pid: num(ENV_PID)?,
            np: num(ENV_NP)?,
            comm_dir: std::env::var_os(ENV_COMM_DIR).map(PathBuf::from),
            run_id: std::env::var(ENV_RUN_ID).ok(),
            threads: num(ENV_THREADS)?,
        })
    }

    /// Fills unset fields from `other`.
    pub fn or(self, other: WorkerArgs) -> WorkerArgs {
        WorkerArgs {
            pid: self.pid.or(other.pid),
            np: self.np.or(other.np),
            comm_dir: self.comm_dir.or(other.comm_dir),
            run_id: self.run_id.or(other.run_id),
            threads: self.threads.or(other.threads),
        }
    }

    fn is_serial(&self) -> bool {
        self.pid.is_none() && self.np.is_none() && self.run_id.is_none() && self.comm_dir.is_none()
    }
}

/// `<unix seconds>-<random hex>`.
pub fn new_run_id() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("{secs}-{:08x}", rand::random::<u32>())
}

pub fn default_comm_dir() -> PathBuf {
    std::env::temp_dir().join("pgas-stream")
}

fn check_name(name: &'static str, value: &str) -> Result<()> {
    let ok = !value.is_empty()
        && value != "."
        && value != ".."
        && value.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(RuntimeError::InvalidParameter { name, reason: format!("'{value}' must be [A-Za-z0-9._-]+") })
    }
}

/// Poll schedule for file waits: 50 ms doubling up to 500 ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollPolicy {
    pub initial: Duration,
    pub max: Duration,
}

impl Default for PollPolicy {
    fn default() -> Self {
        PollPolicy { initial: Duration::from_millis(50), max: Duration::from_millis(500) }
    }
}

/// A registered process: identity plus the messaging primitives.
#[derive(Debug)]
pub struct Comm {
    procs: ProcSet,
    run_dir: PathBuf,
    timeout: Duration,
    poll: PollPolicy,
    seq: AtomicU64,
}

/// Builds the process identity and registers `ready.<pid>`.
///
/// With no pid/np/run id/comm dir given this is a serial run (pid 0 of 1) in
/// a fresh run directory under the default comm dir.
pub fn init(args: &WorkerArgs) -> Result<Comm> {
    let procs = if args.is_serial() {
        let comm_dir = default_comm_dir();
        fs::create_dir_all(&comm_dir).map_err(|e| RuntimeError::BadCommDir { path: comm_dir.clone(), reason: e.to_string() })?;
        ProcSet { np: 1, pid: 0, threads_per_proc: args.threads.unwrap_or(1).max(1), comm_dir, run_id: new_run_id() }
    } else {
        let pid = args.pid.ok_or(RuntimeError::MissingParameter("pid"))?;
        let np = args.np.ok_or(RuntimeError::MissingParameter("np"))?;
        let run_id = args.run_id.clone().ok_or(RuntimeError::MissingParameter("run-id"))?;
        let comm_dir = args.comm_dir.clone().ok_or(RuntimeError::MissingParameter("comm-dir"))?;
        if np == 0 || pid >= np {
            return Err(RuntimeError::RankOutOfRange { pid, np });
        }
        let threads = args.threads.unwrap_or(1);
        if threads == 0 {
            return Err(RuntimeError::InvalidParameter { name: "threads", reason: "must be >= 1".into() });
        }
        ProcSet { np, pid, threads_per_proc: threads, comm_dir, run_id }
    };
    Comm::register(procs)
}

impl Comm {
    /// Registers an explicit identity. The comm dir must already exist.
    pub fn register(procs: ProcSet) -> Result<Comm> {
        check_name("run-id", &procs.run_id)?;
        match fs::metadata(&procs.comm_dir) {
            Ok(m) if m.is_dir() => {}
            Ok(_) => return Err(RuntimeError::BadCommDir { path: procs.comm_dir.clone(), reason: "not a directory".into() }),
            Err(e) => return Err(RuntimeError::BadCommDir { path: procs.comm_dir.clone(), reason: e.to_string() }),
        }
        let run_dir = procs.run_dir();
        fs::create_dir_all(&run_dir).map_err(|e| RuntimeError::BadCommDir { path: run_dir.clone(), reason: e.to_string() })?;
        let comm = Comm { procs, run_dir, timeout: DEFAULT_TIMEOUT, poll: PollPolicy::default(), seq: AtomicU64::new(0) };
        let presence = format!("host={}\nos_pid={}\n", hostname(), std::process::id());
        match message::create_atomic(&comm.run_dir, &format!("ready.{}", comm.pid()), &message::encode(presence.as_bytes())) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                let pid = comm.pid();
                comm.abort(&format!("duplicate registration of pid {pid}"));
                return Err(RuntimeError::DuplicatePid(pid));
            }
            Err(e) => return Err(io_err("registering presence")(e)),
        }
        debug!("pid {} of {} registered in {}", comm.pid(), comm.np(), comm.run_dir.display());
        Ok(comm)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_poll(mut self, poll: PollPolicy) -> Self {
        self.poll = poll;
        self
    }

    pub fn procs(&self) -> &ProcSet {
        &self.procs
    }

    pub fn pid(&self) -> usize {
        self.procs.pid
    }

    pub fn np(&self) -> usize {
        self.procs.np
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Next value of a per-process sequence; processes that make the same
    /// sequence of calls agree on the values.
    pub fn next_seq(&self) -> u64 {
        self.seq.fetch_add(1, Ordering::Relaxed)
    }

    /// Tells every other process to stop waiting.
    pub fn abort(&self, reason: &str) {
        let name = format!("abort.{}", self.pid());
        if let Err(e) = message::write_atomic(&self.run_dir, &name, &message::encode(reason.as_bytes())) {
            log::warn!("could not publish abort: {e}");
        }
    }

    fn check_abort(&self) -> Result<()> {
        let entries = match fs::read_dir(&self.run_dir) {
            Ok(entries) => entries,
            Err(e) => return Err(io_err("scanning run dir")(e)),
        };
        for entry in entries.flatten() {
            let name = entry.file_name();
            let Some(pid) = name.to_str().and_then(|n| n.strip_prefix("abort.")).and_then(|p| p.parse().ok()) else {
                continue;
            };
            let reason = fs::read(entry.path())
                .ok()
                .and_then(|b| message::decode(&b).ok().map(|p| String::from_utf8_lossy(p).into_owned()))
                .unwrap_or_else(|| "unreadable abort notice".into());
            return Err(RuntimeError::Aborted { pid, reason });
        }
        Ok(())
    }

    fn exists(&self, name: &str) -> bool {
        self.run_dir.join(name).exists()
    }

    /// Polls until every name in `names` exists; `names[i]` belongs to `pids[i]`.
    fn wait_all(&self, what: &str, names: &[(usize, String)]) -> Result<()> {
        let start = Instant::now();
        let mut interval = self.poll.initial;
        loop {
            self.check_abort()?;
            let missing: Vec<usize> = names.iter().filter(|(_, n)| !self.exists(n)).map(|(p, _)| *p).collect();
            if missing.is_empty() {
                return Ok(());
            }
            let waited = start.elapsed();
            if waited >= self.timeout {
                return Err(RuntimeError::Timeout { what: what.to_string(), waited, missing });
            }
            thread::sleep(interval.min(self.timeout - waited));
            interval = (interval * 2).min(self.poll.max);
        }
    }

    /// Returns once all `np` processes have arrived at `label`.
    pub fn barrier(&self, label: &str) -> Result<()> {
        check_name("barrier label", label)?;
        let arrive = |pid: usize| format!("{label}.arrive.{pid}");
        let release = format!("{label}.release.0");
        message::write_atomic(&self.run_dir, &arrive(self.pid()), &message::encode(&[]))
            .map_err(io_err(format!("barrier {label}")))?;
        if self.pid() == 0 {
            let names: Vec<(usize, String)> = (0..self.np()).map(|p| (p, arrive(p))).collect();
            self.wait_all(&format!("barrier '{label}' arrivals"), &names)?;
            message::write_atomic(&self.run_dir, &release, &message::encode(&[]))
                .map_err(io_err(format!("barrier {label}")))?;
        } else {
            self.wait_all(&format!("barrier '{label}' release"), &[(0, release)])?;
        }
        Ok(())
    }

    /// Publishes this process's payload for `phase` as `msg.<phase>.<pid>`.
    pub fn publish(&self, phase: &str, payload: &[u8]) -> Result<()> {
        check_name("phase", phase)?;
        message::write_atomic(&self.run_dir, &format!("msg.{phase}.{}", self.pid()), &message::encode(payload))
            .map_err(io_err(format!("publishing {phase}")))
    }

    /// Waits for and reads the payload `from` published for `phase`.
    pub fn fetch(&self, phase: &str, from: usize) -> Result<Vec<u8>> {
        check_name("phase", phase)?;
        let name = format!("msg.{phase}.{from}");
        self.wait_all(&format!("message '{phase}'"), &[(from, name.clone())])?;
        self.read_message(&name)
    }

    fn read_message(&self, name: &str) -> Result<Vec<u8>> {
        let path = self.run_dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(format!("reading {name}")))?;
        message::decode(&bytes)
            .map(<[u8]>::to_vec)
            .map_err(|source| RuntimeError::CorruptPayload { path, source })
    }

    /// Every pid contributes one payload; pid 0 gets all of them in pid order.
    pub fn gather(&self, phase: &str, payload: &[u8]) -> Result<Option<Vec<Vec<u8>>>> {
        self.publish(phase, payload)?;
        if self.pid() != 0 {
            return Ok(None);
        }
        let names: Vec<(usize, String)> = (0..self.np()).map(|p| (p, format!("msg.{phase}.{p}"))).collect();
        self.wait_all(&format!("gather '{phase}'"), &names)?;
        names.iter().map(|(_, n)| self.read_message(n)).collect::<Result<Vec<_>>>().map(Some)
    }

    /// Removes the run directory.
    pub fn cleanup(self) -> Result<()> {
        fs::remove_dir_all(&self.run_dir).map_err(io_err("removing run dir"))
    }
}

pub fn hostname() -> String {
    #[cfg(unix)]
    {
        let mut buf = [0u8; 256];
        // SAFETY: buf is writable for its full length.
        if unsafe { libc::gethostname(buf.as_mut_ptr().cast(), buf.len()) } == 0 {
            let end = buf.iter().position(|&b| b == 0).unwrap_or(buf.len());
            return String::from_utf8_lossy(&buf[..end]).into_owned();
        }
    }
    std::env::var("HOSTNAME").unwrap_or_else(|_| "unknown".into())
}
