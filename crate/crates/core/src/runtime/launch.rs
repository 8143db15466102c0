//! Triples-mode process launcher.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};

use super::{io_err, Result, RuntimeError, Triples, DEFAULT_TIMEOUT};

/// What to start and where. Each worker gets `program_args` followed by
/// `--pid K --np N --comm-dir D --run-id R --threads T`.
#[derive(Debug, Clone)]
pub struct LaunchSpec {
    pub triples: Triples,
    pub program: PathBuf,
    pub program_args: Vec<String>,
    pub comm_dir: PathBuf,
    pub run_id: String,
    pub timeout: Duration,
    /// Worker stdout/stderr go to `<log_dir>/worker.<pid>.log`; inherited when unset.
    pub log_dir: Option<PathBuf>,
    /// Required when `triples.n_node > 1`; one host per line.
    pub hostfile: Option<PathBuf>,
    /// Remote command prefix, `{host}` is substituted. Used only for multi-node.
    pub remote_exec: String,
}

impl LaunchSpec {
    pub fn local(triples: Triples, program: impl Into<PathBuf>, comm_dir: impl Into<PathBuf>, run_id: impl Into<String>) -> Self {
        LaunchSpec {
            triples,
            program: program.into(),
            program_args: Vec::new(),
            comm_dir: comm_dir.into(),
            run_id: run_id.into(),
            timeout: DEFAULT_TIMEOUT,
            log_dir: None,
            hostfile: None,
            remote_exec: "ssh {host}".into(),
        }
    }

    pub fn worker_flags(&self, pid: usize) -> Vec<String> {
        vec![
            "--pid".into(),
            pid.to_string(),
            "--np".into(),
            self.triples.np().to_string(),
            "--comm-dir".into(),
            self.comm_dir.display().to_string(),
            "--run-id".into(),
            self.run_id.clone(),
            "--threads".into(),
            self.triples.n_tpn.to_string(),
        ]
    }

    fn command(&self, pid: usize, hosts: &[String]) -> Command {
        let mut argv: Vec<String> = Vec::new();
        if self.triples.n_node > 1 {
            let host = &hosts[pid / self.triples.n_ppn];
            argv.extend(self.remote_exec.split_whitespace().map(|w| w.replace("{host}", host)));
        }
        argv.push(self.program.display().to_string());
        argv.extend(self.program_args.iter().cloned());
        argv.extend(self.worker_flags(pid));
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]);
        cmd
    }
}

/// Exit code per pid; `None` means killed by a signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchSummary {
    pub exit_codes: Vec<Option<i32>>,
}

impl LaunchSummary {
    pub fn success(&self) -> bool {
        self.exit_codes.iter().all(|c| *c == Some(0))
    }

    pub fn into_result(self) -> Result<Self> {
        match self.exit_codes.iter().position(|c| *c != Some(0)) {
            Some(pid) => Err(RuntimeError::WorkerNonZeroExit { pid, code: self.exit_codes[pid] }),
            None => Ok(self),
        }
    }
}

pub fn read_hostfile(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| RuntimeError::BadHostfile { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn kill_all(children: &mut [(usize, Child)]) {
    for (_, child) in children.iter_mut() {
        let _ = child.kill();
        let _ = child.wait();
    }
}

/// Spawns `n_node * n_ppn` workers and waits for all of them.
pub fn launch(spec: &LaunchSpec) -> Result<LaunchSummary> {
    let hosts = if spec.triples.n_node > 1 {
        let path = spec.hostfile.as_ref().ok_or(RuntimeError::HostfileRequired { n_node: spec.triples.n_node })?;
        let hosts = read_hostfile(path)?;
        if hosts.len() < spec.triples.n_node {
            return Err(RuntimeError::BadHostfile {
                path: path.clone(),
                reason: format!("{} hosts listed, {} nodes requested", hosts.len(), spec.triples.n_node),
            });
        }
        hosts
    } else {
        Vec::new()
    };
    fs::create_dir_all(&spec.comm_dir).map_err(io_err("creating comm dir"))?;
    if let Some(dir) = &spec.log_dir {
        fs::create_dir_all(dir).map_err(io_err("creating log dir"))?;
    }

    let np = spec.triples.np();
    info!("launching {np} workers ({}) for run {}", spec.triples, spec.run_id);
    let mut children: Vec<(usize, Child)> = Vec::with_capacity(np);
    for pid in 0..np {
        let mut cmd = spec.command(pid, &hosts);
        cmd.stdin(Stdio::null());
        if let Some(dir) = &spec.log_dir {
            let log = fs::File::create(dir.join(format!("worker.{pid}.log"))).map_err(io_err("creating worker log"))?;
            let err = log.try_clone().map_err(io_err("creating worker log"))?;
            cmd.stdout(log).stderr(err);
        }
        match cmd.spawn() {
            Ok(child) => children.push((pid, child)),
            Err(source) => {
                kill_all(&mut children);
                return Err(RuntimeError::SpawnFailure { pid, source });
            }
        }
    }

    let start = Instant::now();
    let mut exit_codes: Vec<Option<Option<i32>>> = vec![None; np];
    let mut pending = np;
    while pending > 0 {
        for (pid, child) in children.iter_mut() {
            if exit_codes[*pid].is_some() {
                continue;
            }
            if let Some(status) = child.try_wait().map_err(io_err("waiting for worker"))? {
                exit_codes[*pid] = Some(status.code());
                pending -= 1;
            }
        }
        if pending == 0 {
            break;
        }
        let waited = start.elapsed();
        if waited >= spec.timeout {
            let missing: Vec<usize> = (0..np).filter(|&p| exit_codes[p].is_none()).collect();
            warn!("launch timed out; killing pids {missing:?}");
            kill_all(&mut children);
            return Err(RuntimeError::Timeout { what: "worker exit".into(), waited, missing });
        }
        thread::sleep(Duration::from_millis(10));
    }
    Ok(LaunchSummary { exit_codes: exit_codes.into_iter().map(|c| c.expect("all exited")).collect() })
}
