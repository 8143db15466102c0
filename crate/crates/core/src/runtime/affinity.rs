//! Best-effort core pinning.
//!
//! Process `pid` with `n_tpn` threads is assigned the logical cores
//! `[pid * n_tpn, (pid + 1) * n_tpn)`. Logical core `k` maps to the `k`-th cpu
//! of the affinity mask the process started with; when the mask is smaller
//! than the plan, assignments wrap and the report says so.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ProcSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PinStatus {
    Pinned,
    /// More threads than available cpus; cores were reused.
    Oversubscribed { available: usize },
    Disabled,
    Unavailable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinReport {
    /// Logical core slots requested, one per thread.
    pub requested: Vec<usize>,
    /// OS cpu ids actually used, one per thread (empty unless pinned).
    pub cores: Vec<usize>,
    #[serde(flatten)]
    pub status: PinStatus,
}

impl PinReport {
    pub fn disabled(threads: usize, pid: usize) -> Self {
        PinReport { requested: plan_cores(pid, threads).collect(), cores: Vec::new(), status: PinStatus::Disabled }
    }

    pub fn is_active(&self) -> bool {
        matches!(self.status, PinStatus::Pinned | PinStatus::Oversubscribed { .. })
    }

    /// Core for worker thread `t`, if pinning is active.
    pub fn core_for_thread(&self, t: usize) -> Option<usize> {
        if !self.is_active() || self.cores.is_empty() {
            return None;
        }
        Some(self.cores[t % self.cores.len()])
    }
}

impl fmt::Display for PinReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            PinStatus::Pinned => write!(f, "pinned to cpus {:?}", self.cores),
            PinStatus::Oversubscribed { available } => {
                write!(f, "oversubscribed: slots {:?} on {available} cpus -> {:?}", self.requested, self.cores)
            }
            PinStatus::Disabled => f.write_str("pinning disabled"),
            PinStatus::Unavailable { reason } => write!(f, "pinning unavailable: {reason}"),
        }
    }
}

pub fn plan_cores(pid: usize, n_tpn: usize) -> Range<usize> {
    pid * n_tpn..(pid + 1) * n_tpn
}

/// Pins the calling thread to the process's core range and returns the
/// per-thread assignment for kernel workers. Never fails.
pub fn pin(procs: &ProcSet) -> PinReport {
    let requested: Vec<usize> = plan_cores(procs.pid, procs.threads_per_proc).collect();
    let allowed = match allowed_cpus() {
        Ok(cpus) if !cpus.is_empty() => cpus,
        Ok(_) => return unavailable(requested, "empty affinity mask".into()),
        Err(reason) => return unavailable(requested, reason),
    };
    let cores: Vec<usize> = requested.iter().map(|&slot| allowed[slot % allowed.len()]).collect();
    let status = if requested.iter().any(|&slot| slot >= allowed.len()) {
        PinStatus::Oversubscribed { available: allowed.len() }
    } else {
        PinStatus::Pinned
    };
    let mut unique = cores.clone();
    unique.sort_unstable();
    unique.dedup();
    if let Err(reason) = bind_current_thread(&unique) {
        return unavailable(requested, reason);
    }
    PinReport { requested, cores, status }
}

fn unavailable(requested: Vec<usize>, reason: String) -> PinReport {
    PinReport { requested, cores: Vec::new(), status: PinStatus::Unavailable { reason } }
}

#[cfg(target_os = "linux")]
pub fn allowed_cpus() -> Result<Vec<usize>, String> {
    // SAFETY: cpu_set_t is plain data; sched_getaffinity writes at most
    // size_of::<cpu_set_t>() bytes into it.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
            return Err(std::io::Error::last_os_error().to_string());
        }
        Ok((0..libc::CPU_SETSIZE as usize).filter(|&c| libc::CPU_ISSET(c, &set)).collect())
    }
}

#[cfg(target_os = "linux")]
pub fn bind_current_thread(cpus: &[usize]) -> Result<(), String> {
    // SAFETY: as above; the set is fully initialized before the call.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        for &c in cpus {
            libc::CPU_SET(c, &mut set);
        }
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return Err(std::io::Error::last_os_error().to_string());
        }
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
pub fn allowed_cpus() -> Result<Vec<usize>, String> {
    Err("affinity not supported on this platform".into())
}

#[cfg(not(target_os = "linux"))]
pub fn bind_current_thread(_cpus: &[usize]) -> Result<(), String> {
    Err("affinity not supported on this platform".into())
}
