//! One worker's benchmark run and the pid-0 reporting step.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::darray::{DArray, DArrayError};
use crate::report::{self, aggregate, AggregateReport, Format, RankResult, ReportError, RunMeta};
use crate::runtime::{self, Comm, PinReport, RuntimeError};
use crate::stream::{self, StreamError};
use crate::team::ThreadPlan;

/// Added to q in the kernels only, so validation catches the drift.
pub const ENV_FAULT_Q_DELTA: &str = "PGAS_STREAM_FAULT_Q_DELTA";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Array(#[from] DArrayError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("rank result from pid {pid} is unreadable: {source}")]
    BadRankPayload { pid: usize, source: serde_json::Error },
    #[error("comm has np={comm} but the configuration needs np={config}")]
    NpMismatch { comm: usize, config: usize },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

/// What a worker produced. Only pid 0 gets the aggregate.
#[derive(Debug)]
pub struct WorkerOutcome {
    pub rank: RankResult,
    pub report: Option<AggregateReport>,
    pub report_dir: Option<PathBuf>,
}

impl WorkerOutcome {
    pub fn validated(&self) -> bool {
        self.report.as_ref().map_or(self.rank.validation.pass, |r| r.validated)
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn fault_q_delta() -> f64 {
    match std::env::var(ENV_FAULT_Q_DELTA) {
        Ok(v) => match v.parse::<f64>() {
            Ok(d) => {
                warn!("fault injection: kernels use q + {d}");
                d
            }
            Err(e) => {
                warn!("ignoring {ENV_FAULT_Q_DELTA}='{v}': {e}");
                0.0
            }
        },
        Err(_) => 0.0,
    }
}

/// Runs the benchmark on this process's piece and returns its measurements.
/// Collective: every pid of `comm` calls this with the same configuration.
pub fn measure(cfg: &RunConfig, comm: &Comm, pin: bool) -> Result<RankResult, BenchError> {
    cfg.validate()?;
    if comm.np() != cfg.np() {
        return Err(BenchError::NpMismatch { comm: comm.np(), config: cfg.np() });
    }
    let threads = cfg.triples.n_tpn;
    let pinning = if pin {
        let mut procs = comm.procs().clone();
        procs.threads_per_proc = threads;
        runtime::pin(&procs)
    } else {
        PinReport::disabled(threads, comm.pid())
    };
    info!("pid {}: {pinning}", comm.pid());
    measure_piece(cfg, comm.pid(), &comm.procs().run_id, pinning, Some(comm))
}

/// [`measure`] for one pid's piece without any communication or pinning.
/// Halos keep their fill values, which is what a sync would deliver.
pub fn measure_local(cfg: &RunConfig, pid: usize, run_id: &str) -> Result<RankResult, BenchError> {
    cfg.validate()?;
    if pid >= cfg.np() {
        return Err(RuntimeError::RankOutOfRange { pid, np: cfg.np() }.into());
    }
    measure_piece(cfg, pid, run_id, PinReport::disabled(cfg.triples.n_tpn, pid), None)
}

fn measure_piece(cfg: &RunConfig, pid: usize, run_id: &str, pinning: PinReport, comm: Option<&Comm>) -> Result<RankResult, BenchError> {
    let threads = cfg.triples.n_tpn;
    let plan = ThreadPlan::new(threads).with_pinning(pinning.clone());

    let map = cfg.map().map_err(ConfigError::from)?;
    let dims = [1, cfg.n_global()];
    let params = cfg.stream_params();
    let mut a = DArray::zeros_with(dims, &map, pid, &plan)?;
    let mut b = DArray::zeros_with(dims, &map, pid, &plan)?;
    let mut c = DArray::zeros_with(dims, &map, pid, &plan)?;
    a.fill_with(params.a0, &plan);
    b.fill_with(params.b0, &plan);
    c.fill_with(params.c0, &plan);
    if let Some(comm) = comm {
        if map.has_overlap() {
            for x in [&mut a, &mut b, &mut c] {
                x.sync_overlap(comm)?;
            }
        }
        comm.barrier("start")?;
    }
    let kernel_params = stream::StreamParams { q: params.q + fault_q_delta(), ..params };
    let wall_start = unix_now();
    let times = stream::run_kernels(a.local_view_mut(), b.local_view_mut(), c.local_view_mut(), &kernel_params, &plan)?;
    let wall_end = unix_now();

    let validation = stream::validate(a.local_view(), b.local_view(), c.local_view(), &params);
    if !validation.pass {
        warn!("pid {pid}: validation failed: {validation:?}");
    }
    let local_elements = a.local_len();
    let mut checksum = a.checksum_sum();
    checksum.merge(&b.checksum_sum());
    checksum.merge(&c.checksum_sum());
    Ok(RankResult {
        run_id: run_id.to_string(),
        pid,
        host: runtime::hostname(),
        local_elements,
        threads,
        n_trials: params.n_trials,
        bandwidths: stream::bandwidths(&times, local_elements, params.n_trials)?,
        times,
        validation: validation.into(),
        checksum: checksum.value(),
        checksum_partials: checksum.partials().to_vec(),
        wall_start,
        wall_end,
        pinning: pinning.to_string(),
    })
}

/// [`measure`], then gathers rank results on pid 0, which aggregates and
/// writes `<out>/<run_id>/{report,ranks}.<fmt>` and `table.csv`.
pub fn run_worker(cfg: &RunConfig, comm: &Comm) -> Result<WorkerOutcome, BenchError> {
    let rank = match measure(cfg, comm, cfg.pin) {
        Ok(r) => r,
        Err(e) => {
            comm.abort(&format!("pid {}: {e}", comm.pid()));
            return Err(e);
        }
    };
    let payload = serde_json::to_vec(&rank).expect("rank result serializes");
    let Some(payloads) = comm.gather("results", &payload)? else {
        return Ok(WorkerOutcome { rank, report: None, report_dir: None });
    };
    let ranks = payloads
        .iter()
        .enumerate()
        .map(|(pid, p)| serde_json::from_slice(p).map_err(|source| BenchError::BadRankPayload { pid, source }))
        .collect::<Result<Vec<RankResult>, _>>()?;
    let meta = RunMeta::new(comm.procs().run_id.clone(), cfg).map_err(ConfigError::from)?;
    let agg = aggregate(meta, ranks)?;
    let dir = cfg.out.join(&agg.meta.run_id);
    write_outputs(&dir, &agg, cfg.format)?;
    Ok(WorkerOutcome { rank, report: Some(agg), report_dir: Some(dir) })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    fs::write(path, bytes).map_err(|source| BenchError::Write { path: path.to_path_buf(), source })
}

pub fn write_outputs(dir: &Path, agg: &AggregateReport, format: Format) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Write { path: dir.to_path_buf(), source })?;
    let ext = format.extension();
    write_file(&dir.join(format!("report.{ext}")), &report::serialize(agg, format))?;
    let ranks = match format {
        Format::Json => report::ranks_to_json(&agg.ranks),
        Format::Csv => report::write_ranks(&agg.ranks),
    };
    write_file(&dir.join(format!("ranks.{ext}")), ranks.as_bytes())?;
    write_file(&dir.join("table.csv"), report::write_table(&[agg.table_row()]).as_bytes())?;
    info!("wrote report to {}", dir.display());
    Ok(())
}
