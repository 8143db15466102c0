//! Command-line front end: `run`, `sweep`, `validate` and the internal
//! `worker` entry point.
//!
//! Every benchmark flag can also be set through an environment variable named
//! `PGAS_STREAM_<FLAG>` (for example `PGAS_STREAM_NT=20`). Flags win over the
//! environment, which wins over `--config`, which wins over built-in defaults.
//!
//! Exit codes: 0 when every rank completed and validated, 3 when a run
//! completed but validation failed, 1 for any other failure, 2 for usage
//! errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use thiserror::Error;

use crate::bench::{self, BenchError};
use crate::config::{ConfigError, RunConfig};
use crate::dmap::DistKind;
use crate::report::{self, Format, ReportError, TableRow};
use crate::runtime::{self, LaunchSpec, RuntimeError, Triples, WorkerArgs};
use crate::selfcheck;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

/// Extra time the launcher grants workers beyond their own wait timeout.
const LAUNCH_GRACE: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("np list must be non-empty and strictly ascending, got {0:?}")]
    BadNpList(Vec<usize>),
    #[error("config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("run {run_id} produced no readable report in {dir}: {message}")]
    MissingReport { run_id: String, dir: PathBuf, message: String },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

#[derive(Debug, Parser)]
#[command(name = "pgas-stream", version, about = "Multi-process STREAM memory bandwidth benchmark on distributed arrays")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Launch one benchmark run and write its report.
    Run {
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        launch: LaunchArgs,
    },
    /// Weak-scaling sweep: one run per process count, constant elements per process.
    Sweep {
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        launch: LaunchArgs,
        /// Process counts, strictly ascending (e.g. 1,2,4).
        #[arg(long, env = "PGAS_STREAM_NP_LIST", value_delimiter = ',', required = true)]
        np_list: Vec<usize>,
    },
    /// Run the small-size correctness suite.
    Validate {
        /// Seed for the map fuzzing cases.
        #[arg(long, env = "PGAS_STREAM_SEED", default_value_t = 1)]
        seed: u64,
    },
    /// Internal: one benchmark process, started by `run`.
    #[command(hide = true)]
    Worker {
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        contract: ContractArgs,
    },
}

/// Benchmark settings. Unset values fall back to `--config`, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct BenchArgs {
    /// JSON run configuration to start from.
    #[arg(long, env = "PGAS_STREAM_CONFIG")]
    pub config: Option<PathBuf>,
    /// NODES,PPN,TPN: nodes, processes per node, threads per process [default: 1,1,1].
    #[arg(long, env = "PGAS_STREAM_TRIPLES")]
    pub triples: Option<Triples>,
    /// Elements per process; the global size is this times the process count [default: 16777216].
    #[arg(long, env = "PGAS_STREAM_N_PER_PROC")]
    pub n_per_proc: Option<usize>,
    /// Number of trials [default: 10]. Once memory-bound, hold the size fixed and raise this.
    #[arg(long, env = "PGAS_STREAM_NT")]
    pub nt: Option<usize>,
    /// Scale factor [default: sqrt(2)-1].
    #[arg(long, env = "PGAS_STREAM_Q", allow_negative_numbers = true)]
    pub q: Option<f64>,
    /// Distribution of the column dimension: block, cyclic or blockcyclic [default: block].
    #[arg(long, env = "PGAS_STREAM_DIST")]
    pub dist: Option<DistKind>,
    /// Block size for blockcyclic [default: 1].
    #[arg(long, env = "PGAS_STREAM_BLOCK_SIZE")]
    pub block_size: Option<usize>,
    /// Halo width for block distributions [default: 0].
    #[arg(long, env = "PGAS_STREAM_OVERLAP")]
    pub overlap: Option<usize>,
    /// Pin threads to cores (default).
    #[arg(long, overrides_with = "no_pin")]
    pub pin: bool,
    /// Do not pin threads.
    #[arg(long, env = "PGAS_STREAM_NO_PIN", overrides_with = "pin")]
    pub no_pin: bool,
    /// Output directory [default: pgas-stream-out].
    #[arg(long, env = "PGAS_STREAM_OUT")]
    pub out: Option<PathBuf>,
    /// Report format: json or csv [default: json].
    #[arg(long, env = "PGAS_STREAM_FORMAT")]
    pub format: Option<Format>,
    /// Seconds any process waits on another before giving up [default: 300].
    #[arg(long, env = "PGAS_STREAM_TIMEOUT")]
    pub timeout: Option<f64>,
}

impl BenchArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.triples {
            cfg.triples = v;
        }
        if let Some(v) = self.n_per_proc {
            cfg.n_per_proc = v;
        }
        if let Some(v) = self.nt {
            cfg.n_trials = v;
        }
        if let Some(v) = self.q {
            cfg.q = v;
        }
        if let Some(v) = self.dist {
            cfg.dist = v;
        }
        if let Some(v) = self.block_size {
            cfg.block_size = v;
        }
        if let Some(v) = self.overlap {
            cfg.overlap = v;
        }
        if self.pin {
            cfg.pin = true;
        }
        if self.no_pin {
            cfg.pin = false;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
        if let Some(v) = self.timeout {
            cfg.timeout_secs = v;
        }
        Ok(cfg)
    }
}

/// Where workers meet and how they are started.
#[derive(Debug, Clone, Default, Args)]
pub struct LaunchArgs {
    /// Shared directory for coordination files [default: <tmp>/pgas-stream].
    #[arg(long, env = "PGAS_STREAM_COMM_DIR")]
    pub comm_dir: Option<PathBuf>,
    /// One host per line; required when NODES > 1.
    #[arg(long, env = "PGAS_STREAM_HOSTFILE")]
    pub hostfile: Option<PathBuf>,
    /// Remote command prefix for multi-node runs; {host} is substituted.
    #[arg(long, env = "PGAS_STREAM_REMOTE_EXEC")]
    pub remote_exec: Option<String>,
}

/// Worker contract flags, passed by the launcher.
#[derive(Debug, Clone, Default, Args)]
pub struct ContractArgs {
    #[arg(long, env = "PGAS_STREAM_PID")]
    pub pid: Option<usize>,
    #[arg(long, env = "PGAS_STREAM_NP")]
    pub np: Option<usize>,
    #[arg(long, env = "PGAS_STREAM_COMM_DIR")]
    pub comm_dir: Option<PathBuf>,
    #[arg(long, env = "PGAS_STREAM_RUN_ID")]
    pub run_id: Option<String>,
    #[arg(long, env = "PGAS_STREAM_THREADS")]
    pub threads: Option<usize>,
}

impl From<ContractArgs> for WorkerArgs {
    fn from(c: ContractArgs) -> Self {
        WorkerArgs { pid: c.pid, np: c.np, comm_dir: c.comm_dir, run_id: c.run_id, threads: c.threads }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::ConfigFile { path: path.into(), message: e.to_string() })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        CliError::ConfigFile { path: path.into(), message: format!("line {}, field '{field}': {inner}", inner.line()) }
    })
}

/// Result of one launched run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub exit_codes: Vec<Option<i32>>,
    pub row: Option<TableRow>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.exit_codes.iter().all(|c| *c == Some(EXIT_OK)) && self.row.is_some_and(|r| r.validated) {
            EXIT_OK
        } else if self.exit_codes.iter().all(|c| matches!(*c, Some(EXIT_OK) | Some(EXIT_VALIDATION))) && self.row.is_some() {
            EXIT_VALIDATION
        } else {
            EXIT_FAILURE
        }
    }
}

fn read_row(dir: &Path) -> Result<TableRow, String> {
    let text = fs::read_to_string(dir.join("table.csv")).map_err(|e| e.to_string())?;
    let rows = report::parse_table(&text).map_err(|e| e.to_string())?;
    rows.into_iter().next().ok_or_else(|| "empty table".into())
}

/// Launches the workers of one run and collects pid 0's table row.
pub fn cmd_run(cfg: &RunConfig, launch: &LaunchArgs) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let run_id = runtime::new_run_id();
    let dir = cfg.out.join(&run_id);
    let comm_dir = launch.comm_dir.clone().unwrap_or_else(runtime::default_comm_dir);
    let program = std::env::current_exe().map_err(|source| CliError::Io { context: "locating own executable".into(), source })?;

    let mut spec = LaunchSpec::local(cfg.triples, program, &comm_dir, &run_id);
    spec.program_args = std::iter::once("worker".to_string()).chain(cfg.to_args()).collect();
    spec.timeout = cfg.timeout() + LAUNCH_GRACE;
    spec.log_dir = Some(dir.join("logs"));
    spec.hostfile = launch.hostfile.clone();
    if let Some(r) = &launch.remote_exec {
        spec.remote_exec = r.clone();
    }
    info!("run {run_id}: {} processes, {} elements each", cfg.np(), cfg.n_per_proc);
    let summary = runtime::launch(&spec);
    if let Err(e) = fs::remove_dir_all(comm_dir.join(&run_id)) {
        log::debug!("leaving comm files of {run_id}: {e}");
    }
    let summary = summary?;
    let row = match read_row(&dir) {
        Ok(row) => Some(row),
        Err(message) => {
            error!("{}", CliError::MissingReport { run_id: run_id.clone(), dir: dir.clone(), message });
            None
        }
    };
    for (pid, code) in summary.exit_codes.iter().enumerate() {
        if *code != Some(EXIT_OK) {
            error!("pid {pid} exited with {code:?}; see {}", dir.join("logs").join(format!("worker.{pid}.log")).display());
        }
    }
    Ok(RunOutcome { run_id, dir, exit_codes: summary.exit_codes, row })
}

pub fn check_np_list(np_list: &[usize]) -> Result<(), CliError> {
    if np_list.is_empty() || np_list.contains(&0) || np_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::BadNpList(np_list.to_vec()));
    }
    Ok(())
}

/// Runs one configuration per process count and writes the combined table.
/// Failed points stay in the table as NaN rows with `validated=false`.
pub fn cmd_sweep(base: &RunConfig, launch: &LaunchArgs, np_list: &[usize]) -> Result<(PathBuf, Vec<RunOutcome>, Vec<TableRow>), CliError> {
    check_np_list(np_list)?;
    base.validate()?;
    let dir = base.out.join(format!("sweep-{}", runtime::new_run_id()));
    let mut outcomes = Vec::new();
    let mut rows = Vec::new();
    for &np in np_list {
        let triples = Triples::new(1, np, base.triples.n_tpn).map_err(|_| CliError::BadNpList(np_list.to_vec()))?;
        let cfg = RunConfig { triples, out: dir.clone(), ..base.clone() };
        match cmd_run(&cfg, launch) {
            Ok(o) => {
                rows.push(o.row.unwrap_or_else(|| TableRow::failed(triples, cfg.n_per_proc, cfg.n_trials)));
                outcomes.push(o);
            }
            Err(e) => {
                error!("sweep point np={np} failed: {e}");
                rows.push(TableRow::failed(triples, cfg.n_per_proc, cfg.n_trials));
            }
        }
    }
    let table = report::to_table(&rows)?;
    fs::create_dir_all(&dir).map_err(|source| CliError::Io { context: format!("creating {}", dir.display()), source })?;
    fs::write(dir.join("table.csv"), report::write_table(&table))
        .map_err(|source| CliError::Io { context: "writing sweep table".into(), source })?;
    Ok((dir, outcomes, table))
}

pub fn cmd_validate(seed: u64) -> i32 {
    let delta = std::env::var(bench::ENV_FAULT_Q_DELTA).ok().and_then(|v| v.parse().ok()).unwrap_or(0.0);
    let checks = selfcheck::run_suite(delta, seed);
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} checks, {failed} failed", checks.len());
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}

/// One benchmark process. Exits 3 if its own data (or, on pid 0, any rank's)
/// failed validation.
pub fn cmd_worker(bench_args: &BenchArgs, contract: ContractArgs) -> Result<i32, CliError> {
    let mut cfg = bench_args.resolve()?;
    let args = WorkerArgs::from(contract);
    if let Some(t) = args.threads {
        cfg.triples.n_tpn = t;
    }
    let comm = runtime::init(&args)?.with_timeout(cfg.timeout());
    if cfg.np() != comm.np() {
        // started by hand rather than by `run`: the contract decides the shape
        cfg.triples = Triples { n_node: 1, n_ppn: comm.np(), n_tpn: cfg.triples.n_tpn };
    }
    let outcome = bench::run_worker(&cfg, &comm)?;
    if let Some(dir) = &outcome.report_dir {
        println!("report: {}", dir.display());
    }
    if args.np.is_none() {
        let _ = comm.cleanup();
    }
    Ok(if outcome.validated() { EXIT_OK } else { EXIT_VALIDATION })
}

fn print_row(row: &TableRow) {
    let gb = |x: f64| x / 1e9;
    println!(
        "np={} N={} Nt={} GB/s copy={:.3} scale={:.3} add={:.3} triad={:.3} (conservative triad {:.3}) validated={}",
        row.np,
        row.n_global,
        row.n_trials,
        gb(row.bw.bw_copy),
        gb(row.bw.bw_scale),
        gb(row.bw.bw_add),
        gb(row.bw.bw_triad),
        gb(row.bw_cons.bw_triad),
        row.validated
    );
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("PGAS_STREAM_LOG", level)).try_init();
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Run { bench, launch } => bench.resolve().and_then(|cfg| cmd_run(&cfg, &launch)).map(|o| {
            if let Some(row) = &o.row {
                print_row(row);
            }
            println!("report: {}", o.dir.display());
            o.exit_code()
        }),
        Command::Sweep { bench, launch, np_list } => bench.resolve().and_then(|cfg| cmd_sweep(&cfg, &launch, &np_list)).map(|(dir, outcomes, table)| {
            for row in &table {
                print_row(row);
            }
            println!("table: {}", dir.join("table.csv").display());
            let all_ran = outcomes.len() == table.len();
            outcomes.iter().map(RunOutcome::exit_code).chain((!all_ran).then_some(EXIT_FAILURE)).max().unwrap_or(EXIT_OK)
        }),
        Command::Validate { seed } => Ok(cmd_validate(seed)),
        Command::Worker { bench, contract } => cmd_worker(&bench, contract),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("pgas-stream").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn run_flags_resolve() {
        let cli = parse(&["run", "--triples", "1,4,2", "--nt", "3", "--q", "-0.5", "--dist", "blockcyclic", "--block-size", "4", "--no-pin", "--format", "csv"]);
        let Command::Run { bench, .. } = cli.command else { panic!() };
        let cfg = bench.resolve().unwrap();
        assert_eq!(cfg.triples, Triples::new(1, 4, 2).unwrap());
        assert_eq!(cfg.n_trials, 3);
        assert_eq!(cfg.q, -0.5);
        assert_eq!(cfg.dist, DistKind::BlockCyclic);
        assert_eq!(cfg.block_size, 4);
        assert!(!cfg.pin);
        assert_eq!(cfg.format, Format::Csv);
        assert_eq!(cfg.n_per_proc, crate::config::DEFAULT_N_PER_PROC);
    }

    #[test]
    fn worker_args_round_trip_config() {
        let cfg = RunConfig {
            triples: Triples::new(2, 3, 4).unwrap(),
            n_per_proc: 77,
            q: 0.1 + 0.2,
            dist: DistKind::Cyclic,
            pin: false,
            format: Format::Csv,
            timeout_secs: 1.5,
            ..Default::default()
        };
        let args: Vec<String> = ["pgas-stream", "worker"].iter().map(|s| s.to_string()).chain(cfg.to_args()).collect();
        let Command::Worker { bench, .. } = Cli::try_parse_from(args).unwrap().command else { panic!() };
        assert_eq!(bench.resolve().unwrap(), cfg);
    }

    #[test]
    fn config_file_is_base_and_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let base = RunConfig { n_per_proc: 4096, n_trials: 7, ..Default::default() };
        fs::write(&path, serde_json::to_string(&base).unwrap()).unwrap();
        let cli = parse(&["run", "--config", path.to_str().unwrap(), "--nt", "2"]);
        let Command::Run { bench, .. } = cli.command else { panic!() };
        let cfg = bench.resolve().unwrap();
        assert_eq!((cfg.n_per_proc, cfg.n_trials), (4096, 2));

        fs::write(&path, "{\n \"n_trials\": \"x\"\n}").unwrap();
        let err = load_config(&path).unwrap_err().to_string();
        assert!(err.contains("n_trials"), "{err}");
    }

    #[test]
    fn np_list_must_ascend() {
        assert!(check_np_list(&[1]).is_ok());
        assert!(check_np_list(&[1, 2, 4]).is_ok());
        assert!(matches!(check_np_list(&[2, 1]), Err(CliError::BadNpList(_))));
        assert!(check_np_list(&[]).is_err());
        assert!(check_np_list(&[1, 1]).is_err());
        let cli = parse(&["sweep", "--np-list", "1,2,4"]);
        let Command::Sweep { np_list, .. } = cli.command else { panic!() };
        assert_eq!(np_list, vec![1, 2, 4]);
    }

    #[test]
    fn zero_trials_rejected_before_launch() {
        let cfg = RunConfig { n_trials: 0, ..Default::default() };
        assert!(matches!(cmd_run(&cfg, &LaunchArgs::default()), Err(CliError::Config(ConfigError::ZeroTrials))));
    }

    #[test]
    fn worker_without_run_id_is_missing_parameter() {
        let err = cmd_worker(&BenchArgs::default(), ContractArgs { pid: Some(0), np: Some(1), ..Default::default() }).unwrap_err();
        assert!(matches!(err, CliError::Runtime(RuntimeError::MissingParameter("run-id"))), "{err}");
    }

    #[test]
    fn outcome_exit_codes() {
        let row = TableRow::failed(Triples::default(), 1, 1);
        let ok = RunOutcome { run_id: "r".into(), dir: PathBuf::new(), exit_codes: vec![Some(0)], row: Some(TableRow { validated: true, ..row }) };
        assert_eq!(ok.exit_code(), EXIT_OK);
        let invalid = RunOutcome { exit_codes: vec![Some(3), Some(0)], row: Some(row), ..ok.clone() };
        assert_eq!(invalid.exit_code(), EXIT_VALIDATION);
        let crashed = RunOutcome { exit_codes: vec![Some(0), None], ..ok.clone() };
        assert_eq!(crashed.exit_code(), EXIT_FAILURE);
        let no_report = RunOutcome { row: None, ..ok };
        assert_eq!(no_report.exit_code(), EXIT_FAILURE);
    }
}
