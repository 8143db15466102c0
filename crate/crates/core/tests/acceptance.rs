//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use pgas_stream::darray::{DArray, DArrayError};
use pgas_stream::dmap::{DistKind, DistSpec, Map};
use pgas_stream::report::{self, AggregateReport, RankResult, RunMeta, ValidationRecord};
use pgas_stream::runtime::{message, Comm, PollPolicy, ProcSet, RuntimeError, Triples};
use pgas_stream::stream::{self, Kernel, StreamParams, StreamTimes};
use pgas_stream::team::ThreadPlan;
use pgas_stream::config::RunConfig;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const BIN: &str = env!("CARGO_BIN_EXE_pgas-stream");

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
/// Barrier wait and, on pid 0, the gathered payloads.
type PidRun = Result<(Duration, Option<Vec<Vec<u8>>>), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cores() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

// ---------------------------------------------------------------- oracles

/// Final values after `nt` trials by stepping the four kernels on scalars.
fn stepped_values(q: f64, a0: f64, b0: f64, c0: f64, nt: usize) -> (f64, f64, f64) {
    let (mut a, mut b, mut c) = (a0, b0, c0);
    for _ in 0..nt {
        c = a;
        b = q * c;
        c = a + b;
        a = b + q * c;
    }
    (a, b, c)
}

/// Plain-loop reference run over whole vectors.
fn loop_oracle(n: usize, nt: usize, q: f64) -> [Vec<f64>; 3] {
    let mut a = vec![1.0; n];
    let mut b = vec![2.0; n];
    let mut c = vec![0.0; n];
    for _ in 0..nt {
        for j in 0..n {
            c[j] = a[j];
        }
        for j in 0..n {
            b[j] = q * c[j];
        }
        for j in 0..n {
            c[j] = a[j] + b[j];
        }
        for j in 0..n {
            a[j] = b[j] + q * c[j];
        }
    }
    [a, b, c]
}

/// Owned set of `slot` by definition.
fn owned_by_definition(n: usize, p: usize, dist: DistSpec, slot: usize) -> Vec<usize> {
    let chunk = n.div_ceil(p);
    (0..n)
        .filter(|&g| match dist.kind {
            DistKind::Block => g >= slot * chunk && g < ((slot + 1) * chunk).min(n),
            DistKind::Cyclic => g % p == slot,
            DistKind::BlockCyclic => (g / dist.block_size) % p == slot,
        })
        .collect()
}

/// Runs the library kernels on every pid's piece and reassembles the global
/// vectors through `local_to_global`.
fn run_distributed(n: usize, nt: usize, p: usize, dist: DistSpec) -> Result<[Vec<f64>; 3], String> {
    let map = Map::row(p, dist, 0).map_err(|e| e.to_string())?;
    let params = StreamParams { n_global: n, n_trials: nt, ..StreamParams::default() };
    let mut out = [vec![f64::NAN; n], vec![f64::NAN; n], vec![f64::NAN; n]];
    for pid in 0..p {
        let mk = |v: f64| -> Result<DArray, String> {
            let mut x = DArray::zeros([1, n], &map, pid).map_err(|e| e.to_string())?;
            x.fill(v);
            Ok(x)
        };
        let (mut a, mut b, mut c) = (mk(params.a0)?, mk(params.b0)?, mk(params.c0)?);
        stream::run_kernels(a.local_view_mut(), b.local_view_mut(), c.local_view_mut(), &params, &ThreadPlan::serial())
            .map_err(|e| e.to_string())?;
        for (dst, x) in out.iter_mut().zip([&a, &b, &c]) {
            for (l, &v) in x.local_view().iter().enumerate() {
                let g = map.local_to_global([1, n], pid, [0, l]).map_err(|e| e.to_string())?;
                dst[g[1]] = v;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- criteria

fn closed_form_validation() -> Outcome {
    let start = Instant::now();
    let n = 1 << 20;
    let nt = 10;
    let q = std::f64::consts::SQRT_2 - 1.0;
    let s = 2.0 * q + q * q;
    let expected = [s.powi(10), q * s.powi(9), (1.0 + q) * s.powi(9)];
    let tol = (20.0 * nt as f64 * f64::EPSILON).max(1e-10);
    let mut worst = 0.0f64;
    for p in [1, 2, 4] {
        let finals = run_distributed(n, nt, p, DistSpec::BLOCK)?;
        for (v, (xs, want)) in finals.iter().zip(expected).enumerate() {
            for (g, &x) in xs.iter().enumerate() {
                let err = ((x - want) / want).abs();
                ensure(err <= tol, || format!("np={p}: vector {v} element {g} = {x:e}, expected {want:e}, rel err {err:e}"))?;
                worst = worst.max(err);
            }
        }
    }
    // the stepped scalar recurrence agrees with the closed form as well
    let stepped = stepped_values(q, 1.0, 2.0, 0.0, nt);
    for (got, want) in [stepped.0, stepped.1, stepped.2].into_iter().zip(expected) {
        ensure(((got - want) / want).abs() <= tol, || format!("scalar recurrence {got:e} vs closed form {want:e}"))?;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), || format!("took {t:.2?}, limit 10 s"))?;
    Ok(format!("N=2^20, np 1/2/4, worst rel err {worst:.2e} <= {tol:.2e}, {t:.2?}"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let n = 1 << 16;
    let q = std::f64::consts::SQRT_2 - 1.0;
    let mut cases = 0;
    for nt in [1, 10] {
        let mine = loop_oracle(n, nt, q);
        let lib = stream::serial_oracle(&StreamParams { n_global: n, n_trials: nt, ..StreamParams::default() }, n);
        for (x, y) in mine.iter().zip([&lib.a, &lib.b, &lib.c]) {
            ensure(x.iter().zip(y.iter()).all(|(a, b)| a.to_bits() == b.to_bits()), || "library serial oracle differs from loop oracle".into())?;
        }
        for p in 1..=4 {
            for dist in [DistSpec::BLOCK, DistSpec::CYCLIC, DistSpec::block_cyclic(4)] {
                let got = run_distributed(n, nt, p, dist)?;
                for (v, (x, y)) in got.iter().zip(&mine).enumerate() {
                    if let Some(g) = (0..n).find(|&g| x[g].to_bits() != y[g].to_bits()) {
                        return Err(format!("np={p} {:?} nt={nt}: vector {v}[{g}] = {:e}, oracle {:e}", dist.kind, x[g], y[g]));
                    }
                }
                cases += 1;
            }
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(30), || format!("took {t:.2?}, limit 30 s"))?;
    Ok(format!("{cases} cases at N=2^16 bitwise identical, {t:.2?}"))
}

fn partition_fuzzing() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for case in 0..1000 {
        let p: usize = rng.gen_range(1..=8);
        let n: usize = rng.gen_range(p..=p * 50);
        let dist = match rng.gen_range(0..3) {
            0 => DistSpec::BLOCK,
            1 => DistSpec::CYCLIC,
            _ => DistSpec::block_cyclic(rng.gen_range(1..=8)),
        };
        // a halo index can sit on one neighbor only while the halo fits in a chunk
        let overlap = if dist.kind == DistKind::Block && rng.gen_bool(0.5) { rng.gen_range(1..=n.div_ceil(p)) } else { 0 };
        let ctx = || format!("case {case}: n={n} p={p} {:?}({}) overlap={overlap}", dist.kind, dist.block_size);
        let map = Map::row(p, dist, overlap).map_err(|e| format!("{}: {e}", ctx()))?;
        let dims = [1, n];
        let mut owners = vec![0u32; n];
        let mut holders = vec![0u32; n];
        for pid in 0..p {
            let ext = map.local_extent(dims, pid).map_err(|e| format!("{}: {e}", ctx()))?;
            let owned: Vec<usize> = ext.dims[1].owned.iter().collect();
            ensure(owned == owned_by_definition(n, p, dist, pid), || format!("{}: pid {pid} owned set differs from definition", ctx()))?;
            for &g in &owned {
                owners[g] += 1;
            }
            let with: Vec<usize> = ext.dims[1].with_overlap.iter().collect();
            let hi = owned.last().map_or(0, |&g| g + 1);
            let expect_with: Vec<usize> = if owned.is_empty() { vec![] } else { (owned[0]..(hi + overlap).min(n)).collect() };
            if dist.kind == DistKind::Block {
                ensure(with == expect_with, || format!("{}: pid {pid} halo extent {with:?}", ctx()))?;
            }
            for (l, &g) in with.iter().enumerate() {
                holders[g] += 1;
                let lg = map.global_to_local(dims, pid, [0, g]).map_err(|e| format!("{}: {e}", ctx()))?;
                ensure(lg == [0, l], || format!("{}: pid {pid} g={g} -> {lg:?}", ctx()))?;
                let back = map.local_to_global(dims, pid, lg).map_err(|e| format!("{}: {e}", ctx()))?;
                ensure(back == [0, g], || format!("{}: pid {pid} l={l} -> {back:?}", ctx()))?;
            }
        }
        ensure(owners.iter().all(|&c| c == 1), || format!("{}: not covered exactly once", ctx()))?;
        ensure(holders.iter().all(|&c| c <= 2), || format!("{}: an index is stored on more than two pids", ctx()))?;
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(5), || format!("took {t:.2?}, limit 5 s"))?;
    Ok(format!("1000 random maps, {t:.2?}"))
}

fn rank(pid: usize, n: usize, t: f64) -> RankResult {
    let times = StreamTimes { t_copy: t, t_scale: t, t_add: t, t_triad: t };
    RankResult {
        run_id: "acc".into(),
        pid,
        host: "h".into(),
        local_elements: n,
        threads: 1,
        n_trials: 1,
        bandwidths: stream::bandwidths(&times, n, 1).unwrap(),
        times,
        validation: ValidationRecord { pass: true, max_rel_err_a: 0.0, max_rel_err_b: 0.0, max_rel_err_c: 0.0, tolerance: 1e-10 },
        checksum: 0.0,
        checksum_partials: vec![],
        wall_start: 0.0,
        wall_end: 1.0,
        pinning: String::new(),
    }
}

fn bandwidth_exactness() -> Outcome {
    let close = |a: f64, b: f64| ((a - b) / b).abs() <= 1e-9;
    let one = StreamTimes { t_copy: 1.0, t_scale: 1.0, t_add: 1.0, t_triad: 1.0 };
    let bw = stream::bandwidths(&one, 1, 1).map_err(|e| e.to_string())?;
    let want = [16.0, 16.0, 24.0, 24.0];
    for (k, w) in Kernel::ALL.into_iter().zip(want) {
        ensure(close(bw.get(k), w), || format!("{k}: {} B/s, expected {w}", bw.get(k)))?;
    }
    let cfg = RunConfig { triples: Triples::new(1, 2, 1).unwrap(), n_per_proc: 8, ..Default::default() };
    let meta = RunMeta::new("acc", &cfg).map_err(|e| e.to_string())?;
    let single = report::aggregate(RunMeta::new("acc", &RunConfig { n_per_proc: 8, ..Default::default() }).unwrap(), vec![rank(0, 1000, 2.0)])
        .map_err(|e| e.to_string())?;
    let pair = report::aggregate(meta.clone(), vec![rank(0, 1000, 2.0), rank(1, 1000, 2.0)]).map_err(|e| e.to_string())?;
    for k in Kernel::ALL {
        let (s, d) = (single.kernel(k), pair.kernel(k));
        ensure(close(d.total_bytes, 2.0 * s.total_bytes), || format!("{k}: bytes {} vs {}", d.total_bytes, s.total_bytes))?;
        ensure(close(d.bw_mean_time, 2.0 * s.bw_mean_time), || format!("{k}: mean-time bw {} vs 2x{}", d.bw_mean_time, s.bw_mean_time))?;
    }
    let uneven = report::aggregate(meta, vec![rank(0, 1000, 1.0), rank(1, 1000, 3.0)]).map_err(|e| e.to_string())?;
    let bytes = 2.0 * 24.0 * 1000.0;
    ensure(close(uneven.triad.bw_mean_time, bytes / 2.0) && close(uneven.triad.bw_conservative, bytes / 3.0), || {
        format!("uneven ranks: mean {} conservative {}", uneven.triad.bw_mean_time, uneven.triad.bw_conservative)
    })?;
    Ok("(16,16,24,24) B/s; symmetric pair doubles bytes and bandwidth; 1 s/3 s gives B/2 and B/3".into())
}

fn run_cli(args: &[&str], comm: &Path) -> Result<(i32, String), String> {
    let o = Command::new(BIN).args(args).env("PGAS_STREAM_COMM_DIR", comm).env_remove("PGAS_STREAM_FAULT_Q_DELTA").output().map_err(|e| e.to_string())?;
    let text = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    Ok((o.status.code().unwrap_or(-1), text))
}

fn only_subdir(dir: &Path) -> Result<PathBuf, String> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir).map_err(|e| e.to_string())?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    ensure(dirs.len() == 1, || format!("expected one run directory in {}, found {dirs:?}", dir.display()))?;
    Ok(dirs.remove(0))
}

fn load_report(dir: &Path) -> Result<AggregateReport, String> {
    let text = fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?;
    report::report_from_json(&text).map_err(|e| e.to_string())
}

fn integration_run(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let out = tmp.join("integration");
    let (code, text) = run_cli(&["run", "--triples", "1,4,1", "--n-per-proc", "16777216", "--nt", "10", "--out", out.to_str().unwrap()], &tmp.join("comm"))?;
    let t = start.elapsed();
    ensure(code == 0, || format!("exit code {code}: {text}"))?;
    let dir = only_subdir(&out)?;
    let agg = load_report(&dir)?;
    ensure(agg.meta.np == 4 && agg.ranks.len() == 4, || "report does not cover 4 ranks".into())?;
    ensure(agg.validated && agg.ranks.iter().all(|r| r.validation.pass), || "a rank failed validation".into())?;
    let again = report::report_from_json(&report::report_to_json(&agg)).map_err(|e| e.to_string())?;
    ensure(again == agg, || "report JSON does not round-trip".into())?;
    let ranks = report::ranks_from_json(&fs::read_to_string(dir.join("ranks.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(ranks == agg.ranks, || "ranks.json differs from the report's ranks".into())?;
    let rows = report::parse_table(&fs::read_to_string(dir.join("table.csv")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(rows.len() == 1 && rows[0].same_bits(&agg.table_row()), || "table.csv does not round-trip".into())?;
    for k in Kernel::ALL {
        let a = agg.kernel(k);
        ensure(a.bw_conservative <= a.bw_mean_time, || format!("{k}: conservative {} > mean {}", a.bw_conservative, a.bw_mean_time))?;
    }
    ensure(t < Duration::from_secs(120), || format!("took {t:.2?}, limit 2 min"))?;
    Ok(format!("4 ranks validated, triad {:.2} GB/s (conservative {:.2}), {t:.2?} on {} core(s)", agg.triad.bw_mean_time / 1e9, agg.triad.bw_conservative / 1e9, cores()))
}

fn weak_scaling(tmp: &Path) -> Outcome {
    let out = tmp.join("sweep");
    let (code, text) = run_cli(&["sweep", "--np-list", "1,2", "--n-per-proc", "4194304", "--nt", "10", "--out", out.to_str().unwrap()], &tmp.join("comm"))?;
    ensure(code == 0, || format!("exit code {code}: {text}"))?;
    let sweep = only_subdir(&out)?;
    let mut by_np = BTreeMap::new();
    for e in fs::read_dir(&sweep).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        if p.is_dir() {
            let r = load_report(&p)?;
            by_np.insert(r.meta.np, r);
        }
    }
    let (Some(one), Some(two)) = (by_np.get(&1), by_np.get(&2)) else {
        return Err(format!("missing run reports in {}", sweep.display()));
    };
    for k in Kernel::ALL {
        ensure(two.kernel(k).total_bytes == 2.0 * one.kernel(k).total_bytes, || format!("{k}: bytes {} vs {}", two.kernel(k).total_bytes, one.kernel(k).total_bytes))?;
    }
    let rows = report::parse_table(&fs::read_to_string(sweep.join("table.csv")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(rows.iter().map(|r| r.np).collect::<Vec<_>>() == [1, 2], || "sweep table rows".into())?;
    let ratio = two.triad.bw_mean_time / one.triad.bw_mean_time;
    ensure(ratio >= 0.8, || format!("np=2 triad bandwidth is {ratio:.3}x np=1 (hard floor 0.8x) on {} core(s)", cores()))?;
    let note = if ratio >= 1.0 { "meets 1.0x" } else { "below the 1.0x informational target" };
    Ok(format!("bytes double exactly; triad np=2/np=1 = {ratio:.3}x ({note}) on {} core(s)", cores()))
}

fn procs(dir: &Path, run: &str, pid: usize, np: usize) -> ProcSet {
    ProcSet { np, pid, threads_per_proc: 1, comm_dir: dir.to_path_buf(), run_id: run.into() }
}

fn messaging_protocol(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let dir = tmp.join("msg");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;

    // barrier and gather with every non-leader pid delayed by 1 s in turn
    let np = 4;
    for slow in 0..np {
        let run = format!("delay{slow}");
        let handles: Vec<_> = (0..np)
            .map(|pid| {
                let p = procs(&dir, &run, pid, np);
                thread::spawn(move || -> PidRun {
                    let comm = Comm::register(p).map_err(|e| e.to_string())?.with_timeout(Duration::from_secs(10));
                    if pid == slow {
                        thread::sleep(Duration::from_secs(1));
                    }
                    let t = Instant::now();
                    comm.barrier("b").map_err(|e| e.to_string())?;
                    let waited = t.elapsed();
                    if pid == slow {
                        thread::sleep(Duration::from_secs(1));
                    }
                    let g = comm.gather("g", format!("from {pid}").as_bytes()).map_err(|e| e.to_string())?;
                    Ok((waited, g))
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect::<Result<_, _>>()?;
        for (pid, (waited, _)) in results.iter().enumerate() {
            if pid != slow {
                ensure(*waited >= Duration::from_millis(900), || format!("pid {pid} left the barrier before delayed pid {slow} arrived"))?;
            }
        }
        let gathered = results[0].1.clone().ok_or("pid 0 got no gather result")?;
        let want: Vec<Vec<u8>> = (0..np).map(|p| format!("from {p}").into_bytes()).collect();
        ensure(gathered == want, || format!("gather with pid {slow} delayed returned {gathered:?}"))?;
        ensure(results[1..].iter().all(|(_, g)| g.is_none()), || "non-leader received gather data".into())?;
    }

    // a missing pid is named in the timeout
    let lone = Comm::register(procs(&dir, "missing", 0, 2)).map_err(|e| e.to_string())?.with_timeout(Duration::from_millis(300));
    match lone.barrier("b") {
        Err(RuntimeError::Timeout { missing, .. }) => ensure(missing == [1], || format!("timeout names {missing:?}"))?,
        other => return Err(format!("expected a timeout naming pid 1, got {other:?}")),
    }

    // duplicate pid: the second registration fails, the run aborts
    let leader = Comm::register(procs(&dir, "dup", 0, 2)).map_err(|e| e.to_string())?.with_timeout(Duration::from_secs(10));
    let _one = Comm::register(procs(&dir, "dup", 1, 2)).map_err(|e| e.to_string())?;
    match Comm::register(procs(&dir, "dup", 1, 2)) {
        Err(RuntimeError::DuplicatePid(1)) => {}
        other => return Err(format!("duplicate registration returned {other:?}")),
    }
    let t = Instant::now();
    match leader.barrier("b") {
        Err(RuntimeError::Aborted { .. }) => ensure(t.elapsed() < Duration::from_secs(5), || "abort noticed late".into())?,
        other => return Err(format!("leader did not abort after duplicate pid: {other:?}")),
    }

    // interposed reader: every message file it can open decodes completely
    let run_dir = dir.join("atomic");
    let writer = Comm::register(procs(&dir, "atomic", 0, 1)).map_err(|e| e.to_string())?;
    let stop = Arc::new(AtomicBool::new(false));
    let reads = Arc::new(AtomicUsize::new(0));
    let go = Arc::new(Barrier::new(2));
    let reader = {
        let (stop, reads, go, run_dir) = (Arc::clone(&stop), Arc::clone(&reads), Arc::clone(&go), run_dir.clone());
        thread::spawn(move || -> Result<(), String> {
            go.wait();
            while !stop.load(Ordering::Relaxed) {
                for e in fs::read_dir(&run_dir).map_err(|e| e.to_string())?.flatten() {
                    let name = e.file_name().to_string_lossy().into_owned();
                    if !name.starts_with("msg.") {
                        continue;
                    }
                    let Ok(bytes) = fs::read(e.path()) else { continue };
                    message::decode(&bytes).map_err(|err| format!("reader saw a partial {name}: {err}"))?;
                    reads.fetch_add(1, Ordering::Relaxed);
                }
            }
            Ok(())
        })
    };
    go.wait();
    for i in 0..200u32 {
        let payload: Vec<u8> = (0..(1 << 16) + i as usize).map(|j| (j as u32 ^ i) as u8).collect();
        writer.publish(&format!("p{}", i % 3), &payload).map_err(|e| e.to_string())?;
    }
    stop.store(true, Ordering::Relaxed);
    reader.join().unwrap()?;
    let seen = reads.load(Ordering::Relaxed);
    ensure(seen > 0, || "reader never observed a message".into())?;

    // a torn file written in place is rejected, not parsed
    let env = message::encode(b"complete payload");
    fs::write(run_dir.join("msg.torn.0"), &env[..env.len() - 4]).map_err(|e| e.to_string())?;
    match writer.fetch("torn", 0) {
        Err(RuntimeError::CorruptPayload { .. }) => {}
        other => return Err(format!("torn message returned {other:?}")),
    }
    drop(writer);

    let t = start.elapsed();
    ensure(t < Duration::from_secs(30), || format!("took {t:.2?}, limit 30 s"))?;
    Ok(format!("1 s delays on each pid, timeout, duplicate abort, {seen} interposed reads all whole, {t:.2?}"))
}

fn overlap_sync(tmp: &Path) -> Outcome {
    let dir = tmp.join("halo");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let n = 22;
    let map = Map::row(4, DistSpec::BLOCK, 1).map_err(|e| e.to_string())?;
    let value = |pid: usize, g: usize| 1000.0 * (pid + 1) as f64 + g as f64;
    let handles: Vec<_> = (0..4)
        .map(|pid| {
            let (map, p) = (map.clone(), procs(&dir, "halo", pid, 4));
            thread::spawn(move || -> Result<DArray, String> {
                let comm = Comm::register(p).map_err(|e| e.to_string())?.with_timeout(Duration::from_secs(10)).with_poll(PollPolicy {
                    initial: Duration::from_millis(5),
                    max: Duration::from_millis(50),
                });
                let mut x = DArray::zeros([1, n], &map, pid).map_err(|e| e.to_string())?;
                x.fill(-1.0);
                for l in 0..x.local_len() {
                    let g = x.owned_global(l).ok_or("owned index")?;
                    x.local_view_mut()[l] = value(pid, g[1]);
                }
                x.sync_overlap(&comm).map_err(|e: DArrayError| e.to_string())?;
                Ok(x)
            })
        })
        .collect();
    let arrays: Vec<DArray> = handles.into_iter().map(|h| h.join().unwrap()).collect::<Result<_, _>>()?;
    let mut halos = 0;
    for (pid, x) in arrays.iter().enumerate() {
        for g in x.extent().halo_globals() {
            let owner = map.owner([1, n], g).map_err(|e| e.to_string())?;
            ensure(owner == pid + 1, || format!("pid {pid} halo {g:?} owned by {owner}"))?;
            let got = x.get(g).map_err(|e| e.to_string())?;
            let want = arrays[owner].get(g).map_err(|e| e.to_string())?;
            ensure(got.to_bits() == want.to_bits() && want == value(owner, g[1]), || format!("pid {pid} halo {g:?} = {got}, owner has {want}"))?;
            halos += 1;
        }
    }
    ensure(halos == 3, || format!("expected 3 halo elements, found {halos}"))?;
    Ok(format!("{halos} halo elements equal their owners' values exactly"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("closed-form validation", Box::new(closed_form_validation)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("partition fuzzing", Box::new(partition_fuzzing)),
        ("bandwidth formula exactness", Box::new(bandwidth_exactness)),
        ("integration run", Box::new(|| integration_run(tmp.path()))),
        ("weak-scaling sanity", Box::new(|| weak_scaling(tmp.path()))),
        ("messaging protocol", Box::new(|| messaging_protocol(tmp.path()))),
        ("overlap sync", Box::new(|| overlap_sync(tmp.path()))),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
