//! Small-N correctness suite behind the `validate` command.

use std::fmt;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::darray::DArray;
use crate::dmap::{DistKind, DistSpec, Map};
use crate::stream::{self, StreamParams};
use crate::team::ThreadPlan;

pub const SUITE_N: usize = 1 << 16;
pub const FUZZ_CASES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

fn check(name: impl Into<String>, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check { name: name.into(), pass: true, detail },
        Err(detail) => Check { name: name.into(), pass: false, detail },
    }
}

/// Runs the kernels on every pid's piece in turn and reassembles the global
/// A, B, C from the owned views.
pub fn distributed_finals(params: &StreamParams, map: &Map, plan: &ThreadPlan) -> Result<[Vec<f64>; 3], String> {
    let n = params.n_global;
    let dims = [1, n];
    let mut out = [vec![f64::NAN; n], vec![f64::NAN; n], vec![f64::NAN; n]];
    for &pid in map.pids() {
        let mut arrs = Vec::with_capacity(3);
        for init in [params.a0, params.b0, params.c0] {
            let mut x = DArray::zeros_with(dims, map, pid, plan).map_err(|e| e.to_string())?;
            x.fill(init);
            arrs.push(x);
        }
        let [a, b, c] = arrs.as_mut_slice() else { unreachable!() };
        stream::run_kernels(a.local_view_mut(), b.local_view_mut(), c.local_view_mut(), params, plan)
            .map_err(|e| e.to_string())?;
        for (dst, x) in out.iter_mut().zip([&*a, &*b, &*c]) {
            for (pos, &v) in x.local_view().iter().enumerate() {
                let g = x.owned_global(pos).ok_or("owned position without global index")?;
                dst[g[1]] = v;
            }
        }
    }
    Ok(out)
}

pub fn suite_dists() -> [DistSpec; 3] {
    [DistSpec::BLOCK, DistSpec::CYCLIC, DistSpec::block_cyclic(4)]
}

fn oracle_equivalence(n: usize) -> Vec<Check> {
    let mut checks = Vec::new();
    for nt in [1, 10] {
        let params = StreamParams { n_global: n, n_trials: nt, ..StreamParams::default() };
        let oracle = stream::serial_oracle(&params, n);
        for np in 1..=4 {
            for dist in suite_dists() {
                let name = format!("oracle equivalence np={np} dist={} nt={nt}", label(dist));
                let result = Map::row(np, dist, 0).map_err(|e| e.to_string()).and_then(|map| {
                    let plan = ThreadPlan::new(if np == 1 { 2 } else { 1 });
                    let finals = distributed_finals(&params, &map, &plan)?;
                    for (got, want, v) in [(&finals[0], &oracle.a, 'A'), (&finals[1], &oracle.b, 'B'), (&finals[2], &oracle.c, 'C')] {
                        if let Some(i) = (0..n).find(|&i| got[i].to_bits() != want[i].to_bits()) {
                            return Err(format!("{v}[{i}] = {:e}, oracle {:e}", got[i], want[i]));
                        }
                    }
                    Ok(format!("N={n} bitwise identical"))
                });
                checks.push(check(name, result));
            }
        }
    }
    checks
}

fn label(d: DistSpec) -> String {
    match d.kind {
        DistKind::BlockCyclic => format!("blockcyclic({})", d.block_size),
        k => k.to_string(),
    }
}

/// `q_delta` perturbs the kernels' q only.
fn closed_form(n: usize, q_delta: f64) -> Vec<Check> {
    [1, 10, 100]
        .into_iter()
        .map(|nt| {
            let params = StreamParams { n_global: n, n_trials: nt, ..StreamParams::default() };
            let kernel_params = StreamParams { q: params.q + q_delta, ..params };
            let mut a = vec![params.a0; n];
            let mut b = vec![params.b0; n];
            let mut c = vec![params.c0; n];
            let result = stream::run_kernels(&mut a, &mut b, &mut c, &kernel_params, &ThreadPlan::serial())
                .map_err(|e| e.to_string())
                .and_then(|_| {
                    let v = stream::validate(&a, &b, &c, &params);
                    let detail = format!(
                        "max rel err A={:.3e} B={:.3e} C={:.3e}, tolerance {:.3e}",
                        v.max_rel_err_a, v.max_rel_err_b, v.max_rel_err_c, v.tolerance
                    );
                    if v.pass {
                        Ok(detail)
                    } else {
                        Err(detail)
                    }
                });
            check(format!("closed form nt={nt}"), result)
        })
        .collect()
}

/// One random map instance: partition, overlap holders, round trips and
/// owner lookup against brute force.
pub fn partition_case(n: usize, p: usize, dist: DistSpec, overlap: usize) -> Result<(), String> {
    let map = Map::row(p, dist, overlap).map_err(|e| e.to_string())?;
    let dims = [1, n];
    let extents: Vec<_> = (0..p).map(|pid| map.local_extent(dims, pid).map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    let mut owners = vec![0usize; n];
    let mut holders = vec![0usize; n];
    let chunk = n.div_ceil(p);
    for (pid, ext) in extents.iter().enumerate() {
        let owned = &ext.dims[1].owned;
        if dist.kind == DistKind::Block && owned.len() > chunk {
            return Err(format!("pid {pid} owns {} > {chunk}", owned.len()));
        }
        for g in owned.iter() {
            owners[g] += 1;
            if map.owner(dims, [0, g]).map_err(|e| e.to_string())? != pid {
                return Err(format!("owner({g}) disagrees with brute force pid {pid}"));
            }
        }
        let with = &ext.dims[1].with_overlap;
        for (l, g) in with.iter().enumerate() {
            holders[g] += 1;
            let back = map.global_to_local(dims, pid, [0, g]).map_err(|e| e.to_string())?;
            if back != [0, l] {
                return Err(format!("pid {pid}: global {g} -> local {back:?}, expected {l}"));
            }
            if map.local_to_global(dims, pid, [0, l]).map_err(|e| e.to_string())? != [0, g] {
                return Err(format!("pid {pid}: local {l} does not map back to {g}"));
            }
        }
    }
    if let Some(g) = owners.iter().position(|&c| c != 1) {
        return Err(format!("global {g} owned {} times", owners[g]));
    }
    if let Some(g) = holders.iter().position(|&c| c > 2) {
        return Err(format!("global {g} stored on {} pids", holders[g]));
    }
    if dist.kind == DistKind::Cyclic {
        let lens: Vec<usize> = extents.iter().map(|e| e.dims[1].owned.len()).collect();
        if lens.iter().max().unwrap() - lens.iter().min().unwrap() > 1 {
            return Err(format!("cyclic owned sizes {lens:?} differ by more than one"));
        }
    }
    Ok(())
}

/// A random instance with `n >= p`. Overlap never exceeds the block chunk,
/// the range in which a halo index can only sit on one neighbor.
pub fn random_case(rng: &mut impl Rng) -> (usize, usize, DistSpec, usize) {
    let p: usize = rng.gen_range(1..=8);
    let n: usize = rng.gen_range(p..=p * 40);
    let dist = match rng.gen_range(0..3) {
        0 => DistSpec::BLOCK,
        1 => DistSpec::CYCLIC,
        _ => DistSpec::block_cyclic(rng.gen_range(1..=6)),
    };
    let overlap = if dist.kind == DistKind::Block && rng.gen_bool(0.5) { rng.gen_range(1..=n.div_ceil(p)) } else { 0 };
    (n, p, dist, overlap)
}

fn partition_fuzz(seed: u64, cases: usize) -> Check {
    let mut rng = StdRng::seed_from_u64(seed);
    let result = (0..cases)
        .try_for_each(|i| {
            let (n, p, dist, overlap) = random_case(&mut rng);
            partition_case(n, p, dist, overlap).map_err(|e| format!("case {i} (n={n} p={p} {} overlap={overlap}): {e}", label(dist)))
        })
        .map(|()| format!("{cases} random maps, seed {seed}"));
    check("map partition fuzzing", result)
}

/// Runs the whole suite. `q_delta` is the fault-injection perturbation.
pub fn run_suite(q_delta: f64, seed: u64) -> Vec<Check> {
    let start = Instant::now();
    let mut checks = oracle_equivalence(SUITE_N);
    checks.extend(closed_form(SUITE_N, q_delta));
    checks.push(partition_fuzz(seed, FUZZ_CASES));
    log::info!("validation suite took {:.2?}", start.elapsed());
    checks
}
