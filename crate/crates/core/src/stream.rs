//! STREAM kernels on local views.
//!
//! One trial runs, in order:
//!
//! ```text
//! copy:  C <- A
//! scale: B <- q C
//! add:   C <- A + B
//! triad: A <- B + q C
//! ```
//!
//! Each kernel is timed on its own and times are summed over trials. With
//! `s = 2q + q^2` and `A` starting at `a0`, after `Nt` trials every element
//! satisfies `A = s^Nt a0`, `B = q s^(Nt-1) a0` and `C = (1 + q) s^(Nt-1) a0`.
//! The default `q = sqrt(2) - 1` makes `s = 1`.

use std::fmt;
use std::sync::Barrier;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::team::{slice_bounds, split_mut, ThreadPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("vector lengths differ: A={a}, B={b}, C={c}")]
    LengthMismatch { a: usize, b: usize, c: usize },
    #[error("{kernel} time is {time}; bandwidth needs a positive time")]
    ZeroTime { kernel: Kernel, time: f64 },
}

pub fn default_q() -> f64 {
    std::f64::consts::SQRT_2 - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Copy,
    Scale,
    Add,
    Triad,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Kernel::Copy, Kernel::Scale, Kernel::Add, Kernel::Triad];

    /// Bytes moved per element per trial: two 8-byte streams for copy and
    /// scale, three for add and triad.
    pub fn bytes_per_element(self) -> u64 {
        match self {
            Kernel::Copy | Kernel::Scale => 16,
            Kernel::Add | Kernel::Triad => 24,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Copy => "copy",
            Kernel::Scale => "scale",
            Kernel::Add => "add",
            Kernel::Triad => "triad",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamParams {
    pub n_global: usize,
    pub n_trials: usize,
    pub q: f64,
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub threads: usize,
}

impl Default for StreamParams {
    fn default() -> Self {
        StreamParams { n_global: 1 << 24, n_trials: 10, q: default_q(), a0: 1.0, b0: 2.0, c0: 0.0, threads: 1 }
    }
}

impl StreamParams {
    pub fn growth(&self) -> f64 {
        2.0 * self.q + self.q * self.q
    }
}

/// Seconds accumulated per kernel over all trials.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamTimes {
    pub t_copy: f64,
    pub t_scale: f64,
    pub t_add: f64,
    pub t_triad: f64,
}

impl StreamTimes {
    pub fn get(&self, k: Kernel) -> f64 {
        match k {
            Kernel::Copy => self.t_copy,
            Kernel::Scale => self.t_scale,
            Kernel::Add => self.t_add,
            Kernel::Triad => self.t_triad,
        }
    }

    fn slot(&mut self, k: Kernel) -> &mut f64 {
        match k {
            Kernel::Copy => &mut self.t_copy,
            Kernel::Scale => &mut self.t_scale,
            Kernel::Add => &mut self.t_add,
            Kernel::Triad => &mut self.t_triad,
        }
    }

    pub fn add(&mut self, k: Kernel, secs: f64) {
        *self.slot(k) += secs;
    }
}

/// Bytes per second per kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub bw_copy: f64,
    pub bw_scale: f64,
    pub bw_add: f64,
    pub bw_triad: f64,
}

impl Bandwidths {
    pub fn get(&self, k: Kernel) -> f64 {
        match k {
            Kernel::Copy => self.bw_copy,
            Kernel::Scale => self.bw_scale,
            Kernel::Add => self.bw_add,
            Kernel::Triad => self.bw_triad,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Kernel) -> f64) -> Self {
        Bandwidths { bw_copy: f(Kernel::Copy), bw_scale: f(Kernel::Scale), bw_add: f(Kernel::Add), bw_triad: f(Kernel::Triad) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub max_rel_err_a: f64,
    pub max_rel_err_b: f64,
    pub max_rel_err_c: f64,
    pub tolerance: f64,
}

/// max(1e-10, 20 Nt eps).
pub fn tolerance(n_trials: usize) -> f64 {
    (20.0 * n_trials as f64 * f64::EPSILON).max(1e-10)
}

/// Closed-form element values of A, B and C after `params.n_trials` trials.
pub fn expected_values(params: &StreamParams) -> (f64, f64, f64) {
    let nt = params.n_trials;
    if nt == 0 {
        return (params.a0, params.b0, params.c0);
    }
    let s = params.growth();
    let prev = pow(s, nt - 1) * params.a0;
    (pow(s, nt) * params.a0, params.q * prev, (1.0 + params.q) * prev)
}

fn pow(x: f64, n: usize) -> f64 {
    match i32::try_from(n) {
        Ok(n) => x.powi(n),
        Err(_) => x.powf(n as f64),
    }
}

#[inline]
fn copy(a: &[f64], c: &mut [f64]) {
    for (c, a) in c.iter_mut().zip(a) {
        *c = *a;
    }
}

#[inline]
fn scale(c: &[f64], b: &mut [f64], q: f64) {
    for (b, c) in b.iter_mut().zip(c) {
        *b = q * *c;
    }
}

#[inline]
fn add(a: &[f64], b: &[f64], c: &mut [f64]) {
    for ((c, a), b) in c.iter_mut().zip(a).zip(b) {
        *c = *a + *b;
    }
}

#[inline]
fn triad(b: &[f64], c: &[f64], a: &mut [f64], q: f64) {
    for ((a, b), c) in a.iter_mut().zip(b).zip(c) {
        *a = *b + q * *c;
    }
}

fn apply(k: Kernel, a: &mut [f64], b: &mut [f64], c: &mut [f64], q: f64) {
    match k {
        Kernel::Copy => copy(a, c),
        Kernel::Scale => scale(c, b, q),
        Kernel::Add => add(a, b, c),
        Kernel::Triad => triad(b, c, a, q),
    }
}

pub fn run_kernels(a: &mut [f64], b: &mut [f64], c: &mut [f64], params: &StreamParams, plan: &ThreadPlan) -> Result<StreamTimes, StreamError> {
    run_kernels_observed(a, b, c, params, plan, |_, _| {})
}

/// [`run_kernels`], calling `observe(trial, times_so_far)` after every trial.
pub fn run_kernels_observed(
    a: &mut [f64],
    b: &mut [f64],
    c: &mut [f64],
    params: &StreamParams,
    plan: &ThreadPlan,
    mut observe: impl FnMut(usize, &StreamTimes),
) -> Result<StreamTimes, StreamError> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(StreamError::LengthMismatch { a: a.len(), b: b.len(), c: c.len() });
    }
    let q = params.q;
    let mut times = StreamTimes::default();

    if plan.threads <= 1 {
        for trial in 0..params.n_trials {
            for k in Kernel::ALL {
                let tic = Instant::now();
                apply(k, a, b, c, q);
                times.add(k, tic.elapsed().as_secs_f64());
            }
            observe(trial, &times);
        }
        return Ok(times);
    }

    // Workers own fixed slices. Each phase is bracketed by two barrier
    // crossings; the second one is the join that ends the timed interval.
    let bounds = slice_bounds(a.len(), plan.threads);
    let barrier = Barrier::new(plan.threads + 1);
    let n_trials = params.n_trials;
    thread::scope(|s| {
        let pieces = split_mut(a, &bounds).into_iter().zip(split_mut(b, &bounds)).zip(split_mut(c, &bounds));
        for (t, ((a, b), c)) in pieces.enumerate() {
            let barrier = &barrier;
            s.spawn(move || {
                plan.pin_worker(t);
                for _ in 0..n_trials {
                    for k in Kernel::ALL {
                        barrier.wait();
                        apply(k, a, b, c, q);
                        barrier.wait();
                    }
                }
            });
        }
        for trial in 0..n_trials {
            for k in Kernel::ALL {
                let tic = Instant::now();
                barrier.wait();
                barrier.wait();
                times.add(k, tic.elapsed().as_secs_f64());
            }
            observe(trial, &times);
        }
    });
    Ok(times)
}

fn max_rel_err(values: &[f64], expected: f64) -> f64 {
    values.iter().fold(0.0f64, |worst, &x| {
        let err = if expected == 0.0 { (x - expected).abs() } else { ((x - expected) / expected).abs() };
        if err.is_nan() {
            f64::INFINITY
        } else {
            worst.max(err)
        }
    })
}

/// Compares every element against the closed-form values.
pub fn validate(a: &[f64], b: &[f64], c: &[f64], params: &StreamParams) -> ValidationReport {
    let (ea, eb, ec) = expected_values(params);
    let tol = tolerance(params.n_trials);
    let (ra, rb, rc) = (max_rel_err(a, ea), max_rel_err(b, eb), max_rel_err(c, ec));
    ValidationReport {
        pass: ra <= tol && rb <= tol && rc <= tol,
        max_rel_err_a: ra,
        max_rel_err_b: rb,
        max_rel_err_c: rc,
        tolerance: tol,
    }
}

/// 16 Nt N / t for copy and scale, 24 Nt N / t for add and triad.
pub fn bandwidths(times: &StreamTimes, n_elements: usize, n_trials: usize) -> Result<Bandwidths, StreamError> {
    for k in Kernel::ALL {
        let t = times.get(k);
        if !(t > 0.0) || !t.is_finite() {
            return Err(StreamError::ZeroTime { kernel: k, time: t });
        }
    }
    Ok(Bandwidths::from_fn(|k| bytes_moved(k, n_elements, n_trials) / times.get(k)))
}

pub fn bytes_moved(k: Kernel, n_elements: usize, n_trials: usize) -> f64 {
    k.bytes_per_element() as f64 * n_trials as f64 * n_elements as f64
}

/// Reference result of a serial run.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// `(A, B, C)` of element 0 after each trial.
    pub trajectory: Vec<[f64; 3]>,
}

/// Plain indexed loops over whole vectors, one thread.
pub fn serial_oracle(params: &StreamParams, n: usize) -> OracleRun {
    let q = params.q;
    let mut a = vec![params.a0; n];
    let mut b = vec![params.b0; n];
    let mut c = vec![params.c0; n];
    let mut trajectory = Vec::with_capacity(params.n_trials);
    for _ in 0..params.n_trials {
        for i in 0..n {
            c[i] = a[i];
        }
        for i in 0..n {
            b[i] = q * c[i];
        }
        for i in 0..n {
            c[i] = a[i] + b[i];
        }
        for i in 0..n {
            a[i] = b[i] + q * c[i];
        }
        if n > 0 {
            trajectory.push([a[0], b[0], c[0]]);
        }
    }
    OracleRun { a, b, c, trajectory }
}
