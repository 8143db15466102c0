//! Static slice decomposition shared by first-touch initialization and the
//! kernels, so each thread touches the same pages in both.

use std::ops::Range;

use crate::runtime::PinReport;

/// Worker thread count and optional per-thread core assignment.
#[derive(Debug, Clone, Default)]
pub struct ThreadPlan {
    pub threads: usize,
    pub pinning: Option<PinReport>,
}

impl ThreadPlan {
    pub fn new(threads: usize) -> Self {
        ThreadPlan { threads: threads.max(1), pinning: None }
    }

    pub fn serial() -> Self {
        ThreadPlan::new(1)
    }

    pub fn with_pinning(mut self, report: PinReport) -> Self {
        self.pinning = Some(report);
        self
    }

    /// Binds the calling worker thread `t` to its assigned core, if any.
    pub fn pin_worker(&self, t: usize) {
        if let Some(core) = self.pinning.as_ref().and_then(|p| p.core_for_thread(t)) {
            if let Err(e) = crate::runtime::affinity::bind_current_thread(&[core]) {
                log::debug!("thread {t}: could not bind to cpu {core}: {e}");
            }
        }
    }
}

/// `parts` contiguous ranges covering `0..len`; sizes differ by at most one.
pub fn slice_bounds(len: usize, parts: usize) -> Vec<Range<usize>> {
    let parts = parts.max(1);
    (0..parts).map(|k| k * len / parts..(k + 1) * len / parts).collect()
}

/// Splits `buf` into disjoint mutable pieces along `bounds`.
pub fn split_mut<'a, T>(mut buf: &'a mut [T], bounds: &[Range<usize>]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(bounds.len());
    let mut consumed = 0;
    for r in bounds {
        let (head, tail) = std::mem::take(&mut buf).split_at_mut(r.end - consumed);
        out.push(&mut head[r.start - consumed..]);
        consumed = r.end;
        buf = tail;
    }
    out
}
