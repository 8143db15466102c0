//! Exact floating-point summation (Shewchuk's non-overlapping partials).
//!
//! The result is the correctly rounded value of the exact sum, so it does
//! not depend on the order of the terms or on how they were split between
//! accumulators that were later merged.

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
    /// Sum of non-finite terms, and of everything once an intermediate overflowed.
    special: f64,
    naive: f64,
    overflowed: bool,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        self.naive += value;
        if !value.is_finite() {
            self.special += value;
            return;
        }
        let mut x = value;
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            if !hi.is_finite() {
                self.overflowed = true;
                return;
            }
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    /// Adds everything `other` accumulated.
    pub fn merge(&mut self, other: &ExactSum) {
        let naive = self.naive + other.naive;
        for &p in &other.partials {
            self.add(p);
        }
        self.naive = naive;
        self.special += other.special;
        self.overflowed |= other.overflowed;
    }

    /// Non-overlapping partials whose exact sum is the running total.
    pub fn partials(&self) -> &[f64] {
        &self.partials
    }

    pub fn from_partials(partials: &[f64]) -> Self {
        let mut s = ExactSum::new();
        for &p in partials {
            s.add(p);
        }
        s
    }

    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        if self.overflowed {
            return self.naive;
        }
        let p = &self.partials;
        let Some(&top) = p.last() else {
            return 0.0;
        };
        let mut hi = top;
        let mut lo = 0.0;
        let mut n = p.len() - 1;
        while n > 0 {
            let x = hi;
            let y = p[n - 1];
            n -= 1;
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        // round half to even across the remaining partials
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancels_exactly() {
        let s: ExactSum = [1e100, 1.0, -1e100].into_iter().collect();
        assert_eq!(s.value(), 1.0);
        let s: ExactSum = std::iter::repeat_n(0.1, 10).collect();
        assert_eq!(s.value(), 1.0);
        assert_eq!(ExactSum::new().value(), 0.0);
    }

    #[test]
    fn half_even_rounding() {
        // 1 + 2^-53 + 2^-106 rounds up, 1 + 2^-53 alone rounds to 1
        let e = f64::EPSILON / 2.0;
        assert_eq!([1.0, e].into_iter().collect::<ExactSum>().value(), 1.0);
        assert_eq!([1.0, e, e * e].into_iter().collect::<ExactSum>().value(), 1.0 + f64::EPSILON);
    }

    #[test]
    fn non_finite() {
        assert_eq!([1.0, f64::INFINITY].into_iter().collect::<ExactSum>().value(), f64::INFINITY);
        assert!([f64::INFINITY, f64::NEG_INFINITY].into_iter().collect::<ExactSum>().value().is_nan());
        assert!([1.0, f64::NAN].into_iter().collect::<ExactSum>().value().is_nan());
        assert_eq!([f64::MAX, f64::MAX].into_iter().collect::<ExactSum>().value(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn split_and_order_do_not_matter(mut xs in prop::collection::vec(-1e6f64..1e6, 0..200), cut in any::<prop::sample::Index>()) {
            let whole: ExactSum = xs.iter().copied().collect();
            let k = if xs.is_empty() { 0 } else { cut.index(xs.len() + 1) };
            let mut left: ExactSum = xs[..k].iter().copied().collect();
            let right: ExactSum = xs[k..].iter().copied().collect();
            left.merge(&right);
            prop_assert_eq!(left.value().to_bits(), whole.value().to_bits());
            xs.reverse();
            let rev: ExactSum = xs.iter().copied().collect();
            prop_assert_eq!(rev.value().to_bits(), whole.value().to_bits());
            prop_assert_eq!(ExactSum::from_partials(whole.partials()).value().to_bits(), whole.value().to_bits());
        }
    }
}
