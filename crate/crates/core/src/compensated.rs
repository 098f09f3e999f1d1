//! Compensated floating-point accumulation.
//!
//! The drift diagnostics compare quantities that are conserved exactly in real
//! arithmetic, so the accumulators here must not contribute error comparable
//! to the tolerances they certify. Two levels are provided:
//!
//! * [`NeumaierSum`] — Kahan-style running sum with Neumaier's correction,
//!   used for all long regret/utility/energy accumulations.
//! * [`expansion_sum`] — exact distillation of a small list of addends,
//!   used where the summands are error-free products and the result must be
//!   faithfully rounded (the scalar coordination instance drives weighted
//!   terms beyond 2^53 while the conserved value stays O(1)).

/// Error-free transformation of `a + b`: returns `(s, e)` with `s = fl(a+b)`
/// and `a + b = s + e` exactly (Knuth two-sum, no ordering assumption).
#[inline]
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

const SPLITTER: f64 = 134_217_729.0; // 2^27 + 1

/// Dekker split of `a` into high and low parts with `a = hi + lo` exactly.
#[inline]
fn split(a: f64) -> (f64, f64) {
    let c = SPLITTER * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

/// Error-free transformation of `a * b`: returns `(p, e)` with `p = fl(a*b)`
/// and `a * b = p + e` exactly (Dekker's product; valid while no
/// intermediate overflows, i.e. |a|,|b| well below 2^970).
#[inline]
pub fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    let e = ((ah * bh - p) + ah * bl + al * bh) + al * bl;
    (p, e)
}

/// Running compensated sum (Neumaier's variant of Kahan summation).
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator of addends.
pub fn sum_compensated(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Compensated dot product: products are formed in f64 and accumulated with
/// Neumaier correction.
pub fn dot_compensated(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = NeumaierSum::new();
    for (&x, &y) in a.iter().zip(b) {
        acc.add(x * y);
    }
    acc.value()
}

/// Exact sum of a small list of addends by repeated two-sum distillation.
///
/// Each pass replaces the list by the partial sums plus their rounding
/// errors; iteration stops once a pass produces no corrections, at which
/// point the head carries the faithfully rounded total. Intended for lists
/// whose entries are exact (e.g. outputs of [`two_product`]).
pub fn expansion_sum(parts: &mut Vec<f64>) -> f64 {
    parts.retain(|v| *v != 0.0);
    if parts.is_empty() {
        return 0.0;
    }
    for _ in 0..64 {
        let mut clean = true;
        let mut carry = parts[0];
        for i in 1..parts.len() {
            let (s, e) = two_sum(carry, parts[i]);
            parts[i - 1] = e;
            carry = s;
            if e != 0.0 {
                clean = false;
            }
        }
        let last = parts.len() - 1;
        parts[last] = carry;
        if clean {
            break;
        }
    }
    parts.iter().sum()
}

/// Accumulates exact product splits and sums them exactly.
///
/// Used for quadratic/bilinear forms on states whose magnitudes dwarf the
/// conserved value; every product enters as an error-free (hi, lo) pair.
#[derive(Debug, Default)]
pub struct ExactDot {
    parts: Vec<f64>,
}

impl ExactDot {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add_product(&mut self, a: f64, b: f64) {
        let (p, e) = two_product(a, b);
        self.parts.push(p);
        self.parts.push(e);
    }

    /// Adds the exact triple product `a * b * c` as up to four parts.
    #[inline]
    pub fn add_triple(&mut self, a: f64, b: f64, c: f64) {
        let (p, e) = two_product(a, b);
        self.add_product(p, c);
        self.add_product(e, c);
    }

    pub fn value(mut self) -> f64 {
        expansion_sum(&mut self.parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sum_recovers_rounding_error() {
        let (s, e) = two_sum(1.0, 1e-20);
        assert_eq!(s, 1.0);
        assert_eq!(e, 1e-20);
    }

    #[test]
    fn two_product_is_exact() {
        let a = 1.0 + 2f64.powi(-30);
        let b = 1.0 - 2f64.powi(-29);
        let (p, e) = two_product(a, b);
        // Reconstruct in higher precision via integer arithmetic on the 2^-60 grid.
        let scale = 2f64.powi(60);
        let exact = ((a * scale) as i128) * ((b * scale) as i128);
        let got = (p * scale) as i128 * (scale as i128) + ((e * scale * scale) as i128);
        assert_eq!(exact, got);
    }

    #[test]
    fn neumaier_handles_magnitude_jumps() {
        let mut s = NeumaierSum::new();
        s.add(1.0);
        s.add(1e100);
        s.add(1.0);
        s.add(-1e100);
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn expansion_sum_cancels_huge_terms_exactly() {
        // x^2 - y^2 + x*y for consecutive integer pairs where the exact value is 1.
        let (x, y) = (2_971_215_073.0f64, 4_807_526_976.0f64); // F_47, F_48
        let mut dot = ExactDot::new();
        dot.add_product(x, x);
        dot.add_product(-y, y);
        dot.add_product(x, y);
        assert_eq!(dot.value(), 1.0);
    }
}
