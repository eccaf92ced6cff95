//! Probability mass functions on the positive integers with explicit
//! truncation bookkeeping.

use serde::{Deserialize, Serialize};

/// A pmf over `start, start + 1, ..., start + probs.len() - 1` whose mass
/// beyond the stored support is accounted for in `tail`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPmf {
    start: usize,
    probs: Vec<f64>,
    tail: f64,
}

impl TruncatedPmf {
    /// Builds a pmf and trims trailing zeros. The tail is taken as given.
    pub fn new(start: usize, mut probs: Vec<f64>, tail: f64) -> Self {
        while probs.last() == Some(&0.0) && probs.len() > 1 {
            probs.pop();
        }
        Self { start, probs, tail }
    }

    /// Point mass at `k`.
    pub fn point(k: usize) -> Self {
        Self::new(k, vec![1.0], 0.0)
    }

    /// First value of the stored support.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Last value of the stored support.
    pub fn end(&self) -> usize {
        self.start + self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// `P[X = k]` (zero outside the stored support).
    pub fn prob(&self, k: usize) -> f64 {
        if k < self.start {
            return 0.0;
        }
        self.probs.get(k - self.start).copied().unwrap_or(0.0)
    }

    /// Stored mass, i.e. `1 - tail` up to rounding.
    pub fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.start + i, p))
    }

    /// Mean of the stored part (the tail is ignored).
    pub fn mean(&self) -> f64 {
        self.iter().map(|(k, p)| k as f64 * p).sum()
    }

    /// `sum_k base^k P[X = k]` over the stored support.
    pub fn power_moment(&self, base: f64) -> f64 {
        // Horner from the top keeps the sum stable for base > 1.
        let inner = self.probs.iter().rev().fold(0.0, |acc, &p| acc * base + p);
        inner * base.powi(self.start as i32)
    }

    /// Shifts the support by `offset`.
    pub fn shifted(&self, offset: usize) -> Self {
        Self {
            start: self.start + offset,
            probs: self.probs.clone(),
            tail: self.tail,
        }
    }

    /// Distribution of `X + Y` for independent `X ~ self`, `Y ~ other`,
    /// keeping values up to `max_value`. Discarded mass joins the tail,
    /// together with the mass already missing from either operand.
    pub fn convolve(&self, other: &Self, max_value: usize) -> Self {
        let start = self.start + other.start;
        if start > max_value {
            return Self::new(start, vec![0.0], 1.0);
        }
        let len = (self.probs.len() + other.probs.len() - 1).min(max_value - start + 1);
        let mut out = vec![0.0; len];
        for (i, &a) in self.probs.iter().enumerate() {
            if a == 0.0 || i >= len {
                continue;
            }
            let limit = (len - i).min(other.probs.len());
            for (j, &b) in other.probs[..limit].iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        let kept: f64 = out.iter().sum();
        let full = self.mass() * other.mass();
        let tail = (1.0 - full) + (full - kept).max(0.0);
        Self::new(start, out, tail.max(0.0))
    }

    /// Total variation distance `0.5 * sum |p - q|` over the union of the
    /// stored supports.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let lo = self.start.min(other.start);
        let hi = self.end().max(other.end());
        0.5 * (lo..=hi)
            .map(|k| (self.prob(k) - other.prob(k)).abs())
            .sum::<f64>()
    }

    /// Empirical pmf from positive integer observations.
    pub fn from_samples(samples: &[usize]) -> Self {
        if samples.is_empty() {
            return Self::new(0, vec![0.0], 1.0);
        }
        let lo = *samples.iter().min().unwrap();
        let hi = *samples.iter().max().unwrap();
        let mut counts = vec![0.0; hi - lo + 1];
        for &s in samples {
            counts[s - lo] += 1.0;
        }
        let n = samples.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        Self::new(lo, counts, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_self_convolution() {
        let w = TruncatedPmf::new(1, vec![0.9, 0.1], 0.0);
        let w2 = w.convolve(&w, 100);
        assert_eq!(w2.start(), 2);
        assert!((w2.prob(2) - 0.81).abs() < 1e-15);
        assert!((w2.prob(3) - 0.18).abs() < 1e-15);
        assert!((w2.prob(4) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn truncation_moves_mass_to_tail() {
        let w = TruncatedPmf::new(1, vec![0.5, 0.5], 0.0);
        let w2 = w.convolve(&w, 3);
        assert_eq!(w2.end(), 3);
        assert!((w2.tail() - 0.25).abs() < 1e-15);
        assert!((w2.mass() + w2.tail() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn power_moment_matches_direct_sum() {
        let p = TruncatedPmf::new(3, vec![0.2, 0.3, 0.5], 0.0);
        let direct: f64 = p.iter().map(|(k, q)| 1.1f64.powi(k as i32) * q).sum();
        assert!((p.power_moment(1.1) - direct).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn convolution_commutes_and_conserves_mass(
            a in proptest::collection::vec(0.0f64..1.0, 1..12),
            b in proptest::collection::vec(0.0f64..1.0, 1..12),
            sa in 0usize..5, sb in 0usize..5,
        ) {
            let na: f64 = a.iter().sum::<f64>().max(1e-9);
            let nb: f64 = b.iter().sum::<f64>().max(1e-9);
            let pa = TruncatedPmf::new(sa, a.iter().map(|x| x / na).collect(), 0.0);
            let pb = TruncatedPmf::new(sb, b.iter().map(|x| x / nb).collect(), 0.0);
            let ab = pa.convolve(&pb, 1000);
            let ba = pb.convolve(&pa, 1000);
            prop_assert!(ab.total_variation(&ba) < 1e-12);
            prop_assert!((ab.mass() + ab.tail() - 1.0).abs() < 1e-9);
        }
    }
}
