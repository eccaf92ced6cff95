//! Finite-state Markov model of the human control lag.
//!
//! The lag `τ_H(t')` of human loop `t'` takes values in a small set of
//! positive step counts and evolves as a Markov chain indexed by the human
//! loop. This module provides the stationary law, the distribution of lag
//! sums over several consecutive loops, and maximum-likelihood estimation of
//! the transition matrix from recorded lags.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::pmf::TruncatedPmf;

const ROW_SUM_TOL: f64 = 1e-12;

/// Lag states (in time steps) and their row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagChain {
    states: Vec<u32>,
    matrix: Vec<Vec<f64>>,
}

impl LagChain {
    pub fn new(states: Vec<u32>, matrix: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if states.is_empty() {
            return Err(ModelError::BadStateSet);
        }
        if states.iter().any(|&s| s == 0) {
            return Err(ModelError::InvalidChain("lag states must be at least 1 step".into()));
        }
        let mut sorted = states.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != states.len() {
            return Err(ModelError::InvalidChain("lag states must be distinct".into()));
        }
        if matrix.len() != states.len() || matrix.iter().any(|r| r.len() != states.len()) {
            return Err(ModelError::InvalidChain(format!(
                "transition matrix must be {n}x{n}",
                n = states.len()
            )));
        }
        for (i, row) in matrix.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(ModelError::InvalidChain(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ModelError::InvalidChain(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { states, matrix })
    }

    /// Two-state chain over lags `{fast, slow}` with the given staying
    /// probabilities on the diagonal.
    pub fn two_state(fast: u32, slow: u32, stay_fast: f64, stay_slow: f64) -> Result<Self, ModelError> {
        Self::new(
            vec![fast, slow],
            vec![vec![stay_fast, 1.0 - stay_fast], vec![1.0 - stay_slow, stay_slow]],
        )
    }

    /// Prolonged response: the operator tends to stay fast or slow.
    pub fn prolonged() -> Self {
        Self::two_state(5, 25, 0.9, 0.9).expect("valid preset")
    }

    /// Random response: each loop's lag is a fair coin.
    pub fn random_response() -> Self {
        Self::two_state(5, 25, 0.5, 0.5).expect("valid preset")
    }

    /// Variable response: the operator alternates between fast and slow.
    pub fn variable() -> Self {
        Self::two_state(5, 25, 0.1, 0.1).expect("valid preset")
    }

    /// Chain estimated from the cart-pole operator sessions, lags {3, 7}.
    pub fn case_study() -> Self {
        Self::new(vec![3, 7], vec![vec![0.2576, 0.7424], vec![0.4404, 0.5596]])
            .expect("valid preset")
    }

    /// Single deterministic lag.
    pub fn constant(lag: u32) -> Result<Self, ModelError> {
        Self::new(vec![lag], vec![vec![1.0]])
    }

    pub fn states(&self) -> &[u32] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.matrix[from][to]
    }

    pub fn index_of(&self, state: u32) -> Option<usize> {
        self.states.iter().position(|&s| s == state)
    }

    /// Largest lag value `τ_max`.
    pub fn max_lag(&self) -> u32 {
        *self.states.iter().max().expect("non-empty")
    }

    pub fn min_lag(&self) -> u32 {
        *self.states.iter().min().expect("non-empty")
    }

    fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for (j, &p) in self.matrix[i].iter().enumerate() {
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// Fails with the unreachable states if the chain is not irreducible.
    pub fn check_irreducible(&self) -> Result<(), ModelError> {
        for i in 0..self.len() {
            let seen = self.reachable_from(i);
            let unreachable: Vec<u32> = seen
                .iter()
                .zip(&self.states)
                .filter(|(ok, _)| !**ok)
                .map(|(_, &s)| s)
                .collect();
            if !unreachable.is_empty() {
                return Err(ModelError::Reducible {
                    from: self.states[i],
                    unreachable,
                });
            }
        }
        Ok(())
    }

    /// Draws the successor of state index `from`.
    pub fn step<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        sample_index(&self.matrix[from], rng)
    }

    /// Simulates `len` lag values starting from `initial` (a state index) or,
    /// when `None`, from the stationary distribution.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        len: usize,
        initial: Option<usize>,
        rng: &mut R,
    ) -> Result<Vec<u32>, ModelError> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return Ok(out);
        }
        let mut i = match initial {
            Some(i) => i,
            None => sample_index(&stationary(self)?, rng),
        };
        out.push(self.states[i]);
        for _ in 1..len {
            i = self.step(i, rng);
            out.push(self.states[i]);
        }
        Ok(out)
    }
}

/// Inverse-CDF draw from a discrete distribution.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative sum; take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Stationary distribution `v` with `vM = v`, `Σv = 1`.
///
/// The linear system `(Mᵀ - I) v = 0` is solved with one equation replaced
/// by the normalization, which does not need aperiodicity.
pub fn stationary(chain: &LagChain) -> Result<Vec<f64>, ModelError> {
    chain.check_irreducible()?;
    let n = chain.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = chain.matrix[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| ModelError::InvalidChain("singular stationary system".into()))?;
    let mut v: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    Ok(v)
}

/// How the lag chain evolves within a cycle of consecutive human loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagAdvance {
    /// One chain step per human loop, open or closed.
    #[default]
    EveryLoop,
    /// The lag only changes after a closed loop; open loops repeat it.
    ClosedLoopsOnly,
}

/// Joint law of the accumulated lag over `m` consecutive loops and the lag
/// state of the last loop: `P_m(k, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSumTable {
    states: Vec<u32>,
    k_max: usize,
    /// `tables[m - 1][k * |S| + s]`
    tables: Vec<Vec<f64>>,
}

impl LagSumTable {
    pub fn m_max(&self) -> usize {
        self.tables.len()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `P_m(k, s)` with `s` a state index.
    pub fn joint(&self, m: usize, k: usize, s: usize) -> f64 {
        if m == 0 || m > self.tables.len() || k > self.k_max {
            return 0.0;
        }
        self.tables[m - 1][k * self.states.len() + s]
    }

    /// Marginal `v_{k,m} = Σ_s P_m(k, s)` as a pmf over `k`.
    pub fn marginal(&self, m: usize) -> TruncatedPmf {
        let n = self.states.len();
        let table = &self.tables[m - 1];
        let probs: Vec<f64> = (0..=self.k_max)
            .map(|k| table[k * n..(k + 1) * n].iter().sum())
            .collect();
        let start = probs.iter().position(|&p| p > 0.0).unwrap_or(0);
        let mass: f64 = probs.iter().sum();
        TruncatedPmf::new(start, probs[start..].to_vec(), (1.0 - mass).max(0.0))
    }
}

/// Dynamic programme over (accumulated lag, terminal state):
/// `P_1(s_i, i) = v_i` and `P_m(k, j) = Σ_i P_{m-1}(k - s_j, i) p_{ij}`,
/// whose marginals equal the path sums over all lag sequences of length `m`.
pub fn lag_sum_table(chain: &LagChain, m_max: usize, k_max: usize) -> Result<LagSumTable, ModelError> {
    lag_sum_table_with(chain, m_max, k_max, LagAdvance::EveryLoop)
}

/// [`lag_sum_table`] with an explicit chain-advance convention.
pub fn lag_sum_table_with(
    chain: &LagChain,
    m_max: usize,
    k_max: usize,
    advance: LagAdvance,
) -> Result<LagSumTable, ModelError> {
    let v = stationary(chain)?;
    let table = lag_sum_table_from(chain, &v, m_max, k_max, advance)?;
    check_mass(table, &v)
}

/// [`lag_sum_table`] started from an arbitrary distribution of the first
/// loop's lag state. Mass beyond `k_max` is silently dropped.
pub fn lag_sum_table_from(
    chain: &LagChain,
    initial: &[f64],
    m_max: usize,
    k_max: usize,
    advance: LagAdvance,
) -> Result<LagSumTable, ModelError> {
    if m_max == 0 {
        return Err(ModelError::InvalidChain("m_max must be at least 1".into()));
    }
    let mut stepper = LagSumStepper::new(chain, initial, k_max, advance)?;
    let mut tables = vec![stepper.joint().to_vec()];
    for _ in 1..m_max {
        stepper.advance();
        tables.push(stepper.joint().to_vec());
    }
    Ok(LagSumTable {
        states: chain.states.clone(),
        k_max,
        tables,
    })
}

/// Streams `P_1, P_2, ...` keeping only the current joint table.
#[derive(Debug, Clone)]
pub struct LagSumStepper<'a> {
    chain: &'a LagChain,
    k_max: usize,
    advance: LagAdvance,
    m: usize,
    /// `joint[k * |S| + s]`
    joint: Vec<f64>,
}

impl<'a> LagSumStepper<'a> {
    /// Starts at `m = 1` with the first loop's state drawn from `initial`.
    pub fn new(
        chain: &'a LagChain,
        initial: &[f64],
        k_max: usize,
        advance: LagAdvance,
    ) -> Result<Self, ModelError> {
        let n = chain.len();
        if initial.len() != n {
            return Err(ModelError::InvalidChain(format!(
                "initial distribution has {} entries for {n} states",
                initial.len()
            )));
        }
        let mut joint = vec![0.0; (k_max + 1) * n];
        for (i, &s) in chain.states.iter().enumerate() {
            if (s as usize) <= k_max {
                joint[s as usize * n + i] += initial[i];
            }
        }
        Ok(Self { chain, k_max, advance, m: 1, joint })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    /// Marginal over the accumulated lag for the current `m`.
    pub fn marginal(&self) -> TruncatedPmf {
        let n = self.chain.len();
        let probs: Vec<f64> = (0..=self.k_max)
            .map(|k| self.joint[k * n..(k + 1) * n].iter().sum())
            .collect();
        let start = probs.iter().position(|&p| p > 0.0).unwrap_or(0);
        let mass: f64 = probs.iter().sum();
        TruncatedPmf::new(start, probs[start..].to_vec(), (1.0 - mass).max(0.0))
    }

    /// Moves from `m` to `m + 1` loops.
    pub fn advance(&mut self) {
        let chain = self.chain;
        let n = chain.len();
        let k_max = self.k_max;
        let mut next = vec![0.0; (k_max + 1) * n];
        for k in 0..=k_max {
            for i in 0..n {
                let p = self.joint[k * n + i];
                if p == 0.0 {
                    continue;
                }
                match self.advance {
                    LagAdvance::EveryLoop => {
                        for (j, &s) in chain.states.iter().enumerate() {
                            let kk = k + s as usize;
                            if kk <= k_max {
                                next[kk * n + j] += p * chain.matrix[i][j];
                            }
                        }
                    }
                    LagAdvance::ClosedLoopsOnly => {
                        let kk = k + chain.states[i] as usize;
                        if kk <= k_max {
                            next[kk * n + i] += p;
                        }
                    }
                }
            }
        }
        self.joint = next;
        self.m += 1;
    }
}

fn check_mass(table: LagSumTable, initial: &[f64]) -> Result<LagSumTable, ModelError> {
    let k_max = table.k_max;
    let start_mass: f64 = initial.iter().sum();
    for m in 1..=table.m_max() {
        let kept = table.marginal(m).mass();
        if start_mass - kept > 1e-9 {
            return Err(ModelError::Truncation { m, k_max, kept_mass: kept });
        }
    }
    Ok(table)
}

/// Maximum-likelihood transition estimate together with the raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedChain {
    pub chain: LagChain,
    pub counts: Vec<Vec<u64>>,
    /// States that were never left in the data and got a uniform row.
    pub fallback_rows: Vec<u32>,
}

/// `M[i][j] = n_ij / Σ_j n_ij` from a lag sequence over the declared states.
pub fn estimate_chain(sequence: &[u32], states: &[u32]) -> Result<EstimatedChain, ModelError> {
    estimate_chain_from(&[sequence], states)
}

/// Like [`estimate_chain`], pooling transition counts over independent
/// sequences (no transition is counted across sequence boundaries).
pub fn estimate_chain_from(sequences: &[&[u32]], states: &[u32]) -> Result<EstimatedChain, ModelError> {
    let transitions: usize = sequences.iter().map(|s| s.len().saturating_sub(1)).sum();
    if transitions == 0 {
        let len = sequences.iter().map(|s| s.len()).sum();
        return Err(ModelError::InsufficientData { len });
    }
    let n = states.len();
    if n == 0 {
        return Err(ModelError::BadStateSet);
    }
    let index = |s: u32| states.iter().position(|&x| x == s).ok_or(ModelError::UnknownState(s));
    let mut counts = vec![vec![0u64; n]; n];
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        let mut prev = index(seq[0])?;
        for &s in &seq[1..] {
            let cur = index(s)?;
            counts[prev][cur] += 1;
            prev = cur;
        }
    }
    let mut fallback_rows = Vec::new();
    let matrix: Vec<Vec<f64>> = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                log::warn!("lag state {} never left in the data; using a uniform row", states[i]);
                fallback_rows.push(states[i]);
                vec![1.0 / n as f64; n]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(EstimatedChain {
        chain: LagChain::new(states.to_vec(), matrix)?,
        counts,
        fallback_rows,
    })
}

/// Maps raw lags (seconds) to the nearest state of `state_set` (seconds),
/// ties going to the smaller state, and returns the states in time steps.
pub fn quantize_lags(raw: &[f64], state_set: &[f64], sample_period: f64) -> Result<Vec<u32>, ModelError> {
    if state_set.is_empty() || state_set.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(ModelError::BadStateSet);
    }
    let mut sorted = state_set.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(ModelError::BadStateSet);
    }
    let steps: Vec<u32> = sorted
        .iter()
        .map(|s| (s / sample_period).round().max(1.0) as u32)
        .collect();
    raw.iter()
        .map(|&lag| {
            if !(lag.is_finite() && lag >= 0.0) {
                return Err(ModelError::NegativeLag(lag));
            }
            let mut best = 0;
            let mut best_dist = (lag - sorted[0]).abs();
            for (i, s) in sorted.iter().enumerate().skip(1) {
                let d = (lag - s).abs();
                // Strictly closer wins; near-equal distances keep the smaller state.
                if d < best_dist - 1e-9 * lag.max(1.0) {
                    best = i;
                    best_dist = d;
                }
            }
            Ok(steps[best])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stationary_presets() {
        for chain in [LagChain::prolonged(), LagChain::random_response(), LagChain::variable()] {
            let v = stationary(&chain).unwrap();
            assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12);
        }
        let v = stationary(&LagChain::case_study()).unwrap();
        assert!((v[0] - 0.3723).abs() < 1e-3);
        assert!((v[1] - 0.6277).abs() < 1e-3);
        let flip = LagChain::new(vec![1, 2], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(stationary(&flip).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn reducible_chain_names_unreachable_states() {
        let chain = LagChain::new(vec![2, 4, 6], vec![
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        match stationary(&chain) {
            Err(ModelError::Reducible { from, unreachable }) => {
                assert_eq!(from, 2);
                assert_eq!(unreachable, vec![4, 6]);
            }
            other => panic!("expected reducible, got {other:?}"),
        }
    }

    #[test]
    fn chain_validation() {
        assert!(LagChain::new(vec![1, 1], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).is_err());
        assert!(LagChain::new(vec![1, 2], vec![vec![0.6, 0.5], vec![0.5, 0.5]]).is_err());
        assert!(LagChain::new(vec![0], vec![vec![1.0]]).is_err());
        assert!(LagChain::new(vec![1, 2], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn lag_sums_two_loops_uniform_chain() {
        let chain = LagChain::two_state(1, 2, 0.5, 0.5).unwrap();
        let table = lag_sum_table(&chain, 2, 4).unwrap();
        let v2 = table.marginal(2);
        // Paths (1,1), (1,2), (2,1), (2,2) each with probability 1/4.
        assert!((v2.prob(2) - 0.25).abs() < 1e-15);
        assert!((v2.prob(3) - 0.5).abs() < 1e-15);
        assert!((v2.prob(4) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lag_sums_point_mass_and_base_case() {
        let chain = LagChain::constant(4).unwrap();
        let table = lag_sum_table(&chain, 5, 20).unwrap();
        for m in 1..=5 {
            assert_eq!(table.marginal(m).prob(4 * m), 1.0);
        }
        let chain = LagChain::case_study();
        let v = stationary(&chain).unwrap();
        let table = lag_sum_table(&chain, 1, 7).unwrap();
        let v1 = table.marginal(1);
        assert_eq!(v1.prob(3), v[0]);
        assert_eq!(v1.prob(7), v[1]);
    }

    #[test]
    fn lag_sum_marginals_normalize() {
        let chain = LagChain::prolonged();
        let table = lag_sum_table(&chain, 30, 30 * 25).unwrap();
        for m in 1..=30 {
            assert!((table.marginal(m).mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lag_sum_table_detects_truncation() {
        let chain = LagChain::variable();
        assert!(matches!(
            lag_sum_table(&chain, 3, 40),
            Err(ModelError::Truncation { .. })
        ));
    }

    #[test]
    fn closed_loops_only_repeats_the_lag() {
        let chain = LagChain::variable();
        let table = lag_sum_table_with(&chain, 3, 75, LagAdvance::ClosedLoopsOnly).unwrap();
        let v3 = table.marginal(3);
        assert!((v3.prob(15) - 0.5).abs() < 1e-12);
        assert!((v3.prob(75) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn estimate_from_counts() {
        let est = estimate_chain(&[3, 7, 7, 3], &[3, 7]).unwrap();
        assert_eq!(est.chain.matrix(), &[vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert!(est.fallback_rows.is_empty());

        let est = estimate_chain(&[5, 5, 5], &[5, 25]).unwrap();
        assert_eq!(est.chain.matrix()[0], vec![1.0, 0.0]);
        assert_eq!(est.chain.matrix()[1], vec![0.5, 0.5]);
        assert_eq!(est.fallback_rows, vec![25]);

        assert!(matches!(estimate_chain(&[3], &[3, 7]), Err(ModelError::InsufficientData { len: 1 })));
        assert!(matches!(estimate_chain(&[], &[3, 7]), Err(ModelError::InsufficientData { len: 0 })));
        assert!(matches!(estimate_chain(&[3, 4], &[3, 7]), Err(ModelError::UnknownState(4))));
    }

    #[test]
    fn estimate_recovers_simulated_chain() {
        let chain = LagChain::variable();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = chain.simulate(100_000, None, &mut rng).unwrap();
        let est = estimate_chain(&seq, chain.states()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((est.chain.transition(i, j) - chain.transition(i, j)).abs() < 0.01);
            }
        }
    }

    #[test]
    fn quantization() {
        let states = [0.15, 0.35];
        assert_eq!(quantize_lags(&[0.16], &states, 0.05).unwrap(), vec![3]);
        assert_eq!(quantize_lags(&[0.25], &states, 0.05).unwrap(), vec![3]);
        assert_eq!(quantize_lags(&[0.40], &states, 0.05).unwrap(), vec![7]);
        assert_eq!(quantize_lags(&[0.26, 0.01, 9.0], &states, 0.05).unwrap(), vec![7, 3, 7]);
        // A press within the slot the weight appeared rounds to the lowest state.
        assert_eq!(quantize_lags(&[0.0], &states, 0.05).unwrap(), vec![3]);
        assert!(matches!(quantize_lags(&[-0.05], &states, 0.05), Err(ModelError::NegativeLag(_))));
        assert!(quantize_lags(&[0.2], &[], 0.05).is_err());
        assert!(quantize_lags(&[0.2], &[0.1, 0.1], 0.05).is_err());
    }
}
