//! Distribution of the cycle length `L`: the number of slots between two
//! consecutive closed human control loops.
//!
//! A cycle consists of `M` human loops (the first `M - 1` open, the last
//! closed). Each loop spends `τ_SH` slots in the sensor-to-human uplink, `τ_H`
//! slots of human lag and one slot on the human-to-actuator downlink, so
//!
//! ```text
//! L = Σ τ_SH + Σ τ_H + M,   P[M = m] = (1 - p̄_H) p̄_H^{m-1}.
//! ```
//!
//! [`CycleModel`] keeps this structure and evaluates `E[z^L]` in closed form;
//! [`CycleDistributions`] holds the truncated pmf `z_l` and its conditionals.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CycleError, LinkError};
use crate::harq::ShDelayPmf;
use crate::humanmodel::{stationary, LagAdvance, LagChain, LagSumStepper};
use crate::linkmodel::{expected_error_prob, CodeConfig, LinkBudget};
use crate::pmf::TruncatedPmf;

/// Default bound on the total mass cut off by truncation.
pub const DEFAULT_TAIL_EPS: f64 = 1e-9;

/// Upper limit on `L_max` before giving up with a truncation error.
pub const DEFAULT_MAX_LEN: usize = 200_000;

/// `p̄_H = E[ε(γ_HA)]`: an HA attempt fails and the human loop stays open.
pub fn open_human_loop_prob(ha: &LinkBudget, code: &CodeConfig) -> Result<f64, LinkError> {
    expected_error_prob(ha, code)
}

/// Smallest `m_max` with `p̄_H^{m_max} < tail_eps`.
pub fn loop_count_horizon(p_h: f64, tail_eps: f64) -> Result<usize, CycleError> {
    if !(0.0..1.0).contains(&p_h) {
        return Err(CycleError::Divergent { p_h });
    }
    if p_h == 0.0 {
        return Ok(1);
    }
    Ok(((tail_eps.ln() / p_h.ln()).floor() as usize + 1).max(1))
}

/// `P[M = m] = (1 - p̄_H) p̄_H^{m-1}` for `m = 1..=m_max`.
pub fn loop_count_pmf(p_h: f64, m_max: usize) -> Result<TruncatedPmf, CycleError> {
    if !(0.0..1.0).contains(&p_h) {
        return Err(CycleError::Divergent { p_h });
    }
    if m_max == 0 {
        return Err(CycleError::ZeroLoops);
    }
    let probs: Vec<f64> = (0..m_max).map(|i| (1.0 - p_h) * p_h.powi(i as i32)).collect();
    Ok(TruncatedPmf::new(1, probs, p_h.powi(m_max as i32)))
}

/// `w_{k,m}`: the pmf of the sum of `m` independent SH delays, kept up to
/// `k_max`.
pub fn sh_sum_conditional(w: &ShDelayPmf, m: usize, k_max: usize) -> Result<TruncatedPmf, CycleError> {
    if m == 0 {
        return Err(CycleError::ZeroLoops);
    }
    if k_max < m {
        return Err(CycleError::Truncation { achieved: 1.0, target: 0.0 });
    }
    let base = w.truncated(k_max);
    let mut sum = base.clone();
    for _ in 1..m {
        sum = sum.convolve(&base, k_max);
    }
    Ok(sum)
}

/// Structural description of the cycle: enough to evaluate `E[z^L]` exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleModel {
    sh: ShDelayPmf,
    chain: LagChain,
    initial: Vec<f64>,
    p_h: f64,
    advance: LagAdvance,
}

impl CycleModel {
    /// The first loop of every cycle draws its lag from the stationary law.
    pub fn new(sh: ShDelayPmf, chain: LagChain, p_h: f64, advance: LagAdvance) -> Result<Self, CycleError> {
        if !(0.0..1.0).contains(&p_h) {
            return Err(CycleError::Divergent { p_h });
        }
        let initial = stationary(&chain)?;
        Ok(Self {
            sh,
            chain,
            initial,
            p_h,
            advance,
        })
    }

    pub fn sh(&self) -> &ShDelayPmf {
        &self.sh
    }

    pub fn chain(&self) -> &LagChain {
        &self.chain
    }

    pub fn stationary(&self) -> &[f64] {
        &self.initial
    }

    pub fn open_prob(&self) -> f64 {
        self.p_h
    }

    pub fn advance(&self) -> LagAdvance {
        self.advance
    }

    /// Exact `E[L] = (E[τ_SH] + E[τ_H] + 1) / (1 - p̄_H)`.
    pub fn mean(&self) -> f64 {
        let lag: f64 = self
            .chain
            .states()
            .iter()
            .zip(&self.initial)
            .map(|(&s, p)| s as f64 * p)
            .sum();
        (self.sh.mean() + lag + 1.0) / (1.0 - self.p_h)
    }

    /// Exact `E[z^L]` for `z ≥ 0`; `None` where the series diverges.
    ///
    /// With `D = diag(z^s)` and `W(z) = E[z^τ_SH]`, summing the geometric
    /// loop count gives
    /// `E[z^L] = (1-p̄_H) z W(z) · vᵀ D (I - p̄_H z W(z) M D)⁻¹ 1`.
    pub fn transform(&self, z: f64) -> Option<f64> {
        if z == 0.0 {
            return Some(0.0);
        }
        if !(z.is_finite() && z > 0.0) {
            return None;
        }
        let w = self.sh.transform(z)?;
        let g = z * w;
        let p = self.p_h;
        let states = self.chain.states();
        let n = states.len();
        let d: Vec<f64> = states.iter().map(|&s| z.powi(s as i32)).collect();
        if d.iter().any(|x| !x.is_finite()) || !g.is_finite() {
            return None;
        }
        let value = match self.advance {
            LagAdvance::EveryLoop => {
                let mut a = DMatrix::<f64>::identity(n, n);
                for i in 0..n {
                    for j in 0..n {
                        a[(i, j)] -= p * g * self.chain.transition(i, j) * d[j];
                    }
                }
                let x = a.lu().solve(&DVector::from_element(n, 1.0))?;
                // x > 0 with (I - A) x = 1 certifies ρ(A) < 1 for A ≥ 0.
                if x.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return None;
                }
                (1.0 - p) * g * (0..n).map(|i| self.initial[i] * d[i] * x[i]).sum::<f64>()
            }
            LagAdvance::ClosedLoopsOnly => {
                let mut total = 0.0;
                for i in 0..n {
                    let r = g * d[i];
                    if p * r >= 1.0 {
                        return None;
                    }
                    total += self.initial[i] * (1.0 - p) * r / (1.0 - p * r);
                }
                total
            }
        };
        value.is_finite().then_some(value)
    }

    /// Chernoff bound `P[L > l] ≤ E[θ^L] θ^{-l}`, minimized over a grid of
    /// `θ > 1`: the smallest `l` for which the bound drops below `eps`.
    pub fn tail_horizon(&self, eps: f64) -> Option<usize> {
        (1..=40)
            .filter_map(|i| {
                let theta = 1.0 + 2f64.powf(-(i as f64) / 4.0);
                let mgf = self.transform(theta)?;
                let l = (mgf / eps).ln() / theta.ln();
                l.is_finite().then_some(l.ceil().max(1.0) as usize)
            })
            .min()
    }
}

/// Options for [`interval_pmf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalOptions {
    pub tail_eps: f64,
    pub advance: LagAdvance,
    pub max_len: usize,
}

impl Default for IntervalOptions {
    fn default() -> Self {
        Self {
            tail_eps: DEFAULT_TAIL_EPS,
            advance: LagAdvance::EveryLoop,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Truncated pmf of the cycle length with its conditionals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleDistributions {
    model: CycleModel,
    loop_count: TruncatedPmf,
    /// `w_{·,m}` for `m = 1..=m_max`.
    sh_sums: Vec<TruncatedPmf>,
    /// `v_{·,m}` for `m = 1..=m_max`.
    lag_sums: Vec<TruncatedPmf>,
    z: TruncatedPmf,
    l_max: usize,
}

/// Builds `z_l = Σ_m P[M = m] z_{l,m}` with
/// `z_{l,m} = Σ_k w_{k,m} v_{l-m-k,m}`, truncated so that the neglected mass
/// stays below `opts.tail_eps`.
pub fn interval_pmf(
    w: &ShDelayPmf,
    chain: &LagChain,
    p_h: f64,
    opts: &IntervalOptions,
) -> Result<CycleDistributions, CycleError> {
    let model = CycleModel::new(w.clone(), chain.clone(), p_h, opts.advance)?;
    CycleDistributions::build(model, opts)
}

impl CycleDistributions {
    pub fn build(model: CycleModel, opts: &IntervalOptions) -> Result<Self, CycleError> {
        let eps = opts.tail_eps;
        let l_max = model
            .tail_horizon(0.5 * eps)
            .ok_or(CycleError::Truncation { achieved: 1.0, target: eps })?;
        if l_max > opts.max_len {
            return Err(CycleError::Truncation {
                achieved: model
                    .transform(1.0 + 1.0 / opts.max_len as f64)
                    .map_or(1.0, |g| g * (1.0 + 1.0 / opts.max_len as f64).powi(-(opts.max_len as i32))),
                target: eps,
            });
        }
        // Loops beyond m_max either carry < eps/4 of mass or cannot fit in L_max.
        let min_loop = model.chain.min_lag() as usize + 2;
        let m_max = loop_count_horizon(model.p_h, 0.25 * eps)?
            .min(l_max / min_loop)
            .max(1);
        let loop_count = loop_count_pmf(model.p_h, m_max)?;

        let w = model.sh.truncated(l_max);
        let mut stepper = LagSumStepper::new(&model.chain, &model.initial, l_max, model.advance)?;
        let mut sh_sum = w.clone();
        let mut sh_sums = Vec::with_capacity(m_max);
        let mut lag_sums = Vec::with_capacity(m_max);
        let mut z = vec![0.0; l_max + 1];
        for m in 1..=m_max {
            if m > 1 {
                sh_sum = sh_sum.convolve(&w, l_max);
                stepper.advance();
            }
            let lag = stepper.marginal();
            let pm = loop_count.prob(m);
            if l_max > m {
                let zm = sh_sum.convolve(&lag, l_max - m);
                for (l, p) in zm.iter() {
                    z[l + m] += pm * p;
                }
            }
            sh_sums.push(sh_sum.clone());
            lag_sums.push(lag);
        }
        let kept: f64 = z.iter().sum();
        let tail = (1.0 - kept).max(0.0);
        if tail > eps {
            return Err(CycleError::Truncation { achieved: tail, target: eps });
        }
        let start = z.iter().position(|&p| p > 0.0).unwrap_or(0);
        let z = TruncatedPmf::new(start, z[start..].to_vec(), tail);
        Ok(Self {
            model,
            loop_count,
            sh_sums,
            lag_sums,
            z,
            l_max,
        })
    }

    pub fn model(&self) -> &CycleModel {
        &self.model
    }

    /// The pmf `z_l`.
    pub fn pmf(&self) -> &TruncatedPmf {
        &self.z
    }

    pub fn prob(&self, l: usize) -> f64 {
        self.z.prob(l)
    }

    pub fn tail(&self) -> f64 {
        self.z.tail()
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn m_max(&self) -> usize {
        self.sh_sums.len()
    }

    pub fn loop_count(&self) -> &TruncatedPmf {
        &self.loop_count
    }

    /// `w_{·,m}`.
    pub fn sh_sum(&self, m: usize) -> Option<&TruncatedPmf> {
        m.checked_sub(1).and_then(|i| self.sh_sums.get(i))
    }

    /// `v_{·,m}`.
    pub fn lag_sum(&self, m: usize) -> Option<&TruncatedPmf> {
        m.checked_sub(1).and_then(|i| self.lag_sums.get(i))
    }

    /// `z_{·,m}`, the cycle length given `M = m`, kept up to `L_max`.
    pub fn conditional(&self, m: usize) -> Option<TruncatedPmf> {
        let (w, v) = (self.sh_sum(m)?, self.lag_sum(m)?);
        if self.l_max <= m {
            return Some(TruncatedPmf::new(m + 1, vec![0.0], 1.0));
        }
        Some(w.convolve(v, self.l_max - m).shifted(m))
    }

    /// Exact mean.
    pub fn mean(&self) -> f64 {
        self.model.mean()
    }

    /// Writes `l,probability` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        write_pmf_csv(&self.z, "l", out)
    }
}

/// Writes a pmf as two-column CSV with header `<key>,probability`.
pub fn write_pmf_csv<W: Write>(pmf: &TruncatedPmf, key: &str, out: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([key, "probability"])?;
    for (k, p) in pmf.iter() {
        wtr.write_record([k.to_string(), format!("{p:e}")])?;
    }
    wtr.flush()?;
    Ok(())
}
