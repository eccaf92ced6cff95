//! Accumulated decoding error of the SH uplink under HARQ and the resulting
//! distribution of the sensor-to-human delay.
//!
//! `Θ(r)` is the probability that a packet is still undecodable after `r`
//! attempts, averaged over independent block fading. A sensor packet is
//! retried up to `N` times; after `N` failures a fresh packet starts a new
//! trial, so the delay is a geometric number of failed trials followed by a
//! successful one.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HarqError;
use crate::linkmodel::{
    capacity, dispersion, error_at, expected_error_at_mean, normal_approx_error, sample_snr_at_mean,
    CodeConfig, LinkBudget,
};
use crate::numeric::{integrate, QuadTolerance};
use crate::pmf::TruncatedPmf;
use crate::rngs::stream_id;

/// Retransmission scheme on the SH uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HarqScheme {
    /// Type-I: every attempt is decoded on its own.
    #[serde(rename = "TI")]
    TypeI,
    /// Chase combining: received signals add up (SNRs accumulate).
    #[serde(rename = "CC")]
    ChaseCombining,
    /// Incremental redundancy: capacity and dispersion accumulate.
    #[serde(rename = "IR")]
    IncrementalRedundancy,
}

impl HarqScheme {
    pub const ALL: [HarqScheme; 3] = [
        HarqScheme::TypeI,
        HarqScheme::ChaseCombining,
        HarqScheme::IncrementalRedundancy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            HarqScheme::TypeI => "TI",
            HarqScheme::ChaseCombining => "CC",
            HarqScheme::IncrementalRedundancy => "IR",
        }
    }

    fn tag(self) -> u64 {
        match self {
            HarqScheme::TypeI => 1,
            HarqScheme::ChaseCombining => 2,
            HarqScheme::IncrementalRedundancy => 3,
        }
    }
}

impl std::str::FromStr for HarqScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "TI" => Ok(HarqScheme::TypeI),
            "CC" => Ok(HarqScheme::ChaseCombining),
            "IR" => Ok(HarqScheme::IncrementalRedundancy),
            other => Err(format!("unknown HARQ scheme `{other}` (expected TI, CC or IR)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarqConfig {
    pub scheme: HarqScheme,
    pub max_attempts: usize,
    pub code: CodeConfig,
}

impl HarqConfig {
    pub fn new(scheme: HarqScheme, max_attempts: usize, code: CodeConfig) -> Result<Self, HarqError> {
        if max_attempts == 0 {
            return Err(HarqError::NoAttempts);
        }
        code.validate()?;
        Ok(Self {
            scheme,
            max_attempts,
            code,
        })
    }

    /// Conditional error after `snrs.len()` attempts with the given
    /// per-attempt SNRs.
    pub fn conditional_error(&self, snrs: &[f64]) -> f64 {
        conditional_error(self.scheme, snrs, &self.code)
    }
}

/// `Θ(r | γ_1..γ_r)` for one realization of the attempt SNRs.
pub fn conditional_error(scheme: HarqScheme, snrs: &[f64], code: &CodeConfig) -> f64 {
    match scheme {
        HarqScheme::TypeI => snrs.iter().map(|&g| error_at(g, code)).product(),
        HarqScheme::ChaseCombining => error_at(snrs.iter().sum(), code),
        HarqScheme::IncrementalRedundancy => {
            let c: f64 = snrs.iter().map(|&g| capacity(g)).sum();
            let v: f64 = snrs.iter().map(|&g| dispersion(g)).sum();
            normal_approx_error(c, v, code)
        }
    }
}

/// Monte Carlo controls for the incremental-redundancy average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub samples: usize,
    pub seed: u64,
    /// Standard errors above this value attach a warning to the estimate.
    pub se_warn: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0x5eed,
            se_warn: 1e-3,
        }
    }
}

/// A fading-averaged `Θ(r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub value: f64,
    /// Present for Monte Carlo estimates.
    pub std_err: Option<f64>,
    pub warning: Option<String>,
}

impl ThetaEstimate {
    fn exact(value: f64) -> Self {
        Self {
            value,
            std_err: None,
            warning: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    scheme: HarqScheme,
    mean_snr: u64,
    r: usize,
    payload_bits: u64,
    packet_len: u64,
    samples: usize,
    seed: u64,
}

type Slot = Arc<Mutex<Option<ThetaEstimate>>>;

fn cache() -> &'static Mutex<HashMap<CacheKey, Slot>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Slot>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Fading-averaged error after `r` attempts, cached per
/// `(scheme, γ̄, r, code, Monte Carlo settings)`.
///
/// Type-I uses `E[ε]^r`, Chase combining integrates against the Gamma(r, γ̄)
/// density of the summed SNR and incremental redundancy is estimated by
/// Monte Carlo. For `r = 1` all three reduce to `E[ε(γ)]` and are evaluated
/// by quadrature.
pub fn theta(
    config: &HarqConfig,
    budget: &LinkBudget,
    r: usize,
    mc: &McSettings,
) -> Result<ThetaEstimate, HarqError> {
    budget.validate()?;
    theta_at_mean(config, budget.mean_snr(), r, mc)
}

/// [`theta`] for a given mean SNR.
pub fn theta_at_mean(
    config: &HarqConfig,
    mean_snr: f64,
    r: usize,
    mc: &McSettings,
) -> Result<ThetaEstimate, HarqError> {
    if r == 0 || r > config.max_attempts {
        return Err(HarqError::AttemptOutOfRange {
            r,
            max: config.max_attempts,
        });
    }
    let key = CacheKey {
        scheme: config.scheme,
        mean_snr: mean_snr.to_bits(),
        r,
        payload_bits: config.code.payload_bits.to_bits(),
        packet_len: config.code.packet_len.to_bits(),
        samples: if config.scheme == HarqScheme::IncrementalRedundancy { mc.samples } else { 0 },
        seed: if config.scheme == HarqScheme::IncrementalRedundancy { mc.seed } else { 0 },
    };
    let slot = {
        let mut map = cache().lock().expect("theta cache poisoned");
        map.entry(key).or_default().clone()
    };
    let mut guard = slot.lock().expect("theta slot poisoned");
    if let Some(hit) = guard.as_ref() {
        return Ok(hit.clone());
    }
    let value = theta_uncached(config.scheme, mean_snr, r, &config.code, mc)?;
    *guard = Some(value.clone());
    Ok(value)
}

/// Computes `Θ(r)` without consulting the cache.
pub fn theta_uncached(
    scheme: HarqScheme,
    mean_snr: f64,
    r: usize,
    code: &CodeConfig,
    mc: &McSettings,
) -> Result<ThetaEstimate, HarqError> {
    if r == 0 {
        return Err(HarqError::AttemptOutOfRange { r, max: 0 });
    }
    let single = expected_error_at_mean(mean_snr, code)?;
    if r == 1 {
        return Ok(ThetaEstimate::exact(single));
    }
    match scheme {
        HarqScheme::TypeI => Ok(ThetaEstimate::exact(single.powi(r as i32))),
        HarqScheme::ChaseCombining => Ok(ThetaEstimate::exact(chase_combining_theta(mean_snr, r, code)?)),
        HarqScheme::IncrementalRedundancy => Ok(ir_monte_carlo(mean_snr, r, code, mc)),
    }
}

fn chase_combining_theta(mean_snr: f64, r: usize, code: &CodeConfig) -> Result<f64, HarqError> {
    let shape = r as f64;
    let log_norm = statrs::function::gamma::ln_gamma(shape) + shape * mean_snr.ln();
    let density = move |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        ((shape - 1.0) * s.ln() - s / mean_snr - log_norm).exp()
    };
    let threshold = code.threshold_snr();
    let upper = mean_snr * (shape + 60.0 + 12.0 * shape.sqrt()) + 2.0 * threshold;
    let mut breaks = vec![0.0];
    for b in [0.5 * threshold, threshold, 1.5 * threshold, mean_snr * shape] {
        if b > 0.0 && b < upper {
            breaks.push(b);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks.push(upper);
    let tol = QuadTolerance {
        relative: 1e-8,
        absolute: 1e-15,
        ..QuadTolerance::default()
    };
    let r = integrate(|s| error_at(s, code) * density(s), &breaks, tol)
        .map_err(crate::error::LinkError::from)?;
    Ok(r.value.clamp(0.0, 1.0))
}

const MC_CHUNK: usize = 1 << 15;

fn ir_monte_carlo(mean_snr: f64, r: usize, code: &CodeConfig, mc: &McSettings) -> ThetaEstimate {
    let n = mc.samples.max(2);
    let chunks = n.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
            rng.set_stream(stream_id(&[HarqScheme::IncrementalRedundancy.tag(), r as u64, c as u64]));
            let count = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut snrs = vec![0.0; r];
            for _ in 0..count {
                for s in snrs.iter_mut() {
                    *s = sample_snr_at_mean(mean_snr, &mut rng);
                }
                let e = conditional_error(HarqScheme::IncrementalRedundancy, &snrs, code);
                sum += e;
                sum_sq += e * e;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq / nf) - mean * mean).max(0.0) * nf / (nf - 1.0);
    let se = (var / nf).sqrt();
    let warning = (se > mc.se_warn).then(|| {
        format!("Monte Carlo standard error {se:.2e} for Theta({r}) exceeds {:.1e}", mc.se_warn)
    });
    ThetaEstimate {
        value: mean.clamp(0.0, 1.0),
        std_err: Some(se),
        warning,
    }
}

/// `Θ(1), ..., Θ(N)` for a link.
pub fn theta_profile(
    config: &HarqConfig,
    budget: &LinkBudget,
    mc: &McSettings,
) -> Result<Vec<ThetaEstimate>, HarqError> {
    (1..=config.max_attempts)
        .map(|r| theta(config, budget, r, mc))
        .collect()
}

/// Distribution of the SH delay `τ_SH` (in slots, support from 1).
///
/// Stores the structure of the pmf as well as its truncated values: the
/// probability of first success at attempt `j` of a trial, `a_j =
/// Θ(j-1) - Θ(j)` with `Θ(0) = 1`, and the restart probability `Θ(N)`, so
/// that `w_{qN+j} = Θ(N)^q a_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShDelayPmf {
    per_trial: Vec<f64>,
    restart: f64,
    pmf: TruncatedPmf,
}

/// Default truncation tail for delay and interval pmfs.
pub const DEFAULT_TAIL_EPS: f64 = 1e-9;

impl ShDelayPmf {
    /// Builds the pmf from `Θ(1), ..., Θ(N)`.
    pub fn from_thetas(thetas: &[f64], tail_eps: f64) -> Result<Self, HarqError> {
        if thetas.is_empty() {
            return Err(HarqError::NoAttempts);
        }
        if thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(HarqError::InvalidProfile(format!("{thetas:?} not in [0, 1]")));
        }
        let n = thetas.len();
        let restart = thetas[n - 1];
        if restart >= 1.0 {
            return Err(HarqError::Divergent { theta_n: restart });
        }
        let mut previous = 1.0;
        let per_trial: Vec<f64> = thetas
            .iter()
            .map(|&t| {
                // Combining never hurts; clip Monte Carlo noise.
                let t = t.min(previous);
                let a = previous - t;
                previous = t;
                a
            })
            .collect();
        Self::from_trial(per_trial, restart, tail_eps)
    }

    /// Builds the pmf of a finite delay distribution on `1..=probs.len()`
    /// (no restarts).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, HarqError> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(HarqError::InvalidProfile("delay probabilities must be non-negative and sum to 1".into()));
        }
        Self::from_trial(probs, 0.0, 0.0)
    }

    fn from_trial(per_trial: Vec<f64>, restart: f64, tail_eps: f64) -> Result<Self, HarqError> {
        let n = per_trial.len();
        let mut probs = Vec::new();
        let mut scale = 1.0;
        // Mass beyond q full trials is restart^q.
        loop {
            probs.extend(per_trial.iter().map(|a| a * scale));
            scale *= restart;
            if scale <= tail_eps || scale == 0.0 {
                break;
            }
            if probs.len() > 50_000_000 / n.max(1) {
                return Err(HarqError::Divergent { theta_n: restart });
            }
        }
        Ok(Self {
            per_trial,
            restart,
            pmf: TruncatedPmf::new(1, probs, scale),
        })
    }

    pub fn max_attempts(&self) -> usize {
        self.per_trial.len()
    }

    /// `Θ(N)`, the probability that a full trial fails.
    pub fn restart_prob(&self) -> f64 {
        self.restart
    }

    /// First-success probabilities within one trial.
    pub fn per_trial(&self) -> &[f64] {
        &self.per_trial
    }

    pub fn pmf(&self) -> &TruncatedPmf {
        &self.pmf
    }

    /// `w_k`, zero for `k = 0` and beyond the truncation point.
    pub fn prob(&self, k: usize) -> f64 {
        self.pmf.prob(k)
    }

    pub fn tail(&self) -> f64 {
        self.pmf.tail()
    }

    /// `w_1, ..., w_{max_k}` recomputed from the trial structure, with the
    /// exact remaining mass as tail.
    pub fn truncated(&self, max_k: usize) -> TruncatedPmf {
        let n = self.per_trial.len();
        let probs: Vec<f64> = (0..max_k)
            .map(|i| self.per_trial[i % n] * self.restart.powi((i / n) as i32))
            .collect();
        let kept: f64 = probs.iter().sum();
        TruncatedPmf::new(1, probs, (1.0 - kept).max(0.0))
    }

    /// Draws a delay exactly: whole failed trials, then the successful
    /// attempt of the last one.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.per_trial.len();
        let mut slots = 0;
        loop {
            let mut u: f64 = rng.gen();
            for (j, a) in self.per_trial.iter().enumerate() {
                if u < *a {
                    return slots + j + 1;
                }
                u -= a;
            }
            slots += n;
        }
    }

    /// Exact mean `E[τ_SH]`.
    pub fn mean(&self) -> f64 {
        let n = self.per_trial.len() as f64;
        let within: f64 = self
            .per_trial
            .iter()
            .enumerate()
            .map(|(j, a)| (j + 1) as f64 * a)
            .sum();
        // q failed trials add qN slots each.
        (within + n * self.restart) / (1.0 - self.restart)
    }

    /// Generating function `E[z^τ_SH]`, `None` where the series diverges.
    pub fn transform(&self, z: f64) -> Option<f64> {
        let n = self.per_trial.len() as i32;
        let denom = 1.0 - self.restart * z.powi(n);
        if denom <= 0.0 {
            return None;
        }
        let numer: f64 = self
            .per_trial
            .iter()
            .enumerate()
            .map(|(j, a)| a * z.powi(j as i32 + 1))
            .sum();
        Some(numer / denom)
    }
}

/// Delay pmf for the SH link under the given HARQ configuration.
pub fn sh_delay_pmf(
    config: &HarqConfig,
    budget: &LinkBudget,
    tail_eps: f64,
    mc: &McSettings,
) -> Result<ShDelayPmf, HarqError> {
    let thetas: Vec<f64> = theta_profile(config, budget, mc)?
        .into_iter()
        .map(|t| t.value)
        .collect();
    ShDelayPmf::from_thetas(&thetas, tail_eps)
}
