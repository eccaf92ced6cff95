//! Link budgets, Rayleigh block fading and the finite-blocklength decoding
//! error of short packets.
//!
//! All four wireless links (SC, CA, SH, HA) share the same model: a
//! free-space path-loss mean gain `h̄`, an `Exp(1)` fading gain drawn
//! independently per slot, and a normal-approximation packet error
//! probability evaluated at the instantaneous SNR.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::LinkError;
use crate::numeric::{gaussian_q, integrate, QuadTolerance};

const SPEED_OF_LIGHT: f64 = 3e8;

/// Converts a power in dBm to milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Deterministic parameters of one wireless link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub antenna_gain: f64,
    pub carrier_freq_hz: f64,
    pub distance_m: f64,
    pub pathloss_exp: f64,
    pub tx_power_mw: f64,
    pub noise_power_mw: f64,
}

impl LinkBudget {
    pub fn new(
        antenna_gain: f64,
        carrier_freq_hz: f64,
        distance_m: f64,
        pathloss_exp: f64,
        tx_power_mw: f64,
        noise_power_mw: f64,
    ) -> Result<Self, LinkError> {
        let budget = Self {
            antenna_gain,
            carrier_freq_hz,
            distance_m,
            pathloss_exp,
            tx_power_mw,
            noise_power_mw,
        };
        budget.validate()?;
        Ok(budget)
    }

    /// The communication setup used throughout the numerical examples:
    /// A = 4, 915 MHz, path-loss exponent 2.9, 23 dBm transmit power and
    /// -70 dBm noise, at the given distance.
    pub fn reference(distance_m: f64) -> Self {
        Self::new(4.0, 915e6, distance_m, 2.9, dbm_to_mw(23.0), dbm_to_mw(-70.0))
            .expect("reference budget is valid")
    }

    /// Machine-to-plant links (40 m).
    pub fn reference_machine() -> Self {
        Self::reference(40.0)
    }

    /// Human-to-plant links (45 m).
    pub fn reference_human() -> Self {
        Self::reference(45.0)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let fields = [
            ("antenna_gain", self.antenna_gain),
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("distance_m", self.distance_m),
            ("pathloss_exp", self.pathloss_exp),
            ("tx_power_mw", self.tx_power_mw),
            ("noise_power_mw", self.noise_power_mw),
        ];
        for (field, value) in fields {
            // A zero path-loss exponent is a meaningful limit (gain = A).
            let ok = if field == "pathloss_exp" { value >= 0.0 } else { value > 0.0 };
            if !(value.is_finite() && ok) {
                return Err(LinkError::InvalidBudget { field, value });
            }
        }
        Ok(())
    }

    /// Mean SNR `h̄ · P_tx / σ²`.
    pub fn mean_snr(&self) -> f64 {
        mean_channel_gain(self) * self.tx_power_mw / self.noise_power_mw
    }
}

/// Free-space mean channel gain `A · (c / (4π f_c d))^{d_e}`.
pub fn mean_channel_gain(budget: &LinkBudget) -> f64 {
    let ratio = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * budget.carrier_freq_hz * budget.distance_m);
    budget.antenna_gain * ratio.powf(budget.pathloss_exp)
}

/// Draws one block-fading SNR: `γ̄ · h` with `h ~ Exp(1)`.
pub fn sample_snr<R: Rng + ?Sized>(budget: &LinkBudget, rng: &mut R) -> f64 {
    sample_snr_at_mean(budget.mean_snr(), rng)
}

/// [`sample_snr`] for a precomputed mean SNR.
pub fn sample_snr_at_mean<R: Rng + ?Sized>(mean_snr: f64, rng: &mut R) -> f64 {
    let h: f64 = Exp1.sample(rng);
    mean_snr * h
}

/// Packet size: `payload_bits` data bits carried in `packet_len` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeConfig {
    pub payload_bits: f64,
    pub packet_len: f64,
}

impl CodeConfig {
    pub fn new(payload_bits: f64, packet_len: f64) -> Result<Self, LinkError> {
        let code = Self {
            payload_bits,
            packet_len,
        };
        code.validate()?;
        Ok(code)
    }

    /// Rate 2 bit/symbol over 1500 symbols.
    pub fn reference() -> Self {
        Self {
            payload_bits: 3000.0,
            packet_len: 1500.0,
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.payload_bits) && ok(self.packet_len) {
            Ok(())
        } else {
            Err(LinkError::InvalidCode {
                payload_bits: self.payload_bits,
                packet_len: self.packet_len,
            })
        }
    }

    /// Bits per channel use, `b / l_p`.
    pub fn rate(&self) -> f64 {
        self.payload_bits / self.packet_len
    }

    /// SNR at which capacity equals the code rate; the error probability
    /// drops from ~1 to ~0 around this point.
    pub fn threshold_snr(&self) -> f64 {
        self.rate().exp2() - 1.0
    }
}

/// Shannon capacity `log2(1 + γ)` in bit/symbol.
pub fn capacity(snr: f64) -> f64 {
    snr.ln_1p() / std::f64::consts::LN_2
}

/// Channel dispersion `(1 - (1 + γ)^-2) (log2 e)^2`.
pub fn dispersion(snr: f64) -> f64 {
    let log2e = std::f64::consts::LOG2_E;
    (1.0 - (1.0 + snr).powi(-2)) * log2e * log2e
}

/// Normal-approximation error probability for accumulated capacity and
/// dispersion (sums over combined transmissions), clamped to `[0, 1]`.
pub(crate) fn normal_approx_error(capacity_sum: f64, dispersion_sum: f64, code: &CodeConfig) -> f64 {
    if dispersion_sum <= 0.0 {
        // Zero SNR: no positive rate is supported.
        return 1.0;
    }
    let arg = (capacity_sum - code.rate()) / (dispersion_sum / code.packet_len).sqrt();
    gaussian_q(arg).clamp(0.0, 1.0)
}

/// Decoding error probability of a single packet received at linear SNR
/// `snr`.
pub fn decode_error_prob(snr: f64, code: &CodeConfig) -> Result<f64, LinkError> {
    if snr.is_nan() || snr < 0.0 {
        return Err(LinkError::NegativeSnr(snr));
    }
    if snr.is_infinite() {
        return Ok(0.0);
    }
    Ok(normal_approx_error(capacity(snr), dispersion(snr), code))
}

/// Decoding error for an SNR already known to be valid.
pub(crate) fn error_at(snr: f64, code: &CodeConfig) -> f64 {
    normal_approx_error(capacity(snr), dispersion(snr), code)
}

/// Relative tolerance for the fading averages.
pub const EXPECTATION_REL_TOL: f64 = 1e-6;

/// `E[ε(γ̄ h)]` for `h ~ Exp(1)`, by adaptive quadrature.
///
/// With `u = exp(-γ/γ̄)` the expectation becomes `∫_0^1 ε(-γ̄ ln u) du`; the
/// integrand is bounded and the steep region around the rate threshold is
/// resolved by a breakpoint.
pub fn expected_error_prob(budget: &LinkBudget, code: &CodeConfig) -> Result<f64, LinkError> {
    budget.validate()?;
    code.validate()?;
    expected_error_at_mean(budget.mean_snr(), code)
}

/// [`expected_error_prob`] for a given mean SNR.
pub fn expected_error_at_mean(mean_snr: f64, code: &CodeConfig) -> Result<f64, LinkError> {
    if !(mean_snr.is_finite() && mean_snr > 0.0) {
        if mean_snr == f64::INFINITY {
            return Ok(0.0);
        }
        return Err(LinkError::NegativeSnr(mean_snr));
    }
    let integrand = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        error_at(-mean_snr * u.ln(), code)
    };
    let u_threshold = (-code.threshold_snr() / mean_snr).exp();
    let mut breaks = vec![0.0];
    if u_threshold > 0.0 && u_threshold < 1.0 {
        breaks.push(u_threshold);
    }
    breaks.push(1.0);
    let tol = QuadTolerance {
        relative: EXPECTATION_REL_TOL * 1e-2,
        absolute: 1e-15,
        ..QuadTolerance::default()
    };
    let r = integrate(integrand, &breaks, tol)?;
    Ok(r.value.clamp(0.0, 1.0))
}

/// Expected probability that a machine control loop is open:
/// `1 - (1 - E[ε_SC])(1 - E[ε_CA])`.
pub fn open_machine_loop_prob(
    sc: &LinkBudget,
    ca: &LinkBudget,
    code: &CodeConfig,
) -> Result<f64, LinkError> {
    let e_sc = expected_error_prob(sc, code)?;
    let e_ca = expected_error_prob(ca, code)?;
    Ok(combine_open_prob(e_sc, e_ca))
}

/// Open probability of two transmissions in series.
pub fn combine_open_prob(e_first: f64, e_second: f64) -> f64 {
    1.0 - (1.0 - e_first) * (1.0 - e_second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn budget(a: f64, de: f64) -> LinkBudget {
        LinkBudget::new(a, 915e6, 40.0, de, 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_exponent_gain_is_antenna_gain() {
        assert_eq!(mean_channel_gain(&budget(1.0, 0.0)), 1.0);
        let b = LinkBudget::new(1.0, 2.4e9, 1234.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(mean_channel_gain(&b), 1.0);
    }

    #[test]
    fn reference_machine_gain() {
        // 50-digit evaluation: 2.3115744030261501139725303471515e-9
        let g = mean_channel_gain(&LinkBudget::reference_machine());
        assert!(((g - 2.311_574_403_026_150_1e-9) / g).abs() < 1e-12);
        let snr = LinkBudget::reference_machine().mean_snr();
        assert!((snr - 4.612_197_294_604_762).abs() < 1e-9);
        let snr_h = LinkBudget::reference_human().mean_snr();
        assert!((snr_h - 3.277_672_532_035_787).abs() < 1e-9);
    }

    #[test]
    fn gain_is_linear_in_antenna_gain() {
        let g1 = mean_channel_gain(&budget(1.5, 2.9));
        let g2 = mean_channel_gain(&budget(3.0, 2.9));
        assert!((g2 / g1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_budget_is_rejected() {
        assert!(LinkBudget::new(0.0, 915e6, 40.0, 2.9, 1.0, 1.0).is_err());
        assert!(LinkBudget::new(1.0, 915e6, -1.0, 2.9, 1.0, 1.0).is_err());
        assert!(LinkBudget::new(1.0, 915e6, 40.0, 2.9, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn error_prob_at_capacity_point_is_half() {
        let code = CodeConfig::new(3000.0, 1500.0).unwrap();
        let e = decode_error_prob(3.0, &code).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn error_prob_limits() {
        let code = CodeConfig::reference();
        assert_eq!(decode_error_prob(0.0, &code).unwrap(), 1.0);
        assert_eq!(decode_error_prob(f64::INFINITY, &code).unwrap(), 0.0);
        assert!(decode_error_prob(1e6, &code).unwrap() < 1e-300);
        assert!(matches!(decode_error_prob(-0.1, &code), Err(LinkError::NegativeSnr(_))));
    }

    #[test]
    fn error_prob_matches_high_precision_reference() {
        let code = CodeConfig::reference();
        // erfc evaluated with 50 significant digits.
        let cases = [
            (2.9, 0.844_820_781_881_456_6),
            (3.05, 0.309_772_659_765_082_9),
            (3.1, 0.162_036_654_556_654_3),
        ];
        for (snr, want) in cases {
            let got = decode_error_prob(snr, &code).unwrap();
            assert!(((got - want) / want).abs() < 1e-10, "snr {snr}: {got} vs {want}");
        }
        // At γ = 10 the exact value is 8.06e-339, below the smallest double.
        assert_eq!(decode_error_prob(10.0, &code).unwrap(), 0.0);
    }

    #[test]
    fn error_prob_non_increasing_in_snr() {
        let code = CodeConfig::reference();
        let mut prev = 1.0;
        for i in 0..=4000 {
            let snr = i as f64 * 0.005;
            let e = decode_error_prob(snr, &code).unwrap();
            assert!(e <= prev + 1e-15, "snr {snr}");
            assert!((0.0..=1.0).contains(&e));
            prev = e;
        }
    }

    #[test]
    fn sampling_is_reproducible_and_non_negative() {
        let b = LinkBudget::reference_machine();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let a = sample_snr(&b, &mut r1);
            assert!(a >= 0.0);
            assert_eq!(a.to_bits(), sample_snr(&b, &mut r2).to_bits());
        }
    }

    #[test]
    fn expected_error_limits_and_monotonicity() {
        let code = CodeConfig::reference();
        assert_eq!(expected_error_at_mean(f64::INFINITY, &code).unwrap(), 0.0);
        assert!(expected_error_at_mean(1e9, &code).unwrap() < 1e-8);
        let mut prev = 1.0;
        for mean in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0] {
            let e = expected_error_at_mean(mean, &code).unwrap();
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn open_machine_loop_cases() {
        assert!((combine_open_prob(0.0, 0.0)).abs() < 1e-15);
        assert_eq!(combine_open_prob(1.0, 0.3), 1.0);
        assert!((combine_open_prob(0.1, 0.1) - 0.19).abs() < 1e-15);
        let code = CodeConfig::reference();
        let far = LinkBudget::reference(1e5);
        let p = open_machine_loop_prob(&far, &LinkBudget::reference_machine(), &code).unwrap();
        assert!(p > 0.999_999);
    }
}
