//! Scenario files.
//!
//! A scenario is a single TOML document whose keys carry their units
//! (`tx_power_dbm`, `distance_m`, `carrier_freq_mhz`, ...). Powers are
//! converted from dBm to mW exactly once, in [`LinkSection::budget`];
//! everything downstream works in linear units. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! horizon_steps = 2000
//! regime = "collab"
//!
//! [links.sc]
//! antenna_gain = 4.0
//! carrier_freq_mhz = 915.0
//! distance_m = 40.0
//! pathloss_exp = 2.9
//! tx_power_dbm = 23.0
//! noise_power_dbm = -70.0
//! # ... [links.ca], [links.sh], [links.ha]
//!
//! [harq]
//! scheme = "IR"
//! max_attempts = 3
//!
//! [lag]
//! states_steps = [3, 7]
//! transition = [[0.2576, 0.7424], [0.4404, 0.5596]]
//!
//! [gains]
//! alpha_hm = 0.5271
//! alpha_m = 0.7949
//! alpha_h = 1.0196
//! alpha = 1.0134
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cartpole::{CartPoleParams, CostWeights};
use crate::cycledist::{IntervalOptions, DEFAULT_MAX_LEN, DEFAULT_TAIL_EPS};
use crate::error::{ConfigError, LinkError};
use crate::harq::{HarqConfig, HarqScheme, McSettings};
use crate::humanmodel::{LagAdvance, LagChain};
use crate::linkmodel::{dbm_to_mw, CodeConfig, LinkBudget};
use crate::simkernel::{Links, Scenario, SimOptions};
use crate::stability::{Gain, LyapunovGains, Regime};

/// One link, in the units of a data sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub antenna_gain: f64,
    pub carrier_freq_mhz: f64,
    pub distance_m: f64,
    pub pathloss_exp: f64,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
}

impl LinkSection {
    /// The reference setup at `distance_m`.
    pub fn reference(distance_m: f64) -> Self {
        Self {
            antenna_gain: 4.0,
            carrier_freq_mhz: 915.0,
            distance_m,
            pathloss_exp: 2.9,
            tx_power_dbm: 23.0,
            noise_power_dbm: -70.0,
        }
    }

    /// Converts to linear units; `path` prefixes field names in errors.
    pub fn budget(&self, path: &str) -> Result<LinkBudget, ConfigError> {
        let budget = LinkBudget {
            antenna_gain: self.antenna_gain,
            carrier_freq_hz: self.carrier_freq_mhz * 1e6,
            distance_m: self.distance_m,
            pathloss_exp: self.pathloss_exp,
            tx_power_mw: dbm_to_mw(self.tx_power_dbm),
            noise_power_mw: dbm_to_mw(self.noise_power_dbm),
        };
        budget.validate().map_err(|e| match e {
            LinkError::InvalidBudget { field, .. } => {
                let key = match field {
                    "carrier_freq_hz" => "carrier_freq_mhz",
                    "tx_power_mw" => "tx_power_dbm",
                    "noise_power_mw" => "noise_power_dbm",
                    other => other,
                };
                let raw = match key {
                    "antenna_gain" => self.antenna_gain,
                    "carrier_freq_mhz" => self.carrier_freq_mhz,
                    "distance_m" => self.distance_m,
                    "pathloss_exp" => self.pathloss_exp,
                    "tx_power_dbm" => self.tx_power_dbm,
                    _ => self.noise_power_dbm,
                };
                invalid(format!("{path}.{key}"), format!("invalid value {raw}"))
            }
            other => invalid(path, other.to_string()),
        })?;
        Ok(budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksSection {
    pub sc: LinkSection,
    pub ca: LinkSection,
    pub sh: LinkSection,
    pub ha: LinkSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSection {
    pub payload_bits: f64,
    pub packet_len_symbols: f64,
}

impl Default for CodeSection {
    fn default() -> Self {
        Self {
            payload_bits: 3000.0,
            packet_len_symbols: 1500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarqSection {
    pub scheme: HarqScheme,
    pub max_attempts: usize,
}

impl Default for HarqSection {
    fn default() -> Self {
        Self {
            scheme: HarqScheme::IncrementalRedundancy,
            max_attempts: 3,
        }
    }
}

/// Named lag chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagPreset {
    CaseStudy,
    /// `M_l`: long runs in either state.
    Prolonged,
    /// `M_e`: memoryless.
    Random,
    /// `M_h`: alternating.
    Variable,
}

impl LagPreset {
    pub fn chain(self) -> LagChain {
        match self {
            LagPreset::CaseStudy => LagChain::case_study(),
            LagPreset::Prolonged => LagChain::prolonged(),
            LagPreset::Random => LagChain::random_response(),
            LagPreset::Variable => LagChain::variable(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagSection {
    pub preset: Option<LagPreset>,
    pub states_steps: Option<Vec<u32>>,
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub advance: LagAdvance,
    /// Restart the chain from its stationary law at every cycle.
    #[serde(default)]
    pub reset_each_cycle: bool,
}

impl LagSection {
    fn chain(&self) -> Result<LagChain, ConfigError> {
        match (self.preset, &self.states_steps, &self.transition) {
            (Some(p), None, None) => Ok(p.chain()),
            (None, Some(states), Some(matrix)) => {
                LagChain::new(states.clone(), matrix.clone()).map_err(|e| invalid("lag.transition", e.to_string()))
            }
            (None, None, None) => Ok(LagChain::case_study()),
            (Some(_), _, _) => Err(invalid("lag.preset", "give either a preset or states_steps + transition")),
            (None, None, Some(_)) => Err(invalid("lag.states_steps", "missing (transition given)")),
            (None, Some(_), None) => Err(invalid("lag.transition", "missing (states_steps given)")),
        }
    }
}

/// Gains given inline or taken from an estimation report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub alpha_hm: Option<f64>,
    pub alpha_m: Option<f64>,
    pub alpha_h: Option<f64>,
    pub alpha: Option<f64>,
    /// Path to a report written by `estimate`; supplies the gains (and the
    /// lag chain unless `[lag]` is given explicitly).
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub tail_eps: f64,
    /// Monte Carlo samples per IR-HARQ attempt count.
    pub mc_samples: usize,
    pub mc_seed: u64,
    pub max_cycle_len: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let mc = McSettings::default();
        Self {
            tail_eps: DEFAULT_TAIL_EPS,
            mc_samples: mc.samples,
            mc_seed: mc.seed,
            max_cycle_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Sweep grid for `region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSection {
    /// Abscissa and ordinate gains, e.g. `["alpha_hm", "alpha_h"]`.
    pub pair: [Gain; 2],
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
    pub y_min: f64,
    pub y_max: f64,
    /// Raster rows; 0 skips the raster.
    pub y_points: usize,
}

impl Default for RegionSection {
    fn default() -> Self {
        Self {
            pair: [Gain::HumanMachine, Gain::Human],
            x_min: 0.0,
            x_max: 2.0,
            x_points: 41,
            y_min: 0.0,
            y_max: 2.0,
            y_points: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub replications: u64,
    pub regimes: Vec<Regime>,
    /// Diagonal of the cost matrix over `(x, ẋ, θ, θ̇, m_c)`.
    pub cost_weights: [f64; 5],
    /// Replications per regime written out as NDJSON traces.
    pub trace_replications: u64,
    /// Cycles for the analytic-vs-simulated check; 0 disables it.
    pub oracle_cycles: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            replications: 20,
            regimes: vec![Regime::Collaborative, Regime::MachineOnly, Regime::HumanOnly],
            cost_weights: CostWeights::angle_only().0,
            trace_replications: 1,
            oracle_cycles: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    /// Quantization levels for measured lags (s).
    pub lag_states_s: Vec<f64>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            lag_states_s: vec![0.15, 0.35],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon_steps: u64,
    #[serde(default)]
    pub regime: Regime,
    pub links: LinksSection,
    #[serde(default)]
    pub code: CodeSection,
    #[serde(default)]
    pub harq: HarqSection,
    #[serde(default)]
    pub lag: LagSection,
    #[serde(default)]
    pub gains: GainsSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub region: RegionSection,
    #[serde(default)]
    pub plant: CartPoleParams,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_horizon() -> u64 {
    2000
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub regime: Option<Regime>,
    pub pair: Option<[Gain; 2]>,
    pub out: Option<PathBuf>,
    pub mc_budget: Option<usize>,
    pub tail_eps: Option<f64>,
}

impl ScenarioConfig {
    /// Reference links, IR-HARQ N = 3, the case-study chain and gains.
    pub fn reference() -> Self {
        let machine = LinkSection::reference(40.0);
        let human = LinkSection::reference(45.0);
        let g = LyapunovGains::case_study();
        Self {
            seed: 0,
            horizon_steps: default_horizon(),
            regime: Regime::Collaborative,
            links: LinksSection {
                sc: machine,
                ca: machine,
                sh: human,
                ha: human,
            },
            code: CodeSection::default(),
            harq: HarqSection::default(),
            lag: LagSection {
                preset: Some(LagPreset::CaseStudy),
                ..LagSection::default()
            },
            gains: GainsSection {
                alpha_hm: Some(g.alpha_hm),
                alpha_m: Some(g.alpha_m),
                alpha_h: Some(g.alpha_h),
                alpha: Some(g.alpha),
                report: None,
            },
            analysis: AnalysisSection::default(),
            region: RegionSection::default(),
            plant: CartPoleParams::default(),
            simulate: SimulateSection::default(),
            estimate: EstimateSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.regime {
            self.regime = r;
        }
        if let Some(p) = o.pair {
            self.region.pair = p;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(n) = o.mc_budget {
            self.analysis.mc_samples = n;
        }
        if let Some(e) = o.tail_eps {
            self.analysis.tail_eps = e;
        }
    }

    /// SHA-256 of the canonical JSON form; identical configurations hash
    /// identically regardless of formatting or key order in the file.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Validates everything and converts to the runtime types. Relative
    /// paths are resolved against `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved, ConfigError> {
        let links = Links {
            sc: self.links.sc.budget("links.sc")?,
            ca: self.links.ca.budget("links.ca")?,
            sh: self.links.sh.budget("links.sh")?,
            ha: self.links.ha.budget("links.ha")?,
        };
        let code = CodeConfig {
            payload_bits: self.code.payload_bits,
            packet_len: self.code.packet_len_symbols,
        };
        if !(code.payload_bits.is_finite() && code.payload_bits > 0.0) {
            return Err(invalid("code.payload_bits", "must be positive"));
        }
        if !(code.packet_len.is_finite() && code.packet_len > 0.0) {
            return Err(invalid("code.packet_len_symbols", "must be positive"));
        }
        let sh_harq = HarqConfig::new(self.harq.scheme, self.harq.max_attempts, code)
            .map_err(|e| invalid("harq.max_attempts", e.to_string()))?;

        let report = match &self.gains.report {
            Some(p) => Some(crate::commands::EstimateReport::load(&base_dir.join(p))?),
            None => None,
        };
        let explicit_lag = self.lag.preset.is_some() || self.lag.states_steps.is_some();
        let chain = match (&report, explicit_lag) {
            (Some(r), false) => r.chain.chain.clone(),
            _ => self.lag.chain()?,
        };
        crate::humanmodel::stationary(&chain).map_err(|e| invalid("lag.transition", e.to_string()))?;

        let gains = self.resolve_gains(report.as_ref())?;

        if self.horizon_steps == 0 {
            return Err(invalid("horizon_steps", "must be at least 1"));
        }
        let a = &self.analysis;
        if !(a.tail_eps > 0.0 && a.tail_eps < 1.0) {
            return Err(invalid("analysis.tail_eps", format!("must lie in (0, 1), got {}", a.tail_eps)));
        }
        if a.mc_samples == 0 {
            return Err(invalid("analysis.mc_samples", "must be at least 1"));
        }
        if a.max_cycle_len == 0 {
            return Err(invalid("analysis.max_cycle_len", "must be at least 1"));
        }
        self.plant.validate().map_err(|e| invalid("plant", e.to_string()))?;
        let weights = CostWeights::new(self.simulate.cost_weights)
            .map_err(|e| invalid("simulate.cost_weights", e.to_string()))?;
        if self.simulate.replications == 0 {
            return Err(invalid("simulate.replications", "must be at least 1"));
        }
        if self.simulate.regimes.is_empty() {
            return Err(invalid("simulate.regimes", "must list at least one regime"));
        }

        let scenario = Scenario {
            links,
            code,
            sh_harq,
            chain,
            horizon: self.horizon_steps,
            seed: self.seed,
            regime: self.regime,
            options: SimOptions {
                lag_advance: self.lag.advance,
                reset_lag_each_cycle: self.lag.reset_each_cycle,
                ..SimOptions::default()
            },
        };
        scenario
            .validate()
            .map_err(|e| invalid("scenario", e.to_string()))?;
        Ok(Resolved {
            scenario,
            gains,
            mc: McSettings {
                samples: a.mc_samples,
                seed: a.mc_seed,
                ..McSettings::default()
            },
            interval: IntervalOptions {
                tail_eps: a.tail_eps,
                advance: self.lag.advance,
                max_len: a.max_cycle_len,
            },
            region: self.region.clone(),
            plant: self.plant,
            weights,
            simulate: self.simulate.clone(),
            estimate: self.estimate.clone(),
            out_dir: base_dir.join(&self.output.dir),
            hash: self.hash(),
        })
    }

    fn resolve_gains(&self, report: Option<&crate::commands::EstimateReport>) -> Result<Option<LyapunovGains>, ConfigError> {
        let g = &self.gains;
        let given = [g.alpha_hm, g.alpha_m, g.alpha_h, g.alpha];
        let gains = if given.iter().all(Option::is_some) {
            let gains = LyapunovGains {
                alpha_hm: g.alpha_hm.unwrap(),
                alpha_m: g.alpha_m.unwrap(),
                alpha_h: g.alpha_h.unwrap(),
                alpha: g.alpha.unwrap(),
            };
            Some(gains)
        } else if given.iter().any(Option::is_some) {
            let missing = Gain::ALL
                .iter()
                .zip(given)
                .find(|(_, v)| v.is_none())
                .map(|(g, _)| g.name())
                .unwrap_or_default();
            return Err(invalid(format!("gains.{missing}"), "missing (give all four gains or none)"));
        } else {
            report.and_then(|r| r.gains)
        };
        if let Some(gains) = &gains {
            for gain in Gain::ALL {
                let v = gains.get(gain);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(format!("gains.{}", gain.name()), format!("must be non-negative, got {v}")));
                }
            }
        }
        Ok(gains)
    }
}

/// A validated scenario in runtime units.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    /// `None` when the file gives no gains (simulation-only configs).
    pub gains: Option<LyapunovGains>,
    pub mc: McSettings,
    pub interval: IntervalOptions,
    pub region: RegionSection,
    pub plant: CartPoleParams,
    pub weights: CostWeights,
    pub simulate: SimulateSection,
    pub estimate: EstimateSection,
    pub out_dir: PathBuf,
    /// Hash of the configuration (after overrides).
    pub hash: String,
}

impl Resolved {
    pub fn gains(&self) -> Result<LyapunovGains, ConfigError> {
        self.gains
            .ok_or_else(|| invalid("gains", "this command needs all four gains (or gains.report)"))
    }
}

/// Reads, overrides and resolves a scenario file.
pub fn load(path: &Path, overrides: &Overrides) -> Result<Resolved, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = ScenarioConfig::from_toml(&text)?;
    cfg.apply(overrides);
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    cfg.resolve(base)
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_text() -> String {
        ScenarioConfig::reference().to_toml()
    }

    #[test]
    fn reference_round_trips_through_toml() {
        let cfg = ScenarioConfig::from_toml(&reference_text()).unwrap();
        assert_eq!(cfg, ScenarioConfig::reference());
        let r = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(r.scenario.links, Links::reference());
        assert_eq!(r.gains, Some(LyapunovGains::case_study()));
    }

    #[test]
    fn dbm_converted_once() {
        let l = LinkSection::reference(40.0).budget("x").unwrap();
        assert!((l.tx_power_mw - 199.526_231_496_888).abs() < 1e-9);
        assert!((l.noise_power_mw - 1e-7).abs() < 1e-20);
        assert_eq!(l.carrier_freq_hz, 915e6);
    }

    #[test]
    fn missing_link_is_reported() {
        let text = reference_text().replace("[links.ha]", "[unused_ha]");
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("unused_ha") || err.contains("ha"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("bogus_key = 1\n{}", reference_text());
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
    }

    #[test]
    fn field_level_diagnostics() {
        let mut cfg = ScenarioConfig::reference();
        cfg.links.sh.distance_m = -3.0;
        match cfg.resolve(Path::new(".")).unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "links.sh.distance_m"),
            e => panic!("{e}"),
        }
        let mut cfg = ScenarioConfig::reference();
        cfg.gains.alpha_h = None;
        match cfg.resolve(Path::new(".")).unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "gains.alpha_h"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn hash_depends_on_content_only() {
        let a = ScenarioConfig::reference();
        let b = ScenarioConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.apply(&Overrides { seed: Some(9), ..Default::default() });
        assert_ne!(a.hash(), c.hash());
    }
}
