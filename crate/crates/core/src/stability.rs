//! Stability tests for the dual-loop system and stability-region boundaries.
//!
//! With per-slot and per-cycle loss-averaged gains
//!
//! ```text
//! Ω = α_M (1 - p̄_M) + α p̄_M,    Λ = α_HM (1 - p̄_M) + α_H p̄_M,
//! ```
//!
//! the collaborative system is stochastically stable if `E[Ω^L] Λ < 1`,
//! where `L` is the cycle length between closed human loops.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycledist::{CycleDistributions, CycleModel};
use crate::error::StabilityError;
use crate::humanmodel::{stationary, LagChain};
use crate::numeric::bisect;
use crate::pmf::TruncatedPmf;

/// Half-width of the band around 1 reported as "boundary".
pub const STRICTNESS: f64 = 1e-12;

/// Largest acceptable contribution of a cut-off tail to a power moment.
pub const TRUNCATION_GUARD: f64 = 1e-6;

/// One-step worst-case growth ratios of the Lyapunov-like function in the
/// four loop-closure cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovGains {
    /// Both loops closed.
    pub alpha_hm: f64,
    /// Only the machine loop closed.
    pub alpha_m: f64,
    /// Only the human loop closed.
    pub alpha_h: f64,
    /// Both loops open.
    pub alpha: f64,
}

impl LyapunovGains {
    pub fn new(alpha_hm: f64, alpha_m: f64, alpha_h: f64, alpha: f64) -> Result<Self, StabilityError> {
        let g = Self {
            alpha_hm,
            alpha_m,
            alpha_h,
            alpha,
        };
        g.validate()?;
        Ok(g)
    }

    /// Gains estimated from the cart-pole operator experiment.
    pub fn case_study() -> Self {
        Self {
            alpha_hm: 0.5271,
            alpha_m: 0.7949,
            alpha_h: 1.0196,
            alpha: 1.0134,
        }
    }

    pub fn validate(&self) -> Result<(), StabilityError> {
        for g in Gain::ALL {
            let v = self.get(g);
            if !(v.is_finite() && v >= 0.0) {
                return Err(StabilityError::InvalidGains(format!("{} = {v} must be finite and non-negative", g.name())));
            }
        }
        if self.alpha <= 0.0 {
            return Err(StabilityError::InvalidGains("alpha must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn get(&self, gain: Gain) -> f64 {
        match gain {
            Gain::HumanMachine => self.alpha_hm,
            Gain::Machine => self.alpha_m,
            Gain::Human => self.alpha_h,
            Gain::Open => self.alpha,
        }
    }

    pub fn with(mut self, gain: Gain, value: f64) -> Self {
        match gain {
            Gain::HumanMachine => self.alpha_hm = value,
            Gain::Machine => self.alpha_m = value,
            Gain::Human => self.alpha_h = value,
            Gain::Open => self.alpha = value,
        }
        self
    }

    /// `Ω = α_M (1 - p̄_M) + α p̄_M`.
    pub fn omega(&self, p_m: f64) -> f64 {
        self.alpha_m * (1.0 - p_m) + self.alpha * p_m
    }

    /// `Λ = α_HM (1 - p̄_M) + α_H p̄_M`.
    pub fn lambda(&self, p_m: f64) -> f64 {
        self.alpha_hm * (1.0 - p_m) + self.alpha_h * p_m
    }
}

/// Names of the four gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gain {
    #[serde(rename = "alpha_hm")]
    HumanMachine,
    #[serde(rename = "alpha_m")]
    Machine,
    #[serde(rename = "alpha_h")]
    Human,
    #[serde(rename = "alpha")]
    Open,
}

impl Gain {
    pub const ALL: [Gain; 4] = [Gain::HumanMachine, Gain::Machine, Gain::Human, Gain::Open];

    pub fn name(self) -> &'static str {
        match self {
            Gain::HumanMachine => "alpha_hm",
            Gain::Machine => "alpha_m",
            Gain::Human => "alpha_h",
            Gain::Open => "alpha",
        }
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gain {
    type Err = StabilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alpha_hm" | "hm" => Ok(Gain::HumanMachine),
            "alpha_m" | "m" => Ok(Gain::Machine),
            "alpha_h" | "h" => Ok(Gain::Human),
            "alpha" | "o" => Ok(Gain::Open),
            other => Err(StabilityError::InvalidGains(format!("unknown gain `{other}`"))),
        }
    }
}

/// Which loops are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Regime {
    #[default]
    #[serde(rename = "collab", alias = "collaborative")]
    Collaborative,
    #[serde(rename = "machine", alias = "machine-only")]
    MachineOnly,
    #[serde(rename = "human", alias = "human-only")]
    HumanOnly,
    #[serde(rename = "error-free")]
    ErrorFree,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Collaborative, Regime::MachineOnly, Regime::HumanOnly, Regime::ErrorFree];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Collaborative => "collab",
            Regime::MachineOnly => "machine",
            Regime::HumanOnly => "human",
            Regime::ErrorFree => "error-free",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collab" | "collaborative" => Ok(Regime::Collaborative),
            "machine" | "machine-only" => Ok(Regime::MachineOnly),
            "human" | "human-only" => Ok(Regime::HumanOnly),
            "error-free" => Ok(Regime::ErrorFree),
            other => Err(format!("unknown regime `{other}` (collab|machine|human|error-free)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Boundary,
    Unstable,
}

impl Verdict {
    pub fn from_lhs(lhs: f64) -> Self {
        if lhs < 1.0 - STRICTNESS {
            Verdict::Stable
        } else if lhs <= 1.0 + STRICTNESS {
            Verdict::Boundary
        } else {
            Verdict::Unstable
        }
    }
}

/// Factors entering a stability test.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Components {
    /// Base of the power moment (`Ω`, `α` or `α_M`).
    pub base: Option<f64>,
    /// `E[base^L]`.
    pub expected_power: Option<f64>,
    /// Multiplier after the moment (`Λ`, `α_H`, `α_HM` or `α_M/α`).
    pub factor: Option<f64>,
    pub p_m: Option<f64>,
    /// Mean cycle length `E[L]` where a cycle distribution was used.
    pub mean_cycle: Option<f64>,
}

/// Result of one stability test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub regime: Regime,
    /// Left-hand side of the test; infinite when the moment diverges.
    pub lhs: f64,
    pub verdict: Verdict,
    pub stable: bool,
    /// Series diverged (infinite left-hand side).
    pub divergent: bool,
    /// Bound on the error of `lhs` due to truncation.
    pub truncation_error: f64,
    pub components: Components,
}

impl StabilityVerdict {
    fn new(regime: Regime, lhs: f64, truncation_error: f64, components: Components) -> Self {
        let verdict = Verdict::from_lhs(lhs);
        Self {
            regime,
            lhs,
            verdict,
            stable: verdict == Verdict::Stable,
            divergent: lhs.is_infinite(),
            truncation_error,
            components,
        }
    }
}

/// `E[base^L]` together with a truncation-error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moment {
    pub value: f64,
    pub truncation_error: f64,
}

/// Anything that can provide `E[base^L]` for the cycle length.
pub trait PowerMoment {
    fn power_moment(&self, base: f64) -> Result<Moment, StabilityError>;

    /// `E[L]` if known.
    fn mean_length(&self) -> Option<f64> {
        None
    }
}

impl PowerMoment for CycleModel {
    fn power_moment(&self, base: f64) -> Result<Moment, StabilityError> {
        Ok(Moment {
            value: self.transform(base).unwrap_or(f64::INFINITY),
            truncation_error: 0.0,
        })
    }

    fn mean_length(&self) -> Option<f64> {
        Some(self.mean())
    }
}

impl PowerMoment for CycleDistributions {
    /// Closed form; the truncation error reports how far the truncated sum
    /// over `z_l` is from it.
    fn power_moment(&self, base: f64) -> Result<Moment, StabilityError> {
        let exact = self.model().transform(base).unwrap_or(f64::INFINITY);
        let truncated = self.pmf().power_moment(base);
        Ok(Moment {
            value: exact,
            truncation_error: (exact - truncated).abs(),
        })
    }

    fn mean_length(&self) -> Option<f64> {
        Some(self.mean())
    }
}

impl PowerMoment for TruncatedPmf {
    /// Sum over the stored support. For `base > 1` the neglected tail may
    /// contribute at least `base^{L_max} · tail`; that must stay below
    /// [`TRUNCATION_GUARD`].
    fn power_moment(&self, base: f64) -> Result<Moment, StabilityError> {
        let value = TruncatedPmf::power_moment(self, base);
        let error = if base > 1.0 {
            base.powf(self.end() as f64) * self.tail()
        } else {
            self.tail()
        };
        if error > TRUNCATION_GUARD {
            return Err(StabilityError::Truncation { base, error });
        }
        Ok(Moment {
            value,
            truncation_error: error,
        })
    }

    fn mean_length(&self) -> Option<f64> {
        Some(self.mean())
    }
}

fn check_prob(p: f64) -> Result<(), StabilityError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(StabilityError::InvalidProbability(p))
    }
}

/// Collaborative test: `lhs = E[Ω^L] · Λ`.
pub fn theorem1_lhs<Z: PowerMoment + ?Sized>(
    gains: &LyapunovGains,
    p_m: f64,
    z: &Z,
) -> Result<StabilityVerdict, StabilityError> {
    gains.validate()?;
    check_prob(p_m)?;
    Ok(collaborative_unchecked(gains, p_m, z)?)
}

fn collaborative_unchecked<Z: PowerMoment + ?Sized>(
    gains: &LyapunovGains,
    p_m: f64,
    z: &Z,
) -> Result<StabilityVerdict, StabilityError> {
    let omega = gains.omega(p_m);
    let lambda = gains.lambda(p_m);
    let moment = z.power_moment(omega)?;
    let lhs = if lambda == 0.0 { 0.0 } else { moment.value * lambda };
    Ok(StabilityVerdict::new(
        Regime::Collaborative,
        lhs,
        moment.truncation_error * lambda,
        Components {
            base: Some(omega),
            expected_power: Some(moment.value),
            factor: Some(lambda),
            p_m: Some(p_m),
            mean_cycle: z.mean_length(),
        },
    ))
}

/// Human-only test (machine loop always open): `lhs = E[α^L] · α_H`.
pub fn human_only_lhs<Z: PowerMoment + ?Sized>(
    gains: &LyapunovGains,
    z: &Z,
) -> Result<StabilityVerdict, StabilityError> {
    gains.validate()?;
    let moment = z.power_moment(gains.alpha)?;
    let lhs = if gains.alpha_h == 0.0 { 0.0 } else { moment.value * gains.alpha_h };
    Ok(StabilityVerdict::new(
        Regime::HumanOnly,
        lhs,
        moment.truncation_error * gains.alpha_h,
        Components {
            base: Some(gains.alpha),
            expected_power: Some(moment.value),
            factor: Some(gains.alpha_h),
            p_m: Some(1.0),
            mean_cycle: z.mean_length(),
        },
    ))
}

/// Machine-only test: `(α_M / α) E[α^{L̂}]` with geometric `L̂`, which sums to
/// `α_M (1 - p̄_M) / (1 - α p̄_M)`. Infinite when `α p̄_M ≥ 1`.
pub fn machine_only_lhs(gains: &LyapunovGains, p_m: f64) -> Result<StabilityVerdict, StabilityError> {
    gains.validate()?;
    check_prob(p_m)?;
    let ap = gains.alpha * p_m;
    let lhs = if ap >= 1.0 {
        f64::INFINITY
    } else {
        gains.alpha_m * (1.0 - p_m) / (1.0 - ap)
    };
    let moment = if ap >= 1.0 { f64::INFINITY } else { gains.alpha * (1.0 - p_m) / (1.0 - ap) };
    Ok(StabilityVerdict::new(
        Regime::MachineOnly,
        lhs,
        0.0,
        Components {
            base: Some(gains.alpha),
            expected_power: Some(moment),
            factor: Some(gains.alpha_m / gains.alpha),
            p_m: Some(p_m),
            mean_cycle: (p_m < 1.0).then(|| 1.0 / (1.0 - p_m)),
        },
    ))
}

/// The machine-only left-hand side summed term by term up to `l_max`.
pub fn machine_only_series(gains: &LyapunovGains, p_m: f64, l_max: usize) -> f64 {
    let mut term = gains.alpha * (1.0 - p_m);
    let mut total = 0.0;
    for _ in 0..l_max {
        total += term;
        term *= gains.alpha * p_m;
    }
    gains.alpha_m / gains.alpha * total
}

/// Perfect channels: `lhs = α_HM Σ_k α_M^{k+1} v_k` with `v` the stationary
/// lag law.
pub fn error_free_lhs(gains: &LyapunovGains, chain: &LagChain) -> Result<StabilityVerdict, StabilityError> {
    gains.validate()?;
    let v = stationary(chain).map_err(|e| StabilityError::Cycle(e.into()))?;
    let moment: f64 = chain
        .states()
        .iter()
        .zip(&v)
        .map(|(&k, p)| gains.alpha_m.powi(k as i32 + 1) * p)
        .sum();
    let lhs = if gains.alpha_hm == 0.0 { 0.0 } else { moment * gains.alpha_hm };
    Ok(StabilityVerdict::new(
        Regime::ErrorFree,
        lhs,
        0.0,
        Components {
            base: Some(gains.alpha_m),
            expected_power: Some(moment),
            factor: Some(gains.alpha_hm),
            p_m: Some(0.0),
            mean_cycle: None,
        },
    ))
}

/// A straight boundary `y = intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

impl Line {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Boundary in the `(α_H, α_HM)` plane for fixed `α_M`, `α`:
/// `α_HM = 1 / (E[Ω^L] (1 - p̄_M)) - α_H p̄_M / (1 - p̄_M)`.
pub fn boundary_linear_hm_h<Z: PowerMoment + ?Sized>(
    gains: &LyapunovGains,
    p_m: f64,
    z: &Z,
) -> Result<Line, StabilityError> {
    check_prob(p_m)?;
    if p_m >= 1.0 {
        return Err(StabilityError::NoRoot("p_M = 1: the boundary does not involve alpha_hm".into()));
    }
    let moment = z.power_moment(gains.omega(p_m))?.value;
    Ok(Line {
        slope: -p_m / (1.0 - p_m),
        intercept: 1.0 / (moment * (1.0 - p_m)),
    })
}

/// Boundary in the `(α_M, α)` plane for fixed `α_HM`, `α_H`: all gain pairs
/// with `α_M (1 - p̄_M) + α p̄_M = Ω*`, where `E[Ω*^L] Λ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaBoundary {
    pub omega_star: f64,
    pub p_m: f64,
}

impl OmegaBoundary {
    /// `α` on the boundary for a given `α_M` (requires `p̄_M > 0`).
    pub fn alpha_for(&self, alpha_m: f64) -> Option<f64> {
        (self.p_m > 0.0).then(|| (self.omega_star - alpha_m * (1.0 - self.p_m)) / self.p_m)
    }

    /// The boundary as `α = intercept + slope · α_M` (requires `p̄_M > 0`).
    pub fn line(&self) -> Option<Line> {
        (self.p_m > 0.0).then(|| Line {
            slope: -(1.0 - self.p_m) / self.p_m,
            intercept: self.omega_star / self.p_m,
        })
    }
}

/// Solves `E[Ω^L] = 1/Λ` for `Ω` by bisection.
pub fn boundary_linear_m_alpha<Z: PowerMoment + ?Sized>(
    gains: &LyapunovGains,
    p_m: f64,
    z: &Z,
) -> Result<OmegaBoundary, StabilityError> {
    check_prob(p_m)?;
    let lambda = gains.lambda(p_m);
    if !(lambda > 0.0) {
        return Err(StabilityError::NoRoot("Lambda = 0: stable for every alpha_m, alpha".into()));
    }
    let target = 1.0 / lambda;
    let f = |omega: f64| -> f64 {
        match z.power_moment(omega) {
            Ok(m) if m.value.is_finite() => m.value.ln() - target.ln(),
            _ => f64::INFINITY,
        }
    };
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(StabilityError::NoRoot("E[Omega^L] stays below 1/Lambda".into()));
        }
    }
    let omega_star = bisect(f, 0.0, hi, 1e-15)?;
    Ok(OmegaBoundary { omega_star, p_m })
}

/// Whether a boundary point was found on the scanned axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointStatus {
    Bounded,
    /// Stable for every scanned value of the second gain.
    Unbounded,
    /// Unstable even with the second gain at zero.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x: f64,
    pub y: Option<f64>,
    /// Left-hand side at the emitted point.
    pub lhs: Option<f64>,
    pub status: PointStatus,
}

/// Largest value of the second gain scanned before declaring unboundedness.
pub const GAIN_CAP: f64 = 1e6;

fn lhs_value<Z: PowerMoment + ?Sized>(gains: &LyapunovGains, p_m: f64, z: &Z) -> f64 {
    collaborative_unchecked(gains, p_m, z).map_or(f64::INFINITY, |v| v.lhs)
}

/// Solves `lhs = 1` for the gain `y` with the other gains fixed.
pub fn solve_gain<Z: PowerMoment + ?Sized>(
    gains: &LyapunovGains,
    y: Gain,
    p_m: f64,
    z: &Z,
) -> BoundaryPoint {
    let x = f64::NAN;
    let g = |v: f64| lhs_value(&gains.with(y, v), p_m, z) - 1.0;
    if g(0.0) >= 0.0 {
        return BoundaryPoint { x, y: None, lhs: None, status: PointStatus::Empty };
    }
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > GAIN_CAP {
            return BoundaryPoint { x, y: None, lhs: None, status: PointStatus::Unbounded };
        }
    }
    match bisect(g, 0.0, hi, 1e-15) {
        Ok(root) => BoundaryPoint {
            x,
            y: Some(root),
            lhs: Some(lhs_value(&gains.with(y, root), p_m, z)),
            status: PointStatus::Bounded,
        },
        Err(_) => BoundaryPoint { x, y: None, lhs: None, status: PointStatus::Unbounded },
    }
}

/// Boundary of the stable region in the `(first, second)` plane: for every
/// grid value of `first`, the value of `second` with `lhs = 1`.
pub fn boundary_curve<Z: PowerMoment + Sync + ?Sized>(
    first: Gain,
    second: Gain,
    fixed: &LyapunovGains,
    p_m: f64,
    z: &Z,
    grid: &[f64],
) -> Result<Vec<BoundaryPoint>, StabilityError> {
    if first == second {
        return Err(StabilityError::InvalidGains("the two gains of a pair must differ".into()));
    }
    check_prob(p_m)?;
    Ok(grid
        .par_iter()
        .map(|&x| BoundaryPoint {
            x,
            ..solve_gain(&fixed.with(first, x), second, p_m, z)
        })
        .collect())
}

/// Second differences `y_{i-1} - 2 y_i + y_{i+1}` of consecutive bounded
/// points on an equally spaced grid.
pub fn second_differences(points: &[BoundaryPoint]) -> Vec<f64> {
    points
        .windows(3)
        .filter_map(|w| Some(w[0].y? - 2.0 * w[1].y? + w[2].y?))
        .collect()
}

/// Least-squares line through the bounded points and the largest residual.
pub fn fit_line(points: &[BoundaryPoint]) -> Option<(Line, f64)> {
    let pts: Vec<(f64, f64)> = points.iter().filter_map(|p| Some((p.x, p.y?))).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let line = Line { slope, intercept: my - slope * mx };
    let resid = pts.iter().map(|p| (p.1 - line.at(p.0)).abs()).fold(0.0, f64::max);
    Some((line, resid))
}

/// One cell of a region raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterCell {
    pub x: f64,
    pub y: f64,
    pub lhs: f64,
    pub stable: bool,
}

/// Evaluates the collaborative test on the grid `xs × ys` (row-major in `xs`).
pub fn region_raster<Z: PowerMoment + Sync + ?Sized>(
    first: Gain,
    second: Gain,
    fixed: &LyapunovGains,
    p_m: f64,
    z: &Z,
    xs: &[f64],
    ys: &[f64],
) -> Result<Vec<RasterCell>, StabilityError> {
    check_prob(p_m)?;
    let cells: Vec<(f64, f64)> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    Ok(cells
        .par_iter()
        .map(|&(x, y)| {
            let lhs = lhs_value(&fixed.with(first, x).with(second, y), p_m, z);
            RasterCell { x, y, lhs, stable: Verdict::from_lhs(lhs) == Verdict::Stable }
        })
        .collect())
}

/// CSV with columns `<first>,<second>,lhs,status`.
pub fn write_boundary_csv<W: Write>(
    points: &[BoundaryPoint],
    first: Gain,
    second: Gain,
    out: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([first.name(), second.name(), "lhs", "status"])?;
    for p in points {
        let status = match p.status {
            PointStatus::Bounded => "bounded",
            PointStatus::Unbounded => "unbounded",
            PointStatus::Empty => "empty",
        };
        wtr.write_record([
            p.x.to_string(),
            p.y.map_or(String::new(), |y| y.to_string()),
            p.lhs.map_or(String::new(), |l| l.to_string()),
            status.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// CSV with columns `<first>,<second>,lhs,stable`.
pub fn write_raster_csv<W: Write>(cells: &[RasterCell], first: Gain, second: Gain, out: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([first.name(), second.name(), "lhs", "stable"])?;
    for c in cells {
        wtr.write_record([c.x.to_string(), c.y.to_string(), c.lhs.to_string(), c.stable.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Evenly spaced grid of `n` points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycledist::{interval_pmf, IntervalOptions};
    use crate::harq::ShDelayPmf;
    use crate::humanmodel::LagAdvance;

    fn point(l: usize) -> TruncatedPmf {
        TruncatedPmf::point(l)
    }

    fn model() -> CycleModel {
        let w = ShDelayPmf::from_thetas(&[0.6, 0.15, 0.023], 1e-12).unwrap();
        CycleModel::new(w, LagChain::variable(), 0.6, LagAdvance::EveryLoop).unwrap()
    }

    #[test]
    fn unit_gains_sit_on_the_boundary() {
        let g = LyapunovGains::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let v = theorem1_lhs(&g, 0.3, &model()).unwrap();
        assert!((v.lhs - 1.0).abs() < 1e-12);
        assert!(!v.stable);
        assert_eq!(v.verdict, Verdict::Boundary);
    }

    #[test]
    fn point_mass_arithmetic() {
        let g = LyapunovGains::new(0.5, 0.8, 0.9, 1.2).unwrap();
        let v = theorem1_lhs(&g, 0.5, &point(2)).unwrap();
        assert!((v.components.base.unwrap() - 1.0).abs() < 1e-15);
        assert!((v.components.factor.unwrap() - 0.7).abs() < 1e-15);
        assert!((v.lhs - 0.7).abs() < 1e-15);
        assert!(v.stable);
    }

    #[test]
    fn invalid_inputs() {
        assert!(LyapunovGains::new(-0.1, 1.0, 1.0, 1.0).is_err());
        assert!(LyapunovGains::new(0.1, 1.0, 1.0, 0.0).is_err());
        let g = LyapunovGains::case_study();
        assert!(theorem1_lhs(&g, 1.5, &point(2)).is_err());
    }

    #[test]
    fn tail_dominated_truncated_pmf_is_rejected() {
        let z = TruncatedPmf::new(1, vec![0.5, 0.5 - 1e-4], 1e-4);
        let g = LyapunovGains::new(0.5, 1.5, 1.0, 1.5).unwrap();
        assert!(matches!(theorem1_lhs(&g, 0.5, &z), Err(StabilityError::Truncation { .. })));
    }

    #[test]
    fn error_free_cases() {
        let chain = LagChain::prolonged();
        let g = LyapunovGains::new(0.7, 1.0, 1.0, 1.0).unwrap();
        assert!((error_free_lhs(&g, &chain).unwrap().lhs - 0.7).abs() < 1e-15);
        let g = LyapunovGains::new(0.0, 1.3, 1.0, 1.0).unwrap();
        let v = error_free_lhs(&g, &chain).unwrap();
        assert_eq!(v.lhs, 0.0);
        assert!(v.stable);
        let g = LyapunovGains::new(0.9, 1.01, 1.0, 1.0).unwrap();
        let hand = 0.9 * (0.5 * 1.01f64.powi(6) + 0.5 * 1.01f64.powi(26));
        assert!((error_free_lhs(&g, &chain).unwrap().lhs - hand).abs() < 1e-14);
    }

    #[test]
    fn human_only_cases() {
        let m = model();
        let g = LyapunovGains::new(0.3, 0.4, 0.8, 1.0).unwrap();
        assert!((human_only_lhs(&g, &m).unwrap().lhs - 0.8).abs() < 1e-12);
        let g = LyapunovGains::new(0.3, 0.4, 0.99, 0.99).unwrap();
        assert!(human_only_lhs(&g, &m).unwrap().stable);
    }

    #[test]
    fn machine_only_cases() {
        let g = LyapunovGains::case_study();
        assert!((machine_only_lhs(&g, 0.0).unwrap().lhs - g.alpha_m).abs() < 1e-15);
        for p in [0.1, 0.5, 0.7277, 0.9] {
            let closed = machine_only_lhs(&g, p).unwrap().lhs;
            let series = machine_only_series(&g, p, 2000);
            assert!((closed - series).abs() < 1e-10, "{p}: {closed} vs {series}");
        }
        let g = LyapunovGains::new(0.5, 0.5, 0.5, 2.0).unwrap();
        let v = machine_only_lhs(&g, 0.6).unwrap();
        assert!(v.divergent && !v.stable);
    }

    #[test]
    fn hm_h_boundary_is_self_consistent() {
        let m = model();
        let g = LyapunovGains::new(0.0, 1.01, 0.0, 1.02).unwrap();
        let line = boundary_linear_hm_h(&g, 0.5, &m).unwrap();
        assert!((line.slope + 1.0).abs() < 1e-15);
        for a_h in [0.0, 0.2, 0.5] {
            let a_hm = line.at(a_h);
            let v = theorem1_lhs(&g.with(Gain::Human, a_h).with(Gain::HumanMachine, a_hm), 0.5, &m).unwrap();
            assert!((v.lhs - 1.0).abs() < 1e-8);
        }
        let line = boundary_linear_hm_h(&g, 0.0, &m).unwrap();
        assert_eq!(line.slope, 0.0);
        assert!((line.intercept - 1.0 / m.transform(1.01).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn omega_boundary() {
        let g = LyapunovGains::new(0.5, 0.0, 0.8, 1.0).unwrap();
        let b = boundary_linear_m_alpha(&g, 0.4, &point(1)).unwrap();
        assert!((b.omega_star - 1.0 / g.lambda(0.4)).abs() < 1e-12);
        let m = model();
        let b = boundary_linear_m_alpha(&g, 0.4, &m).unwrap();
        for a_m in [0.5, 0.9, 1.0] {
            let alpha = b.alpha_for(a_m).unwrap();
            let v = theorem1_lhs(&g.with(Gain::Machine, a_m).with(Gain::Open, alpha), 0.4, &m).unwrap();
            assert!((v.lhs - 1.0).abs() < 1e-8);
        }
        let big = g.with(Gain::HumanMachine, 1e6).with(Gain::Human, 1e6);
        let small = boundary_linear_m_alpha(&big, 0.4, &m).unwrap();
        assert!(small.omega_star < b.omega_star);
    }

    #[test]
    fn curves_and_degenerate_regions() {
        let m = model();
        let fixed = LyapunovGains::new(0.0, 1.01, 0.0, 1.02).unwrap();
        let grid = linspace(0.0, 0.6, 7);
        let pts = boundary_curve(Gain::Human, Gain::HumanMachine, &fixed, 0.3, &m, &grid).unwrap();
        let line = boundary_linear_hm_h(&fixed, 0.3, &m).unwrap();
        for p in &pts {
            if let Some(y) = p.y {
                assert!((y - line.at(p.x)).abs() < 1e-6);
                assert!((p.lhs.unwrap() - 1.0).abs() < 1e-6);
            }
        }
        let zero = LyapunovGains::new(0.0, 0.0, 0.0, 1e-300).unwrap();
        let pts = boundary_curve(Gain::HumanMachine, Gain::Human, &zero, 0.0, &point(3), &[0.0]).unwrap();
        assert_eq!(pts[0].status, PointStatus::Unbounded);

        let fixed = LyapunovGains::new(0.3, 0.0, 0.0, 1.02).unwrap();
        let pts = boundary_curve(Gain::Machine, Gain::Human, &fixed, 0.3, &m, &linspace(0.5, 1.0, 11)).unwrap();
        assert!(second_differences(&pts).iter().all(|d| *d >= -1e-8));
    }

    #[test]
    fn lhs_increases_in_every_gain() {
        let w = ShDelayPmf::from_thetas(&[0.6, 0.15, 0.023], 1e-12).unwrap();
        let z = interval_pmf(&w, &LagChain::case_study(), 0.6, &IntervalOptions::default()).unwrap();
        let base = LyapunovGains::case_study();
        let l0 = theorem1_lhs(&base, 0.7, &z).unwrap().lhs;
        for g in Gain::ALL {
            let v = theorem1_lhs(&base.with(g, base.get(g) + 0.01), 0.7, &z).unwrap();
            assert!(v.lhs > l0, "{g}");
        }
    }

    #[test]
    fn names_parse() {
        assert_eq!("alpha_hm".parse::<Gain>().unwrap(), Gain::HumanMachine);
        assert_eq!("error-free".parse::<Regime>().unwrap(), Regime::ErrorFree);
        assert!("beta".parse::<Gain>().is_err());
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }
}
