//! Slot-level simulator of the machine and human control loops.
//!
//! [`LoopProcess`] generates the communication and human-loop events of each
//! slot without any plant; [`Simulation`] couples it to a [`Plant`]. Every
//! stochastic source draws from its own seeded stream (see [`crate::rngs`]),
//! so identical scenarios replay bit for bit.

use std::fmt::Debug;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PlantError, SimError};
use crate::harq::{conditional_error, HarqConfig, HarqScheme};
use crate::humanmodel::{sample_index, stationary, LagAdvance, LagChain};
use crate::linkmodel::{decode_error_prob, sample_snr_at_mean, CodeConfig, LinkBudget};
use crate::pmf::TruncatedPmf;
use crate::rngs::{source_rng, Source};
use crate::stability::Regime;

/// The four wireless links: sensor-controller (SC), controller-actuator
/// (CA), sensor-human (SH) and human-actuator (HA).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Links {
    pub sc: LinkBudget,
    pub ca: LinkBudget,
    pub sh: LinkBudget,
    pub ha: LinkBudget,
}

impl Links {
    /// Machine links at 40 m, human links at 45 m.
    pub fn reference() -> Self {
        Self {
            sc: LinkBudget::reference_machine(),
            ca: LinkBudget::reference_machine(),
            sh: LinkBudget::reference_human(),
            ha: LinkBudget::reference_human(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub lag_advance: LagAdvance,
    /// Draw the first lag of every cycle from the stationary law instead of
    /// continuing the chain across cycles.
    pub reset_lag_each_cycle: bool,
    /// Runs stop with a divergence flag once the plant norm exceeds this.
    pub divergence_cap: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            lag_advance: LagAdvance::EveryLoop,
            reset_lag_each_cycle: false,
            divergence_cap: 1e12,
        }
    }
}

/// Everything needed to run the loops (the plant is supplied separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub links: Links,
    pub code: CodeConfig,
    pub sh_harq: HarqConfig,
    pub chain: LagChain,
    /// Number of slots to simulate.
    pub horizon: u64,
    pub seed: u64,
    pub regime: Regime,
    pub options: SimOptions,
}

impl Scenario {
    /// Reference links, IR-HARQ with three attempts, the case-study lag chain.
    pub fn reference() -> Self {
        let code = CodeConfig::reference();
        Self {
            links: Links::reference(),
            code,
            sh_harq: HarqConfig::new(HarqScheme::IncrementalRedundancy, 3, code).expect("valid"),
            chain: LagChain::case_study(),
            horizon: 1000,
            seed: 0,
            regime: Regime::Collaborative,
            options: SimOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon == 0 {
            return Err(SimError::InvalidScenario("horizon must be at least 1".into()));
        }
        for link in [&self.links.sc, &self.links.ca, &self.links.sh, &self.links.ha] {
            link.validate()?;
        }
        self.code.validate()?;
        stationary(&self.chain)?;
        if !(self.options.divergence_cap > 0.0) {
            return Err(SimError::InvalidScenario("divergence cap must be positive".into()));
        }
        Ok(())
    }

    fn machine_active(&self) -> bool {
        self.regime != Regime::HumanOnly
    }

    fn human_active(&self) -> bool {
        self.regime != Regime::MachineOnly
    }

    fn perfect_channels(&self) -> bool {
        self.regime == Regime::ErrorFree
    }
}

/// Phase of the human loop during a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Sensor-to-human uplink (HARQ attempts).
    Sh,
    /// Human decision lag.
    Lag,
    /// Human-to-actuator downlink attempt.
    Ha,
    /// No human loop in this regime.
    Idle,
}

/// Loop-closure case of a slot: machine loop closed × human command applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// Both loops closed.
    One,
    /// Only the machine loop closed.
    Two,
    /// Only the human loop closed.
    Three,
    /// Both open.
    Four,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::One, Case::Two, Case::Three, Case::Four];

    pub fn from_closure(machine: bool, human: bool) -> Self {
        match (machine, human) {
            (true, true) => Case::One,
            (true, false) => Case::Two,
            (false, true) => Case::Three,
            (false, false) => Case::Four,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::One => "one",
            Case::Two => "two",
            Case::Three => "three",
            Case::Four => "four",
        }
    }
}

/// Human-loop events of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanSlot {
    /// Index `t'` of the human loop occupying this slot.
    pub loop_index: u64,
    pub phase: Phase,
    /// First slot of the loop: the plant state is sensed here.
    pub loop_start: bool,
    /// Outcome of the SH attempt made in this slot.
    pub sh_success: Option<bool>,
    /// Outcome of the HA attempt made in this slot.
    pub ha_success: Option<bool>,
    /// Lag of the current loop in slots.
    pub lag: u32,
}

/// A completed cycle (ends at a successful HA slot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleEnd {
    pub length: u64,
    pub loops: u64,
}

/// Communication and human-loop events of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotEvents {
    pub t: u64,
    pub sc: Option<bool>,
    /// `None` when no CA transmission was scheduled (SC failed).
    pub ca: Option<bool>,
    pub machine_closed: bool,
    pub human: HumanSlot,
    /// The command of the previous closed human loop reaches the plant now.
    pub human_applied: bool,
    pub cycle_end: Option<CycleEnd>,
}

impl SlotEvents {
    pub fn case(&self) -> Case {
        Case::from_closure(self.machine_closed, self.human_applied)
    }
}

/// Plant-free generator of loop events.
#[derive(Debug, Clone)]
pub struct LoopProcess {
    sc_rng: ChaCha8Rng,
    ca_rng: ChaCha8Rng,
    sh_rng: ChaCha8Rng,
    ha_rng: ChaCha8Rng,
    lag_rng: ChaCha8Rng,
    means: [f64; 4],
    code: CodeConfig,
    scheme: HarqScheme,
    max_attempts: usize,
    chain: LagChain,
    stationary: Vec<f64>,
    options: SimOptions,
    machine_active: bool,
    human_active: bool,
    perfect: bool,
    t: u64,
    loop_index: u64,
    phase: Phase,
    at_loop_start: bool,
    lag_state: Option<usize>,
    lag: u32,
    lag_left: u32,
    trial_u: f64,
    trial_floor: f64,
    trial_snrs: Vec<f64>,
    previous_closed: bool,
    pending_apply: bool,
    cycle_len: u64,
    cycle_loops: u64,
}

impl LoopProcess {
    pub fn new(scenario: &Scenario, replication: u64) -> Result<Self, SimError> {
        scenario.validate()?;
        let seed = scenario.seed;
        let l = &scenario.links;
        Ok(Self {
            sc_rng: source_rng(seed, Source::Sc, replication),
            ca_rng: source_rng(seed, Source::Ca, replication),
            sh_rng: source_rng(seed, Source::Sh, replication),
            ha_rng: source_rng(seed, Source::Ha, replication),
            lag_rng: source_rng(seed, Source::Lag, replication),
            means: [l.sc.mean_snr(), l.ca.mean_snr(), l.sh.mean_snr(), l.ha.mean_snr()],
            code: scenario.code,
            scheme: scenario.sh_harq.scheme,
            max_attempts: scenario.sh_harq.max_attempts,
            chain: scenario.chain.clone(),
            stationary: stationary(&scenario.chain)?,
            options: scenario.options,
            machine_active: scenario.machine_active(),
            human_active: scenario.human_active(),
            perfect: scenario.perfect_channels(),
            t: 0,
            loop_index: 0,
            phase: if scenario.human_active() { Phase::Sh } else { Phase::Idle },
            at_loop_start: true,
            lag_state: None,
            lag: 0,
            lag_left: 0,
            trial_u: 0.0,
            trial_floor: 1.0,
            trial_snrs: Vec::with_capacity(scenario.sh_harq.max_attempts),
            previous_closed: false,
            pending_apply: false,
            cycle_len: 0,
            cycle_loops: 0,
        })
    }

    /// One transmission over a fading link: success iff `U ≥ ε(γ)`.
    fn transmit(rng: &mut ChaCha8Rng, mean: f64, code: &CodeConfig) -> bool {
        let snr = sample_snr_at_mean(mean, rng);
        let eps = decode_error_prob(snr, code).unwrap_or(1.0);
        rng.gen::<f64>() >= eps
    }

    fn start_loop(&mut self) {
        let next = match self.lag_state {
            None => sample_index(&self.stationary, &mut self.lag_rng),
            Some(_) if self.previous_closed && self.options.reset_lag_each_cycle => {
                sample_index(&self.stationary, &mut self.lag_rng)
            }
            Some(i) => match self.options.lag_advance {
                LagAdvance::EveryLoop => self.chain.step(i, &mut self.lag_rng),
                LagAdvance::ClosedLoopsOnly if self.previous_closed => self.chain.step(i, &mut self.lag_rng),
                LagAdvance::ClosedLoopsOnly => i,
            },
        };
        self.lag_state = Some(next);
        self.lag = self.chain.states()[next];
        self.lag_left = self.lag;
        self.new_trial();
    }

    fn new_trial(&mut self) {
        self.trial_u = self.sh_rng.gen();
        self.trial_floor = 1.0;
        self.trial_snrs.clear();
    }

    /// One HARQ attempt. The trial's uniform is compared against the
    /// conditional error after the attempts so far, so the first success
    /// happens after attempt `r` with probability `Θ(r-1) - Θ(r)`.
    fn sh_attempt(&mut self) -> bool {
        if self.perfect {
            return true;
        }
        self.trial_snrs.push(sample_snr_at_mean(self.means[2], &mut self.sh_rng));
        let f = conditional_error(self.scheme, &self.trial_snrs, &self.code);
        self.trial_floor = self.trial_floor.min(f);
        if self.trial_u >= self.trial_floor {
            return true;
        }
        if self.trial_snrs.len() >= self.max_attempts {
            self.new_trial();
        }
        false
    }

    /// Advances one slot.
    pub fn next_slot(&mut self) -> SlotEvents {
        let t = self.t;
        self.t += 1;

        let (sc, ca, machine_closed) = if !self.machine_active {
            (None, None, false)
        } else if self.perfect {
            (Some(true), Some(true), true)
        } else {
            let sc = Self::transmit(&mut self.sc_rng, self.means[0], &self.code);
            // No CA transmission is scheduled when SC fails.
            let ca = sc.then(|| Self::transmit(&mut self.ca_rng, self.means[1], &self.code));
            (Some(sc), ca, ca == Some(true))
        };

        let human_applied = std::mem::take(&mut self.pending_apply);
        let mut human = HumanSlot {
            loop_index: self.loop_index,
            phase: self.phase,
            loop_start: false,
            sh_success: None,
            ha_success: None,
            lag: self.lag,
        };
        let mut cycle_end = None;
        if self.human_active {
            if self.at_loop_start {
                self.start_loop();
                self.at_loop_start = false;
                human.loop_start = true;
                human.lag = self.lag;
            }
            human.phase = self.phase;
            self.cycle_len += 1;
            match self.phase {
                Phase::Sh => {
                    let ok = self.sh_attempt();
                    human.sh_success = Some(ok);
                    if ok {
                        self.phase = Phase::Lag;
                    }
                }
                Phase::Lag => {
                    self.lag_left -= 1;
                    if self.lag_left == 0 {
                        self.phase = Phase::Ha;
                    }
                }
                Phase::Ha => {
                    let ok = self.perfect || Self::transmit(&mut self.ha_rng, self.means[3], &self.code);
                    human.ha_success = Some(ok);
                    self.cycle_loops += 1;
                    self.loop_index += 1;
                    self.previous_closed = ok;
                    self.at_loop_start = true;
                    self.phase = Phase::Sh;
                    if ok {
                        self.pending_apply = true;
                        cycle_end = Some(CycleEnd {
                            length: self.cycle_len,
                            loops: self.cycle_loops,
                        });
                        self.cycle_len = 0;
                        self.cycle_loops = 0;
                    }
                }
                Phase::Idle => unreachable!("idle phase with an active human loop"),
            }
        }

        SlotEvents {
            t,
            sc,
            ca,
            machine_closed,
            human,
            human_applied,
            cycle_end,
        }
    }
}

/// A controlled plant driven by the two loops.
pub trait Plant {
    type State: Clone + Debug + Serialize;

    fn initial_state(&self) -> Self::State;

    /// `x(t+1) = f(x(t), u_H(t), u_M(t), w(t))`; all randomness comes from
    /// `disturbance`.
    fn step<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        u_h: f64,
        u_m: f64,
        disturbance: &mut R,
    ) -> Result<Self::State, PlantError>;

    /// Machine command computed from the current state.
    fn machine_policy(&self, state: &Self::State) -> f64;

    /// Human command computed from the (stale) sensed state.
    fn human_policy(&self, observed: &Self::State) -> f64;

    /// Size of the state used for divergence detection.
    fn norm(&self, state: &Self::State) -> f64;
}

/// A plant without state, for studying the loops alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullPlant;

impl Plant for NullPlant {
    type State = ();

    fn initial_state(&self) {}

    fn step<R: Rng + ?Sized>(&self, _: &(), _: f64, _: f64, _: &mut R) -> Result<(), PlantError> {
        Ok(())
    }

    fn machine_policy(&self, _: &()) -> f64 {
        0.0
    }

    fn human_policy(&self, _: &()) -> f64 {
        0.0
    }

    fn norm(&self, _: &()) -> f64 {
        0.0
    }
}

/// One simulated slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<S> {
    pub t: u64,
    /// Plant state at the start of the slot.
    pub state: S,
    pub u_m: f64,
    pub u_h: f64,
    pub case: Case,
    pub events: SlotEvents,
}

/// A plant coupled to the loop process.
pub struct Simulation<P: Plant> {
    plant: P,
    process: LoopProcess,
    state: P::State,
    sensed: P::State,
    command: f64,
    disturbance: ChaCha8Rng,
    cap: f64,
    horizon: u64,
    t: u64,
    diverged: bool,
}

impl<P: Plant> Simulation<P> {
    pub fn new(scenario: &Scenario, plant: P, replication: u64) -> Result<Self, SimError> {
        let process = LoopProcess::new(scenario, replication)?;
        let state = plant.initial_state();
        Ok(Self {
            sensed: state.clone(),
            state,
            plant,
            process,
            command: 0.0,
            disturbance: source_rng(scenario.seed, Source::Disturbance, replication),
            cap: scenario.options.divergence_cap,
            horizon: scenario.horizon,
            t: 0,
            diverged: false,
        })
    }

    pub fn state(&self) -> &P::State {
        &self.state
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Simulates one slot; `None` once the horizon is reached or the plant
    /// diverged.
    pub fn step(&mut self) -> Result<Option<StepRecord<P::State>>, SimError> {
        if self.t >= self.horizon || self.diverged {
            return Ok(None);
        }
        let events = self.process.next_slot();
        if events.human.loop_start {
            self.sensed = self.state.clone();
        }
        let u_m = if events.machine_closed { self.plant.machine_policy(&self.state) } else { 0.0 };
        let u_h = if events.human_applied { self.command } else { 0.0 };
        if events.human.ha_success == Some(true) {
            self.command = self.plant.human_policy(&self.sensed);
        }
        let next = match self.plant.step(&self.state, u_h, u_m, &mut self.disturbance) {
            Ok(s) => s,
            Err(PlantError::NonFinite) => {
                self.diverged = true;
                self.state.clone()
            }
            Err(e) => return Err(e.into()),
        };
        let record = StepRecord {
            t: events.t,
            state: std::mem::replace(&mut self.state, next),
            u_m,
            u_h,
            case: events.case(),
            events,
        };
        let norm = self.plant.norm(&self.state);
        if !(norm.is_finite() && norm <= self.cap) {
            log::warn!("plant diverged at slot {} (norm {norm:e})", record.t);
            self.diverged = true;
        }
        self.t += 1;
        Ok(Some(record))
    }
}

/// Full record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace<S> {
    pub records: Vec<StepRecord<S>>,
    pub final_state: S,
    /// The run stopped early because the plant state blew up.
    pub diverged: bool,
}

impl<S: Serialize> Trace<S> {
    /// One JSON record per line.
    pub fn write_ndjson<W: std::io::Write>(&self, mut out: W) -> Result<(), crate::Error> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs replication `replication` of a scenario to its horizon.
pub fn run_replication<P: Plant>(
    scenario: &Scenario,
    plant: P,
    replication: u64,
) -> Result<Trace<P::State>, SimError> {
    let mut sim = Simulation::new(scenario, plant, replication)?;
    let mut records = Vec::with_capacity(scenario.horizon.min(1 << 24) as usize);
    while let Some(r) = sim.step()? {
        records.push(r);
    }
    Ok(Trace {
        records,
        diverged: sim.diverged,
        final_state: sim.state,
    })
}

/// Runs the scenario (replication 0).
pub fn run<P: Plant>(scenario: &Scenario, plant: P) -> Result<Trace<P::State>, SimError> {
    run_replication(scenario, plant, 0)
}

/// Runs `n` independent replications in parallel and applies `f` to each
/// trace; results are in replication order regardless of scheduling.
pub fn run_replications<P, T, F>(scenario: &Scenario, plant: &P, n: u64, f: F) -> Result<Vec<T>, SimError>
where
    P: Plant + Clone + Sync,
    T: Send,
    F: Fn(u64, Trace<P::State>) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|r| run_replication(scenario, plant.clone(), r).map(|trace| f(r, trace)))
        .collect()
}

/// Running sums `Σ_{s≤t} V(x(s))` over a trace.
pub fn cumulative_cost<S, V: Fn(&S) -> f64>(trace: &Trace<S>, v: V) -> Vec<f64> {
    trace
        .records
        .iter()
        .scan(0.0, |acc, r| {
            *acc += v(&r.state);
            Some(*acc)
        })
        .collect()
}

/// Slot-wise mean of several equally long sequences (shorter ones are
/// padded with their last value).
pub fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            curves
                .iter()
                .map(|c| c.get(t).or(c.last()).copied().unwrap_or(0.0))
                .sum::<f64>()
                / curves.len() as f64
        })
        .collect()
}

/// An estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    fn proportion(hits: u64, n: u64) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            value: p,
            std_err: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }

    /// Whether `x` lies within `k` standard errors (with a floor for
    /// degenerate estimates).
    pub fn within(&self, x: f64, k: f64) -> bool {
        (self.value - x).abs() <= k * self.std_err.max(1e-12)
    }
}

/// Empirical cycle statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycles: u64,
    pub slots: u64,
    pub lengths: TruncatedPmf,
    pub loop_counts: TruncatedPmf,
    pub mean_length: Estimate,
    pub p_h: Estimate,
    pub p_m: Option<Estimate>,
    /// Empirical distribution of the SH delay.
    pub sh_delays: TruncatedPmf,
}

/// Slots allowed per cycle before declaring starvation.
pub const STARVATION_SLOTS: u64 = 10_000_000;

/// Runs the loop process until `n_cycles` human loops have closed.
pub fn estimate_cycle_stats(scenario: &Scenario, n_cycles: u64) -> Result<CycleStats, SimError> {
    if n_cycles == 0 {
        return Err(SimError::InvalidScenario("need at least one cycle".into()));
    }
    if !scenario.human_active() {
        return Err(SimError::InvalidScenario("cycle statistics need an active human loop".into()));
    }
    let mut process = LoopProcess::new(scenario, 0)?;
    let mut lengths = Vec::with_capacity(n_cycles as usize);
    let mut counts = Vec::with_capacity(n_cycles as usize);
    let mut sh_delays = Vec::new();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let (mut loops, mut open_loops) = (0u64, 0u64);
    let (mut machine_slots, mut machine_open) = (0u64, 0u64);
    let mut slots = 0u64;
    let mut since_close = 0u64;
    let mut sh_slots = 0usize;
    while (lengths.len() as u64) < n_cycles {
        let ev = process.next_slot();
        slots += 1;
        since_close += 1;
        if ev.sc.is_some() {
            machine_slots += 1;
            machine_open += u64::from(!ev.machine_closed);
        }
        if ev.human.phase == Phase::Sh {
            sh_slots += 1;
            if ev.human.sh_success == Some(true) {
                sh_delays.push(sh_slots);
                sh_slots = 0;
            }
        }
        if let Some(ok) = ev.human.ha_success {
            loops += 1;
            open_loops += u64::from(!ok);
        }
        if let Some(end) = ev.cycle_end {
            let l = end.length as f64;
            sum += l;
            sum_sq += l * l;
            lengths.push(end.length as usize);
            counts.push(end.loops as usize);
            since_close = 0;
        }
        if since_close > STARVATION_SLOTS {
            return Err(SimError::Starvation { steps: since_close });
        }
    }
    let n = lengths.len() as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(CycleStats {
        cycles: n_cycles,
        slots,
        lengths: TruncatedPmf::from_samples(&lengths),
        loop_counts: TruncatedPmf::from_samples(&counts),
        mean_length: Estimate {
            value: mean,
            std_err: (var / n).sqrt(),
        },
        p_h: Estimate::proportion(open_loops, loops),
        p_m: (machine_slots > 0).then(|| Estimate::proportion(machine_open, machine_slots)),
        sh_delays: TruncatedPmf::from_samples(&sh_delays),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect_scenario(lag: u32) -> Scenario {
        Scenario {
            chain: LagChain::constant(lag).unwrap(),
            regime: Regime::ErrorFree,
            horizon: 30,
            ..Scenario::reference()
        }
    }

    #[test]
    fn perfect_channels_unit_lag() {
        let trace = run(&perfect_scenario(1), NullPlant).unwrap();
        assert!(trace.records.iter().all(|r| r.events.machine_closed));
        let closes: Vec<u64> = trace
            .records
            .iter()
            .filter(|r| r.events.cycle_end.is_some())
            .map(|r| r.t)
            .collect();
        assert_eq!(&closes[..4], &[2, 5, 8, 11]);
        let phases: Vec<Phase> = trace.records[..3].iter().map(|r| r.events.human.phase).collect();
        assert_eq!(phases, vec![Phase::Sh, Phase::Lag, Phase::Ha]);
        // Commands land on the slot after the HA success.
        assert!(trace.records[3].events.human_applied);
        assert_eq!(trace.records[3].case, Case::One);
        assert_eq!(trace.records[2].case, Case::Two);
    }

    #[test]
    fn ca_only_after_sc_success() {
        let scenario = Scenario { horizon: 5000, ..Scenario::reference() };
        let trace = run(&scenario, NullPlant).unwrap();
        for r in &trace.records {
            let e = r.events;
            assert_eq!(e.ca.is_some(), e.sc == Some(true));
            assert_eq!(e.machine_closed, e.sc == Some(true) && e.ca == Some(true));
        }
    }

    #[test]
    fn regimes_disable_loops() {
        let s = Scenario { regime: Regime::MachineOnly, horizon: 500, ..Scenario::reference() };
        let trace = run(&s, NullPlant).unwrap();
        assert!(trace.records.iter().all(|r| r.events.human.phase == Phase::Idle && !r.events.human_applied));
        let s = Scenario { regime: Regime::HumanOnly, horizon: 500, ..Scenario::reference() };
        let trace = run(&s, NullPlant).unwrap();
        assert!(trace.records.iter().all(|r| !r.events.machine_closed && r.events.sc.is_none()));
        assert!(trace.records.iter().any(|r| r.events.human_applied));
    }

    #[test]
    fn replay_is_identical() {
        let s = Scenario { horizon: 2000, seed: 42, ..Scenario::reference() };
        let a = run(&s, NullPlant).unwrap();
        let b = run(&s, NullPlant).unwrap();
        assert_eq!(a, b);
        let c = run(&Scenario { seed: 43, ..s }, NullPlant).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lag_chain_advances_once_per_loop() {
        let chain = LagChain::two_state(1, 2, 0.0, 0.0).unwrap();
        let s = Scenario { chain, regime: Regime::ErrorFree, horizon: 60, ..Scenario::reference() };
        let trace = run(&s, NullPlant).unwrap();
        let lags: Vec<u32> = trace
            .records
            .iter()
            .filter(|r| r.events.human.loop_start)
            .map(|r| r.events.human.lag)
            .collect();
        assert!(lags.windows(2).all(|w| w[0] != w[1]), "{lags:?}");
    }

    #[test]
    fn zero_open_probability_gives_single_loop_cycles() {
        let mut s = Scenario::reference();
        s.links.ha = LinkBudget::new(1e15, 915e6, 1.0, 0.0, 1.0, 1.0).unwrap();
        let stats = estimate_cycle_stats(&s, 2000).unwrap();
        assert_eq!(stats.loop_counts.prob(1), 1.0);
    }

    #[test]
    fn cumulative_cost_of_frozen_plant_is_zero() {
        let trace = run(&perfect_scenario(2), NullPlant).unwrap();
        assert!(cumulative_cost(&trace, |_| 0.0).iter().all(|&c| c == 0.0));
        assert_eq!(mean_curve(&[vec![1.0, 2.0], vec![3.0]]), vec![2.0, 2.5]);
    }
}
