//! One operator session, advanced one slot per tick.
//!
//! The operator sees the plant through the SH uplink: the state shown at
//! slot `t` is `x(t - d)`, where `d` is the SH-HARQ delay drawn for the
//! active human loop. A loop opens for decisions once its first sample has
//! arrived (`d` slots after the loop started) and the weight is on screen;
//! from that slot the lag clock runs until the operator presses `S`. The
//! press is sent over the HA link in the slot it is processed, and a
//! successful command is applied in the next slot. Either way the loop
//! closes and a new one starts.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use whmc::cartpole::{CartPole, CartPoleParams, CartPoleState};
use whmc::commands::{check, estimate, EstimateOptions, EstimateReport, LogInput};
use whmc::config::Resolved;
use whmc::cycledist::IntervalOptions;
use whmc::harq::{sh_delay_pmf, McSettings, ShDelayPmf};
use whmc::linkmodel::{decode_error_prob, sample_snr, LinkBudget};
use whmc::rngs::{source_rng, stream_id, Source};
use whmc::sessionlog::{LogRecord, SessionLog, LOG_VERSION};
use whmc::simkernel::{Case, Plant, Scenario};
use whmc::stability::Regime;

use crate::wire::{ControlAction, WireMessage};

/// Everything a session needs, shared by all sessions of a server.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub scenario: Scenario,
    pub plant: CartPoleParams,
    pub mc: McSettings,
    pub interval: IntervalOptions,
    pub estimate: EstimateOptions,
    pub config_hash: String,
}

impl SessionConfig {
    pub fn from_resolved(cfg: &Resolved) -> Self {
        Self {
            scenario: cfg.scenario.clone(),
            plant: cfg.plant,
            mc: cfg.mc,
            interval: cfg.interval,
            estimate: EstimateOptions::from(cfg),
            config_hash: cfg.hash.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionPhase {
    Ready,
    Running,
    Paused,
    Ended,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session is {0:?}")]
    NotRunning(SessionPhase),
    #[error("unsupported key `{0}` (only S intervenes)")]
    UnknownKey(String),
    #[error(transparent)]
    Core(#[from] whmc::Error),
}

/// Slots of plant history kept for delayed display; an SH delay longer
/// than this (probability far below any tail tolerance) shows the oldest
/// kept state.
const HISTORY: u64 = 4096;

/// A keypress waiting for the next tick boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PendingPress {
    client_time: f64,
}

#[derive(Debug, Clone, Copy)]
struct HumanLoop {
    index: u64,
    start: u64,
    sh_delay: u64,
    /// First slot in which the weight was on screen for this loop.
    visible: Option<u64>,
}

#[derive(Debug)]
struct Streams {
    sc: ChaCha8Rng,
    ca: ChaCha8Rng,
    sh: ChaCha8Rng,
    ha: ChaCha8Rng,
    plant: ChaCha8Rng,
}

/// Outcome of a finished session.
#[derive(Debug, Clone)]
pub struct Finalized {
    pub log: SessionLog,
    pub estimate: Option<EstimateReport>,
    pub verdict: WireMessage,
}

#[derive(Debug)]
pub struct Session {
    id: String,
    cfg: Arc<SessionConfig>,
    seed: u64,
    sh: ShDelayPmf,
    plant: CartPole,
    phase: SessionPhase,
    t: u64,
    state: CartPoleState,
    /// `history[i]` is `x(history_start + i)`.
    history: VecDeque<CartPoleState>,
    history_start: u64,
    streams: Streams,
    human: HumanLoop,
    presses: VecDeque<PendingPress>,
    pending_command: Option<f64>,
    displayed: CartPoleState,
    loop_delays: Vec<u64>,
    log: SessionLog,
}

/// Seed of a named session: the configured seed mixed with the name.
pub fn session_seed(master: u64, id: &str) -> u64 {
    let name = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    stream_id(&[master, name])
}

impl Session {
    /// Computes the SH delay law and sets the plant to its initial state.
    pub fn new(id: &str, cfg: Arc<SessionConfig>) -> Result<Self, SessionError> {
        let s = &cfg.scenario;
        let sh = sh_delay_pmf(&s.sh_harq, &s.links.sh, cfg.interval.tail_eps, &cfg.mc).map_err(whmc::Error::from)?;
        let plant = CartPole::new(cfg.plant).map_err(whmc::Error::from)?;
        let seed = session_seed(s.seed, id);
        Ok(Self::fresh(id.to_string(), cfg, seed, sh, plant))
    }

    fn fresh(id: String, cfg: Arc<SessionConfig>, seed: u64, sh: ShDelayPmf, plant: CartPole) -> Self {
        let initial = cfg.plant.initial;
        let mut log = SessionLog::default();
        log.push(LogRecord::Header {
            version: LOG_VERSION,
            session: id.clone(),
            sample_period_s: cfg.plant.sample_period_s,
            seed,
            config_hash: Some(cfg.config_hash.clone()),
        });
        let mut session = Self {
            id,
            cfg,
            seed,
            sh,
            plant,
            phase: SessionPhase::Ready,
            t: 0,
            state: initial,
            history: VecDeque::from([initial]),
            history_start: 0,
            streams: Streams {
                sc: source_rng(seed, Source::Sc, 0),
                ca: source_rng(seed, Source::Ca, 0),
                sh: source_rng(seed, Source::Sh, 0),
                ha: source_rng(seed, Source::Ha, 0),
                plant: source_rng(seed, Source::Disturbance, 0),
            },
            human: HumanLoop {
                index: 0,
                start: 0,
                sh_delay: 1,
                visible: None,
            },
            presses: VecDeque::new(),
            pending_command: None,
            displayed: initial,
            loop_delays: Vec::new(),
            log,
        };
        session.start_loop(0, 0);
        session
    }

    fn reset(&mut self) {
        *self = Self::fresh(self.id.clone(), self.cfg.clone(), self.seed, self.sh.clone(), self.plant);
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    /// Current slot.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn state(&self) -> &CartPoleState {
        &self.state
    }

    /// SH delay of every loop started so far.
    pub fn loop_delays(&self) -> &[u64] {
        &self.loop_delays
    }

    pub fn sh_delay_law(&self) -> &ShDelayPmf {
        &self.sh
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    fn start_loop(&mut self, index: u64, start: u64) {
        let d = match self.cfg.scenario.regime {
            Regime::MachineOnly | Regime::ErrorFree => 1,
            _ => self.sh.sample(&mut self.streams.sh) as u64,
        };
        self.loop_delays.push(d);
        self.human = HumanLoop {
            index,
            start,
            sh_delay: d,
            visible: None,
        };
    }

    pub fn control(&mut self, action: ControlAction) -> Result<(), SessionError> {
        match (action, self.phase) {
            (_, SessionPhase::Ended) => return Err(SessionError::NotRunning(SessionPhase::Ended)),
            (ControlAction::Start, _) => self.phase = SessionPhase::Running,
            (ControlAction::Pause, SessionPhase::Running) => self.phase = SessionPhase::Paused,
            (ControlAction::Pause, p) => return Err(SessionError::NotRunning(p)),
            (ControlAction::Reset, _) => self.reset(),
            (ControlAction::End, _) => self.phase = SessionPhase::Ended,
        }
        Ok(())
    }

    /// Queues a keypress; it takes effect at the next tick boundary.
    pub fn key_press(&mut self, key: &str, client_time: f64) -> Result<(), SessionError> {
        if self.phase != SessionPhase::Running {
            return Err(SessionError::NotRunning(self.phase));
        }
        if !key.eq_ignore_ascii_case("s") {
            return Err(SessionError::UnknownKey(key.to_string()));
        }
        self.presses.push_back(PendingPress { client_time });
        Ok(())
    }

    fn transmit(rng: &mut ChaCha8Rng, link: &LinkBudget, code: &whmc::linkmodel::CodeConfig) -> bool {
        let snr = sample_snr(link, rng);
        let eps = decode_error_prob(snr, code).unwrap_or(1.0);
        rng.gen::<f64>() >= eps
    }

    fn handle_presses(&mut self) {
        let t = self.t;
        while let Some(press) = self.presses.pop_front() {
            let Some(visible) = self.human.visible else {
                log::debug!("spurious press at slot {t} (client time {})", press.client_time);
                self.log.push(LogRecord::Spurious { t });
                continue;
            };
            let s = &self.cfg.scenario;
            let ok = s.regime == Regime::ErrorFree || Self::transmit(&mut self.streams.ha, &s.links.ha, &s.code);
            if ok {
                self.pending_command = Some(whmc::cartpole::human_policy(&self.displayed));
            }
            self.log.push(LogRecord::Lag {
                loop_index: self.human.index,
                visible_t: visible,
                press_t: t,
                lag_s: (t - visible) as f64 * self.cfg.plant.sample_period_s,
                ha_success: ok,
            });
            self.start_loop(self.human.index + 1, t + 1);
        }
    }

    /// Advances one slot while running; returns the telemetry for the new
    /// slot, or `None` when paused, not started or ended.
    pub fn tick(&mut self) -> Result<Option<WireMessage>, SessionError> {
        if self.phase != SessionPhase::Running {
            return Ok(None);
        }
        let t = self.t;
        let u_h = self.pending_command.take();
        self.handle_presses();

        let s = &self.cfg.scenario;
        let machine_closed = match s.regime {
            Regime::HumanOnly => false,
            Regime::ErrorFree => true,
            _ => {
                Self::transmit(&mut self.streams.sc, &s.links.sc, &s.code)
                    && Self::transmit(&mut self.streams.ca, &s.links.ca, &s.code)
            }
        };
        let u_m = if machine_closed { self.plant.machine_policy(&self.state) } else { 0.0 };
        self.log.push(LogRecord::Step {
            t,
            state: self.state,
            case: Case::from_closure(machine_closed, u_h.is_some()),
            u_m,
            u_h: u_h.unwrap_or(0.0),
        });
        self.state = self
            .plant
            .step(&self.state, u_h.unwrap_or(0.0), u_m, &mut self.streams.plant)
            .map_err(whmc::Error::from)?;
        self.t += 1;
        self.history.push_back(self.state);

        // Telemetry for the new slot: x(t - d), never fresher.
        let now = self.t;
        let d = self.human.sh_delay;
        let shown_at = now.saturating_sub(d).max(self.history_start);
        self.displayed = self.history[(shown_at - self.history_start) as usize];
        while now - self.history_start > HISTORY.max(d) {
            self.history.pop_front();
            self.history_start += 1;
        }
        if self.human.visible.is_none()
            && s.regime != Regime::MachineOnly
            && now >= self.human.start + d
            && self.displayed.m_c > 0.0
        {
            self.human.visible = Some(now);
        }
        let shown = self.displayed;
        Ok(Some(WireMessage::StateTick {
            t: now,
            x: shown.x,
            x_dot: shown.x_dot,
            theta: shown.theta,
            theta_dot: shown.theta_dot,
            m_c_visible: shown.m_c,
            staleness_steps: now - shown_at,
        }))
    }

    /// Ends the session and runs the estimation pipeline on its log.
    pub fn finalize(&mut self) -> Finalized {
        self.phase = SessionPhase::Ended;
        let mut log = self.log.clone();
        log.push(LogRecord::End { t: self.t });
        let (estimate, verdict) = verdict_from_log(&self.id, &log, &self.cfg);
        Finalized { log, estimate, verdict }
    }
}

/// Estimation and the collaborative stability test on a session log, as
/// `estimate` followed by `check` would do it from files.
pub fn verdict_from_log(id: &str, log: &SessionLog, cfg: &SessionConfig) -> (Option<EstimateReport>, WireMessage) {
    let mut warnings = Vec::new();
    let report = match estimate(&[(id.to_string(), LogInput::Session(log.clone()))], &cfg.estimate) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("no lag chain: {e}"));
            None
        }
    };
    let mut lhs = None;
    let mut stable = None;
    if let Some(r) = &report {
        warnings.extend(r.warnings.iter().cloned());
        if let Some(gains) = &r.gains {
            let scenario = Scenario {
                chain: r.chain.chain.clone(),
                regime: Regime::Collaborative,
                ..cfg.scenario.clone()
            };
            match check(&scenario, gains, &cfg.mc, &cfg.interval, &cfg.config_hash) {
                Ok(c) => {
                    lhs = Some(c.verdict.lhs);
                    stable = Some(c.verdict.stable);
                }
                Err(e) => warnings.push(format!("stability test failed: {e}")),
            }
        } else {
            warnings.push("too few gain samples (V > 0 needs |theta| >= 0.05); no verdict".into());
        }
    }
    let verdict = WireMessage::VerdictReport {
        gains: report.as_ref().and_then(|r| r.gains),
        lag_states: report.as_ref().map(|r| r.states_steps.clone()).unwrap_or_default(),
        chain: report.as_ref().map(|r| r.chain.chain.matrix().to_vec()),
        stationary: report.as_ref().map(|r| r.stationary.clone()),
        lhs,
        stable,
        warnings,
        log_path: None,
    };
    (report, verdict)
}
