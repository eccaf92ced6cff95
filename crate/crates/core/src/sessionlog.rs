//! NDJSON session logs.
//!
//! Written by the experiment server (live operator) and by
//! [`from_trace`] (synthetic operator); read by the `estimate` command.
//! One JSON object per line, tagged by `"type"`:
//!
//! ```text
//! {"type":"header","version":1,"session":"a1","sample_period_s":0.05,"seed":7,"config_hash":"…"}
//! {"type":"step","t":0,"state":{"x":0.0,…},"case":"four","u_m":0.0,"u_h":0.0}
//! {"type":"lag","loop_index":0,"visible_t":3,"press_t":6,"lag_s":0.15,"ha_success":true}
//! {"type":"spurious","t":40}
//! {"type":"end","t":2000}
//! ```
//!
//! A log is self-contained: everything the estimators need is in it.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cartpole::{lyapunov_v, CartPoleState, GainSample};
use crate::error::EstimationError;
use crate::simkernel::{Case, Phase, StepRecord, Trace};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogRecord {
    Header {
        version: u32,
        session: String,
        sample_period_s: f64,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config_hash: Option<String>,
    },
    /// Plant state at the start of slot `t` and the case realised in it.
    Step {
        t: u64,
        state: CartPoleState,
        case: Case,
        u_m: f64,
        u_h: f64,
    },
    /// One human decision: from the first slot the operator could see the
    /// information to the keypress.
    Lag {
        loop_index: u64,
        visible_t: u64,
        press_t: u64,
        lag_s: f64,
        ha_success: bool,
    },
    /// Keypress with nothing to act on.
    Spurious { t: u64 },
    End { t: u64 },
}

/// A parsed log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionLog {
    pub records: Vec<LogRecord>,
}

impl SessionLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sample_period(&self) -> Option<f64> {
        self.records.iter().find_map(|r| match r {
            LogRecord::Header { sample_period_s, .. } => Some(*sample_period_s),
            _ => None,
        })
    }

    /// Measured lags (s), in loop order.
    pub fn lags_s(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Lag { lag_s, .. } => Some(*lag_s),
                _ => None,
            })
            .collect()
    }

    pub fn spurious_count(&self) -> usize {
        self.records.iter().filter(|r| matches!(r, LogRecord::Spurious { .. })).count()
    }

    /// Transitions between consecutive step records (gaps in `t` break the
    /// chain of samples).
    pub fn gain_samples(&self) -> Vec<GainSample> {
        let steps: Vec<(u64, &CartPoleState, Case)> = self
            .records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Step { t, state, case, .. } => Some((*t, state, *case)),
                _ => None,
            })
            .collect();
        steps
            .windows(2)
            .filter(|w| w[1].0 == w[0].0 + 1)
            .map(|w| GainSample {
                case: w[0].2,
                v_now: lyapunov_v(w[0].1),
                v_next: lyapunov_v(w[1].1),
            })
            .collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), crate::Error> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses NDJSON; blank lines are skipped, anything else that does not
    /// parse is reported with its 1-based line number.
    pub fn read<R: BufRead>(input: R) -> Result<Self, EstimationError> {
        let mut log = SessionLog::default();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| malformed(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
            if let LogRecord::Header { version, .. } = &rec {
                if *version != LOG_VERSION {
                    return Err(malformed(i + 1, format!("unsupported log version {version}")));
                }
            }
            log.push(rec);
        }
        if log.is_empty() {
            return Err(EstimationError::Empty);
        }
        Ok(log)
    }
}

/// Reads plain-text lags: one value in seconds per line, `#` starts a
/// comment.
pub fn read_lag_text<R: BufRead>(input: R) -> Result<Vec<f64>, EstimationError> {
    let mut lags = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| malformed(i + 1, e.to_string()))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let v: f64 = body
            .parse()
            .map_err(|_| malformed(i + 1, format!("expected a lag in seconds, got `{body}`")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(malformed(i + 1, format!("lag must be non-negative, got {v}")));
        }
        lags.push(v);
    }
    if lags.is_empty() {
        return Err(EstimationError::Empty);
    }
    Ok(lags)
}

fn malformed(line: usize, message: String) -> EstimationError {
    EstimationError::Malformed { line, message }
}

/// Converts a simulated run into a session log, as if an operator with the
/// scenario's lag chain had driven it. The decision of a loop becomes
/// visible in its first lag slot; the keypress falls in its HA slot.
pub fn from_trace(
    trace: &Trace<CartPoleState>,
    session: &str,
    sample_period_s: f64,
    seed: u64,
    config_hash: Option<String>,
) -> SessionLog {
    let mut log = SessionLog::default();
    log.push(LogRecord::Header {
        version: LOG_VERSION,
        session: session.to_string(),
        sample_period_s,
        seed,
        config_hash,
    });
    let mut visible: Option<u64> = None;
    for r in &trace.records {
        push_step(&mut log, r);
        let h = &r.events.human;
        match h.phase {
            Phase::Lag if visible.is_none() => visible = Some(r.t),
            Phase::Ha => {
                if let (Some(v), Some(ok)) = (visible.take(), h.ha_success) {
                    log.push(LogRecord::Lag {
                        loop_index: h.loop_index,
                        visible_t: v,
                        press_t: r.t,
                        lag_s: (r.t - v) as f64 * sample_period_s,
                        ha_success: ok,
                    });
                }
            }
            _ => {}
        }
    }
    let end = trace.records.last().map_or(0, |r| r.t + 1);
    log.push(LogRecord::End { t: end });
    log
}

fn push_step(log: &mut SessionLog, r: &StepRecord<CartPoleState>) {
    log.push(LogRecord::Step {
        t: r.t,
        state: r.state,
        case: r.case,
        u_m: r.u_m,
        u_h: r.u_h,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_line_numbers() {
        let mut log = SessionLog::default();
        log.push(LogRecord::Header {
            version: LOG_VERSION,
            session: "s".into(),
            sample_period_s: 0.05,
            seed: 1,
            config_hash: None,
        });
        log.push(LogRecord::Spurious { t: 4 });
        let mut buf = Vec::new();
        log.write(&mut buf).unwrap();
        assert_eq!(SessionLog::read(&buf[..]).unwrap(), log);

        buf.extend_from_slice(b"\n{\"type\":\"warp\",\"t\":1}\n");
        match SessionLog::read(&buf[..]).unwrap_err() {
            EstimationError::Malformed { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
        assert_eq!(SessionLog::read(&b"\n\n"[..]).unwrap_err(), EstimationError::Empty);
    }

    #[test]
    fn plain_text_lags() {
        let lags = read_lag_text(&b"# lags\n0.15\n0.36 # slow\n\n"[..]).unwrap();
        assert_eq!(lags, vec![0.15, 0.36]);
        match read_lag_text(&b"0.1\nabc\n"[..]).unwrap_err() {
            EstimationError::Malformed { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }
}
