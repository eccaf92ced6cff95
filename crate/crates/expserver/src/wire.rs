//! JSON messages exchanged with the operator console.
//!
//! Every frame is an object with a `"type"` tag and a `"version"` field:
//!
//! ```text
//! {"version":1,"type":"state_tick","t":12,"x":0.0,"x_dot":0.0,"theta":0.52,"theta_dot":0.0,"m_c_visible":5.0,"staleness_steps":2}
//! {"version":1,"type":"key_press","client_time":1712.5,"key":"s"}
//! {"version":1,"type":"session_control","action":"start"}
//! {"version":1,"type":"verdict_report","gains":{…},"chain":[[…]],"lhs":0.41,"stable":true,…}
//! ```
//!
//! Unknown tags, unknown fields and other versions are rejected.

use serde::{Deserialize, Serialize};
use whmc::stability::LyapunovGains;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Reset,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireMessage {
    /// Telemetry as the operator is allowed to see it.
    StateTick {
        t: u64,
        x: f64,
        x_dot: f64,
        theta: f64,
        theta_dot: f64,
        m_c_visible: f64,
        /// Age of the displayed state in slots.
        staleness_steps: u64,
    },
    KeyPress {
        /// Client clock (ms), logged but not used for timing.
        client_time: f64,
        key: String,
    },
    SessionControl {
        action: ControlAction,
    },
    VerdictReport {
        gains: Option<LyapunovGains>,
        lag_states: Vec<u32>,
        chain: Option<Vec<Vec<f64>>>,
        stationary: Option<Vec<f64>>,
        lhs: Option<f64>,
        stable: Option<bool>,
        warnings: Vec<String>,
        log_path: Option<String>,
    },
    /// Server-side rejection of a frame or a request.
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Envelope {
    version: u32,
    #[serde(flatten)]
    body: WireMessage,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
}

impl WireMessage {
    pub fn encode(&self) -> String {
        serde_json::to_string(&Envelope {
            version: SCHEMA_VERSION,
            body: self.clone(),
        })
        .expect("wire messages serialize")
    }

    pub fn decode(text: &str) -> Result<Self, WireError> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.version != SCHEMA_VERSION {
            return Err(WireError::Version(env.version));
        }
        Ok(env.body)
    }
}
