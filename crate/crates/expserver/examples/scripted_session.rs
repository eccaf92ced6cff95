//! A session driven in-process by a scripted operator who presses a fixed
//! number of slots after the weight shows; prints a few wire frames and the
//! final verdict.
use std::path::Path;
use std::sync::Arc;

use whmc::config::ScenarioConfig;
use whmc_expserver::{ControlAction, Session, SessionConfig, WireMessage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::reference();
    cfg.analysis.mc_samples = 50_000;
    cfg.plant.reappear_prob = 0.2;
    let resolved = cfg.resolve(Path::new("."))?;
    let mut session = Session::new("demo", Arc::new(SessionConfig::from_resolved(&resolved)))?;
    session.control(ControlAction::Start)?;

    let lags = [3u64, 7, 7, 3, 7];
    let mut waited = 0;
    let mut pressed = 0;
    for slot in 0..20_000 {
        let Some(frame) = session.tick()? else { break };
        if slot < 3 {
            println!("{}", frame.encode());
        }
        if let WireMessage::StateTick { m_c_visible, .. } = frame {
            if m_c_visible > 0.0 {
                if waited == lags[pressed % lags.len()] {
                    session.key_press("s", slot as f64)?;
                    pressed += 1;
                    waited = 0;
                } else {
                    waited += 1;
                }
            } else {
                waited = 0;
            }
        }
    }
    let log = session.log();
    println!("presses {pressed}, lags logged {}, spurious {}", log.lags_s().len(), log.spurious_count());
    let f = session.finalize();
    println!("{}", f.verdict.encode());
    Ok(())
}
