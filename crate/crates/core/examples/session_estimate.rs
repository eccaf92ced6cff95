//! Round trip through the session-log format: simulated operator sessions
//! are written, read back and pooled into a lag chain, gains and a verdict.
//!
//! V(θ) is zero once the pole is within 0.05 rad, so a session only yields
//! gain samples while the pole is still moving; many short episodes are
//! pooled rather than one long one.
use std::io::BufReader;

use whmc::cartpole::CartPole;
use whmc::commands::{check, estimate, synthetic_session, EstimateOptions, LogInput};
use whmc::cycledist::IntervalOptions;
use whmc::harq::McSettings;
use whmc::sessionlog::SessionLog;
use whmc::simkernel::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes: u64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(60);
    let dir = tempfile::tempdir()?;
    let plant = CartPole::default();

    let mut inputs = Vec::new();
    for seed in 0..episodes {
        let scenario = Scenario {
            horizon: 300,
            seed,
            ..Scenario::reference()
        };
        let name = format!("episode-{seed:03}");
        let path = dir.path().join(format!("{name}.ndjson"));
        synthetic_session(&scenario, &plant, &name)?.write(std::fs::File::create(&path)?)?;
        let back = SessionLog::read(BufReader::new(std::fs::File::open(&path)?))?;
        inputs.push((name, LogInput::Session(back)));
    }

    let report = estimate(&inputs, &EstimateOptions::default())?;
    print!("{report}");

    if let Some(gains) = &report.gains {
        let s = Scenario {
            chain: report.chain.chain.clone(),
            ..Scenario::reference()
        };
        let r = check(&s, gains, &McSettings::default(), &IntervalOptions::default(), "")?;
        println!("verdict     {:?} (lhs {:.4})", r.verdict.verdict, r.verdict.lhs);
    }
    Ok(())
}
