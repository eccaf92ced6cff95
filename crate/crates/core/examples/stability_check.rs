//! Stability test of the reference scenario in every regime.
use whmc::commands::check;
use whmc::cycledist::IntervalOptions;
use whmc::harq::McSettings;
use whmc::simkernel::Scenario;
use whmc::stability::{LyapunovGains, Regime};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gains = LyapunovGains::case_study();
    let mc = McSettings::default();
    let opts = IntervalOptions::default();
    for regime in Regime::ALL {
        let scenario = Scenario {
            regime,
            ..Scenario::reference()
        };
        let r = check(&scenario, &gains, &mc, &opts, "")?;
        println!(
            "{:<10} lhs {:>9.5}  {:?}",
            regime.name(),
            r.verdict.lhs,
            r.verdict.verdict
        );
    }

    // Deterministic operators of increasing lag.
    for lag in [3, 7, 15, 30] {
        let scenario = Scenario {
            chain: whmc::humanmodel::LagChain::constant(lag)?,
            ..Scenario::reference()
        };
        let r = check(&scenario, &gains, &mc, &opts, "")?;
        println!("constant lag {lag:>2}: lhs {:.5}", r.verdict.lhs);
    }
    Ok(())
}
