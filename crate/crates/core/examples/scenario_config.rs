//! Scenario files: reference TOML, overrides, validation and hashing.
use std::path::Path;

use whmc::config::{Overrides, ScenarioConfig};
use whmc::stability::Regime;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::reference();
    let text = cfg.to_toml();
    println!("{}", text.lines().take(12).collect::<Vec<_>>().join("\n"));
    println!("...");

    let mut parsed = ScenarioConfig::from_toml(&text)?;
    assert_eq!(parsed, cfg);
    println!("hash          {}", cfg.hash());

    parsed.apply(&Overrides {
        seed: Some(42),
        regime: Some(Regime::HumanOnly),
        ..Overrides::default()
    });
    println!("after override {}", parsed.hash());

    let resolved = parsed.resolve(Path::new("."))?;
    println!("regime {}  horizon {}  lag states {:?}", resolved.scenario.regime, resolved.scenario.horizon, resolved.scenario.chain.states());

    // Errors name the offending field.
    let bad = text.replace("distance_m = 45.0", "distance_m = -1.0");
    match ScenarioConfig::from_toml(&bad)?.resolve(Path::new(".")) {
        Ok(_) => println!("unexpectedly valid"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
