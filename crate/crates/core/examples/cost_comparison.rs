//! Cart-pole cost under the three regimes with common seeds.
//!
//! `cargo run --release --example cost_comparison -- 2000 20`
use whmc::cartpole::{cost, CartPole, CostWeights};
use whmc::simkernel::{mean_curve, run_replications, Scenario};
use whmc::stability::Regime;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let horizon: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(2000);
    let reps: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(20);
    let plant = CartPole::default();
    let w = CostWeights::angle_only();

    println!("regime   first10%    middle   last10%     total");
    for regime in [Regime::Collaborative, Regime::MachineOnly, Regime::HumanOnly] {
        let s = Scenario {
            horizon,
            regime,
            seed: 7,
            ..Scenario::reference()
        };
        let curves = run_replications(&s, &plant, reps, |_, tr| {
            tr.records.iter().map(|r| cost(&r.state, &w)).collect::<Vec<_>>()
        })?;
        let m = mean_curve(&curves);
        let n = m.len();
        let avg = |a: usize, b: usize| m[a..b].iter().sum::<f64>() / (b - a) as f64;
        println!(
            "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9.2}",
            regime.name(),
            avg(0, n / 10),
            avg(n / 2, n / 2 + n / 10),
            avg(n - n / 10, n),
            m.iter().sum::<f64>()
        );
    }
    Ok(())
}
