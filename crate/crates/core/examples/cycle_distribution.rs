//! Analytic cycle-length distribution and its simulation oracle.
//!
//! `cargo run --release --example cycle_distribution -- 200000`
use whmc::commands::{analyze, oracle};
use whmc::cycledist::IntervalOptions;
use whmc::harq::McSettings;
use whmc::simkernel::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cycles: u64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(100_000);
    let scenario = Scenario::reference();
    let mc = McSettings::default();
    let opts = IntervalOptions::default();

    let a = analyze(&scenario, &mc, &opts)?;
    let z = &a.dists;
    println!("p_M {:.5}  p_H {:.5}  E[tau] {:.4}", a.p_m, a.p_h, a.sh.mean());
    println!("E[L] {:.4}  L_max {}  M_max {}  tail {:.1e}", z.mean(), z.l_max(), z.m_max(), z.tail());
    println!("P(L=l) for l = 1..12:");
    for l in 1..=12 {
        println!("  {l:>2} {:.5}", z.prob(l));
    }

    let o = oracle(&scenario, &mc, &opts, cycles)?;
    println!("\n{cycles} simulated cycles");
    println!("TV(L) {:.5}  TV(tau) {:.5}", o.tv, o.sh_tv);
    println!("E[L]  {:.4} ± {:.4} (analytic {:.4})", o.mean_length.value, o.mean_length.std_err, o.analytic_mean);
    println!("p_H   {:.5} ± {:.5} (analytic {:.5})", o.p_h.value, o.p_h.std_err, o.analytic_p_h);
    if let Some(p) = o.p_m {
        println!("p_M   {:.5} ± {:.5} (analytic {:.5})", p.value, p.std_err, o.analytic_p_m);
    }
    Ok(())
}
