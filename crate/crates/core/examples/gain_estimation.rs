//! Lyapunov gains from simulated trajectories, pooled over episodes.
//!
//! The gains are per-case maxima of V(t+1)/V(t); the maximum keeps growing
//! as more data is pooled, so the printout shows how much the estimate
//! depends on the amount of data.
use whmc::cartpole::{estimate_gains, gain_samples, CartPole, GainSample};
use whmc::simkernel::{run_replications, Case, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = CartPole::default();
    let s = Scenario {
        horizon: 200,
        seed: 1,
        ..Scenario::reference()
    };
    for episodes in [10u64, 50, 250] {
        let samples: Vec<GainSample> = run_replications(&s, &plant, episodes, |_, tr| gain_samples(&tr.records))?
            .into_iter()
            .flatten()
            .collect();
        let counts: Vec<usize> = Case::ALL
            .iter()
            .map(|c| samples.iter().filter(|x| x.case == *c && x.v_now > 0.0).count())
            .collect();
        match estimate_gains(&samples) {
            Ok(g) => println!(
                "{episodes:>4} episodes  samples {counts:?}  alpha_hm {:.3} alpha_m {:.3} alpha_h {:.3} alpha {:.3}",
                g.alpha_hm, g.alpha_m, g.alpha_h, g.alpha
            ),
            Err(e) => println!("{episodes:>4} episodes  samples {counts:?}  {e}"),
        }
    }
    Ok(())
}
