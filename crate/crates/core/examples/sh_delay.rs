//! Per-attempt HARQ failure probabilities and the SH delay distribution
//! for the three retransmission schemes.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whmc::harq::{sh_delay_pmf, theta_profile, HarqConfig, HarqScheme, McSettings};
use whmc::linkmodel::{CodeConfig, LinkBudget};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let link = LinkBudget::reference_human();
    let mc = McSettings {
        samples: 200_000,
        ..McSettings::default()
    };
    for scheme in HarqScheme::ALL {
        let cfg = HarqConfig::new(scheme, 3, CodeConfig::reference())?;
        let thetas: Vec<String> = theta_profile(&cfg, &link, &mc)?
            .iter()
            .map(|t| match t.std_err {
                Some(se) => format!("{:.4}±{se:.4}", t.value),
                None => format!("{:.4}", t.value),
            })
            .collect();
        let w = sh_delay_pmf(&cfg, &link, 1e-9, &mc)?;
        println!("{} theta {}", scheme.label(), thetas.join(" "));
        println!("   E[tau] {:.4}  P(tau=1..6) {:.4?}", w.mean(), &w.pmf().probs()[..6.min(w.pmf().probs().len())]);
    }

    // Exact draws from the IR law.
    let cfg = HarqConfig::new(HarqScheme::IncrementalRedundancy, 3, CodeConfig::reference())?;
    let w = sh_delay_pmf(&cfg, &link, 1e-9, &mc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<usize> = (0..20).map(|_| w.sample(&mut rng)).collect();
    println!("IR draws {draws:?}");
    Ok(())
}
