//! Human-lag Markov chains: presets, stationary laws, simulation and
//! re-estimation from a simulated lag sequence.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whmc::humanmodel::{estimate_chain, quantize_lags, stationary, LagChain};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, chain) in [
        ("case study", LagChain::case_study()),
        ("prolonged", LagChain::prolonged()),
        ("random", LagChain::random_response()),
        ("variable", LagChain::variable()),
    ] {
        println!("{name:<11} states {:?} stationary {:.4?}", chain.states(), stationary(&chain)?);
    }

    let chain = LagChain::case_study();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let path = chain.simulate(20_000, None, &mut rng)?;
    println!("\nfirst lags {:?}", &path[..16]);
    let est = estimate_chain(&path, chain.states())?;
    println!("re-estimated {:.4?}", est.chain.matrix());

    // Raw reaction times (s) snap to the nearest level.
    let raw = [0.12, 0.18, 0.31, 0.42, 0.24];
    println!("quantized {:?}", quantize_lags(&raw, &[0.15, 0.35], 0.05)?);
    Ok(())
}
