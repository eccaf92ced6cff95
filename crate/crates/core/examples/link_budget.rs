//! Mean SNR, short-packet error probability and the open-loop
//! probabilities of the reference links.
use whmc::linkmodel::{decode_error_prob, expected_error_prob, open_machine_loop_prob, CodeConfig, LinkBudget};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let code = CodeConfig::reference();
    println!("rate {:.3} bit/use, threshold SNR {:.3}", code.rate(), code.threshold_snr());

    for (name, link) in [("machine (40 m)", LinkBudget::reference_machine()), ("human (45 m)", LinkBudget::reference_human())] {
        println!(
            "{name:<15} mean SNR {:.3}  E[eps] {:.5}",
            link.mean_snr(),
            expected_error_prob(&link, &code)?
        );
    }

    println!("\n snr   eps(snr)");
    for snr in [2.0, 3.0, 4.0, 5.0, 6.0, 8.0] {
        println!("{snr:>4.1}  {:.3e}", decode_error_prob(snr, &code)?);
    }

    let m = LinkBudget::reference_machine();
    let h = LinkBudget::reference_human();
    println!("\np_M (SC then CA) {:.5}", open_machine_loop_prob(&m, &m, &code)?);
    println!("p_H (HA)         {:.5}", expected_error_prob(&h, &code)?);
    Ok(())
}
