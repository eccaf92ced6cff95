//! Stability-region boundary over (alpha_hm, alpha_h) and (alpha_m, alpha_h),
//! written as CSV to stdout.
use whmc::commands::analyze;
use whmc::cycledist::IntervalOptions;
use whmc::harq::McSettings;
use whmc::simkernel::Scenario;
use whmc::stability::{boundary_curve, boundary_linear_hm_h, fit_line, linspace, write_boundary_csv, Gain, LyapunovGains};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = analyze(&Scenario::reference(), &McSettings::default(), &IntervalOptions::default())?;
    let gains = LyapunovGains::case_study();

    let line = boundary_linear_hm_h(&gains, a.p_m, &a.dists)?;
    // The closed form gives alpha_hm as a function of alpha_h.
    println!("# closed form: alpha_hm = {:.6} {:+.6} alpha_h", line.intercept, line.slope);
    let pts = boundary_curve(Gain::HumanMachine, Gain::Human, &gains, a.p_m, &a.dists, &linspace(0.0, 2.0, 21))?;
    if let Some((fit, resid)) = fit_line(&pts) {
        println!("# fitted:      alpha_h = {:.6} {:+.6} alpha_hm (max residual {resid:.1e})", fit.intercept, fit.slope);
        println!("#   inverted:  alpha_hm = {:.6} {:+.6} alpha_h", -fit.intercept / fit.slope, 1.0 / fit.slope);
    }
    write_boundary_csv(&pts, Gain::HumanMachine, Gain::Human, std::io::stdout())?;

    println!();
    let pts = boundary_curve(Gain::Machine, Gain::Human, &gains, a.p_m, &a.dists, &linspace(0.05, 1.0, 20))?;
    write_boundary_csv(&pts, Gain::Machine, Gain::Human, std::io::stdout())?;
    Ok(())
}
