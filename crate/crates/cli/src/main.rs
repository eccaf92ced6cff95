use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use whmc::commands::{self, EstimateOptions, EXIT_ERROR, EXIT_OK};
use whmc::config::{self, Overrides, ScenarioConfig};
use whmc::stability::{Gain, Regime};

#[derive(Parser)]
#[command(name = "whmc", version, about = "Stability analysis and simulation of wireless human-machine collaborative control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo samples per IR-HARQ attempt count.
    #[arg(long)]
    mc_budget: Option<usize>,
    /// Truncation tolerance for the cycle-length distribution.
    #[arg(long)]
    tail_eps: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Stability test for one regime; exit 0 stable, 2 unstable, 1 error.
    Check {
        #[command(flatten)]
        common: Common,
        /// collab | machine | human | error-free
        #[arg(long)]
        regime: Option<Regime>,
    },
    /// Stability-region boundary and raster CSVs for a pair of gains.
    Region {
        #[command(flatten)]
        common: Common,
        /// Gains on the two axes, e.g. `alpha_hm,alpha_h`.
        #[arg(long, value_parser = parse_pair)]
        pair: Option<[Gain; 2]>,
    },
    /// Cart-pole runs for the configured regimes: traces, cost CSV, summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also compare simulated and analytic cycle statistics over this
        /// many cycles.
        #[arg(long)]
        oracle_cycles: Option<u64>,
    },
    /// Lag chain and gains from session logs or lag lists.
    Estimate {
        /// Scenario file supplying the quantization levels (optional).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path (default `estimate.json` in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Live-operator experiment server.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Slots per second; defaults to real time (1 / sample period).
        #[arg(long)]
        tick_rate: Option<f64>,
        #[arg(long, default_value = "sessions")]
        log_dir: PathBuf,
    },
    /// Print the reference scenario file.
    InitConfig,
}

fn parse_pair(s: &str) -> Result<[Gain; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|e: whmc::error::StabilityError| e.to_string())?,
            b.parse().map_err(|e: whmc::error::StabilityError| e.to_string())?,
        ]),
        _ => Err(format!("expected two comma-separated gains, got `{s}`")),
    }
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        seed: c.seed,
        out: c.out.clone(),
        mc_budget: c.mc_budget,
        tail_eps: c.tail_eps,
        ..Overrides::default()
    }
}

fn run(cli: Cli) -> whmc::Result<i32> {
    match cli.command {
        Command::Check { common, regime } => {
            let cfg = config::load(&common.config, &Overrides { regime, ..overrides(&common) })?;
            let report = commands::cmd_check(&cfg)?;
            print!("{report}");
            Ok(report.exit_code())
        }
        Command::Region { common, pair } => {
            let cfg = config::load(&common.config, &Overrides { pair, ..overrides(&common) })?;
            let r = commands::cmd_region(&cfg)?;
            println!("pair        {},{}", r.pair[0], r.pair[1]);
            println!("p_m         {:.6}", r.p_m);
            println!("points      {} ({} flagged)", r.points, r.flagged);
            println!("max |lhs-1| {:e}", r.max_boundary_error);
            if let Some(f) = r.fit {
                println!(
                    "linear fit  slope {:.6} intercept {:.6} residual {:e}",
                    f.slope, f.intercept, f.max_residual
                );
            }
            println!("boundary    {}", r.boundary_csv.display());
            if let Some(p) = &r.raster_csv {
                println!("raster      {}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Simulate { common, oracle_cycles } => {
            let mut cfg = config::load(&common.config, &overrides(&common))?;
            if let Some(n) = oracle_cycles {
                cfg.simulate.oracle_cycles = n;
            }
            let r = commands::cmd_simulate(&cfg)?;
            for s in &r.regimes {
                println!(
                    "{:<8} total {:.4} ± {:.4}  first10% {:.4}  last10% {:.4}  diverged {}/{}",
                    s.regime.name(),
                    s.total_cost.value,
                    s.total_cost.std_err,
                    s.early_cost.value,
                    s.late_cost.value,
                    s.diverged,
                    s.replications
                );
            }
            if let Some(o) = &r.oracle {
                println!("oracle    TV(z) {:.5}  TV(w) {:.5}  over {} cycles", o.tv, o.sh_tv, o.cycles);
                println!(
                    "          E[L] {:.4} ± {:.4} (analytic {:.4})  p_h {:.5} ± {:.5} (analytic {:.5})",
                    o.mean_length.value, o.mean_length.std_err, o.analytic_mean, o.p_h.value, o.p_h.std_err, o.analytic_p_h
                );
            }
            println!("cost csv  {}", r.cost_csv.display());
            println!("results   {} (seed {}, config {})", r.results_hash, r.seed, r.config_hash);
            Ok(EXIT_OK)
        }
        Command::Estimate { config: path, out, logs } => {
            let (opts, dir) = match &path {
                Some(p) => {
                    let cfg = config::load(p, &Overrides::default())?;
                    (EstimateOptions::from(&cfg), cfg.out_dir.clone())
                }
                None => (EstimateOptions::default(), PathBuf::from("out")),
            };
            let out = out.unwrap_or_else(|| dir.join("estimate.json"));
            let report = commands::cmd_estimate(&logs, &opts, &out)?;
            print!("{report}");
            println!("report      {}", out.display());
            Ok(EXIT_OK)
        }
        Command::Serve {
            config: path,
            listen,
            tick_rate,
            log_dir,
        } => {
            let cfg = config::load(&path, &Overrides::default())?;
            let rate = tick_rate.unwrap_or(1.0 / cfg.plant.sample_period_s);
            let server = whmc_expserver::ServerConfig {
                listen,
                tick_rate_hz: rate,
                scenario: path,
                log_dir,
            };
            let rt = tokio::runtime::Runtime::new()?;
            if let Err(e) = rt.block_on(whmc_expserver::serve(server)) {
                eprintln!("error: {e}");
                return Ok(EXIT_ERROR);
            }
            Ok(EXIT_OK)
        }
        Command::InitConfig => {
            print!("{}", ScenarioConfig::reference().to_toml());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors are errors (exit 1), never "unstable" (exit 2).
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
