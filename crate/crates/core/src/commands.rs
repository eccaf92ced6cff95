//! The four analyses behind the command-line tool: `check`, `region`,
//! `simulate` and `estimate`. Each returns a serializable report; the
//! binary only parses flags, prints and maps reports to exit codes.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cartpole::{cost, estimate_gains, CartPole, CartPoleParams, GainSample};
use crate::config::Resolved;
use crate::cycledist::{interval_pmf, open_human_loop_prob, CycleDistributions, IntervalOptions};
use crate::error::{ConfigError, EstimationError};
use crate::harq::{sh_delay_pmf, McSettings, ShDelayPmf};
use crate::humanmodel::{estimate_chain_from, quantize_lags, stationary, EstimatedChain};
use crate::linkmodel::open_machine_loop_prob;
use crate::simkernel::{estimate_cycle_stats, run_replications, Case, Estimate, Scenario, Trace};
use crate::sessionlog::{read_lag_text, SessionLog};
use crate::stability::{
    boundary_curve, error_free_lhs, fit_line, human_only_lhs, linspace, machine_only_lhs, region_raster,
    theorem1_lhs, write_boundary_csv, write_raster_csv, Gain, LyapunovGains, PointStatus, Regime,
    StabilityVerdict,
};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNSTABLE: i32 = 2;

/// Writes `path` through a temporary file in the same directory, renamed
/// into place once `fill` succeeds.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Link- and HARQ-derived quantities shared by the analyses.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub p_m: f64,
    pub p_h: f64,
    pub sh: ShDelayPmf,
    pub dists: CycleDistributions,
}

/// Computes `p̄_M`, `p̄_H`, the SH delay and the cycle-length distribution.
pub fn analyze(scenario: &Scenario, mc: &McSettings, interval: &IntervalOptions) -> Result<Analysis> {
    let p_m = open_machine_loop_prob(&scenario.links.sc, &scenario.links.ca, &scenario.code)?;
    let p_h = open_human_loop_prob(&scenario.links.ha, &scenario.code)?;
    let sh = sh_delay_pmf(&scenario.sh_harq, &scenario.links.sh, interval.tail_eps, mc)?;
    let dists = interval_pmf(&sh, &scenario.chain, p_h, interval)?;
    Ok(Analysis { p_m, p_h, sh, dists })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub config_hash: String,
    pub seed: u64,
    pub regime: Regime,
    pub gains: LyapunovGains,
    pub harq: String,
    pub lag_states: Vec<u32>,
    pub lag_transition: Vec<Vec<f64>>,
    pub p_m: Option<f64>,
    pub p_h: Option<f64>,
    pub sh_mean: Option<f64>,
    pub mean_cycle: Option<f64>,
    pub l_max: Option<usize>,
    pub verdict: StabilityVerdict,
}

impl CheckReport {
    pub fn exit_code(&self) -> i32 {
        if self.verdict.stable {
            EXIT_OK
        } else {
            EXIT_UNSTABLE
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = &self.verdict;
        writeln!(f, "regime      {}", self.regime)?;
        writeln!(f, "lhs         {:.6}", v.lhs)?;
        writeln!(f, "verdict     {:?}{}", v.verdict, if v.divergent { " (divergent moment)" } else { "" })?;
        let g = &self.gains;
        writeln!(
            f,
            "gains       alpha_hm={} alpha_m={} alpha_h={} alpha={}",
            g.alpha_hm, g.alpha_m, g.alpha_h, g.alpha
        )?;
        writeln!(f, "harq        {}", self.harq)?;
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.6}"));
        writeln!(f, "p_m         {}", opt(self.p_m))?;
        writeln!(f, "p_h         {}", opt(self.p_h))?;
        writeln!(f, "E[tau_sh]   {}", opt(self.sh_mean))?;
        writeln!(f, "E[L]        {}", opt(self.mean_cycle))?;
        let c = &v.components;
        writeln!(f, "base        {}", opt(c.base))?;
        writeln!(f, "E[base^L]   {}", opt(c.expected_power))?;
        writeln!(f, "factor      {}", opt(c.factor))?;
        writeln!(f, "trunc. err  {:e}", v.truncation_error)?;
        writeln!(f, "config      {} (seed {})", self.config_hash, self.seed)
    }
}

/// Stability test for `scenario.regime`.
pub fn check(
    scenario: &Scenario,
    gains: &LyapunovGains,
    mc: &McSettings,
    interval: &IntervalOptions,
    config_hash: &str,
) -> Result<CheckReport> {
    let (mut p_m, mut p_h, mut sh_mean, mut mean_cycle, mut l_max) = (None, None, None, None, None);
    let verdict = match scenario.regime {
        Regime::ErrorFree => error_free_lhs(gains, &scenario.chain)?,
        Regime::MachineOnly => {
            let p = open_machine_loop_prob(&scenario.links.sc, &scenario.links.ca, &scenario.code)?;
            p_m = Some(p);
            machine_only_lhs(gains, p)?
        }
        Regime::Collaborative | Regime::HumanOnly => {
            let a = analyze(scenario, mc, interval)?;
            p_m = Some(a.p_m);
            p_h = Some(a.p_h);
            sh_mean = Some(a.sh.mean());
            mean_cycle = Some(a.dists.mean());
            l_max = Some(a.dists.l_max());
            if scenario.regime == Regime::Collaborative {
                theorem1_lhs(gains, a.p_m, &a.dists)?
            } else {
                human_only_lhs(gains, &a.dists)?
            }
        }
    };
    let report = CheckReport {
        config_hash: config_hash.to_string(),
        seed: scenario.seed,
        regime: scenario.regime,
        gains: *gains,
        harq: format!("{} N={}", scenario.sh_harq.scheme.label(), scenario.sh_harq.max_attempts),
        lag_states: scenario.chain.states().to_vec(),
        lag_transition: scenario.chain.matrix().to_vec(),
        p_m,
        p_h,
        sh_mean,
        mean_cycle,
        l_max,
        verdict,
    };
    Ok(report)
}

/// `check` on a resolved configuration; also writes `check.json`.
pub fn cmd_check(cfg: &Resolved) -> Result<CheckReport> {
    let gains = cfg.gains()?;
    let report = check(&cfg.scenario, &gains, &cfg.mc, &cfg.interval, &cfg.hash)?;
    write_json(&cfg.out_dir.join("check.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub config_hash: String,
    pub pair: [Gain; 2],
    pub fixed: LyapunovGains,
    pub p_m: f64,
    pub points: usize,
    /// Abscissae where the boundary is unbounded or the region is empty.
    pub flagged: usize,
    /// Largest `|lhs - 1|` over the emitted boundary points.
    pub max_boundary_error: f64,
    pub fit: Option<LineFit>,
    pub boundary_csv: PathBuf,
    pub raster_csv: Option<PathBuf>,
}

/// Boundary of the collaborative stability region in the plane of two
/// gains (the others fixed at their configured values), plus a raster of
/// the left-hand side.
pub fn cmd_region(cfg: &Resolved) -> Result<RegionReport> {
    let r = &cfg.region;
    let [first, second] = r.pair;
    if first == second {
        return Err(ConfigError::Invalid {
            field: "region.pair".into(),
            message: "the two gains must differ".into(),
        }
        .into());
    }
    if r.x_points == 0 || !(r.x_max >= r.x_min) {
        return Err(ConfigError::Invalid {
            field: "region.x_points".into(),
            message: "the boundary grid is empty".into(),
        }
        .into());
    }
    if r.y_points > 0 && !(r.y_max >= r.y_min) {
        return Err(ConfigError::Invalid {
            field: "region.y_max".into(),
            message: "the raster grid is empty".into(),
        }
        .into());
    }
    let fixed = cfg.gains()?;
    let a = analyze(&cfg.scenario, &cfg.mc, &cfg.interval)?;
    let xs = linspace(r.x_min, r.x_max, r.x_points);
    let points = boundary_curve(first, second, &fixed, a.p_m, &a.dists, &xs)?;
    let boundary_csv = cfg.out_dir.join("boundary.csv");
    write_atomic(&boundary_csv, |w| Ok(write_boundary_csv(&points, first, second, w)?))?;

    let raster_csv = if r.y_points > 0 {
        let ys = linspace(r.y_min, r.y_max, r.y_points);
        let cells = region_raster(first, second, &fixed, a.p_m, &a.dists, &xs, &ys)?;
        let path = cfg.out_dir.join("raster.csv");
        write_atomic(&path, |w| Ok(write_raster_csv(&cells, first, second, w)?))?;
        Some(path)
    } else {
        None
    };

    let bounded: Vec<_> = points.iter().filter(|p| p.status == PointStatus::Bounded).cloned().collect();
    let max_boundary_error = bounded
        .iter()
        .filter_map(|p| p.lhs)
        .map(|l| (l - 1.0).abs())
        .fold(0.0, f64::max);
    let fit = fit_line(&bounded).map(|(line, res)| LineFit {
        slope: line.slope,
        intercept: line.intercept,
        max_residual: res,
    });
    let report = RegionReport {
        config_hash: cfg.hash.clone(),
        pair: r.pair,
        fixed,
        p_m: a.p_m,
        points: points.len(),
        flagged: points.len() - bounded.len(),
        max_boundary_error,
        fit,
        boundary_csv,
        raster_csv,
    };
    write_json(&cfg.out_dir.join("region.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: Regime,
    pub replications: u64,
    pub diverged: u64,
    /// Sum of the per-step cost over the horizon.
    pub total_cost: Estimate,
    /// Mean per-step cost over the first and last tenth of the horizon.
    pub early_cost: Estimate,
    pub late_cost: Estimate,
    pub traces: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub cycles: u64,
    /// Total variation between simulated and analytic cycle lengths.
    pub tv: f64,
    /// Same for the SH delay.
    pub sh_tv: f64,
    pub mean_length: Estimate,
    pub analytic_mean: f64,
    pub p_h: Estimate,
    pub analytic_p_h: f64,
    pub p_m: Option<Estimate>,
    pub analytic_p_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub config_hash: String,
    pub seed: u64,
    pub horizon: u64,
    pub regimes: Vec<RegimeSummary>,
    pub oracle: Option<OracleReport>,
    pub cost_csv: PathBuf,
    /// SHA-256 over the cost curves and summaries; equal for equal seeds.
    pub results_hash: String,
}

impl SimulateReport {
    pub fn summary(&self, regime: Regime) -> Option<&RegimeSummary> {
        self.regimes.iter().find(|r| r.regime == regime)
    }
}

/// Mean and standard error of equally indexed samples.
fn mean_se(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        value: mean,
        std_err: (var / n).sqrt(),
    }
}

struct RegimeRun {
    summary: RegimeSummary,
    curve: Vec<Estimate>,
}

fn simulate_regime(cfg: &Resolved, regime: Regime, plant: &CartPole) -> Result<RegimeRun> {
    let scenario = Scenario {
        regime,
        ..cfg.scenario.clone()
    };
    let weights = cfg.weights;
    let keep = cfg.simulate.trace_replications;
    let horizon = scenario.horizon as usize;
    let runs = run_replications(&scenario, plant, cfg.simulate.replications, |r, trace| {
        let mut costs: Vec<f64> = trace.records.iter().map(|rec| cost(&rec.state, &weights)).collect();
        // A diverged run keeps its last cost for the rest of the horizon.
        let last = costs.last().copied().unwrap_or(0.0);
        costs.resize(horizon, last);
        (costs, trace.diverged, (r < keep).then_some(trace))
    })?;
    let mut traces = Vec::new();
    for (r, (_, _, trace)) in runs.iter().enumerate() {
        if let Some(trace) = trace {
            let path = cfg.out_dir.join(format!("trace-{}-{r}.ndjson", regime.name()));
            write_atomic(&path, |w| trace.write_ndjson(w))?;
            traces.push(path);
        }
    }
    let curve: Vec<Estimate> = (0..horizon)
        .map(|t| mean_se(&runs.iter().map(|(c, _, _)| c[t]).collect::<Vec<_>>()))
        .collect();
    let tenth = (horizon / 10).max(1);
    let window = |lo: usize, hi: usize| {
        mean_se(
            &runs
                .iter()
                .map(|(c, _, _)| c[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
                .collect::<Vec<_>>(),
        )
    };
    let summary = RegimeSummary {
        regime,
        replications: cfg.simulate.replications,
        diverged: runs.iter().filter(|(_, d, _)| *d).count() as u64,
        total_cost: mean_se(&runs.iter().map(|(c, _, _)| c.iter().sum()).collect::<Vec<_>>()),
        early_cost: window(0, tenth),
        late_cost: window(horizon - tenth, horizon),
        traces,
    };
    Ok(RegimeRun { summary, curve })
}

/// Oracle run: simulated cycle statistics against the analytic ones.
pub fn oracle(scenario: &Scenario, mc: &McSettings, interval: &IntervalOptions, cycles: u64) -> Result<OracleReport> {
    let scenario = Scenario {
        regime: Regime::Collaborative,
        ..scenario.clone()
    };
    let a = analyze(&scenario, mc, interval)?;
    let stats = estimate_cycle_stats(&scenario, cycles)?;
    Ok(OracleReport {
        cycles,
        tv: stats.lengths.total_variation(a.dists.pmf()),
        sh_tv: stats.sh_delays.total_variation(a.sh.pmf()),
        mean_length: stats.mean_length,
        analytic_mean: a.dists.mean(),
        p_h: stats.p_h,
        analytic_p_h: a.p_h,
        p_m: stats.p_m,
        analytic_p_m: a.p_m,
    })
}

/// Runs every configured regime with common seeds, writes the cost CSV,
/// the first traces and `simulate.json`.
pub fn cmd_simulate(cfg: &Resolved) -> Result<SimulateReport> {
    let plant = CartPole::new(cfg.plant)?;
    let runs: Vec<RegimeRun> = cfg
        .simulate
        .regimes
        .iter()
        .map(|&regime| simulate_regime(cfg, regime, &plant))
        .collect::<Result<_>>()?;

    let cost_csv = cfg.out_dir.join("cost.csv");
    let mut csv_bytes = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut csv_bytes);
        let mut header = vec!["t".to_string()];
        for r in &runs {
            header.push(format!("{}_mean", r.summary.regime.name()));
            header.push(format!("{}_se", r.summary.regime.name()));
        }
        wtr.write_record(&header)?;
        for t in 0..cfg.scenario.horizon as usize {
            let mut row = vec![t.to_string()];
            for r in &runs {
                row.push(r.curve[t].value.to_string());
                row.push(r.curve[t].std_err.to_string());
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
    }
    write_atomic(&cost_csv, |w| Ok(w.write_all(&csv_bytes)?))?;

    let oracle = match cfg.simulate.oracle_cycles {
        0 => None,
        n => Some(oracle(&cfg.scenario, &cfg.mc, &cfg.interval, n)?),
    };
    let regimes: Vec<RegimeSummary> = runs.into_iter().map(|r| r.summary).collect();
    let mut h = Sha256::new();
    h.update(&csv_bytes);
    for r in &regimes {
        h.update(serde_json::to_vec(&(r.regime, r.diverged, r.total_cost, r.early_cost, r.late_cost))?);
    }
    if let Some(o) = &oracle {
        h.update(serde_json::to_vec(o)?);
    }
    let report = SimulateReport {
        config_hash: cfg.hash.clone(),
        seed: cfg.scenario.seed,
        horizon: cfg.scenario.horizon,
        regimes,
        oracle,
        cost_csv,
        results_hash: hex::encode(h.finalize()),
    };
    write_json(&cfg.out_dir.join("simulate.json"), &report)?;
    Ok(report)
}

/// Estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub lag_states_s: Vec<f64>,
    /// Used when a log carries no header.
    pub sample_period_s: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            lag_states_s: vec![0.15, 0.35],
            sample_period_s: CartPoleParams::default().sample_period_s,
        }
    }
}

impl From<&Resolved> for EstimateOptions {
    fn from(cfg: &Resolved) -> Self {
        Self {
            lag_states_s: cfg.estimate.lag_states_s.clone(),
            sample_period_s: cfg.plant.sample_period_s,
        }
    }
}

/// Gains and lag chain estimated from session data; readable by `check`
/// through `gains.report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub sources: Vec<String>,
    pub sample_period_s: f64,
    pub lag_states_s: Vec<f64>,
    pub states_steps: Vec<u32>,
    pub loops: usize,
    pub chain: EstimatedChain,
    pub stationary: Vec<f64>,
    pub gains: Option<LyapunovGains>,
    /// Samples with `V > 0` per case (one, two, three, four).
    pub gain_samples: [usize; 4],
    pub spurious_presses: usize,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
            field: "gains.report".into(),
            message: format!("{}: {e}", path.display()),
        })
    }
}

impl fmt::Display for EstimateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "loops       {}", self.loops)?;
        writeln!(f, "states      {:?} steps ({:?} s)", self.states_steps, self.lag_states_s)?;
        for (s, row) in self.chain.chain.states().iter().zip(self.chain.chain.matrix()) {
            let row: Vec<String> = row.iter().map(|p| format!("{p:.4}")).collect();
            writeln!(f, "  from {s:>3}  [{}]", row.join(", "))?;
        }
        let v: Vec<String> = self.stationary.iter().map(|p| format!("{p:.4}")).collect();
        writeln!(f, "stationary  [{}]", v.join(", "))?;
        match &self.gains {
            Some(g) => writeln!(
                f,
                "gains       alpha_hm={:.4} alpha_m={:.4} alpha_h={:.4} alpha={:.4}",
                g.alpha_hm, g.alpha_m, g.alpha_h, g.alpha
            )?,
            None => writeln!(f, "gains       -")?,
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// One estimation input: a session log or a bare list of lags.
#[derive(Debug, Clone)]
pub enum LogInput {
    Session(SessionLog),
    Lags(Vec<f64>),
}

impl LogInput {
    /// NDJSON if the first non-blank character is `{`, plain lags otherwise.
    pub fn read<R: BufRead>(mut input: R) -> Result<Self, EstimationError> {
        let mut text = String::new();
        input
            .read_to_string(&mut text)
            .map_err(|e| EstimationError::Malformed { line: 0, message: e.to_string() })?;
        if text.trim_start().starts_with('{') {
            SessionLog::read(text.as_bytes()).map(LogInput::Session)
        } else {
            read_lag_text(text.as_bytes()).map(LogInput::Lags)
        }
    }
}

/// Runs quantization, chain estimation and gain estimation over the inputs.
/// Fails only if no lag chain can be estimated; missing gain cases become
/// warnings.
pub fn estimate(inputs: &[(String, LogInput)], opts: &EstimateOptions) -> Result<EstimateReport> {
    if inputs.is_empty() {
        return Err(EstimationError::Empty.into());
    }
    let mut warnings = Vec::new();
    let mut sample_period = None;
    for (_, input) in inputs {
        if let LogInput::Session(log) = input {
            if let Some(ts) = log.sample_period() {
                if sample_period.is_some_and(|p: f64| (p - ts).abs() > 1e-12) {
                    return Err(EstimationError::Malformed {
                        line: 1,
                        message: "logs disagree on the sample period".into(),
                    }
                    .into());
                }
                sample_period = Some(ts);
            }
        }
    }
    let ts = sample_period.unwrap_or(opts.sample_period_s);

    let mut sequences = Vec::new();
    let mut samples: Vec<GainSample> = Vec::new();
    let mut spurious = 0;
    for (_, input) in inputs {
        let (lags, log) = match input {
            LogInput::Session(log) => (log.lags_s(), Some(log)),
            LogInput::Lags(l) => (l.clone(), None),
        };
        sequences.push(quantize_lags(&lags, &opts.lag_states_s, ts)?);
        if let Some(log) = log {
            samples.extend(log.gain_samples());
            spurious += log.spurious_count();
        }
    }
    let states_steps = quantize_lags(&opts.lag_states_s, &opts.lag_states_s, ts)?;
    let refs: Vec<&[u32]> = sequences.iter().map(Vec::as_slice).collect();
    let chain = estimate_chain_from(&refs, &states_steps)?;
    for s in &chain.fallback_rows {
        warnings.push(format!("lag state {s} never left; its row is uniform"));
    }
    let pi = stationary(&chain.chain)?;

    let mut counts = [0usize; 4];
    for s in samples.iter().filter(|s| s.v_now > 0.0) {
        counts[Case::ALL.iter().position(|c| *c == s.case).expect("case")] += 1;
    }
    let gains = match estimate_gains(&samples) {
        Ok(g) => Some(g),
        Err(e) => {
            warnings.push(format!("gains not estimated: {e}"));
            None
        }
    };
    Ok(EstimateReport {
        sources: inputs.iter().map(|(n, _)| n.clone()).collect(),
        sample_period_s: ts,
        lag_states_s: opts.lag_states_s.clone(),
        states_steps,
        loops: sequences.iter().map(Vec::len).sum(),
        chain,
        stationary: pi,
        gains,
        gain_samples: counts,
        spurious_presses: spurious,
        warnings,
    })
}

/// Reads the logs, estimates, and writes the report to `out`.
pub fn cmd_estimate(paths: &[PathBuf], opts: &EstimateOptions, out: &Path) -> Result<EstimateReport> {
    let mut inputs = Vec::new();
    for p in paths {
        let file = File::open(p)?;
        let input = LogInput::read(BufReader::new(file)).map_err(|e| match e {
            EstimationError::Malformed { line, message } => EstimationError::Malformed {
                line,
                message: format!("{}: {message}", p.display()),
            },
            other => other,
        })?;
        inputs.push((p.display().to_string(), input));
    }
    let report = estimate(&inputs, opts)?;
    write_json(out, &report)?;
    Ok(report)
}

/// Session log of a simulated operator whose lags follow the scenario's
/// chain (replication 0 of `scenario` on `plant`).
pub fn synthetic_session(scenario: &Scenario, plant: &CartPole, session: &str) -> Result<SessionLog> {
    let trace: Trace<_> = crate::simkernel::run(scenario, *plant)?;
    Ok(crate::sessionlog::from_trace(
        &trace,
        session,
        plant.params.sample_period_s,
        scenario.seed,
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::humanmodel::LagChain;

    fn resolved(dir: &Path) -> Resolved {
        let mut cfg = ScenarioConfig::reference();
        cfg.analysis.mc_samples = 20_000;
        cfg.output.dir = dir.to_path_buf();
        cfg.horizon_steps = 300;
        cfg.simulate.replications = 3;
        cfg.resolve(Path::new(".")).unwrap()
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"one")?)).unwrap();
        write_atomic(&p, |w| Ok(w.write_all(b"two")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        let failed = write_atomic(&p, |_| Err(EstimationError::Empty.into()));
        assert!(failed.is_err());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
    }

    #[test]
    fn check_exit_codes_by_regime() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = resolved(dir.path());
        let report = cmd_check(&cfg).unwrap();
        assert_eq!(report.exit_code(), EXIT_OK);
        cfg.scenario.regime = Regime::HumanOnly;
        assert_eq!(cmd_check(&cfg).unwrap().exit_code(), EXIT_UNSTABLE);
        assert!(dir.path().join("check.json").exists());
    }

    #[test]
    fn simulate_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = resolved(dir.path());
        let a = cmd_simulate(&cfg).unwrap();
        let b = cmd_simulate(&cfg).unwrap();
        assert_eq!(a.results_hash, b.results_hash);
        let text = std::fs::read_to_string(&a.cost_csv).unwrap();
        assert!(text.starts_with("t,collab_mean,collab_se,machine_mean,machine_se,human_mean,human_se"));
        assert_eq!(text.lines().count(), 301);
    }

    #[test]
    fn synthetic_log_recovers_chain() {
        let scenario = Scenario {
            chain: LagChain::prolonged().clone(),
            horizon: 40_000,
            seed: 5,
            ..Scenario::reference()
        };
        let plant = CartPole::default();
        let log = synthetic_session(&scenario, &plant, "syn").unwrap();
        let mut buf = Vec::new();
        log.write(&mut buf).unwrap();
        let input = LogInput::read(&buf[..]).unwrap();
        // Prolonged chain lives on {5, 25} slots = {0.25, 1.25} s.
        let opts = EstimateOptions {
            lag_states_s: vec![0.25, 1.25],
            ..EstimateOptions::default()
        };
        let report = estimate(&[("syn".into(), input)], &opts).unwrap();
        assert_eq!(report.states_steps, vec![5, 25]);
        for (row, target) in report.chain.chain.matrix().iter().zip(LagChain::prolonged().matrix()) {
            for (p, q) in row.iter().zip(target) {
                assert!((p - q).abs() < 0.05, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn empty_inputs_fail() {
        assert!(estimate(&[], &EstimateOptions::default()).is_err());
        assert!(LogInput::read(&b""[..]).is_err());
    }
}
