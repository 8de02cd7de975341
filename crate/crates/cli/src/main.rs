mod error;
mod figures;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use umcast::allocation::{solve_mmf, solve_sse, MmfSolution, SseSolution};
use umcast::model::{check, PilotPowers, PowerSplit};
use umcast::montecarlo::validate_closed_form;
use umcast::pareto::{check_convexity, write_csv, CSV_HEADER};
use umcast::scenario::{CellGeometry, PhysicalConfig, RadioParams, Scenario};
use umcast::{DownlinkPowers, Precoder, SeReport};

use crate::error::{CliError, CliResult};
use crate::figures::SweepSpec;
use crate::manifest::{now_ms, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "umcast", version, about = "Joint unicast and multi-group multicast massive MIMO downlink")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a cell and write the scenario document.
    Scenario(ScenarioArgs),
    /// Max-min fair multicast allocation at a fixed power split.
    Mmf(SolveArgs),
    /// Weighted sum-SE unicast allocation at a fixed power split.
    Sse(SolveArgs),
    /// Trace the Pareto boundary of the two objectives.
    Pareto(ParetoArgs),
    /// Check the closed-form SINRs against link-level simulation.
    Validate(ValidateArgs),
    /// Produce the data behind one of the result figures.
    Figure(FigureArgs),
}

#[derive(Args, Debug, Serialize)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 100)]
    n_antennas: usize,
    #[arg(long, default_value_t = 200)]
    coherence_length: usize,
    #[arg(long, default_value_t = 50)]
    unicast: usize,
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, default_value_t = 100)]
    group_size: usize,
    /// Explicit per-group sizes; overrides --groups and --group-size.
    #[arg(long, value_delimiter = ',')]
    group_sizes: Option<Vec<usize>>,
    /// Defaults to U + G.
    #[arg(long)]
    pilot_length: Option<usize>,
    #[arg(long, default_value_t = 500.0)]
    cell_radius: f64,
    #[arg(long, default_value_t = 35.0)]
    exclusion_radius: f64,
    #[arg(long, default_value_t = 3.76)]
    pathloss_exponent: f64,
    #[arg(long)]
    attenuation_const: Option<f64>,
    #[arg(long, default_value_t = 20e6)]
    bandwidth_hz: f64,
    #[arg(long, default_value_t = -174.0, allow_hyphen_values = true)]
    noise_psd_dbm_hz: f64,
    #[arg(long, default_value_t = 10.0)]
    tx_power_watts: f64,
    /// Drawn from the clock and recorded in the manifest when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Ratio(f64, f64);

fn parse_ratio(s: &str) -> Result<Ratio, String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if !(a >= 0.0 && b >= 0.0 && a + b > 0.0 && (a + b).is_finite()) {
        return Err("ratio parts must be non-negative, finite and not both zero".into());
    }
    Ok(Ratio(a, b))
}

#[derive(Args, Debug, Serialize)]
#[group(multiple = false)]
struct SplitArgs {
    /// Unicast power in noise-normalized units, `0 <= P_un <= P`.
    #[arg(long)]
    p_un: Option<f64>,
    /// `P_un : P_mu`; 1:1 when neither flag is given.
    #[arg(long, value_parser = parse_ratio)]
    split_ratio: Option<Ratio>,
}

impl SplitArgs {
    fn resolve(&self, total: f64) -> CliResult<PowerSplit> {
        Ok(match (self.p_un, self.split_ratio) {
            (Some(p), _) => PowerSplit::full(total, p)?,
            (None, Some(Ratio(a, b))) => PowerSplit::from_ratio(total, a, b)?,
            (None, None) => PowerSplit::from_ratio(total, 1.0, 1.0)?,
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    precoder: Precoder,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ParetoArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    precoder: Precoder,
    #[arg(long, default_value_t = 21)]
    points: usize,
    /// Also write the concavity report here.
    #[arg(long)]
    convexity: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    precoder: Precoder,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

#[derive(Args, Debug, Serialize)]
struct FigureArgs {
    figure: Figure,
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    g_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    u_values: Option<Vec<usize>>,
    #[arg(long, default_value_t = 50)]
    unicast: usize,
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, default_value_t = 100)]
    group_size: usize,
    #[arg(long, default_value_t = 200)]
    coherence_length: usize,
    #[arg(long, default_value_t = 21)]
    points: usize,
    /// Drops averaged per grid cell; 10 for fig2/fig3 and 1 for fig4 by default.
    #[arg(long)]
    drops: Option<usize>,
    /// Restrict to one precoder; both by default.
    #[arg(long)]
    precoder: Option<Precoder>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// What a command produced, for the manifest.
struct Run {
    command: &'static str,
    resolved: Value,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
    /// A check that ran to completion but did not pass.
    verdict: CliResult<()>,
}

fn to_value<T: Serialize>(x: &T) -> CliResult<Value> {
    serde_json::to_value(x).map_err(|e| CliError::Internal(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, x: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(x).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let s: Scenario = serde_json::from_slice(&bytes).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    check(&s.config, &s.fading)?;
    Ok(s)
}

fn seed_or_clock(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(now_ms)
}

fn cmd_scenario(a: &ScenarioArgs) -> CliResult<Run> {
    let seed = seed_or_clock(a.seed);
    let geometry = CellGeometry {
        cell_radius: a.cell_radius,
        exclusion_radius: a.exclusion_radius,
        pathloss_exponent: a.pathloss_exponent,
        attenuation_const: a.attenuation_const.unwrap_or(CellGeometry::default().attenuation_const),
    };
    let radio = RadioParams {
        bandwidth_hz: a.bandwidth_hz,
        noise_psd_dbm_hz: a.noise_psd_dbm_hz,
        tx_power_watts: a.tx_power_watts,
    };
    let groups = a.group_sizes.clone().unwrap_or_else(|| vec![a.group_size; a.groups]);
    let mut physical = PhysicalConfig::new(a.n_antennas, a.coherence_length, a.unicast, groups);
    physical.pilot_length = a.pilot_length;
    let scenario = Scenario::generate(geometry, radio, physical, seed)?;
    write_json(&a.out, &scenario)?;
    let mut resolved = to_value(a)?;
    resolved["seed"] = json!(seed);
    Ok(Run {
        command: "scenario",
        resolved,
        seeds: vec![seed],
        outputs: vec![a.out.clone()],
        verdict: Ok(()),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct AllocationResult<S> {
    problem: String,
    precoder: Precoder,
    p_unicast: f64,
    p_multicast: f64,
    objective: f64,
    solution: S,
    /// Per-terminal SEs at the solution; the other service's budget is split
    /// equally over its streams.
    report: SeReport,
}

fn cmd_solve(problem: &'static str, a: &SolveArgs) -> CliResult<Run> {
    let s = load_scenario(&a.scenario)?;
    let split = a.split.resolve(s.config.total_power)?;
    if problem == "mmf" {
        let sol: MmfSolution = solve_mmf(&s.config, &s.fading, split.p_unicast, a.precoder)?;
        let report = sol.se_report(&s.config, &s.fading, split.p_unicast)?;
        write_json(
            &a.out,
            &AllocationResult {
                problem: problem.into(),
                precoder: a.precoder,
                p_unicast: split.p_unicast,
                p_multicast: split.p_multicast,
                objective: sol.objective,
                solution: sol,
                report,
            },
        )?;
    } else {
        let sol: SseSolution = solve_sse(&s.config, &s.fading, split.p_multicast, a.precoder)?;
        let report = sol.se_report(&s.config, &s.fading, split.p_multicast)?;
        write_json(
            &a.out,
            &AllocationResult {
                problem: problem.into(),
                precoder: a.precoder,
                p_unicast: split.p_unicast,
                p_multicast: split.p_multicast,
                objective: sol.objective,
                solution: sol,
                report,
            },
        )?;
    }
    Ok(Run {
        command: problem,
        resolved: json!({ "args": to_value(a)?, "scenario": to_value(&s)? }),
        seeds: vec![s.seed],
        outputs: vec![a.out.clone()],
        verdict: Ok(()),
    })
}

fn cmd_pareto(a: &ParetoArgs) -> CliResult<Run> {
    let s = load_scenario(&a.scenario)?;
    let boundary = umcast::pareto::sweep_boundary(&s.config, &s.fading, a.precoder, a.points)?;
    write_csv(&boundary.rows(), create(&a.out)?)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.convexity {
        write_json(path, &check_convexity(&boundary)?)?;
        outputs.push(path.clone());
    }
    Ok(Run {
        command: "pareto",
        resolved: json!({ "args": to_value(a)?, "scenario": to_value(&s)?, "columns": CSV_HEADER }),
        seeds: vec![s.seed],
        outputs,
        verdict: Ok(()),
    })
}

fn cmd_validate(a: &ValidateArgs) -> CliResult<Run> {
    let s = load_scenario(&a.scenario)?;
    let seed = seed_or_clock(a.seed);
    let split = a.split.resolve(s.config.total_power)?;
    let pilots = PilotPowers::from_energy_caps(&s.config);
    let powers = DownlinkPowers::equal(&s.config, split.p_unicast, split.p_multicast);
    let report = validate_closed_form(&s.config, &s.fading, &pilots, &powers, a.precoder, a.trials, seed)?;
    write_json(&a.out, &report)?;
    let verdict = if report.passed {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "{:.1}% of terminals within |z| <= 3, need 99%",
            100.0 * report.pass_rate
        )))
    };
    let mut resolved = json!({ "args": to_value(a)?, "scenario": to_value(&s)? });
    resolved["args"]["seed"] = json!(seed);
    Ok(Run {
        command: "validate",
        resolved,
        seeds: vec![s.seed, seed],
        outputs: vec![a.out.clone()],
        verdict,
    })
}

fn steps(from: usize, to: usize, step: usize) -> Vec<usize> {
    (from..=to).step_by(step).collect()
}

fn cmd_figure(a: &FigureArgs) -> CliResult<Run> {
    let seed = seed_or_clock(a.seed);
    let default_drops = if a.figure == Figure::Fig4 { 1 } else { 10 };
    let spec = SweepSpec {
        n_values: a.n_values.clone().unwrap_or_else(|| match a.figure {
            Figure::Fig3 => steps(50, 500, 50),
            _ => vec![100, 250, 500],
        }),
        g_values: a.g_values.clone().unwrap_or_else(|| steps(1, 10, 1)),
        k_values: a.k_values.clone().unwrap_or_else(|| {
            let mut k = vec![1];
            k.extend(steps(5, 100, 5));
            k
        }),
        u_values: a.u_values.clone().unwrap_or_else(|| steps(10, 150, 10)),
        unicast: a.unicast,
        groups: a.groups,
        group_size: a.group_size,
        coherence_length: a.coherence_length,
        points: a.points,
        drops: a.drops.unwrap_or(default_drops),
        seed,
        precoders: a.precoder.map(|p| vec![p]).unwrap_or_else(|| Precoder::ALL.to_vec()),
        geometry: CellGeometry::default(),
        radio: RadioParams::default(),
    };
    if spec.drops == 0 {
        return Err(CliError::Usage("--drops must be at least 1".into()));
    }
    let out = create(&a.out)?;
    match a.figure {
        Figure::Fig2 => figures::write_fig2(&figures::fig2(&spec)?, out)?,
        Figure::Fig3 => figures::write_fig3(&figures::fig3(&spec)?, out)?,
        Figure::Fig4 => write_csv(&figures::fig4(&spec)?, out)?,
    }
    let seeds = (0..spec.drops).map(|d| figures::drop_seed(seed, d)).collect();
    Ok(Run {
        command: "figure",
        resolved: json!({ "figure": a.figure, "sweep": to_value(&spec)? }),
        seeds,
        outputs: vec![a.out.clone()],
        verdict: Ok(()),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let started = now_ms();
    let run = match &cli.command {
        Command::Scenario(a) => cmd_scenario(a)?,
        Command::Mmf(a) => cmd_solve("mmf", a)?,
        Command::Sse(a) => cmd_solve("sse", a)?,
        Command::Pareto(a) => cmd_pareto(a)?,
        Command::Validate(a) => cmd_validate(a)?,
        Command::Figure(a) => cmd_figure(a)?,
    };
    let manifest = RunManifest::new(run.command, run.resolved, run.seeds, &run.outputs, started);
    manifest.write(&run.outputs[0])?;
    run.verdict
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        let r = parse_ratio("19:1").unwrap();
        assert_eq!((r.0, r.1), (19.0, 1.0));
        assert!(parse_ratio("1").is_err());
        assert!(parse_ratio("0:0").is_err());
        assert!(parse_ratio("-1:2").is_err());
        assert!(parse_ratio("a:2").is_err());
    }

    #[test]
    fn split_resolution() {
        let none = SplitArgs { p_un: None, split_ratio: None };
        assert_eq!(none.resolve(10.0).unwrap().p_unicast, 5.0);
        let explicit = SplitArgs { p_un: Some(2.5), split_ratio: None };
        assert_eq!(explicit.resolve(10.0).unwrap().p_multicast, 7.5);
        let ratio = SplitArgs { p_un: None, split_ratio: Some(Ratio(1.0, 19.0)) };
        assert!((ratio.resolve(20.0).unwrap().p_unicast - 1.0).abs() < 1e-15);
        let bad = SplitArgs { p_un: Some(11.0), split_ratio: None };
        assert!(bad.resolve(10.0).is_err());
    }

    #[test]
    fn split_flags_are_exclusive() {
        let r = Cli::try_parse_from([
            "umcast", "mmf", "--scenario", "s.json", "--precoder", "mrt", "--p-un", "1", "--split-ratio", "1:1",
            "--out", "o.json",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn unknown_figure_is_a_usage_error() {
        assert!(Cli::try_parse_from(["umcast", "figure", "fig9", "--out", "x.csv"]).is_err());
        assert!(Cli::try_parse_from(["umcast", "figure", "fig3", "--out", "x.csv"]).is_ok());
    }

    #[test]
    fn default_grids() {
        assert_eq!(steps(50, 500, 50).len(), 10);
        assert_eq!(steps(1, 10, 1), (1..=10).collect::<Vec<_>>());
    }
}
