//! `ibr`: run scenarios, parameter sweeps, the Nash oracle and plot export.
//!
//! Exit codes: 0 success, 2 invalid input, 3 planner failure during a run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ibr_core::ibr::{nash_oracle, run_ibr, Certificate, GameState, UpdateOrder};
use ibr_core::metrics::score_trace;
use ibr_core::scenario_io::{
    metrics_csv, read_output, resolve_scenario, write_json, write_results, GameAgent, GameFile, GamePair,
    OutputFile, OutputKind, ResultsFile, ScenarioFile, SweepFile, SweepRun, SCHEMA_VERSION,
};
use ibr_core::simulator::run_closed_loop;
use ibr_core::{PlannerConfig, PredictorKind, RewardWeights};

const CONCENTRATION: f64 = 0.99;
const ORACLE_EPS: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "ibr", version, about = "Iterative best response planning: scenarios, sweeps, Nash oracle, plot export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario and write its results file.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a scenario once per value of one configuration axis.
    Sweep {
        scenario: String,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; defaults depend on the axis
        /// (iterations 0..=10, confidence on/off, both orders, sigma 0.25/0.5/1.0).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run IBR on a small game and certify the outcome by enumeration.
    Oracle {
        /// Game file. Omit when using --random.
        game: Option<PathBuf>,
        /// Generate this many random 2-agent x 3-trajectory games instead.
        #[arg(long, conflicts_with = "game")]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a results or sweep file into a CSV series.
    ExportPlot {
        results: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Directory for results files.
    #[arg(long, env = "IBR_OUTPUT_DIR", default_value = "ibr-out")]
    output_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    EgoFirst,
    EgoLast,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Cv,
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Iterations,
    Confidence,
    Order,
    Sigma,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Entropy,
    ScoreVsIteration,
    ConfidenceTrace,
}

#[derive(Args, Clone)]
struct PlannerArgs {
    /// IBR sweeps per planning cycle.
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Bayesian confidence; when off every agent updates with c = 1.
    #[arg(long, value_enum, default_value = "on")]
    confidence: Toggle,
    #[arg(long, value_enum, default_value = "ego-first")]
    order: Order,
    #[arg(long, value_enum, default_value = "scripted")]
    predictor: PredictorArg,
    /// Likelihood standard deviation (m).
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Collision penalty u_c.
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    u_c: f64,
    /// Proximity penalty u_d.
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    u_d: f64,
    /// Edge clearance (m) counted as "too close".
    #[arg(long, default_value_t = 1.0)]
    proximity: f64,
    /// Longitudinal progress weight alpha.
    #[arg(long, default_value_t = 0.19)]
    alpha: f64,
    /// Lateral progress weight beta.
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// Progress weight w_p.
    #[arg(long, default_value_t = 0.9)]
    w_p: f64,
    /// Comfort weight w_c.
    #[arg(long, default_value_t = 0.15)]
    w_c: f64,
    /// Maximum number of ego proposals.
    #[arg(long, default_value_t = 128)]
    max_proposals: usize,
    /// Planning horizon (s).
    #[arg(long, default_value_t = 4.0)]
    horizon: f64,
    /// Cycles between replans (1 replans every 0.1 s step).
    #[arg(long, default_value_t = 1)]
    replan_every: usize,
}

impl PlannerArgs {
    fn config(&self) -> PlannerConfig {
        let mut cfg = PlannerConfig {
            iterations: self.iterations,
            reward: RewardWeights {
                u_c: self.u_c,
                u_d: self.u_d,
                proximity_threshold: self.proximity,
                alpha: self.alpha,
                beta: self.beta,
                w_p: self.w_p,
                w_c: self.w_c,
            },
            confidence_enabled: matches!(self.confidence, Toggle::On),
            order: match self.order {
                Order::EgoFirst => UpdateOrder::EgoFirst,
                Order::EgoLast => UpdateOrder::EgoLast,
            },
            predictor: match self.predictor {
                PredictorArg::Cv => PredictorKind::Cv,
                PredictorArg::Scripted => PredictorKind::Scripted,
            },
            replan_every: self.replan_every,
            ..PlannerConfig::default()
        };
        cfg.confidence.sigma = self.sigma;
        cfg.proposals.max_proposals = self.max_proposals;
        cfg.proposals.horizon = self.horizon;
        cfg
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Planner(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<ibr_core::Error>() {
            Some(core) if core.is_input_error() => Failure::Input(e),
            Some(ibr_core::Error::NoProposals(_)) => Failure::Planner(e),
            _ => Failure::Other(e),
        }
    }
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            planner,
            output,
        } => cmd_run(&scenario, &planner, &output.output_dir),
        Command::Sweep {
            scenario,
            axis,
            values,
            planner,
            output,
        } => cmd_sweep(&scenario, axis, values, &planner, &output.output_dir),
        Command::Oracle { game, random, seed } => match (game, random) {
            (Some(path), _) => cmd_oracle(&path),
            (None, Some(n)) => cmd_oracle_random(n, seed),
            (None, None) => Err(input(anyhow!("give a game file or --random N"))),
        },
        Command::ExportPlot { results, kind, out } => cmd_export_plot(&results, kind, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Planner(e)) => {
            eprintln!("planner failure: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(spec: &str) -> Result<ScenarioFile, Failure> {
    let file = resolve_scenario(spec)
        .with_context(|| format!("loading scenario '{spec}'"))
        .map_err(input)?;
    file.to_scenario()
        .with_context(|| format!("validating scenario '{spec}'"))
        .map_err(input)?;
    Ok(file)
}

fn simulate(file: &ScenarioFile, cfg: &PlannerConfig) -> anyhow::Result<ResultsFile> {
    let scenario = file.to_scenario()?;
    let trace = run_closed_loop(&scenario, cfg)?;
    let metrics = score_trace(&trace, &scenario, &cfg.comfort)?;
    Ok(ResultsFile::new(file, cfg, trace, metrics))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(Failure::Other)
}

fn cmd_run(spec: &str, planner: &PlannerArgs, out_dir: &Path) -> Result<ExitCode, Failure> {
    let file = load(spec)?;
    let cfg = planner.config();
    cfg.validate().map_err(input)?;
    let results = simulate(&file, &cfg)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join(format!("{}.results.json", file.name));
    write_results(&results, &path).map_err(|e| Failure::Other(e.into()))?;

    let m = &results.metrics;
    println!("scenario     {}", results.scenario);
    println!("config hash  {}", results.config_hash);
    println!(
        "subscores    nc={} dac={} ddc={} mp={} ttc={} ep={:.4} sc={:.4} comfort={}",
        m.nc, m.dac, m.ddc, m.mp, m.ttc, m.ep, m.sc, m.comfort
    );
    match m.min_ttc {
        Some(t) => println!("min ttc      {t:.3} s"),
        None => println!("min ttc      inf"),
    }
    println!("composite    {:.4}", m.composite);
    println!("results      {}", path.display());
    if results.trace.emergency() {
        eprintln!("planner failure: no proposals at some cycle; emergency stop used");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn default_values(axis: Axis) -> Vec<String> {
    let v: Vec<&str> = match axis {
        Axis::Iterations => return (0..=10).map(|k| k.to_string()).collect(),
        Axis::Confidence => vec!["on", "off"],
        Axis::Order => vec!["ego-first", "ego-last"],
        Axis::Sigma => vec!["0.25", "0.5", "1.0"],
    };
    v.into_iter().map(String::from).collect()
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Iterations => "iterations",
        Axis::Confidence => "confidence",
        Axis::Order => "order",
        Axis::Sigma => "sigma",
    }
}

fn apply_axis(base: &PlannerArgs, axis: Axis, value: &str) -> anyhow::Result<PlannerConfig> {
    let mut args = base.clone();
    match axis {
        Axis::Iterations => args.iterations = value.parse().with_context(|| format!("bad iteration count '{value}'"))?,
        Axis::Sigma => args.sigma = value.parse().with_context(|| format!("bad sigma '{value}'"))?,
        Axis::Confidence => {
            args.confidence = Toggle::from_str(value, true).map_err(|e| anyhow!("bad confidence value: {e}"))?
        }
        Axis::Order => args.order = Order::from_str(value, true).map_err(|e| anyhow!("bad order value: {e}"))?,
    }
    let cfg = args.config();
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_sweep(
    spec: &str,
    axis: Axis,
    values: Vec<String>,
    planner: &PlannerArgs,
    out_dir: &Path,
) -> Result<ExitCode, Failure> {
    let file = load(spec)?;
    let values = if values.is_empty() { default_values(axis) } else { values };
    let configs = values
        .iter()
        .map(|v| apply_axis(planner, axis, v))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(input)?;
    let results = configs
        .par_iter()
        .map(|cfg| simulate(&file, cfg))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let emergency = results.iter().any(|r| r.trace.emergency());
    let runs: Vec<SweepRun> = values
        .iter()
        .zip(&results)
        .map(|(v, r)| SweepRun {
            value: v.clone(),
            config_hash: r.config_hash.clone(),
            metrics: r.metrics,
        })
        .collect();
    let sweep = SweepFile {
        kind: OutputKind::Sweep,
        schema_version: SCHEMA_VERSION,
        scenario: file.name.clone(),
        axis: axis_name(axis).to_string(),
        runs,
    };
    ensure_dir(out_dir)?;
    let stem = format!("{}.sweep-{}", file.name, axis_name(axis));
    let json = out_dir.join(format!("{stem}.json"));
    write_json(&sweep, &json).map_err(|e| Failure::Other(e.into()))?;
    let csv = sweep_csv(&sweep);
    let csv_path = out_dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, &csv)
        .with_context(|| format!("writing {}", csv_path.display()))
        .map_err(Failure::Other)?;
    print!("{csv}");
    println!("sweep        {}", json.display());
    if emergency {
        eprintln!("planner failure: emergency stop used in at least one run");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_csv(sweep: &SweepFile) -> String {
    let rows: Vec<(String, ibr_core::MetricsReport)> = sweep.runs.iter().map(|r| (r.value.clone(), r.metrics)).collect();
    metrics_csv(&sweep.axis, &rows)
}

fn concentrated(state: &GameState) -> bool {
    state.distributions().iter().all(|d| d.max_prob() > CONCENTRATION)
}

struct OracleOutcome {
    state: GameState,
    certificate: Certificate,
}

fn solve(game: &GameFile) -> anyhow::Result<OracleOutcome> {
    let state = game.game_state()?;
    let (state, _) = run_ibr(state, game.iterations);
    let certificate = nash_oracle(&state.table, &state.cfg, &state.profile(), ORACLE_EPS)?;
    Ok(OracleOutcome { state, certificate })
}

fn verdict(o: &OracleOutcome) -> &'static str {
    match (concentrated(&o.state), o.certificate.is_equilibrium()) {
        (true, true) => "AGREE",
        (true, false) => "DISAGREE",
        (false, true) => "NOT CONCENTRATED (profile is an equilibrium)",
        (false, false) => "NOT CONCENTRATED",
    }
}

fn cmd_oracle(path: &Path) -> Result<ExitCode, Failure> {
    let game = GameFile::load(path)
        .with_context(|| format!("loading game {}", path.display()))
        .map_err(input)?;
    let outcome = solve(&game)?;
    for (id, d) in outcome.state.agent_ids.iter().zip(outcome.state.distributions()) {
        let probs: Vec<String> = d.probs.iter().map(|p| format!("{p:.6}")).collect();
        println!("{id:<12} [{}]", probs.join(", "));
    }
    println!("profile      {:?}", outcome.certificate.profile);
    match &outcome.certificate.violation {
        None => println!("certificate  no profitable unilateral deviation (eps = {ORACLE_EPS:e})"),
        Some(v) => println!(
            "certificate  agent {} gains {:.6} by switching {} -> {}",
            v.agent, v.gain, v.from, v.to
        ),
    }
    let verdict = verdict(&outcome);
    println!("{verdict}");
    Ok(if verdict == "DISAGREE" {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

/// Two agents with three strategies each; scores drawn from {u_c, u_d, 0}.
fn random_game(rng: &mut ChaCha8Rng) -> GameFile {
    let cfg = RewardWeights::default();
    let values = [cfg.u_c, cfg.u_d, 0.0];
    let psi = (0..3)
        .map(|_| (0..3).map(|_| values[rng.gen_range(0..3)]).collect())
        .collect();
    GameFile {
        schema_version: SCHEMA_VERSION,
        agents: vec![
            GameAgent {
                id: "ego".into(),
                trajectories: 3,
                base_probs: None,
                confidence: None,
            },
            GameAgent {
                id: "agent".into(),
                trajectories: 3,
                base_probs: None,
                confidence: None,
            },
        ],
        pairs: vec![GamePair { i: 0, j: 1, psi }],
        ego_progress: Some((0..3).map(|_| rng.gen_range(0.0..=cfg.alpha + cfg.beta)).collect()),
        ego_comfort: Some((0..3).map(|_| f64::from(rng.gen_range(0u8..2))).collect()),
        reward: cfg,
        iterations: 50,
        order: UpdateOrder::EgoFirst,
    }
}

fn cmd_oracle_random(n: usize, seed: u64) -> Result<ExitCode, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut concentrated_runs, mut agreed) = (0usize, 0usize);
    for k in 0..n {
        let outcome = solve(&random_game(&mut rng))?;
        if concentrated(&outcome.state) {
            concentrated_runs += 1;
            if outcome.certificate.is_equilibrium() {
                agreed += 1;
            } else {
                println!("game {k}: DISAGREE at profile {:?}", outcome.certificate.profile);
            }
        }
    }
    println!("games        {n}");
    println!("concentrated {concentrated_runs}");
    let rate = if concentrated_runs == 0 {
        1.0
    } else {
        agreed as f64 / concentrated_runs as f64
    };
    println!("agreement    {:.1}%", 100.0 * rate);
    Ok(if agreed == concentrated_runs {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_export_plot(path: &Path, kind: PlotKind, out: Option<&Path>) -> Result<ExitCode, Failure> {
    let file = read_output(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input)?;
    let csv = match (kind, file) {
        (PlotKind::Entropy, OutputFile::Results(r)) => {
            let ego = r.ego_entropy.as_deref().unwrap_or(&[]);
            let agents = r.agent_entropy.as_deref().unwrap_or(&[]);
            let mut s = String::from("iteration,ego_relative_entropy,agent_relative_entropy\n");
            for (k, e) in ego.iter().enumerate() {
                let a = agents.get(k).map(|v| v.to_string()).unwrap_or_default();
                s.push_str(&format!("{k},{e},{a}\n"));
            }
            s
        }
        (PlotKind::ConfidenceTrace, OutputFile::Results(r)) => {
            let mut s = String::from("step,t,agent,posterior,gain\n");
            for c in &r.trace.cycles {
                for a in &c.confidences {
                    s.push_str(&format!("{},{},{},{},{}\n", c.step, c.t, a.id, a.posterior, a.gain));
                }
            }
            s
        }
        (PlotKind::ScoreVsIteration, OutputFile::Sweep(sweep)) => {
            if sweep.axis != "iterations" {
                return Err(input(anyhow!("score-vs-iteration needs an iterations sweep, got axis '{}'", sweep.axis)));
            }
            sweep_csv(&sweep)
        }
        (PlotKind::ScoreVsIteration, OutputFile::Results(_)) => {
            return Err(input(anyhow!("score-vs-iteration needs a sweep file")));
        }
        (_, OutputFile::Sweep(_)) => return Err(input(anyhow!("this plot needs a results file"))),
    };
    match out {
        Some(p) => std::fs::write(p, csv)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(Failure::Other)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

