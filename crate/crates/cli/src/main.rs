use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bmtd::config::Config;
use bmtd::estimator::{estimate, FractionOfTruth};
use bmtd::seed::{derive, stream};
use bmtd::sim::{self, generate_population, params_for, run_trace, trial_seed};
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_SATURATION: u8 = 4;

#[derive(Parser)]
#[command(name = "bmtd", version, about = "Bloom-filter missing tag detection: tuning and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the tuned parameters and analytic times for the scenario.
    Optimize(Common),
    /// Simulate the scenario point for every configured strategy.
    Simulate(Common),
    /// Run the configured grid and write one CSV row per point.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also write the full result as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Emit per-round logs of a single execution as JSON lines.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Trial index whose seed is used.
        #[arg(long, default_value_t = 0)]
        trial: u32,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set run.trials=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output file (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads (overrides run.threads).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<Config> {
        let mut cfg = Config::load(&self.config, &self.overrides)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(t) = self.threads {
            cfg.run.threads = t;
        }
        Ok(cfg)
    }
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(bmtd::Error::Io).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    let mut w = open_output(path)?;
    w.write_all(text.as_bytes()).map_err(bmtd::Error::Io)?;
    w.flush().map_err(bmtd::Error::Io)?;
    Ok(())
}

fn optimize(c: &Common) -> anyhow::Result<()> {
    let cfg = c.load()?;
    let s = cfg.scenario();
    let mut report = bmtd::optimizer::report(&s)?;
    if cfg.run.include_estimation {
        let seed = trial_seed(cfg.run.seed, 0, 0);
        let pop = generate_population(&s, seed)?;
        let est = estimate(
            &pop.expected,
            &pop.tags,
            cfg.run.epsilon,
            cfg.run.estimator,
            &FractionOfTruth::default(),
            derive(seed, &[stream::ESTIMATE]),
        )?;
        report.estimate_u_hat = Some(est.u_hat);
        report.estimate_epsilon = Some(est.epsilon);
        report.estimate_overhead_slots = Some(est.overhead_slots);
        report.estimate_early_detection = Some(est.early_detection);
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_text(c.output.as_deref(), &text)
}

fn simulate(c: &Common) -> anyhow::Result<()> {
    let cfg = c.load()?;
    let mut exp = cfg.experiment()?;
    exp.grid = sim::Grid::single(&cfg.scenario());
    let result = sim::run_experiment(&exp)?;
    let mut text = result.to_json();
    text.push('\n');
    write_text(c.output.as_deref(), &text)
}

fn sweep(c: &Common, json: Option<&Path>) -> anyhow::Result<()> {
    let cfg = c.load()?;
    let result = sim::run_experiment(&cfg.experiment()?)?;
    let mut w = open_output(c.output.as_deref())?;
    result.write_csv(&mut w)?;
    w.flush().map_err(bmtd::Error::Io)?;
    if let Some(p) = json {
        let mut text = result.to_json();
        text.push('\n');
        write_text(Some(p), &text)?;
    }
    Ok(())
}

fn trace(c: &Common, trial: u32) -> anyhow::Result<()> {
    let cfg = c.load()?;
    let s = cfg.scenario();
    let exp = cfg.experiment()?;
    let strategy = exp.strategies[0];
    let params = params_for(&exp, &s, strategy)?;
    let opts = sim::TrialOptions {
        estimation: exp.estimation,
        coverage: exp.coverage,
        no_enforce: exp.no_enforce,
    };
    let (result, logs) = run_trace(&s, &params, trial_seed(exp.base_seed, 0, trial), &opts)?;
    let mut w = open_output(c.output.as_deref())?;
    for log in &logs {
        writeln!(w, "{}", log.to_json_line()).map_err(bmtd::Error::Io)?;
    }
    w.flush().map_err(bmtd::Error::Io)?;
    eprintln!(
        "{} after {:.1} bit-slots",
        if result.detected { "missing event" } else { "no missing event" },
        result.time
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<bmtd::Error>() {
            return match e {
                bmtd::Error::Io(_) => EXIT_IO,
                bmtd::Error::Saturation { .. } => EXIT_SATURATION,
                _ => EXIT_CONFIG,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_CONFIG
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Optimize(c) => optimize(c),
        Command::Simulate(c) => simulate(c),
        Command::Sweep { common, json } => sweep(common, json.as_deref()),
        Command::Trace { common, trial } => trace(common, *trial),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
