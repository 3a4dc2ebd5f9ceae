use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pilot_edge::netem::LinkSpec;
use pilot_edge::scenario::{
    self, ModelKind, Scenario, ScenarioError, SweepAxes, DEFAULT_SWEEP_SIZES,
};
use pilot_edge::Transport;

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Runs edge-to-cloud streaming experiments on local pilots.
#[derive(Debug, Parser)]
#[command(name = "pilotedge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario `repeats` times.
    Run(ScenarioArgs),
    /// Run the cross product of the given axes.
    Sweep {
        #[command(flatten)]
        base: ScenarioArgs,
        /// Axis and values, e.g. `message_size=25,1000` or
        /// `model=baseline,kmeans`. Repeatable; axes not given take the
        /// base scenario's value. Without any axis, message sizes
        /// 25,100,1000,10000 are swept.
        #[arg(long = "axis", value_name = "NAME=V1,V2,..")]
        axes: Vec<String>,
    },
    /// Recompute aggregates from raw CSVs and print them.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Also write the long-format table here.
        #[arg(long)]
        long_csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Experiment to run; selects the cloud handler.
    #[arg(long, default_value = "baseline")]
    scenario: ModelKind,
    /// Overrides the model picked by `--scenario`.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = 1)]
    partitions: u32,
    /// Points per message.
    #[arg(long, default_value_t = 25)]
    points: usize,
    /// Messages per producer.
    #[arg(long, default_value_t = 512)]
    messages: u64,
    #[arg(long)]
    wan_delay_ms: Option<f64>,
    #[arg(long)]
    wan_jitter_ms: Option<f64>,
    #[arg(long)]
    wan_bw_mbit: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    repeats: u32,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, default_value = "inproc")]
    transport: Transport,
}

impl ScenarioArgs {
    fn to_scenario(&self) -> Scenario {
        let wan = if self.wan_delay_ms.is_some() || self.wan_jitter_ms.is_some() || self.wan_bw_mbit.is_some() {
            Some(LinkSpec::new(
                self.wan_delay_ms.unwrap_or(0.0),
                self.wan_jitter_ms.unwrap_or(0.0),
                self.wan_bw_mbit.unwrap_or(f64::INFINITY),
            ))
        } else {
            None
        };
        Scenario {
            model: self.model.unwrap_or(self.scenario),
            partitions: self.partitions,
            points_per_message: self.points,
            messages: self.messages,
            wan,
            seed: self.seed,
            repeats: self.repeats,
            out: self.out.clone(),
            transport: self.transport,
        }
    }
}

fn list<T: std::str::FromStr>(values: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    values
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| format!("`{v}`: {e}")))
        .collect()
}

fn parse_axes(base: &Scenario, specs: &[String]) -> Result<SweepAxes, String> {
    let mut axes = SweepAxes {
        models: vec![base.model],
        partitions: vec![base.partitions],
        sizes: vec![base.points_per_message],
    };
    if specs.is_empty() {
        axes.sizes = DEFAULT_SWEEP_SIZES.to_vec();
    }
    for spec in specs {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| format!("axis `{spec}` is not NAME=VALUES"))?;
        match name {
            "message_size" | "points" => axes.sizes = list(values)?,
            "partitions" => axes.partitions = list(values)?,
            "model" => axes.models = list(values)?,
            other => return Err(format!("unknown axis `{other}`, expected message_size, partitions or model")),
        }
    }
    Ok(axes)
}

fn exit_for(e: &ScenarioError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUN_FAILURE })
}

fn run(args: &ScenarioArgs) -> ExitCode {
    let scenario = args.to_scenario();
    match scenario::run_scenario(&scenario) {
        Ok(out) => {
            for (i, r) in out.reports.iter().enumerate() {
                match &r.summary {
                    Some(s) => println!(
                        "repeat {i}: {} chains, {:.3} MB/s, latency mean {:.3} ms p50 {:.3} ms p99 {:.3} ms, bottleneck {}",
                        r.complete_chains(),
                        s.throughput_mb_s,
                        s.latency.mean_ms,
                        s.latency.p50_ms,
                        s.latency.p99_ms,
                        s.bottleneck
                    ),
                    None => println!("repeat {i}: no messages"),
                }
            }
            let cell = out.cell();
            println!(
                "{}: throughput {} MB/s, latency p50 {} ms, p99 {} ms",
                scenario.stem(),
                cell.throughput_mb_s,
                cell.latency_p50_ms,
                cell.latency_p99_ms
            );
            for p in &out.csv_paths {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", out.summary_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => exit_for(&e),
    }
}

fn sweep(args: &ScenarioArgs, axes: &[String]) -> ExitCode {
    let base = args.to_scenario();
    let axes = match parse_axes(&base, axes) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match scenario::sweep(&base, &axes) {
        Ok(rows) => {
            print!("{}", scenario::render_sweep(&rows));
            println!("wrote {}", base.out.join("sweep.csv").display());
            if rows.iter().any(|r| r.error.is_some()) {
                ExitCode::from(EXIT_RUN_FAILURE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => exit_for(&e),
    }
}

fn report(paths: &[PathBuf], long_csv: Option<&PathBuf>) -> ExitCode {
    let rows = match scenario::report(paths) {
        Ok(r) => r,
        Err(e) => return exit_for(&e),
    };
    print!("{}", scenario::render_report(&rows));
    if let Some(path) = long_csv {
        let written = std::fs::File::create(path)
            .map_err(ScenarioError::from)
            .and_then(|f| scenario::write_long_csv(f, &rows));
        if let Err(e) = written {
            return exit_for(&e);
        }
        println!("wrote {}", path.display());
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PILOTEDGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep { base, axes } => sweep(base, axes),
        Command::Report { csv, long_csv } => report(csv, long_csv.as_ref()),
    }
}
