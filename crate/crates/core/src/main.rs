use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use fedbe::datagen::label_histogram;
use fedbe::federation::{downstream_data, partition_dirichlet_per_client, plan_expansion, run_experiment, Method};
use fedbe::harness::{
    emit_report, forgetting_experiment, gradcheck_suite, pretrain, read_metrics_csv, render_charts, ExperimentConfig,
};
use fedbe::rng::SeedStreams;
use fedbe::{Error, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "fedbe", version, about = "Federated fine-tuning with block expansion, simulated")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, federate with the configured method and write a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the expansion plan chosen for a config.
    SelectLayers {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print per-client label histograms of the downstream partition.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain once, federate with several methods and compare forgetting.
    Forgetting {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated methods; all of them by default.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Re-render charts from an existing metrics.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let series = run_experiment(&cfg)?;
            let summary = emit_report(&series, &out, cfg.target_accuracy)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::SelectLayers { config, seed } => {
            let cfg = load(&config, seed)?;
            let pretrained = pretrain(&cfg)?;
            let method = if cfg.method.expands() { cfg.method } else { Method::Fedbe };
            let plan = plan_expansion(&cfg, &pretrained, method)?.expect("expanding method");
            println!("{}", serde_json::to_string(&plan)?);
        }
        Command::Partition { config, seed } => {
            let cfg = load(&config, seed)?;
            let data = downstream_data(&cfg)?;
            let alphas = cfg.alpha.per_client(cfg.clients)?;
            let shards = partition_dirichlet_per_client(&data.train, &alphas, SeedStreams::new(cfg.seed).seed("partition"))?;
            for (i, shard) in shards.iter().enumerate() {
                println!("{}", json!({"client": i, "alpha": alphas[i], "histogram": label_histogram(shard)}));
            }
        }
        Command::Gradcheck { eps, seed } => {
            let results = gradcheck_suite(eps, seed)?;
            let mut worst: f64 = 0.0;
            for (case, err) in &results {
                println!("{case}: max relative error {err:.3e}");
                worst = worst.max(*err);
            }
            println!("max error {worst:.3e}");
            if worst.is_nan() || worst >= GRADCHECK_TOLERANCE {
                return Err(Error::Runtime(format!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}")));
            }
        }
        Command::Forgetting { config, out, seed, methods } => {
            let cfg = load(&config, seed)?;
            let methods: Vec<Method> = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods.iter().map(|m| m.parse()).collect::<Result<_>>()?
            };
            let mut summaries = Vec::new();
            for series in forgetting_experiment(&cfg, &methods)? {
                summaries.push(emit_report(&series, &out.join(series.method.name()), cfg.target_accuracy)?);
            }
            let text = serde_json::to_string_pretty(&summaries)?;
            std::fs::write(out.join("forgetting.json"), format!("{text}\n"))?;
            println!("{text}");
        }
        Command::Report { input } => {
            let rows = read_metrics_csv(&input.join("metrics.csv"))?;
            render_charts(&rows, &input)?;
            println!("wrote {} and {}", input.join("accuracy.svg").display(), input.join("time.svg").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedbe: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
