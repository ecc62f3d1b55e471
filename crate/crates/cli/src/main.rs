use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ceofp::pipeline::{self, CevaeVariant, PipelineConfig, SeedRun};
use ceofp::Error;

#[derive(Parser)]
#[command(name = "ceofp", version, about = "Cross-city OD flow prediction with causal feature reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write the source and target cities (with truth) for a seed.
    Synth,
    /// Causal discovery on the source city.
    Discover,
    /// Train the CE-VAE on the source with the discovered DAG.
    TrainCevae,
    /// Fill the target's missing columns and write latent statistics.
    Reconstruct,
    /// Train the flow model on the source city.
    TrainTeacher,
    /// Train the distilled flow model on the target city.
    TrainStudent,
    /// Write held-out flow predictions of the trained student.
    Predict,
    /// Score the student and the reconstruction; writes metrics.json.
    Evaluate,
    /// Full model against every baseline; writes comparison.csv.
    Bench,
    /// RMSE against the number of masked features.
    Sweep,
    /// Ablation arms next to the full model.
    Ablate,
    /// Reward, loss and sweep charts from an output directory.
    Figures,
    /// Every stage for every seed; writes report.json.
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Discover => "discover",
            Command::TrainCevae => "train-cevae",
            Command::Reconstruct => "reconstruct",
            Command::TrainTeacher => "train-teacher",
            Command::TrainStudent => "train-student",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Bench => "bench",
            Command::Sweep => "sweep",
            Command::Ablate => "ablate",
            Command::Figures => "figures",
            Command::Pipeline => "pipeline",
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(s) = cli.seed {
        config.seeds = vec![s];
    }
    config.check()?;
    Ok(config)
}

fn json(value: &impl serde::Serialize) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn run(cli: &Cli) -> Result<String, Error> {
    let config = load_config(cli).map_err(|e| e.in_stage("config"))?;
    // single-stage commands act on the first configured seed
    let seed_run = |strict: bool| -> Result<SeedRun, Error> {
        let mut r = SeedRun::new(&config, config.seeds[0]).map_err(|e| e.in_stage("data"))?;
        r.strict = strict;
        Ok(r)
    };
    match cli.command {
        Command::Synth => {
            let dir = seed_run(true)?.write_data().map_err(|e| e.in_stage("synth"))?;
            Ok(format!("wrote {}", dir.display()))
        }
        Command::Discover => {
            let found = seed_run(true)?.discovery()?;
            Ok(format!("dag {} with {} edges", found.dag.hash(), found.dag.edge_count()))
        }
        Command::TrainCevae => {
            let model = seed_run(true)?.train_cevae(CevaeVariant::Main)?;
            Ok(format!("CE-VAE for dag {} with {} missing features", model.dag_hash, model.missing.len()))
        }
        Command::Reconstruct => {
            let r = seed_run(true)?;
            let rec = r.reconstruct()?;
            Ok(format!("student input width {}", rec.student_input(&r.target.features.observed_indices(), true).cols()))
        }
        Command::TrainTeacher => {
            let model = seed_run(true)?.teacher()?;
            Ok(format!("teacher over {} inputs", model.input_width()))
        }
        Command::TrainStudent => json(&seed_run(true)?.train_ce_ofp()?.1),
        Command::Predict => Ok(format!("wrote {}", seed_run(true)?.predict()?.display())),
        Command::Evaluate => json(&seed_run(true)?.evaluate()?),
        Command::Bench => json(&pipeline::summarize_flows(pipeline::bench(&config)?.iter().map(|r| (r.arm.as_str(), &r.metrics)))),
        Command::Sweep => json(&pipeline::sweep_medians(&pipeline::sweep_missing_features(&config, &config.sweep.counts)?)),
        Command::Ablate => json(&pipeline::ablate(&config)?.summary),
        Command::Figures => {
            let written = pipeline::emit_figures(&config.output_dir)?;
            Ok(written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"))
        }
        Command::Pipeline => {
            let report = pipeline::run_pipeline(&config)?;
            json(&(&report.flows, &report.recon))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = match &e {
                Error::Stage { .. } => e.to_string(),
                _ => format!("stage {} failed: {e}", cli.command.name()),
            };
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
