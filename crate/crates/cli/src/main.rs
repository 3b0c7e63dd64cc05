use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mohone_cli::stages::{self, Context, DirLock, Which};
use mohone_cli::{CliError, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "mohone", version, about = "Knowledge graph embeddings retrofitted with heat-kernel network embeddings")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set kge.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every stage and write report.json.
    Run {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Project training triples to an undirected graph.
    GraphBuild {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Compute the heat matrix and heat signatures.
    Diffuse {
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        degree: Option<usize>,
    },
    /// Train network embeddings from the heat matrix.
    Embed {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: u64,
    },
    /// Train the base KG embedding model.
    KgeTrain {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: u64,
    },
    /// Retrofit base entity embeddings toward network neighbours.
    Retrofit {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Retrain relation embeddings with retrofitted entities held fixed.
    Relearn,
    /// Filtered link-prediction evaluation.
    Eval {
        /// baseline, infused or both.
        #[arg(long, default_value = "both")]
        which: String,
    },
    /// Combine evaluations into report.json with a significance test.
    Report,
}

fn push<T: ToString>(sets: &mut Vec<String>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        sets.push(format!("{key}={}", toml_literal(&v.to_string())));
    }
}

/// Quotes values that are not numbers or booleans.
fn toml_literal(v: &str) -> String {
    if v.parse::<f64>().is_ok() || v == "true" || v == "false" {
        v.to_string()
    } else {
        format!("{v:?}")
    }
}

fn data_sets(sets: &mut Vec<String>, d: &DataArgs) {
    push(sets, "data.train", d.train.as_ref().map(|p| p.display()));
    push(sets, "data.valid", d.valid.as_ref().map(|p| p.display()));
    push(sets, "data.test", d.test.as_ref().map(|p| p.display()));
}

fn flag_overrides(cli: &Cli) -> Vec<String> {
    let mut sets = cli.sets.clone();
    push(&mut sets, "output.dir", cli.out.as_ref().map(|p| p.display()));
    match &cli.command {
        Command::Run { data } | Command::GraphBuild { data } => data_sets(&mut sets, data),
        Command::Diffuse { scale, method, degree } => {
            push(&mut sets, "diffusion.scale", *scale);
            push(&mut sets, "diffusion.method", method.clone());
            push(&mut sets, "diffusion.chebyshev_degree", *degree);
        }
        Command::Embed {
            mode,
            dim,
            epochs,
            threads,
            seed,
        } => {
            push(&mut sets, "netembed.mode", mode.clone());
            push(&mut sets, "netembed.dim", *dim);
            push(&mut sets, "netembed.epochs", *epochs);
            push(&mut sets, "netembed.threads", *threads);
            push(&mut sets, "netembed.seed", Some(*seed));
        }
        Command::KgeTrain {
            model,
            dim,
            epochs,
            batch_size,
            lr,
            seed,
        } => {
            push(&mut sets, "kge.model", model.clone());
            push(&mut sets, "kge.dim", *dim);
            push(&mut sets, "kge.epochs", *epochs);
            push(&mut sets, "kge.batch_size", *batch_size);
            push(&mut sets, "kge.learning_rate", *lr);
            push(&mut sets, "kge.seed", Some(*seed));
        }
        Command::Retrofit { k, alpha, iters, tol } => {
            push(&mut sets, "retrofit.k", *k);
            push(&mut sets, "retrofit.alpha", *alpha);
            push(&mut sets, "retrofit.max_iters", *iters);
            push(&mut sets, "retrofit.tol", *tol);
        }
        Command::Relearn | Command::Eval { .. } | Command::Report => {}
    }
    sets
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let sets = flag_overrides(&cli);
    let cfg = PipelineConfig::resolve(cli.config.as_deref(), std::env::vars(), &sets)?;
    if let Command::Run { .. } = cli.command {
        let report = stages::run_pipeline(cfg)?;
        print_json(&report);
        return Ok(());
    }
    let _lock = DirLock::acquire(&cfg.output.dir)?;
    let ctx = Context::new(cfg)?;
    stages::write_resolved_config(&ctx)?;
    match cli.command {
        Command::Run { .. } => unreachable!(),
        Command::GraphBuild { .. } => {
            stages::graph_build(&ctx)?;
        }
        Command::Diffuse { .. } => {
            stages::diffuse(&ctx)?;
        }
        Command::Embed { .. } => {
            stages::embed(&ctx)?;
        }
        Command::KgeTrain { .. } => {
            stages::kge_train(&ctx)?;
        }
        Command::Retrofit { .. } => {
            stages::retrofit_stage(&ctx)?;
        }
        Command::Relearn => {
            stages::relearn(&ctx)?;
        }
        Command::Eval { which } => {
            let targets = match which.as_str() {
                "baseline" => vec![Which::Baseline],
                "infused" => vec![Which::Infused],
                "both" => vec![Which::Baseline, Which::Infused],
                other => return Err(CliError::Config(format!("--which must be baseline, infused or both, got {other:?}"))),
            };
            for w in targets {
                print_json(&stages::eval(&ctx, w)?);
            }
        }
        Command::Report => print_json(&stages::report(&ctx)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
