use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use disenq::config::RunConfig;
use disenq::harness::{cmd_diagnose, cmd_evaluate, cmd_generate, cmd_train, output_dir};
use disenq::identification::Fusion;
use disenq::world::Protocol;

/// Desk-scale activity-biometrics retrieval with disentangled query streams.
#[derive(Debug, Parser)]
#[command(name = "disenq", version)]
struct Cli {
    /// Root for outputs when a command is not given --out.
    #[arg(long, env = "DISENQ_OUTPUT_ROOT", global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train on a dataset directory; writes a log and a checkpoint per epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Worker threads; 0 uses every core. Does not change results.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Text-free retrieval evaluation of a checkpoint.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated protocol names, e.g. same_activity-include_view.
        #[arg(long, value_delimiter = ',')]
        protocols: Option<Vec<Protocol>>,
        /// `adaptive` or `fixed` (equal weights).
        #[arg(long)]
        fusion: Option<String>,
        #[arg(long)]
        plots: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mutual-information, leakage-probe and orthogonality diagnostics.
    Diagnose {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export every clip's three features.
        #[arg(long)]
        export: bool,
    },
}

fn parse_fusion(s: &str) -> anyhow::Result<Fusion> {
    match s {
        "adaptive" => Ok(Fusion::Adaptive),
        "fixed" => Ok(Fusion::EQUAL),
        other => anyhow::bail!("unknown fusion `{other}`; expected adaptive or fixed"),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let root = cli.output_root;
    match cli.command {
        Command::Generate { config, out, force } => {
            let cfg = RunConfig::load(&config)?;
            let out = output_dir(out, root, "data")?;
            let s = cmd_generate(&cfg, &out, force)?;
            println!(
                "wrote {} clips ({} identities, {} actions, {} clothing, {} views) to {}",
                s.clips,
                s.identities,
                s.actions,
                s.clothing,
                s.views,
                out.display()
            );
        }
        Command::Train { config, data, out, resume, workers } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.training.workers = w;
            }
            let out = output_dir(out, root.or(cfg.output_dir.clone()), "train")?;
            cmd_train(&cfg, &data, &out, resume.as_deref(), |r| println!("{}", serde_json::to_string(r).expect("record serializes")))?;
            println!("checkpoint written to {}", out.join(disenq::harness::CHECKPOINT_FILE).display());
        }
        Command::Evaluate { ckpt, data, protocols, fusion, plots, out } => {
            let fusion = fusion.as_deref().map(parse_fusion).transpose()?;
            let out = output_dir(out, root, "eval").or_else(|_| Ok::<_, anyhow::Error>(ckpt.parent().map(PathBuf::from).unwrap_or_default()))?;
            let outcome = cmd_evaluate(&ckpt, &data, protocols.as_deref(), fusion, plots, &out)?;
            for (p, why) in &outcome.skipped {
                eprintln!("warning: skipped {}: {why}", p.name());
            }
            for r in &outcome.reports {
                let fixed = r.breakdown_rank1(&Fusion::EQUAL.name()).unwrap_or(f64::NAN);
                println!(
                    "{} [{}] rank1={:.4} rank5={:.4} rank10={:.4} mAP={:.4} fixed-rank1={fixed:.4}",
                    r.protocol, r.scoring, r.rank1, r.rank5, r.rank10, r.map
                );
            }
        }
        Command::Diagnose { ckpt, data, out, export } => {
            let out = output_dir(out, root, "diagnose").or_else(|_| Ok::<_, anyhow::Error>(ckpt.parent().map(PathBuf::from).unwrap_or_default()))?;
            let r = cmd_diagnose(&ckpt, &data, &out, export)?;
            for m in &r.mutual_information {
                println!("MI {} = {:.4} nats", m.pair, m.lower_bound);
            }
            for p in &r.probes {
                println!("probe {} -> {}: {:.4} (chance {:.4})", p.feature, p.target, p.accuracy, p.chance);
            }
            println!("orthogonality mean|cos|={:.4} max|cos|={:.4}", r.orthogonality.mean_abs_cos, r.orthogonality.max_abs_cos);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
