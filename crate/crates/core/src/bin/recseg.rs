use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recseg::config::ExperimentConfig;
use recseg::experiment::run_experiment;
use recseg::simulate::make_phantom;
use recseg::{io, metrics, Error};

/// Joint MRI reconstruction and segmentation experiments.
#[derive(Parser)]
#[command(name = "recseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (or rerun a manifest.cfg).
    Run {
        config: PathBuf,
        /// Write into this directory instead of the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the phantom of a config file to `<out>.pgm` and `<out>_labels.pgm`.
    Phantom { spec: PathBuf, out: PathBuf },
    /// Score a reconstruction and a segmentation against ground truth.
    Metrics {
        recon: PathBuf,
        gt: PathBuf,
        seg: PathBuf,
        seg_gt: PathBuf,
    },
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    base.with_file_name(name)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(out) = out {
                cfg.output = out;
            }
            let rows = run_experiment(&cfg)?;
            for r in &rows {
                println!(
                    "{} rre={:.6} rse={:.6} iters={} stop={}",
                    r.method.name(),
                    r.rre,
                    r.rse,
                    r.outer_iters,
                    r.stop_reason
                );
            }
            println!("wrote {}", cfg.output.display());
        }
        Command::Phantom { spec, out } => {
            // the phantom keys live in an ordinary config; `method` may be omitted
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::Io { path: spec.clone(), source: e })?;
            let text = if text.lines().any(|l| l.trim_start().starts_with("method")) {
                text
            } else {
                format!("method = zero_fill\n{text}")
            };
            let cfg = ExperimentConfig::parse(&text)?;
            let p = make_phantom(&cfg.phantom)?;
            let img = with_suffix(&out, ".pgm");
            io::write_image(&img, &p.image)?;
            io::write_labels(&with_suffix(&out, "_labels.pgm"), &p.labels)?;
            println!("wrote {}", img.display());
        }
        Command::Metrics { recon, gt, seg, seg_gt } => {
            let m = metrics::evaluate(
                &io::read_image(&recon)?,
                &io::read_image(&gt)?,
                &io::read_labels(&seg)?,
                &io::read_labels(&seg_gt)?,
            )?;
            println!("rre,psnr_unsquared,psnr_standard,rse");
            println!("{},{},{},{}", m.rre, m.psnr_unsquared, m.psnr_standard, m.rse);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_failure() { 2 } else { 1 })
        }
    }
}
