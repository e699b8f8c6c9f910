use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lipwave::synthetic::ToyCorpusSpec;
use lipwave::Result;
use lipwave_cli::commands::{self, EvalSource};
use lipwave_cli::RunConfig;

/// Speech synthesis from silent mouth-region video.
#[derive(Parser)]
#[command(name = "lipwave", version)]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base preset: full, desk or smoke.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override one setting, e.g. `--set trainer.batch_size=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a raw corpus and write split lists.
    Prepare {
        #[arg(long, env = "LIPWAVE_RAW")]
        raw: PathBuf,
        #[arg(long, env = "LIPWAVE_DATA")]
        data: PathBuf,
    },
    /// Train on a prepared corpus.
    Train {
        #[arg(long, env = "LIPWAVE_DATA")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Generate a WAV from a preprocessed video file.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split and write `<report>.csv` and `<report>.json`.
    Evaluate {
        #[arg(long, env = "LIPWAVE_DATA")]
        data: PathBuf,
        #[arg(long, required_unless_present = "ground_truth")]
        checkpoint: Option<PathBuf>,
        /// Score the reference audio against itself.
        #[arg(long, conflicts_with = "checkpoint")]
        ground_truth: bool,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write a synthetic raw corpus for trying the pipeline.
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,29")]
        speakers: Vec<u8>,
        #[arg(long, default_value_t = 10)]
        clips: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 8000)]
        sample_rate: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    let config = || RunConfig::resolve(cli.run.preset.as_deref(), cli.run.config.as_deref(), &cli.run.overrides);
    match cli.command {
        Command::Prepare { raw, data } => {
            let split = commands::prepare(&config()?, &raw, &data)?;
            println!(
                "prepared {}: train {}, validation {}, test {}",
                data.display(),
                split.train.len(),
                split.validation.len(),
                split.test.len()
            );
        }
        Command::Train { data, out, resume } => {
            let summary = commands::train(&config()?, &data, &out, resume)?;
            let o = summary.outcome;
            println!(
                "trained {} epochs; best validation MCD {:.4} dB at epoch {}; wrote {}",
                o.epochs,
                o.best_val_mcd,
                o.best_epoch,
                summary.best_checkpoint.display()
            );
        }
        Command::Synthesize { checkpoint, video, out } => {
            let clip = commands::synthesize(&config()?, &checkpoint, &video, &out)?;
            println!("wrote {} ({} samples at {} Hz)", out.display(), clip.len(), clip.sample_rate);
        }
        Command::Evaluate { data, checkpoint, ground_truth, split, report } => {
            let source = match checkpoint {
                Some(path) if !ground_truth => EvalSource::Checkpoint(path),
                _ => EvalSource::GroundTruth,
            };
            let r = commands::evaluate(&config()?, &data, &split, &source, &report)?;
            println!("evaluated {} clips; mean MCD {:.4} dB", r.clips.len(), r.means.mcd_db.unwrap_or(f64::NAN));
        }
        Command::ToyCorpus { out, speakers, clips, frames, sample_rate, seed } => {
            let spec = ToyCorpusSpec { speakers, clips_per_speaker: clips, frames, sample_rate, seed };
            commands::toy_corpus(&out, &spec)?;
            println!("wrote toy corpus to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
