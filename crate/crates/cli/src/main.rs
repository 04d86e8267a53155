mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hrne::data::SynthConfig;
use hrne::eval::Smoothing;

use commands::{CliError, CliResult, Report, SynthArgs};
use config::RawConfig;

/// Hierarchical recurrent video caption models.
#[derive(Parser, Debug)]
#[command(name = "hrne", version)]
struct Cli {
    /// Write `key: value` result lines to this file.
    #[arg(long, global = true)]
    report: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic segment-naming dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        num: usize,
        #[arg(long, default_value_t = 4)]
        segments: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        prototypes: usize,
        #[arg(long, default_value_t = 8)]
        segment_len: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Train a caption model and save the best checkpoint.
    Train(TrainArgs),
    /// Caption one feature file.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Score greedy captions against a manifest.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Add-one smoothing for orders above 1.
        #[arg(long)]
        smooth: bool,
    },
    /// Print input-to-output path lengths for a sequence of length T.
    Analyze {
        #[arg(long = "T")]
        t: usize,
        #[arg(long)]
        n: usize,
    },
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        frames: usize,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    manifest: Option<String>,
    #[arg(long)]
    val_manifest: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    embed: Option<String>,
    /// Chunk length.
    #[arg(long)]
    n: Option<String>,
    /// Chunk stride.
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    max_frames: Option<String>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainArgs {
    fn to_raw(&self) -> CliResult<RawConfig> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        let mut flags = RawConfig::default();
        let pairs = [
            ("data", &self.data),
            ("manifest", &self.manifest),
            ("val_manifest", &self.val_manifest),
            ("out", &self.out),
            ("variant", &self.variant),
            ("hidden", &self.hidden),
            ("embed", &self.embed),
            ("chunk_len", &self.n),
            ("stride", &self.s),
            ("seed", &self.seed),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("dropout", &self.dropout),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("max_frames", &self.max_frames),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                flags.set(key, v, "command line")?;
            }
        }
        for pair in &self.set {
            flags.set_pair(pair)?;
        }
        raw.merge(flags);
        Ok(raw)
    }
}

fn run(cli: &Cli, report: &mut Report) -> CliResult<()> {
    match &cli.command {
        Command::Synth {
            out,
            num,
            segments,
            dim,
            seed,
            prototypes,
            segment_len,
            noise,
        } => commands::synth(
            &SynthArgs {
                out: out.clone(),
                config: SynthConfig {
                    num_clips: *num,
                    segments: *segments,
                    segment_len: *segment_len,
                    dim: *dim,
                    prototypes: *prototypes,
                    noise: *noise,
                },
                seed: *seed,
            },
            report,
        ),
        Command::Train(args) => commands::train(&args.to_raw()?, report),
        Command::Generate { ckpt, features } => commands::generate(ckpt, features, report),
        Command::Evaluate {
            ckpt,
            data,
            manifest,
            smooth,
        } => {
            let smoothing = if *smooth { Smoothing::AddOne } else { Smoothing::None };
            commands::evaluate(ckpt, data, manifest, smoothing, report)
        }
        Command::Analyze { t, n } => commands::analyze(*t, *n, report),
        Command::Gradcheck { seed, frames } => {
            if *frames == 0 {
                return Err(CliError::Usage("--frames must be at least 1".into()));
            }
            commands::gradcheck(*seed, *frames, report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut report = Report::default();
    let result = run(&cli, &mut report);
    if let Some(path) = &cli.report {
        if let Err(e) = report.write(path) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
