use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use hrne::data::{
    feature_path, load_clips, load_features, save_features, synth_generate, Manifest, ManifestRecord, SynthConfig,
};
use hrne::eval::Smoothing;
use hrne::model::{gradcheck_config, model_gradcheck};
use hrne::numerics::DEFAULT_FD_EPS;
use hrne::training::{train_with_callback, EvalClip, Example};
use hrne::vocab::build_vocab;
use hrne::{load_checkpoint, path_length, save_checkpoint, CaptionModel, Rng};

use crate::config::{ConfigError, RawConfig, RunConfig};

pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Usage(String),
    Runtime(hrne::Error),
    /// A check that ran to completion but did not pass.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(hrne::Error::Config(_)) => 2,
            CliError::Runtime(_) | CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::Usage(msg) | CliError::Failed(msg) => f.write_str(msg),
            CliError::Runtime(e) => e.fmt(f),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<hrne::Error> for CliError {
    fn from(e: hrne::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// `key: value` lines written to `--report`.
#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn put(&mut self, key: &str, value: impl fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text: String = self.lines.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
        fs::write(path, text).map_err(|e| CliError::Runtime(hrne::Error::io(path, e)))
    }
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub config: SynthConfig,
    pub seed: u64,
}

pub fn synth(args: &SynthArgs, report: &mut Report) -> CliResult<()> {
    let mut rng = Rng::new(args.seed);
    let dataset = synth_generate(&mut rng, &args.config)?;
    fs::create_dir_all(&args.out).map_err(|e| hrne::Error::io(&args.out, e))?;
    let mut manifest = Manifest::default();
    for (i, clip) in dataset.clips.iter().enumerate() {
        let id = format!("clip{i:04}");
        save_features(feature_path(&args.out, &id), &clip.features)?;
        manifest.records.push(ManifestRecord {
            id,
            caption: clip.caption.join(" "),
        });
    }
    let manifest_path = args.out.join("manifest.tsv");
    fs::write(&manifest_path, manifest.to_text()).map_err(|e| hrne::Error::io(&manifest_path, e))?;
    println!("wrote {} clips to {}", dataset.clips.len(), args.out.display());
    report.put("clips", dataset.clips.len());
    report.put("manifest", manifest_path.display());
    Ok(())
}

pub fn train(raw: &RawConfig, report: &mut Report) -> CliResult<()> {
    let cfg = RunConfig::from_raw(raw)?;
    let data = RunConfig::require(&cfg.data, "data")?;
    let manifest = RunConfig::require(&cfg.manifest, "manifest")?;
    let out = RunConfig::require(&cfg.out, "out")?;

    let clips = load_clips(&data, &Manifest::load(&manifest)?)?;
    if clips.is_empty() {
        return Err(CliError::Runtime(hrne::Error::Input(format!("{} lists no clips", manifest.display()))));
    }
    let corpus: Vec<Vec<String>> = clips.iter().flat_map(|c| c.captions.iter().cloned()).collect();
    let vocab = build_vocab(&corpus, cfg.min_count)?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    model_cfg.encoder.input_dim = cfg.input_dim.unwrap_or_else(|| clips[0].features.dim());
    let mut model = CaptionModel::new(model_cfg, cfg.train.seed)?;

    let mut examples = Vec::new();
    for clip in &clips {
        let frames = model.prepare_frames(&clip.features)?;
        for caption in &clip.captions {
            examples.push(Example {
                frames: frames.clone(),
                caption: vocab.encode_caption(caption),
            });
        }
    }
    let val = match &cfg.val_manifest {
        Some(path) => load_clips(&data, &Manifest::load(path)?)?
            .into_iter()
            .map(|c| {
                Ok(EvalClip {
                    frames: model.prepare_frames(&c.features)?,
                    references: c.captions,
                })
            })
            .collect::<hrne::Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    eprintln!(
        "training {} on {} captions, vocabulary {}",
        model.config().encoder.variant,
        examples.len(),
        vocab.len()
    );
    let outcome = train_with_callback(&mut model, &vocab, &examples, &val, &cfg.train, |rec| {
        let bleu = rec.val_bleu4.map_or_else(|| "-".to_string(), |b| format!("{b:.4}"));
        eprintln!(
            "epoch {:>3}  loss {:.4}  val bleu4 {}{}",
            rec.epoch,
            rec.train_loss,
            bleu,
            if rec.improved { "  *" } else { "" }
        );
    })?;
    save_checkpoint(&out, &outcome.best)?;

    let last = outcome.history.last().map_or(f64::NAN, |r| r.train_loss);
    println!(
        "saved epoch {} of {} to {} (final loss {last:.6})",
        outcome.best_epoch,
        outcome.history.len(),
        out.display()
    );
    report.put("epochs", outcome.history.len());
    report.put("best_epoch", outcome.best_epoch);
    report.put("updates", outcome.updates);
    report.put("stopped_early", outcome.stopped_early);
    report.put("final_loss", format!("{last:?}"));
    report.put("vocab_size", vocab.len());
    report.put("loss_curve", format!("{:?}", outcome.loss_curve()));
    Ok(())
}

pub fn generate(ckpt: &Path, features: &Path, report: &mut Report) -> CliResult<()> {
    let ckpt = load_checkpoint(ckpt)?;
    let model = ckpt.to_model()?;
    let frames = model.prepare_frames(&load_features(features)?)?;
    let caption = ckpt.vocab.decode(&model.generate(&frames)?)?.join(" ");
    println!("{caption}");
    report.put("caption", caption);
    Ok(())
}

pub fn evaluate(ckpt: &Path, data: &Path, manifest: &Path, smoothing: Smoothing, report: &mut Report) -> CliResult<()> {
    let ckpt = load_checkpoint(ckpt)?;
    let model = ckpt.to_model()?;
    let clips = load_clips(data, &Manifest::load(manifest)?)?
        .into_iter()
        .map(|c| {
            Ok(EvalClip {
                frames: model.prepare_frames(&c.features)?,
                references: c.captions,
            })
        })
        .collect::<hrne::Result<Vec<_>>>()?;
    let result = hrne::training::evaluate(&model, &ckpt.vocab, &clips, smoothing)?;
    for n in 1..=4 {
        let score = result.bleu.score(n);
        println!("BLEU@{n} {score:.4}");
        report.put(&format!("bleu{n}"), score);
    }
    println!("token accuracy {:.4}", result.token_accuracy);
    report.put("token_accuracy", result.token_accuracy);
    report.put("clips", clips.len());
    Ok(())
}

pub fn analyze(t: usize, n: usize, report: &mut Report) -> CliResult<()> {
    let (hrne, stacked) = path_length(t, n)?;
    println!("hrne={hrne} stacked={stacked}");
    report.put("hrne", hrne);
    report.put("stacked", stacked);
    Ok(())
}

pub fn gradcheck(seed: u64, frames: usize, report: &mut Report) -> CliResult<()> {
    let outcome = model_gradcheck(gradcheck_config(), seed, frames, DEFAULT_FD_EPS)?;
    let max = outcome.report.max_rel_error();
    let worst = outcome.report.worst().map_or("-", |(name, _)| name.as_str());
    let pass = outcome.report.passes(GRADCHECK_TOL);
    println!("tensors {}  max_rel_error {max:.3e}  worst {worst}", outcome.tensors);
    println!("{}", if pass { "PASS" } else { "FAIL" });
    report.put("tensors", outcome.tensors);
    report.put("max_rel_error", max);
    report.put("worst", worst);
    report.put("pass", pass);
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed(format!("max relative error {max:.3e} exceeds {GRADCHECK_TOL:e}")))
    }
}
