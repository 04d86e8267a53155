//! Optimization: boundary-only dropout, Adam, gradient clipping and the
//! mini-batch training loop with validation-based early stopping.

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{corpus_bleu, token_accuracy, BleuReport, Smoothing};
use crate::model::CaptionModel;
use crate::numerics::{Grads, ParamSet, Rng, Vector};
use crate::vocab::Vocabulary;

/// Places where a dropout mask may be applied. All of them sit on the input
/// or output side of an LSTM; none is on a recurrent `h`/`c` path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropoutSite {
    /// Embedded frames entering the first encoder LSTM.
    FrameEmbedding,
    /// Outputs of the first encoder layer entering the second.
    Layer1Output,
    /// States leaving the encoder.
    EncoderOutput,
    /// Word embeddings entering the decoder LSTM.
    WordEmbedding,
    /// Decoder hidden state entering the deep output layer.
    DecoderOutput,
}

impl DropoutSite {
    pub const ALL: [DropoutSite; 5] = [
        DropoutSite::FrameEmbedding,
        DropoutSite::Layer1Output,
        DropoutSite::EncoderOutput,
        DropoutSite::WordEmbedding,
        DropoutSite::DecoderOutput,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")))
    }
}

/// Inverted dropout: in train mode each coordinate is zeroed with
/// probability `rate` and survivors are scaled by `1/(1-rate)`.
pub fn dropout_apply(rng: &mut Rng, rate: f64, v: &[f64], mode: Mode) -> Result<Vector> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(v.to_vec());
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(v.iter().map(|&x| if rng.bernoulli(rate) { 0.0 } else { x * keep }).collect())
}

#[derive(Clone, Debug)]
enum MaskSource {
    Off,
    Random { rate: f64, rng: Rng },
    Zero,
}

/// Dropout state threaded through a forward pass. Every applied site is
/// logged so placement can be audited.
#[derive(Clone, Debug)]
pub struct Dropout {
    source: MaskSource,
    log: Vec<DropoutSite>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Dropout {
            source: MaskSource::Off,
            log: Vec::new(),
        }
    }

    pub fn train(rate: f64, rng: Rng) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout {
            source: MaskSource::Random { rate, rng },
            log: Vec::new(),
        })
    }

    /// Masks every coordinate at every site.
    pub fn zero_all() -> Self {
        Dropout {
            source: MaskSource::Zero,
            log: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        match self.source {
            MaskSource::Off => Mode::Infer,
            _ => Mode::Train,
        }
    }

    pub fn applied_sites(&self) -> &[DropoutSite] {
        &self.log
    }

    /// Masks `v` in place and returns the multiplicative mask, or `None` when
    /// the mask is the identity.
    pub fn apply(&mut self, site: DropoutSite, v: &mut Vector) -> Option<Vector> {
        let mask: Vector = match &mut self.source {
            MaskSource::Off => return None,
            MaskSource::Random { rate, .. } if *rate == 0.0 => {
                self.log.push(site);
                return None;
            }
            MaskSource::Random { rate, rng } => {
                let keep = 1.0 / (1.0 - *rate);
                v.iter().map(|_| if rng.bernoulli(*rate) { 0.0 } else { keep }).collect()
            }
            MaskSource::Zero => vec![0.0; v.len()],
        };
        self.log.push(site);
        v.iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
        Some(mask)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Grads,
    v: Grads,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        AdamState {
            config,
            m: params.zero_grad_buffer(),
            v: params.zero_grad_buffer(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet, grads: &Grads) -> Result<()> {
    if grads.iter().count() != params.len() {
        return Err(Error::shape("adam_step", format!("{} gradient tensors", params.len()), grads.iter().count()));
    }
    for (id, g) in grads.iter() {
        let t = params.tensor(id);
        if g.shape() != t.value.shape() {
            return Err(Error::shape("adam_step", format!("{} of shape {:?}", t.name, t.value.shape()), format!("{:?}", g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in tensor {}", t.name)));
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (id, g) in grads.iter() {
        let m = state.m.get_mut(id).data_mut();
        let v = state.v.get_mut(id).data_mut();
        let w = params.value_mut(id).data_mut();
        for k in 0..w.len() {
            let gk = g.data()[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
            v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
            w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub bleu_smoothing: Smoothing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 200,
            dropout: 0.5,
            patience: 10,
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            bleu_smoothing: Smoothing::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate(self.dropout)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// A training pair: frames and a BOS/EOS-wrapped caption.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub frames: Vec<Vector>,
    pub caption: Vec<usize>,
}

/// A clip scored against one or more tokenized references.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalClip {
    pub frames: Vec<Vector>,
    pub references: Vec<Vec<String>>,
}

/// Mean loss and mean gradient over `batch`. Example gradients are computed
/// in parallel and summed in batch order, so the result does not depend on
/// thread scheduling.
pub fn batch_gradient(model: &CaptionModel, batch: &[&Example], dropouts: Vec<Dropout>) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    if dropouts.len() != batch.len() {
        return Err(Error::shape("batch_gradient", batch.len(), dropouts.len()));
    }
    const CHUNK: usize = 32;
    let mut total = model.params().zero_grad_buffer();
    let mut loss = 0.0;
    let mut work: Vec<(&Example, Dropout)> = batch.iter().copied().zip(dropouts).collect();
    for group in work.chunks_mut(CHUNK) {
        let results: Vec<Result<crate::model::ExampleGrad>> = group
            .par_iter_mut()
            .map(|(ex, dropout)| model.loss_and_grads(&ex.frames, &ex.caption, dropout))
            .collect();
        for r in results {
            let r = r?;
            loss += r.loss;
            total.add_assign(&r.grads);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub bleu: BleuReport,
    /// Mean positional accuracy against each clip's first reference.
    pub token_accuracy: f64,
    pub hypotheses: Vec<Vec<String>>,
}

/// Greedy-decodes every clip and scores the captions.
pub fn evaluate(model: &CaptionModel, vocab: &Vocabulary, clips: &[EvalClip], smoothing: Smoothing) -> Result<Evaluation> {
    if clips.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let hypotheses: Vec<Vec<String>> = clips
        .par_iter()
        .map(|c| vocab.decode(&model.generate(&c.frames)?))
        .collect::<Result<_>>()?;
    let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = hypotheses
        .iter()
        .zip(clips)
        .map(|(h, c)| (h.clone(), c.references.clone()))
        .collect();
    let bleu = corpus_bleu(&pairs, smoothing)?;
    let acc = hypotheses
        .iter()
        .zip(clips)
        .map(|(h, c)| c.references.first().map_or(0.0, |r| token_accuracy(h, r)))
        .sum::<f64>()
        / clips.len() as f64;
    Ok(Evaluation {
        bleu,
        token_accuracy: acc,
        hypotheses,
    })
}

fn validation_nll(model: &CaptionModel, vocab: &Vocabulary, clips: &[EvalClip]) -> Result<f64> {
    let losses: Vec<f64> = clips
        .par_iter()
        .map(|c| match c.references.first() {
            Some(r) => model.loss(&c.frames, &vocab.encode_caption(r)),
            None => Ok(0.0),
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / clips.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub batch_losses: Vec<f64>,
    pub train_loss: f64,
    pub val_bleu4: Option<f64>,
    pub val_nll: Option<f64>,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best: Checkpoint,
    pub updates: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// Every batch loss in update order.
    pub fn loss_curve(&self) -> Vec<f64> {
        self.history.iter().flat_map(|e| e.batch_losses.iter().copied()).collect()
    }
}

pub fn train(model: &mut CaptionModel, vocab: &Vocabulary, data: &[Example], val: &[EvalClip], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(model, vocab, data, val, cfg, |_| {})
}

/// Runs the training loop. Validation improvement means a higher corpus
/// BLEU@4, or an equal BLEU@4 with a lower validation NLL. Without a
/// validation set every epoch counts as an improvement. On return `model`
/// holds the best parameters.
pub fn train_with_callback<F: FnMut(&EpochRecord)>(
    model: &mut CaptionModel,
    vocab: &Vocabulary,
    data: &[Example],
    val: &[EvalClip],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if vocab.len() != model.config().vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let base = Rng::new(cfg.seed);
    let mut adam = AdamState::new(cfg.adam, model.params());
    let mut history = Vec::new();
    let mut best_params = model.params().clone();
    let mut best_epoch = 0;
    let mut best_score: Option<(f64, f64)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        base.derive(u64::MAX - epoch as u64).shuffle(&mut order);
        let mut batch_losses = Vec::with_capacity(data.len().div_ceil(cfg.batch_size));
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
            let dropouts = idx
                .iter()
                .map(|&i| {
                    if cfg.dropout > 0.0 {
                        Dropout::train(cfg.dropout, base.derive(((epoch as u64) << 32) | i as u64))
                    } else {
                        Ok(Dropout::disabled())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, mut grads) = batch_gradient(model, &batch, dropouts)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged to {loss} at epoch {epoch}, batch {b} (examples {idx:?})"
                )));
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adam_step(&mut adam, model.params_mut(), &grads)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            batch_losses.push(loss);
        }
        let train_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;

        let (val_bleu4, val_nll, improved) = if val.is_empty() {
            (None, None, true)
        } else {
            let bleu = evaluate(model, vocab, val, cfg.bleu_smoothing)?.bleu.score(4);
            let nll = validation_nll(model, vocab, val)?;
            let better = match best_score {
                None => true,
                Some((b, n)) => bleu > b || (bleu == b && nll < n),
            };
            if better {
                best_score = Some((bleu, nll));
            }
            (Some(bleu), Some(nll), better)
        };
        if improved {
            best_params = model.params().clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            batch_losses,
            train_loss,
            val_bleu4,
            val_nll,
            improved,
        };
        on_epoch(&record);
        history.push(record);
        if stale >= cfg.patience.max(1) && epoch < cfg.max_epochs {
            stopped_early = true;
            break;
        }
    }

    model.set_params(best_params)?;
    Ok(TrainOutcome {
        best: Checkpoint::from_model(model, vocab)?,
        updates: adam.steps() as usize,
        history,
        best_epoch,
        stopped_early,
    })
}
