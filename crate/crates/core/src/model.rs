//! The full captioning model: encoder and decoder sharing one parameter set.

use crate::data::{pad_truncate, FeatureSequence};
use crate::decoder::{greedy_decode, sequence_nll_backward, sequence_nll_traced, DecoderConfig, DecoderParams, DEFAULT_MAX_LEN};
use crate::encoder::{encode, encode_backward, AttentionFlags, EncoderConfig, EncoderParams, EncoderTrace, EncoderVariant, VideoVector};
use crate::error::{Error, Result};
use crate::numerics::{Grads, ParamSet, Rng, Vector};
use crate::recurrent::InitConfig;
use crate::training::Dropout;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub vocab_size: usize,
    pub word_embed: usize,
    pub dec_hidden: usize,
    pub deep_dim: usize,
    pub init: InitConfig,
    pub max_len: usize,
    /// Frames each clip is padded or truncated to before encoding; 0 keeps
    /// clips at their own length.
    pub max_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            vocab_size: 12_976,
            word_embed: 512,
            dec_hidden: 1024,
            deep_dim: 512,
            init: InitConfig::default(),
            max_len: DEFAULT_MAX_LEN,
            max_frames: crate::data::DEFAULT_FRAMES,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Malformed(format!("config key {key}: cannot parse {value:?}")))
}

impl ModelConfig {
    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            vocab_size: self.vocab_size,
            word_embed: self.word_embed,
            hidden: self.dec_hidden,
            deep_dim: self.deep_dim,
            context_dim: self.encoder.output_dim(),
            attention: self.encoder.attention.decoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder().validate()?;
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if !(self.init.scale > 0.0 && self.init.scale.is_finite() && self.init.forget_bias.is_finite()) {
            return Err(Error::Config("initialization scale must be positive and finite".into()));
        }
        Ok(())
    }

    /// Serialized as `key=value` lines in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let e = &self.encoder;
        vec![
            ("variant", e.variant.to_string()),
            ("chunk_len", e.chunk_len.to_string()),
            ("stride", e.stride.to_string()),
            ("input_dim", e.input_dim.to_string()),
            ("embed_dim", e.embed_dim.to_string()),
            ("hidden1", e.hidden1.to_string()),
            ("hidden2", e.hidden2.to_string()),
            ("levels", e.levels.to_string()),
            ("att_frames", e.attention.frames.to_string()),
            ("att_chunks", e.attention.chunks.to_string()),
            ("att_decoder", e.attention.decoder.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("word_embed", self.word_embed.to_string()),
            ("dec_hidden", self.dec_hidden.to_string()),
            ("deep_dim", self.deep_dim.to_string()),
            ("init_scale", format!("{:?}", self.init.scale)),
            ("forget_bias", format!("{:?}", self.init.forget_bias)),
            ("max_len", self.max_len.to_string()),
            ("max_frames", self.max_frames.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("config line without '=': {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let e = &mut cfg.encoder;
            match key {
                "variant" => e.variant = value.parse::<EncoderVariant>().map_err(|_| Error::Malformed(format!("unknown variant {value:?}")))?,
                "chunk_len" => e.chunk_len = parse(key, value)?,
                "stride" => e.stride = parse(key, value)?,
                "input_dim" => e.input_dim = parse(key, value)?,
                "embed_dim" => e.embed_dim = parse(key, value)?,
                "hidden1" => e.hidden1 = parse(key, value)?,
                "hidden2" => e.hidden2 = parse(key, value)?,
                "levels" => e.levels = parse(key, value)?,
                "att_frames" => e.attention.frames = parse(key, value)?,
                "att_chunks" => e.attention.chunks = parse(key, value)?,
                "att_decoder" => e.attention.decoder = parse(key, value)?,
                "vocab_size" => cfg.vocab_size = parse(key, value)?,
                "word_embed" => cfg.word_embed = parse(key, value)?,
                "dec_hidden" => cfg.dec_hidden = parse(key, value)?,
                "deep_dim" => cfg.deep_dim = parse(key, value)?,
                "init_scale" => cfg.init.scale = parse(key, value)?,
                "forget_bias" => cfg.init.forget_bias = parse(key, value)?,
                "max_len" => cfg.max_len = parse(key, value)?,
                "max_frames" => cfg.max_frames = parse(key, value)?,
                other => return Err(Error::Malformed(format!("unknown config key {other:?}"))),
            }
            seen.push(key.to_string());
        }
        for (key, _) in cfg.to_pairs() {
            if !seen.iter().any(|s| s == key) {
                return Err(Error::Malformed(format!("config block is missing {key}")));
            }
        }
        cfg.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(cfg)
    }
}

/// Loss and gradient of one example.
#[derive(Clone, Debug)]
pub struct ExampleGrad {
    pub loss: f64,
    pub clamped: bool,
    pub grads: Grads,
}

#[derive(Clone, Debug)]
pub struct CaptionModel {
    config: ModelConfig,
    params: ParamSet,
    encoder: EncoderParams,
    decoder: DecoderParams,
}

impl CaptionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut params = ParamSet::new();
        let encoder = EncoderParams::register(&mut params, &config.encoder, config.init, &mut rng)?;
        let decoder = DecoderParams::register(&mut params, &config.decoder(), config.init, &mut rng)?;
        Ok(CaptionModel {
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Replaces every parameter value. `params` must have this model's layout.
    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        let same = params.len() == self.params.len()
            && params
                .tensors()
                .iter()
                .zip(self.params.tensors())
                .all(|(a, b)| a.name == b.name && a.dims == b.dims);
        if !same {
            return Err(Error::Config("parameter set does not match the model layout".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn decoder_params(&self) -> &DecoderParams {
        &self.decoder
    }

    /// Applies the configured padding/truncation and checks the feature dimension.
    pub fn prepare_frames(&self, seq: &FeatureSequence) -> Result<Vec<Vector>> {
        if seq.dim() != self.config.encoder.input_dim {
            return Err(Error::Input(format!(
                "features have dimension {}, model expects {}",
                seq.dim(),
                self.config.encoder.input_dim
            )));
        }
        Ok(match self.config.max_frames {
            0 => seq.frames().to_vec(),
            len => pad_truncate(seq, len).into_frames(),
        })
    }

    pub fn encode(&self, frames: &[Vector]) -> Result<VideoVector> {
        Ok(encode(&self.params, &self.encoder, &self.config.encoder, frames, &mut Dropout::disabled())?.0)
    }

    pub fn encode_traced(&self, frames: &[Vector], dropout: &mut Dropout) -> Result<(VideoVector, EncoderTrace)> {
        encode(&self.params, &self.encoder, &self.config.encoder, frames, dropout)
    }

    /// Teacher-forced caption NLL with dropout off.
    pub fn loss(&self, frames: &[Vector], caption: &[usize]) -> Result<f64> {
        let video = self.encode(frames)?;
        crate::decoder::sequence_nll(&self.params, &self.decoder, &video, caption)
    }

    pub fn loss_and_grads(&self, frames: &[Vector], caption: &[usize], dropout: &mut Dropout) -> Result<ExampleGrad> {
        let (video, enc_trace) = self.encode_traced(frames, dropout)?;
        let trace = sequence_nll_traced(&self.params, &self.decoder, &video, caption, dropout)?;
        let mut grads = self.params.zero_grad_buffer();
        let (dv, d_states) = sequence_nll_backward(&self.params, &self.decoder, &video, &trace, 1.0, &mut grads);
        encode_backward(&self.params, &self.encoder, &self.config.encoder, &enc_trace, &dv, &d_states, &mut grads);
        Ok(ExampleGrad {
            loss: trace.loss,
            clamped: trace.clamped,
            grads,
        })
    }

    pub fn generate(&self, frames: &[Vector]) -> Result<Vec<usize>> {
        self.generate_with(frames, self.config.max_len)
    }

    pub fn generate_with(&self, frames: &[Vector], max_len: usize) -> Result<Vec<usize>> {
        let video = self.encode(frames)?;
        greedy_decode(&self.params, &self.decoder, &video, max_len)
    }
}

/// Small configuration used by gradient checks: every attention position on.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            chunk_len: 4,
            stride: 4,
            input_dim: 5,
            embed_dim: 4,
            hidden1: 6,
            hidden2: 6,
            attention: AttentionFlags::ALL,
            variant: EncoderVariant::Hrne,
            levels: 2,
        },
        vocab_size: 11,
        word_embed: 4,
        dec_hidden: 6,
        deep_dim: 5,
        init: InitConfig { scale: 1.5, forget_bias: 1.0 },
        max_len: DEFAULT_MAX_LEN,
        max_frames: 0,
    }
}

/// Outcome of comparing the model's analytic loss gradient with central
/// finite differences on one random clip and caption.
#[derive(Clone, Debug)]
pub struct GradCheckOutcome {
    pub report: crate::numerics::GradCheckReport,
    pub tensors: usize,
}

pub fn model_gradcheck(config: ModelConfig, seed: u64, frames: usize, eps: f64) -> Result<GradCheckOutcome> {
    let mut model = CaptionModel::new(config, seed)?;
    let mut rng = Rng::new(seed).derive(1);
    let d = model.config.encoder.input_dim;
    let xs: Vec<Vector> = (0..frames).map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    let v = model.config.vocab_size;
    let mut caption = vec![crate::vocab::BOS];
    caption.extend((0..5).map(|_| crate::vocab::UNK + 1 + rng.below(v - crate::vocab::UNK - 1)));
    caption.push(crate::vocab::EOS);

    let analytic = model.loss_and_grads(&xs, &caption, &mut Dropout::disabled())?.grads;
    let (encoder, decoder, ecfg) = (model.encoder.clone(), model.decoder.clone(), model.config.encoder.clone());
    let numeric = crate::numerics::finite_diff_grad(
        |set| {
            let (video, _) = encode(set, &encoder, &ecfg, &xs, &mut Dropout::disabled()).expect("encode");
            sequence_nll_traced(set, &decoder, &video, &caption, &mut Dropout::disabled()).expect("nll").loss
        },
        &mut model.params,
        eps,
    )?;
    Ok(GradCheckOutcome {
        report: crate::numerics::GradCheckReport::compare(&model.params, &analytic, &numeric),
        tensors: model.params.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DEFAULT_FD_EPS;

    #[test]
    fn config_text_round_trip() {
        let cfg = gradcheck_config();
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let d = ModelConfig::default();
        assert_eq!(ModelConfig::from_text(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn config_text_errors() {
        let text = gradcheck_config().to_text();
        assert!(ModelConfig::from_text(&format!("{text}bogus=1\n")).is_err());
        let missing: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(ModelConfig::from_text(&missing).is_err());
        assert!(ModelConfig::from_text(&text.replace("hidden1=6", "hidden1=six")).is_err());
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let outcome = model_gradcheck(gradcheck_config(), 7, 12, DEFAULT_FD_EPS).unwrap();
        assert!(outcome.report.passes(1e-4), "{:?}", outcome.report.worst());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = CaptionModel::new(gradcheck_config(), 3).unwrap();
        let b = CaptionModel::new(gradcheck_config(), 3).unwrap();
        let c = CaptionModel::new(gradcheck_config(), 4).unwrap();
        let values = |m: &CaptionModel| m.params().tensors().iter().map(|t| t.value.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(values(&a), values(&b));
        assert_ne!(values(&a), values(&c));
    }
}
