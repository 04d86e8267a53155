//! Video encoders: the two-level hierarchical encoder, the stacked-LSTM and
//! mean-pool baselines, and the input-to-output path length analysis.
//!
//! The hierarchical encoder embeds each frame linearly, cuts the frame
//! sequence into windows of `chunk_len` frames spaced `stride` apart, runs a
//! shared LSTM filter over every window and mean-pools its hidden states into
//! one vector per window. A second LSTM runs over the window vectors; its
//! last hidden state is the video vector and all of its states are kept for
//! decoder-side attention.

use std::fmt;
use std::str::FromStr;

use crate::attention::{attend, attend_backward, AttendedSet, AttentionCache, AttentionParams};
use crate::error::{Error, Result};
use crate::numerics::{add_into, axpy, hadamard, param_init, Grads, Matrix, ParamId, ParamSet, Rng, Vector};
use crate::recurrent::{lstm_backward, lstm_forward, lstm_step_backward, lstm_step_cached, InitConfig, LstmParams, LstmState, LstmStepCache};
use crate::training::{Dropout, DropoutSite};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderVariant {
    Hrne,
    Stacked,
    MeanPool,
}

impl fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderVariant::Hrne => "hrne",
            EncoderVariant::Stacked => "stacked",
            EncoderVariant::MeanPool => "meanpool",
        })
    }
}

impl FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hrne" => Ok(EncoderVariant::Hrne),
            "stacked" => Ok(EncoderVariant::Stacked),
            "meanpool" => Ok(EncoderVariant::MeanPool),
            other => Err(Error::Config(format!(
                "unknown encoder variant {other:?} (expected hrne, stacked or meanpool)"
            ))),
        }
    }
}

/// Which of the three attention insertion points are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttentionFlags {
    /// Between the frame embeddings and the LSTM filter.
    pub frames: bool,
    /// Between the filter outputs and the second LSTM layer.
    pub chunks: bool,
    /// Between the encoder states and the caption decoder.
    pub decoder: bool,
}

impl AttentionFlags {
    pub const ALL: AttentionFlags = AttentionFlags {
        frames: true,
        chunks: true,
        decoder: true,
    };
    pub const NONE: AttentionFlags = AttentionFlags {
        frames: false,
        chunks: false,
        decoder: false,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub chunk_len: usize,
    pub stride: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub attention: AttentionFlags,
    pub variant: EncoderVariant,
    /// Hierarchy depth; only 2 is supported.
    pub levels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            chunk_len: 8,
            stride: 8,
            input_dim: 1024,
            embed_dim: 512,
            hidden1: 1024,
            hidden2: 1024,
            attention: AttentionFlags::NONE,
            variant: EncoderVariant::Hrne,
            levels: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("chunk_len", self.chunk_len),
            ("stride", self.stride),
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.levels != 2 {
            return Err(Error::Config(format!(
                "only two-level hierarchies are supported, got levels = {}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Dimension of the video vector and of every state exposed to the decoder.
    pub fn output_dim(&self) -> usize {
        match self.variant {
            EncoderVariant::Hrne | EncoderVariant::Stacked => self.hidden2,
            EncoderVariant::MeanPool => self.embed_dim,
        }
    }
}

/// Frame windows of fixed length; absent frames are zero and flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkSet {
    pub chunks: Vec<Vec<Vector>>,
    /// `true` marks a padded position.
    pub pad_mask: Vec<Vec<bool>>,
    pub starts: Vec<usize>,
}

impl ChunkSet {
    pub fn count(&self) -> usize {
        self.chunks.len()
    }
}

/// `(start, real frame count)` of every window. Windows begin at 0, s, 2s,
/// ... and stop once one reaches the end of the sequence.
fn chunk_windows(len: usize, n: usize, s: usize) -> Vec<(usize, usize)> {
    let mut windows = Vec::new();
    let mut start = 0;
    while start < len {
        windows.push((start, n.min(len - start)));
        if start + n >= len {
            break;
        }
        start += s;
    }
    windows
}

pub fn chunk_sequence(xs: &[Vector], n: usize, s: usize) -> Result<ChunkSet> {
    if xs.is_empty() {
        return Err(Error::Input("cannot chunk an empty sequence".into()));
    }
    if n == 0 || s == 0 {
        return Err(Error::Config("chunk length and stride must be at least 1".into()));
    }
    let dim = xs[0].len();
    let mut set = ChunkSet {
        chunks: Vec::new(),
        pad_mask: Vec::new(),
        starts: Vec::new(),
    };
    for (start, real) in chunk_windows(xs.len(), n, s) {
        let mut chunk = xs[start..start + real].to_vec();
        chunk.resize(n, vec![0.0; dim]);
        set.chunks.push(chunk);
        set.pad_mask.push((0..n).map(|k| k >= real).collect());
        set.starts.push(start);
    }
    Ok(set)
}

/// `(hrne_steps, stacked_steps)`: cells an input at t = 1 crosses before
/// reaching the encoder output.
pub fn path_length(t: usize, n: usize) -> Result<(usize, usize)> {
    if n == 0 || t == 0 {
        return Err(Error::Config("T and n must be at least 1".into()));
    }
    if n > t {
        return Err(Error::Config(format!("chunk length n = {n} exceeds sequence length T = {t}")));
    }
    Ok((n + t.div_ceil(n), t + 1))
}

/// Encoder parameter handles. Tensors that a variant does not use are absent.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embed: ParamId,
    pub layer1: Option<LstmParams>,
    pub layer2: Option<LstmParams>,
    pub att_frames: Option<AttentionParams>,
    pub att_chunks: Option<AttentionParams>,
}

impl EncoderParams {
    pub fn register(set: &mut ParamSet, cfg: &EncoderConfig, init: InitConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let embed = set.add_matrix("enc.embed.W", param_init(rng, cfg.embed_dim, cfg.input_dim, init.scale)?)?;
        let mut params = EncoderParams {
            embed,
            layer1: None,
            layer2: None,
            att_frames: None,
            att_chunks: None,
        };
        match cfg.variant {
            EncoderVariant::Hrne => {
                if cfg.attention.frames {
                    params.att_frames = Some(AttentionParams::register(
                        set,
                        "enc.att_frames",
                        cfg.embed_dim,
                        cfg.hidden1,
                        cfg.embed_dim,
                        init.scale,
                        rng,
                    )?);
                }
                params.layer1 = Some(LstmParams::register(set, "enc.filter", cfg.embed_dim, cfg.hidden1, init, rng)?);
                if cfg.attention.chunks {
                    params.att_chunks = Some(AttentionParams::register(
                        set,
                        "enc.att_chunks",
                        cfg.hidden1,
                        cfg.hidden2,
                        cfg.hidden1,
                        init.scale,
                        rng,
                    )?);
                }
                params.layer2 = Some(LstmParams::register(set, "enc.layer2", cfg.hidden1, cfg.hidden2, init, rng)?);
            }
            EncoderVariant::Stacked => {
                params.layer1 = Some(LstmParams::register(set, "enc.layer1", cfg.embed_dim, cfg.hidden1, init, rng)?);
                params.layer2 = Some(LstmParams::register(set, "enc.layer2", cfg.hidden1, cfg.hidden2, init, rng)?);
            }
            EncoderVariant::MeanPool => {}
        }
        Ok(params)
    }
}

/// Encoder output: the video vector plus the per-step states a decoder may
/// attend over.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoVector {
    pub v: Vector,
    pub layer2_states: Vec<Vector>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CellCounts {
    pub layer1: usize,
    pub layer2: usize,
}

/// An LSTM pass whose inputs are either given directly or blended from an
/// attended set at each step, queried by the previous hidden state.
#[derive(Clone, Debug)]
struct LayerRun {
    steps: Vec<LstmStepCache>,
    attention: Option<(AttendedSet, Vec<AttentionCache>)>,
}

impl LayerRun {
    fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].state.h
    }

    fn forward(set: &ParamSet, lstm: &LstmParams, att: Option<&AttentionParams>, inputs: &[Vector], num_steps: usize) -> Result<Self> {
        let init = LstmState::zeros(lstm.hidden_dim);
        match att {
            None => {
                let (_, tape) = lstm_forward(set, lstm, inputs, &init)?;
                Ok(LayerRun {
                    steps: tape.steps,
                    attention: None,
                })
            }
            Some(ap) => {
                let attended = AttendedSet::new(set, ap, inputs.to_vec())?;
                let mut steps = Vec::with_capacity(num_steps);
                let mut caches = Vec::with_capacity(num_steps);
                let mut prev = init;
                for _ in 0..num_steps {
                    let cache = attend(set, ap, &attended, &prev.h)?;
                    let step = lstm_step_cached(set, lstm, &cache.context, &prev)?;
                    prev = step.state.clone();
                    steps.push(step);
                    caches.push(cache);
                }
                Ok(LayerRun {
                    steps,
                    attention: Some((attended, caches)),
                })
            }
        }
    }

    /// Returns gradients on `inputs` given gradients on every hidden state.
    fn backward(&self, set: &ParamSet, lstm: &LstmParams, att: Option<&AttentionParams>, dhs: &[Vector], grads: &mut Grads) -> Vec<Vector> {
        match (&self.attention, att) {
            (Some((attended, caches)), Some(ap)) => {
                let mut acc = attended.grad_accumulator();
                let mut dh_next = vec![0.0; lstm.hidden_dim];
                let mut dc_next = vec![0.0; lstm.hidden_dim];
                for t in (0..self.steps.len()).rev() {
                    let mut dh = dhs[t].clone();
                    add_into(&dh_next, &mut dh);
                    let (dctx, mut dh_prev, dc_prev) = lstm_step_backward(set, lstm, &self.steps[t], &dh, &dc_next, grads);
                    let dq = attend_backward(set, ap, attended, &caches[t], &dctx, grads, &mut acc);
                    add_into(&dq, &mut dh_prev);
                    dh_next = dh_prev;
                    dc_next = dc_prev;
                }
                attended.finish_backward(set, ap, acc, grads)
            }
            _ => {
                let tape = crate::recurrent::LstmTape {
                    steps: self.steps.clone(),
                };
                lstm_backward(set, lstm, &tape, dhs, grads).0
            }
        }
    }
}

#[derive(Clone, Debug)]
struct FilterRun {
    run: LayerRun,
    real: usize,
}

#[derive(Clone, Debug)]
enum Trace {
    Hrne {
        windows: Vec<(usize, usize)>,
        filters: Vec<FilterRun>,
        chunk_mask: Vec<Option<Vector>>,
        layer2: LayerRun,
    },
    Stacked {
        layer1: LayerRun,
        mid_mask: Vec<Option<Vector>>,
        layer2: LayerRun,
    },
    MeanPool,
}

/// Forward record of one encoding, sufficient for the exact backward.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    frames: Vec<Vector>,
    frame_mask: Vec<Option<Vector>>,
    out_mask: Vec<Option<Vector>>,
    trace: Trace,
    pub cells: CellCounts,
}

fn apply_masks(dropout: &mut Dropout, site: DropoutSite, vs: &mut [Vector]) -> Vec<Option<Vector>> {
    vs.iter_mut().map(|v| dropout.apply(site, v)).collect()
}

fn unmask(masks: &[Option<Vector>], ds: &mut [Vector]) {
    for (m, d) in masks.iter().zip(ds.iter_mut()) {
        if let Some(m) = m {
            *d = hadamard(d, m);
        }
    }
}

fn check_frames(cfg: &EncoderConfig, xs: &[Vector]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Input("empty feature sequence".into()));
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != cfg.input_dim) {
        return Err(Error::shape("encode", format!("frames of dimension {}", cfg.input_dim), format!("dimension {}", bad.len())));
    }
    Ok(())
}

fn expect_variant(cfg: &EncoderConfig, want: EncoderVariant) -> Result<()> {
    if cfg.variant == want {
        Ok(())
    } else {
        Err(Error::Config(format!("encoder configured as {}, not {want}", cfg.variant)))
    }
}

fn layer(p: &Option<LstmParams>) -> &LstmParams {
    p.as_ref().expect("encoder variant registers this layer")
}

/// Mean of the filter's hidden states over the real (unpadded) steps of a
/// chunk. The filter always runs all `n` steps.
pub fn lstm_filter_chunk(
    set: &ParamSet,
    filter: &LstmParams,
    att: Option<&AttentionParams>,
    chunk: &[Vector],
    pad_mask: &[bool],
) -> Result<Vector> {
    let real = pad_mask.iter().take_while(|p| !**p).count();
    if real == 0 {
        return Err(Error::Input("chunk contains only padding".into()));
    }
    Ok(filter_forward(set, filter, att, chunk, real)?.1)
}

fn filter_forward(set: &ParamSet, filter: &LstmParams, att: Option<&AttentionParams>, chunk: &[Vector], real: usize) -> Result<(FilterRun, Vector)> {
    let inputs = if att.is_some() { &chunk[..real] } else { chunk };
    let run = LayerRun::forward(set, filter, att, inputs, chunk.len())?;
    let mut mean = vec![0.0; filter.hidden_dim];
    for t in 0..real {
        axpy(1.0 / real as f64, run.hidden(t), &mut mean);
    }
    Ok((FilterRun { run, real }, mean))
}

/// Runs the configured encoder on a frame sequence.
pub fn encode(
    set: &ParamSet,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    xs: &[Vector],
    dropout: &mut Dropout,
) -> Result<(VideoVector, EncoderTrace)> {
    check_frames(cfg, xs)?;
    let w_embed = set.value(params.embed);
    let mut embedded: Vec<Vector> = xs.iter().map(|x| w_embed.matvec(x)).collect();

    let mut cells = CellCounts::default();
    let (mut states, frame_mask, trace) = match cfg.variant {
        EncoderVariant::Hrne => {
            let frame_mask = apply_masks(dropout, DropoutSite::FrameEmbedding, &mut embedded);
            let filter = layer(&params.layer1);
            let windows = chunk_windows(embedded.len(), cfg.chunk_len, cfg.stride);
            let mut filters = Vec::with_capacity(windows.len());
            let mut chunk_vectors = Vec::with_capacity(windows.len());
            for &(start, real) in &windows {
                let mut chunk = embedded[start..start + real].to_vec();
                chunk.resize(cfg.chunk_len, vec![0.0; cfg.embed_dim]);
                let (run, mean) = filter_forward(set, filter, params.att_frames.as_ref(), &chunk, real)?;
                cells.layer1 += run.run.steps.len();
                filters.push(run);
                chunk_vectors.push(mean);
            }
            let chunk_mask = apply_masks(dropout, DropoutSite::Layer1Output, &mut chunk_vectors);
            let l2 = layer(&params.layer2);
            let run2 = LayerRun::forward(set, l2, params.att_chunks.as_ref(), &chunk_vectors, chunk_vectors.len())?;
            cells.layer2 += run2.steps.len();
            let states = run2.steps.iter().map(|s| s.state.h.clone()).collect();
            (
                states,
                frame_mask,
                Trace::Hrne {
                    windows,
                    filters,
                    chunk_mask,
                    layer2: run2,
                },
            )
        }
        EncoderVariant::Stacked => {
            let frame_mask = apply_masks(dropout, DropoutSite::FrameEmbedding, &mut embedded);
            let l1 = layer(&params.layer1);
            let run1 = LayerRun::forward(set, l1, None, &embedded, embedded.len())?;
            let mut mid: Vec<Vector> = run1.steps.iter().map(|s| s.state.h.clone()).collect();
            let mid_mask = apply_masks(dropout, DropoutSite::Layer1Output, &mut mid);
            let l2 = layer(&params.layer2);
            let run2 = LayerRun::forward(set, l2, None, &mid, mid.len())?;
            cells.layer1 += run1.steps.len();
            cells.layer2 += run2.steps.len();
            let states = run2.steps.iter().map(|s| s.state.h.clone()).collect();
            (
                states,
                frame_mask,
                Trace::Stacked {
                    layer1: run1,
                    mid_mask,
                    layer2: run2,
                },
            )
        }
        EncoderVariant::MeanPool => (embedded, vec![None; xs.len()], Trace::MeanPool),
    };

    let out_mask = apply_masks(dropout, DropoutSite::EncoderOutput, &mut states);
    let v = match cfg.variant {
        EncoderVariant::MeanPool => {
            let mut mean = vec![0.0; cfg.embed_dim];
            for s in &states {
                axpy(1.0 / states.len() as f64, s, &mut mean);
            }
            mean
        }
        _ => states.last().expect("at least one layer-2 step").clone(),
    };
    Ok((
        VideoVector { v, layer2_states: states },
        EncoderTrace {
            frames: xs.to_vec(),
            frame_mask,
            out_mask,
            trace,
            cells,
        },
    ))
}

/// Backward of [`encode`]. `dv` is the gradient on the video vector and
/// `d_states` the gradient on each exposed state. Returns frame gradients.
pub fn encode_backward(
    set: &ParamSet,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    trace: &EncoderTrace,
    dv: &[f64],
    d_states: &[Vector],
    grads: &mut Grads,
) -> Vec<Vector> {
    let mut ds = d_states.to_vec();
    match cfg.variant {
        EncoderVariant::MeanPool => {
            let k = 1.0 / ds.len() as f64;
            for d in ds.iter_mut() {
                axpy(k, dv, d);
            }
        }
        _ => add_into(dv, ds.last_mut().expect("at least one state")),
    }
    unmask(&trace.out_mask, &mut ds);

    let mut d_embedded = match &trace.trace {
        Trace::Hrne {
            windows,
            filters,
            chunk_mask,
            layer2,
        } => {
            let mut d_chunks = layer2.backward(set, layer(&params.layer2), params.att_chunks.as_ref(), &ds, grads);
            unmask(chunk_mask, &mut d_chunks);
            let filter = layer(&params.layer1);
            let mut d_embedded = vec![vec![0.0; cfg.embed_dim]; trace.frames.len()];
            for ((&(start, real), run), du) in windows.iter().zip(filters).zip(&d_chunks) {
                let dhs: Vec<Vector> = (0..run.run.steps.len())
                    .map(|t| {
                        if t < run.real {
                            du.iter().map(|g| g / run.real as f64).collect()
                        } else {
                            vec![0.0; filter.hidden_dim]
                        }
                    })
                    .collect();
                let d_inputs = run.run.backward(set, filter, params.att_frames.as_ref(), &dhs, grads);
                for (k, d) in d_inputs.iter().take(real).enumerate() {
                    add_into(d, &mut d_embedded[start + k]);
                }
            }
            d_embedded
        }
        Trace::Stacked { layer1, mid_mask, layer2 } => {
            let mut d_mid = layer2.backward(set, layer(&params.layer2), None, &ds, grads);
            unmask(mid_mask, &mut d_mid);
            layer1.backward(set, layer(&params.layer1), None, &d_mid, grads)
        }
        Trace::MeanPool => ds,
    };
    unmask(&trace.frame_mask, &mut d_embedded);

    let w_embed: &Matrix = set.value(params.embed);
    let mut d_frames = Vec::with_capacity(trace.frames.len());
    for (x, de) in trace.frames.iter().zip(&d_embedded) {
        grads.get_mut(params.embed).add_outer(de, x);
        let mut dx = vec![0.0; cfg.input_dim];
        w_embed.matvec_t_acc(de, &mut dx);
        d_frames.push(dx);
    }
    d_frames
}


pub fn encode_hrne(set: &ParamSet, params: &EncoderParams, cfg: &EncoderConfig, xs: &[Vector]) -> Result<VideoVector> {
    expect_variant(cfg, EncoderVariant::Hrne)?;
    Ok(encode(set, params, cfg, xs, &mut Dropout::disabled())?.0)
}

pub fn encode_stacked(set: &ParamSet, params: &EncoderParams, cfg: &EncoderConfig, xs: &[Vector]) -> Result<VideoVector> {
    expect_variant(cfg, EncoderVariant::Stacked)?;
    Ok(encode(set, params, cfg, xs, &mut Dropout::disabled())?.0)
}

pub fn encode_meanpool(set: &ParamSet, params: &EncoderParams, cfg: &EncoderConfig, xs: &[Vector]) -> Result<VideoVector> {
    expect_variant(cfg, EncoderVariant::MeanPool)?;
    Ok(encode(set, params, cfg, xs, &mut Dropout::disabled())?.0)
}
