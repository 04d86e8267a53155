//! LSTM language model conditioned on the video vector.
//!
//! Each step feeds the embedded previous word through the decoder LSTM, then
//! forms the deep output `s_t` as the elementwise max of two affine pieces of
//! `(z, h_t, y_{t-1})` and scores words with `softmax(W_y s_t)`. With decoder
//! attention enabled, `z` is recomputed per step as a context over the
//! encoder states, queried by the previous decoder hidden state.

use crate::attention::{attend, attend_backward, AttendedSet, AttentionCache, AttentionParams};
use crate::encoder::VideoVector;
use crate::error::{Error, Result};
use crate::numerics::{add_into, hadamard, param_init, softmax_unchecked, Grads, Matrix, ParamId, ParamSet, Rng, Vector};
use crate::recurrent::{lstm_step_backward, lstm_step_cached, InitConfig, LstmParams, LstmState, LstmStepCache};
use crate::training::{Dropout, DropoutSite};
use crate::vocab::{BOS, EOS};

/// Floor applied to a reference token's probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_MAX_LEN: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub word_embed: usize,
    pub hidden: usize,
    pub deep_dim: usize,
    /// Dimension of the conditioning vector (the encoder output).
    pub context_dim: usize,
    pub attention: bool,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= EOS {
            return Err(Error::Config(format!("vocabulary of size {} cannot hold the reserved tokens", self.vocab_size)));
        }
        for (name, v) in [
            ("word_embed", self.word_embed),
            ("hidden", self.hidden),
            ("deep_dim", self.deep_dim),
            ("context_dim", self.context_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("decoder {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// One maxout piece: `W_z z + W_h h + W_e y + b`.
#[derive(Clone, Copy, Debug)]
pub struct DeepOutputPiece {
    pub w_z: ParamId,
    pub w_h: ParamId,
    /// `deep_dim × vocab`; multiplying a one-hot word selects a column.
    pub w_e: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub vocab_size: usize,
    pub word_embed: ParamId,
    pub lstm: LstmParams,
    pub pieces: [DeepOutputPiece; 2],
    pub w_y: ParamId,
    pub attention: Option<AttentionParams>,
}

impl DecoderParams {
    pub fn register(set: &mut ParamSet, cfg: &DecoderConfig, init: InitConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let word_embed = set.add_matrix("dec.embed.W", param_init(rng, cfg.vocab_size, cfg.word_embed, init.scale)?)?;
        let lstm = LstmParams::register(set, "dec.lstm", cfg.word_embed, cfg.hidden, init, rng)?;
        let attention = if cfg.attention {
            Some(AttentionParams::register(set, "dec.att", cfg.context_dim, cfg.hidden, cfg.context_dim, init.scale, rng)?)
        } else {
            None
        };
        let mut pieces = Vec::with_capacity(2);
        for k in 0..2 {
            pieces.push(DeepOutputPiece {
                w_z: set.add_matrix(format!("dec.out{k}.W_z"), param_init(rng, cfg.deep_dim, cfg.context_dim, init.scale)?)?,
                w_h: set.add_matrix(format!("dec.out{k}.W_h"), param_init(rng, cfg.deep_dim, cfg.hidden, init.scale)?)?,
                w_e: set.add_matrix(format!("dec.out{k}.W_e"), param_init(rng, cfg.deep_dim, cfg.vocab_size, init.scale)?)?,
                b: set.add_vector(format!("dec.out{k}.b"), vec![0.0; cfg.deep_dim])?,
            });
        }
        let w_y = set.add_matrix("dec.W_y", param_init(rng, cfg.vocab_size, cfg.deep_dim, init.scale)?)?;
        Ok(DecoderParams {
            vocab_size: cfg.vocab_size,
            word_embed,
            lstm,
            pieces: [pieces[0], pieces[1]],
            w_y,
            attention,
        })
    }

    fn check_token(&self, id: usize) -> Result<()> {
        if id < self.vocab_size {
            Ok(())
        } else {
            Err(Error::InvalidToken { id, vocab: self.vocab_size })
        }
    }
}

/// What [`linear_embed`] maps.
#[derive(Clone, Copy, Debug)]
pub enum EmbedInput<'a> {
    Features(&'a [f64]),
    /// Row lookup in a `vocab × embed` table.
    Token(usize),
}

pub fn linear_embed(e: &Matrix, input: EmbedInput<'_>) -> Result<Vector> {
    match input {
        EmbedInput::Features(x) => {
            if x.len() != e.cols() {
                return Err(Error::shape("linear_embed", format!("features of length {}", e.cols()), format!("length {}", x.len())));
            }
            Ok(e.matvec(x))
        }
        EmbedInput::Token(id) => {
            if id >= e.rows() {
                return Err(Error::InvalidToken { id, vocab: e.rows() });
            }
            Ok(e.row(id).to_vec())
        }
    }
}

/// Elementwise max of two pieces.
pub fn maxout(a: &[f64], b: &[f64]) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::shape("maxout", format!("pieces of length {}", a.len()), format!("length {}", b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.max(*y)).collect())
}

/// Routes `ds` to the winning piece per coordinate; ties go to the first.
pub fn maxout_backward(a: &[f64], b: &[f64], ds: &[f64]) -> (Vector, Vector) {
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    for j in 0..a.len() {
        if a[j] >= b[j] {
            da[j] = ds[j];
        } else {
            db[j] = ds[j];
        }
    }
    (da, db)
}

/// Forward record of one decoder step.
#[derive(Clone, Debug)]
pub struct StepCache {
    y_prev: usize,
    input_mask: Option<Vector>,
    lstm: LstmStepCache,
    attention: Option<AttentionCache>,
    z: Vector,
    h_out: Vector,
    output_mask: Option<Vector>,
    pieces: [Vector; 2],
    s: Vector,
    pub probs: Vector,
}

/// Attention over encoder states, or the fixed video vector.
enum Conditioning<'a> {
    Fixed(&'a [f64]),
    Attend(&'a AttentionParams, AttendedSet),
}

impl<'a> Conditioning<'a> {
    fn new(set: &ParamSet, p: &'a DecoderParams, video: &'a VideoVector) -> Result<Self> {
        match &p.attention {
            Some(ap) => Ok(Conditioning::Attend(ap, AttendedSet::new(set, ap, video.layer2_states.clone())?)),
            None => Ok(Conditioning::Fixed(&video.v)),
        }
    }
}

fn step_forward(
    set: &ParamSet,
    p: &DecoderParams,
    cond: &Conditioning<'_>,
    y_prev: usize,
    state: &LstmState,
    dropout: &mut Dropout,
) -> Result<StepCache> {
    p.check_token(y_prev)?;
    let mut x = set.value(p.word_embed).row(y_prev).to_vec();
    let input_mask = dropout.apply(DropoutSite::WordEmbedding, &mut x);
    let (attention, z) = match cond {
        Conditioning::Fixed(v) => (None, v.to_vec()),
        Conditioning::Attend(ap, attended) => {
            let cache = attend(set, ap, attended, &state.h)?;
            let z = cache.context.clone();
            (Some(cache), z)
        }
    };
    let lstm = lstm_step_cached(set, &p.lstm, &x, state)?;
    let mut h_out = lstm.state.h.clone();
    let output_mask = dropout.apply(DropoutSite::DecoderOutput, &mut h_out);
    let pieces: [Vector; 2] = std::array::from_fn(|k| {
        let piece = &p.pieces[k];
        let mut a = set.vector(piece.b).to_vec();
        set.value(piece.w_z).matvec_acc(&z, &mut a);
        set.value(piece.w_h).matvec_acc(&h_out, &mut a);
        let w_e = set.value(piece.w_e);
        for (r, av) in a.iter_mut().enumerate() {
            *av += w_e.get(r, y_prev);
        }
        a
    });
    let s = maxout(&pieces[0], &pieces[1])?;
    let logits = set.value(p.w_y).matvec(&s);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("decoder produced non-finite logits".into()));
    }
    let probs = softmax_unchecked(&logits);
    Ok(StepCache {
        y_prev,
        input_mask,
        lstm,
        attention,
        z,
        h_out,
        output_mask,
        pieces,
        s,
        probs,
    })
}

/// One decoder step: returns the next-word distribution and the new state.
pub fn decoder_step(set: &ParamSet, p: &DecoderParams, video: &VideoVector, y_prev: usize, state: &LstmState) -> Result<(Vector, LstmState)> {
    let cond = Conditioning::new(set, p, video)?;
    let cache = step_forward(set, p, &cond, y_prev, state, &mut Dropout::disabled())?;
    Ok((cache.probs, cache.lstm.state))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy generation from BOS; stops at EOS (excluded) or after `max_len`
/// tokens.
pub fn greedy_decode(set: &ParamSet, p: &DecoderParams, video: &VideoVector, max_len: usize) -> Result<Vec<usize>> {
    let cond = Conditioning::new(set, p, video)?;
    let mut state = LstmState::zeros(p.lstm.hidden_dim);
    let mut prev = BOS;
    let mut out = Vec::new();
    let mut dropout = Dropout::disabled();
    while out.len() < max_len {
        let cache = step_forward(set, p, &cond, prev, &state, &mut dropout)?;
        let next = argmax(&cache.probs);
        if next == EOS {
            break;
        }
        out.push(next);
        prev = next;
        state = cache.lstm.state;
    }
    Ok(out)
}

/// Teacher-forced record of a caption's negative log-likelihood.
#[derive(Clone, Debug)]
pub struct NllTrace {
    pub loss: f64,
    /// Set when some reference probability fell below [`PROB_FLOOR`].
    pub clamped: bool,
    targets: Vec<usize>,
    steps: Vec<StepCache>,
    attended: Option<AttendedSet>,
}

impl NllTrace {
    /// Per-step `-ln p(reference token)`.
    pub fn step_losses(&self) -> Vec<f64> {
        self.steps
            .iter()
            .zip(&self.targets)
            .map(|(s, &y)| -s.probs[y].max(PROB_FLOOR).ln())
            .collect()
    }
}

fn check_reference(p: &DecoderParams, reference: &[usize]) -> Result<()> {
    if reference.len() < 2 || reference[0] != BOS || *reference.last().unwrap() != EOS {
        return Err(Error::Input("reference caption must start with BOS and end with EOS".into()));
    }
    reference.iter().try_for_each(|&id| p.check_token(id))
}

/// `-Σ_t ln p(y_t | z, y_{t-1})` over every token after BOS, EOS included.
pub fn sequence_nll(set: &ParamSet, p: &DecoderParams, video: &VideoVector, reference: &[usize]) -> Result<f64> {
    Ok(sequence_nll_traced(set, p, video, reference, &mut Dropout::disabled())?.loss)
}

pub fn sequence_nll_traced(set: &ParamSet, p: &DecoderParams, video: &VideoVector, reference: &[usize], dropout: &mut Dropout) -> Result<NllTrace> {
    check_reference(p, reference)?;
    let cond = Conditioning::new(set, p, video)?;
    let mut state = LstmState::zeros(p.lstm.hidden_dim);
    let mut steps = Vec::with_capacity(reference.len() - 1);
    let mut loss = 0.0;
    let mut clamped = false;
    for w in reference.windows(2) {
        let cache = step_forward(set, p, &cond, w[0], &state, dropout)?;
        let prob = cache.probs[w[1]];
        if prob < PROB_FLOOR {
            clamped = true;
        }
        loss -= prob.max(PROB_FLOOR).ln();
        state = cache.lstm.state.clone();
        steps.push(cache);
    }
    let attended = match cond {
        Conditioning::Attend(_, a) => Some(a),
        Conditioning::Fixed(_) => None,
    };
    Ok(NllTrace {
        loss,
        clamped,
        targets: reference[1..].to_vec(),
        steps,
        attended,
    })
}

/// Backward of [`sequence_nll_traced`] scaled by `scale`. Returns the
/// gradients on the video vector and on each encoder state.
pub fn sequence_nll_backward(
    set: &ParamSet,
    p: &DecoderParams,
    video: &VideoVector,
    trace: &NllTrace,
    scale: f64,
    grads: &mut Grads,
) -> (Vector, Vec<Vector>) {
    let hidden = p.lstm.hidden_dim;
    let mut dv = vec![0.0; video.v.len()];
    let mut acc = trace.attended.as_ref().map(AttendedSet::grad_accumulator);
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    for (cache, &target) in trace.steps.iter().zip(&trace.targets).rev() {
        let mut dlogits: Vector = cache.probs.iter().map(|q| q * scale).collect();
        if cache.probs[target] < PROB_FLOOR {
            dlogits.fill(0.0);
        } else {
            dlogits[target] -= scale;
        }
        grads.get_mut(p.w_y).add_outer(&dlogits, &cache.s);
        let mut ds = vec![0.0; cache.s.len()];
        set.value(p.w_y).matvec_t_acc(&dlogits, &mut ds);
        let (da0, da1) = maxout_backward(&cache.pieces[0], &cache.pieces[1], &ds);

        let mut dz = vec![0.0; cache.z.len()];
        let mut dh_out = vec![0.0; hidden];
        for (piece, da) in p.pieces.iter().zip([&da0, &da1]) {
            grads.get_mut(piece.w_z).add_outer(da, &cache.z);
            set.value(piece.w_z).matvec_t_acc(da, &mut dz);
            grads.get_mut(piece.w_h).add_outer(da, &cache.h_out);
            set.value(piece.w_h).matvec_t_acc(da, &mut dh_out);
            let gw = grads.get_mut(piece.w_e);
            for (r, d) in da.iter().enumerate() {
                gw.set(r, cache.y_prev, gw.get(r, cache.y_prev) + d);
            }
            add_into(da, grads.vector_mut(piece.b));
        }
        if let Some(m) = &cache.output_mask {
            dh_out = hadamard(&dh_out, m);
        }
        add_into(&dh_next, &mut dh_out);
        let (mut dx, mut dh_prev, dc_prev) = lstm_step_backward(set, &p.lstm, &cache.lstm, &dh_out, &dc_next, grads);
        if let Some(m) = &cache.input_mask {
            dx = hadamard(&dx, m);
        }
        add_into(&dx, grads.get_mut(p.word_embed).row_mut(cache.y_prev));

        match (&cache.attention, &p.attention, trace.attended.as_ref(), acc.as_mut()) {
            (Some(att_cache), Some(ap), Some(attended), Some(acc)) => {
                let dq = attend_backward(set, ap, attended, att_cache, &dz, grads, acc);
                add_into(&dq, &mut dh_prev);
            }
            _ => add_into(&dz, &mut dv),
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    let d_states = match (acc, trace.attended.as_ref(), &p.attention) {
        (Some(acc), Some(attended), Some(ap)) => attended.finish_backward(set, ap, acc, grads),
        _ => video.layer2_states.iter().map(|s| vec![0.0; s.len()]).collect(),
    };
    (dv, d_states)
}
