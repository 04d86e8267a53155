//! Vanilla RNN and LSTM cells with cached activations for backpropagation
//! through time.

use crate::error::{Error, Result};
use crate::numerics::{add_into, param_init, sigmoid, Grads, ParamId, ParamSet, Rng, Vector};

/// Initialization knobs shared by every recurrent block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub scale: f64,
    pub forget_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            scale: crate::numerics::DEFAULT_INIT_SCALE,
            forget_bias: 1.0,
        }
    }
}

fn check_len(op: &'static str, what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{what} of length {expected}"), format!("length {found}")))
    }
}

/// Elman RNN: `h = tanh(W_hx x + W_hh h_prev)`, `z = W_zh h`.
#[derive(Clone, Copy, Debug)]
pub struct RnnParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w_hx: ParamId,
    pub w_hh: ParamId,
    pub w_zh: ParamId,
}

impl RnnParams {
    pub fn register(
        set: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(RnnParams {
            input_dim,
            hidden_dim,
            output_dim,
            w_hx: set.add_matrix(format!("{prefix}.W_hx"), param_init(rng, hidden_dim, input_dim, scale)?)?,
            w_hh: set.add_matrix(format!("{prefix}.W_hh"), param_init(rng, hidden_dim, hidden_dim, scale)?)?,
            w_zh: set.add_matrix(format!("{prefix}.W_zh"), param_init(rng, output_dim, hidden_dim, scale)?)?,
        })
    }
}

pub fn rnn_step(set: &ParamSet, p: &RnnParams, x: &[f64], h_prev: &[f64]) -> Result<(Vector, Vector)> {
    check_len("rnn_step", "input", p.input_dim, x.len())?;
    check_len("rnn_step", "hidden state", p.hidden_dim, h_prev.len())?;
    let mut a = set.value(p.w_hx).matvec(x);
    set.value(p.w_hh).matvec_acc(h_prev, &mut a);
    let h: Vector = a.iter().map(|v| v.tanh()).collect();
    let z = set.value(p.w_zh).matvec(&h);
    Ok((h, z))
}

/// Backward of one [`rnn_step`]; returns `(dx, dh_prev)`.
pub fn rnn_step_backward(
    set: &ParamSet,
    p: &RnnParams,
    x: &[f64],
    h_prev: &[f64],
    h: &[f64],
    dh: &[f64],
    dz: &[f64],
    grads: &mut Grads,
) -> (Vector, Vector) {
    let mut dh_total = dh.to_vec();
    set.value(p.w_zh).matvec_t_acc(dz, &mut dh_total);
    grads.get_mut(p.w_zh).add_outer(dz, h);
    let da: Vector = dh_total.iter().zip(h).map(|(g, hv)| g * (1.0 - hv * hv)).collect();
    grads.get_mut(p.w_hx).add_outer(&da, x);
    grads.get_mut(p.w_hh).add_outer(&da, h_prev);
    let mut dx = vec![0.0; p.input_dim];
    set.value(p.w_hx).matvec_t_acc(&da, &mut dx);
    let mut dh_prev = vec![0.0; p.hidden_dim];
    set.value(p.w_hh).matvec_t_acc(&da, &mut dh_prev);
    (dx, dh_prev)
}

#[derive(Clone, Copy, Debug)]
struct Gate {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

const GATE_NAMES: [&str; 4] = ["i", "f", "o", "g"];
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;

/// Input, forget, output and candidate transforms of one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    gates: [Gate; 4],
}

impl LstmParams {
    /// Registers `{prefix}.W_ix`, `{prefix}.W_ih`, `{prefix}.b_i`, ... for
    /// the gates i, f, o, g.
    pub fn register(
        set: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        init: InitConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut gates = Vec::with_capacity(4);
        for (k, name) in GATE_NAMES.iter().enumerate() {
            let wx = set.add_matrix(
                format!("{prefix}.W_{name}x"),
                param_init(rng, hidden_dim, input_dim, init.scale)?,
            )?;
            let wh = set.add_matrix(
                format!("{prefix}.W_{name}h"),
                param_init(rng, hidden_dim, hidden_dim, init.scale)?,
            )?;
            let bias = if k == FORGET { init.forget_bias } else { 0.0 };
            let b = set.add_vector(format!("{prefix}.b_{name}"), vec![bias; hidden_dim])?;
            gates.push(Gate { wx, wh, b });
        }
        Ok(LstmParams {
            input_dim,
            hidden_dim,
            gates: [gates[0], gates[1], gates[2], gates[3]],
        })
    }

    /// The 12 tensors in gate order `(W_*x, W_*h, b_*)`.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.gates.iter().flat_map(|g| [g.wx, g.wh, g.b]).collect()
    }

    pub fn bias(&self, gate: char) -> ParamId {
        let k = GATE_NAMES.iter().position(|n| n.starts_with(gate)).expect("gate is one of i, f, o, g");
        self.gates[k].b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything one cell evaluation needs for its exact backward.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    gates: [Vector; 4],
    tanh_c: Vector,
    pub state: LstmState,
}

impl LstmStepCache {
    pub fn input_gate(&self) -> &[f64] {
        &self.gates[INPUT]
    }

    pub fn forget_gate(&self) -> &[f64] {
        &self.gates[FORGET]
    }

    pub fn output_gate(&self) -> &[f64] {
        &self.gates[OUTPUT]
    }

    pub fn candidate(&self) -> &[f64] {
        &self.gates[CANDIDATE]
    }
}

pub(crate) fn lstm_step_cached(set: &ParamSet, p: &LstmParams, x: &[f64], prev: &LstmState) -> Result<LstmStepCache> {
    check_len("lstm_step", "input", p.input_dim, x.len())?;
    check_len("lstm_step", "hidden state", p.hidden_dim, prev.h.len())?;
    check_len("lstm_step", "memory cell", p.hidden_dim, prev.c.len())?;
    let gates: [Vector; 4] = std::array::from_fn(|k| {
        let g = &p.gates[k];
        let mut a = set.vector(g.b).to_vec();
        set.value(g.wx).matvec_acc(x, &mut a);
        set.value(g.wh).matvec_acc(&prev.h, &mut a);
        if k == CANDIDATE {
            a.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            a.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        a
    });
    let c: Vector = (0..p.hidden_dim)
        .map(|j| gates[FORGET][j] * prev.c[j] + gates[INPUT][j] * gates[CANDIDATE][j])
        .collect();
    let tanh_c: Vector = c.iter().map(|v| v.tanh()).collect();
    let h: Vector = gates[OUTPUT].iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    Ok(LstmStepCache {
        x: x.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        gates,
        tanh_c,
        state: LstmState { h, c },
    })
}

/// One LSTM cell evaluation.
pub fn lstm_step(set: &ParamSet, p: &LstmParams, x: &[f64], state: &LstmState) -> Result<LstmState> {
    Ok(lstm_step_cached(set, p, x, state)?.state)
}

/// Backward of one cell. `dh` and `dc` are the gradients arriving at this
/// step's outputs; returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    set: &ParamSet,
    p: &LstmParams,
    cache: &LstmStepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut Grads,
) -> (Vector, Vector, Vector) {
    let hdim = p.hidden_dim;
    let [i, f, o, g] = &cache.gates;
    let mut da: [Vector; 4] = std::array::from_fn(|_| vec![0.0; hdim]);
    let mut dc_prev = vec![0.0; hdim];
    for j in 0..hdim {
        let t = cache.tanh_c[j];
        let dc_total = dc[j] + dh[j] * o[j] * (1.0 - t * t);
        da[OUTPUT][j] = dh[j] * t * o[j] * (1.0 - o[j]);
        da[INPUT][j] = dc_total * g[j] * i[j] * (1.0 - i[j]);
        da[FORGET][j] = dc_total * cache.c_prev[j] * f[j] * (1.0 - f[j]);
        da[CANDIDATE][j] = dc_total * i[j] * (1.0 - g[j] * g[j]);
        dc_prev[j] = dc_total * f[j];
    }
    let mut dx = vec![0.0; p.input_dim];
    let mut dh_prev = vec![0.0; hdim];
    for (gate, d) in p.gates.iter().zip(&da) {
        grads.get_mut(gate.wx).add_outer(d, &cache.x);
        grads.get_mut(gate.wh).add_outer(d, &cache.h_prev);
        add_into(d, grads.vector_mut(gate.b));
        set.value(gate.wx).matvec_t_acc(d, &mut dx);
        set.value(gate.wh).matvec_t_acc(d, &mut dh_prev);
    }
    (dx, dh_prev, dc_prev)
}

/// Recorded forward pass over a sequence.
#[derive(Clone, Debug, Default)]
pub struct LstmTape {
    pub steps: Vec<LstmStepCache>,
}

impl LstmTape {
    /// Number of cell evaluations recorded.
    pub fn cell_count(&self) -> usize {
        self.steps.len()
    }

    pub fn hidden_states(&self) -> Vec<Vector> {
        self.steps.iter().map(|s| s.state.h.clone()).collect()
    }
}

/// Runs the cell over `xs` starting from `init`.
pub fn lstm_forward(
    set: &ParamSet,
    p: &LstmParams,
    xs: &[Vector],
    init: &LstmState,
) -> Result<(Vec<LstmState>, LstmTape)> {
    let mut tape = LstmTape {
        steps: Vec::with_capacity(xs.len()),
    };
    let mut prev = init.clone();
    for x in xs {
        let cache = lstm_step_cached(set, p, x, &prev)?;
        prev = cache.state.clone();
        tape.steps.push(cache);
    }
    let states = tape.steps.iter().map(|s| s.state.clone()).collect();
    Ok((states, tape))
}

/// BPTT over a recorded tape. `dhs[t]` is the gradient on `h_t` from outside
/// the recurrence. Returns input gradients and the gradient on `init`.
pub fn lstm_backward(
    set: &ParamSet,
    p: &LstmParams,
    tape: &LstmTape,
    dhs: &[Vector],
    grads: &mut Grads,
) -> (Vec<Vector>, LstmState) {
    debug_assert_eq!(dhs.len(), tape.steps.len());
    let mut dh_next = vec![0.0; p.hidden_dim];
    let mut dc_next = vec![0.0; p.hidden_dim];
    let mut dxs = vec![Vector::new(); tape.steps.len()];
    for t in (0..tape.steps.len()).rev() {
        let mut dh = dhs[t].clone();
        add_into(&dh_next, &mut dh);
        let (dx, dh_prev, dc_prev) = lstm_step_backward(set, p, &tape.steps[t], &dh, &dc_next, grads);
        dxs[t] = dx;
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    (
        dxs,
        LstmState {
            h: dh_next,
            c: dc_next,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, finite_diff_grad, finite_diff_vec, GradCheckReport, Matrix, DEFAULT_FD_EPS};

    fn random_vec(rng: &mut Rng, n: usize) -> Vector {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    fn zero_lstm(input: usize, hidden: usize) -> (ParamSet, LstmParams) {
        let mut set = ParamSet::new();
        let p = LstmParams::register(&mut set, "l", input, hidden, InitConfig::default(), &mut Rng::new(0)).unwrap();
        for id in set.ids().collect::<Vec<_>>() {
            set.value_mut(id).fill(0.0);
        }
        (set, p)
    }

    #[test]
    fn rnn_zero_weights() {
        let mut set = ParamSet::new();
        let p = RnnParams::register(&mut set, "r", 2, 3, 2, 0.1, &mut Rng::new(1)).unwrap();
        for id in set.ids().collect::<Vec<_>>() {
            set.value_mut(id).fill(0.0);
        }
        let (h, z) = rnn_step(&set, &p, &[1.0, -1.0], &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(z, vec![0.0; 2]);
    }

    #[test]
    fn rnn_identity_input() {
        let mut set = ParamSet::new();
        let p = RnnParams::register(&mut set, "r", 1, 1, 1, 0.1, &mut Rng::new(1)).unwrap();
        *set.value_mut(p.w_hx) = Matrix::identity(1);
        set.value_mut(p.w_hh).fill(0.0);
        let (h, _) = rnn_step(&set, &p, &[0.1], &[0.7]).unwrap();
        assert_eq!(h, vec![0.1f64.tanh()]);
        assert!(rnn_step(&set, &p, &[0.1, 0.2], &[0.7]).is_err());
    }

    #[test]
    fn rnn_hidden_strictly_bounded() {
        let mut rng = Rng::new(3);
        let mut set = ParamSet::new();
        // |pre-activation| stays below 13, where f64 tanh is still strictly inside (-1, 1).
        let p = RnnParams::register(&mut set, "r", 4, 5, 2, 1.0, &mut rng).unwrap();
        for _ in 0..50 {
            let x: Vector = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let h0 = random_vec(&mut rng, 5);
            let (h, _) = rnn_step(&set, &p, &x, &h0).unwrap();
            assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn rnn_bptt_matches_finite_differences() {
        for (hidden, len) in [(3, 1), (3, 5), (7, 12)] {
            let mut rng = Rng::new(100 + hidden as u64 * 13 + len as u64);
            let mut set = ParamSet::new();
            let p = RnnParams::register(&mut set, "r", 4, hidden, 3, 0.5, &mut rng).unwrap();
            let xs: Vec<Vector> = (0..len).map(|_| random_vec(&mut rng, 4)).collect();
            let r = random_vec(&mut rng, 3);
            // loss = Σ_t r·z_t
            let loss = |set: &ParamSet| {
                let mut h = vec![0.0; hidden];
                let mut total = 0.0;
                for x in &xs {
                    let (hn, z) = rnn_step(set, &p, x, &h).unwrap();
                    total += dot(&r, &z);
                    h = hn;
                }
                total
            };
            let mut hs = vec![vec![0.0; hidden]];
            for x in &xs {
                let (h, _) = rnn_step(&set, &p, x, hs.last().unwrap()).unwrap();
                hs.push(h);
            }
            let mut grads = set.zero_grad_buffer();
            let mut dh_next = vec![0.0; hidden];
            for t in (0..len).rev() {
                let (_, dh_prev) = rnn_step_backward(&set, &p, &xs[t], &hs[t], &hs[t + 1], &dh_next, &r, &mut grads);
                dh_next = dh_prev;
            }
            let numeric = finite_diff_grad(loss, &mut set, DEFAULT_FD_EPS).unwrap();
            let report = GradCheckReport::compare(&set, &grads, &numeric);
            assert!(report.passes(1e-4), "H={hidden} T={len}: {report:?}");
        }
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let (set, p) = zero_lstm(3, 4);
        let cache = lstm_step_cached(&set, &p, &[1.0, 2.0, 3.0], &LstmState::zeros(4)).unwrap();
        assert!(cache.input_gate().iter().all(|&v| v == 0.5));
        assert!(cache.forget_gate().iter().all(|&v| v == 0.5));
        assert!(cache.output_gate().iter().all(|&v| v == 0.5));
        assert!(cache.candidate().iter().all(|&v| v == 0.0));
        assert_eq!(cache.state, LstmState::zeros(4));
    }

    #[test]
    fn lstm_saturated_gates_preserve_memory() {
        let (mut set, p) = zero_lstm(2, 3);
        set.value_mut(p.bias('f')).fill(20.0);
        set.value_mut(p.bias('i')).fill(-20.0);
        let init = LstmState {
            h: vec![0.0; 3],
            c: vec![0.4, -0.3, 0.9],
        };
        let next = lstm_step(&set, &p, &[1.0, 1.0], &init).unwrap();
        for (a, b) in next.c.iter().zip(&init.c) {
            assert!((a - b).abs() < 1e-6);
        }

        let xs: Vec<Vector> = (0..100).map(|t| vec![t as f64 * 0.01, -1.0]).collect();
        let (states, _) = lstm_forward(&set, &p, &xs, &init).unwrap();
        let last = &states.last().unwrap().c;
        let drift = last.iter().zip(&init.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-5, "drift {drift}");
    }

    #[test]
    fn lstm_forward_edge_cases() {
        let mut rng = Rng::new(9);
        let mut set = ParamSet::new();
        let p = LstmParams::register(&mut set, "l", 3, 4, InitConfig { scale: 0.5, forget_bias: 1.0 }, &mut rng).unwrap();
        let init = LstmState {
            h: random_vec(&mut rng, 4),
            c: random_vec(&mut rng, 4),
        };
        let (states, tape) = lstm_forward(&set, &p, &[], &init).unwrap();
        assert!(states.is_empty());
        assert_eq!(tape.cell_count(), 0);

        let xs: Vec<Vector> = (0..6).map(|_| random_vec(&mut rng, 3)).collect();
        let (states, tape) = lstm_forward(&set, &p, &xs, &init).unwrap();
        assert_eq!(tape.cell_count(), 6);
        let mut prev = init.clone();
        for (x, s) in xs.iter().zip(&states) {
            prev = lstm_step(&set, &p, x, &prev).unwrap();
            assert_eq!(&prev, s);
            assert!(s.h.iter().all(|v| v.abs() < 1.0));
        }

        let (zset, zp) = zero_lstm(3, 4);
        let (states, _) = lstm_forward(&zset, &zp, &xs, &LstmState::zeros(4)).unwrap();
        assert!(states.iter().all(|s| s.h.iter().all(|&v| v == 0.0)));

        assert!(lstm_forward(&set, &p, &[vec![1.0]], &init).is_err());
    }

    #[test]
    fn lstm_bptt_matches_finite_differences() {
        for hidden in [3, 7] {
            for len in [1, 5, 12] {
                let mut rng = Rng::new(1000 + hidden as u64 * 31 + len as u64);
                let mut set = ParamSet::new();
                let init_cfg = InitConfig { scale: 0.4, forget_bias: 0.5 };
                let p = LstmParams::register(&mut set, "l", 4, hidden, init_cfg, &mut rng).unwrap();
                let xs: Vec<Vector> = (0..len).map(|_| random_vec(&mut rng, 4)).collect();
                let rs: Vec<Vector> = (0..len).map(|_| random_vec(&mut rng, hidden)).collect();
                let rc = random_vec(&mut rng, hidden);
                let init = LstmState {
                    h: random_vec(&mut rng, hidden),
                    c: random_vec(&mut rng, hidden),
                };
                // loss = Σ_t r_t·h_t + rc·c_T
                let loss = |set: &ParamSet, xs: &[Vector], init: &LstmState| {
                    let (states, _) = lstm_forward(set, &p, xs, init).unwrap();
                    let mut total: f64 = states.iter().zip(&rs).map(|(s, r)| dot(&s.h, r)).sum();
                    total += dot(&states.last().unwrap().c, &rc);
                    total
                };

                let (_, tape) = lstm_forward(&set, &p, &xs, &init).unwrap();
                let mut grads = set.zero_grad_buffer();
                // seed the final cell gradient by running the last step by hand
                let mut dxs = vec![Vector::new(); len];
                let mut dh_next = vec![0.0; hidden];
                let mut dc_next = rc.clone();
                for t in (0..len).rev() {
                    let mut dh = rs[t].clone();
                    add_into(&dh_next, &mut dh);
                    let (dx, dhp, dcp) = lstm_step_backward(&set, &p, &tape.steps[t], &dh, &dc_next, &mut grads);
                    dxs[t] = dx;
                    dh_next = dhp;
                    dc_next = dcp;
                }

                let numeric = finite_diff_grad(|s| loss(s, &xs, &init), &mut set, DEFAULT_FD_EPS).unwrap();
                let report = GradCheckReport::compare(&set, &grads, &numeric);
                assert_eq!(report.per_tensor.len(), 12);
                assert!(report.passes(1e-4), "H={hidden} T={len}: {report:?}");

                // input and initial-state gradients
                for t in 0..len {
                    let num = finite_diff_vec(
                        |x| {
                            let mut xs2 = xs.clone();
                            xs2[t] = x.to_vec();
                            loss(&set, &xs2, &init)
                        },
                        &xs[t],
                        DEFAULT_FD_EPS,
                    )
                    .unwrap();
                    for (a, b) in dxs[t].iter().zip(&num) {
                        assert!(crate::numerics::rel_error(*a, *b) < 1e-4);
                    }
                }
                let num_h0 = finite_diff_vec(
                    |h| {
                        let i2 = LstmState { h: h.to_vec(), c: init.c.clone() };
                        loss(&set, &xs, &i2)
                    },
                    &init.h,
                    DEFAULT_FD_EPS,
                )
                .unwrap();
                for (a, b) in dh_next.iter().zip(&num_h0) {
                    assert!(crate::numerics::rel_error(*a, *b) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn lstm_backward_matches_stepwise_backward() {
        let mut rng = Rng::new(77);
        let mut set = ParamSet::new();
        let p = LstmParams::register(&mut set, "l", 2, 3, InitConfig { scale: 0.5, forget_bias: 1.0 }, &mut rng).unwrap();
        let xs: Vec<Vector> = (0..4).map(|_| random_vec(&mut rng, 2)).collect();
        let dhs: Vec<Vector> = (0..4).map(|_| random_vec(&mut rng, 3)).collect();
        let (_, tape) = lstm_forward(&set, &p, &xs, &LstmState::zeros(3)).unwrap();
        let mut g1 = set.zero_grad_buffer();
        let (dxs, _) = lstm_backward(&set, &p, &tape, &dhs, &mut g1);

        let loss = |s: &ParamSet| {
            let (states, _) = lstm_forward(s, &p, &xs, &LstmState::zeros(3)).unwrap();
            states.iter().zip(&dhs).map(|(st, r)| dot(&st.h, r)).sum::<f64>()
        };
        let numeric = finite_diff_grad(loss, &mut set, DEFAULT_FD_EPS).unwrap();
        assert!(GradCheckReport::compare(&set, &g1, &numeric).passes(1e-4));
        assert_eq!(dxs.len(), 4);
    }

    #[test]
    fn recurrent_path_survives_zeroed_inputs() {
        // With the input completely masked out, h_{t-1} must still reach h_t.
        let mut rng = Rng::new(4);
        let mut set = ParamSet::new();
        let p = LstmParams::register(&mut set, "l", 3, 4, InitConfig { scale: 0.5, forget_bias: 1.0 }, &mut rng).unwrap();
        let zero = vec![0.0; 3];
        let a = lstm_step(&set, &p, &zero, &LstmState { h: vec![0.5; 4], c: vec![0.0; 4] }).unwrap();
        let b = lstm_step(&set, &p, &zero, &LstmState { h: vec![-0.5; 4], c: vec![0.0; 4] }).unwrap();
        assert!(crate::numerics::norm_inf_diff(&a.h, &b.h) > 1e-3);
    }
}
