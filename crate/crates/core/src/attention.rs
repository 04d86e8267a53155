//! Soft attention: additive relevance scores, softmax weights and the
//! blended context vector. The same block serves all three insertion points
//! of the captioning model.

use crate::error::{Error, Result};
use crate::numerics::{add_into, axpy, dot, param_init, softmax, softmax_backward, Grads, Matrix, ParamId, ParamSet, Rng, Vector};

/// Parameters of one attention block: `e_i = wᵀ tanh(W_a x_i + U_a h + b_a)`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub item_dim: usize,
    pub query_dim: usize,
    pub score_dim: usize,
    pub w: ParamId,
    pub w_a: ParamId,
    pub u_a: ParamId,
    pub b_a: ParamId,
}

impl AttentionParams {
    pub fn register(
        set: &mut ParamSet,
        prefix: &str,
        item_dim: usize,
        query_dim: usize,
        score_dim: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = param_init(rng, score_dim, 1, scale)?;
        Ok(AttentionParams {
            item_dim,
            query_dim,
            score_dim,
            w: set.add_vector(format!("{prefix}.w"), w.data().to_vec())?,
            w_a: set.add_matrix(format!("{prefix}.W_a"), param_init(rng, score_dim, item_dim, scale)?)?,
            u_a: set.add_matrix(format!("{prefix}.U_a"), param_init(rng, score_dim, query_dim, scale)?)?,
            b_a: set.add_vector(format!("{prefix}.b_a"), vec![0.0; score_dim])?,
        })
    }
}

/// Items to attend over, with `W_a x_i` precomputed since it does not depend
/// on the query.
#[derive(Clone, Debug)]
pub struct AttendedSet {
    items: Vec<Vector>,
    projected: Vec<Vector>,
}

impl AttendedSet {
    pub fn new(set: &ParamSet, p: &AttentionParams, items: Vec<Vector>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::shape("attention", "at least one item", "no items"));
        }
        if let Some(bad) = items.iter().find(|x| x.len() != p.item_dim) {
            return Err(Error::shape("attention", format!("items of length {}", p.item_dim), format!("length {}", bad.len())));
        }
        let w_a = set.value(p.w_a);
        let projected = items.iter().map(|x| w_a.matvec(x)).collect();
        Ok(AttendedSet { items, projected })
    }

    pub fn items(&self) -> &[Vector] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Zeroed gradient accumulator for this set.
    pub fn grad_accumulator(&self) -> AttendedGrads {
        AttendedGrads {
            d_items: self.items.iter().map(|x| vec![0.0; x.len()]).collect(),
            d_projected: self.projected.iter().map(|x| vec![0.0; x.len()]).collect(),
        }
    }

    /// Pushes accumulated `d(W_a x_i)` through `W_a`; returns item gradients.
    pub fn finish_backward(&self, set: &ParamSet, p: &AttentionParams, acc: AttendedGrads, grads: &mut Grads) -> Vec<Vector> {
        let w_a = set.value(p.w_a);
        let AttendedGrads { mut d_items, d_projected } = acc;
        for ((x, dproj), dx) in self.items.iter().zip(&d_projected).zip(d_items.iter_mut()) {
            grads.get_mut(p.w_a).add_outer(dproj, x);
            w_a.matvec_t_acc(dproj, dx);
        }
        d_items
    }
}

/// Gradients gathered over every query made against one [`AttendedSet`].
#[derive(Clone, Debug)]
pub struct AttendedGrads {
    d_items: Vec<Vector>,
    d_projected: Vec<Vector>,
}

/// One query's forward record.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    pub query: Vector,
    hidden: Vec<Vector>,
    pub scores: Vector,
    pub weights: Vector,
    pub context: Vector,
}

fn check_query(p: &AttentionParams, query: &[f64]) -> Result<()> {
    if query.len() != p.query_dim {
        return Err(Error::shape("attention", format!("query of length {}", p.query_dim), format!("length {}", query.len())));
    }
    Ok(())
}

/// Relevance score of every item for the query `h_prev`.
pub fn attention_scores(set: &ParamSet, p: &AttentionParams, items: &[Vector], h_prev: &[f64]) -> Result<Vector> {
    let attended = AttendedSet::new(set, p, items.to_vec())?;
    Ok(attend(set, p, &attended, h_prev)?.scores)
}

pub fn attention_weights(scores: &[f64]) -> Result<Vector> {
    softmax(scores)
}

/// `Σ_i α_i x_i`
pub fn attention_context(weights: &[f64], items: &[Vector]) -> Result<Vector> {
    if weights.len() != items.len() || items.is_empty() {
        return Err(Error::shape("attention_context", format!("{} weights", items.len()), format!("{} weights", weights.len())));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("attention weights sum to {total}, expected 1")));
    }
    let dim = items[0].len();
    let mut ctx = vec![0.0; dim];
    for (a, x) in weights.iter().zip(items) {
        if x.len() != dim {
            return Err(Error::shape("attention_context", format!("items of length {dim}"), format!("length {}", x.len())));
        }
        axpy(*a, x, &mut ctx);
    }
    Ok(ctx)
}

/// Scores, weights and context for one query.
pub fn attend(set: &ParamSet, p: &AttentionParams, attended: &AttendedSet, query: &[f64]) -> Result<AttentionCache> {
    check_query(p, query)?;
    let mut q = set.vector(p.b_a).to_vec();
    set.value(p.u_a).matvec_acc(query, &mut q);
    let w = set.vector(p.w);
    let mut hidden = Vec::with_capacity(attended.len());
    let mut scores = Vec::with_capacity(attended.len());
    for proj in &attended.projected {
        let t: Vector = proj.iter().zip(&q).map(|(a, b)| (a + b).tanh()).collect();
        scores.push(dot(w, &t));
        hidden.push(t);
    }
    let weights = softmax(&scores)?;
    let mut context = vec![0.0; attended.items[0].len()];
    for (a, x) in weights.iter().zip(&attended.items) {
        axpy(*a, x, &mut context);
    }
    Ok(AttentionCache {
        query: query.to_vec(),
        hidden,
        scores,
        weights,
        context,
    })
}

/// Backward of [`attend`] for upstream `d_context`. Item gradients gather in
/// `acc`; returns the query gradient.
pub fn attend_backward(
    set: &ParamSet,
    p: &AttentionParams,
    attended: &AttendedSet,
    cache: &AttentionCache,
    d_context: &[f64],
    grads: &mut Grads,
    acc: &mut AttendedGrads,
) -> Vector {
    let d_weights: Vector = attended.items.iter().map(|x| dot(d_context, x)).collect();
    for (a, dx) in cache.weights.iter().zip(acc.d_items.iter_mut()) {
        axpy(*a, d_context, dx);
    }
    let d_scores = softmax_backward(&cache.weights, &d_weights);
    let w = set.vector(p.w);
    let mut dq = vec![0.0; p.score_dim];
    for ((t, ds), dproj) in cache.hidden.iter().zip(&d_scores).zip(acc.d_projected.iter_mut()) {
        axpy(*ds, t, grads.vector_mut(p.w));
        let dpre: Vector = t.iter().zip(w).map(|(tv, wv)| ds * wv * (1.0 - tv * tv)).collect();
        add_into(&dpre, dproj);
        add_into(&dpre, &mut dq);
    }
    grads.get_mut(p.u_a).add_outer(&dq, &cache.query);
    add_into(&dq, grads.vector_mut(p.b_a));
    let mut d_query = vec![0.0; p.query_dim];
    set.value(p.u_a).matvec_t_acc(&dq, &mut d_query);
    d_query
}

/// Direct evaluation of the score formula, kept separate from [`attend`].
pub fn reference_scores(w: &[f64], w_a: &Matrix, u_a: &Matrix, b_a: &[f64], items: &[Vector], h_prev: &[f64]) -> Vector {
    items
        .iter()
        .map(|x| {
            (0..w.len())
                .map(|r| {
                    let mut pre = b_a[r];
                    for (c, xv) in x.iter().enumerate() {
                        pre += w_a.get(r, c) * xv;
                    }
                    for (c, hv) in h_prev.iter().enumerate() {
                        pre += u_a.get(r, c) * hv;
                    }
                    w[r] * pre.tanh()
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, finite_diff_vec, norm_inf_diff, rel_error, GradCheckReport, DEFAULT_FD_EPS};
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn random_vec(rng: &mut Rng, n: usize) -> Vector {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    fn setup(seed: u64, item_dim: usize, query_dim: usize, n: usize) -> (ParamSet, AttentionParams, Vec<Vector>, Vector) {
        let mut rng = Rng::new(seed);
        let mut set = ParamSet::new();
        let p = AttentionParams::register(&mut set, "att", item_dim, query_dim, item_dim, 0.8, &mut rng).unwrap();
        set.value_mut(p.b_a).data_mut().iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
        let items = (0..n).map(|_| random_vec(&mut rng, item_dim)).collect();
        let h = random_vec(&mut rng, query_dim);
        (set, p, items, h)
    }

    #[test]
    fn zero_projection_gives_zero_scores() {
        let (mut set, p, items, h) = setup(1, 3, 2, 4);
        set.value_mut(p.w).fill(0.0);
        assert_eq!(attention_scores(&set, &p, &items, &h).unwrap(), vec![0.0; 4]);

        let (mut set, p, items, h) = setup(2, 3, 2, 4);
        set.value_mut(p.w_a).fill(0.0);
        set.value_mut(p.u_a).fill(0.0);
        set.value_mut(p.b_a).fill(0.0);
        assert_eq!(attention_scores(&set, &p, &items, &h).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn scores_match_direct_formula() {
        let (set, p, items, h) = setup(3, 5, 4, 6);
        let got = attention_scores(&set, &p, &items, &h).unwrap();
        let want = reference_scores(set.vector(p.w), set.value(p.w_a), set.value(p.u_a), set.vector(p.b_a), &items, &h);
        assert!(norm_inf_diff(&got, &want) < 1e-9);
    }

    #[test]
    fn empty_items_rejected() {
        let (set, p, _, h) = setup(4, 3, 2, 1);
        assert!(matches!(attention_scores(&set, &p, &[], &h), Err(Error::Shape { .. })));
        assert!(attention_weights(&[]).is_err());
        assert!(attention_context(&[0.5, 0.5], &[vec![1.0]]).is_err());
    }

    #[test]
    fn weights_examples() {
        let w = attention_weights(&[0.3, 0.3, 0.3, 0.3]).unwrap();
        assert!(w.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(attention_weights(&[-4.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn context_examples() {
        let items = vec![vec![1.0, 2.0], vec![3.0, -2.0], vec![5.0, 0.0]];
        let mean = attention_context(&[1.0 / 3.0; 3], &items).unwrap();
        assert!(norm_inf_diff(&mean, &[3.0, 0.0]) < 1e-12);
        assert_eq!(attention_context(&[0.0, 1.0, 0.0], &items).unwrap(), items[1]);
        let same = vec![vec![0.7, -0.1]; 3];
        let ctx = attention_context(&[0.2, 0.5, 0.3], &same).unwrap();
        assert!(norm_inf_diff(&ctx, &same[0]) < 1e-12);
    }

    #[test]
    fn full_chain_gradients_match_finite_differences() {
        let (mut set, p, items, h) = setup(5, 4, 3, 5);
        let r = random_vec(&mut Rng::new(55), 4);
        let loss = |set: &ParamSet, items: &[Vector], h: &[f64]| {
            let attended = AttendedSet::new(set, &p, items.to_vec()).unwrap();
            dot(&attend(set, &p, &attended, h).unwrap().context, &r)
        };

        let attended = AttendedSet::new(&set, &p, items.clone()).unwrap();
        let cache = attend(&set, &p, &attended, &h).unwrap();
        let mut grads = set.zero_grad_buffer();
        let mut acc = attended.grad_accumulator();
        let dh = attend_backward(&set, &p, &attended, &cache, &r, &mut grads, &mut acc);
        let d_items = attended.finish_backward(&set, &p, acc, &mut grads);

        let numeric = finite_diff_grad(|s| loss(s, &items, &h), &mut set, DEFAULT_FD_EPS).unwrap();
        let report = GradCheckReport::compare(&set, &grads, &numeric);
        assert!(report.passes(1e-4), "{report:?}");

        let num_h = finite_diff_vec(|q| loss(&set, &items, q), &h, DEFAULT_FD_EPS).unwrap();
        assert!(dh.iter().zip(&num_h).all(|(a, b)| rel_error(*a, *b) < 1e-4));
        for k in 0..items.len() {
            let num = finite_diff_vec(
                |x| {
                    let mut it = items.clone();
                    it[k] = x.to_vec();
                    loss(&set, &it, &h)
                },
                &items[k],
                DEFAULT_FD_EPS,
            )
            .unwrap();
            assert!(d_items[k].iter().zip(&num).all(|(a, b)| rel_error(*a, *b) < 1e-4));
        }
    }

    proptest! {
        #[test]
        fn weights_shift_invariant(scores in proptest::collection::vec(-20.0f64..20.0, 1..12), c in -50.0f64..50.0) {
            let a = attention_weights(&scores).unwrap();
            let shifted: Vector = scores.iter().map(|s| s + c).collect();
            let b = attention_weights(&shifted).unwrap();
            prop_assert!(norm_inf_diff(&a, &b) < 1e-9);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn context_in_convex_hull(seed in 0u64..10_000, n in 1usize..8) {
            let (set, p, items, h) = setup(seed, 3, 2, n);
            let attended = AttendedSet::new(&set, &p, items.clone()).unwrap();
            let cache = attend(&set, &p, &attended, &h).unwrap();
            for j in 0..3 {
                let lo = items.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min);
                let hi = items.iter().map(|x| x[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(cache.context[j] >= lo - 1e-12 && cache.context[j] <= hi + 1e-12);
            }
        }
    }
}
