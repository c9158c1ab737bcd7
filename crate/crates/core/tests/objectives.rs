use grcl_core::bounds::{audit_batch, sample_audit_batch, theorem_bounds, BoundInputs};
use grcl_core::dense::{dot, Matrix};
use grcl_core::encoder::{normalization_adjoint_row, normalize_rows};
use grcl_core::gradcheck::random_instance;
use grcl_core::losses::{
    batch_laplacians, bpr_loss, coles_loss, gr_coles_loss, het_reg, hom_reg, LossOutput,
    ObjectiveWeights, TrainingBatch,
};
use grcl_core::training::sample_batch;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

/// Largest per-entry relative gap between `grad` and central differences of
/// `f` around `e`.
fn fd_gap(e: &Matrix<f64>, grad: &Matrix<f64>, f: impl Fn(&Matrix<f64>) -> f64) -> f64 {
    let mut probe = e.clone();
    let mut worst: f64 = 0.0;
    for r in 0..e.rows() {
        for c in 0..e.cols() {
            let x = e.get(r, c);
            probe.set(r, c, x + STEP);
            let plus = f(&probe);
            probe.set(r, c, x - STEP);
            let minus = f(&probe);
            probe.set(r, c, x);
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = grad.get(r, c);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

struct Case {
    e: Matrix<f64>,
    batch: TrainingBatch,
}

/// Unit-normalized embeddings and a small sampled batch on a random graph.
fn case(seed: u64, n: usize, d: usize, k: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_instance(n, k, &mut rng).unwrap();
    let mut edges = g.train_edges().to_vec();
    edges.shuffle(&mut rng);
    edges.truncate(6);
    let batch = sample_batch(&g, &edges, k, &mut rng).unwrap();
    Case {
        e: Matrix::random_unit_rows(g.n_nodes(), d, &mut rng),
        batch,
    }
}

fn rotation(d: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    // Gram-Schmidt on a Gaussian matrix.
    let mut q = Matrix::<f64>::random_normal(d, d, 1.0, rng);
    for i in 0..d {
        for j in 0..i {
            let proj = dot(q.row(i), q.row(j));
            let prev = q.row(j).to_vec();
            q.row_mut(i)
                .iter_mut()
                .zip(&prev)
                .for_each(|(x, p)| *x -= proj * p);
        }
        let norm = q.row_norm(i);
        q.row_mut(i).iter_mut().for_each(|x| *x /= norm);
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bpr_gradient(seed in any::<u64>(), n in 10usize..50, d in 2usize..9, k in 1usize..4) {
        let c = case(seed, n, d, k);
        let out = bpr_loss(&c.e, &c.batch, 0.0, 0.0);
        prop_assert!(fd_gap(&c.e, &out.grad, |e| bpr_loss(e, &c.batch, 0.0, 0.0).value) <= 1e-5);
    }

    #[test]
    fn coles_gradient(seed in any::<u64>(), n in 10usize..50, d in 2usize..9, k in 1usize..4, beta in 0.0f64..2.0) {
        let c = case(seed, n, d, k);
        let (lp, ln) = batch_laplacians::<f64>(&c.batch, c.e.rows());
        let out = coles_loss(&c.e, &lp, &ln, beta).unwrap();
        prop_assert!(fd_gap(&c.e, &out.grad, |e| coles_loss(e, &lp, &ln, beta).unwrap().value) <= 1e-5);
    }

    #[test]
    fn regularizer_gradients(seed in any::<u64>(), n in 10usize..50, d in 2usize..9, t in 0.5f64..4.0) {
        let c = case(seed, n, d, 2);
        let (users, items) = (c.batch.anchor_set(), c.batch.item_set());
        let hom = hom_reg(&c.e, &users, &items, t);
        prop_assert!(fd_gap(&c.e, &hom.grad, |e| hom_reg(e, &users, &items, t).value) <= 1e-5);
        let het = het_reg(&c.e, &c.batch, t);
        prop_assert!(fd_gap(&c.e, &het.grad, |e| het_reg(e, &c.batch, t).value) <= 1e-5);
    }

    #[test]
    fn combined_gradient(seed in any::<u64>(), n in 10usize..50, d in 2usize..9, wc in 0.0f64..2.0, wh in 0.0f64..2.0, wt in 0.0f64..2.0) {
        let c = case(seed, n, d, 2);
        let (lp, ln) = batch_laplacians::<f64>(&c.batch, c.e.rows());
        let w = ObjectiveWeights { coles: wc, hom: wh, het: wt };
        let run = |e: &Matrix<f64>| -> LossOutput<f64> { gr_coles_loss(e, &c.batch, &lp, &ln, 0.9, 2.0, w).unwrap() };
        let out = run(&c.e);
        prop_assert!(fd_gap(&c.e, &out.grad, |e| run(e).value) <= 1e-5);
    }

    #[test]
    fn normalization_adjoint(seed in any::<u64>(), rows in 1usize..20, d in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::<f64>::random_normal(rows, d, 1.0, &mut rng);
        let w = Matrix::<f64>::random_normal(rows, d, 1.0, &mut rng);
        // f(X) = <W, normalize(X)>
        let f = |x: &Matrix<f64>| -> f64 {
            let mut u = x.clone();
            normalize_rows(&mut u).unwrap();
            dot(u.as_slice(), w.as_slice())
        };
        let mut unit = x.clone();
        let norms = normalize_rows(&mut unit).unwrap();
        let mut grad = Matrix::zeros(rows, d);
        for r in 0..rows {
            normalization_adjoint_row(unit.row(r), norms[r], w.row(r), grad.row_mut(r));
        }
        prop_assert!(fd_gap(&x, &grad, f) <= 1e-5);
    }

    #[test]
    fn bpr_is_rotation_invariant(seed in any::<u64>(), n in 10usize..50, d in 2usize..9) {
        let c = case(seed, n, d, 2);
        let base = bpr_loss(&c.e, &c.batch, 0.0, 0.0).value;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..10 {
            let rotated = c.e.matmul(&rotation(d, &mut rng)).unwrap();
            prop_assert!((bpr_loss(&rotated, &c.batch, 0.0, 0.0).value - base).abs() <= 1e-9);
        }
    }

    #[test]
    fn regularizers_are_bounded_and_fall_with_t(seed in any::<u64>(), n in 10usize..50, d in 2usize..9, t in 0.1f64..4.0) {
        let c = case(seed, n, d, 2);
        let (users, items) = (c.batch.anchor_set(), c.batch.item_set());
        let hom_terms = (users.len() * users.len() + items.len() * items.len()) as f64;
        let het_terms = (c.batch.len() * c.batch.k) as f64;
        let hom = hom_reg(&c.e, &users, &items, t).value;
        let het = het_reg(&c.e, &c.batch, t).value;
        prop_assert!(hom > 0.0 && hom <= hom_terms);
        prop_assert!(het > 0.0 && het <= het_terms);
        prop_assert!(hom_reg(&c.e, &users, &items, t * 1.5).value < hom);
        // Distinct random unit rows are almost surely at positive distance.
        prop_assert!(het_reg(&c.e, &c.batch, t * 1.5).value < het);
    }

    #[test]
    fn positive_identity_and_sandwich(seed in any::<u64>(), n in 10usize..60, d in 2usize..9, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_instance(n, k, &mut rng).unwrap();
        let e = Matrix::<f64>::random_unit_rows(g.n_nodes(), d, &mut rng);
        let anchors = rng.random_range(1..=g.n_users());
        let batch = sample_audit_batch(&g, anchors, k, &mut rng).unwrap();
        let r = audit_batch(&e, &batch, g.degrees()).unwrap();
        prop_assert!(r.pos_identity_residual <= 1e-9);
        prop_assert!(r.sandwich_ok && r.neg_lower_ok && r.neg_upper_ok);
        prop_assert!(r.lower <= r.bpr + 1e-9 && r.bpr <= r.upper + 1e-9);
    }

    #[test]
    fn wider_degree_spread_never_tightens(
        pos in 0.0f64..50.0, neg_share in 0.0f64..=1.0, d_min in 1usize..10, extra in 0usize..20, grow in 1usize..10,
        k in 1usize..4, n_users in 1usize..20,
    ) {
        // Each sampled negative distance on unit rows is at most 4.
        let neg = neg_share * 4.0 * (k * n_users) as f64;
        let inputs = |d_min: usize, d_max: usize| BoundInputs {
            coles_pos: pos,
            coles_neg: neg,
            d_min,
            d_max,
            k,
            n_users,
            m: n_users * d_min,
        };
        let width = |inp: BoundInputs<f64>| {
            let (lo, hi) = theorem_bounds(&inp).unwrap();
            hi - lo
        };
        let narrow = width(inputs(d_min, d_min + extra));
        let wide = width(inputs(d_min, d_min + extra + grow));
        prop_assert!(wide >= narrow - 1e-9);
    }
}
