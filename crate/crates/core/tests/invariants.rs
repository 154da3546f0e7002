use proptest::prelude::*;
use taylorattn::oracle::{softmax_weights, taylor_weights};
use taylorattn::{
    layer_norm_rows, linear_taylor_attention, linear_taylor_attention_causal, softmax_attention,
    taylor_attention_quadratic, AttentionConfig, Matrix, RngState,
};

fn random(seed: u64, n: usize, d_k: usize, d_v: usize) -> (Matrix, Matrix, Matrix) {
    taylorattn::generate_qkv(seed, n, d_k, d_v)
}

/// Independent softmax attention: own layer norm, own score loop, no max shift.
fn reference_softmax(q: &Matrix, k: &Matrix, v: &Matrix, alpha: f64, eps: f64) -> Vec<Vec<f64>> {
    fn ln(r: &[f64], eps: f64) -> Vec<f64> {
        let n = r.len() as f64;
        let mu: f64 = r.iter().sum::<f64>() / n;
        let var: f64 = r.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
        r.iter().map(|x| (x - mu) / (var + eps).sqrt()).collect()
    }
    let d = q.cols() as f64;
    (0..q.rows())
        .map(|i| {
            let qi = ln(q.row(i), eps);
            let e: Vec<f64> = (0..k.rows())
                .map(|j| {
                    let kj = ln(k.row(j), eps);
                    let s: f64 = qi.iter().zip(&kj).map(|(a, b)| a * b).sum();
                    (s / (alpha * d.sqrt())).exp()
                })
                .collect();
            let z: f64 = e.iter().sum();
            (0..v.cols())
                .map(|c| (0..k.rows()).map(|j| e[j] / z * v[(j, c)]).sum())
                .collect()
        })
        .collect()
}

#[test]
fn softmax_matches_independent_reference() {
    let (q, k, v) = random(0, 4, 3, 3);
    let cfg = AttentionConfig::new(3, 3);
    let out = softmax_attention(&q, &k, &v, &cfg).unwrap();
    let want = reference_softmax(&q, &k, &v, 3.0, 1e-5);
    for i in 0..4 {
        for j in 0..3 {
            assert!((out[(i, j)] - want[i][j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn softmax_rows_are_distributions() {
    for seed in 0..20 {
        let (q, k, _) = random(seed, 17, 5, 1);
        for causal in [false, true] {
            let w =
                softmax_weights(&q, &k, &AttentionConfig::new(5, 1).with_causal(causal)).unwrap();
            for i in 0..w.rows() {
                let row = w.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                let visible = if causal { i + 1 } else { row.len() };
                assert!(row[..visible].iter().all(|&x| x > 0.0 && x <= 1.0));
            }
        }
    }
}

#[test]
fn error_shrinks_with_order_at_seed_zero() {
    let (q, k, v) = random(0, 64, 8, 8);
    let cfg = AttentionConfig::new(8, 8);
    let exact = softmax_attention(&q, &k, &v, &cfg).unwrap();
    let err = |o: usize| {
        let (out, _) = taylor_attention_quadratic(&q, &k, &v, &cfg.with_order(o)).unwrap();
        out.frobenius_distance(&exact).unwrap()
    };
    let (e1, e2, e4) = (err(1), err(2), err(4));
    assert!(e1 >= e2 && e2 >= e4, "{e1:e} {e2:e} {e4:e}");
}

fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = RngState::new(seed ^ 0xABCD);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        p.swap(i, j);
    }
    p
}

#[test]
fn permutation_equivariance() {
    for seed in 0..20 {
        let n = 12;
        let (q, k, v) = random(seed, n, 4, 3);
        let cfg = AttentionConfig::new(4, 3);
        let p = permutation(seed, n);
        let (kp, vp, qp) = (k.select_rows(&p), v.select_rows(&p), q.select_rows(&p));

        let base = softmax_attention(&q, &k, &v, &cfg).unwrap();
        let keys_moved = softmax_attention(&q, &kp, &vp, &cfg).unwrap();
        assert!(base.frobenius_distance(&keys_moved).unwrap() <= 1e-12);
        let queries_moved = softmax_attention(&qp, &k, &v, &cfg).unwrap();
        assert!(
            base.select_rows(&p)
                .frobenius_distance(&queries_moved)
                .unwrap()
                <= 1e-12
        );

        let lin = linear_taylor_attention(&q, &k, &v, &cfg).unwrap();
        let lin_keys = linear_taylor_attention(&q, &kp, &vp, &cfg).unwrap();
        assert!(lin.frobenius_distance(&lin_keys).unwrap() <= 1e-12);
        let (quad, _) = taylor_attention_quadratic(&q, &kp, &vp, &cfg).unwrap();
        assert!(lin.frobenius_distance(&quad).unwrap() <= 1e-12);
    }
}

#[test]
fn layer_norm_makes_outputs_scale_and_shift_invariant() {
    // epsilon negligible against the row variances
    let cfg = AttentionConfig::new(6, 2).with_epsilon(1e-12);
    for seed in 0..20 {
        let (q, k, v) = random(seed, 10, 6, 2);
        let mut rng = RngState::new(seed + 1000);
        let rescale = |m: &Matrix, rng: &mut RngState| {
            let mut out = m.clone();
            for i in 0..m.rows() {
                let a = rng.next_range(0.1, 10.0);
                let c = rng.next_range(-5.0, 5.0);
                out.row_mut(i).iter_mut().for_each(|x| *x = a * *x + c);
            }
            out
        };
        let q2 = rescale(&q, &mut rng);
        let k2 = rescale(&k, &mut rng);
        let s1 = softmax_attention(&q, &k, &v, &cfg).unwrap();
        let s2 = softmax_attention(&q2, &k2, &v, &cfg).unwrap();
        assert!(s1.frobenius_distance(&s2).unwrap() <= 1e-9);
        let l1 = linear_taylor_attention(&q, &k, &v, &cfg).unwrap();
        let l2 = linear_taylor_attention(&q2, &k2, &v, &cfg).unwrap();
        assert!(l1.frobenius_distance(&l2).unwrap() <= 1e-9);
        let sc1 = taylorattn::scaled_scores(&q.scale(5.0), &k, &cfg).unwrap();
        let sc2 = taylorattn::scaled_scores(&q, &k, &cfg).unwrap();
        assert!(sc1.frobenius_distance(&sc2).unwrap() <= 1e-9);
    }
}

#[test]
fn causal_rows_ignore_the_future() {
    for seed in 0..20 {
        let n = 16;
        let (q, k, v) = random(seed, n, 4, 3);
        let cut = (seed as usize % (n - 1)) + 1;
        let (_, junk_k, junk_v) = random(seed + 500, n, 4, 3);
        let mut k2 = k.clone();
        let mut v2 = v.clone();
        for i in cut..n {
            k2.row_mut(i).copy_from_slice(junk_k.row(i));
            v2.row_mut(i).copy_from_slice(junk_v.row(i));
        }
        let cfg = AttentionConfig::new(4, 3).with_causal(true);
        let a = softmax_attention(&q, &k, &v, &cfg).unwrap();
        let b = softmax_attention(&q, &k2, &v2, &cfg).unwrap();
        let (ta, _) = taylor_attention_quadratic(&q, &k, &v, &cfg).unwrap();
        let (tb, _) = taylor_attention_quadratic(&q, &k2, &v2, &cfg).unwrap();
        let la = linear_taylor_attention_causal(&q, &k, &v, &cfg).unwrap();
        let lb = linear_taylor_attention_causal(&q, &k2, &v2, &cfg).unwrap();
        for i in 0..cut {
            assert_eq!(a.row(i), b.row(i));
            assert_eq!(ta.row(i), tb.row(i));
            assert_eq!(la.row(i), lb.row(i));
        }
        // prefix property: truncating the sequence leaves earlier rows bit-identical
        let short = linear_taylor_attention_causal(
            &q.slice_rows(0, cut),
            &k.slice_rows(0, cut),
            &v.slice_rows(0, cut),
            &cfg,
        )
        .unwrap();
        assert_eq!(short, la.slice_rows(0, cut));
    }
}

#[test]
fn order_two_weights_stay_above_half_for_extreme_scores() {
    // Unit-norm-ish layer-normed rows times tiny alpha give scores far from zero.
    for alpha in [1e-3, 1e-2, 0.1, 1.0] {
        let (q, k, _) = random(3, 20, 8, 1);
        let cfg = AttentionConfig::new(8, 1).with_alpha(alpha);
        let (_, diag) = taylor_weights(&q, &k, &cfg).unwrap();
        assert_eq!(diag.negative_weight_count, 0);
        assert!(diag.min_weight >= 0.5);
        assert!(diag.min_row_sum >= 10.0);
    }
}

#[test]
fn odd_orders_go_negative_with_small_alpha() {
    let (q, k, v) = random(4, 16, 8, 2);
    let cfg = AttentionConfig::new(8, 2).with_alpha(0.05);
    let neg = |o| {
        taylor_attention_quadratic(&q, &k, &v, &cfg.with_order(o))
            .map(|r| r.1.negative_weight_count)
            .unwrap_or(usize::MAX)
    };
    assert!(neg(3) >= 1);
    assert!(neg(1) >= 1);
    assert_eq!(neg(2), 0);
    assert_eq!(neg(4), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), a in 1usize..=32, b in 1usize..=32, c in 1usize..=32, d in 1usize..=32) {
        let mut rng = RngState::new(seed);
        let mut uni = |r, c| Matrix::from_fn(r, c, |_, _| rng.next_range(-1.0, 1.0));
        let (x, y, z) = (uni(a, b), uni(b, c), uni(c, d));
        let left = x.matmul(&y).unwrap().matmul(&z).unwrap();
        let right = x.matmul(&y.matmul(&z).unwrap()).unwrap();
        let bound = 1e-9 * (1.0 + x.frobenius_norm() * y.frobenius_norm() * z.frobenius_norm());
        prop_assert!(left.frobenius_distance(&right).unwrap() <= bound);
    }

    #[test]
    fn layer_norm_rows_are_centered(seed in any::<u64>(), rows in 1usize..10, cols in 1usize..40, scale in 1e-3f64..1e3) {
        let m = RngState::new(seed).randn_matrix(rows, cols).scale(scale);
        let out = layer_norm_rows(&m, 1e-5).unwrap();
        for r in out.iter_rows() {
            let mean = r.iter().sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_is_nearly_idempotent(seed in any::<u64>(), rows in 1usize..10, cols in 2usize..40) {
        let m = RngState::new(seed).randn_matrix(rows, cols);
        // the property needs variances well above epsilon
        for r in m.iter_rows() {
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assume!(var > 1e-2);
        }
        let once = layer_norm_rows(&m, 1e-9).unwrap();
        let twice = layer_norm_rows(&once, 1e-9).unwrap();
        prop_assert!(once.max_abs_diff(&twice).unwrap() <= 1e-6);
    }

    #[test]
    fn randn_is_deterministic(seed in any::<u64>(), rows in 0usize..20, cols in 0usize..20) {
        let a = RngState::new(seed).randn_matrix(rows, cols);
        let b = RngState::new(seed).randn_matrix(rows, cols);
        prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn order_two_taylor_is_at_least_half(x in -1e6f64..1e6) {
        prop_assert!(taylorattn::oracle::taylor_exp(x, 2) >= 0.5);
    }
}
