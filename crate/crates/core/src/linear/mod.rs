//! Linear-time attention.
//!
//! The second-order Taylor weights `1 + s + s^2/2` with `s = q.k / (alpha sqrt d)`
//! expand, after the multinomial identity `(q.k)^2 = sum_{m,l} q_m q_l k_m k_l`,
//! into contractions of each query against a fixed [`KvSummary`]. Building the
//! summary and evaluating every query both cost `O(n d_k^2 d_v)`; the
//! `n x n` weight matrix is never formed.

mod summary;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use summary::{build_kv_summary, pair_count, pair_index, KvSummary};

use crate::error::{AttnError, Result};
use crate::numcore::{dot, layer_norm_rows, Matrix};
use crate::oracle::{AttentionConfig, NORMALIZER_GUARD};

/// Highest Taylor order with a linear-time evaluation.
pub const MAX_LINEAR_ORDER: usize = 2;

/// How query rows are evaluated against a summary. Both modes produce
/// bit-identical output since every row is reduced in the same order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

/// Per-query coefficients of the truncated expansion.
#[derive(Debug, Clone, Copy)]
struct Coefficients {
    constant: bool,
    c1: Option<f64>,
    c2: Option<f64>,
}

impl Coefficients {
    fn from_config(cfg: &AttentionConfig) -> Self {
        let d = cfg.d_k as f64;
        Coefficients {
            constant: !cfg.subtract_one,
            c1: (cfg.order >= 1).then(|| 1.0 / (cfg.alpha * d.sqrt())),
            c2: (cfg.order >= 2).then(|| 1.0 / (2.0 * cfg.alpha * cfg.alpha * d)),
        }
    }
}

/// Writes the numerator for query `q` into `out` and returns the normalizer.
fn contract(s: &KvSummary, coef: Coefficients, q: &[f64], out: &mut [f64]) -> f64 {
    let d_k = s.d_k();
    let d_v = s.d_v();
    let mut den = 0.0;
    if coef.constant {
        out.copy_from_slice(s.t0());
        den = s.n() as f64;
    } else {
        out.fill(0.0);
    }
    if let Some(c1) = coef.c1 {
        let t1 = s.t1_flat();
        for (m, &qm) in q.iter().enumerate() {
            let w = c1 * qm;
            for (o, &t) in out.iter_mut().zip(&t1[m * d_v..(m + 1) * d_v]) {
                *o += w * t;
            }
        }
        den += c1 * dot(q, s.z1());
    }
    if let Some(c2) = coef.c2 {
        let t2 = s.t2_flat();
        let z2 = s.z2_flat();
        let mut p = 0;
        let mut den2 = 0.0;
        for m in 0..d_k {
            let qm = c2 * q[m];
            for (l, &ql) in q.iter().enumerate().skip(m) {
                // off-diagonal pairs stand for both (m, l) and (l, m)
                let w = if l == m { qm * ql } else { 2.0 * qm * ql };
                for (o, &t) in out.iter_mut().zip(&t2[p * d_v..(p + 1) * d_v]) {
                    *o += w * t;
                }
                den2 += w * z2[p];
                p += 1;
            }
        }
        den += den2;
    }
    den
}

fn finish_row(op: &'static str, row: usize, out: &mut [f64], den: f64) -> Result<()> {
    if den.is_nan() || den.abs() < NORMALIZER_GUARD {
        return Err(AttnError::DegenerateNormalizer {
            op,
            row,
            value: den,
        });
    }
    for o in out.iter_mut() {
        *o /= den;
    }
    Ok(())
}

/// Evaluates every row of `q_tilde` against a fixed summary.
pub fn evaluate_summary(
    summary: &KvSummary,
    q_tilde: &Matrix,
    cfg: &AttentionConfig,
    exec: Execution,
) -> Result<Matrix> {
    const OP: &str = "linear_taylor_attention";
    check_linear_order(cfg)?;
    if q_tilde.cols() != summary.d_k() {
        return Err(AttnError::DimensionMismatch {
            op: OP,
            left: format!("q.cols={}", q_tilde.cols()),
            right: format!("summary d_k={}", summary.d_k()),
        });
    }
    let coef = Coefficients::from_config(cfg);
    let d_v = summary.d_v();
    let mut out = Matrix::zeros(q_tilde.rows(), d_v);
    if d_v == 0 {
        // Still surface degenerate normalizers.
        let mut scratch = [];
        for i in 0..q_tilde.rows() {
            let den = contract(summary, coef, q_tilde.row(i), &mut scratch);
            finish_row(OP, i, &mut scratch, den)?;
        }
        return Ok(out);
    }
    let eval = |(i, dst): (usize, &mut [f64])| {
        let den = contract(summary, coef, q_tilde.row(i), dst);
        finish_row(OP, i, dst, den)
    };
    match exec {
        Execution::Sequential => out
            .as_mut_slice()
            .chunks_mut(d_v)
            .enumerate()
            .try_for_each(eval)?,
        Execution::Parallel => out
            .as_mut_slice()
            .par_chunks_mut(d_v)
            .enumerate()
            .try_for_each(eval)?,
    }
    Ok(out)
}

fn check_linear_order(cfg: &AttentionConfig) -> Result<()> {
    if cfg.order > MAX_LINEAR_ORDER {
        return Err(AttnError::InvalidConfig(format!(
            "linear path supports Taylor orders 0..={MAX_LINEAR_ORDER}, got {}",
            cfg.order
        )));
    }
    Ok(())
}

/// Linear-time Taylor attention. Layer-normalizes `q` and `k`, builds the
/// summary once and contracts each query against it. Dispatches to
/// [`linear_taylor_attention_causal`] when `cfg.causal` is set.
pub fn linear_taylor_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    linear_taylor_attention_with(q, k, v, cfg, Execution::Sequential)
}

pub fn linear_taylor_attention_with(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
    exec: Execution,
) -> Result<Matrix> {
    cfg.check_shapes("linear_taylor_attention", q, k, Some(v))?;
    check_linear_order(cfg)?;
    let qn = layer_norm_rows(q, cfg.epsilon)?;
    let kn = layer_norm_rows(k, cfg.epsilon)?;
    if cfg.causal {
        causal_from_normalized(&qn, &kn, v, cfg)
    } else {
        let summary = KvSummary::build(&kn, v)?;
        evaluate_summary(&summary, &qn, cfg, exec)
    }
}

/// [`linear_taylor_attention`] on already normalized queries and keys.
pub fn linear_taylor_attention_from_normalized(
    q_tilde: &Matrix,
    k_tilde: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    cfg.check_shapes("linear_taylor_attention", q_tilde, k_tilde, Some(v))?;
    check_linear_order(cfg)?;
    if cfg.causal {
        causal_from_normalized(q_tilde, k_tilde, v, cfg)
    } else {
        let summary = KvSummary::build(k_tilde, v)?;
        evaluate_summary(&summary, q_tilde, cfg, Execution::Sequential)
    }
}

/// Causal linear-time Taylor attention: a single pass that folds pair `i`
/// into a running summary and then evaluates query `i` against it.
/// Ignores `cfg.causal`.
pub fn linear_taylor_attention_causal(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    cfg.check_shapes("linear_taylor_attention_causal", q, k, Some(v))?;
    check_linear_order(cfg)?;
    let qn = layer_norm_rows(q, cfg.epsilon)?;
    let kn = layer_norm_rows(k, cfg.epsilon)?;
    causal_from_normalized(&qn, &kn, v, cfg)
}

fn causal_from_normalized(
    q_tilde: &Matrix,
    k_tilde: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    const OP: &str = "linear_taylor_attention_causal";
    if q_tilde.rows() != k_tilde.rows() {
        return Err(AttnError::DimensionMismatch {
            op: OP,
            left: format!("q.rows={}", q_tilde.rows()),
            right: format!("k.rows={}", k_tilde.rows()),
        });
    }
    let coef = Coefficients::from_config(cfg);
    let mut summary = KvSummary::new(cfg.d_k, cfg.d_v);
    let mut out = Matrix::zeros(q_tilde.rows(), cfg.d_v);
    for i in 0..q_tilde.rows() {
        summary.push(k_tilde.row(i), v.row(i));
        let dst = out.row_mut(i);
        let den = contract(&summary, coef, q_tilde.row(i), dst);
        finish_row(OP, i, dst, den)?;
    }
    Ok(out)
}

/// Positive feature map for first-order linear attention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `x + 1` for `x >= 0`, `exp(x)` otherwise. Always positive.
    #[default]
    EluPlusOne,
    /// `max(x, 0)`. Can yield zero normalizers.
    IdentityPositiveClip,
}

impl FeatureMap {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            FeatureMap::EluPlusOne => {
                if x >= 0.0 {
                    x + 1.0
                } else {
                    x.exp()
                }
            }
            FeatureMap::IdentityPositiveClip => x.max(0.0),
        }
    }

    pub fn apply_matrix(self, m: &Matrix) -> Matrix {
        m.map(|x| self.apply(x))
    }
}

fn check_first_order_shapes(op: &'static str, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(AttnError::shapes(op, q.shape(), k.shape()));
    }
    if k.rows() != v.rows() {
        return Err(AttnError::shapes(op, k.shape(), v.shape()));
    }
    Ok(())
}

/// First-order linear attention `phi(q_i)^T (sum_j phi(k_j) v_j^T) / phi(q_i)^T sum_j phi(k_j)`
/// on raw inputs (no layer norm, no scaling).
pub fn first_order_linear_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    fmap: FeatureMap,
) -> Result<Matrix> {
    const OP: &str = "first_order_linear_attention";
    check_first_order_shapes(OP, q, k, v)?;
    let fk = fmap.apply_matrix(k);
    // phi(K)^T V and phi(K)^T 1, accumulated in key order
    let d_k = k.cols();
    let d_v = v.cols();
    let mut kv = vec![0.0; d_k * d_v];
    let mut z = vec![0.0; d_k];
    for (kr, vr) in fk.iter_rows().zip(v.iter_rows()) {
        accumulate_outer(&mut kv, &mut z, kr, vr);
    }
    let mut out = Matrix::zeros(q.rows(), d_v);
    let mut fq = vec![0.0; d_k];
    for i in 0..q.rows() {
        for (f, &x) in fq.iter_mut().zip(q.row(i)) {
            *f = fmap.apply(x);
        }
        let dst = out.row_mut(i);
        let den = project(&kv, &z, &fq, dst);
        finish_row(OP, i, dst, den)?;
    }
    Ok(out)
}

/// Causal form of [`first_order_linear_attention`] using running sums.
pub fn first_order_linear_attention_causal(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    fmap: FeatureMap,
) -> Result<Matrix> {
    const OP: &str = "first_order_linear_attention_causal";
    check_first_order_shapes(OP, q, k, v)?;
    if q.rows() != k.rows() {
        return Err(AttnError::shapes(OP, q.shape(), k.shape()));
    }
    let d_k = k.cols();
    let d_v = v.cols();
    let mut kv = vec![0.0; d_k * d_v];
    let mut z = vec![0.0; d_k];
    let mut fk = vec![0.0; d_k];
    let mut fq = vec![0.0; d_k];
    let mut out = Matrix::zeros(q.rows(), d_v);
    for i in 0..q.rows() {
        for (f, &x) in fk.iter_mut().zip(k.row(i)) {
            *f = fmap.apply(x);
        }
        accumulate_outer(&mut kv, &mut z, &fk, v.row(i));
        for (f, &x) in fq.iter_mut().zip(q.row(i)) {
            *f = fmap.apply(x);
        }
        let dst = out.row_mut(i);
        let den = project(&kv, &z, &fq, dst);
        finish_row(OP, i, dst, den)?;
    }
    Ok(out)
}

fn accumulate_outer(kv: &mut [f64], z: &mut [f64], k: &[f64], v: &[f64]) {
    let d_v = v.len();
    for (m, &km) in k.iter().enumerate() {
        z[m] += km;
        for (d, &x) in kv[m * d_v..(m + 1) * d_v].iter_mut().zip(v) {
            *d += km * x;
        }
    }
}

fn project(kv: &[f64], z: &[f64], fq: &[f64], out: &mut [f64]) -> f64 {
    let d_v = out.len();
    out.fill(0.0);
    for (m, &qm) in fq.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(&kv[m * d_v..(m + 1) * d_v]) {
            *o += qm * x;
        }
    }
    dot(fq, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngState;
    use crate::oracle::taylor_attention_quadratic;

    #[test]
    fn hand_evaluated_contraction() {
        // Q~ = [1, 0], K~ = [[1,2],[3,4]], V = I, alpha = 1, d_k = 2:
        // c1 = 1/sqrt2, c2 = 1/4.
        // num = t0 + c1 t1[0] + c2 t2[0,0] = [1,1] + [1,3]/sqrt2 + [1,9]/4
        // den = 2 + c1 z1[0] + c2 z2[0,0] = 2 + 4/sqrt2 + 10/4
        let q = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let k = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let v = Matrix::identity(2);
        let cfg = AttentionConfig::new(2, 2).with_alpha(1.0);
        let out = linear_taylor_attention_from_normalized(&q, &k, &v, &cfg).unwrap();
        let r2 = 2f64.sqrt();
        let den = 2.0 + 4.0 / r2 + 2.5;
        let expected = [(1.0 + 1.0 / r2 + 0.25) / den, (1.0 + 3.0 / r2 + 2.25) / den];
        for j in 0..2 {
            assert!((out[(0, j)] - expected[j]).abs() < 1e-15, "{out:?}");
        }
        // the same instance through explicit weights: s = [1, 3] / sqrt2
        let w: Vec<f64> = [1.0 / r2, 3.0 / r2]
            .iter()
            .map(|s| 1.0 + s + s * s / 2.0)
            .collect();
        let tot = w[0] + w[1];
        assert!((out[(0, 0)] - w[0] / tot).abs() < 1e-15);
        assert!((out[(0, 1)] - w[1] / tot).abs() < 1e-15);
    }

    #[test]
    fn matches_oracle_on_random_instance() {
        let mut rng = RngState::new(17);
        let q = rng.randn_matrix(20, 4);
        let k = rng.randn_matrix(20, 4);
        let v = rng.randn_matrix(20, 3);
        for order in 0..=2 {
            for causal in [false, true] {
                let cfg = AttentionConfig::new(4, 3)
                    .with_order(order)
                    .with_causal(causal);
                let lin = linear_taylor_attention(&q, &k, &v, &cfg).unwrap();
                let (quad, _) = taylor_attention_quadratic(&q, &k, &v, &cfg).unwrap();
                assert!(lin.frobenius_distance(&quad).unwrap() <= 1e-9);
            }
        }
    }

    #[test]
    fn parallel_is_bit_identical() {
        let mut rng = RngState::new(3);
        let q = rng.randn_matrix(300, 8);
        let k = rng.randn_matrix(300, 8);
        let v = rng.randn_matrix(300, 5);
        let cfg = AttentionConfig::new(8, 5);
        let a = linear_taylor_attention_with(&q, &k, &v, &cfg, Execution::Sequential).unwrap();
        let b = linear_taylor_attention_with(&q, &k, &v, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn order_three_is_rejected() {
        let m = Matrix::zeros(2, 2);
        let cfg = AttentionConfig::new(2, 2).with_order(3);
        assert!(matches!(
            linear_taylor_attention(&m, &m, &m, &cfg),
            Err(AttnError::InvalidConfig(_))
        ));
    }

    #[test]
    fn degenerate_denominator_names_row() {
        let q = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let cfg = AttentionConfig::new(2, 1)
            .with_order(0)
            .with_subtract_one(true);
        match linear_taylor_attention(&q, &q, &Matrix::zeros(2, 1), &cfg) {
            Err(AttnError::DegenerateNormalizer { row, op, .. }) => {
                assert_eq!(row, 0);
                assert_eq!(op, "linear_taylor_attention");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn causal_first_row_is_first_value() {
        let mut rng = RngState::new(12);
        let q = rng.randn_matrix(6, 3);
        let k = rng.randn_matrix(6, 3);
        let v = rng.randn_matrix(6, 2);
        let out = linear_taylor_attention_causal(&q, &k, &v, &AttentionConfig::new(3, 2)).unwrap();
        for j in 0..2 {
            assert!((out[(0, j)] - v[(0, j)]).abs() < 1e-12);
        }
        let mismatch = rng.randn_matrix(5, 3);
        assert!(
            linear_taylor_attention_causal(&mismatch, &k, &v, &AttentionConfig::new(3, 2)).is_err()
        );
    }

    #[test]
    fn feature_maps() {
        assert_eq!(FeatureMap::EluPlusOne.apply(0.0), 1.0);
        assert_eq!(FeatureMap::EluPlusOne.apply(2.0), 3.0);
        let tiny = FeatureMap::EluPlusOne.apply(-20.0);
        assert!(tiny > 0.0 && (tiny - (-20f64).exp()).abs() == 0.0);
        assert_eq!(FeatureMap::IdentityPositiveClip.apply(-1.0), 0.0);
        assert_eq!(FeatureMap::IdentityPositiveClip.apply(1.5), 1.5);
    }

    #[test]
    fn clipped_map_can_hit_zero_normalizer() {
        let q = Matrix::from_rows(&[[-1.0, -2.0]]).unwrap();
        let k = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let v = Matrix::from_rows(&[[3.0]]).unwrap();
        let err = first_order_linear_attention(&q, &k, &v, FeatureMap::IdentityPositiveClip);
        assert!(matches!(
            err,
            Err(AttnError::DegenerateNormalizer { row: 0, .. })
        ));
    }

    #[test]
    fn first_order_single_key() {
        let mut rng = RngState::new(21);
        let q = rng.randn_matrix(4, 3);
        let k = rng.randn_matrix(1, 3);
        let v = rng.randn_matrix(1, 2);
        let out = first_order_linear_attention(&q, &k, &v, FeatureMap::EluPlusOne).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                assert!((out[(i, j)] - v[(0, j)]).abs() < 1e-12);
            }
        }
    }
}
