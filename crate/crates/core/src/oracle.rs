//! Quadratic-time reference attention.
//!
//! Everything here materializes the full `n_q x n_k` weight matrix. These
//! routines are the ground truth the linear path is checked against.

use serde::{Deserialize, Serialize};

use crate::error::{AttnError, Result};
use crate::linear::FeatureMap;
use crate::numcore::{layer_norm_rows, Matrix, DEFAULT_EPSILON};

/// Highest Taylor order the quadratic oracle accepts.
pub const MAX_ORACLE_ORDER: usize = 8;

/// Row normalizers with magnitude below this are reported as degenerate.
pub const NORMALIZER_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Extra score damping; scores are divided by `alpha * sqrt(d_k)`.
    pub alpha: f64,
    /// Query/key width.
    pub d_k: usize,
    /// Value width.
    pub d_v: usize,
    /// Taylor order of the exponential approximation.
    pub order: usize,
    /// Layer-norm epsilon.
    pub epsilon: f64,
    /// Drop the constant term of the expansion from weights and normalizers.
    pub subtract_one: bool,
    /// Position `i` only attends to keys `j <= i`.
    pub causal: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig::new(16, 16)
    }
}

impl AttentionConfig {
    /// alpha = 3, second order, epsilon = 1e-5, no subtract-one, bidirectional.
    pub fn new(d_k: usize, d_v: usize) -> Self {
        AttentionConfig {
            alpha: 3.0,
            d_k,
            d_v,
            order: 2,
            epsilon: DEFAULT_EPSILON,
            subtract_one: false,
            causal: false,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_subtract_one(mut self, subtract_one: bool) -> Self {
        self.subtract_one = subtract_one;
        self
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    /// `1 / (alpha * sqrt(d_k))`, the factor applied to raw dot products.
    pub fn score_scale(&self) -> f64 {
        1.0 / (self.alpha * (self.d_k as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(AttnError::InvalidConfig(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(AttnError::InvalidConfig(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.d_k == 0 {
            return Err(AttnError::InvalidConfig("d_k must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn check_shapes(
        &self,
        op: &'static str,
        q: &Matrix,
        k: &Matrix,
        v: Option<&Matrix>,
    ) -> Result<()> {
        self.validate()?;
        if q.cols() != self.d_k {
            return Err(dim(op, "q.cols", q.cols(), "d_k", self.d_k));
        }
        if k.cols() != self.d_k {
            return Err(dim(op, "k.cols", k.cols(), "d_k", self.d_k));
        }
        if let Some(v) = v {
            if v.rows() != k.rows() {
                return Err(dim(op, "v.rows", v.rows(), "k.rows", k.rows()));
            }
            if v.cols() != self.d_v {
                return Err(dim(op, "v.cols", v.cols(), "d_v", self.d_v));
            }
        }
        Ok(())
    }
}

fn dim(op: &'static str, a: &str, av: usize, b: &str, bv: usize) -> AttnError {
    AttnError::DimensionMismatch {
        op,
        left: format!("{a}={av}"),
        right: format!("{b}={bv}"),
    }
}

/// Summary of the un-normalized weights produced by a Taylor approximation.
/// Masked (causal) entries are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub min_weight: f64,
    pub min_row_sum: f64,
    pub negative_weight_count: usize,
    pub negative_row_sum_count: usize,
}

impl WeightDiagnostics {
    fn empty() -> Self {
        WeightDiagnostics {
            min_weight: f64::INFINITY,
            min_row_sum: f64::INFINITY,
            negative_weight_count: 0,
            negative_row_sum_count: 0,
        }
    }
}

/// Number of keys visible from query row `i`.
#[inline]
pub(crate) fn visible_keys(i: usize, n_k: usize, causal: bool) -> usize {
    if causal {
        (i + 1).min(n_k)
    } else {
        n_k
    }
}

/// `sum_{p <= order} x^p / p!`.
#[inline]
pub fn taylor_exp(x: f64, order: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for p in 1..=order {
        term *= x / p as f64;
        sum += term;
    }
    sum
}

/// Applies the truncated exponential series to every entry. Order 0 gives an
/// all-ones matrix. The constant term is always included.
pub fn taylor_exp_elementwise(s: &Matrix, order: usize) -> Matrix {
    s.map(|x| taylor_exp(x, order))
}

/// Layer-normalized, scaled scores `LN(q) LN(k)^T / (alpha sqrt(d_k))`.
pub fn scaled_scores(q: &Matrix, k: &Matrix, cfg: &AttentionConfig) -> Result<Matrix> {
    cfg.check_shapes("scaled_scores", q, k, None)?;
    let qn = layer_norm_rows(q, cfg.epsilon)?;
    let kn = layer_norm_rows(k, cfg.epsilon)?;
    scores_from_normalized(&qn, &kn, cfg)
}

/// Same as [`scaled_scores`] but takes already normalized queries and keys.
pub fn scores_from_normalized(
    q_tilde: &Matrix,
    k_tilde: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    cfg.check_shapes("scaled_scores", q_tilde, k_tilde, None)?;
    let scale = cfg.score_scale();
    let mut s = q_tilde.matmul_transposed(k_tilde)?;
    for x in s.as_mut_slice() {
        *x *= scale;
    }
    Ok(s)
}

/// Row-wise softmax of the scaled scores. Masked entries are exactly zero.
pub fn softmax_weights(q: &Matrix, k: &Matrix, cfg: &AttentionConfig) -> Result<Matrix> {
    let mut s = scaled_scores(q, k, cfg)?;
    let n_k = s.cols();
    for i in 0..s.rows() {
        let visible = visible_keys(i, n_k, cfg.causal);
        if visible == 0 {
            return Err(AttnError::DegenerateNormalizer {
                op: "softmax_attention",
                row: i,
                value: 0.0,
            });
        }
        let row = s.row_mut(i);
        let max = row[..visible]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in &mut row[..visible] {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in &mut row[..visible] {
            *x /= total;
        }
        row[visible..].fill(0.0);
    }
    Ok(s)
}

/// Exact softmax attention over layer-normalized, scaled scores.
pub fn softmax_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    cfg.check_shapes("softmax_attention", q, k, Some(v))?;
    let w = softmax_weights(q, k, cfg)?;
    w.matmul(v)
}

/// Row-normalized Taylor weights plus diagnostics over the raw weights.
pub fn taylor_weights(
    q: &Matrix,
    k: &Matrix,
    cfg: &AttentionConfig,
) -> Result<(Matrix, WeightDiagnostics)> {
    cfg.check_shapes("taylor_attention_quadratic", q, k, None)?;
    let qn = layer_norm_rows(q, cfg.epsilon)?;
    let kn = layer_norm_rows(k, cfg.epsilon)?;
    taylor_weights_from_normalized(&qn, &kn, cfg)
}

/// [`taylor_weights`] on already normalized queries and keys.
pub fn taylor_weights_from_normalized(
    q_tilde: &Matrix,
    k_tilde: &Matrix,
    cfg: &AttentionConfig,
) -> Result<(Matrix, WeightDiagnostics)> {
    const OP: &str = "taylor_attention_quadratic";
    if cfg.order > MAX_ORACLE_ORDER {
        return Err(AttnError::InvalidConfig(format!(
            "oracle supports Taylor orders 0..={MAX_ORACLE_ORDER}, got {}",
            cfg.order
        )));
    }
    let s = scores_from_normalized(q_tilde, k_tilde, cfg)?;
    let mut w = taylor_exp_elementwise(&s, cfg.order);
    let n_k = w.cols();
    let mut diag = WeightDiagnostics::empty();

    for i in 0..w.rows() {
        let visible = visible_keys(i, n_k, cfg.causal);
        let row = w.row_mut(i);
        row[visible..].fill(0.0);
        let mut total = 0.0;
        for x in &mut row[..visible] {
            if cfg.subtract_one {
                *x -= 1.0;
            }
            if *x < 0.0 {
                diag.negative_weight_count += 1;
            }
            diag.min_weight = diag.min_weight.min(*x);
            total += *x;
        }
        if total < 0.0 {
            diag.negative_row_sum_count += 1;
        }
        diag.min_row_sum = diag.min_row_sum.min(total);
        if total.is_nan() || total.abs() < NORMALIZER_GUARD {
            return Err(AttnError::DegenerateNormalizer {
                op: OP,
                row: i,
                value: total,
            });
        }
        for x in &mut row[..visible] {
            *x /= total;
        }
    }
    Ok((w, diag))
}

/// Taylor-approximated attention with the weight matrix materialized.
pub fn taylor_attention_quadratic(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<(Matrix, WeightDiagnostics)> {
    cfg.check_shapes("taylor_attention_quadratic", q, k, Some(v))?;
    let (w, diag) = taylor_weights(q, k, cfg)?;
    Ok((w.matmul(v)?, diag))
}

/// [`taylor_attention_quadratic`] on already normalized queries and keys,
/// skipping the internal layer norm.
pub fn taylor_attention_quadratic_from_normalized(
    q_tilde: &Matrix,
    k_tilde: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<(Matrix, WeightDiagnostics)> {
    cfg.check_shapes("taylor_attention_quadratic", q_tilde, k_tilde, Some(v))?;
    let (w, diag) = taylor_weights_from_normalized(q_tilde, k_tilde, cfg)?;
    Ok((w.matmul(v)?, diag))
}

/// Explicit `phi(Q) phi(K)^T` weights, row-normalized. Reference for the
/// first-order linear baseline.
pub fn feature_map_weights(
    q: &Matrix,
    k: &Matrix,
    fmap: FeatureMap,
    causal: bool,
) -> Result<Matrix> {
    const OP: &str = "first_order_linear_attention";
    if q.cols() != k.cols() {
        return Err(AttnError::shapes(OP, q.shape(), k.shape()));
    }
    let mut w = fmap
        .apply_matrix(q)
        .matmul_transposed(&fmap.apply_matrix(k))?;
    let n_k = w.cols();
    for i in 0..w.rows() {
        let visible = visible_keys(i, n_k, causal);
        let row = w.row_mut(i);
        row[visible..].fill(0.0);
        let total: f64 = row[..visible].iter().sum();
        if total.is_nan() || total.abs() < NORMALIZER_GUARD {
            return Err(AttnError::DegenerateNormalizer {
                op: OP,
                row: i,
                value: total,
            });
        }
        for x in &mut row[..visible] {
            *x /= total;
        }
    }
    Ok(w)
}
