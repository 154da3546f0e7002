use std::ops::{Add, AddAssign};

use crate::error::{AttnError, Result};
use crate::numcore::Matrix;

/// Position of the unordered pair `{m, l}` in upper-triangle storage.
#[inline]
pub fn pair_index(m: usize, l: usize, d_k: usize) -> usize {
    let (a, b) = if m <= l { (m, l) } else { (l, m) };
    a * (2 * d_k - a + 1) / 2 + (b - a)
}

#[inline]
pub fn pair_count(d_k: usize) -> usize {
    d_k * (d_k + 1) / 2
}

/// Key/value moment sums that stand in for the attention matrix.
///
/// For aggregated pairs `(k_j, v_j)`:
///
/// * `t0 = sum v_j`, `t1[m] = sum k_j[m] v_j`, `t2[m,l] = sum k_j[m] k_j[l] v_j`
/// * `z1[m] = sum k_j[m]`, `z2[m,l] = sum k_j[m] k_j[l]`
///
/// `t2` and `z2` are symmetric in `(m, l)` and only the `m <= l` half is
/// stored.
#[derive(Debug, Clone, PartialEq)]
pub struct KvSummary {
    d_k: usize,
    d_v: usize,
    n: usize,
    t0: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
}

impl KvSummary {
    /// The summary of the empty set.
    pub fn new(d_k: usize, d_v: usize) -> Self {
        let pairs = pair_count(d_k);
        KvSummary {
            d_k,
            d_v,
            n: 0,
            t0: vec![0.0; d_v],
            t1: vec![0.0; d_k * d_v],
            t2: vec![0.0; pairs * d_v],
            z1: vec![0.0; d_k],
            z2: vec![0.0; pairs],
        }
    }

    /// One pass over the rows of `k_tilde` and `v`, accumulating in row order.
    /// The keys must already be layer-normalized.
    pub fn build(k_tilde: &Matrix, v: &Matrix) -> Result<Self> {
        if k_tilde.rows() != v.rows() {
            return Err(AttnError::shapes(
                "build_kv_summary",
                k_tilde.shape(),
                v.shape(),
            ));
        }
        let mut s = KvSummary::new(k_tilde.cols(), v.cols());
        for (k, val) in k_tilde.iter_rows().zip(v.iter_rows()) {
            s.push(k, val);
        }
        Ok(s)
    }

    /// Folds one key/value pair into the sums.
    pub fn push(&mut self, k: &[f64], v: &[f64]) {
        debug_assert_eq!(k.len(), self.d_k);
        debug_assert_eq!(v.len(), self.d_v);
        let d_v = self.d_v;
        self.n += 1;
        axpy(&mut self.t0, 1.0, v);
        for (m, &km) in k.iter().enumerate() {
            self.z1[m] += km;
            axpy(&mut self.t1[m * d_v..(m + 1) * d_v], km, v);
        }
        let mut p = 0;
        for m in 0..self.d_k {
            for l in m..self.d_k {
                let c = k[m] * k[l];
                self.z2[p] += c;
                axpy(&mut self.t2[p * d_v..(p + 1) * d_v], c, v);
                p += 1;
            }
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    /// Number of aggregated pairs.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t0(&self) -> &[f64] {
        &self.t0
    }

    pub fn t1(&self, m: usize) -> &[f64] {
        &self.t1[m * self.d_v..(m + 1) * self.d_v]
    }

    /// `t2[m, l]`; symmetric in its arguments.
    pub fn t2(&self, m: usize, l: usize) -> &[f64] {
        let p = pair_index(m, l, self.d_k);
        &self.t2[p * self.d_v..(p + 1) * self.d_v]
    }

    pub fn z1(&self) -> &[f64] {
        &self.z1
    }

    /// `z2[m, l]`; symmetric in its arguments.
    pub fn z2(&self, m: usize, l: usize) -> f64 {
        self.z2[pair_index(m, l, self.d_k)]
    }

    pub(crate) fn t1_flat(&self) -> &[f64] {
        &self.t1
    }

    pub(crate) fn t2_flat(&self) -> &[f64] {
        &self.t2
    }

    pub(crate) fn z2_flat(&self) -> &[f64] {
        &self.z2
    }

    /// Floats held by a summary of this shape, counting `n` as one.
    pub fn float_count(d_k: usize, d_v: usize) -> usize {
        pair_count(d_k) * (d_v + 1) + d_k * (d_v + 1) + d_v + 1
    }

    fn check_compatible(&self, other: &KvSummary) {
        assert!(
            self.d_k == other.d_k && self.d_v == other.d_v,
            "summary shapes differ: ({}, {}) vs ({}, {})",
            self.d_k,
            self.d_v,
            other.d_k,
            other.d_v
        );
    }
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, &xi) in dst.iter_mut().zip(x) {
        *d += a * xi;
    }
}

impl AddAssign<&KvSummary> for KvSummary {
    /// Merges the sums of a disjoint set of pairs. Panics on shape mismatch.
    fn add_assign(&mut self, rhs: &KvSummary) {
        self.check_compatible(rhs);
        self.n += rhs.n;
        for (a, b) in [
            (&mut self.t0, &rhs.t0),
            (&mut self.t1, &rhs.t1),
            (&mut self.t2, &rhs.t2),
            (&mut self.z1, &rhs.z1),
            (&mut self.z2, &rhs.z2),
        ] {
            axpy(a, 1.0, b);
        }
    }
}

impl Add<&KvSummary> for KvSummary {
    type Output = KvSummary;

    fn add(mut self, rhs: &KvSummary) -> KvSummary {
        self += rhs;
        self
    }
}

/// Free-function form of [`KvSummary::build`].
pub fn build_kv_summary(k_tilde: &Matrix, v: &Matrix) -> Result<KvSummary> {
    KvSummary::build(k_tilde, v)
}
