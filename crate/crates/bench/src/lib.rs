//! Shared workloads for the criterion benchmarks.

use taylorattn::{generate_qkv, AttentionConfig, Matrix};

/// Seeded Q, K, V for one benchmark point.
pub struct Workload {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub cfg: AttentionConfig,
}

impl Workload {
    pub fn new(n: usize, d_k: usize, d_v: usize) -> Self {
        let (q, k, v) = generate_qkv(0, n, d_k, d_v);
        Workload {
            q,
            k,
            v,
            cfg: AttentionConfig::new(d_k, d_v),
        }
    }

    pub fn causal(mut self) -> Self {
        self.cfg = self.cfg.with_causal(true);
        self
    }
}

/// Sequence lengths swept by the scaling groups.
pub const SEQ_LENGTHS: [usize; 4] = [256, 512, 1024, 2048];

/// Key widths swept at fixed sequence length.
pub const KEY_WIDTHS: [usize; 4] = [8, 16, 32, 64];
