//! Softmax attention approximated by a truncated Taylor series of the
//! exponential, evaluated in time linear in the sequence length.
//!
//! * [`numcore`]: dense matrices, seeded Gaussian data, layer normalization.
//! * [`oracle`]: quadratic reference implementations (exact softmax and
//!   Taylor attention of any order up to 8).
//! * [`linear`]: the linear-time path built on [`KvSummary`], its causal
//!   streaming form and a first-order feature-map baseline.
//! * [`analysis`]: expansion curves, error reports and scaling benchmarks.

pub mod analysis;
pub mod error;
pub mod linear;
pub mod numcore;
pub mod oracle;

pub use analysis::{
    compare_methods, dk_scaling_benchmark, generate_qkv, scaling_benchmark, taylor_curve_data,
    ApproxReport, BenchOptions, BenchRecord, BenchReport, CurveTable, Method, Sweep,
};
pub use error::{AttnError, Result};
pub use linear::{
    build_kv_summary, first_order_linear_attention, linear_taylor_attention,
    linear_taylor_attention_causal, linear_taylor_attention_with, Execution, FeatureMap, KvSummary,
};
pub use numcore::{frobenius_distance, layer_norm_rows, randn_matrix, Matrix, RngState};
pub use oracle::{
    scaled_scores, softmax_attention, taylor_attention_quadratic, taylor_exp_elementwise,
    AttentionConfig, WeightDiagnostics,
};
