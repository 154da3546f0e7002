//! Expansion curves, approximation error against exact softmax attention,
//! and empirical scaling exponents.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{AttnError, Result};
use crate::linear::{
    first_order_linear_attention, first_order_linear_attention_causal,
    linear_taylor_attention_with, Execution, FeatureMap, KvSummary, MAX_LINEAR_ORDER,
};
use crate::numcore::{Matrix, RngState};
use crate::oracle::{
    feature_map_weights, softmax_attention, softmax_weights, taylor_attention_quadratic,
    taylor_exp, taylor_weights, AttentionConfig, MAX_ORACLE_ORDER,
};

// ---------------------------------------------------------------------------
// Expansion curves

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub exp: f64,
    /// One value per requested order, in request order.
    pub approx: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub orders: Vec<usize>,
    pub points: Vec<CurvePoint>,
}

impl CurveTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["x".to_string(), "exp".to_string()];
        h.extend(self.orders.iter().map(|o| format!("order{o}")));
        h
    }

    /// Header line plus one line per point, shortest round-trip decimals.
    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for p in &self.points {
            s.push_str(&format!("{},{}", p.x, p.exp));
            for v in &p.approx {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Samples `exp(x)` and its truncated series on a uniform grid that includes
/// both endpoints.
pub fn taylor_curve_data(
    x_min: f64,
    x_max: f64,
    points: usize,
    orders: &[usize],
) -> Result<CurveTable> {
    if !x_min.is_finite() || !x_max.is_finite() || x_min >= x_max {
        return Err(AttnError::InvalidArgument(format!(
            "need finite x_min < x_max, got [{x_min}, {x_max}]"
        )));
    }
    if points < 2 {
        return Err(AttnError::InvalidArgument(format!(
            "need at least 2 points, got {points}"
        )));
    }
    if let Some(&o) = orders.iter().find(|&&o| o > MAX_ORACLE_ORDER) {
        return Err(AttnError::InvalidArgument(format!(
            "order {o} exceeds maximum {MAX_ORACLE_ORDER}"
        )));
    }
    let span = x_max - x_min;
    let last = (points - 1) as f64;
    let points = (0..points)
        .map(|i| {
            let x = if i + 1 == points {
                x_max
            } else {
                x_min + span * i as f64 / last
            };
            CurvePoint {
                x,
                exp: x.exp(),
                approx: orders.iter().map(|&o| taylor_exp(x, o)).collect(),
            }
        })
        .collect();
    Ok(CurveTable {
        orders: orders.to_vec(),
        points,
    })
}

// ---------------------------------------------------------------------------
// Methods

/// An attention variant that can be compared or benchmarked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Exact softmax attention (the reference itself).
    Softmax,
    /// Linear-time Taylor attention of the given order (0..=2).
    TaylorLinear(usize),
    /// Quadratic Taylor oracle of the given order (0..=8).
    TaylorQuadratic(usize),
    /// First-order linear attention with the elu+1 feature map.
    FirstOrderRho,
}

impl Method {
    pub fn valid_labels() -> String {
        format!(
            "softmax, taylor_linear_o0..taylor_linear_o{MAX_LINEAR_ORDER}, \
             taylor_quadratic_o0..taylor_quadratic_o{MAX_ORACLE_ORDER}, first_order_rho"
        )
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Taylor order, or 1 for the first-order baseline. `None` for softmax.
    pub fn order(&self) -> Option<usize> {
        match *self {
            Method::Softmax => None,
            Method::TaylorLinear(o) | Method::TaylorQuadratic(o) => Some(o),
            Method::FirstOrderRho => Some(1),
        }
    }

    /// Comma-separated list of labels.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }

    fn config_for(&self, cfg: &AttentionConfig) -> AttentionConfig {
        match *self {
            Method::TaylorLinear(o) | Method::TaylorQuadratic(o) => cfg.with_order(o),
            _ => *cfg,
        }
    }

    /// Runs the method and returns its output.
    pub fn run(
        &self,
        q: &Matrix,
        k: &Matrix,
        v: &Matrix,
        cfg: &AttentionConfig,
        exec: Execution,
    ) -> Result<Matrix> {
        let cfg = self.config_for(cfg);
        match *self {
            Method::Softmax => softmax_attention(q, k, v, &cfg),
            Method::TaylorLinear(_) => linear_taylor_attention_with(q, k, v, &cfg, exec),
            Method::TaylorQuadratic(_) => taylor_attention_quadratic(q, k, v, &cfg).map(|r| r.0),
            Method::FirstOrderRho if cfg.causal => {
                first_order_linear_attention_causal(q, k, v, FeatureMap::EluPlusOne)
            }
            Method::FirstOrderRho => first_order_linear_attention(q, k, v, FeatureMap::EluPlusOne),
        }
    }

    /// Normalized attention weights of the method, always materialized
    /// through a quadratic route.
    pub fn weights(&self, q: &Matrix, k: &Matrix, cfg: &AttentionConfig) -> Result<Matrix> {
        let cfg = self.config_for(cfg);
        match *self {
            Method::Softmax => softmax_weights(q, k, &cfg),
            Method::TaylorLinear(_) | Method::TaylorQuadratic(_) => {
                taylor_weights(q, k, &cfg).map(|r| r.0)
            }
            Method::FirstOrderRho => feature_map_weights(q, k, FeatureMap::EluPlusOne, cfg.causal),
        }
    }

    /// Floats of attention state the method keeps for `n` keys.
    pub fn state_floats(&self, n: usize, d_k: usize, d_v: usize) -> usize {
        match self {
            Method::TaylorLinear(_) => KvSummary::float_count(d_k, d_v),
            Method::FirstOrderRho => d_k * (d_v + 1),
            Method::Softmax | Method::TaylorQuadratic(_) => n * n,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Softmax => f.write_str("softmax"),
            Method::TaylorLinear(o) => write!(f, "taylor_linear_o{o}"),
            Method::TaylorQuadratic(o) => write!(f, "taylor_quadratic_o{o}"),
            Method::FirstOrderRho => f.write_str("first_order_rho"),
        }
    }
}

impl FromStr for Method {
    type Err = AttnError;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || AttnError::UnknownMethod {
            label: s.to_string(),
            valid: Method::valid_labels(),
        };
        let order = |digits: &str, max: usize| -> Result<usize> {
            match digits.parse::<usize>() {
                Ok(o) if o <= max && !digits.starts_with('+') => Ok(o),
                _ => Err(unknown()),
            }
        };
        match s {
            "softmax" => Ok(Method::Softmax),
            "first_order_rho" => Ok(Method::FirstOrderRho),
            _ => {
                if let Some(d) = s.strip_prefix("taylor_linear_o") {
                    order(d, MAX_LINEAR_ORDER).map(Method::TaylorLinear)
                } else if let Some(d) = s.strip_prefix("taylor_quadratic_o") {
                    order(d, MAX_ORACLE_ORDER).map(Method::TaylorQuadratic)
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Approximation error

/// Seeded Q, K, V in that draw order from one generator.
pub fn generate_qkv(seed: u64, n: usize, d_k: usize, d_v: usize) -> (Matrix, Matrix, Matrix) {
    let mut rng = RngState::new(seed);
    let q = rng.randn_matrix(n, d_k);
    let k = rng.randn_matrix(n, d_k);
    let v = rng.randn_matrix(n, d_v);
    (q, k, v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub method: Method,
    pub n: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub alpha: f64,
    /// Taylor order of the method; 1 for the first-order baseline, 0 for softmax.
    pub order: usize,
    pub max_abs_output_err: f64,
    pub mean_abs_output_err: f64,
    /// Largest L1 distance between a normalized weight row and the softmax row.
    pub max_row_weight_l1: f64,
    pub seed: u64,
}

/// Scores each method against exact softmax attention on seeded data.
pub fn compare_methods(
    n: usize,
    cfg: &AttentionConfig,
    seed: u64,
    methods: &[Method],
) -> Result<Vec<ApproxReport>> {
    if n == 0 {
        return Err(AttnError::InvalidArgument("n must be at least 1".into()));
    }
    cfg.validate()?;
    let (q, k, v) = generate_qkv(seed, n, cfg.d_k, cfg.d_v);
    let exact = softmax_attention(&q, &k, &v, cfg)?;
    let exact_w = softmax_weights(&q, &k, cfg)?;

    methods
        .iter()
        .map(|method| {
            let out = method.run(&q, &k, &v, cfg, Execution::Sequential)?;
            let w = method.weights(&q, &k, cfg)?;
            let diffs = out
                .as_slice()
                .iter()
                .zip(exact.as_slice())
                .map(|(a, b)| (a - b).abs());
            let (mut max, mut sum) = (0.0f64, 0.0);
            for d in diffs {
                max = max.max(d);
                sum += d;
            }
            let count = out.as_slice().len().max(1) as f64;
            let max_l1 = (0..w.rows())
                .map(|i| {
                    w.row(i)
                        .iter()
                        .zip(exact_w.row(i))
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            Ok(ApproxReport {
                method: *method,
                n,
                d_k: cfg.d_k,
                d_v: cfg.d_v,
                alpha: cfg.alpha,
                order: method.order().unwrap_or(0),
                max_abs_output_err: max,
                mean_abs_output_err: sum / count,
                max_row_weight_l1: max_l1,
                seed,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scaling benchmarks

/// Which dimension a benchmark sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    N,
    DK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub sweep: Sweep,
    pub n: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub repeats: usize,
    /// Seconds.
    pub median_wall_time: f64,
    /// Slope of log(time) against log(swept size), shared by every record of
    /// the method.
    pub loglog_slope: f64,
    pub parallel: bool,
    /// Attention state held by the method, in floats (not measured).
    pub state_floats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSlope {
    pub method: Method,
    pub sweep: Sweep,
    pub loglog_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub slopes: Vec<MethodSlope>,
}

impl BenchReport {
    pub fn slope(&self, method: Method) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.method == method)
            .map(|s| s.loglog_slope)
    }

    pub const CSV_HEADER: &'static str =
        "method,sweep,n,d_k,d_v,repeats,median_wall_time,loglog_slope,parallel,state_floats";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let sweep = match r.sweep {
                Sweep::N => "n",
                Sweep::DK => "d_k",
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.method,
                sweep,
                r.n,
                r.d_k,
                r.d_v,
                r.repeats,
                r.median_wall_time,
                r.loglog_slope,
                r.parallel,
                r.state_floats
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub repeats: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repeats: 5,
            seed: 0,
            exec: Execution::Sequential,
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need two points for a slope");
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Slope over the upper half of the sweep, where fixed overheads matter least.
pub fn upper_half_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let start = (xs.len() / 2).min(xs.len().saturating_sub(2));
    loglog_slope(&xs[start..], &ys[start..])
}

fn check_sweep(values: &[usize], repeats: usize) -> Result<()> {
    if values.len() < 4 {
        return Err(AttnError::InvalidArgument(format!(
            "need at least 4 sweep values, got {}",
            values.len()
        )));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) || values[0] == 0 {
        return Err(AttnError::InvalidArgument(
            "sweep values must be positive and strictly increasing".into(),
        ));
    }
    if values[values.len() - 1] < 8 * values[0] {
        return Err(AttnError::InvalidArgument(
            "largest sweep value must be at least 8x the smallest".into(),
        ));
    }
    if repeats < 3 {
        return Err(AttnError::InvalidArgument(format!(
            "need at least 3 repeats, got {repeats}"
        )));
    }
    Ok(())
}

/// Median wall time in seconds of `repeats` runs, after one untimed warm-up.
pub fn time_method(
    method: Method,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
    repeats: usize,
    exec: Execution,
) -> Result<f64> {
    black_box(method.run(q, k, v, cfg, exec)?);
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = method.run(black_box(q), black_box(k), black_box(v), cfg, exec)?;
        let elapsed = start.elapsed().as_secs_f64();
        black_box(out);
        times.push(elapsed.max(1e-9));
    }
    Ok(median(&mut times))
}

fn finish(
    method: Method,
    sweep: Sweep,
    axis: &[usize],
    mut records: Vec<BenchRecord>,
) -> (Vec<BenchRecord>, MethodSlope) {
    let xs: Vec<f64> = axis.iter().map(|&x| x as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.median_wall_time).collect();
    let slope = upper_half_slope(&xs, &ys);
    for r in &mut records {
        r.loglog_slope = slope;
    }
    (
        records,
        MethodSlope {
            method,
            sweep,
            loglog_slope: slope,
        },
    )
}

/// Times each method over increasing sequence lengths at fixed widths.
pub fn scaling_benchmark(
    n_values: &[usize],
    cfg: &AttentionConfig,
    methods: &[Method],
    opts: BenchOptions,
) -> Result<BenchReport> {
    check_sweep(n_values, opts.repeats)?;
    cfg.validate()?;
    let data: Vec<_> = n_values
        .iter()
        .map(|&n| generate_qkv(opts.seed, n, cfg.d_k, cfg.d_v))
        .collect();
    let mut report = BenchReport {
        records: Vec::new(),
        slopes: Vec::new(),
    };
    for &method in methods {
        let mut records = Vec::with_capacity(n_values.len());
        for (&n, (q, k, v)) in n_values.iter().zip(&data) {
            let t = time_method(method, q, k, v, cfg, opts.repeats, opts.exec)?;
            records.push(BenchRecord {
                method,
                sweep: Sweep::N,
                n,
                d_k: cfg.d_k,
                d_v: cfg.d_v,
                repeats: opts.repeats,
                median_wall_time: t,
                loglog_slope: f64::NAN,
                parallel: opts.exec == Execution::Parallel,
                state_floats: method.state_floats(n, cfg.d_k, cfg.d_v),
            });
        }
        let (records, slope) = finish(method, Sweep::N, n_values, records);
        report.records.extend(records);
        report.slopes.push(slope);
    }
    Ok(report)
}

/// Times each method over increasing key widths at a fixed sequence length.
pub fn dk_scaling_benchmark(
    n: usize,
    d_k_values: &[usize],
    cfg: &AttentionConfig,
    methods: &[Method],
    opts: BenchOptions,
) -> Result<BenchReport> {
    check_sweep(d_k_values, opts.repeats)?;
    let mut report = BenchReport {
        records: Vec::new(),
        slopes: Vec::new(),
    };
    for &method in methods {
        let mut records = Vec::with_capacity(d_k_values.len());
        for &d_k in d_k_values {
            let cfg = AttentionConfig { d_k, ..*cfg };
            cfg.validate()?;
            let (q, k, v) = generate_qkv(opts.seed, n, d_k, cfg.d_v);
            let t = time_method(method, &q, &k, &v, &cfg, opts.repeats, opts.exec)?;
            records.push(BenchRecord {
                method,
                sweep: Sweep::DK,
                n,
                d_k,
                d_v: cfg.d_v,
                repeats: opts.repeats,
                median_wall_time: t,
                loglog_slope: f64::NAN,
                parallel: opts.exec == Execution::Parallel,
                state_floats: method.state_floats(n, d_k, cfg.d_v),
            });
        }
        let (records, slope) = finish(method, Sweep::DK, d_k_values, records);
        report.records.extend(records);
        report.slopes.push(slope);
    }
    Ok(report)
}
