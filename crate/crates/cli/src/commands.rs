use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};
use clap::Parser;
use serde_json::{json, Value};
use taylorattn::analysis::BenchOptions;
use taylorattn::linear::MAX_LINEAR_ORDER;
use taylorattn::oracle::MAX_ORACLE_ORDER;
use taylorattn::{
    compare_methods, generate_qkv, scaling_benchmark, taylor_curve_data, AttentionConfig,
    AttnError, Execution, Method,
};

use crate::manifest::{sidecar_path, RunManifest};
use crate::{
    BenchArgs, Cli, Command, CompareArgs, Format, GenArgs, GlobalArgs, ReplayArgs, TaylorPlotArgs,
};

pub enum Failure {
    Clap(clap::Error),
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses a full argv (program name first) and runs the command.
pub fn run_argv(argv: &[String]) -> CmdResult {
    let cli = Cli::try_parse_from(argv).map_err(Failure::Clap)?;
    let args: Vec<String> = argv.iter().skip(1).cloned().collect();
    match &cli.command {
        Command::TaylorPlot(a) => taylor_plot(&cli.global, a, args),
        Command::Compare(a) => compare(&cli.global, a, args),
        Command::Bench(a) => bench(&cli.global, a, args),
        Command::Gen(a) => gen(&cli.global, a, args),
        Command::Replay(a) => replay(&cli.global, a),
    }
}

fn global_params(g: &GlobalArgs) -> Value {
    json!({
        "seed": g.seed,
        "alpha": g.alpha,
        "order": g.order,
        "epsilon": g.epsilon,
        "subtract_one": g.subtract_one,
        "causal": g.causal,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn config(g: &GlobalArgs, d_k: u32, d_v: u32) -> Result<AttentionConfig, Failure> {
    let cfg = AttentionConfig::new(d_k as usize, d_v as usize)
        .with_alpha(g.alpha)
        .with_order(g.order as usize)
        .with_epsilon(g.epsilon)
        .with_subtract_one(g.subtract_one)
        .with_causal(g.causal);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn parse_methods(list: Option<&str>, order: usize) -> Result<Vec<Method>, Failure> {
    match list {
        Some(s) => {
            let methods = Method::parse_list(s).map_err(|e| usage(e.to_string()))?;
            if methods.is_empty() {
                return Err(usage(format!(
                    "--methods is empty; valid labels: {}",
                    Method::valid_labels()
                )));
            }
            Ok(methods)
        }
        None => {
            if order > MAX_ORACLE_ORDER {
                return Err(usage(format!("--order must be at most {MAX_ORACLE_ORDER}")));
            }
            let mut m = Vec::new();
            if order <= MAX_LINEAR_ORDER {
                m.push(Method::TaylorLinear(order));
            }
            m.push(Method::TaylorQuadratic(order));
            m.push(Method::FirstOrderRho);
            Ok(m)
        }
    }
}

/// Writes `text` to `--out` (with a manifest sidecar) or to stdout (with the
/// manifest on stderr).
fn emit(g: &GlobalArgs, text: &str, manifest: &RunManifest) -> anyhow::Result<()> {
    match &g.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            manifest.write(&sidecar_path(path, ".manifest.json"))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            eprintln!("{}", manifest.to_line());
            Ok(())
        }
    }
}

fn numeric(op: &str, e: AttnError) -> Failure {
    Failure::Run(anyhow!(e).context(format!("{op} failed")))
}

fn taylor_plot(g: &GlobalArgs, a: &TaylorPlotArgs, args: Vec<String>) -> CmdResult {
    if a.x_min.partial_cmp(&a.x_max) != Some(std::cmp::Ordering::Less) {
        return Err(usage(format!(
            "--x-min ({}) must be smaller than --x-max ({})",
            a.x_min, a.x_max
        )));
    }
    if a.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    if a.orders.is_empty() {
        return Err(usage("--orders must name at least one order"));
    }
    let orders: Vec<usize> = a.orders.iter().map(|&o| o as usize).collect();
    let table = taylor_curve_data(a.x_min, a.x_max, a.points as usize, &orders)
        .map_err(|e| usage(e.to_string()))?;
    let text = match g.format.unwrap_or(Format::Csv) {
        Format::Csv => table.to_csv(),
        Format::Json => to_json(&table)?,
    };
    let params = merge(
        global_params(g),
        json!({"x_min": a.x_min, "x_max": a.x_max, "points": a.points, "orders": orders}),
    );
    emit(g, &text, &RunManifest::new("taylor-plot", params, args))?;
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn compare(g: &GlobalArgs, a: &CompareArgs, args: Vec<String>) -> CmdResult {
    let cfg = config(g, a.d_k, a.d_v)?;
    let methods = parse_methods(a.methods.as_deref(), cfg.order)?;
    let reports =
        compare_methods(a.n as usize, &cfg, g.seed, &methods).map_err(|e| numeric("compare", e))?;
    let text = match g.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&reports)?,
        Format::Csv => {
            let mut s = String::from(
                "method,n,d_k,d_v,alpha,order,max_abs_output_err,mean_abs_output_err,max_row_weight_l1,seed\n",
            );
            for r in &reports {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.method,
                    r.n,
                    r.d_k,
                    r.d_v,
                    r.alpha,
                    r.order,
                    r.max_abs_output_err,
                    r.mean_abs_output_err,
                    r.max_row_weight_l1,
                    r.seed
                ));
            }
            s
        }
    };
    let labels: Vec<String> = methods.iter().map(Method::label).collect();
    let params = merge(
        global_params(g),
        json!({"n": a.n, "d_k": a.d_k, "d_v": a.d_v, "methods": labels}),
    );
    emit(g, &text, &RunManifest::new("compare", params, args))?;
    Ok(())
}

fn bench(g: &GlobalArgs, a: &BenchArgs, args: Vec<String>) -> CmdResult {
    if a.n.len() < 4 {
        return Err(usage(format!(
            "--n needs at least 4 values, got {}",
            a.n.len()
        )));
    }
    if a.repeats < 3 {
        return Err(usage(format!(
            "--repeats must be at least 3, got {}",
            a.repeats
        )));
    }
    let cfg = config(g, a.d_k, a.d_v)?;
    let methods = parse_methods(a.methods.as_deref(), cfg.order)?;
    let n_values: Vec<usize> = a.n.iter().map(|&n| n as usize).collect();
    let opts = BenchOptions {
        repeats: a.repeats as usize,
        seed: g.seed,
        exec: if a.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        },
    };
    let report = scaling_benchmark(&n_values, &cfg, &methods, opts).map_err(|e| match e {
        AttnError::InvalidArgument(msg) => usage(msg),
        other => numeric("bench", other),
    })?;
    let text = match g.format.unwrap_or(Format::Csv) {
        Format::Csv => report.to_csv(),
        Format::Json => to_json(&report.records)?,
    };
    let summary =
        serde_json::to_string(&json!({ "slopes": report.slopes })).map_err(anyhow::Error::from)?;
    let labels: Vec<String> = methods.iter().map(Method::label).collect();
    let params = merge(
        global_params(g),
        json!({"n": a.n, "repeats": a.repeats, "methods": labels, "parallel": a.parallel,
               "d_k": a.d_k, "d_v": a.d_v}),
    );
    let manifest = RunManifest::new("bench", params, args);
    emit(g, &text, &manifest)?;
    match &g.out {
        Some(path) => {
            let summary_path = sidecar_path(path, ".summary.json");
            std::fs::write(&summary_path, format!("{summary}\n"))
                .with_context(|| format!("writing {}", summary_path.display()))?;
            println!("{summary}");
        }
        None => eprintln!("{summary}"),
    }
    Ok(())
}

fn gen(g: &GlobalArgs, a: &GenArgs, args: Vec<String>) -> CmdResult {
    let (q, k, v) = generate_qkv(g.seed, a.n as usize, a.d_k as usize, a.d_v as usize);
    let dir: &Path = &a.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, m) in [("q.csv", &q), ("k.csv", &k), ("v.csv", &v)] {
        let path = dir.join(name);
        std::fs::write(&path, m.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let params = merge(
        global_params(g),
        json!({"n": a.n, "d_k": a.d_k, "d_v": a.d_v}),
    );
    RunManifest::new("gen", params, args).write(&dir.join("manifest.json"))?;
    Ok(())
}

fn replay(g: &GlobalArgs, a: &ReplayArgs) -> CmdResult {
    let manifest = RunManifest::read(&a.manifest)?;
    let mut argv = vec!["taylorattn".to_string()];
    let mut recorded = manifest.args.into_iter();
    while let Some(arg) = recorded.next() {
        if g.out.is_some() && arg == "--out" {
            recorded.next();
            continue;
        }
        if g.out.is_some() && arg.starts_with("--out=") {
            continue;
        }
        argv.push(arg);
    }
    if let Some(out) = &g.out {
        argv.push("--out".into());
        argv.push(out.display().to_string());
    }
    if argv.get(1).map(String::as_str) == Some("replay") {
        return Err(usage("a replay manifest cannot be replayed"));
    }
    run_argv(&argv)
}
