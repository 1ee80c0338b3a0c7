//! `qebd`: fit, simulate, replicate, select and benchmark quadratic
//! exponential binary models.

mod input;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use qebd_core::design::expand;
use qebd_core::exact::{mle_fit, MleOptions};
use qebd_core::fixtures::carcinogenicity;
use qebd_core::gee::{fit_gee, fit_gglm, CoefRow, FitOptions};
use qebd_core::model::{CorrelationKind, Covariates, InteractionKernel, KernelFn, ModelSpec};
use qebd_core::selection::{backward_eliminate, SelectionOptions};
use qebd_core::simlab::{
    bench_table, bench_timing, bundled_config, generate_full, run_replications, ScenarioConfig, BUNDLED_CONFIGS,
};

use input::{read_panel, Format, PanelData, ReadOptions};

const TOOL: &str = "qebd";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "qebd", version, about = "Quadratic exponential binary models: GEE fits, simulation and selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model to a panel.
    Fit(FitArgs),
    /// Write simulated panels of a scenario as long CSV.
    Simulate(ScenarioArgs),
    /// Run a Monte Carlo scenario and report bias, S.E., R.E. and power.
    Mc(ScenarioArgs),
    /// QIC backward elimination of interaction terms.
    Select(SelectArgs),
    /// Time the exact MLE against GEE-IND.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Qebd,
    QelrCi,
    QelrLinear,
    Markov,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CorrArg {
    Ind,
    Exc,
    Ar1,
}

impl CorrArg {
    fn kind(self) -> CorrelationKind {
        match self {
            CorrArg::Ind => CorrelationKind::Independence,
            CorrArg::Exc => CorrelationKind::Exchangeable,
            CorrArg::Ar1 => CorrelationKind::Ar1,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Mle,
    Gglm,
    Gee,
}

fn value_name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

#[derive(Args)]
struct ModelArgs {
    /// Panel CSV, or `fixture:carcinogenicity`.
    #[arg(long, short)]
    input: String,
    #[arg(long, value_enum, default_value = "auto")]
    format: Format,
    /// Number of leading response columns in a wide file.
    #[arg(long)]
    responses: Option<usize>,
    /// Replicate to read from a long file with a replicate column.
    #[arg(long)]
    replicate: Option<String>,
    #[arg(long, value_enum, env = "QEBD_MODEL", default_value = "qebd")]
    model: ModelArg,
    /// Kernel from a node characteristic column, `COLUMN[:equality|discrete-metric|abs-diff]`.
    #[arg(long = "kernel")]
    kernels: Vec<String>,
    /// Transition-model order.
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, env = "QEBD_MAX_ITER", default_value_t = 100)]
    max_iter: usize,
    #[arg(long, env = "QEBD_TOL", default_value_t = 1e-8)]
    tol: f64,
    /// JSON output path.
    #[arg(long, short, env = "QEBD_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, env = "QEBD_CORR", default_value = "ind")]
    corr: CorrArg,
    #[arg(long, value_enum, env = "QEBD_ESTIMATOR", default_value = "gee")]
    estimator: EstimatorArg,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Interaction terms that are never dropped.
    #[arg(long, value_delimiter = ',')]
    protect: Vec<String>,
    /// Start candidate refits from zero instead of the current estimates.
    #[arg(long)]
    cold_start: bool,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file or a bundled name (table1, table2, table3-ci, table3-linear).
    #[arg(long, short)]
    config: String,
    #[arg(long, env = "QEBD_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "QEBD_REPLICATES")]
    replicates: Option<usize>,
    /// Clusters per data set.
    #[arg(long)]
    n: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "QEBD_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Output path; `mc` writes `<out>.csv` and `<out>.json`.
    #[arg(long, short, env = "QEBD_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "5,8,10,12")]
    m: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    fits: usize,
    #[arg(long, env = "QEBD_SEED", default_value_t = 20240108)]
    seed: u64,
    #[arg(long, short, env = "QEBD_OUT")]
    out: Option<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn provenance(seed: Option<u64>, config: &Value) -> Value {
    json!({
        "tool": TOOL,
        "version": VERSION,
        "seed": seed,
        "config_hash": sha256_hex(config.to_string().as_bytes()),
    })
}

fn csv_preamble(seed: Option<u64>, config: &Value) -> String {
    let p = provenance(seed, config);
    format!(
        "# {TOOL} {VERSION}\n# seed: {}\n# config_hash: {}\n",
        seed.map_or_else(|| "none".into(), |s| s.to_string()),
        p["config_hash"].as_str().unwrap_or_default()
    )
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_panel(args: &ModelArgs) -> Result<(PanelData, String)> {
    if args.input == "fixture:carcinogenicity" {
        let panel = carcinogenicity();
        let digest = sha256_hex(format!("{:?}", panel.as_slice()).as_bytes());
        return Ok((PanelData { panel, columns: Vec::new() }, digest));
    }
    let path = Path::new(&args.input);
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let opts = ReadOptions { format: args.format, responses: args.responses, replicate: args.replicate.clone() };
    Ok((read_panel(path, &opts)?, sha256_hex(&bytes)))
}

fn parse_kernel(arg: &str) -> Result<(String, KernelFn)> {
    match arg.split_once(':') {
        Some((col, f)) => Ok((col.to_string(), f.parse()?)),
        None => Ok((arg.to_string(), KernelFn::EqualityIndicator)),
    }
}

/// Builds the model from the panel's extra columns: kernel columns become
/// node characteristics, the rest are main-effect covariates (with an
/// intercept unless one is present). Without covariates the QELR families
/// get node-specific intercepts.
fn build_spec(args: &ModelArgs, data: &PanelData) -> Result<ModelSpec> {
    let (n, m) = (data.panel.n(), data.panel.m());
    let kernels: Vec<(String, KernelFn)> = args.kernels.iter().map(|k| parse_kernel(k)).collect::<Result<_>>()?;
    if !kernels.is_empty() && args.model != ModelArg::QelrLinear {
        bail!("--kernel applies to the qelr-linear model only");
    }
    let kernel_cols: HashSet<&str> = kernels.iter().map(|(c, _)| c.as_str()).collect();
    let covs: Vec<&(String, Vec<f64>)> = data.columns.iter().filter(|(name, _)| !kernel_cols.contains(name.as_str())).collect();
    let main = if covs.is_empty() {
        None
    } else {
        let p = covs.len();
        let mut values = Vec::with_capacity(n * m * p);
        for r in 0..n * m {
            values.extend(covs.iter().map(|(_, v)| v[r]));
        }
        let x = Covariates::new(n, m, covs.iter().map(|(name, _)| name.clone()).collect(), values)?;
        Some(if covs.iter().any(|(name, _)| name == "intercept") { x } else { x.with_intercept("intercept") })
    };
    let spec = match args.model {
        ModelArg::Qebd => ModelSpec::qebd_full(m),
        ModelArg::QelrCi => ModelSpec::QelrCi {
            main: main.unwrap_or_else(|| Covariates::node_indicators(n, data.panel.node_names())),
        },
        ModelArg::QelrLinear => {
            let mut ks = Vec::with_capacity(kernels.len());
            for (col, f) in &kernels {
                let values = data.column(col).with_context(|| format!("no column named '{col}' for --kernel"))?;
                let u = &values[..m];
                if (1..n).any(|k| values[k * m..(k + 1) * m] != *u) {
                    bail!("kernel column '{col}' must not vary across clusters");
                }
                ks.push(InteractionKernel::from_characteristics(col.clone(), u, *f)?);
            }
            ModelSpec::QelrLinear {
                main: main.unwrap_or_else(|| Covariates::node_indicators(n, data.panel.node_names())),
                kernels: ks,
            }
        }
        ModelArg::Markov => {
            let main = main.unwrap_or_else(|| Covariates::new(n, m, vec!["intercept".into()], vec![1.0; n * m]).expect("shape"));
            ModelSpec::markov(main, args.order)
        }
    };
    Ok(spec)
}

fn model_config(args: &ModelArgs, input_hash: &str, extra: Value) -> Value {
    json!({
        "input_sha256": input_hash,
        "format": value_name(&args.format),
        "responses": args.responses,
        "replicate": args.replicate,
        "model": value_name(&args.model),
        "kernels": args.kernels,
        "order": args.order,
        "max_iter": args.max_iter,
        "tol": args.tol,
        "extra": extra,
    })
}

fn fit_options(args: &ModelArgs) -> FitOptions {
    FitOptions { max_iter: args.max_iter, tol: args.tol, ..FitOptions::default() }
}

fn coef_table(rows: &[CoefRow], se_label: &str) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(9);
    let mut out = format!("{:<width$} {:>10} {:>11} {:>8}\n", "parameter", "estimate", se_label, "p-value");
    for r in rows {
        let _ = writeln!(out, "{:<width$} {:>10.3} {:>11.3} {:>8.3}", r.name, r.estimate, r.std_error, r.p_value);
    }
    out
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let (data, input_hash) = load_panel(&args.model)?;
    let spec = build_spec(&args.model, &data)?;
    let design = expand(&spec, &data.panel)?;
    let opts = fit_options(&args.model);
    let config = model_config(
        &args.model,
        &input_hash,
        json!({"command": "fit", "estimator": value_name(&args.estimator), "corr": value_name(&args.corr)}),
    );
    let header = format!(
        "model={} estimator={} n={} m={} parameters={}",
        value_name(&args.model.model),
        value_name(&args.estimator),
        data.panel.n(),
        data.panel.m(),
        design.n_cols()
    );
    let (result, table, diverged) = match (args.estimator, args.model.model) {
        (EstimatorArg::Mle, ModelArg::Qebd) => {
            let mle_opts = MleOptions { max_iter: args.model.max_iter, ..MleOptions::default() };
            let fit = mle_fit(&data.panel, None, mle_opts)?;
            let rows = fit.coefficients(design.layout().names());
            let table = coef_table(&rows, "s.e.") + &format!("log-likelihood {:.3}\n", fit.loglik);
            let result = json!({
                "estimator": "mle",
                "coefficients": rows,
                "loglik": fit.loglik,
                "iterations": fit.iterations,
                "converged": fit.converged,
                "diverged": fit.diverged,
            });
            (result, table, fit.diverged)
        }
        (EstimatorArg::Mle, ModelArg::Markov) | (EstimatorArg::Gglm, _) => {
            let fit = fit_gglm(&design, &opts)?;
            let mut report = serde_json::to_value(fit.report())?;
            if args.estimator == EstimatorArg::Mle {
                report["estimator"] = json!("mle");
            }
            (report, coef_table(&fit.coefficients(), "s.e."), fit.diverged)
        }
        (EstimatorArg::Mle, _) => bail!("--estimator mle is available for the qebd and markov models only"),
        (EstimatorArg::Gee, _) => {
            let fit = fit_gee(&design, args.corr.kind(), &opts)?;
            let mut table = coef_table(&fit.coefficients(), "robust s.e.");
            if let Some(rho) = fit.rho_hat {
                let _ = writeln!(table, "rho {rho:.3}");
            }
            if let Some(q) = fit.qic {
                let _ = writeln!(table, "QIC {q:.3}");
            }
            (serde_json::to_value(fit.report())?, table, fit.diverged)
        }
    };
    print!("{header}\n{table}");
    if diverged {
        println!("diverged: estimates escaped the divergence threshold");
    }
    if let Some(path) = &args.model.out {
        let doc = json!({
            "provenance": provenance(None, &config),
            "command": "fit",
            "config": config,
            "n": data.panel.n(),
            "m": data.panel.m(),
            "result": result,
        });
        write_json(path, &doc)?;
    }
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let (data, input_hash) = load_panel(&args.model)?;
    let spec = build_spec(&args.model, &data)?;
    let protect: HashSet<String> = args.protect.iter().cloned().collect();
    let opts = SelectionOptions { fit: fit_options(&args.model), warm_start: !args.cold_start };
    let trace = backward_eliminate(&spec, &data.panel, &protect, &opts)?;
    let config = model_config(
        &args.model,
        &input_hash,
        json!({"command": "select", "protect": args.protect, "warm_start": !args.cold_start}),
    );
    print!("{}", trace.step_table());
    println!("final QIC {:.3}", trace.final_qic());
    print!("{}", coef_table(&trace.final_fit.coefficients(), "robust s.e."));
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.model.out {
        let doc = json!({
            "provenance": provenance(None, &config),
            "command": "select",
            "config": config,
            "result": trace.report(),
        });
        write_json(path, &doc)?;
    }
    Ok(())
}

fn load_scenario(args: &ScenarioArgs) -> Result<ScenarioConfig> {
    let path = Path::new(&args.config);
    let mut cfg = if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        ScenarioConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?
    } else if let Some(cfg) = bundled_config(&args.config) {
        cfg
    } else {
        bail!("no config file '{}' and no bundled scenario of that name ({})", args.config, BUNDLED_CONFIGS.join(", "));
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    Ok(cfg)
}

fn cmd_simulate(args: ScenarioArgs) -> Result<()> {
    let cfg = load_scenario(&args)?;
    let mut out = String::new();
    if cfg.replicates > 0 {
        cfg.validate()?;
        let config: Value = serde_json::from_str(&cfg.to_json())?;
        out.push_str(&csv_preamble(Some(cfg.seed), &config));
        for r in 0..cfg.replicates {
            let g = generate_full(&cfg, r as u64)?;
            let main = match &g.spec {
                ModelSpec::QelrCi { main } | ModelSpec::QelrLinear { main, .. } | ModelSpec::Markov { main, .. } => Some(main),
                ModelSpec::Qebd { .. } => None,
            };
            if r == 0 {
                out.push_str("replicate,cluster,node,y");
                for name in main.map_or(&[][..], |x| x.names()) {
                    let _ = write!(out, ",{name}");
                }
                for (name, _) in &g.characteristics {
                    let _ = write!(out, ",{name}");
                }
                out.push('\n');
            }
            for k in 0..g.panel.n() {
                for j in 0..g.panel.m() {
                    let _ = write!(out, "{},{},{},{}", r + 1, k + 1, j + 1, g.panel.get(k, j));
                    if let Some(x) = main {
                        for v in x.row(k, j) {
                            let _ = write!(out, ",{v}");
                        }
                    }
                    for (_, u) in &g.characteristics {
                        let _ = write!(out, ",{}", u[j]);
                    }
                    out.push('\n');
                }
            }
        }
    }
    match &args.out {
        Some(path) => std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn cmd_mc(args: ScenarioArgs) -> Result<()> {
    let cfg = load_scenario(&args)?;
    let report = run_replications(&cfg, args.workers)?;
    print!("{}", report.to_table());
    print!("{}", report.timing_table());
    if let Some(prefix) = &args.out {
        let config: Value = serde_json::from_str(&cfg.to_json())?;
        let with_ext = |ext: &str| {
            let mut p = prefix.clone().into_os_string();
            p.push(ext);
            PathBuf::from(p)
        };
        let csv_path = with_ext(".csv");
        std::fs::write(&csv_path, csv_preamble(Some(cfg.seed), &config) + &report.to_csv())
            .with_context(|| format!("cannot write {}", csv_path.display()))?;
        let doc = json!({
            "provenance": provenance(Some(cfg.seed), &config),
            "command": "mc",
            "config": config,
            "report": report,
        });
        write_json(&with_ext(".json"), &doc)?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let rows = bench_timing(&args.m, args.n, args.fits, args.seed)?;
    print!("{}", bench_table(&rows));
    if let Some(path) = &args.out {
        let config = json!({"command": "bench", "m": args.m, "n": args.n, "fits": args.fits});
        let doc = json!({
            "provenance": provenance(Some(args.seed), &config),
            "command": "bench",
            "config": config,
            "rows": rows,
        });
        write_json(path, &doc)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Select(a) => cmd_select(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
