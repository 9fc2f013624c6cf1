use std::process::ExitCode;

use clap::Parser;
use liouville_core::clock::VarianceMode;
use liouville_core::experiment::{run_experiment, Command, ExperimentConfig, EXIT_OK, EXIT_VALIDATION};
use liouville_core::geometry::DomainKind;

/// Liouville Brownian motion experiments.
///
/// Commands: field-stats, clock-mean, converge, positivity, conformal-check,
/// thick-dim, kpz-table, moments, pair-count. Flags override values from
/// `--config`. Results go to `<output-dir>/<command>-<timestamp>/`.
#[derive(Debug, Parser)]
#[command(name = "liouville", version)]
struct Cli {
    #[arg(value_parser = Command::parse)]
    command: Command,
    /// Flat JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Clock scale ε = 2^-k.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    k_min: Option<u32>,
    #[arg(long)]
    k_max: Option<u32>,
    #[arg(long)]
    n_modes: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    n_replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// unit-square or unit-disc.
    #[arg(long, value_parser = parse_domain)]
    domain: Option<DomainKind>,
    #[arg(long)]
    output_dir: Option<String>,
    /// Euclidean time horizon.
    #[arg(long)]
    t: Option<f64>,
    /// Start point as `x,y`.
    #[arg(long, value_parser = parse_point)]
    start: Option<[f64; 2]>,
    /// analytic-mode-sum or conformal-radius-formula.
    #[arg(long, value_parser = parse_variance_mode)]
    variance_mode: Option<VarianceMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Scale exponent K in r_n = n^-K.
    #[arg(long)]
    k_exponent: Option<f64>,
    #[arg(long)]
    n_min: Option<u32>,
    #[arg(long)]
    n_max: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    q_grid: Option<Vec<f64>>,
    #[arg(long)]
    cover_threshold: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    moment_horizon: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    d0: Option<Vec<f64>>,
    #[arg(long)]
    net_k: Option<u32>,
    #[arg(long)]
    n_offsets: Option<usize>,
    #[arg(long)]
    export_path: bool,
    #[arg(long)]
    quantum_dt: Option<f64>,
    #[arg(long)]
    export_grid: Option<usize>,
}

fn parse_json_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unrecognized value `{s}`"))
}

fn parse_domain(s: &str) -> Result<DomainKind, String> {
    parse_json_enum(s)
}

fn parse_variance_mode(s: &str) -> Result<VarianceMode, String> {
    parse_json_enum(s)
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [x, y] => Ok([x.trim().parse().map_err(|e| format!("{e}"))?, y.trim().parse().map_err(|e| format!("{e}"))?]),
        _ => Err("expected `x,y`".into()),
    }
}

macro_rules! overlay {
    ($cfg:ident, $cli:ident; $($f:ident),*) => {
        $(if let Some(v) = $cli.$f { $cfg.$f = v; })*
    };
}

macro_rules! overlay_opt {
    ($cfg:ident, $cli:ident; $($f:ident),*) => {
        $(if let Some(v) = $cli.$f { $cfg.$f = Some(v); })*
    };
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    cfg.command = cli.command;
    overlay!(cfg, cli; gamma, k, k_min, k_max, n_modes, margin, n_replicates, seed, output_dir, t,
        variance_mode, alpha, delta, eta, n_min, n_max, q_grid, cover_threshold, q, m, epsilon, theta, d0,
        net_k, n_offsets);
    overlay_opt!(cfg, cli; dt, domain, start, k_exponent, moment_horizon, quantum_dt, export_grid);
    if cli.export_path {
        cfg.export_path = true;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cfg = match build_config(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let out = run_experiment(&cfg);
    for m in &out.messages {
        eprintln!("error: {m}");
    }
    if let Some(dir) = &out.run_dir {
        println!("{}", dir.display());
    }
    if let (true, Some(dir)) = (out.exit_code != EXIT_OK, &out.run_dir) {
        eprintln!("partial outputs in {}", dir.join("quarantine").display());
    }
    ExitCode::from(out.exit_code)
}
