//! Command-line surface: the `test`, `simulate`, and `power` subcommands,
//! config-file handling, and report emission.
//!
//! Option precedence is total: a command-line flag beats the config file,
//! which beats the built-in default. Config files are flat JSON objects
//! whose keys mirror the configuration struct fields; unknown keys are
//! rejected by name so typos cannot silently fall back to defaults.
//!
//! Exit codes: 0 for a completed run (whatever the test decision), 2 for
//! configuration or input errors, 3 when the statistic is degenerate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::data::{ingest_csv, DomainBox};
use crate::lambda::Mode;
use crate::power::{evaluate_query, PowerQuerySpec};
use crate::simulation::{run_experiment, ExperimentConfig, ExperimentResult};
use crate::statistic::{run_test, Bandwidth, TestConfig, WeightScheme};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "ineqtest",
    version,
    about = "One-sided L_p kernel tests of functional inequalities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the test on a CSV dataset and emit a JSON report.
    Test(TestArgs),
    /// Run a Monte Carlo rejection-rate campaign from a config file.
    Simulate(SimulateArgs),
    /// Evaluate local asymptotic power for a query file.
    Power(PowerArgs),
}

#[derive(Args)]
struct TestArgs {
    /// CSV file with columns x1..xd and y1..yJ (any order, name-keyed).
    #[arg(long)]
    data: PathBuf,
    /// Flat JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Penalty exponent p ≥ 1.
    #[arg(long)]
    p: Option<f64>,
    /// "inequality" (one-sided) or "equality" (two-sided).
    #[arg(long)]
    mode: Option<String>,
    /// Test level in (0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Bandwidth scale c_h for the n^(-1/5) rule.
    #[arg(long, conflicts_with = "bandwidth")]
    bandwidth_c: Option<f64>,
    /// Absolute bandwidth h.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Kernel name: quartic2u, uniform, or triangular.
    #[arg(long)]
    kernel: Option<String>,
    /// Evaluation domain, one lo:hi pair per axis, comma-separated.
    #[arg(long)]
    domain: Option<String>,
    /// Weight scheme: uniform or inverse-se, optionally with "+rescale".
    #[arg(long)]
    weights: Option<String>,
    /// Grid points per axis, comma-separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Monte Carlo draws for simulated normal-moment constants.
    #[arg(long)]
    mc_draws: Option<usize>,
    /// Seed for those Monte Carlo constants.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat JSON config file describing the campaign grid.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for replication-level parallelism (default: all
    /// cores). Results are byte-identical for any worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the campaign CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write per-curve figure data (tidy CSV) to this path.
    #[arg(long)]
    figure_data: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    /// JSON query file: mode, p, alpha, sigma, rate, domain, and the
    /// delta/rho/weights field specs.
    #[arg(long)]
    query: PathBuf,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Parse `std::env::args` and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Test(args) => cmd_test(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Power(args) => cmd_power(&args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::DegenerateVariance(_) => EXIT_DEGENERATE,
                _ => EXIT_CONFIG,
            }
        }
    }
}

// ----- flat config files ----------------------------------------------------

/// A flat JSON object being consumed key by key; leftovers are unknown keys.
struct FlatConfig {
    location: String,
    map: serde_json::Map<String, Value>,
}

impl FlatConfig {
    fn load(path: &Path) -> Result<Self> {
        let location = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("config file {location}: {e}"))
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("config file {location}: {e}"))
        })?;
        match value {
            Value::Object(map) => Ok(Self { location, map }),
            _ => Err(Error::InvalidConfig(format!(
                "config file {location}: expected a JSON object of key-value \
                 pairs"
            ))),
        }
    }

    fn bad(&self, key: &str, want: &str) -> Error {
        Error::InvalidConfig(format!(
            "config file {}: key \"{key}\" must be {want}",
            self.location
        ))
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Number(n)) => {
                n.as_f64().map(Some).ok_or_else(|| self.bad(key, "a finite number"))
            }
            Some(_) => Err(self.bad(key, "a number")),
        }
    }

    fn take_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Number(n)) => {
                n.as_u64().map(Some).ok_or_else(|| self.bad(key, "a non-negative integer"))
            }
            Some(_) => Err(self.bad(key, "an integer")),
        }
    }

    fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(b)),
            Some(_) => Err(self.bad(key, "true or false")),
        }
    }

    fn take_string(&mut self, key: &str) -> Result<Option<String>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.bad(key, "a string")),
        }
    }

    fn take_usize_array(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| {
                    v.as_u64()
                        .map(|u| u as usize)
                        .ok_or_else(|| self.bad(key, "an array of integers"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.bad(key, "an array of integers")),
        }
    }

    fn take_f64_array(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| v.as_f64().ok_or_else(|| self.bad(key, "an array of numbers")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.bad(key, "an array of numbers")),
        }
    }

    fn take_string_array(&mut self, key: &str) -> Result<Option<Vec<String>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    _ => Err(self.bad(key, "an array of strings")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.bad(key, "an array of strings")),
        }
    }

    /// Everything must have been consumed; names any leftover keys.
    fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.map.keys().map(String::as_str).collect();
        Err(Error::InvalidConfig(format!(
            "config file {}: unknown key{} {}",
            self.location,
            if keys.len() == 1 { "" } else { "s" },
            keys.join(", ")
        )))
    }
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "inequality" => Ok(Mode::OneSided),
        "equality" => Ok(Mode::TwoSided),
        other => Err(Error::InvalidConfig(format!(
            "mode must be \"inequality\" or \"equality\", got \"{other}\""
        ))),
    }
}

fn parse_weights(s: &str) -> Result<WeightScheme> {
    let (base, rescale) = match s.strip_suffix("+rescale") {
        Some(b) => (b, true),
        None => (s, false),
    };
    let mut scheme = match base {
        "uniform" => WeightScheme::uniform(),
        "inverse-se" => WeightScheme::inverse_se(),
        other => {
            return Err(Error::InvalidConfig(format!(
                "weights must be \"uniform\" or \"inverse-se\" (optionally \
                 with \"+rescale\"), got \"{other}\""
            )))
        }
    };
    scheme.se_rescale = rescale;
    Ok(scheme)
}

/// Values a test config file may set; a subset of the flag surface.
#[derive(Default)]
struct TestFileValues {
    p: Option<f64>,
    mode: Option<String>,
    alpha: Option<f64>,
    bandwidth: Option<f64>,
    bandwidth_c: Option<f64>,
    kernel: Option<String>,
    domain: Option<String>,
    weights: Option<String>,
    se_rescale: Option<bool>,
    grid: Option<Vec<usize>>,
    mc_draws: Option<usize>,
    mc_seed: Option<u64>,
    antithetic: Option<bool>,
}

fn load_test_file(path: &Path) -> Result<TestFileValues> {
    let mut f = FlatConfig::load(path)?;
    let values = TestFileValues {
        p: f.take_f64("p")?,
        mode: f.take_string("mode")?,
        alpha: f.take_f64("alpha")?,
        bandwidth: f.take_f64("bandwidth")?,
        bandwidth_c: f.take_f64("bandwidth_c")?,
        kernel: f.take_string("kernel")?,
        domain: f.take_string("domain")?,
        weights: f.take_string("weights")?,
        se_rescale: f.take_bool("se_rescale")?,
        grid: f.take_usize_array("grid")?,
        mc_draws: f.take_u64("mc_draws")?.map(|v| v as usize),
        mc_seed: f.take_u64("mc_seed")?,
        antithetic: f.take_bool("antithetic")?,
    };
    if values.bandwidth.is_some() && values.bandwidth_c.is_some() {
        return Err(Error::InvalidConfig(format!(
            "config file {}: set either \"bandwidth\" or \"bandwidth_c\", \
             not both",
            path.display()
        )));
    }
    f.finish()?;
    Ok(values)
}

/// Flag > file > default, field by field.
fn resolve_test_config(args: &TestArgs) -> Result<TestConfig> {
    let file = match &args.config {
        Some(path) => load_test_file(path)?,
        None => TestFileValues::default(),
    };
    let domain_str = args
        .domain
        .clone()
        .or(file.domain)
        .ok_or_else(|| {
            Error::InvalidConfig(
                "an evaluation domain is required: pass --domain lo:hi (one \
                 pair per axis) or set \"domain\" in the config file"
                    .to_string(),
            )
        })?;
    let mut cfg = TestConfig::baseline(DomainBox::parse(&domain_str)?);

    if let Some(p) = args.p.or(file.p) {
        cfg.p = p;
    }
    if let Some(mode) = args.mode.as_deref().or(file.mode.as_deref()) {
        cfg.mode = parse_mode(mode)?;
    }
    if let Some(alpha) = args.alpha.or(file.alpha) {
        cfg.alpha = alpha;
    }
    if let Some(kernel) = args.kernel.clone().or(file.kernel) {
        cfg.kernel = kernel;
    }
    // Bandwidth: an absolute flag beats a scale flag by flag precedence;
    // within one source the pair is mutually exclusive.
    cfg.bandwidth = if let Some(h) = args.bandwidth {
        Bandwidth::Absolute(h)
    } else if let Some(c_h) = args.bandwidth_c {
        Bandwidth::Rule { c_h }
    } else if let Some(h) = file.bandwidth {
        Bandwidth::Absolute(h)
    } else if let Some(c_h) = file.bandwidth_c {
        Bandwidth::Rule { c_h }
    } else {
        cfg.bandwidth
    };
    if let Some(weights) = args.weights.as_deref().or(file.weights.as_deref()) {
        cfg.weights = parse_weights(weights)?;
    }
    if let Some(rescale) = file.se_rescale {
        // Explicit file key; the flag spelling "+rescale" already applied.
        if args.weights.is_none() {
            cfg.weights.se_rescale = rescale;
        }
    }
    if let Some(grid) = args.grid.clone().or(file.grid) {
        cfg.grid = Some(grid);
    }
    if let Some(draws) = args.mc_draws.or(file.mc_draws) {
        cfg.mc.draws = draws;
    }
    if let Some(seed) = args.seed.or(file.mc_seed) {
        cfg.mc.seed = seed;
    }
    if let Some(antithetic) = file.antithetic {
        cfg.mc.antithetic = antithetic;
    }
    Ok(cfg)
}

fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let mut f = FlatConfig::load(path)?;
    let mut cfg = ExperimentConfig::baseline();
    if let Some(s) = f.take_string("domain")? {
        cfg.domain = DomainBox::parse(&s)?;
    }
    if let Some(names) = f.take_string_array("dgps")? {
        cfg.dgps = names
            .iter()
            .map(|name| crate::simulation::make_dgp(name, None))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(ns) = f.take_usize_array("sample_sizes")? {
        cfg.sample_sizes = ns;
    }
    if let Some(cs) = f.take_f64_array("bandwidth_scales")? {
        cfg.bandwidth_scales = cs;
    }
    if let Some(ws) = f.take_string_array("weight_schemes")? {
        cfg.weight_schemes =
            ws.iter().map(|s| parse_weights(s)).collect::<Result<Vec<_>>>()?;
    }
    if let Some(p) = f.take_f64("p")? {
        cfg.p = p;
    }
    if let Some(mode) = f.take_string("mode")? {
        cfg.mode = parse_mode(&mode)?;
    }
    if let Some(kernel) = f.take_string("kernel")? {
        cfg.kernel = kernel;
    }
    if let Some(alpha) = f.take_f64("alpha")? {
        cfg.alpha = alpha;
    }
    if let Some(r) = f.take_u64("replications")? {
        cfg.replications = r as usize;
    }
    if let Some(seed) = f.take_u64("base_seed")? {
        cfg.base_seed = seed;
    }
    if let Some(grid) = f.take_usize_array("grid")? {
        cfg.grid = Some(grid);
    }
    if let Some(draws) = f.take_u64("mc_draws")? {
        cfg.mc.draws = draws as usize;
    }
    if let Some(seed) = f.take_u64("mc_seed")? {
        cfg.mc.seed = seed;
    }
    if let Some(antithetic) = f.take_bool("antithetic")? {
        cfg.mc.antithetic = antithetic;
    }
    f.finish()?;
    Ok(cfg)
}

// ----- output helpers -------------------------------------------------------

fn write_or_print(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| {
            Error::InvalidConfig(format!("cannot write {}: {e}", path.display()))
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization");
    text.push('\n');
    text
}

// ----- subcommands ----------------------------------------------------------

fn cmd_test(args: &TestArgs) -> Result<()> {
    let cfg = resolve_test_config(args)?;
    let ingest = ingest_csv(&args.data)?;
    if !ingest.skipped_lines.is_empty() {
        let lines: Vec<String> =
            ingest.skipped_lines.iter().map(u64::to_string).collect();
        return Err(Error::InvalidData(format!(
            "{}: rows with missing or non-numeric cells on line{} {}",
            args.data.display(),
            if lines.len() == 1 { "" } else { "s" },
            lines.join(", ")
        )));
    }
    let report = run_test(&ingest.dataset, &cfg)?;

    let half_window = 0.5 * report.diagnostics.effective_h;
    if report.diagnostics.support_margin < half_window {
        eprintln!(
            "warning: the covariate range extends only {:.4} beyond the \
             evaluation domain, but kernel windows reach {:.4} past it; \
             estimates near the boundary average over missing data \
             (boundary bias). Shrink the domain or the bandwidth.",
            report.diagnostics.support_margin, half_window
        );
    }
    println!(
        "T = {:.6}, p-value = {:.6}, reject at {}% = {}",
        report.t_stat,
        report.p_value,
        100.0 * cfg.alpha,
        report.reject
    );
    let json = to_pretty_json(&report);
    match &args.output {
        Some(path) => write_or_print(&json, Some(path))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn run_campaign(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentResult> {
    match workers {
        None => run_experiment(cfg),
        Some(w) => {
            if w == 0 {
                return Err(Error::InvalidConfig(
                    "--workers must be at least 1".to_string(),
                ));
            }
            let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build().map_err(
                |e| Error::InvalidConfig(format!("cannot build a {w}-thread pool: {e}")),
            )?;
            pool.install(|| run_experiment(cfg))
        }
    }
}

fn figure_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("dgp,n,weight,c_h,reject_rate,mc_se\n");
    for curve in result.figure_data() {
        for point in &curve.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                curve.dgp, curve.n, curve.weight, point.c_h, point.reject_rate, point.mc_se
            ));
        }
    }
    out
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = load_experiment_config(&args.config)?;
    let result = run_campaign(&cfg, args.workers)?;
    write_or_print(&result.to_csv(), args.output.as_deref())?;
    if let Some(path) = &args.figure_data {
        write_or_print(&figure_csv(&result), Some(path))?;
    }
    eprintln!(
        "{} cells, {} replications each, {:.1}s total",
        result.cells.len(),
        cfg.replications,
        result.total_runtime_secs
    );
    Ok(())
}

fn cmd_power(args: &PowerArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.query).map_err(|e| {
        Error::InvalidConfig(format!("query file {}: {e}", args.query.display()))
    })?;
    let spec: PowerQuerySpec = serde_json::from_str(&text).map_err(|e| {
        Error::InvalidConfig(format!("query file {}: {e}", args.query.display()))
    })?;
    let report = evaluate_query(&spec)?;
    // Stable key order for the eta map is inherited from BTreeMap.
    let _: &BTreeMap<String, f64> = &report.eta_values;
    write_or_print(&to_pretty_json(&report), args.output.as_deref())
}
