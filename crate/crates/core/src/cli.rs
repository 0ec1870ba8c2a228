//! Command-line front end. The binary only calls [`main_with_args`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{Config, Experiment};
use crate::data::{load_csv, save_csv, standardize, Dataset};
use crate::error::{Error, Result};
use crate::eval::{self, report_table, MetricsReport, SeedMetrics};
use crate::losses::diagnostics;
use crate::nets::ModelBundle;
use crate::trainer::{self, CellResult, SweepGrid, SweepOptions};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_NAN: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pipcfr", version, about = "Treatment-effect estimation with post-treatment pseudo-outcomes")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Output directory (default: `$PIPCFR_OUT/<subcommand>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/val/test CSVs and a metadata file.
    Generate(DataFlags),
    /// Train one model and write its checkpoint and trace.
    Train(TrainFlags),
    /// Evaluate a checkpoint on a labelled CSV.
    Eval(EvalFlags),
    /// Run a grid of full pipelines.
    Sweep(SweepFlags),
    /// Monte-Carlo least-squares study of the linear post-treatment example.
    Oracle(OracleFlags),
    /// Aggregate sweep records into a mean ± std table.
    Report(ReportFlags),
}

#[derive(Debug, Args, Default)]
pub struct DataFlags {
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "eps-u")]
    pub eps_u: Option<f64>,
    #[arg(long = "sigma-u")]
    pub sigma_u: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[command(flatten)]
    pub data: DataFlags,
    /// Directory with train.csv and val.csv (and optionally test.csv).
    /// Without it the configured generator is used.
    #[arg(long = "data-dir")]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "kl-sign")]
    pub kl_sign: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled CSV for out-of-sample metrics.
    #[arg(long)]
    pub data: PathBuf,
    /// Training CSV for in-sample PEHE.
    #[arg(long)]
    pub train: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepFlags {
    /// Grid axis `key=v1,v2,...`. Repeatable; `;` also separates axes.
    #[arg(long = "grid", required = true)]
    pub grid: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub keep_checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct OracleFlags {
    #[arg(long = "sigma-u", value_delimiter = ',', default_value = "1,2,3")]
    pub sigma_u: Vec<f64>,
    #[arg(long = "n-mc", default_value_t = 1_000_000)]
    pub n_mc: usize,
}

#[derive(Debug, Args)]
pub struct ReportFlags {
    /// Sweep output directory (reads `cells/*.json`).
    #[arg(long)]
    pub input: PathBuf,
    /// Grid keys that identify a row; all other axes (normally `seed`) are
    /// aggregated.
    #[arg(long = "by", value_delimiter = ',')]
    pub by: Vec<String>,
}

/// Parses `args`, runs, prints a one-line JSON error on failure and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "code": EXIT_USAGE, "message": first }));
            return EXIT_USAGE;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("{}", json!({ "error": kind, "code": code, "message": e.to_string() }));
            code
        }
    }
}

pub fn classify(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Config(_) => ("config", EXIT_USAGE),
        Error::NonFinite { .. } => ("non_finite", EXIT_NAN),
        Error::DimensionMismatch { .. } => ("dimension_mismatch", EXIT_RUNTIME),
        Error::Csv { .. } | Error::Data(_) => ("data", EXIT_RUNTIME),
        Error::Io { .. } => ("io", EXIT_RUNTIME),
        _ => ("runtime", EXIT_RUNTIME),
    }
}

fn out_dir(common: &Common, sub: &str) -> Result<PathBuf> {
    let dir = match &common.out {
        Some(p) => p.clone(),
        None => std::env::var_os("PIPCFR_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("pipcfr-out"))
            .join(sub),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Config file, then `--set`, then dedicated flags.
fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

fn data_overrides(d: &DataFlags) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("data.kind", d.kind.clone()),
        ("data.n", d.n.map(|v| v.to_string())),
        ("temporal.k", d.k.map(|v| v.to_string())),
        ("temporal.eps_u", d.eps_u.map(|v| v.to_string())),
        ("example1.sigma_u", d.sigma_u.map(|v| v.to_string())),
    ]
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn summary(v: &[f64]) -> serde_json::Value {
    let (mean, var) = eval::mean_var(v);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    json!({ "mean": mean, "std": var.sqrt(), "min": min, "max": max })
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(d) => generate(cli, d),
        Command::Train(t) => train(cli, t),
        Command::Eval(e) => evaluate(cli, e),
        Command::Sweep(s) => sweep(cli, s),
        Command::Oracle(o) => oracle(cli, o),
        Command::Report(r) => report(cli, r),
    }
}

fn generate(cli: &Cli, d: &DataFlags) -> Result<()> {
    let cfg = resolve(&cli.common, &data_overrides(d))?;
    let exp = Experiment::from_config(&cfg)?;
    let dir = out_dir(&cli.common, "generate")?;
    let (tr, va, te) = exp.splits()?;
    for (name, ds) in [("train", &tr), ("val", &va), ("test", &te)] {
        save_csv(ds, dir.join(format!("{name}.csv")))?;
    }
    let tau: Vec<f64> = [&tr, &va, &te].iter().flat_map(|d| d.tau_true.clone().unwrap_or_default()).collect();
    let meta = json!({
        "seed": exp.seed,
        "config_hash": cfg.hash(),
        "kind": cfg.raw("data.kind")?,
        "rows": { "train": tr.len(), "val": va.len(), "test": te.len() },
        "x_dim": tr.x_dim(),
        "s_dim": tr.s_dim(),
        "tau": if tau.is_empty() { serde_json::Value::Null } else { summary(&tau) },
        "generated_at_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    });
    write(&dir.join("metadata.json"), &serde_json::to_string_pretty(&meta)?)?;
    cfg.save(dir.join("config.txt"))?;
    println!("{}", dir.display());
    Ok(())
}

fn train(cli: &Cli, t: &TrainFlags) -> Result<()> {
    let mut flags = data_overrides(&t.data);
    flags.extend([
        ("train.method", t.method.clone()),
        ("train.epochs", t.epochs.map(|v| v.to_string())),
        ("train.gamma", t.gamma.map(|v| v.to_string())),
        ("train.kl_sign", t.kl_sign.clone()),
    ]);
    let cfg = resolve(&cli.common, &flags)?;
    let exp = Experiment::from_config(&cfg)?;
    let dir = out_dir(&cli.common, "train")?;
    let (tr_raw, va_raw, te_raw) = match &t.data_dir {
        Some(d) => {
            let test = d.join("test.csv");
            (
                load_csv(d.join("train.csv"))?,
                load_csv(d.join("val.csv"))?,
                if test.exists() { Some(load_csv(test)?) } else { None },
            )
        }
        None => {
            let (a, b, c) = exp.splits()?;
            (a, b, Some(c))
        }
    };
    let (tr, others, scaler) = standardize(&tr_raw, &[&va_raw])?;
    let mut tcfg = exp.train.clone();
    tcfg.checkpoint_path = Some(dir.join("bundle.json"));
    cfg.save(dir.join("config.txt"))?;
    let (bundle, trace) = trainer::train(&tr, &others[0], &scaler, &tcfg)?;
    trace.save_csv(dir.join("trace.csv"))?;
    trace.save_timing(dir.join("timing.csv"))?;
    if let Some(te) = te_raw.filter(|d| d.tau_true.is_some() && d.y0_true.is_some()) {
        let m = SeedMetrics::compute(&bundle, exp.seed, &tr_raw, &te)?;
        write(&dir.join("metrics.json"), &serde_json::to_string_pretty(&m)?)?;
    }
    println!("{}", dir.display());
    Ok(())
}

fn evaluate(cli: &Cli, e: &EvalFlags) -> Result<()> {
    let bundle = ModelBundle::load(&e.checkpoint)?;
    let ds = load_csv(&e.data)?;
    if ds.x_dim() != bundle.x_dim {
        return Err(Error::DimensionMismatch { what: "covariates", expected: bundle.x_dim, found: ds.x_dim() });
    }
    let dir = out_dir(&cli.common, "eval")?;
    let mut out = serde_json::Map::new();
    out.insert("method".into(), json!(bundle.method.name()));
    if ds.tau_true.is_some() {
        out.insert("pehe_out".into(), json!(eval::pehe(&bundle, &ds)?));
    }
    if let Some(p) = &e.train {
        out.insert("pehe_in".into(), json!(eval::pehe(&bundle, &load_csv(p)?)?));
    }
    if ds.y0_true.is_some() {
        let (m, v) = eval::counterfactual_variance(&bundle, &ds)?;
        out.insert("cf_error_mean".into(), json!(m));
        out.insert("cf_error_var".into(), json!(v));
        if bundle.pip.is_some() && ds.s.is_some() {
            out.insert("diagnostics".into(), serde_json::to_value(diagnostics(&bundle, &ds)?)?);
        }
    }
    let body = serde_json::to_string_pretty(&out)?;
    write(&dir.join("metrics.json"), &body)?;
    println!("{body}");
    Ok(())
}

fn sweep(cli: &Cli, s: &SweepFlags) -> Result<()> {
    let cfg = resolve(&cli.common, &[])?;
    let mut grid = SweepGrid::default();
    for axis in s.grid.iter().flat_map(|g| g.split(';')).map(str::trim).filter(|a| !a.is_empty()) {
        grid.push_axis(axis)?;
    }
    let dir = out_dir(&cli.common, "sweep")?;
    cfg.save(dir.join("config.txt"))?;
    let summary = trainer::sweep(
        &cfg,
        &grid,
        &SweepOptions { out_dir: dir.clone(), workers: s.workers, keep_checkpoints: s.keep_checkpoints },
    )?;
    println!(
        "{} cells, {} resumed, {} failed -> {}",
        summary.cells.len(),
        summary.resumed,
        summary.failed,
        dir.join("results.csv").display()
    );
    Ok(())
}

fn oracle(cli: &Cli, o: &OracleFlags) -> Result<()> {
    let cfg = resolve(&cli.common, &[("data.kind", Some("example1".into()))])?;
    let exp = Experiment::from_config(&cfg)?;
    let crate::config::DataSpec::Example1(base) = exp.data else {
        unreachable!("data.kind forced to example1")
    };
    let dir = out_dir(&cli.common, "oracle")?;
    let mut studies = Vec::new();
    for &su in &o.sigma_u {
        let study = eval::example1_oracle(&crate::datagen::Example1Config { sigma_u: su, ..base }, o.n_mc)?;
        for c in &study.cases {
            for a in &c.arms {
                println!(
                    "sigma_u={su} case={} arm={} mean={:.4} (target {:.4}) var={:.4} (target {:.4})",
                    c.name, a.arm, a.mean, a.target_mean, a.var, a.target_var
                );
            }
        }
        studies.push(study);
    }
    write(&dir.join("oracle.json"), &serde_json::to_string_pretty(&studies)?)?;
    cfg.save(dir.join("config.txt"))?;
    Ok(())
}

/// Groups sweep records by method and the `by` keys and aggregates the
/// remaining axes (normally seeds). The fingerprint is the first member's
/// config hash.
pub fn aggregate_cells(cells: &[CellResult], by: &[String]) -> Result<Vec<MetricsReport>> {
    let by: Vec<&str> = by.iter().map(|k| crate::config::resolve_key(k)).collect::<Result<_>>()?;
    let mut groups: BTreeMap<String, (String, Vec<SeedMetrics>)> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.ok) {
        let Some(m) = &c.metrics else { continue };
        let label: Vec<String> = c
            .overrides
            .iter()
            .filter(|(k, _)| by.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let name = if label.is_empty() { c.method.clone() } else { format!("{} [{}]", c.method, label.join(" ")) };
        groups.entry(name).or_insert_with(|| (c.config_hash.clone(), Vec::new())).1.push(m.clone());
    }
    groups.into_iter().map(|(name, (hash, v))| MetricsReport::aggregate(&name, &hash, v)).collect()
}

fn report(cli: &Cli, r: &ReportFlags) -> Result<()> {
    let cell_dir = r.input.join("cells");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&cell_dir)
        .map_err(|e| Error::io(&cell_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".bundle.json"))
        .collect();
    paths.sort();
    let cells = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str::<CellResult>(&text)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = aggregate_cells(&cells, &r.by)?;
    if reports.is_empty() {
        return Err(Error::Data(format!("no successful records under {}", cell_dir.display())));
    }
    let table = report_table(&reports);
    let dir = out_dir(&cli.common, "report")?;
    write(&dir.join("report.txt"), &table)?;
    write(&dir.join("report.json"), &serde_json::to_string_pretty(&reports)?)?;
    print!("{table}");
    Ok(())
}

/// Loads the three CSVs written by `generate`.
pub fn load_generated(dir: &Path) -> Result<(Dataset, Dataset, Dataset)> {
    Ok((load_csv(dir.join("train.csv"))?, load_csv(dir.join("val.csv"))?, load_csv(dir.join("test.csv"))?))
}
