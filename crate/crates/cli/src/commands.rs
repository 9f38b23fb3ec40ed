//! Subcommand implementations behind the `wxkrig` binary.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use wxkrig_core::covariance::{empirical_semivariogram, fit_spherical, FitOptions, SphericalModel};
use wxkrig_core::evaluation::{
    cv_daily, distribution_report, index_distribution_report, kfold_split, run_direct, run_two_stage, Approach,
    EvalError, EvaluationReport, FoldAssignment,
};
use wxkrig_core::geo::{Coord, DistanceMatrix, ObservationPanel, Station};
use wxkrig_core::indexes::index_panel;
use wxkrig_core::interpolators::{with_fallback, FieldSnapshot, Method, Target};

use crate::config::{ConfigError, RunConfig};
use crate::elevation::{default_cache_dir, fetch_elevations, ElevationCache, ElevationClient, ElevationError};
use crate::ingest::{self, Dataset, LoadError};
use crate::report::{self, Format, ModelRecord, PredictionRecord, ReportError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Elevation(#[from] ElevationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Usage(String),
    #[error("output: {0}")]
    Output(String),
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl CliError {
    /// 1 validation failure, 2 load or other input error, 3 network.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Elevation(_) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wxkrig", version, about = "Spatial interpolation of daily precipitation and its extreme indexes")]
pub struct Cli {
    #[command(flatten)]
    pub opts: Opts,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Args, Default)]
pub struct Opts {
    /// Flat `key = value` configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Stations CSV (station_id,lat,lon,elev_m)
    #[arg(long, global = true)]
    pub stations: Option<PathBuf>,
    /// Observations CSV (station_id,date,precip_mm,tmax_f)
    #[arg(long, global = true)]
    pub observations: Option<PathBuf>,
    /// Comma-separated methods out of NN,IDW,OK,UK,TGK
    #[arg(long, global = true)]
    pub methods: Option<String>,
    /// CDD, MFP or a comma-separated list
    #[arg(long, global = true)]
    pub index: Option<String>,
    /// Number of cross-validation folds
    #[arg(short = 'k', long = "folds", global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub idw_power: Option<f64>,
    #[arg(long, global = true)]
    pub idw_nmax: Option<usize>,
    /// Box-Cox power for TGK
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// strict | inclusive, optionally `:mm` (default strict:1)
    #[arg(long, global = true)]
    pub dry_threshold: Option<String>,
    /// haversine | euclidean-degrees
    #[arg(long, global = true)]
    pub distance: Option<String>,
    /// strict | break-run
    #[arg(long, global = true)]
    pub missing_policy: Option<String>,
    /// per-period | pooled
    #[arg(long, global = true)]
    pub pooling: Option<String>,
    /// parallel | sequential
    #[arg(long, global = true)]
    pub execution: Option<String>,
    /// csv | markdown
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Output directory; without it the main result goes to stdout
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Elevation service URL
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Never contact the elevation service
    #[arg(long, global = true)]
    pub offline: bool,
    /// Elevation cache directory (overrides WXKRIG_CACHE_DIR)
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// More logging (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the input files and summarize missing data
    Validate,
    /// Predict one location on one date with each method
    Interpolate {
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        /// Elevation in meters (needed by UK)
        #[arg(long)]
        elev: Option<f64>,
        #[arg(long, default_value = "target")]
        target_id: String,
    },
    /// Cross-validate daily precipitation
    CvDaily,
    /// Cross-validate CDD/MFP by the direct and/or two-stage approach
    CvIndex {
        /// direct | two-stage | both
        #[arg(long)]
        approach: Option<String>,
    },
    /// Station-level CDD/MFP values
    Indexes,
    /// Cross-station skewness and kurtosis of P, T and the indexes
    Moments,
    /// Fill missing station elevations from the cache or the service
    FetchElev,
    /// Write a synthetic dataset
    Synth {
        #[arg(long, default_value_t = 138)]
        n_stations: usize,
        #[arg(long, default_value = "1990-01-01")]
        start: NaiveDate,
        #[arg(long, default_value_t = 730)]
        days: usize,
        /// Partial sill of the latent field
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        /// Range of the latent field, km
        #[arg(long, default_value_t = 300.0)]
        alpha: f64,
    },
}

impl Opts {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut put = |k: &'static str, x: Option<String>| {
            if let Some(x) = x {
                v.push((k, x));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("stations", path(&self.stations));
        put("observations", path(&self.observations));
        put("methods", self.methods.clone());
        put("indexes", self.index.clone());
        put("k", self.k.map(|x| x.to_string()));
        put("seed", self.seed.map(|x| x.to_string()));
        put("idw_power", self.idw_power.map(|x| x.to_string()));
        put("idw_nmax", self.idw_nmax.map(|x| x.to_string()));
        put("lambda", self.lambda.map(|x| x.to_string()));
        put("dry_threshold", self.dry_threshold.clone());
        put("distance", self.distance.clone());
        put("missing_policy", self.missing_policy.clone());
        put("pooling", self.pooling.clone());
        put("execution", self.execution.clone());
        put("format", self.format.clone());
        put("out", path(&self.out));
        put("endpoint", self.endpoint.clone());
        put("offline", self.offline.then(|| "true".to_string()));
        put("cache_dir", path(&self.cache_dir));
        v
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

fn input_paths(cfg: &RunConfig) -> Result<(&Path, &Path), CliError> {
    match (&cfg.stations, &cfg.observations) {
        (Some(s), Some(o)) => Ok((s, o)),
        _ => Err(CliError::Usage("--stations and --observations are required".into())),
    }
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let (s, o) = input_paths(cfg)?;
    Ok(ingest::load_dataset(s, o)?)
}

/// Opens the named output file under `--out`, or stdout.
fn sink(cfg: &RunConfig, name: &str) -> Result<Box<dyn Write>, CliError> {
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
            log::info!("writing {}", path.display());
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

/// Side output written only when `--out` is given.
fn side_sink(cfg: &RunConfig, name: &str) -> Result<Option<Box<dyn Write>>, CliError> {
    if cfg.out.is_some() {
        sink(cfg, name).map(Some)
    } else {
        Ok(None)
    }
}

fn open_cache(cfg: &RunConfig) -> Result<ElevationCache, CliError> {
    let dir = cfg.cache_dir.clone().unwrap_or_else(default_cache_dir);
    Ok(ElevationCache::open(&dir)?)
}

/// Fills missing elevations from the cache and, unless offline, the service.
fn resolve_elevations(cfg: &RunConfig, stations: &mut [Station]) -> Result<(), CliError> {
    if stations.iter().all(|s| s.elev.is_some()) {
        return Ok(());
    }
    let mut cache = open_cache(cfg)?;
    let client = ElevationClient::new(cfg.endpoint.clone());
    let result = fetch_elevations(stations, (!cfg.offline).then_some(&client), &mut cache);
    cache.save()?;
    let summary = result?;
    log::info!(
        "elevations: {} given, {} cached, {} fetched",
        summary.already_known,
        summary.cache_hits,
        summary.fetched
    );
    Ok(())
}

fn load_for(cfg: &RunConfig, methods: &[Method]) -> Result<ObservationPanel, CliError> {
    let mut panel = load(cfg)?.panel;
    if methods.contains(&Method::Uk) && cfg.interp_config().covariates.elev {
        resolve_elevations(cfg, &mut panel.stations)?;
    }
    Ok(panel)
}

fn folds(panel: &ObservationPanel, cfg: &RunConfig) -> Result<FoldAssignment, CliError> {
    let ids: Vec<&str> = panel.stations.iter().map(|s| s.id.as_str()).collect();
    Ok(kfold_split(&ids, cfg.k, cfg.seed)?)
}

fn report_name(format: Format) -> &'static str {
    match format {
        Format::Csv => "report.csv",
        Format::Markdown => "report.md",
    }
}

fn log_fallbacks(report: &EvaluationReport) {
    for r in &report.rows {
        if r.fallback_rate > 0.0 && r.metric == wxkrig_core::evaluation::Metric::Rmse {
            log::info!(
                "{} {} {} {}: IDW fallback on {:.2}% of predictions",
                r.approach,
                r.method,
                r.variable,
                r.year,
                100.0 * r.fallback_rate
            );
        }
    }
}

pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let (s, o) = input_paths(cfg)?;
    let ds = ingest::scan_dataset(s, o)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{} stations, {} days ({} to {})",
        ds.panel.n_stations(),
        ds.panel.n_days(),
        ds.panel.dates[0],
        ds.panel.dates[ds.panel.n_days() - 1]
    )?;
    writeln!(out, "missing precipitation cells: {}", ds.report.total_missing())?;
    for (id, n) in ds.report.missing_days.iter().filter(|(_, n)| **n > 0) {
        writeln!(out, "  {id}: {n} missing")?;
    }
    let no_elev = ds.panel.stations.iter().filter(|s| s.elev.is_none()).count();
    if no_elev > 0 {
        writeln!(out, "stations without elevation: {no_elev}")?;
    }
    for issue in &ds.issues {
        writeln!(out, "row {}: {}", issue.row, issue.message)?;
    }
    if ds.issues.is_empty() {
        writeln!(out, "ok")?;
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} problem row(s)", ds.issues.len())))
    }
}

/// Spherical fit to one day's raw values, for the model log.
fn day_model(panel: &ObservationPanel, d: usize, cfg: &RunConfig) -> Option<ModelRecord> {
    let values = panel.day_precip(d);
    let distances = DistanceMatrix::from_stations(&panel.stations, cfg.distance);
    let interp = cfg.interp_config();
    let emp = empirical_semivariogram(&values, &distances, &interp.variogram).ok()?;
    let (m, diag): (SphericalModel, _) = fit_spherical(&emp, None, &FitOptions::default()).ok()?;
    Some(ModelRecord {
        date: panel.dates[d].to_string(),
        sigma2: m.sigma2,
        alpha_km: m.alpha,
        nugget: m.nugget,
        converged: diag.converged,
        iterations: diag.iterations,
    })
}

pub fn interpolate(cfg: &RunConfig, date: NaiveDate, coord: Coord, elev: Option<f64>, target_id: &str) -> Result<(), CliError> {
    coord.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let panel = load_for(cfg, &cfg.methods)?;
    let d = panel
        .dates
        .binary_search(&date)
        .map_err(|_| CliError::Usage(format!("{date} is outside the observation period")))?;
    let snapshot = FieldSnapshot::new(panel.stations.clone(), panel.day_precip(d), date.to_string());
    let target = Target { coord, elev };
    let interp = cfg.interp_config();
    let mut records = Vec::new();
    for &m in &cfg.methods {
        match with_fallback(m, &snapshot, &target, &interp) {
            Ok(p) => records.push(PredictionRecord {
                date: date.to_string(),
                target_id: target_id.to_string(),
                method: m,
                value: p.value,
                variance: p.variance,
                fallback_used: p.fallback_used,
            }),
            Err(e) => log::warn!("{m}: {e}"),
        }
    }
    if records.is_empty() {
        return Err(CliError::Usage(format!("no method could predict on {date}")));
    }
    report::write_predictions(&records, sink(cfg, "predictions.csv")?)?;
    if let Some(w) = side_sink(cfg, "models.csv")? {
        report::write_models(&day_model(&panel, d, cfg).into_iter().collect::<Vec<_>>(), w)?;
    }
    Ok(())
}

pub fn cv_daily_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let panel = load_for(cfg, &cfg.methods)?;
    let folds = folds(&panel, cfg)?;
    let ecfg = cfg.eval_config();
    let mut report = EvaluationReport::new(cfg.seed);
    for &m in &cfg.methods {
        let outcome = cv_daily(&panel, m, &folds, &ecfg)?;
        if !outcome.skipped_days.is_empty() {
            log::warn!("{m}: {} day(s) with incomplete predictions", outcome.skipped_days.len());
        }
        if let Some(w) = side_sink(cfg, &format!("residuals_{m}.csv"))? {
            report::write_residuals(m, &outcome.residuals, w)?;
        }
        report.extend(outcome.rows);
    }
    log_fallbacks(&report);
    report::write_report(&report, cfg.format, sink(cfg, report_name(cfg.format))?)?;
    Ok(())
}

pub fn cv_index_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let panel = load_for(cfg, &cfg.methods)?;
    let folds = folds(&panel, cfg)?;
    let ecfg = cfg.eval_config();
    let mut report = EvaluationReport::new(cfg.seed);
    for &kind in &cfg.indexes {
        for &approach in &cfg.approaches {
            for &m in &cfg.methods {
                let rows = match approach {
                    Approach::Direct => run_direct(&panel, kind, m, &folds, &ecfg)?,
                    Approach::TwoStage => run_two_stage(&panel, kind, m, &folds, &ecfg)?,
                    Approach::Daily => return Err(CliError::Usage("cv-index takes direct or two-stage".into())),
                };
                report.extend(rows);
            }
        }
    }
    log_fallbacks(&report);
    report::write_report(&report, cfg.format, sink(cfg, report_name(cfg.format))?)?;
    Ok(())
}

pub fn indexes_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let panel = load(cfg)?.panel;
    let tables: Vec<_> = cfg
        .indexes
        .iter()
        .map(|&k| index_panel(&panel, k, cfg.index_settings()))
        .collect();
    report::write_index_tables(&tables, sink(cfg, "indexes.csv")?)?;
    Ok(())
}

pub fn moments_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let panel = load(cfg)?.panel;
    let mut rows = distribution_report(&panel);
    for &k in &cfg.indexes {
        rows.extend(index_distribution_report(&index_panel(&panel, k, cfg.index_settings())));
    }
    report::write_moments(&rows, sink(cfg, "moments.csv")?)?;
    Ok(())
}

pub fn fetch_elev_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg
        .stations
        .as_ref()
        .ok_or_else(|| CliError::Usage("--stations is required".into()))?;
    let mut stations = ingest::load_stations(path)?;
    let mut cache = open_cache(cfg)?;
    let client = ElevationClient::new(cfg.endpoint.clone());
    let result = fetch_elevations(&mut stations, (!cfg.offline).then_some(&client), &mut cache);
    cache.save()?;
    let summary = result?;
    log::info!(
        "elevations: {} given, {} cached, {} fetched",
        summary.already_known,
        summary.cache_hits,
        summary.fetched
    );
    ingest::write_stations(&stations, sink(cfg, "stations.csv")?)?;
    Ok(())
}

pub fn synth_cmd(cfg: &RunConfig, n: usize, start: NaiveDate, days: usize, sigma2: f64, alpha: f64) -> Result<(), CliError> {
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("synth needs --out".into()))?;
    let model = SphericalModel::new(sigma2, alpha, 0.0).map_err(|e| CliError::Usage(e.to_string()))?;
    let panel = wxkrig_core::synthetic::demo_panel(n, start, days, &model, cfg.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(out)?;
    ingest::write_stations(&panel.stations, BufWriter::new(File::create(out.join("stations.csv"))?))?;
    ingest::write_observations(&panel, BufWriter::new(File::create(out.join("observations.csv"))?))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = cli.opts.resolve()?;
    match cli.command {
        Command::Validate => validate(&cfg),
        Command::Interpolate {
            date,
            lat,
            lon,
            elev,
            target_id,
        } => interpolate(&cfg, date, Coord { lat, lon }, elev, &target_id),
        Command::CvDaily => cv_daily_cmd(&cfg),
        Command::CvIndex { approach } => {
            if let Some(a) = approach {
                cfg.set("approach", &a)?;
            }
            cv_index_cmd(&cfg)
        }
        Command::Indexes => indexes_cmd(&cfg),
        Command::Moments => moments_cmd(&cfg),
        Command::FetchElev => fetch_elev_cmd(&cfg),
        Command::Synth {
            n_stations,
            start,
            days,
            sigma2,
            alpha,
        } => synth_cmd(&cfg, n_stations, start, days, sigma2, alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        fs::write(&p, "seed = 5\nk = 4\nformat = markdown\n").unwrap();
        let cli = Cli::parse_from(["wxkrig", "--config", p.to_str().unwrap(), "--seed", "11", "cv-daily"]);
        let cfg = cli.opts.resolve().unwrap();
        assert_eq!((cfg.seed, cfg.k, cfg.format), (11, 4, Format::Markdown));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Validation("x".into()).exit_code(), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Elevation(ElevationError::OfflineMiss(vec!["A".into()])).exit_code(), 3);
    }
}
