//! Run configuration: defaults, overridden by a flat `key = value` file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use wxkrig_core::evaluation::{Approach, EvalConfig, Pooling, DEFAULT_FOLDS, DEFAULT_SEED};
use wxkrig_core::geo::DistanceMetric;
use wxkrig_core::indexes::{DryThreshold, IndexKind, IndexSettings, MissingPolicy};
use wxkrig_core::interpolators::{InterpConfig, Method, TransformSpec};
use wxkrig_core::par::Execution;

use crate::elevation::DEFAULT_ENDPOINT;
use crate::report::Format;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    File { path: String, line: usize, message: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub stations: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub indexes: Vec<IndexKind>,
    pub approaches: Vec<Approach>,
    pub k: usize,
    pub seed: u64,
    pub idw_power: f64,
    pub idw_nmax: usize,
    pub lambda: f64,
    pub dry_threshold: DryThreshold,
    pub distance: DistanceMetric,
    pub missing_policy: MissingPolicy,
    pub pooling: Pooling,
    pub execution: Execution,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub endpoint: String,
    pub offline: bool,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stations: None,
            observations: None,
            methods: Method::ALL.to_vec(),
            indexes: vec![IndexKind::Cdd, IndexKind::Mfp],
            approaches: vec![Approach::Direct, Approach::TwoStage],
            k: DEFAULT_FOLDS,
            seed: DEFAULT_SEED,
            idw_power: 2.0,
            idw_nmax: 20,
            lambda: 1.0 / 3.0,
            dry_threshold: DryThreshold::default(),
            distance: DistanceMetric::Haversine,
            missing_policy: MissingPolicy::Strict,
            pooling: Pooling::PerPeriod,
            execution: Execution::Parallel,
            format: Format::Csv,
            out: None,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            offline: false,
            cache_dir: None,
        }
    }
}

fn list<T: FromStr<Err = String>>(s: &str) -> Result<Vec<T>, String> {
    let items = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(T::from_str)
        .collect::<Result<Vec<_>, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

/// `strict` or `inclusive`, optionally followed by `:mm`.
pub fn parse_dry_threshold(s: &str) -> Result<DryThreshold, String> {
    let (mode, mm) = match s.split_once(':') {
        Some((m, v)) => (m, v.parse::<f64>().map_err(|e| format!("threshold: {e}"))?),
        None => (s, DryThreshold::default().mm),
    };
    let inclusive = match mode {
        "strict" => false,
        "inclusive" => true,
        _ => return Err(format!("unknown dry threshold mode `{mode}`")),
    };
    if !(mm.is_finite() && mm >= 0.0) {
        return Err(format!("threshold must be a non-negative number, got {mm}"));
    }
    Ok(DryThreshold { mm, inclusive })
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("not a boolean: `{s}`")),
    }
}

impl RunConfig {
    /// Sets one option from its text form. Keys use `_` or `-`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.replace('-', "_");
        let v = value.trim();
        let err = |message: String| ConfigError::Value {
            key: key.clone(),
            message,
        };
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| e.to_string())
        }
        match key.as_str() {
            "stations" => self.stations = Some(PathBuf::from(v)),
            "observations" => self.observations = Some(PathBuf::from(v)),
            "methods" => self.methods = list(v).map_err(err)?,
            "indexes" | "index" => self.indexes = list(v).map_err(err)?,
            "approach" | "approaches" => {
                self.approaches = if v == "both" {
                    vec![Approach::Direct, Approach::TwoStage]
                } else {
                    list(v).map_err(err)?
                }
            }
            "k" | "folds" => self.k = num(v).map_err(err)?,
            "seed" => self.seed = num(v).map_err(err)?,
            "idw_power" => self.idw_power = num(v).map_err(err)?,
            "idw_nmax" => self.idw_nmax = num(v).map_err(err)?,
            "lambda" => self.lambda = num(v).map_err(err)?,
            "dry_threshold" => self.dry_threshold = parse_dry_threshold(v).map_err(err)?,
            "distance" => self.distance = v.parse().map_err(err)?,
            "missing_policy" => self.missing_policy = v.parse().map_err(err)?,
            "pooling" => self.pooling = v.parse().map_err(err)?,
            "execution" => self.execution = v.parse().map_err(err)?,
            "format" => self.format = v.parse().map_err(err)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "endpoint" => self.endpoint = v.to_string(),
            "offline" => self.offline = parse_bool(v).map_err(err)?,
            "cache_dir" => self.cache_dir = Some(PathBuf::from(v)),
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let file_err = |message: String| ConfigError::File {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| file_err(format!("expected key = value, got `{line}`")))?;
            self.set(k.trim(), v).map_err(|e| file_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Checks ranges that the individual parsers cannot.
    pub fn check(&self) -> Result<(), ConfigError> {
        let err = |key: &str, message: String| ConfigError::Value {
            key: key.into(),
            message,
        };
        if self.k < 2 {
            return Err(err("k", format!("need at least 2 folds, got {}", self.k)));
        }
        if !(self.idw_power.is_finite() && self.idw_power > 0.0) {
            return Err(err("idw_power", format!("must be positive, got {}", self.idw_power)));
        }
        if self.idw_nmax == 0 {
            return Err(err("idw_nmax", "must be at least 1".into()));
        }
        TransformSpec::new(self.lambda).map_err(|e| err("lambda", e.to_string()))?;
        Ok(())
    }

    pub fn interp_config(&self) -> InterpConfig {
        InterpConfig {
            metric: self.distance,
            idw_power: self.idw_power,
            idw_max_neighbors: self.idw_nmax,
            transform: TransformSpec { lambda: self.lambda },
            ..InterpConfig::default()
        }
    }

    pub fn index_settings(&self) -> IndexSettings {
        IndexSettings {
            dry: self.dry_threshold,
            policy: self.missing_policy,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            interp: self.interp_config(),
            index: self.index_settings(),
            pooling: self.pooling,
            execution: self.execution,
        }
    }
}
