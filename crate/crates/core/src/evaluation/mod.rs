//! Cross-validated comparison of the interpolation methods on daily
//! precipitation and on the CDD/MFP indexes (direct and two-stage).

mod cv;
mod folds;
mod metrics;
mod moments;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::indexes::IndexSettings;
use crate::interpolators::{InterpConfig, InterpError, Method};
use crate::par::Execution;

pub use cv::{
    cv_daily, predict_daily_panel, run_direct, run_two_stage, DailyCvOutcome, DailyPredictions,
    DayMetrics, ResidualRecord,
};
pub use folds::{kfold_split, FoldAssignment};
pub use metrics::{kurtosis, mae, rmse, skewness};
pub use moments::{distribution_report, index_distribution_report, MomentRow, MomentVariable};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("fold error: {0}")]
    Fold(String),
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} observations")]
    LengthMismatch(usize, usize),
    #[error("moment undefined for a sample with zero variance")]
    UndefinedMoment,
    #[error("stations without elevation: {0}")]
    MissingElevation(String),
    #[error("negative precipitation at station {station} on day index {day}")]
    NegativeValue { station: String, day: usize },
    #[error(transparent)]
    Interp(#[from] InterpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Approach {
    Daily,
    Direct,
    TwoStage,
}

impl Approach {
    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Daily => "daily",
            Approach::Direct => "direct",
            Approach::TwoStage => "two-stage",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "daily" => Ok(Approach::Daily),
            "direct" => Ok(Approach::Direct),
            "two-stage" => Ok(Approach::TwoStage),
            _ => Err(format!("unknown approach `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    P,
    Mfp,
    Cdd,
}

impl Variable {
    pub fn as_str(self) -> &'static str {
        match self {
            Variable::P => "P",
            Variable::Mfp => "MFP",
            Variable::Cdd => "CDD",
        }
    }
}

impl From<crate::indexes::IndexKind> for Variable {
    fn from(k: crate::indexes::IndexKind) -> Self {
        match k {
            crate::indexes::IndexKind::Cdd => Variable::Cdd,
            crate::indexes::IndexKind::Mfp => Variable::Mfp,
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variable {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P" => Ok(Variable::P),
            "MFP" => Ok(Variable::Mfp),
            "CDD" => Ok(Variable::Cdd),
            _ => Err(format!("unknown variable `{s}`")),
        }
    }
}

/// A calendar year, or the whole evaluation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum YearLabel {
    Year(i32),
    All,
}

impl fmt::Display for YearLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            YearLabel::Year(y) => write!(f, "{y}"),
            YearLabel::All => f.write_str("all"),
        }
    }
}

impl FromStr for YearLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(YearLabel::All);
        }
        s.parse()
            .map(YearLabel::Year)
            .map_err(|_| format!("bad year `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Rmse,
    Mae,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Rmse => "RMSE",
            Metric::Mae => "MAE",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RMSE" => Ok(Metric::Rmse),
            "MAE" => Ok(Metric::Mae),
            _ => Err(format!("unknown metric `{s}`")),
        }
    }
}

/// How a year's error is formed from its periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Metric per period (day, month or year), then the arithmetic mean.
    #[default]
    PerPeriod,
    /// Metric over all residuals of the year at once.
    Pooled,
}

impl FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-period" | "per-day" => Ok(Pooling::PerPeriod),
            "pooled" => Ok(Pooling::Pooled),
            _ => Err(format!("unknown pooling `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalConfig {
    pub interp: InterpConfig,
    pub index: IndexSettings,
    pub pooling: Pooling,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub approach: Approach,
    pub method: Method,
    pub variable: Variable,
    pub year: YearLabel,
    pub metric: Metric,
    pub value: f64,
    /// Periods (days, months or years) that contributed.
    pub n_periods: usize,
    /// Share of predictions that IDW produced in place of the method.
    pub fallback_rate: f64,
}

impl ReportRow {
    fn sort_key(&self) -> (Approach, Method, Variable, YearLabel, Metric) {
        (self.approach, self.method, self.variable, self.year, self.metric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn new(seed: u64) -> Self {
        EvaluationReport { seed, rows: Vec::new() }
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = ReportRow>) {
        self.rows.extend(rows);
        self.sort();
    }

    /// Orders rows by (approach, method, variable, year, metric).
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }

    pub fn find(
        &self,
        approach: Approach,
        method: Method,
        variable: Variable,
        year: YearLabel,
        metric: Metric,
    ) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.sort_key() == (approach, method, variable, year, metric))
    }
}
