//! Precipitation indexes: annual maximum consecutive dry days (CDD) and
//! monthly maximum five-day precipitation (MFP).
//!
//! Runs and windows never cross their period (calendar year for CDD,
//! calendar month for MFP). Days absent from the input are treated as
//! missing, and the [`MissingPolicy`] decides what a missing day does.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::geo::ObservationPanel;

pub const MFP_WINDOW: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("series does not span exactly one {expected}: starts {start}, {len} days")]
    Period {
        expected: &'static str,
        start: NaiveDate,
        len: usize,
    },
}

/// Dry-day rule: `p < mm`, or `p <= mm` when `inclusive`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DryThreshold {
    pub mm: f64,
    pub inclusive: bool,
}

impl Default for DryThreshold {
    fn default() -> Self {
        DryThreshold {
            mm: 1.0,
            inclusive: false,
        }
    }
}

impl DryThreshold {
    pub fn inclusive() -> Self {
        DryThreshold {
            mm: 1.0,
            inclusive: true,
        }
    }
}

/// `None` for a missing observation.
pub fn is_dry_day(p: Option<f64>, rule: DryThreshold) -> Option<bool> {
    p.map(|p| if rule.inclusive { p <= rule.mm } else { p < rule.mm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Any missing day makes the period's index missing.
    #[default]
    Strict,
    /// Missing days end dry runs and invalidate the windows containing them.
    BreakRun,
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingPolicy::Strict => "strict",
            MissingPolicy::BreakRun => "break-run",
        })
    }
}

impl FromStr for MissingPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(MissingPolicy::Strict),
            "break-run" => Ok(MissingPolicy::BreakRun),
            _ => Err(format!("unknown missing-day policy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IndexSettings {
    pub dry: DryThreshold,
    pub policy: MissingPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexKind {
    Cdd,
    Mfp,
}

impl IndexKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Cdd => "CDD",
            IndexKind::Mfp => "MFP",
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CDD" => Ok(IndexKind::Cdd),
            "MFP" => Ok(IndexKind::Mfp),
            _ => Err(format!("unknown index `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Period {
    Year(i32),
    Month(i32, u32),
}

impl Period {
    pub fn year(&self) -> i32 {
        match *self {
            Period::Year(y) | Period::Month(y, _) => y,
        }
    }

    pub fn first_day(&self) -> NaiveDate {
        match *self {
            Period::Year(y) => NaiveDate::from_ymd_opt(y, 1, 1).unwrap(),
            Period::Month(y, m) => NaiveDate::from_ymd_opt(y, m, 1).unwrap(),
        }
    }

    pub fn n_days(&self) -> usize {
        let start = self.first_day();
        let next = match *self {
            Period::Year(y) => NaiveDate::from_ymd_opt(y + 1, 1, 1).unwrap(),
            Period::Month(y, 12) => NaiveDate::from_ymd_opt(y + 1, 1, 1).unwrap(),
            Period::Month(y, m) => NaiveDate::from_ymd_opt(y, m + 1, 1).unwrap(),
        };
        (next - start).num_days() as usize
    }

    pub fn containing(kind: IndexKind, d: NaiveDate) -> Period {
        match kind {
            IndexKind::Cdd => Period::Year(d.year()),
            IndexKind::Mfp => Period::Month(d.year(), d.month()),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Year(y) => write!(f, "{y:04}"),
            Period::Month(y, m) => write!(f, "{y:04}-{m:02}"),
        }
    }
}

impl FromStr for Period {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad period `{s}`");
        match s.split_once('-') {
            None => s.parse().map(Period::Year).map_err(|_| bad()),
            Some((y, m)) => {
                let y: i32 = y.parse().map_err(|_| bad())?;
                let m: u32 = m.parse().map_err(|_| bad())?;
                if !(1..=12).contains(&m) {
                    return Err(bad());
                }
                Ok(Period::Month(y, m))
            }
        }
    }
}

/// Consecutive daily precipitation starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub start: NaiveDate,
    pub precip: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexValue {
    pub period: Period,
    pub value: Option<f64>,
    /// Fraction of days in the period with an observation.
    pub completeness: f64,
}

/// Longest run of dry days. `None` under the strict policy when any day is
/// missing.
pub fn max_dry_run(values: &[Option<f64>], rule: DryThreshold, policy: MissingPolicy) -> Option<u32> {
    if policy == MissingPolicy::Strict && values.iter().any(Option::is_none) {
        return None;
    }
    let mut best = 0u32;
    let mut run = 0u32;
    for v in values {
        if is_dry_day(*v, rule) == Some(true) {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    Some(best)
}

/// Largest sum over `window` consecutive days. Under the break-run policy,
/// windows touching a missing day are skipped; `None` if no window is usable.
pub fn max_window_sum(values: &[Option<f64>], window: usize, policy: MissingPolicy) -> Option<f64> {
    if window == 0 || values.len() < window {
        return None;
    }
    if policy == MissingPolicy::Strict && values.iter().any(Option::is_none) {
        return None;
    }
    values
        .windows(window)
        .filter_map(|w| w.iter().try_fold(0.0, |acc, v| v.map(|v| acc + v)))
        .fold(None, |best: Option<f64>, s| Some(best.map_or(s, |b| b.max(s))))
}

fn completeness(values: &[Option<f64>]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| v.is_some()).count() as f64 / values.len() as f64
}

/// CDD of a series covering exactly one calendar year.
pub fn cdd(series: &DailySeries, settings: IndexSettings) -> Result<IndexValue, IndexError> {
    let period = Period::Year(series.start.year());
    if series.start != period.first_day() || series.precip.len() != period.n_days() {
        return Err(IndexError::Period {
            expected: "calendar year",
            start: series.start,
            len: series.precip.len(),
        });
    }
    Ok(IndexValue {
        period,
        value: max_dry_run(&series.precip, settings.dry, settings.policy).map(f64::from),
        completeness: completeness(&series.precip),
    })
}

/// MFP of a series covering exactly one calendar month.
pub fn mfp(series: &DailySeries, policy: MissingPolicy) -> Result<IndexValue, IndexError> {
    let period = Period::Month(series.start.year(), series.start.month());
    if series.start != period.first_day() || series.precip.len() != period.n_days() {
        return Err(IndexError::Period {
            expected: "calendar month",
            start: series.start,
            len: series.precip.len(),
        });
    }
    Ok(IndexValue {
        period,
        value: max_window_sum(&series.precip, MFP_WINDOW, policy),
        completeness: completeness(&series.precip),
    })
}

/// Periods of `kind` overlapping the date range `[first, last]`.
pub fn periods_between(kind: IndexKind, first: NaiveDate, last: NaiveDate) -> Vec<Period> {
    let mut out = Vec::new();
    let mut p = Period::containing(kind, first);
    loop {
        out.push(p);
        let next = p.first_day() + chrono::Days::new(p.n_days() as u64);
        if next > last {
            break;
        }
        p = Period::containing(kind, next);
    }
    out
}

/// Index values for one station's series on a (possibly gappy) date axis.
/// Periods are whole calendar periods overlapping the axis; days of a
/// period not on the axis count as missing.
pub fn index_series(
    dates: &[NaiveDate],
    values: &[Option<f64>],
    kind: IndexKind,
    settings: IndexSettings,
) -> Vec<IndexValue> {
    assert_eq!(dates.len(), values.len());
    let (Some(&first), Some(&last)) = (dates.first(), dates.last()) else {
        return Vec::new();
    };
    let mut cursor = 0;
    periods_between(kind, first, last)
        .into_iter()
        .map(|period| {
            let start = period.first_day();
            let mut daily = vec![None; period.n_days()];
            while cursor < dates.len() && Period::containing(kind, dates[cursor]) == period {
                let offset = (dates[cursor] - start).num_days() as usize;
                daily[offset] = values[cursor];
                cursor += 1;
            }
            let series = DailySeries {
                start,
                precip: daily,
            };
            match kind {
                IndexKind::Cdd => cdd(&series, settings),
                IndexKind::Mfp => mfp(&series, settings.policy),
            }
            .expect("series built to span its period")
        })
        .collect()
}

/// Station × period index values.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexTable {
    pub kind: IndexKind,
    pub settings: IndexSettings,
    pub station_ids: Vec<String>,
    pub periods: Vec<Period>,
    /// `values[station][period]`
    pub values: Vec<Vec<Option<f64>>>,
    pub completeness: Vec<Vec<f64>>,
}

impl IndexTable {
    pub fn period_values(&self, p: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|row| row[p]).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }
}

pub fn index_panel(panel: &ObservationPanel, kind: IndexKind, settings: IndexSettings) -> IndexTable {
    let per_station: Vec<Vec<IndexValue>> = panel
        .precip
        .iter()
        .map(|row| index_series(&panel.dates, row, kind, settings))
        .collect();
    let periods = per_station
        .first()
        .map(|v| v.iter().map(|iv| iv.period).collect())
        .unwrap_or_default();
    IndexTable {
        kind,
        settings,
        station_ids: panel.stations.iter().map(|s| s.id.clone()).collect(),
        periods,
        values: per_station
            .iter()
            .map(|v| v.iter().map(|iv| iv.value).collect())
            .collect(),
        completeness: per_station
            .iter()
            .map(|v| v.iter().map(|iv| iv.completeness).collect())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Station;

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|x| Some(*x)).collect()
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn dry_day_rule() {
        let r = DryThreshold::default();
        assert_eq!(is_dry_day(Some(0.0), r), Some(true));
        assert_eq!(is_dry_day(Some(1.0), r), Some(false));
        assert_eq!(is_dry_day(Some(0.999), r), Some(true));
        assert_eq!(is_dry_day(None, r), None);
        assert_eq!(is_dry_day(Some(1.0), DryThreshold::inclusive()), Some(true));
    }

    #[test]
    fn dry_run_examples() {
        let r = DryThreshold::default();
        let toy = some(&[0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0]);
        assert_eq!(max_dry_run(&toy, r, MissingPolicy::Strict), Some(3));
        assert_eq!(max_dry_run(&some(&[1.0; 20]), r, MissingPolicy::Strict), Some(0));
    }

    #[test]
    fn cdd_full_year() {
        let s = DailySeries {
            start: d("1993-01-01"),
            precip: vec![Some(0.0); 365],
        };
        let v = cdd(&s, IndexSettings::default()).unwrap();
        assert_eq!(v.value, Some(365.0));
        assert_eq!(v.period, Period::Year(1993));
        assert_eq!(v.completeness, 1.0);

        let short = DailySeries {
            start: d("1993-01-01"),
            precip: vec![Some(0.0); 364],
        };
        assert!(matches!(cdd(&short, IndexSettings::default()), Err(IndexError::Period { .. })));
        let leap = DailySeries {
            start: d("1992-01-01"),
            precip: vec![Some(0.0); 366],
        };
        assert_eq!(cdd(&leap, IndexSettings::default()).unwrap().value, Some(366.0));
    }

    #[test]
    fn missing_day_policies() {
        let r = DryThreshold::default();
        let v = vec![Some(0.0), Some(0.0), None, Some(0.0), Some(0.0), Some(0.0)];
        assert_eq!(max_dry_run(&v, r, MissingPolicy::Strict), None);
        assert_eq!(max_dry_run(&v, r, MissingPolicy::BreakRun), Some(3));
        let w = vec![Some(5.0), Some(1.0), Some(1.0), Some(1.0), Some(1.0), Some(1.0), None];
        assert_eq!(max_window_sum(&w, 5, MissingPolicy::Strict), None);
        assert_eq!(max_window_sum(&w, 5, MissingPolicy::BreakRun), Some(9.0));
    }

    #[test]
    fn window_sum_examples() {
        assert_eq!(max_window_sum(&some(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 5, MissingPolicy::Strict), Some(20.0));
        assert_eq!(max_window_sum(&some(&[2.0; 30]), 5, MissingPolicy::Strict), Some(10.0));
        let mut spike = vec![0.0; 31];
        spike[17] = 50.0;
        assert_eq!(max_window_sum(&some(&spike), 5, MissingPolicy::Strict), Some(50.0));
        assert_eq!(max_window_sum(&some(&[1.0; 4]), 5, MissingPolicy::Strict), None);
    }

    #[test]
    fn mfp_checks_period() {
        let s = DailySeries {
            start: d("1993-02-01"),
            precip: vec![Some(1.0); 28],
        };
        assert_eq!(mfp(&s, MissingPolicy::Strict).unwrap().value, Some(5.0));
        let off = DailySeries {
            start: d("1993-02-02"),
            precip: vec![Some(1.0); 27],
        };
        assert!(mfp(&off, MissingPolicy::Strict).is_err());
    }

    #[test]
    fn period_formatting() {
        assert_eq!(Period::Year(1993).to_string(), "1993");
        assert_eq!(Period::Month(1993, 7).to_string(), "1993-07");
        assert_eq!("1993-07".parse::<Period>().unwrap(), Period::Month(1993, 7));
        assert_eq!("1990".parse::<Period>().unwrap(), Period::Year(1990));
        assert!("1990-13".parse::<Period>().is_err());
    }

    fn one_station_panel(start: &str, days: usize, f: impl Fn(usize) -> Option<f64>) -> ObservationPanel {
        let s0 = d(start);
        let dates: Vec<NaiveDate> = (0..days).map(|i| s0 + chrono::Days::new(i as u64)).collect();
        ObservationPanel::new(
            vec![Station::new("S1", 40.0, -95.0, None).unwrap()],
            dates,
            vec![(0..days).map(f).collect()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn index_panel_cardinality() {
        let p = one_station_panel("1993-01-01", 365, |i| Some((i % 7) as f64));
        let t = index_panel(&p, IndexKind::Cdd, IndexSettings::default());
        assert_eq!(t.periods, vec![Period::Year(1993)]);
        assert_eq!(t.values[0].len(), 1);

        let days = (d("1994-01-01") - d("1990-01-01")).num_days() as usize;
        let p = one_station_panel("1990-01-01", days, |i| Some((i % 5) as f64));
        let t = index_panel(&p, IndexKind::Mfp, IndexSettings::default());
        assert_eq!(t.periods.len(), 48);
        assert!(t.values[0].iter().all(Option::is_some));
    }

    #[test]
    fn missing_july_day_only_affects_july() {
        let p = one_station_panel("1993-01-01", 365, |i| if i == 190 { None } else { Some(1.0) });
        let t = index_panel(&p, IndexKind::Mfp, IndexSettings::default());
        for (k, period) in t.periods.iter().enumerate() {
            if *period == Period::Month(1993, 7) {
                assert_eq!(t.values[0][k], None);
                assert!(t.completeness[0][k] < 1.0);
            } else {
                assert_eq!(t.values[0][k], Some(5.0));
            }
        }
    }

    #[test]
    fn days_off_axis_count_as_missing() {
        // axis starts mid-year, so the year is incomplete
        let p = one_station_panel("1993-03-01", 306, |_| Some(0.0));
        let t = index_panel(&p, IndexKind::Cdd, IndexSettings::default());
        assert_eq!(t.values[0][0], None);
        let lenient = IndexSettings {
            policy: MissingPolicy::BreakRun,
            ..IndexSettings::default()
        };
        let t = index_panel(&p, IndexKind::Cdd, lenient);
        assert_eq!(t.values[0][0], Some(306.0));
    }
}
