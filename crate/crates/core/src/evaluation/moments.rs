use std::collections::BTreeMap;
use std::fmt;

use chrono::Datelike;

use crate::geo::ObservationPanel;
use crate::indexes::{IndexKind, IndexTable};

use super::metrics::{kurtosis, skewness};
use super::YearLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MomentVariable {
    P,
    CbrtP,
    T,
    Mfp,
    CbrtMfp,
    Cdd,
    CbrtCdd,
}

impl MomentVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            MomentVariable::P => "P",
            MomentVariable::CbrtP => "cbrt(P)",
            MomentVariable::T => "T",
            MomentVariable::Mfp => "MFP",
            MomentVariable::CbrtMfp => "cbrt(MFP)",
            MomentVariable::Cdd => "CDD",
            MomentVariable::CbrtCdd => "cbrt(CDD)",
        }
    }
}

impl fmt::Display for MomentVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Yearly average of per-period cross-station skewness and kurtosis.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub variable: MomentVariable,
    pub year: YearLabel,
    pub skewness: f64,
    pub kurtosis: f64,
    pub n_periods: usize,
    /// Periods dropped for having fewer than two values or zero variance.
    pub skipped: usize,
}

/// Per-period samples keyed by year; `None` marks a period whose moments
/// are undefined.
fn summarize(variable: MomentVariable, samples: Vec<(i32, Vec<f64>)>) -> Vec<MomentRow> {
    let mut groups: BTreeMap<YearLabel, (Vec<(f64, f64)>, usize)> = BTreeMap::new();
    for (year, sample) in samples {
        let moments = skewness(&sample).and_then(|s| kurtosis(&sample).map(|k| (s, k)));
        for label in [YearLabel::Year(year), YearLabel::All] {
            let g = groups.entry(label).or_default();
            match moments {
                Ok(m) => g.0.push(m),
                Err(_) => g.1 += 1,
            }
        }
    }
    groups
        .into_iter()
        .map(|(year, (vals, skipped))| {
            let n = vals.len();
            let mean = |f: fn(&(f64, f64)) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    vals.iter().map(f).sum::<f64>() / n as f64
                }
            };
            MomentRow {
                variable,
                year,
                skewness: mean(|m| m.0),
                kurtosis: mean(|m| m.1),
                n_periods: n,
                skipped,
            }
        })
        .collect()
}

/// Daily cross-station moments of P, its cube root and (if present) T.
pub fn distribution_report(panel: &ObservationPanel) -> Vec<MomentRow> {
    let mut rows = Vec::new();
    let day_samples = |f: &dyn Fn(f64) -> f64, m: &Vec<Vec<Option<f64>>>| -> Vec<(i32, Vec<f64>)> {
        panel
            .dates
            .iter()
            .enumerate()
            .map(|(d, date)| (date.year(), m.iter().filter_map(|row| row[d]).map(f).collect()))
            .collect()
    };
    rows.extend(summarize(MomentVariable::P, day_samples(&|x| x, &panel.precip)));
    rows.extend(summarize(MomentVariable::CbrtP, day_samples(&f64::cbrt, &panel.precip)));
    if let Some(t) = &panel.tmax {
        rows.extend(summarize(MomentVariable::T, day_samples(&|x| x, t)));
    }
    rows
}

/// Per-period cross-station moments of an index and its cube root.
pub fn index_distribution_report(table: &IndexTable) -> Vec<MomentRow> {
    let (plain, cbrt) = match table.kind {
        IndexKind::Mfp => (MomentVariable::Mfp, MomentVariable::CbrtMfp),
        IndexKind::Cdd => (MomentVariable::Cdd, MomentVariable::CbrtCdd),
    };
    let samples = |f: fn(f64) -> f64| -> Vec<(i32, Vec<f64>)> {
        (0..table.periods.len())
            .map(|p| {
                (
                    table.periods[p].year(),
                    table.period_values(p).into_iter().flatten().map(f).collect(),
                )
            })
            .collect()
    };
    let mut rows = summarize(plain, samples(|x| x));
    rows.extend(summarize(cbrt, samples(f64::cbrt)));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Station;
    use chrono::NaiveDate;

    fn panel(value: impl Fn(usize, usize) -> f64) -> ObservationPanel {
        let stations = (0..5)
            .map(|i| Station::new(format!("S{i}"), 40.0, -100.0 + i as f64, None).unwrap())
            .collect();
        let start: NaiveDate = "1990-12-30".parse().unwrap();
        let dates = (0..4).map(|d| start + chrono::Days::new(d)).collect();
        let precip = (0..5).map(|s| (0..4).map(|d| Some(value(s, d))).collect()).collect();
        ObservationPanel::new(stations, dates, precip, None).unwrap()
    }

    #[test]
    fn constant_input_is_skipped() {
        let rows = distribution_report(&panel(|_, _| 3.0));
        let all_p = rows
            .iter()
            .find(|r| r.variable == MomentVariable::P && r.year == YearLabel::All)
            .unwrap();
        assert_eq!(all_p.n_periods, 0);
        assert_eq!(all_p.skipped, 4);
        assert!(rows.iter().all(|r| r.variable != MomentVariable::T));
    }

    #[test]
    fn yearly_average_of_daily_moments() {
        let p = panel(|s, d| if s == d { 10.0 } else { s as f64 * 0.5 });
        let rows = distribution_report(&p);
        let y1990 = rows
            .iter()
            .find(|r| r.variable == MomentVariable::P && r.year == YearLabel::Year(1990))
            .unwrap();
        assert_eq!(y1990.n_periods, 2);
        let expect: f64 = (0..2)
            .map(|d| {
                let col: Vec<f64> = p.precip.iter().map(|r| r[d].unwrap()).collect();
                skewness(&col).unwrap()
            })
            .sum::<f64>()
            / 2.0;
        assert!((y1990.skewness - expect).abs() < 1e-15);
    }
}
