//! CSV and markdown emitters for reports and plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};

use thiserror::Error;
use wxkrig_core::evaluation::{
    Approach, EvaluationReport, Metric, MomentRow, ReportRow, ResidualRecord, Variable, YearLabel,
};
use wxkrig_core::indexes::IndexTable;
use wxkrig_core::interpolators::Method;

pub const REPORT_HEADER: [&str; 9] = [
    "approach",
    "method",
    "variable",
    "year",
    "metric",
    "value",
    "n_periods",
    "fallback_rate",
    "seed",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("report row {row}: {message}")]
    Parse { row: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

/// Float text that parses back to the same bits.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_report_csv<W: Write>(report: &EvaluationReport, w: W) -> Result<(), ReportError> {
    let mut sorted = report.clone();
    sorted.sort();
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(REPORT_HEADER)?;
    for r in &sorted.rows {
        wtr.write_record([
            r.approach.to_string(),
            r.method.to_string(),
            r.variable.to_string(),
            r.year.to_string(),
            r.metric.to_string(),
            num(r.value),
            r.n_periods.to_string(),
            num(r.fallback_rate),
            sorted.seed.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(r: R) -> Result<EvaluationReport, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != REPORT_HEADER {
        return Err(ReportError::Parse {
            row: 1,
            message: format!("unexpected header {}", header.join(",")),
        });
    }
    let mut seed = None;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| ReportError::Parse { row, message };
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("missing field {i}")));
        let s: u64 = field(8)?.parse().map_err(|e| bad(format!("seed: {e}")))?;
        if *seed.get_or_insert(s) != s {
            return Err(bad("mixed seeds".into()));
        }
        rows.push(ReportRow {
            approach: field(0)?.parse::<Approach>().map_err(bad)?,
            method: field(1)?.parse::<Method>().map_err(bad)?,
            variable: field(2)?.parse::<Variable>().map_err(bad)?,
            year: field(3)?.parse::<YearLabel>().map_err(bad)?,
            metric: field(4)?.parse::<Metric>().map_err(bad)?,
            value: field(5)?.parse().map_err(|e| bad(format!("value: {e}")))?,
            n_periods: field(6)?.parse().map_err(|e| bad(format!("n_periods: {e}")))?,
            fallback_rate: field(7)?.parse().map_err(|e| bad(format!("fallback_rate: {e}")))?,
        });
    }
    let mut report = EvaluationReport::new(seed.unwrap_or(wxkrig_core::evaluation::DEFAULT_SEED));
    report.extend(rows);
    Ok(report)
}

/// One table per (variable, metric): a row per (approach, method), a
/// column per year plus `all`.
pub fn write_report_markdown<W: Write>(report: &EvaluationReport, mut w: W) -> Result<(), ReportError> {
    let mut blocks: BTreeMap<(Variable, Metric), Vec<&ReportRow>> = BTreeMap::new();
    for r in &report.rows {
        blocks.entry((r.variable, r.metric)).or_default().push(r);
    }
    writeln!(w, "Seed: {}", report.seed)?;
    for ((variable, metric), rows) in blocks {
        let years: BTreeSet<YearLabel> = rows.iter().map(|r| r.year).collect();
        let mut cells: BTreeMap<(Approach, Method), BTreeMap<YearLabel, f64>> = BTreeMap::new();
        let mut fallback: BTreeMap<(Approach, Method), f64> = BTreeMap::new();
        for r in &rows {
            cells.entry((r.approach, r.method)).or_default().insert(r.year, r.value);
            if r.year == YearLabel::All {
                fallback.insert((r.approach, r.method), r.fallback_rate);
            }
        }
        writeln!(w)?;
        writeln!(w, "### {variable} {metric}")?;
        writeln!(w)?;
        write!(w, "| approach | method |")?;
        for y in &years {
            write!(w, " {y} |")?;
        }
        writeln!(w, " fallback |")?;
        write!(w, "|---|---|")?;
        for _ in &years {
            write!(w, "---:|")?;
        }
        writeln!(w, "---:|")?;
        for ((approach, method), vals) in cells {
            write!(w, "| {approach} | {method} |")?;
            for y in &years {
                match vals.get(y) {
                    Some(v) => write!(w, " {v:.2} |")?,
                    None => write!(w, " |")?,
                }
            }
            match fallback.get(&(approach, method)) {
                Some(f) => writeln!(w, " {:.1}% |", 100.0 * f)?,
                None => writeln!(w, " |")?,
            }
        }
    }
    Ok(())
}

pub fn write_report<W: Write>(report: &EvaluationReport, format: Format, w: W) -> Result<(), ReportError> {
    match format {
        Format::Csv => write_report_csv(report, w),
        Format::Markdown => write_report_markdown(report, w),
    }
}

/// Per-day residuals for plotting.
pub fn write_residuals<W: Write>(method: Method, residuals: &[ResidualRecord], w: W) -> Result<(), ReportError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "station_id", "method", "predicted", "observed", "residual", "fallback_used"])?;
    for r in residuals {
        wtr.write_record([
            r.date.to_string(),
            r.station_id.clone(),
            method.to_string(),
            num(r.predicted),
            num(r.observed),
            num(r.predicted - r.observed),
            r.fallback_used.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub date: String,
    pub target_id: String,
    pub method: Method,
    pub value: f64,
    pub variance: Option<f64>,
    pub fallback_used: bool,
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], w: W) -> Result<(), ReportError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "target_id", "method", "value", "variance", "fallback_used"])?;
    for r in records {
        wtr.write_record([
            r.date.clone(),
            r.target_id.clone(),
            r.method.to_string(),
            num(r.value),
            r.variance.map(num).unwrap_or_default(),
            r.fallback_used.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub date: String,
    pub sigma2: f64,
    pub alpha_km: f64,
    pub nugget: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn write_models<W: Write>(records: &[ModelRecord], w: W) -> Result<(), ReportError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "sigma2", "alpha_km", "nugget", "converged", "iterations"])?;
    for r in records {
        wtr.write_record([
            r.date.clone(),
            num(r.sigma2),
            num(r.alpha_km),
            num(r.nugget),
            r.converged.to_string(),
            r.iterations.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Station index values; several tables share one file, told apart by the
/// `index` column.
pub fn write_index_tables<W: Write>(tables: &[IndexTable], w: W) -> Result<(), ReportError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["station_id", "period", "index", "value", "completeness"])?;
    for table in tables {
        for (s, id) in table.station_ids.iter().enumerate() {
            for (p, period) in table.periods.iter().enumerate() {
                wtr.write_record([
                    id.clone(),
                    period.to_string(),
                    table.kind.to_string(),
                    table.values[s][p].map(num).unwrap_or_default(),
                    num(table.completeness[s][p]),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_moments<W: Write>(rows: &[MomentRow], w: W) -> Result<(), ReportError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["variable", "year", "skewness", "kurtosis", "n_periods", "skipped"])?;
    for r in rows {
        wtr.write_record([
            r.variable.to_string(),
            r.year.to_string(),
            num(r.skewness),
            num(r.kurtosis),
            r.n_periods.to_string(),
            r.skipped.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(approach: Approach, method: Method, year: YearLabel, metric: Metric, value: f64) -> ReportRow {
        ReportRow {
            approach,
            method,
            variable: Variable::Cdd,
            year,
            metric,
            value,
            n_periods: 4,
            fallback_rate: 0.125,
        }
    }

    fn sample() -> EvaluationReport {
        let mut r = EvaluationReport::new(42);
        r.extend([
            row(Approach::TwoStage, Method::Idw, YearLabel::All, Metric::Mae, 0.1 + 0.2),
            row(Approach::Direct, Method::Idw, YearLabel::Year(1991), Metric::Rmse, 4.92),
            row(Approach::Direct, Method::Idw, YearLabel::All, Metric::Rmse, 1.0 / 3.0),
            row(Approach::Direct, Method::Nn, YearLabel::All, Metric::Mae, f64::MIN_POSITIVE),
        ]);
        r
    }

    #[test]
    fn one_row_report_is_two_lines() {
        let mut r = EvaluationReport::new(42);
        r.extend([row(Approach::Daily, Method::Ok, YearLabel::All, Metric::Rmse, 2.5)]);
        let mut out = Vec::new();
        write_report_csv(&r, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "approach,method,variable,year,metric,value,n_periods,fallback_rate,seed\n\
             daily,OK,CDD,all,RMSE,2.5,4,0.125,42\n"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = sample();
        let mut out = Vec::new();
        write_report_csv(&r, &mut out).unwrap();
        let back = read_report_csv(out.as_slice()).unwrap();
        assert_eq!(back, r);
        for (a, b) in back.rows.iter().zip(&r.rows) {
            assert_eq!(a.value.to_bits(), b.value.to_bits());
        }
    }

    #[test]
    fn emission_is_deterministic() {
        let r = sample();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_report(&r, Format::Markdown, &mut a).unwrap();
        write_report(&r, Format::Markdown, &mut b).unwrap();
        assert_eq!(a, b);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_report(&r, Format::Csv, &mut a).unwrap();
        write_report(&r, Format::Csv, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn markdown_has_one_block_per_variable_metric() {
        let text = {
            let mut out = Vec::new();
            write_report_markdown(&sample(), &mut out).unwrap();
            String::from_utf8(out).unwrap()
        };
        assert_eq!(text.matches("### ").count(), 2);
        assert!(text.contains("### CDD RMSE"));
        assert!(text.contains("### CDD MAE"));
        assert!(text.contains("| direct | IDW | 4.92 | 0.33 | 12.5% |"), "{text}");
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_report_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
