use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};

use crate::geo::{DistanceMatrix, ObservationPanel, Station};
use crate::indexes::{index_panel, index_series, IndexKind, Period};
use crate::interpolators::{predict_with_fallback, Field, InterpConfig, Method, Target};

use super::metrics::{mae, rmse};
use super::{
    Approach, EvalConfig, EvalError, FoldAssignment, Metric, Pooling, ReportRow, Variable,
    YearLabel,
};

/// Predictions for every station on every day, each made from the stations
/// outside its fold.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPredictions {
    pub method: Method,
    pub dates: Vec<NaiveDate>,
    /// Station ids, sorted.
    pub station_ids: Vec<String>,
    /// `values[station][day]`; `None` where no prediction could be made.
    pub values: Vec<Vec<Option<f64>>>,
    pub fallback: Vec<Vec<bool>>,
    /// Days on which at least one fold had nothing to learn from or failed.
    pub skipped_days: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayMetrics {
    pub date: NaiveDate,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    pub date: NaiveDate,
    pub station_id: String,
    pub predicted: f64,
    pub observed: f64,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyCvOutcome {
    pub rows: Vec<ReportRow>,
    pub daily: Vec<DayMetrics>,
    pub residuals: Vec<ResidualRecord>,
    pub skipped_days: Vec<NaiveDate>,
}

/// Panel sorted by id plus fold index per station.
struct Prepared {
    panel: ObservationPanel,
    fold_of: Vec<usize>,
    k: usize,
    distances: DistanceMatrix,
}

fn prepare(panel: &ObservationPanel, method: Method, folds: &FoldAssignment, cfg: &InterpConfig) -> Result<Prepared, EvalError> {
    let panel = panel.sorted_by_id();
    let fold_of = panel
        .stations
        .iter()
        .map(|s| {
            folds
                .fold_of(&s.id)
                .ok_or_else(|| EvalError::Fold(format!("station {} has no fold", s.id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if method == Method::Uk && cfg.covariates.elev {
        let missing: Vec<&str> = panel
            .stations
            .iter()
            .filter(|s| s.elev.is_none())
            .map(|s| s.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(EvalError::MissingElevation(missing.join(",")));
        }
    }
    for (s, row) in panel.stations.iter().zip(&panel.precip) {
        if let Some(day) = row.iter().position(|v| v.is_some_and(|v| v < 0.0)) {
            return Err(EvalError::NegativeValue {
                station: s.id.clone(),
                day,
            });
        }
    }
    let distances = DistanceMatrix::from_stations(&panel.stations, cfg.metric);
    Ok(Prepared {
        panel,
        fold_of,
        k: folds.k,
        distances,
    })
}

/// One cross-validation sweep over a single field: every station is
/// predicted from the present stations of the other folds.
struct SweepOutcome {
    /// (station index, value, fallback used)
    predictions: Vec<(usize, f64, bool)>,
    incomplete: bool,
}

fn sweep(
    values: &[Option<f64>],
    stations: &[Station],
    distances: &DistanceMatrix,
    fold_of: &[usize],
    k: usize,
    method: Method,
    cfg: &InterpConfig,
    label: &dyn std::fmt::Display,
) -> SweepOutcome {
    let mut predictions = Vec::with_capacity(stations.len());
    let mut incomplete = false;
    for fold in 0..k {
        let targets_idx: Vec<usize> = (0..stations.len()).filter(|&i| fold_of[i] == fold).collect();
        if targets_idx.is_empty() {
            continue;
        }
        let train: Vec<usize> = (0..stations.len())
            .filter(|&i| fold_of[i] != fold && values[i].is_some())
            .collect();
        if train.is_empty() {
            log::info!("{label}: fold {fold} has no out-of-fold data; skipped");
            incomplete = true;
            continue;
        }
        let field = Field::from_indices(
            stations,
            distances,
            &train,
            train.iter().map(|&i| values[i].unwrap()).collect(),
            cfg.metric,
        );
        let targets: Vec<Target> = targets_idx.iter().map(|&i| Target::at_station(&stations[i])).collect();
        match predict_with_fallback(method, &field, &targets, cfg) {
            Ok(preds) => predictions.extend(
                targets_idx
                    .iter()
                    .zip(preds)
                    .map(|(&i, p)| (i, p.value, p.fallback_used)),
            ),
            Err(e) => {
                log::warn!("{label}: fold {fold} failed with {method}: {e}");
                incomplete = true;
            }
        }
    }
    predictions.sort_by_key(|p| p.0);
    SweepOutcome {
        predictions,
        incomplete,
    }
}

pub fn predict_daily_panel(
    panel: &ObservationPanel,
    method: Method,
    folds: &FoldAssignment,
    cfg: &EvalConfig,
) -> Result<DailyPredictions, EvalError> {
    let prep = prepare(panel, method, folds, &cfg.interp)?;
    Ok(predict_prepared(&prep, method, cfg))
}

fn predict_prepared(prep: &Prepared, method: Method, cfg: &EvalConfig) -> DailyPredictions {
    let panel = &prep.panel;
    let per_day = cfg.execution.map_range(panel.n_days(), |d| {
        sweep(
            &panel.day_precip(d),
            &panel.stations,
            &prep.distances,
            &prep.fold_of,
            prep.k,
            method,
            &cfg.interp,
            &panel.dates[d],
        )
    });
    let ns = panel.n_stations();
    let nd = panel.n_days();
    let mut values = vec![vec![None; nd]; ns];
    let mut fallback = vec![vec![false; nd]; ns];
    let mut skipped_days = Vec::new();
    for (d, out) in per_day.into_iter().enumerate() {
        if out.incomplete {
            skipped_days.push(panel.dates[d]);
        }
        for (s, v, fb) in out.predictions {
            values[s][d] = Some(v);
            fallback[s][d] = fb;
        }
    }
    DailyPredictions {
        method,
        dates: panel.dates.clone(),
        station_ids: panel.stations.iter().map(|s| s.id.clone()).collect(),
        values,
        fallback,
        skipped_days,
    }
}

/// Paired predictions and observations for one period (day, month or year).
struct PeriodResult {
    year: i32,
    pred: Vec<f64>,
    obs: Vec<f64>,
    predictions: usize,
    fallbacks: usize,
}

fn aggregate(
    approach: Approach,
    method: Method,
    variable: Variable,
    periods: &[PeriodResult],
    pooling: Pooling,
) -> Vec<ReportRow> {
    let mut groups: BTreeMap<YearLabel, Vec<&PeriodResult>> = BTreeMap::new();
    for p in periods {
        groups.entry(YearLabel::Year(p.year)).or_default().push(p);
        groups.entry(YearLabel::All).or_default().push(p);
    }
    let mut rows = Vec::new();
    for (year, group) in groups {
        let used: Vec<&&PeriodResult> = group.iter().filter(|p| !p.pred.is_empty()).collect();
        if used.is_empty() {
            continue;
        }
        let (r, m) = match pooling {
            Pooling::PerPeriod => {
                let n = used.len() as f64;
                let r = used.iter().map(|p| rmse(&p.pred, &p.obs).unwrap()).sum::<f64>() / n;
                let m = used.iter().map(|p| mae(&p.pred, &p.obs).unwrap()).sum::<f64>() / n;
                (r, m)
            }
            Pooling::Pooled => {
                let pred: Vec<f64> = used.iter().flat_map(|p| p.pred.iter().copied()).collect();
                let obs: Vec<f64> = used.iter().flat_map(|p| p.obs.iter().copied()).collect();
                (rmse(&pred, &obs).unwrap(), mae(&pred, &obs).unwrap())
            }
        };
        let total: usize = group.iter().map(|p| p.predictions).sum();
        let fb: usize = group.iter().map(|p| p.fallbacks).sum();
        let fallback_rate = if total == 0 { 0.0 } else { fb as f64 / total as f64 };
        for (metric, value) in [(Metric::Rmse, r), (Metric::Mae, m)] {
            rows.push(ReportRow {
                approach,
                method,
                variable,
                year,
                metric,
                value,
                n_periods: used.len(),
                fallback_rate,
            });
        }
    }
    rows
}

/// Ten-fold (or k-fold) cross-validation of `method` on daily precipitation.
pub fn cv_daily(
    panel: &ObservationPanel,
    method: Method,
    folds: &FoldAssignment,
    cfg: &EvalConfig,
) -> Result<DailyCvOutcome, EvalError> {
    let prep = prepare(panel, method, folds, &cfg.interp)?;
    let preds = predict_prepared(&prep, method, cfg);
    let panel = &prep.panel;

    let mut periods = Vec::with_capacity(panel.n_days());
    let mut daily = Vec::new();
    let mut residuals = Vec::new();
    for (d, date) in panel.dates.iter().enumerate() {
        let mut pr = PeriodResult {
            year: date.year(),
            pred: Vec::new(),
            obs: Vec::new(),
            predictions: 0,
            fallbacks: 0,
        };
        for s in 0..panel.n_stations() {
            if let (Some(p), Some(o)) = (preds.values[s][d], panel.precip[s][d]) {
                let fb = preds.fallback[s][d];
                pr.pred.push(p);
                pr.obs.push(o);
                pr.predictions += 1;
                pr.fallbacks += fb as usize;
                residuals.push(ResidualRecord {
                    date: *date,
                    station_id: panel.stations[s].id.clone(),
                    predicted: p,
                    observed: o,
                    fallback_used: fb,
                });
            }
        }
        if pr.pred.is_empty() {
            log::info!("{date}: no held-out predictions; day skipped");
        } else {
            daily.push(DayMetrics {
                date: *date,
                n: pr.pred.len(),
                rmse: rmse(&pr.pred, &pr.obs).unwrap(),
                mae: mae(&pr.pred, &pr.obs).unwrap(),
                fallbacks: pr.fallbacks,
            });
        }
        periods.push(pr);
    }
    Ok(DailyCvOutcome {
        rows: aggregate(Approach::Daily, method, Variable::P, &periods, cfg.pooling),
        daily,
        residuals,
        skipped_days: preds.skipped_days,
    })
}

/// Interpolates station index values period by period.
pub fn run_direct(
    panel: &ObservationPanel,
    kind: IndexKind,
    method: Method,
    folds: &FoldAssignment,
    cfg: &EvalConfig,
) -> Result<Vec<ReportRow>, EvalError> {
    let prep = prepare(panel, method, folds, &cfg.interp)?;
    let table = index_panel(&prep.panel, kind, cfg.index);
    let periods = cfg.execution.map_range(table.periods.len(), |p| {
        let truth = table.period_values(p);
        let out = sweep(
            &truth,
            &prep.panel.stations,
            &prep.distances,
            &prep.fold_of,
            prep.k,
            method,
            &cfg.interp,
            &table.periods[p],
        );
        let mut pr = PeriodResult {
            year: table.periods[p].year(),
            pred: Vec::new(),
            obs: Vec::new(),
            predictions: 0,
            fallbacks: 0,
        };
        for (s, v, fb) in out.predictions {
            if let Some(o) = truth[s] {
                pr.pred.push(v);
                pr.obs.push(o);
                pr.predictions += 1;
                pr.fallbacks += fb as usize;
            }
        }
        pr
    });
    Ok(aggregate(Approach::Direct, method, kind.into(), &periods, cfg.pooling))
}

/// Interpolates daily precipitation, then computes the index from each
/// held-out station's predicted series.
pub fn run_two_stage(
    panel: &ObservationPanel,
    kind: IndexKind,
    method: Method,
    folds: &FoldAssignment,
    cfg: &EvalConfig,
) -> Result<Vec<ReportRow>, EvalError> {
    let prep = prepare(panel, method, folds, &cfg.interp)?;
    let preds = predict_prepared(&prep, method, cfg);
    let panel = &prep.panel;
    let truth = index_panel(panel, kind, cfg.index);
    let predicted: Vec<Vec<Option<f64>>> = cfg.execution.map(&preds.values, |series| {
        index_series(&panel.dates, series, kind, cfg.index)
            .into_iter()
            .map(|iv| iv.value)
            .collect()
    });

    let mut day_counts: BTreeMap<Period, (usize, usize)> = BTreeMap::new();
    for (d, date) in panel.dates.iter().enumerate() {
        let e = day_counts.entry(Period::containing(kind, *date)).or_default();
        for s in 0..panel.n_stations() {
            if preds.values[s][d].is_some() {
                e.0 += 1;
                e.1 += preds.fallback[s][d] as usize;
            }
        }
    }

    let periods: Vec<PeriodResult> = truth
        .periods
        .iter()
        .enumerate()
        .map(|(p, period)| {
            let (predictions, fallbacks) = day_counts.get(period).copied().unwrap_or_default();
            let mut pr = PeriodResult {
                year: period.year(),
                pred: Vec::new(),
                obs: Vec::new(),
                predictions,
                fallbacks,
            };
            for s in 0..panel.n_stations() {
                if let (Some(v), Some(o)) = (predicted[s][p], truth.values[s][p]) {
                    pr.pred.push(v);
                    pr.obs.push(o);
                }
            }
            pr
        })
        .collect();
    Ok(aggregate(Approach::TwoStage, method, kind.into(), &periods, cfg.pooling))
}
