//! Station and observation CSV loading.
//!
//! Stations: `station_id,lat,lon,elev_m`. Observations (long format):
//! `station_id,date,precip_mm,tmax_f`. An empty field is a missing value.
//! Row numbers in errors are file line numbers, the header being line 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;
use wxkrig_core::geo::{GeoError, ObservationPanel, Station, ValidationReport};
use wxkrig_core::validate_panel;

pub const STATION_HEADER: [&str; 4] = ["station_id", "lat", "lon", "elev_m"];
pub const OBSERVATION_HEADER: [&str; 4] = ["station_id", "date", "precip_mm", "tmax_f"];

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: u64,
        message: String,
    },
    #[error("{path}: header mismatch: expected `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: no observations")]
    Empty { path: PathBuf },
    #[error("panel: {0}")]
    Panel(#[from] GeoError),
}

/// A value-level problem found while scanning in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub row: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub panel: ObservationPanel,
    pub report: ValidationReport,
    /// Empty for [`load_dataset`]; filled by [`scan_dataset`].
    pub issues: Vec<Issue>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn row_err(path: &Path, row: u64, message: impl Into<String>) -> LoadError {
    LoadError::Row {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>, LoadError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| row_err(path, 1, e.to_string()))?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(LoadError::Header {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(rdr)
}

fn records(
    path: &Path,
    rdr: &mut csv::Reader<File>,
    width: usize,
) -> Result<Vec<(u64, csv::StringRecord)>, LoadError> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line());
            row_err(path, row, e.to_string())
        })?;
        let row = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(row_err(path, row, format!("expected {width} fields, found {}", rec.len())));
        }
        out.push((row, rec));
    }
    Ok(out)
}

fn number(path: &Path, row: u64, field: &str, s: &str) -> Result<Option<f64>, LoadError> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(row_err(path, row, format!("{field}: not a number: `{s}`"))),
    }
}

pub fn load_stations(path: &Path) -> Result<Vec<Station>, LoadError> {
    let mut rdr = reader(path, &STATION_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (row, rec) in records(path, &mut rdr, STATION_HEADER.len())? {
        let id = &rec[0];
        if id.is_empty() {
            return Err(row_err(path, row, "empty station_id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(row_err(path, row, format!("duplicate station `{id}`")));
        }
        let lat = number(path, row, "lat", &rec[1])?.ok_or_else(|| row_err(path, row, "lat is empty"))?;
        let lon = number(path, row, "lon", &rec[2])?.ok_or_else(|| row_err(path, row, "lon is empty"))?;
        let elev = number(path, row, "elev_m", &rec[3])?;
        let station = Station::new(id, lat, lon, elev).map_err(|e| row_err(path, row, e.to_string()))?;
        out.push(station);
    }
    Ok(out)
}

/// Writes stations in the same format [`load_stations`] reads.
pub fn write_stations<W: std::io::Write>(stations: &[Station], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(STATION_HEADER)?;
    for s in stations {
        wtr.write_record([
            s.id.clone(),
            s.coord.lat.to_string(),
            s.coord.lon.to_string(),
            s.elev.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes a panel in long format, skipping cells where both values are
/// missing.
pub fn write_observations<W: std::io::Write>(panel: &ObservationPanel, w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(OBSERVATION_HEADER)?;
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (s, st) in panel.stations.iter().enumerate() {
        for (d, date) in panel.dates.iter().enumerate() {
            let p = panel.precip[s][d];
            let t = panel.tmax.as_ref().and_then(|t| t[s][d]);
            if p.is_none() && t.is_none() {
                continue;
            }
            wtr.write_record([st.id.clone(), date.to_string(), fmt(p), fmt(t)])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn load(stations_path: &Path, obs_path: &Path, lenient: bool) -> Result<Dataset, LoadError> {
    let stations = load_stations(stations_path)?;
    let index: HashMap<&str, usize> = stations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();

    let mut rdr = reader(obs_path, &OBSERVATION_HEADER)?;
    let mut cells: BTreeMap<(usize, NaiveDate), (u64, Option<f64>, Option<f64>)> = BTreeMap::new();
    let mut issues = Vec::new();
    for (row, rec) in records(obs_path, &mut rdr, OBSERVATION_HEADER.len())? {
        let id = &rec[0];
        let s = *index
            .get(id)
            .ok_or_else(|| row_err(obs_path, row, format!("unknown station `{id}`")))?;
        let date: NaiveDate = rec[1]
            .parse()
            .map_err(|_| row_err(obs_path, row, format!("unparsable date `{}`", &rec[1])))?;
        let p = number(obs_path, row, "precip_mm", &rec[2])?;
        let t = number(obs_path, row, "tmax_f", &rec[3])?;
        if let Some(v) = p.filter(|v| *v < 0.0) {
            let message = format!("negative precipitation {v} at {id} on {date}");
            if !lenient {
                return Err(row_err(obs_path, row, message));
            }
            issues.push(Issue { row, message });
        }
        if let Some((first, _, _)) = cells.get(&(s, date)) {
            let message = format!("duplicate row for ({id}, {date}); first seen at row {first}");
            if !lenient {
                return Err(row_err(obs_path, row, message));
            }
            issues.push(Issue { row, message });
            continue;
        }
        cells.insert((s, date), (row, p, t));
    }

    let first = cells.keys().map(|k| k.1).min();
    let last = cells.keys().map(|k| k.1).max();
    let (Some(first), Some(last)) = (first, last) else {
        return Err(LoadError::Empty {
            path: obs_path.to_path_buf(),
        });
    };
    let dates: Vec<NaiveDate> = first.iter_days().take_while(|d| *d <= last).collect();
    let nd = dates.len();
    let mut precip = vec![vec![None; nd]; stations.len()];
    let mut tmax = vec![vec![None; nd]; stations.len()];
    let mut any_t = false;
    for ((s, date), (_, p, t)) in cells {
        let d = (date - first).num_days() as usize;
        precip[s][d] = p;
        tmax[s][d] = t;
        any_t |= t.is_some();
    }
    let panel = ObservationPanel::new(stations, dates, precip, any_t.then_some(tmax))?;
    let report = validate_panel(&panel)?;
    log::info!(
        "loaded {} stations x {} days; {} missing precipitation cells",
        panel.n_stations(),
        panel.n_days(),
        report.total_missing()
    );
    Ok(Dataset { panel, report, issues })
}

/// Loads a validated panel. The date axis runs from the first to the last
/// observed date; days a station did not report are missing. Duplicate
/// (station, date) rows and negative precipitation are errors.
pub fn load_dataset(stations: &Path, observations: &Path) -> Result<Dataset, LoadError> {
    load(stations, observations, false)
}

/// Like [`load_dataset`] but records duplicates and negative values as
/// issues instead of failing. The first of duplicate rows is kept.
pub fn scan_dataset(stations: &Path, observations: &Path) -> Result<Dataset, LoadError> {
    load(stations, observations, true)
}
