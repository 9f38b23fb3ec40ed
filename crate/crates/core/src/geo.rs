//! Station registry, coordinate geometry and the station-by-date observation panel.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::NaiveDate;
use thiserror::Error;

/// Mean Earth radius used by the great-circle metric.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometres per degree along a great circle, used to express the
/// degree-space metric in the same unit as the haversine one.
pub const KM_PER_DEGREE: f64 = std::f64::consts::PI * EARTH_RADIUS_KM / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate: lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("no candidate stations left after exclusion")]
    NoCandidates,
    #[error("duplicate station id `{0}`")]
    DuplicateStation(String),
    #[error("malformed panel: {0}")]
    Structural(String),
}

/// A (latitude, longitude) pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coord {
    pub lat: f64,
    pub lon: f64,
}

impl Coord {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let c = Coord { lat, lon };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<(), GeoError> {
        let ok = self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon);
        if ok {
            Ok(())
        } else {
            Err(GeoError::InvalidCoordinate {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub coord: Coord,
    /// Elevation in metres; `None` until looked up.
    pub elev: Option<f64>,
}

impl Station {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64, elev: Option<f64>) -> Result<Self, GeoError> {
        Ok(Station {
            id: id.into(),
            coord: Coord::new(lat, lon)?,
            elev,
        })
    }
}

/// How distances between two coordinates are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    /// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
    #[default]
    Haversine,
    /// Plain Euclidean norm over (lat, lon) in degrees, scaled to km by
    /// [`KM_PER_DEGREE`] so model ranges keep the same unit.
    EuclideanDegrees,
}

impl DistanceMetric {
    pub fn distance(self, a: Coord, b: Coord) -> Result<f64, GeoError> {
        a.check()?;
        b.check()?;
        Ok(self.distance_unchecked(a, b))
    }

    /// Same as [`DistanceMetric::distance`] for coordinates already validated.
    pub fn distance_unchecked(self, a: Coord, b: Coord) -> f64 {
        match self {
            DistanceMetric::Haversine => haversine_km(a, b),
            DistanceMetric::EuclideanDegrees => {
                let dlat = a.lat - b.lat;
                let dlon = a.lon - b.lon;
                dlat.hypot(dlon) * KM_PER_DEGREE
            }
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Haversine => "haversine",
            DistanceMetric::EuclideanDegrees => "euclidean-degrees",
        })
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "haversine" => Ok(DistanceMetric::Haversine),
            "euclidean-degrees" => Ok(DistanceMetric::EuclideanDegrees),
            other => Err(format!("unknown distance metric `{other}`")),
        }
    }
}

fn haversine_km(a: Coord, b: Coord) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Great-circle distance in km between two valid coordinates.
pub fn distance(a: Coord, b: Coord) -> Result<f64, GeoError> {
    DistanceMetric::Haversine.distance(a, b)
}

/// Orders candidates by (distance, id); used everywhere a "nearest" is picked.
pub(crate) fn closer(d1: f64, id1: &str, d2: f64, id2: &str) -> bool {
    d1 < d2 || (d1 == d2 && id1 < id2)
}

/// Nearest station to `target` among those not in `exclude`; ties go to the
/// lexicographically smallest id.
pub fn nearest_station<'a>(
    target: Coord,
    registry: &'a [Station],
    exclude: &HashSet<String>,
    metric: DistanceMetric,
) -> Result<&'a Station, GeoError> {
    target.check()?;
    let mut best: Option<(f64, &Station)> = None;
    for s in registry.iter().filter(|s| !exclude.contains(&s.id)) {
        let d = metric.distance_unchecked(target, s.coord);
        match best {
            Some((bd, bs)) if !closer(d, &s.id, bd, &bs.id) => {}
            _ => best = Some((d, s)),
        }
    }
    best.map(|(_, s)| s).ok_or(GeoError::NoCandidates)
}

/// Symmetric matrix of pairwise station distances in km.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_coords(coords: &[Coord], metric: DistanceMetric) -> Self {
        let n = coords.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = metric.distance_unchecked(coords[i], coords[j]);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        DistanceMatrix { n, values }
    }

    pub fn from_stations(stations: &[Station], metric: DistanceMetric) -> Self {
        let coords: Vec<Coord> = stations.iter().map(|s| s.coord).collect();
        Self::from_coords(&coords, metric)
    }

    /// Builds a matrix from a dense row-major buffer. The caller guarantees
    /// symmetry and a zero diagonal.
    pub fn from_row_major(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n, "distance buffer has wrong size");
        DistanceMatrix { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Restriction to the given rows/columns, in the given order.
    pub fn subset(&self, idx: &[usize]) -> DistanceMatrix {
        let m = idx.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in idx {
            for &j in idx {
                values.push(self.get(i, j));
            }
        }
        DistanceMatrix { n: m, values }
    }
}

/// Daily precipitation (mm) and optional maximum temperature (°F) for a set
/// of stations. Matrices are station-major: `precip[s][d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    pub stations: Vec<Station>,
    pub dates: Vec<NaiveDate>,
    pub precip: Vec<Vec<Option<f64>>>,
    pub tmax: Option<Vec<Vec<Option<f64>>>>,
}

impl ObservationPanel {
    /// Builds a panel, rejecting structural problems (shape mismatch,
    /// unordered dates, duplicate station ids). Value-level problems such as
    /// negative precipitation are left for [`validate_panel`].
    pub fn new(
        stations: Vec<Station>,
        dates: Vec<NaiveDate>,
        precip: Vec<Vec<Option<f64>>>,
        tmax: Option<Vec<Vec<Option<f64>>>>,
    ) -> Result<Self, GeoError> {
        let panel = ObservationPanel {
            stations,
            dates,
            precip,
            tmax,
        };
        panel.check_shape()?;
        if let Some(w) = panel.dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(GeoError::Structural(format!(
                "dates not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        let mut seen = HashSet::new();
        for s in &panel.stations {
            s.coord.check()?;
            if !seen.insert(s.id.as_str()) {
                return Err(GeoError::DuplicateStation(s.id.clone()));
            }
        }
        Ok(panel)
    }

    fn check_shape(&self) -> Result<(), GeoError> {
        let (ns, nd) = (self.stations.len(), self.dates.len());
        let check = |name: &str, m: &Vec<Vec<Option<f64>>>| -> Result<(), GeoError> {
            if m.len() != ns {
                return Err(GeoError::Structural(format!(
                    "{name} has {} rows, expected {ns}",
                    m.len()
                )));
            }
            if let Some((i, row)) = m.iter().enumerate().find(|(_, r)| r.len() != nd) {
                return Err(GeoError::Structural(format!(
                    "{name} row {i} has {} columns, expected {nd}",
                    row.len()
                )));
            }
            Ok(())
        };
        check("precip", &self.precip)?;
        if let Some(t) = &self.tmax {
            check("tmax", t)?;
        }
        Ok(())
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn coords(&self) -> Vec<Coord> {
        self.stations.iter().map(|s| s.coord).collect()
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    /// Precipitation column for day `d`, one entry per station.
    pub fn day_precip(&self, d: usize) -> Vec<Option<f64>> {
        self.precip.iter().map(|row| row[d]).collect()
    }

    pub fn day_tmax(&self, d: usize) -> Option<Vec<Option<f64>>> {
        self.tmax
            .as_ref()
            .map(|t| t.iter().map(|row| row[d]).collect())
    }

    /// Same data with stations sorted by id.
    pub fn sorted_by_id(&self) -> ObservationPanel {
        let mut order: Vec<usize> = (0..self.n_stations()).collect();
        order.sort_by(|&a, &b| self.stations[a].id.cmp(&self.stations[b].id));
        ObservationPanel {
            stations: order.iter().map(|&i| self.stations[i].clone()).collect(),
            dates: self.dates.clone(),
            precip: order.iter().map(|&i| self.precip[i].clone()).collect(),
            tmax: self
                .tmax
                .as_ref()
                .map(|t| order.iter().map(|&i| t[i].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeValue {
    pub station_id: String,
    pub date: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    /// Missing precipitation days per station id.
    pub missing_days: BTreeMap<String, usize>,
    pub negative_values: Vec<NegativeValue>,
    /// Repeated (station, date) keys, as they appear in the panel.
    pub duplicates: Vec<(String, NaiveDate)>,
}

impl ValidationReport {
    pub fn violation_count(&self) -> usize {
        self.negative_values.len() + self.duplicates.len()
    }

    pub fn total_missing(&self) -> usize {
        self.missing_days.values().sum()
    }

    pub fn is_clean(&self) -> bool {
        self.violation_count() == 0
    }
}

/// Inspects a panel without modifying it. Only a shape mismatch is an error;
/// everything else is reported.
pub fn validate_panel(panel: &ObservationPanel) -> Result<ValidationReport, GeoError> {
    panel.check_shape()?;
    let mut report = ValidationReport::default();

    let mut seen_dates = HashSet::new();
    let dup_dates: Vec<NaiveDate> = panel
        .dates
        .iter()
        .filter(|d| !seen_dates.insert(**d))
        .copied()
        .collect();
    let mut seen_ids = HashSet::new();
    for s in &panel.stations {
        let repeated_station = !seen_ids.insert(s.id.as_str());
        if repeated_station {
            report
                .duplicates
                .extend(panel.dates.iter().map(|d| (s.id.clone(), *d)));
        } else {
            report
                .duplicates
                .extend(dup_dates.iter().map(|d| (s.id.clone(), *d)));
        }
    }

    for (s, row) in panel.stations.iter().zip(&panel.precip) {
        let missing = row.iter().filter(|v| v.is_none()).count();
        *report.missing_days.entry(s.id.clone()).or_insert(0) += missing;
        for (d, v) in panel.dates.iter().zip(row) {
            if let Some(v) = v {
                if *v < 0.0 || v.is_nan() {
                    report.negative_values.push(NegativeValue {
                        station_id: s.id.clone(),
                        date: *d,
                        value: *v,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(lat: f64, lon: f64) -> Coord {
        Coord::new(lat, lon).unwrap()
    }

    fn st(id: &str, lat: f64, lon: f64) -> Station {
        Station::new(id, lat, lon, None).unwrap()
    }

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn haversine_examples() {
        assert_eq!(distance(c(40.0, -100.0), c(40.0, -100.0)).unwrap(), 0.0);
        // R * 1 degree in radians
        let one_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        assert_abs_diff_eq!(one_deg, 111.195, epsilon = 0.01);
        assert_abs_diff_eq!(distance(c(0.0, 0.0), c(0.0, 1.0)).unwrap(), 111.195, epsilon = 0.01);
        let quarter = std::f64::consts::PI * EARTH_RADIUS_KM / 2.0;
        assert_abs_diff_eq!(distance(c(0.0, 0.0), c(90.0, 0.0)).unwrap(), quarter, epsilon = 1e-6);
        assert_abs_diff_eq!(quarter, 10007.5, epsilon = 0.5);
    }

    #[test]
    fn out_of_bounds_coordinate_is_rejected() {
        let bad = Coord { lat: 91.0, lon: 0.0 };
        assert!(matches!(
            distance(bad, c(0.0, 0.0)),
            Err(GeoError::InvalidCoordinate { .. })
        ));
        assert!(Coord::new(0.0, -180.5).is_err());
        assert!(Coord::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn euclidean_degrees_metric() {
        let d = DistanceMetric::EuclideanDegrees
            .distance(c(0.0, 0.0), c(3.0, 4.0))
            .unwrap();
        assert_abs_diff_eq!(d, 5.0 * KM_PER_DEGREE, epsilon = 1e-9);
        assert_eq!("euclidean-degrees".parse::<DistanceMetric>().unwrap(), DistanceMetric::EuclideanDegrees);
    }

    #[test]
    fn nearest_station_examples() {
        let none = HashSet::new();
        let reg = vec![st("B", 0.0, 2.0), st("A", 0.0, 1.0)];
        let got = nearest_station(c(0.0, 0.0), &reg, &none, DistanceMetric::Haversine).unwrap();
        assert_eq!(got.id, "A");

        let got = nearest_station(c(0.0, 2.0), &reg, &none, DistanceMetric::Haversine).unwrap();
        assert_eq!(got.id, "B");

        let tie = vec![st("S2", 0.0, 1.0), st("S1", 0.0, -1.0)];
        let got = nearest_station(c(0.0, 0.0), &tie, &none, DistanceMetric::Haversine).unwrap();
        assert_eq!(got.id, "S1");

        let all: HashSet<String> = ["S1", "S2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            nearest_station(c(0.0, 0.0), &tie, &all, DistanceMetric::Haversine),
            Err(GeoError::NoCandidates)
        );
    }

    #[test]
    fn distance_matrix_matches_pairwise() {
        let coords = vec![c(35.0, -95.0), c(40.0, -100.0), c(38.5, -92.25)];
        let m = DistanceMatrix::from_coords(&coords, DistanceMetric::Haversine);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), distance(coords[i], coords[j]).unwrap());
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        let sub = m.subset(&[2, 0]);
        assert_eq!(sub.get(0, 1), m.get(2, 0));
    }

    fn panel_2x2(precip: Vec<Vec<Option<f64>>>) -> ObservationPanel {
        ObservationPanel::new(
            vec![st("S1", 40.0, -100.0), st("S2", 41.0, -99.0)],
            vec![date("1993-04-01"), date("1993-04-02")],
            precip,
            None,
        )
        .unwrap()
    }

    #[test]
    fn validate_clean_panel() {
        let p = panel_2x2(vec![vec![Some(0.0), Some(1.0)], vec![Some(2.0), Some(0.0)]]);
        let r = validate_panel(&p).unwrap();
        assert_eq!(r.violation_count(), 0);
        assert_eq!(r.total_missing(), 0);
    }

    #[test]
    fn validate_reports_negative_and_missing() {
        let p = panel_2x2(vec![vec![Some(-1.0), Some(1.0)], vec![None, Some(0.0)]]);
        let r = validate_panel(&p).unwrap();
        assert_eq!(r.negative_values.len(), 1);
        assert_eq!(r.negative_values[0].station_id, "S1");
        assert_eq!(r.negative_values[0].date, date("1993-04-01"));
        assert_eq!(r.missing_days["S2"], 1);
        assert_eq!(r.missing_days["S1"], 0);
    }

    #[test]
    fn validate_detects_shape_mismatch_and_duplicates() {
        let mut p = panel_2x2(vec![vec![Some(0.0), Some(1.0)], vec![Some(2.0), Some(0.0)]]);
        p.precip[1].pop();
        assert!(matches!(validate_panel(&p), Err(GeoError::Structural(_))));

        let mut p = panel_2x2(vec![vec![Some(0.0), Some(1.0)], vec![Some(2.0), Some(0.0)]]);
        p.dates[1] = p.dates[0];
        let r = validate_panel(&p).unwrap();
        assert_eq!(r.duplicates.len(), 2);
    }

    #[test]
    fn panel_rejects_unordered_dates_and_duplicate_ids() {
        let err = ObservationPanel::new(
            vec![st("S1", 40.0, -100.0)],
            vec![date("1993-04-02"), date("1993-04-01")],
            vec![vec![None, None]],
            None,
        );
        assert!(matches!(err, Err(GeoError::Structural(_))));
        let err = ObservationPanel::new(
            vec![st("S1", 40.0, -100.0), st("S1", 41.0, -100.0)],
            vec![date("1993-04-01")],
            vec![vec![None], vec![None]],
            None,
        );
        assert_eq!(err, Err(GeoError::DuplicateStation("S1".into())));
    }
}
