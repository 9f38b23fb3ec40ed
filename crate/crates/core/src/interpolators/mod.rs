//! Point prediction from an observed station field.
//!
//! Five methods share one calling convention: a training [`Field`] is
//! prepared once into a [`Predictor`] (fitting a covariance model where the
//! method needs one), then queried at any number of [`Target`]s.
//! [`predict_with_fallback`] substitutes IDW whenever a kriging method cannot
//! produce an estimate for a day.

mod kriging;
mod neighbors;
mod transform;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::covariance::{
    self, CovarianceError, FitOptions, SphericalModel, VariogramOptions,
};
use crate::geo::{Coord, DistanceMatrix, DistanceMetric, GeoError, Station};

pub use kriging::{
    ok_predict, uk_predict, CovariateDesign, CovariateSet, KrigingSolution, OrdinaryKriging,
    UniversalKriging,
};
pub use neighbors::{idw_predict, nn_predict, COINCIDENT_KM};
pub use transform::{
    back_transform, boxcox, boxcox_inverse, boxcox_inverse_second_derivative, tgk_predict,
    tgk_predict_with_model, TransGaussianKriging, TransformSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("no present values to interpolate from")]
    NoData,
    #[error("need at least {needed} present values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("missing covariate for {0}")]
    MissingCovariate(String),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl InterpError {
    /// Whether IDW may stand in for the failed method.
    pub fn allows_fallback(&self) -> bool {
        matches!(
            self,
            InterpError::Covariance(_) | InterpError::InsufficientData { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Nn,
    Idw,
    Ok,
    Uk,
    Tgk,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Nn, Method::Idw, Method::Ok, Method::Uk, Method::Tgk];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nn => "NN",
            Method::Idw => "IDW",
            Method::Ok => "OK",
            Method::Uk => "UK",
            Method::Tgk => "TGK",
        }
    }

    pub fn is_kriging(self) -> bool {
        matches!(self, Method::Ok | Method::Uk | Method::Tgk)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NN" => Ok(Method::Nn),
            "IDW" => Ok(Method::Idw),
            "OK" => Ok(Method::Ok),
            "UK" => Ok(Method::Uk),
            "TGK" => Ok(Method::Tgk),
            _ => Err(format!("unknown method `{s}`")),
        }
    }
}

/// Tunables for all methods. Defaults: IDW power 2 over at most 20
/// neighbours, Box-Cox power 1/3, great-circle distances.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpConfig {
    pub metric: DistanceMetric,
    pub idw_power: f64,
    pub idw_max_neighbors: usize,
    pub variogram: VariogramOptions,
    pub fit: FitOptions,
    pub transform: TransformSpec,
    pub covariates: CovariateSet,
    /// Cap on trend/covariance alternations for universal kriging.
    pub uk_max_passes: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            metric: DistanceMetric::Haversine,
            idw_power: 2.0,
            idw_max_neighbors: 20,
            variogram: VariogramOptions::default(),
            fit: FitOptions::default(),
            transform: TransformSpec::default(),
            covariates: CovariateSet::default(),
            uk_max_passes: 5,
        }
    }
}

/// One day's (or period's) values at a set of stations.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub stations: Vec<Station>,
    pub values: Vec<Option<f64>>,
    pub label: String,
}

impl FieldSnapshot {
    pub fn new(stations: Vec<Station>, values: Vec<Option<f64>>, label: impl Into<String>) -> Self {
        assert_eq!(stations.len(), values.len(), "one value per station");
        FieldSnapshot {
            stations,
            values,
            label: label.into(),
        }
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// The stations with a present value, their values and pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub ids: Vec<String>,
    pub coords: Vec<Coord>,
    pub elevs: Vec<Option<f64>>,
    pub values: Vec<f64>,
    pub distances: DistanceMatrix,
    pub metric: DistanceMetric,
}

impl Field {
    /// Drops missing stations from `snapshot` and computes distances.
    pub fn from_snapshot(snapshot: &FieldSnapshot, metric: DistanceMetric) -> Result<Self, InterpError> {
        let keep: Vec<usize> = (0..snapshot.stations.len())
            .filter(|&i| snapshot.values[i].is_some())
            .collect();
        for &i in &keep {
            snapshot.stations[i].coord.check()?;
        }
        let coords: Vec<Coord> = keep.iter().map(|&i| snapshot.stations[i].coord).collect();
        Ok(Field {
            ids: keep.iter().map(|&i| snapshot.stations[i].id.clone()).collect(),
            elevs: keep.iter().map(|&i| snapshot.stations[i].elev).collect(),
            values: keep.iter().map(|&i| snapshot.values[i].unwrap()).collect(),
            distances: DistanceMatrix::from_coords(&coords, metric),
            coords,
            metric,
        })
    }

    /// Field over `idx` (indices into `stations`) reusing a precomputed
    /// distance matrix over all of `stations`.
    pub fn from_indices(
        stations: &[Station],
        all_distances: &DistanceMatrix,
        idx: &[usize],
        values: Vec<f64>,
        metric: DistanceMetric,
    ) -> Self {
        assert_eq!(idx.len(), values.len());
        Field {
            ids: idx.iter().map(|&i| stations[i].id.clone()).collect(),
            coords: idx.iter().map(|&i| stations[i].coord).collect(),
            elevs: idx.iter().map(|&i| stations[i].elev).collect(),
            values,
            distances: all_distances.subset(idx),
            metric,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Field {
        Field {
            values,
            ..self.clone()
        }
    }
}

/// A prediction location. Elevation is only needed by universal kriging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub coord: Coord,
    pub elev: Option<f64>,
}

impl Target {
    pub fn new(coord: Coord) -> Self {
        Target { coord, elev: None }
    }

    pub fn at_station(s: &Station) -> Self {
        Target {
            coord: s.coord,
            elev: s.elev,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPrediction {
    pub value: f64,
    /// Kriging variance for OK/UK; `None` for the others.
    pub variance: Option<f64>,
}

/// A method prepared on one training field.
#[derive(Debug, Clone)]
pub enum Predictor<'a> {
    Nn(&'a Field),
    Idw {
        field: &'a Field,
        power: f64,
        max_neighbors: usize,
    },
    Ok(OrdinaryKriging),
    Uk(UniversalKriging),
    Tgk(TransGaussianKriging),
}

impl<'a> Predictor<'a> {
    pub fn prepare(method: Method, field: &'a Field, cfg: &InterpConfig) -> Result<Self, InterpError> {
        if field.is_empty() {
            return Err(InterpError::NoData);
        }
        Ok(match method {
            Method::Nn => Predictor::Nn(field),
            Method::Idw => Predictor::Idw {
                field,
                power: cfg.idw_power,
                max_neighbors: cfg.idw_max_neighbors,
            },
            Method::Ok => Predictor::Ok(OrdinaryKriging::fit(field, cfg)?),
            Method::Uk => Predictor::Uk(UniversalKriging::fit(field, cfg)?),
            Method::Tgk => Predictor::Tgk(TransGaussianKriging::fit(field, cfg)?),
        })
    }

    pub fn predict(&self, target: &Target) -> Result<PointPrediction, InterpError> {
        match self {
            Predictor::Nn(field) => Ok(PointPrediction {
                value: neighbors::nn_field(field, target.coord)?,
                variance: None,
            }),
            Predictor::Idw {
                field,
                power,
                max_neighbors,
            } => Ok(PointPrediction {
                value: neighbors::idw_field(field, target.coord, *power, *max_neighbors)?,
                variance: None,
            }),
            Predictor::Ok(ok) => {
                let s = ok.predict(target.coord)?;
                Ok(PointPrediction {
                    value: s.prediction,
                    variance: Some(s.variance),
                })
            }
            Predictor::Uk(uk) => {
                let s = uk.predict(target)?;
                Ok(PointPrediction {
                    value: s.prediction,
                    variance: Some(s.variance),
                })
            }
            Predictor::Tgk(tgk) => Ok(PointPrediction {
                value: tgk.predict(target.coord)?,
                variance: None,
            }),
        }
    }

    /// Fitted covariance model, for the kriging variants.
    pub fn model(&self) -> Option<SphericalModel> {
        match self {
            Predictor::Ok(k) => Some(k.model()),
            Predictor::Uk(k) => Some(k.model()),
            Predictor::Tgk(k) => Some(k.model()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallbackPrediction {
    pub value: f64,
    pub variance: Option<f64>,
    /// The method that actually produced `value`.
    pub method_used: Method,
    pub fallback_used: bool,
}

/// Predicts every target with `method`, substituting IDW for targets the
/// method cannot serve (degenerate or non-convergent covariance fit,
/// numerical failure, too few stations). Fails only when IDW itself has no
/// data or the error is not one IDW can stand in for.
pub fn predict_with_fallback(
    method: Method,
    field: &Field,
    targets: &[Target],
    cfg: &InterpConfig,
) -> Result<Vec<FallbackPrediction>, InterpError> {
    let idw = || Predictor::prepare(Method::Idw, field, cfg);
    let fallback = |t: &Target| -> Result<FallbackPrediction, InterpError> {
        let p = idw()?.predict(t)?;
        Ok(FallbackPrediction {
            value: p.value,
            variance: None,
            method_used: Method::Idw,
            fallback_used: true,
        })
    };
    let primary = match Predictor::prepare(method, field, cfg) {
        Ok(p) => p,
        Err(e) if e.allows_fallback() && method.is_kriging() => {
            log::debug!("{method} unavailable ({e}); using IDW");
            return targets.iter().map(fallback).collect();
        }
        Err(e) => return Err(e),
    };
    targets
        .iter()
        .map(|t| match primary.predict(t) {
            Ok(p) => Ok(FallbackPrediction {
                value: p.value,
                variance: p.variance,
                method_used: method,
                fallback_used: false,
            }),
            Err(e) if e.allows_fallback() && method.is_kriging() => fallback(t),
            Err(e) => Err(e),
        })
        .collect()
}

/// Single-target form of [`predict_with_fallback`].
pub fn with_fallback(
    method: Method,
    snapshot: &FieldSnapshot,
    target: &Target,
    cfg: &InterpConfig,
) -> Result<FallbackPrediction, InterpError> {
    let field = Field::from_snapshot(snapshot, cfg.metric)?;
    predict_with_fallback(method, &field, std::slice::from_ref(target), cfg)
        .map(|mut v| v.remove(0))
}

/// Fits a spherical model to a field's raw values and insists on
/// convergence.
pub(crate) fn fit_converged(
    values: &[f64],
    distances: &DistanceMatrix,
    cfg: &InterpConfig,
) -> Result<SphericalModel, InterpError> {
    if values.len() < 2 {
        return Err(InterpError::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let opt: Vec<Option<f64>> = values.iter().map(|v| Some(*v)).collect();
    let emp = covariance::empirical_semivariogram(&opt, distances, &cfg.variogram)?;
    let (model, diag) = covariance::fit_spherical(&emp, None, &cfg.fit)?;
    if !diag.converged {
        return Err(CovarianceError::NonConvergence(diag.iterations).into());
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(values: &[f64]) -> FieldSnapshot {
        let stations: Vec<Station> = values
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let lat = 36.0 + (i % 5) as f64 * 1.1 + (i as f64 * 0.37).sin() * 0.2;
                let lon = -99.0 + (i / 5) as f64 * 1.3 + (i as f64 * 0.71).cos() * 0.2;
                Station::new(format!("S{i:02}"), lat, lon, Some(200.0 + 10.0 * i as f64)).unwrap()
            })
            .collect();
        FieldSnapshot::new(stations, values.iter().map(|v| Some(*v)).collect(), "day")
    }

    #[test]
    fn all_zero_day_falls_back_to_idw() {
        let snap = snapshot(&[0.0; 25]);
        let target = Target::new(Coord::new(37.3, -97.4).unwrap());
        for method in [Method::Ok, Method::Uk, Method::Tgk] {
            let p = with_fallback(method, &snap, &target, &InterpConfig::default()).unwrap();
            assert!(p.fallback_used, "{method}");
            assert_eq!(p.method_used, Method::Idw);
            assert_eq!(p.value, 0.0);
        }
    }

    #[test]
    fn smooth_field_uses_primary() {
        let vals: Vec<f64> = (0..25)
            .map(|i| 5.0 + ((i % 5) as f64 * 2.0).sin() * 2.0 + ((i / 5) as f64 * 2.2).cos())
            .collect();
        let snap = snapshot(&vals);
        let target = Target::new(Coord::new(37.3, -97.4).unwrap());
        let p = with_fallback(Method::Ok, &snap, &target, &InterpConfig::default()).unwrap();
        assert!(!p.fallback_used);
        assert_eq!(p.method_used, Method::Ok);
        assert!(p.variance.unwrap() >= 0.0);
    }

    #[test]
    fn iteration_cap_forces_fallback() {
        let vals: Vec<f64> = (0..25)
            .map(|i| 5.0 + ((i % 5) as f64 * 2.0).sin() * 2.0 + ((i / 5) as f64 * 2.2).cos())
            .collect();
        let snap = snapshot(&vals);
        let target = Target::new(Coord::new(37.3, -97.4).unwrap());
        let cfg = InterpConfig {
            fit: FitOptions {
                max_iterations: 0,
                ..FitOptions::default()
            },
            ..InterpConfig::default()
        };
        let p = with_fallback(Method::Ok, &snap, &target, &cfg).unwrap();
        assert!(p.fallback_used);
        let idw = idw_predict(&snap, target.coord, 2.0, 20, cfg.metric).unwrap();
        assert_eq!(p.value, idw);
    }

    #[test]
    fn fallback_needs_data() {
        let mut snap = snapshot(&[1.0, 2.0]);
        snap.values = vec![None, None];
        let target = Target::new(Coord::new(37.3, -97.4).unwrap());
        assert_eq!(
            with_fallback(Method::Ok, &snap, &target, &InterpConfig::default()),
            Err(InterpError::NoData)
        );
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("kriging".parse::<Method>().is_err());
    }
}
