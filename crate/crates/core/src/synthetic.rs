//! Synthetic station layouts and Gaussian random fields with a spherical
//! covariance, for tests, benchmarks and demo datasets.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covariance::{CovarianceError, SphericalModel};
use crate::geo::{DistanceMatrix, DistanceMetric, ObservationPanel, Station};

/// Latitude/longitude box in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub lat: (f64, f64),
    pub lon: (f64, f64),
}

/// Roughly the central United States.
pub const CENTRAL_US: Region = Region {
    lat: (35.0, 45.0),
    lon: (-100.0, -88.0),
};

/// `n` stations on a near-square grid over `region`, each moved by up to
/// 40% of a cell. Elevations are uniform in 100–600 m.
pub fn jittered_sites(n: usize, region: Region, rng: &mut impl Rng) -> Vec<Station> {
    let (lat0, lat1) = region.lat;
    let (lon0, lon1) = region.lon;
    let aspect = (lon1 - lon0) / (lat1 - lat0);
    let rows = ((n as f64 / aspect).sqrt().ceil() as usize).max(1);
    let cols = n.div_ceil(rows);
    let dlat = (lat1 - lat0) / rows as f64;
    let dlon = (lon1 - lon0) / cols as f64;
    (0..n)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            let lat = lat0 + (r as f64 + 0.5 + rng.random_range(-0.4..0.4)) * dlat;
            let lon = lon0 + (c as f64 + 0.5 + rng.random_range(-0.4..0.4)) * dlon;
            let elev = rng.random_range(100.0..600.0);
            Station::new(format!("ST{k:03}"), lat, lon, Some(elev)).expect("inside region")
        })
        .collect()
}

/// Draws zero-mean Gaussian vectors with covariance given by a spherical
/// model over fixed sites.
#[derive(Debug, Clone)]
pub struct GaussianFieldSampler {
    lower: DMatrix<f64>,
}

impl GaussianFieldSampler {
    pub fn new(stations: &[Station], model: &SphericalModel, metric: DistanceMetric) -> Result<Self, CovarianceError> {
        let d = DistanceMatrix::from_stations(stations, metric);
        let n = d.len();
        let c = DMatrix::from_fn(n, n, |i, j| {
            let v = model.covariance_unchecked(d.get(i, j));
            if i == j {
                v + 1e-10 * model.sill()
            } else {
                v
            }
        });
        let chol = c
            .cholesky()
            .ok_or_else(|| CovarianceError::Numerical("sampling covariance not positive definite".into()))?;
        Ok(GaussianFieldSampler { lower: chol.l() })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.lower.nrows();
        let eps = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.lower * eps).iter().copied().collect()
    }
}

/// Zero-inflated, right-skewed precipitation from a latent Gaussian value:
/// `scale · max(0, g + shift)³`.
pub fn latent_to_precip(g: f64, shift: f64, scale: f64) -> f64 {
    let x = (g + shift).max(0.0);
    scale * x * x * x
}

/// Daily panel of synthetic precipitation (and temperature) with spatially
/// correlated days drawn independently from `model`.
pub fn precipitation_panel(
    stations: Vec<Station>,
    start: NaiveDate,
    days: usize,
    model: &SphericalModel,
    seed: u64,
) -> Result<ObservationPanel, CovarianceError> {
    let sampler = GaussianFieldSampler::new(&stations, model, DistanceMetric::Haversine)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = stations.len();
    let mut precip = vec![Vec::with_capacity(days); n];
    let mut tmax = vec![Vec::with_capacity(days); n];
    let dates: Vec<NaiveDate> = (0..days).map(|i| start + chrono::Days::new(i as u64)).collect();
    for _ in 0..days {
        let wet = sampler.sample(&mut rng);
        let warm = sampler.sample(&mut rng);
        for i in 0..n {
            // round to 0.1 mm like gauge records
            let p = (latent_to_precip(wet[i], 0.2, 6.0) * 10.0).round() / 10.0;
            precip[i].push(Some(p));
            tmax[i].push(Some(((75.0 + 8.0 * warm[i]) * 10.0).round() / 10.0));
        }
    }
    Ok(ObservationPanel::new(stations, dates, precip, Some(tmax)).expect("well-formed by construction"))
}

/// `n_stations` jittered sites over [`CENTRAL_US`] with a synthetic daily
/// panel; everything derives from `seed`.
pub fn demo_panel(
    n_stations: usize,
    start: NaiveDate,
    days: usize,
    model: &SphericalModel,
    seed: u64,
) -> Result<ObservationPanel, CovarianceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stations = jittered_sites(n_stations, CENTRAL_US, &mut rng);
    precipitation_panel(stations, start, days, model, seed.wrapping_add(1))
}
