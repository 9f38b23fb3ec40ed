use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::covariance::{self, CovarianceError, SphericalModel};
use crate::geo::{Coord, DistanceMetric};
use crate::linalg;

use super::{fit_converged, Field, FieldSnapshot, InterpConfig, InterpError, Target};

/// Output of one kriging solve.
///
/// `lagrange` follows the semivariogram form of the kriging system,
/// `Γλ + m·1 = γ`, so that `variance = C(0) − λᵀc + m`. For universal
/// kriging it is the multiplier of the intercept constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingSolution {
    pub prediction: f64,
    pub variance: f64,
    pub lagrange: f64,
    pub weights: Vec<f64>,
}

/// Ordinary kriging system factored once for a set of observations.
#[derive(Debug, Clone)]
pub struct OrdinaryKriging {
    coords: Vec<Coord>,
    metric: DistanceMetric,
    model: SphericalModel,
    chol: Cholesky<f64, Dyn>,
    cinv_one: DVector<f64>,
    one_cinv_one: f64,
    mean: f64,
    cinv_resid: DVector<f64>,
}

impl OrdinaryKriging {
    pub fn new(field: &Field, model: SphericalModel) -> Result<Self, InterpError> {
        model.check()?;
        let n = field.len();
        if n < 2 {
            return Err(InterpError::InsufficientData { needed: 2, got: n });
        }
        let chol = linalg::factor(linalg::covariance_matrix(&model, &field.distances))?;
        let cinv_one = chol.solve(&DVector::from_element(n, 1.0));
        let one_cinv_one = cinv_one.sum();
        if !(one_cinv_one.is_finite() && one_cinv_one > 0.0) {
            return Err(CovarianceError::Numerical("1ᵀC⁻¹1 is not positive".into()).into());
        }
        let z = DVector::from_column_slice(&field.values);
        let mean = cinv_one.dot(&z) / one_cinv_one;
        let cinv_resid = chol.solve(&z.add_scalar(-mean));
        Ok(OrdinaryKriging {
            coords: field.coords.clone(),
            metric: field.metric,
            model,
            chol,
            cinv_one,
            one_cinv_one,
            mean,
            cinv_resid,
        })
    }

    /// Fits a spherical model to the field and factors the system.
    pub fn fit(field: &Field, cfg: &InterpConfig) -> Result<Self, InterpError> {
        let model = fit_converged(&field.values, &field.distances, cfg)?;
        Self::new(field, model)
    }

    pub fn model(&self) -> SphericalModel {
        self.model
    }

    /// GLS estimate of the constant mean; independent of the target.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    fn cross_covariance(&self, target: Coord) -> DVector<f64> {
        DVector::from_iterator(
            self.coords.len(),
            self.coords
                .iter()
                .map(|c| self.model.covariance_unchecked(self.metric.distance_unchecked(*c, target))),
        )
    }

    pub fn predict(&self, target: Coord) -> Result<KrigingSolution, InterpError> {
        target.check()?;
        let c = self.cross_covariance(target);
        let cinv_c = self.chol.solve(&c);
        let lagrange = (1.0 - self.cinv_one.dot(&c)) / self.one_cinv_one;
        let weights = &cinv_c + &self.cinv_one * lagrange;
        let prediction = self.mean + c.dot(&self.cinv_resid);
        let variance = self.model.sill() - c.dot(&cinv_c) + lagrange * lagrange * self.one_cinv_one;
        Ok(KrigingSolution {
            prediction,
            variance: variance.max(0.0),
            lagrange,
            weights: weights.iter().copied().collect(),
        })
    }
}

/// Ordinary kriging prediction from a snapshot with a given model.
pub fn ok_predict(
    snapshot: &FieldSnapshot,
    model: &SphericalModel,
    target: Coord,
    metric: DistanceMetric,
) -> Result<KrigingSolution, InterpError> {
    let field = Field::from_snapshot(snapshot, metric)?;
    OrdinaryKriging::new(&field, *model)?.predict(target)
}

/// Which location covariates enter the universal kriging trend (an
/// intercept is always included).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovariateSet {
    pub lat: bool,
    pub lon: bool,
    pub elev: bool,
}

impl Default for CovariateSet {
    fn default() -> Self {
        CovariateSet {
            lat: true,
            lon: true,
            elev: true,
        }
    }
}

impl CovariateSet {
    pub fn intercept_only() -> Self {
        CovariateSet {
            lat: false,
            lon: false,
            elev: false,
        }
    }
}

/// Intercept plus z-scored covariates, standardised with the training
/// stations' mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDesign {
    set: CovariateSet,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl CovariateDesign {
    fn raw(set: CovariateSet, coord: Coord, elev: Option<f64>, who: &str) -> Result<Vec<f64>, InterpError> {
        let mut row = Vec::with_capacity(3);
        if set.lat {
            row.push(coord.lat);
        }
        if set.lon {
            row.push(coord.lon);
        }
        if set.elev {
            row.push(elev.ok_or_else(|| InterpError::MissingCovariate(format!("elevation of {who}")))?);
        }
        Ok(row)
    }

    pub fn from_field(field: &Field, set: CovariateSet) -> Result<Self, InterpError> {
        let rows: Vec<Vec<f64>> = (0..field.len())
            .map(|i| Self::raw(set, field.coords[i], field.elevs[i], &field.ids[i]))
            .collect::<Result<_, _>>()?;
        let p = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut center = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for k in 0..p {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
            center[k] = mean;
            // a constant column makes the design singular; leave it unscaled
            // so the rank check reports it
            scale[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(CovariateDesign { set, center, scale })
    }

    pub fn n_columns(&self) -> usize {
        1 + self.center.len()
    }

    pub fn row(&self, coord: Coord, elev: Option<f64>, who: &str) -> Result<Vec<f64>, InterpError> {
        let raw = Self::raw(self.set, coord, elev, who)?;
        let mut row = Vec::with_capacity(self.n_columns());
        row.push(1.0);
        row.extend(
            raw.iter()
                .zip(self.center.iter().zip(&self.scale))
                .map(|(x, (m, s))| (x - m) / s),
        );
        Ok(row)
    }

    pub fn matrix(&self, field: &Field) -> Result<DMatrix<f64>, InterpError> {
        let p = self.n_columns();
        let mut x = DMatrix::zeros(field.len(), p);
        for i in 0..field.len() {
            let row = self.row(field.coords[i], field.elevs[i], &field.ids[i])?;
            for (k, v) in row.into_iter().enumerate() {
                x[(i, k)] = v;
            }
        }
        // a column that is constant across stations duplicates the intercept
        for k in 1..p {
            if x.column(k).iter().all(|v| *v == 0.0) {
                return Err(CovarianceError::SingularDesign.into());
            }
        }
        Ok(x)
    }
}

/// Universal kriging system with a linear trend in location covariates.
#[derive(Debug, Clone)]
pub struct UniversalKriging {
    coords: Vec<Coord>,
    metric: DistanceMetric,
    model: SphericalModel,
    design: Option<CovariateDesign>,
    chol: Cholesky<f64, Dyn>,
    x: DMatrix<f64>,
    cinv_x: DMatrix<f64>,
    xtcx: Cholesky<f64, Dyn>,
    beta: DVector<f64>,
    cinv_resid: DVector<f64>,
}

impl UniversalKriging {
    /// Builds the system for an explicit design matrix (rows aligned with
    /// `field`).
    pub fn with_design(field: &Field, x: DMatrix<f64>, model: SphericalModel) -> Result<Self, InterpError> {
        model.check()?;
        let n = field.len();
        let p = x.ncols();
        if x.nrows() != n {
            return Err(InterpError::Domain(format!("design has {} rows for {n} stations", x.nrows())));
        }
        if n < p + 1 {
            return Err(InterpError::InsufficientData { needed: p + 1, got: n });
        }
        linalg::check_full_rank(&x)?;
        let chol = linalg::factor(linalg::covariance_matrix(&model, &field.distances))?;
        let cinv_x = chol.solve(&x);
        let xtcx = (x.transpose() * &cinv_x)
            .cholesky()
            .ok_or(CovarianceError::SingularDesign)?;
        let z = DVector::from_column_slice(&field.values);
        let beta = xtcx.solve(&(cinv_x.transpose() * &z));
        let cinv_resid = chol.solve(&(&z - &x * &beta));
        Ok(UniversalKriging {
            coords: field.coords.clone(),
            metric: field.metric,
            model,
            design: None,
            chol,
            x,
            cinv_x,
            xtcx,
            beta,
            cinv_resid,
        })
    }

    /// Standardised (Lat, Lon, Elev) trend with the residual covariance
    /// estimated by alternating semivariogram fits and GLS.
    pub fn fit(field: &Field, cfg: &InterpConfig) -> Result<Self, InterpError> {
        let design = CovariateDesign::from_field(field, cfg.covariates)?;
        let x = design.matrix(field)?;
        if field.len() < x.ncols() + 1 {
            return Err(InterpError::InsufficientData {
                needed: x.ncols() + 1,
                got: field.len(),
            });
        }
        let trend = covariance::iterated_gls(
            &field.values,
            &x,
            &field.distances,
            &cfg.variogram,
            &cfg.fit,
            cfg.uk_max_passes,
        )?;
        let mut uk = Self::with_design(field, x, trend.model)?;
        uk.design = Some(design);
        Ok(uk)
    }

    pub fn model(&self) -> SphericalModel {
        self.model
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.beta.iter().copied().collect()
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Prediction at a target given its covariate row.
    pub fn predict_row(&self, target: Coord, x0: &[f64]) -> Result<KrigingSolution, InterpError> {
        target.check()?;
        if x0.len() != self.x.ncols() {
            return Err(InterpError::Domain(format!(
                "target covariate row has {} entries, expected {}",
                x0.len(),
                self.x.ncols()
            )));
        }
        let c = DVector::from_iterator(
            self.coords.len(),
            self.coords
                .iter()
                .map(|s| self.model.covariance_unchecked(self.metric.distance_unchecked(*s, target))),
        );
        let x0 = DVector::from_column_slice(x0);
        let cinv_c = self.chol.solve(&c);
        let gap = &x0 - self.cinv_x.transpose() * &c;
        let multipliers = self.xtcx.solve(&gap);
        let weights = &cinv_c + &self.cinv_x * &multipliers;
        let prediction = x0.dot(&self.beta) + c.dot(&self.cinv_resid);
        let variance = self.model.sill() - c.dot(&cinv_c) + gap.dot(&multipliers);
        Ok(KrigingSolution {
            prediction,
            variance: variance.max(0.0),
            lagrange: multipliers[0],
            weights: weights.iter().copied().collect(),
        })
    }

    /// Prediction at a target whose covariate row is built from its
    /// location and elevation. Only available after [`UniversalKriging::fit`].
    pub fn predict(&self, target: &Target) -> Result<KrigingSolution, InterpError> {
        let design = self
            .design
            .as_ref()
            .ok_or_else(|| InterpError::Domain("no covariate design attached".into()))?;
        let row = design.row(target.coord, target.elev, "target")?;
        self.predict_row(target.coord, &row)
    }
}

/// Universal kriging from a snapshot. `covariates` has one row per snapshot
/// station (rows of missing stations are ignored); `target_row` is the
/// target's covariate row in the same column layout.
pub fn uk_predict(
    snapshot: &FieldSnapshot,
    covariates: &DMatrix<f64>,
    target_row: &[f64],
    model: &SphericalModel,
    target: Coord,
    metric: DistanceMetric,
) -> Result<KrigingSolution, InterpError> {
    if covariates.nrows() != snapshot.stations.len() {
        return Err(InterpError::Domain("covariate rows must match stations".into()));
    }
    let field = Field::from_snapshot(snapshot, metric)?;
    let keep: Vec<usize> = (0..snapshot.values.len())
        .filter(|&i| snapshot.values[i].is_some())
        .collect();
    let x = covariates.select_rows(keep.iter());
    UniversalKriging::with_design(&field, x, *model)?.predict_row(target, target_row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Station, EARTH_RADIUS_KM};
    use approx::assert_relative_eq;

    const M: DistanceMetric = DistanceMetric::Haversine;

    fn km_to_deg(km: f64) -> f64 {
        km / EARTH_RADIUS_KM * 180.0 / std::f64::consts::PI
    }

    fn snap(points: &[(f64, f64, f64)], elevs: Option<&[f64]>) -> FieldSnapshot {
        let stations = points
            .iter()
            .enumerate()
            .map(|(i, (lat, lon, _))| Station::new(format!("S{i}"), *lat, *lon, elevs.map(|e| e[i])).unwrap())
            .collect();
        FieldSnapshot::new(stations, points.iter().map(|p| Some(p.2)).collect(), "t")
    }

    /// Dense Gaussian elimination with partial pivoting; independent of the
    /// Cholesky path used by the solvers.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in (col + 1)..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    fn cov(model: &SphericalModel, a: Coord, b: Coord) -> f64 {
        model.covariance(M.distance(a, b).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_pair_gets_equal_weights() {
        let d = km_to_deg(50.0);
        let s = snap(&[(0.0, -d, 4.0), (0.0, d, 10.0)], None);
        let model = SphericalModel::new(1.0, 200.0, 0.0).unwrap();
        let sol = ok_predict(&s, &model, Coord::new(0.0, 0.0).unwrap(), M).unwrap();
        assert_relative_eq!(sol.weights[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(sol.weights[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(sol.prediction, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_at_observed_station() {
        let s = snap(
            &[(36.0, -98.0, 3.0), (36.5, -97.0, 8.0), (37.2, -98.4, 1.5), (35.4, -96.9, 4.0)],
            None,
        );
        let model = SphericalModel::new(2.0, 300.0, 0.0).unwrap();
        let sol = ok_predict(&s, &model, s.stations[1].coord, M).unwrap();
        assert_relative_eq!(sol.prediction, 8.0, max_relative = 1e-6);
        assert!(sol.variance <= 1e-6 * model.sigma2);
        assert_relative_eq!(sol.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn ok_matches_lagrangian_system() {
        let pts = [(36.0, -98.0, 3.0), (36.5, -97.0, 8.0), (37.2, -98.4, 1.5), (35.4, -96.9, 4.0)];
        let s = snap(&pts, None);
        let model = SphericalModel::new(1.0, 200.0, 0.0).unwrap();
        let target = Coord::new(36.3, -97.6).unwrap();
        let sol = ok_predict(&s, &model, target, M).unwrap();

        // [C 1; 1ᵀ 0][λ; -m] = [c; 1]
        let n = pts.len();
        let coords: Vec<Coord> = s.stations.iter().map(|st| st.coord).collect();
        let mut a = vec![vec![0.0; n + 1]; n + 1];
        let mut b = vec![0.0; n + 1];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = cov(&model, coords[i], coords[j]);
            }
            a[i][n] = 1.0;
            a[n][i] = 1.0;
            b[i] = cov(&model, coords[i], target);
        }
        b[n] = 1.0;
        let x = gauss_solve(a, b.clone());
        let pred: f64 = (0..n).map(|i| x[i] * pts[i].2).sum();
        let m = -x[n];
        let var = model.sill() - (0..n).map(|i| x[i] * b[i]).sum::<f64>() + m;
        assert_relative_eq!(sol.prediction, pred, epsilon = 1e-8);
        assert_relative_eq!(sol.lagrange, m, epsilon = 1e-8);
        assert_relative_eq!(sol.variance, var, epsilon = 1e-8);
        for i in 0..n {
            assert_relative_eq!(sol.weights[i], x[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn uk_intercept_only_equals_ok() {
        let pts = [(36.0, -98.0, 3.0), (36.5, -97.0, 8.0), (37.2, -98.4, 1.5), (35.4, -96.9, 4.0)];
        let s = snap(&pts, None);
        let model = SphericalModel::new(1.5, 250.0, 0.0).unwrap();
        let target = Coord::new(36.3, -97.6).unwrap();
        let ok = ok_predict(&s, &model, target, M).unwrap();
        let x = DMatrix::from_element(4, 1, 1.0);
        let uk = uk_predict(&s, &x, &[1.0], &model, target, M).unwrap();
        assert_relative_eq!(ok.prediction, uk.prediction, epsilon = 1e-12);
        assert_relative_eq!(ok.variance, uk.variance, epsilon = 1e-12);
        assert_relative_eq!(ok.lagrange, uk.lagrange, epsilon = 1e-12);
    }

    #[test]
    fn uk_perfect_trend_is_exact() {
        let lats = [35.0, 35.8, 36.4, 37.1, 38.0, 36.9];
        let lons = [-99.0, -97.2, -98.5, -96.8, -97.9, -99.3];
        let pts: Vec<(f64, f64, f64)> = lats.iter().zip(&lons).map(|(a, o)| (*a, *o, 2.0 * a)).collect();
        let s = snap(&pts, None);
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { lats[i] });
        let model = SphericalModel::new(1.0, 150.0, 0.0).unwrap();
        let target = Coord::new(36.7, -98.0).unwrap();
        let sol = uk_predict(&s, &x, &[1.0, 36.7], &model, target, M).unwrap();
        assert_relative_eq!(sol.prediction, 73.4, epsilon = 1e-8);
        assert_relative_eq!(sol.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn uk_matches_dense_gls_oracle() {
        let pts = [
            (35.2, -99.1, 4.0),
            (36.0, -97.5, 7.5),
            (36.8, -98.6, 2.0),
            (37.5, -96.9, 9.0),
            (35.9, -96.2, 5.5),
        ];
        let elev = [410.0, 320.0, 515.0, 280.0, 300.0];
        let s = snap(&pts, Some(&elev));
        let x = DMatrix::from_fn(5, 4, |i, j| match j {
            0 => 1.0,
            1 => pts[i].0,
            2 => pts[i].1,
            _ => elev[i],
        });
        let model = SphericalModel::new(2.0, 400.0, 0.0).unwrap();
        let target = Coord::new(36.4, -97.8).unwrap();
        let x0 = [1.0, 36.4, -97.8, 390.0];
        let sol = uk_predict(&s, &x, &x0, &model, target, M).unwrap();

        // Bordered system [C X; Xᵀ 0][λ; μ] = [c; x0].
        let n = 5;
        let p = 4;
        let coords: Vec<Coord> = s.stations.iter().map(|st| st.coord).collect();
        let mut a = vec![vec![0.0; n + p]; n + p];
        let mut b = vec![0.0; n + p];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = cov(&model, coords[i], coords[j]);
            }
            for k in 0..p {
                a[i][n + k] = x[(i, k)];
                a[n + k][i] = x[(i, k)];
            }
            b[i] = cov(&model, coords[i], target);
        }
        for k in 0..p {
            b[n + k] = x0[k];
        }
        let sol_dense = gauss_solve(a, b);
        let pred: f64 = (0..n).map(|i| sol_dense[i] * pts[i].2).sum();
        assert_relative_eq!(sol.prediction, pred, max_relative = 1e-7);
        for i in 0..n {
            assert_relative_eq!(sol.weights[i], sol_dense[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn uk_rejects_rank_deficient_design() {
        let pts = [(36.0, -98.0, 3.0), (36.5, -97.0, 8.0), (37.2, -98.4, 1.5), (35.4, -96.9, 4.0)];
        let s = snap(&pts, None);
        let x = DMatrix::from_fn(4, 2, |_, _| 1.0);
        let model = SphericalModel::new(1.0, 150.0, 0.0).unwrap();
        let err = uk_predict(&s, &x, &[1.0, 1.0], &model, Coord::new(36.0, -97.0).unwrap(), M).unwrap_err();
        assert_eq!(err, InterpError::Covariance(CovarianceError::SingularDesign));
    }

    #[test]
    fn uk_requires_target_elevation() {
        let pts: Vec<(f64, f64, f64)> = (0..12)
            .map(|i| (35.0 + (i % 4) as f64, -99.0 + (i / 4) as f64, (i as f64 * 0.9).sin() + 3.0))
            .collect();
        let elev: Vec<f64> = (0..12).map(|i| 300.0 + 17.0 * i as f64).collect();
        let s = snap(&pts, Some(&elev));
        let field = Field::from_snapshot(&s, M).unwrap();
        let design = CovariateDesign::from_field(&field, CovariateSet::default()).unwrap();
        let err = design.row(Coord::new(36.0, -98.0).unwrap(), None, "target").unwrap_err();
        assert!(matches!(err, InterpError::MissingCovariate(_)));
        let row = design.row(Coord::new(36.0, -98.0).unwrap(), Some(350.0), "target").unwrap();
        assert_eq!(row.len(), 4);
        assert_eq!(row[0], 1.0);
    }
}
