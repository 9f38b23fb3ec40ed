use crate::covariance::SphericalModel;
use crate::geo::{Coord, DistanceMetric};

use super::{fit_converged, Field, FieldSnapshot, InterpConfig, InterpError, OrdinaryKriging};

/// Box-Cox power. `lambda = 0` selects the log transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    pub lambda: f64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec { lambda: 1.0 / 3.0 }
    }
}

impl TransformSpec {
    pub fn new(lambda: f64) -> Result<Self, InterpError> {
        if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
            return Err(InterpError::Domain(format!("Box-Cox lambda {lambda} outside [0, 1]")));
        }
        Ok(TransformSpec { lambda })
    }

    fn is_cube_root(&self) -> bool {
        self.lambda == 1.0 / 3.0
    }
}

pub fn boxcox(z: f64, spec: TransformSpec) -> Result<f64, InterpError> {
    if !(z >= 0.0) {
        return Err(InterpError::Domain(format!("Box-Cox input {z} is negative")));
    }
    let l = spec.lambda;
    Ok(if l == 0.0 {
        z.ln()
    } else if spec.is_cube_root() {
        3.0 * (z.cbrt() - 1.0)
    } else {
        (z.powf(l) - 1.0) / l
    })
}

/// Inverse transform `(λy + 1)^(1/λ)`. The base is floored at zero so
/// predictions below the image of `z = 0` map to zero.
pub fn boxcox_inverse(y: f64, spec: TransformSpec) -> f64 {
    let l = spec.lambda;
    if l == 0.0 {
        return y.exp();
    }
    let base = (l * y + 1.0).max(0.0);
    if spec.is_cube_root() {
        let b = (y / 3.0 + 1.0).max(0.0);
        b * b * b
    } else {
        base.powf(1.0 / l)
    }
}

/// Second derivative of [`boxcox_inverse`], `(1 − λ)(λy + 1)^(1/λ − 2)`.
pub fn boxcox_inverse_second_derivative(y: f64, spec: TransformSpec) -> f64 {
    let l = spec.lambda;
    if l == 0.0 {
        return y.exp();
    }
    if spec.is_cube_root() {
        return (2.0 / 3.0) * (y / 3.0 + 1.0).max(0.0);
    }
    let base = (l * y + 1.0).max(0.0);
    (1.0 - l) * base.powf(1.0 / l - 2.0)
}

/// Delta-method back-transform of a kriging prediction on the transformed
/// scale: `φ(ŷ) + φ''(μ̂)(σ²/2 − m)`.
pub fn back_transform(prediction: f64, mean: f64, variance: f64, lagrange: f64, spec: TransformSpec) -> f64 {
    boxcox_inverse(prediction, spec)
        + boxcox_inverse_second_derivative(mean, spec) * (variance / 2.0 - lagrange)
}

/// Ordinary kriging on Box-Cox transformed values with the bias-corrected
/// back-transform. The covariance model is fitted on the transformed scale.
#[derive(Debug, Clone)]
pub struct TransGaussianKriging {
    spec: TransformSpec,
    ok: OrdinaryKriging,
}

impl TransGaussianKriging {
    fn transformed(field: &Field, spec: TransformSpec) -> Result<Field, InterpError> {
        let y = field
            .values
            .iter()
            .map(|z| boxcox(*z, spec))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(field.with_values(y))
    }

    pub fn fit(field: &Field, cfg: &InterpConfig) -> Result<Self, InterpError> {
        let y = Self::transformed(field, cfg.transform)?;
        let model = fit_converged(&y.values, &y.distances, cfg)?;
        Ok(TransGaussianKriging {
            spec: cfg.transform,
            ok: OrdinaryKriging::new(&y, model)?,
        })
    }

    /// Uses a given covariance model for the transformed values.
    pub fn with_model(field: &Field, model: SphericalModel, spec: TransformSpec) -> Result<Self, InterpError> {
        let y = Self::transformed(field, spec)?;
        Ok(TransGaussianKriging {
            spec,
            ok: OrdinaryKriging::new(&y, model)?,
        })
    }

    pub fn model(&self) -> SphericalModel {
        self.ok.model()
    }

    pub fn predict(&self, target: Coord) -> Result<f64, InterpError> {
        let sol = self.ok.predict(target)?;
        let z = back_transform(sol.prediction, self.ok.mean(), sol.variance, sol.lagrange, self.spec);
        Ok(z.max(0.0))
    }
}

/// Trans-Gaussian kriging prediction, fitting the covariance of the
/// transformed field.
pub fn tgk_predict(snapshot: &FieldSnapshot, target: Coord, cfg: &InterpConfig) -> Result<f64, InterpError> {
    let field = Field::from_snapshot(snapshot, cfg.metric)?;
    TransGaussianKriging::fit(&field, cfg)?.predict(target)
}

pub fn tgk_predict_with_model(
    snapshot: &FieldSnapshot,
    target: Coord,
    spec: TransformSpec,
    model: &SphericalModel,
    metric: DistanceMetric,
) -> Result<f64, InterpError> {
    let field = Field::from_snapshot(snapshot, metric)?;
    TransGaussianKriging::with_model(&field, *model, spec)?.predict(target)
}
