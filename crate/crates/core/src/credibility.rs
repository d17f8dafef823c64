//! Sensor credibility: expected index `E`, realtime index `P` and their
//! product `H = E · P`.

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ins::GRAVITY;

/// Upper bound of the realtime index and of the dimensionless curves.
pub const RHO_MAX: f64 = 10.0;

/// Number of state groups tracked by coverage rows:
/// `θ/γ, φ, v_xy, v_z, p_xy, p_z`.
pub const COVERAGE_COLUMNS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Imu,
    Rtk,
    Gps,
    Other,
}

/// Accuracy sheet of one sensor. Absent entries are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSheet {
    pub sensor_id: String,
    pub kind: SensorKind,
    /// Level attitude accuracy, rad.
    #[serde(default)]
    pub attitude: f64,
    /// Heading accuracy, rad.
    #[serde(default)]
    pub heading: f64,
    /// m/s
    #[serde(default)]
    pub velocity: f64,
    /// m
    #[serde(default)]
    pub position: f64,
    /// rad/s
    #[serde(default)]
    pub gyro_bias: f64,
    /// m/s²
    #[serde(default)]
    pub accel_bias: f64,
    #[serde(default)]
    pub coverage: [u8; COVERAGE_COLUMNS],
    /// Prediction horizon, s.
    pub horizon: f64,
    /// Velocity change used by the heading term, m/s.
    #[serde(default)]
    pub delta_v: f64,
}

impl SensorSheet {
    pub fn validate(&self) -> Result<()> {
        let acc = [
            self.attitude,
            self.heading,
            self.velocity,
            self.position,
            self.gyro_bias,
            self.accel_bias,
            self.delta_v,
        ];
        if acc.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return invalid(format!(
                "{}: accuracies must be non-negative",
                self.sensor_id
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return invalid(format!("{}: horizon must be positive", self.sensor_id));
        }
        if self.coverage.iter().any(|c| *c > 1) {
            return invalid(format!("{}: coverage flags must be 0 or 1", self.sensor_id));
        }
        Ok(())
    }

    pub fn coverage_count(&self) -> usize {
        self.coverage.iter().filter(|c| **c == 1).count()
    }
}

/// Individual terms of the short-horizon error budget, m.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorTerms {
    pub attitude: f64,
    pub heading: f64,
    pub velocity: f64,
    pub position: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl ErrorTerms {
    pub fn total(&self) -> f64 {
        self.attitude
            + self.heading
            + self.velocity
            + self.position
            + self.gyro_bias
            + self.accel_bias
    }
}

pub fn error_terms(sheet: &SensorSheet) -> Result<ErrorTerms> {
    sheet.validate()?;
    let t = sheet.horizon;
    let mut e = ErrorTerms {
        attitude: GRAVITY * sheet.attitude * t * t / 2.0,
        heading: sheet.heading * sheet.delta_v * t,
        velocity: sheet.velocity * t,
        position: sheet.position,
        ..Default::default()
    };
    // Bias terms rank IMUs against each other; aiding sensors ignore them.
    if sheet.kind == SensorKind::Imu {
        e.gyro_bias = GRAVITY * t.powi(3) * sheet.gyro_bias / 6.0;
        e.accel_bias = sheet.accel_bias * t * t / 2.0;
    }
    Ok(e)
}

/// Expected position error of the sensor over its horizon, m.
pub fn expected_error(sheet: &SensorSheet) -> Result<f64> {
    let total = error_terms(sheet)?.total();
    if total <= 0.0 {
        return invalid(format!(
            "{}: expected error is zero, credibility undefined",
            sheet.sensor_id
        ));
    }
    Ok(total)
}

/// `E = 1 / e_total`, 1/m.
pub fn expected_index(sheet: &SensorSheet) -> Result<f64> {
    Ok(1.0 / expected_error(sheet)?)
}

/// Realtime index from an innovation covariance: `min(1/√tr S, ρ_max)`.
pub fn realtime_index_from_dop(s: &DMatrix<f64>) -> Result<f64> {
    if !s.is_square() {
        return invalid("innovation covariance must be square");
    }
    let tr = s.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::NumericalDegeneracy(format!(
            "innovation covariance trace {tr} is not positive"
        )));
    }
    Ok((1.0 / tr.sqrt()).min(RHO_MAX))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibilityIndex {
    pub expected: f64,
    pub realtime: f64,
    pub combined: f64,
}

impl CredibilityIndex {
    pub fn new(expected: f64, realtime: f64) -> Result<Self> {
        if !(expected.is_finite() && expected >= 0.0) {
            return invalid("expected index must be non-negative");
        }
        if !(0.0..=RHO_MAX).contains(&realtime) {
            return invalid(format!("realtime index {realtime} outside [0, {RHO_MAX}]"));
        }
        Ok(CredibilityIndex {
            expected,
            realtime,
            combined: expected * realtime,
        })
    }
}

pub fn credibility(sheet: &SensorSheet, realtime: f64) -> Result<CredibilityIndex> {
    CredibilityIndex::new(expected_index(sheet)?, realtime)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveDirection {
    /// Full score at small x, zero at large x.
    Rise,
    /// Zero at small x, full score at large x.
    Fall,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessCurve {
    pub direction: CurveDirection,
    pub min_x: f64,
    pub max_x: f64,
    pub a: f64,
    pub b: f64,
}

impl DimensionlessCurve {
    pub fn new(direction: CurveDirection, min_x: f64, max_x: f64, a: f64, b: f64) -> Result<Self> {
        if !(min_x < max_x) || !min_x.is_finite() || !max_x.is_finite() {
            return invalid("curve requires min_x < max_x");
        }
        if !a.is_finite() || !b.is_finite() {
            return invalid("curve coefficients must be finite");
        }
        Ok(DimensionlessCurve {
            direction,
            min_x,
            max_x,
            a,
            b,
        })
    }

    /// Normalized coordinate in `[0, 1]`, or the saturation value outside it.
    fn coordinate(&self, x: f64) -> std::result::Result<f64, f64> {
        let span = self.max_x - self.min_x;
        match self.direction {
            CurveDirection::Rise if x <= self.min_x => Err(RHO_MAX),
            CurveDirection::Rise if x >= self.max_x => Err(0.0),
            CurveDirection::Rise => Ok((self.max_x - x) / span),
            CurveDirection::Fall if x <= self.min_x => Err(0.0),
            CurveDirection::Fall if x >= self.max_x => Err(RHO_MAX),
            CurveDirection::Fall => Ok((x - self.min_x) / span),
        }
    }

    fn shape(a: f64, b: f64, u: f64) -> f64 {
        a * u * (b * u).exp()
    }
}

pub fn score_curve(curve: &DimensionlessCurve, x: f64) -> f64 {
    match curve.coordinate(x) {
        Err(sat) => sat,
        Ok(u) => DimensionlessCurve::shape(curve.a, curve.b, u).clamp(0.0, RHO_MAX),
    }
}

const FIT_MAX_ITERATIONS: usize = 100;
const FIT_STEP_TOLERANCE: f64 = 1e-8;

/// Fits `(a, b)` to interior feature points `(x, score)` with a damped
/// Gauss-Newton (Levenberg-Marquardt) iteration started from the `b = 0`
/// least-squares solution.
pub fn fit_curve(
    direction: CurveDirection,
    min_x: f64,
    max_x: f64,
    points: &[(f64, f64)],
) -> Result<DimensionlessCurve> {
    let template = DimensionlessCurve::new(direction, min_x, max_x, 0.0, 0.0)?;
    let mut data = Vec::with_capacity(points.len());
    for &(x, s) in points {
        match template.coordinate(x) {
            Ok(u) if s > 0.0 && s < RHO_MAX => data.push((u, s)),
            _ => {
                return invalid(format!(
                    "feature point ({x}, {s}) is not interior to the curve"
                ))
            }
        }
    }
    if data.len() < 2 {
        return invalid("curve fitting needs at least two interior feature points");
    }

    let cost = |a: f64, b: f64| -> f64 {
        data.iter()
            .map(|&(u, s)| (DimensionlessCurve::shape(a, b, u) - s).powi(2))
            .sum()
    };

    let suu: f64 = data.iter().map(|(u, _)| u * u).sum();
    let sus: f64 = data.iter().map(|(u, s)| u * s).sum();
    let mut p = Vector2::new(sus / suu, 0.0);
    let mut current = cost(p[0], p[1]);
    let mut lambda = 1e-3;

    for _ in 0..FIT_MAX_ITERATIONS {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for &(u, s) in &data {
            let e = (p[1] * u).exp();
            let j = Vector2::new(u * e, p[0] * u * u * e);
            let r = p[0] * u * e - s;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        // Inner loop: raise damping until the cost does not increase.
        let mut step = Vector2::zeros();
        let mut accepted = false;
        for _ in 0..50 {
            let damped = jtj + Matrix2::from_diagonal(&jtj.diagonal()) * lambda;
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + delta;
            let c = cost(trial[0], trial[1]);
            if c.is_finite() && c <= current {
                step = delta;
                p = trial;
                current = c;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || step.norm() < FIT_STEP_TOLERANCE {
            // A rejected step at maximal damping means no descent direction
            // is left, which is a stationary point.
            return DimensionlessCurve::new(direction, min_x, max_x, p[0], p[1]);
        }
    }
    Err(Error::NonConvergentFit {
        iterations: FIT_MAX_ITERATIONS,
        residual: current,
    })
}
