//! Measurement update machinery for a single submodel.
//!
//! Everything here is dimension-agnostic (`DMatrix`/`DVector`) so the same
//! code drives both the 15-state navigation filter and small linear test
//! systems. GNSS models live in [`MeasurementModel`].
//!
//! The gain uses the full innovation covariance `S = H P Hᵀ + R`; the
//! covariance update is the Joseph form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ins::NavState;
use crate::manifold::{boxplus, skew, Vector15};

/// Largest condition number accepted for an innovation covariance.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Error mean and covariance of one filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub delta: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FilterState {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return invalid("covariance must be square");
        }
        let s = FilterState {
            delta: DVector::zeros(n),
            cov,
        };
        s.check()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    /// Symmetric within 1e-10‖P‖ and minimum eigenvalue above −1e-12.
    pub fn check(&self) -> Result<()> {
        let scale = self.cov.abs().max().max(1e-300);
        if (&self.cov - self.cov.transpose()).abs().max() > 1e-10 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let eig = symmetrize(&self.cov).symmetric_eigenvalues();
        if eig.min() < -1e-12 || eig.iter().any(|e| !e.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(())
    }
}

/// Residual, Jacobian and noise of a measurement linearized at the current
/// nominal state. The residual is `z − h(χ̂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedMeasurement {
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl LinearizedMeasurement {
    pub fn dim(&self) -> usize {
        self.residual.len()
    }

    /// Stacks several measurements into one joint measurement with
    /// block-diagonal noise.
    pub fn stack(parts: &[LinearizedMeasurement]) -> Result<LinearizedMeasurement> {
        let Some(first) = parts.first() else {
            return invalid("cannot stack zero measurements");
        };
        let n = first.jacobian.ncols();
        let m: usize = parts.iter().map(|p| p.dim()).sum();
        let mut residual = DVector::zeros(m);
        let mut jacobian = DMatrix::zeros(m, n);
        let mut noise = DMatrix::zeros(m, m);
        let mut row = 0;
        for p in parts {
            if p.jacobian.ncols() != n {
                return invalid("stacked measurements disagree on state dimension");
            }
            let d = p.dim();
            residual.rows_mut(row, d).copy_from(&p.residual);
            jacobian.view_mut((row, 0), (d, n)).copy_from(&p.jacobian);
            noise.view_mut((row, row), (d, d)).copy_from(&p.noise);
            row += d;
        }
        Ok(LinearizedMeasurement {
            residual,
            jacobian,
            noise,
        })
    }
}

#[derive(Clone, Debug)]
pub struct InnovationReport {
    pub innovation: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `𝒴ᵀ 𝒮⁻¹ 𝒴`, χ²-distributed with `dim` degrees of freedom under
    /// nominal conditions.
    pub statistic: f64,
    cholesky: Cholesky<f64, Dyn>,
}

impl InnovationReport {
    pub fn dim(&self) -> usize {
        self.innovation.len()
    }

    /// `ln det 𝒮`.
    pub fn log_det(&self) -> f64 {
        2.0 * self
            .cholesky
            .l()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.cholesky.solve(b)
    }
}

/// Builds the report for innovation `y` with covariance `s`.
pub fn innovation_report(y: DVector<f64>, s: DMatrix<f64>) -> Result<InnovationReport> {
    let s = symmetrize(&s);
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::DegenerateMeasurement {
            condition: f64::INFINITY,
        });
    }
    let condition = hi / lo;
    if condition > MAX_CONDITION {
        return Err(Error::DegenerateMeasurement { condition });
    }
    let cholesky = Cholesky::new(s.clone()).ok_or(Error::DegenerateMeasurement { condition })?;
    let statistic = y.dot(&cholesky.solve(&y)).max(0.0);
    Ok(InnovationReport {
        innovation: y,
        covariance: s,
        statistic,
        cholesky,
    })
}

/// `ΦPΦᵀ + GQGᵀ`, symmetrized.
pub fn covariance_predict(
    p: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    gqg: &DMatrix<f64>,
) -> DMatrix<f64> {
    symmetrize(&(phi * p * phi.transpose() + gqg))
}

/// Innovation of an already linearized measurement against `filter`.
pub fn innovation_of(filter: &FilterState, m: &LinearizedMeasurement) -> Result<InnovationReport> {
    if m.jacobian.ncols() != filter.dim() || m.jacobian.nrows() != m.dim() {
        return invalid("measurement Jacobian shape does not match");
    }
    let y = &m.residual - &m.jacobian * &filter.delta;
    let s = &m.jacobian * &filter.cov * m.jacobian.transpose() + &m.noise;
    innovation_report(y, s)
}

/// Kalman update with a Joseph-form covariance.
pub fn update(
    filter: &FilterState,
    report: &InnovationReport,
    m: &LinearizedMeasurement,
) -> Result<FilterState> {
    let h = &m.jacobian;
    let n = filter.dim();
    if h.ncols() != n || h.nrows() != report.dim() {
        return invalid("measurement Jacobian shape does not match");
    }
    // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ
    let k = report.solve(&(h * &filter.cov)).transpose();
    let delta = &filter.delta + &k * &report.innovation;
    let ikh = DMatrix::identity(n, n) - &k * h;
    let cov = &ikh * &filter.cov * ikh.transpose() + &k * &m.noise * k.transpose();
    Ok(FilterState {
        delta,
        cov: symmetrize(&cov),
    })
}

/// Applies the error mean to the nominal state and resets it.
pub fn feedback(state: &NavState, filter: &FilterState) -> Result<(NavState, FilterState)> {
    if filter.dim() != 15 {
        return invalid("navigation feedback needs a 15-dimensional error state");
    }
    let d = Vector15::from_column_slice(filter.delta.as_slice());
    let rot = d.fixed_rows::<3>(0).norm();
    if rot >= std::f64::consts::PI {
        return invalid(format!("rotation correction {rot} rad is not below pi"));
    }
    Ok((
        boxplus(state, &d),
        FilterState {
            delta: DVector::zeros(15),
            cov: filter.cov.clone(),
        },
    ))
}

/// Which navigation-frame quantities a GNSS receiver reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Position,
    Velocity,
    PositionVelocity,
}

/// How the 15-dimensional error maps onto the true state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorConvention {
    /// `χ = exp(δ) · χ̂` on SE₂(3).
    RightInvariant,
    /// Additive velocity/position, global attitude error `R = Exp(δθ) R̂`.
    Standard,
}

/// GNSS measurement model: `z = [p; v]` in the navigation frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementModel {
    pub sensor_id: String,
    pub observable: Observable,
    pub position_sigma: f64,
    pub velocity_sigma: f64,
}

impl MeasurementModel {
    pub fn new(
        sensor_id: impl Into<String>,
        observable: Observable,
        position_sigma: f64,
        velocity_sigma: f64,
    ) -> Result<Self> {
        let m = MeasurementModel {
            sensor_id: sensor_id.into(),
            observable,
            position_sigma,
            velocity_sigma,
        };
        let used: &[f64] = match observable {
            Observable::Position => &[position_sigma],
            Observable::Velocity => &[velocity_sigma],
            Observable::PositionVelocity => &[position_sigma, velocity_sigma],
        };
        if used.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return invalid(format!(
                "measurement noise for {} must be positive",
                m.sensor_id
            ));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        match self.observable {
            Observable::PositionVelocity => 6,
            _ => 3,
        }
    }

    fn blocks(&self) -> Vec<(bool, f64)> {
        // (is_position, sigma)
        match self.observable {
            Observable::Position => vec![(true, self.position_sigma)],
            Observable::Velocity => vec![(false, self.velocity_sigma)],
            Observable::PositionVelocity => {
                vec![(true, self.position_sigma), (false, self.velocity_sigma)]
            }
        }
    }

    pub fn noise(&self) -> DMatrix<f64> {
        let diag: Vec<f64> = self
            .blocks()
            .into_iter()
            .flat_map(|(_, s)| [s * s; 3])
            .collect();
        DMatrix::from_diagonal(&DVector::from_vec(diag))
    }

    /// Predicted measurement `h(χ̂)`.
    pub fn predict(&self, state: &NavState) -> DVector<f64> {
        let v: Vec<f64> = self
            .blocks()
            .into_iter()
            .flat_map(|(is_pos, _)| {
                let q = if is_pos {
                    state.pose.position
                } else {
                    state.pose.velocity
                };
                [q.x, q.y, q.z]
            })
            .collect();
        DVector::from_vec(v)
    }

    /// Jacobian of `h(χ)` with respect to the error state.
    ///
    /// Right-invariant: `p = Exp(δθ) p̂ + J δp ≈ p̂ − p̂^ δθ + δp`, so the
    /// position rows are `[−p̂^, 0, I, 0, 0]`; velocity rows are
    /// `[−v̂^, I, 0, 0, 0]`.
    pub fn jacobian(&self, state: &NavState, convention: ErrorConvention) -> DMatrix<f64> {
        let blocks = self.blocks();
        let mut h = DMatrix::zeros(3 * blocks.len(), 15);
        for (b, (is_pos, _)) in blocks.into_iter().enumerate() {
            let row = 3 * b;
            let (col, lever): (usize, &Vector3<f64>) = if is_pos {
                (6, &state.pose.position)
            } else {
                (3, &state.pose.velocity)
            };
            h.view_mut((row, col), (3, 3))
                .copy_from(&Matrix3::<f64>::identity());
            if convention == ErrorConvention::RightInvariant {
                h.view_mut((row, 0), (3, 3)).copy_from(&(-skew(lever)));
            }
        }
        h
    }

    pub fn linearize(
        &self,
        state: &NavState,
        z: &DVector<f64>,
        convention: ErrorConvention,
    ) -> Result<LinearizedMeasurement> {
        if z.len() != self.dim() {
            return invalid(format!(
                "measurement for {} has dimension {}, expected {}",
                self.sensor_id,
                z.len(),
                self.dim()
            ));
        }
        Ok(LinearizedMeasurement {
            residual: z - self.predict(state),
            jacobian: self.jacobian(state, convention),
            noise: self.noise(),
        })
    }
}

/// Innovation for a GNSS measurement `z` against the nominal `state`.
pub fn innovation(
    state: &NavState,
    filter: &FilterState,
    model: &MeasurementModel,
    z: &DVector<f64>,
) -> Result<InnovationReport> {
    let lin = model.linearize(state, z, ErrorConvention::RightInvariant)?;
    innovation_of(filter, &lin)
}
