//! SO(3) and SE₂(3) toolbox.
//!
//! Tangent vectors of SE₂(3) are ordered `(rotation, velocity, position)`.
//! The retraction is applied on the left, `χ = exp(δ) · χ̂`, which is the
//! convention of the right-invariant error `η = χ · χ̂⁻¹` used by every
//! filter in this crate.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix5, SVector, Vector3};

use crate::error::{Error, Result};
use crate::ins::NavState;

pub type Vector9 = SVector<f64, 9>;
pub type Vector15 = SVector<f64, 15>;

/// Below this angle the closed forms are replaced by their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Jacobian coefficients lose digits to cancellation earlier than exp/log do.
const JACOBIAN_SERIES_ANGLE: f64 = 1e-4;

/// Rotations this close to π have no unique logarithm.
pub const LOG_PI_MARGIN: f64 = 1e-6;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Body-to-navigation rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let r = Rotation(m);
        if r.orthonormality_error() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "matrix is not a rotation (error {:e})",
                r.orthonormality_error()
            )));
        }
        Ok(r)
    }

    /// Z-Y-X (yaw, pitch, roll) Euler angles in radians.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        Rotation(Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        ))
    }

    /// Returns `[roll, pitch, yaw]` in radians.
    pub fn to_euler(&self) -> Vector3<f64> {
        let m = &self.0;
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let pitch = -m[(2, 0)].clamp(-1.0, 1.0).asin();
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        Vector3::new(roll, pitch, yaw)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// max(‖RᵀR − I‖∞, |det R − 1|).
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Matrix3::identity())
            .abs()
            .max();
        e.max((self.0.determinant() - 1.0).abs())
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        let w = vee(&(self.0 - self.0.transpose()));
        let s = 0.5 * w.norm();
        let c = 0.5 * (self.0.trace() - 1.0);
        s.atan2(c)
    }
}

/// Rodrigues map.
pub fn so3_exp(phi: &Vector3<f64>) -> Rotation {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Rotation(Matrix3::identity() + k + 0.5 * k * k);
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Rotation(Matrix3::identity() + a * k + b * k * k)
}

/// Principal logarithm. Fails for angles within [`LOG_PI_MARGIN`] of π.
pub fn so3_log(r: &Rotation) -> Result<Vector3<f64>> {
    let m = r.matrix();
    let w = vee(&(m - m.transpose()));
    let s = 0.5 * w.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if theta > std::f64::consts::PI - LOG_PI_MARGIN {
        return Err(Error::AmbiguousLogarithm { angle: theta });
    }
    if theta < SMALL_ANGLE {
        return Ok(0.5 * w);
    }
    Ok(w * (0.5 * theta / s))
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let (a, b) = if theta < JACOBIAN_SERIES_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Matrix3::identity() + a * k + b * k * k
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let c = if theta < JACOBIAN_SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

/// Right Jacobian of SO(3), `Jr(φ) = Jl(−φ)`.
pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian(&(-phi))
}

/// Element of SE₂(3): attitude, velocity and position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupElement {
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl GroupElement {
    pub fn identity() -> Self {
        GroupElement {
            rotation: Rotation::identity(),
            velocity: Vector3::zeros(),
            position: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, velocity: Vector3<f64>, position: Vector3<f64>) -> Self {
        GroupElement {
            rotation,
            velocity,
            position,
        }
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        let r = self.rotation.matrix();
        GroupElement {
            rotation: self.rotation.compose(&other.rotation),
            velocity: r * other.velocity + self.velocity,
            position: r * other.position + self.position,
        }
    }

    pub fn inverse(&self) -> GroupElement {
        let rt = self.rotation.inverse();
        GroupElement {
            rotation: rt,
            velocity: -(rt.matrix() * self.velocity),
            position: -(rt.matrix() * self.position),
        }
    }

    pub fn to_matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.velocity);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.position);
        m
    }

    pub fn from_matrix(m: &Matrix5<f64>) -> Result<Self> {
        let rotation = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(GroupElement {
            rotation,
            velocity: m.fixed_view::<3, 1>(0, 3).into_owned(),
            position: m.fixed_view::<3, 1>(0, 4).into_owned(),
        })
    }
}

/// Tangent vector of SE₂(3), ordered `(rotation, velocity, position)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector(pub Vector9);

impl TangentVector {
    pub fn zeros() -> Self {
        TangentVector(Vector9::zeros())
    }

    pub fn from_parts(rot: &Vector3<f64>, vel: &Vector3<f64>, pos: &Vector3<f64>) -> Self {
        let mut v = Vector9::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(rot);
        v.fixed_rows_mut::<3>(3).copy_from(vel);
        v.fixed_rows_mut::<3>(6).copy_from(pos);
        TangentVector(v)
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn position(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(6).into_owned()
    }
}

pub fn se23_exp(xi: &TangentVector) -> GroupElement {
    let phi = xi.rotation();
    let jl = so3_left_jacobian(&phi);
    GroupElement {
        rotation: so3_exp(&phi),
        velocity: jl * xi.velocity(),
        position: jl * xi.position(),
    }
}

pub fn se23_log(g: &GroupElement) -> Result<TangentVector> {
    let phi = so3_log(&g.rotation)?;
    let jl_inv = so3_left_jacobian_inv(&phi);
    Ok(TangentVector::from_parts(
        &phi,
        &(jl_inv * g.velocity),
        &(jl_inv * g.position),
    ))
}

fn split_delta(delta: &Vector15) -> (TangentVector, Vector3<f64>, Vector3<f64>) {
    let xi = TangentVector(delta.fixed_rows::<9>(0).into_owned());
    (
        xi,
        delta.fixed_rows::<3>(9).into_owned(),
        delta.fixed_rows::<3>(12).into_owned(),
    )
}

/// `χ ⊞ δ`: pose becomes `exp(δ[0..9]) · pose`, biases add linearly.
///
/// The error layout is `(δθ, δv, δp, δb_g, δb_a)`.
pub fn boxplus(state: &NavState, delta: &Vector15) -> NavState {
    if delta.iter().all(|d| *d == 0.0) {
        return *state;
    }
    let (xi, dbg, dba) = split_delta(delta);
    NavState {
        pose: se23_exp(&xi).compose(&state.pose),
        gyro_bias: state.gyro_bias + dbg,
        accel_bias: state.accel_bias + dba,
    }
}

/// `a ⊟ b`: the error `δ` with `a = b ⊞ δ`.
pub fn boxminus(a: &NavState, b: &NavState) -> Result<Vector15> {
    let xi = se23_log(&a.pose.compose(&b.pose.inverse()))?;
    let mut out = Vector15::zeros();
    out.fixed_rows_mut::<9>(0).copy_from(&xi.0);
    out.fixed_rows_mut::<3>(9)
        .copy_from(&(a.gyro_bias - b.gyro_bias));
    out.fixed_rows_mut::<3>(12)
        .copy_from(&(a.accel_bias - b.accel_bias));
    Ok(out)
}

/// Central-difference Jacobian of `f` with respect to left perturbations
/// `exp(ξ) · g`.
pub fn numeric_jacobian<F>(f: F, g: &GroupElement, eps: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&GroupElement) -> DVector<f64>,
{
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step {eps} outside [1e-8, 1e-3]"
        )));
    }
    let f0 = f(g);
    let mut jac = DMatrix::zeros(f0.len(), 9);
    for j in 0..9 {
        let mut xi = Vector9::zeros();
        xi[j] = eps;
        let plus = f(&se23_exp(&TangentVector(xi)).compose(g));
        let minus = f(&se23_exp(&TangentVector(-xi)).compose(g));
        jac.set_column(j, &((plus - minus) / (2.0 * eps)));
    }
    Ok(jac)
}

/// Same as [`numeric_jacobian`] over the full 15-dimensional navigation
/// state, perturbed through [`boxplus`].
pub fn numeric_jacobian_state<F>(f: F, x: &NavState, eps: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&NavState) -> DVector<f64>,
{
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step {eps} outside [1e-8, 1e-3]"
        )));
    }
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), 15);
    for j in 0..15 {
        let mut d = Vector15::zeros();
        d[j] = eps;
        let plus = f(&boxplus(x, &d));
        let minus = f(&boxplus(x, &(-d)));
        jac.set_column(j, &((plus - minus) / (2.0 * eps)));
    }
    Ok(jac)
}
