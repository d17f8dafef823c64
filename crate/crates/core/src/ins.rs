//! Strapdown mechanization and right-invariant error propagation.
//!
//! Flat-earth NED navigation frame with constant gravity; no earth rate or
//! transport rate terms. Biases are expressed in the body frame.
//!
//! One step of the mechanization integrates the sample over `[t, t + dt]`:
//!
//! ```text
//! R⁺ = R · Exp((ω − b_g) dt)
//! v⁺ = v + (R (f − b_a) + g) dt
//! p⁺ = p + (v + v⁺) dt / 2
//! ```
//!
//! [`transition_matrices`] returns the exact first-order error Jacobian of
//! this discrete map, which keeps it consistent with [`propagate`] to
//! second order in `dt` regardless of how far the state is from the origin.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::manifold::{skew, so3_exp, so3_right_jacobian, GroupElement, Rotation, Vector15};

pub type Matrix15 = SMatrix<f64, 15, 15>;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

/// Largest accepted integration step, s.
pub const MAX_DT: f64 = 0.1;

pub fn gravity_ned() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, GRAVITY)
}

/// One inertial sample. `gyro` in rad/s and `accel` (specific force) in
/// m/s², both in the body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Full navigation state: extended pose plus body-frame IMU biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState {
    pub pose: GroupElement,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
}

impl Default for NavState {
    fn default() -> Self {
        NavState {
            pose: GroupElement::identity(),
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        }
    }
}

impl NavState {
    pub fn new(rotation: Rotation, velocity: Vector3<f64>, position: Vector3<f64>) -> Self {
        NavState {
            pose: GroupElement::new(rotation, velocity, position),
            ..NavState::default()
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.pose.rotation
    }

    pub fn velocity(&self) -> &Vector3<f64> {
        &self.pose.velocity
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.pose.position
    }

    pub fn is_finite(&self) -> bool {
        self.pose.rotation.matrix().iter().all(|x| x.is_finite())
            && self.pose.velocity.iter().all(|x| x.is_finite())
            && self.pose.position.iter().all(|x| x.is_finite())
            && self.gyro_bias.iter().all(|x| x.is_finite())
            && self.accel_bias.iter().all(|x| x.is_finite())
    }
}

/// Process noise densities and initial error standard deviations.
///
/// White-noise densities are continuous-time: the discrete covariance added
/// per step is `σ² · dt`. Bias terms are random walks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Accelerometer white noise, m/s²/√Hz.
    pub sigma_accel: f64,
    /// Gyro white noise, rad/s/√Hz.
    pub sigma_gyro: f64,
    /// Accelerometer bias random walk, m/s²/√s.
    pub sigma_accel_bias: f64,
    /// Gyro bias random walk, rad/s/√s.
    pub sigma_gyro_bias: f64,
    /// Initial attitude error (roll, pitch, yaw), deg.
    pub init_attitude_deg: [f64; 3],
    pub init_velocity: f64,
    pub init_position: f64,
    pub init_gyro_bias: f64,
    pub init_accel_bias: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_accel: 1e-3,
            sigma_gyro: 1e-4,
            sigma_accel_bias: 1e-4,
            sigma_gyro_bias: 2e-5,
            init_attitude_deg: [1.0, 1.0, 5.0],
            init_velocity: 0.1,
            init_position: 0.2,
            init_gyro_bias: 4.8478e-5,
            init_accel_bias: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_accel,
            self.sigma_gyro,
            self.sigma_accel_bias,
            self.sigma_gyro_bias,
            self.init_attitude_deg[0],
            self.init_attitude_deg[1],
            self.init_attitude_deg[2],
            self.init_velocity,
            self.init_position,
            self.init_gyro_bias,
            self.init_accel_bias,
        ];
        if all.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return invalid("all noise standard deviations must be positive and finite");
        }
        Ok(())
    }

    /// Initial error standard deviations in error-state order.
    pub fn initial_sigmas(&self) -> Vector15 {
        let mut s = Vector15::zeros();
        for i in 0..3 {
            s[i] = self.init_attitude_deg[i].to_radians();
            s[3 + i] = self.init_velocity;
            s[6 + i] = self.init_position;
            s[9 + i] = self.init_gyro_bias;
            s[12 + i] = self.init_accel_bias;
        }
        s
    }

    pub fn initial_covariance(&self) -> Matrix15 {
        Matrix15::from_diagonal(&self.initial_sigmas().map(|s| s * s))
    }
}

fn check_step(imu: &ImuSample, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return invalid(format!("integration step {dt} outside (0, {MAX_DT}]"));
    }
    if !(imu
        .gyro
        .iter()
        .chain(imu.accel.iter())
        .all(|x| x.is_finite()))
    {
        return invalid("non-finite IMU sample");
    }
    Ok(())
}

pub fn propagate(state: &NavState, imu: &ImuSample, dt: f64) -> Result<NavState> {
    check_step(imu, dt)?;
    let omega = imu.gyro - state.gyro_bias;
    let f = imu.accel - state.accel_bias;
    let r0 = state.pose.rotation;
    let v0 = state.pose.velocity;
    let v1 = v0 + (r0.rotate(&f) + gravity_ned()) * dt;
    let p1 = state.pose.position + (v0 + v1) * (0.5 * dt);
    Ok(NavState {
        pose: GroupElement {
            rotation: r0.compose(&so3_exp(&(omega * dt))),
            velocity: v1,
            position: p1,
        },
        ..*state
    })
}

fn put(m: &mut Matrix15, row: usize, col: usize, block: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(block);
}

/// Error transition `Φ` and discrete process noise `G Q Gᵀ` for one step of
/// [`propagate`] starting from `state`.
///
/// Error layout `(δθ, δv, δp, δb_g, δb_a)`; noise layout
/// `(n_g, n_a, n_bg, n_ba)`.
pub fn transition_matrices(
    state: &NavState,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseConfig,
) -> Result<(Matrix15, Matrix15)> {
    let next = propagate(state, imu, dt)?;
    let omega = imu.gyro - state.gyro_bias;
    let r0 = *state.pose.rotation.matrix();
    let r1 = *next.pose.rotation.matrix();
    let r1_jr = r1 * so3_right_jacobian(&(omega * dt));
    let g_x = skew(&gravity_ned());
    let i3 = Matrix3::identity();

    let mut phi = Matrix15::identity();
    put(&mut phi, 0, 9, &(-r1_jr * dt));
    put(&mut phi, 3, 0, &(g_x * dt));
    put(&mut phi, 3, 9, &(-skew(&next.pose.velocity) * r1_jr * dt));
    put(&mut phi, 3, 12, &(-r0 * dt));
    put(&mut phi, 6, 0, &(g_x * (0.5 * dt * dt)));
    put(&mut phi, 6, 3, &(i3 * dt));
    put(&mut phi, 6, 9, &(-skew(&next.pose.position) * r1_jr * dt));
    put(&mut phi, 6, 12, &(-r0 * (0.5 * dt * dt)));

    let mut g = SMatrix::<f64, 15, 12>::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r1_jr));
    g.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-skew(&next.pose.velocity) * r1_jr));
    g.fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&(-skew(&next.pose.position) * r1_jr));
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-r0));
    g.fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(-r0 * (0.5 * dt)));
    g.fixed_view_mut::<3, 3>(9, 6).copy_from(&i3);
    g.fixed_view_mut::<3, 3>(12, 9).copy_from(&i3);

    let q = noise_diagonal(noise, dt);
    let gqg = g * SMatrix::<f64, 12, 12>::from_diagonal(&q) * g.transpose();
    Ok((phi, symmetrize15(&gqg)))
}

pub(crate) fn noise_diagonal(noise: &NoiseConfig, dt: f64) -> SVector<f64, 12> {
    let mut q = SVector::<f64, 12>::zeros();
    for i in 0..3 {
        q[i] = noise.sigma_gyro.powi(2) * dt;
        q[3 + i] = noise.sigma_accel.powi(2) * dt;
        q[6 + i] = noise.sigma_gyro_bias.powi(2) * dt;
        q[9 + i] = noise.sigma_accel_bias.powi(2) * dt;
    }
    q
}

pub(crate) fn symmetrize15(m: &Matrix15) -> Matrix15 {
    (m + m.transpose()) * 0.5
}

/// Propagates across a slice of samples, returning the final state together
/// with the accumulated transition and process noise of the whole slice.
///
/// Sample `k` is integrated over `[t_k, t_{k+1})`; the last sample uses
/// `end_time` as its upper bound.
pub fn propagate_slice(
    state: &NavState,
    samples: &[ImuSample],
    end_time: f64,
    noise: &NoiseConfig,
) -> Result<(NavState, Matrix15, Matrix15)> {
    propagate_slice_with(state, samples, end_time, noise, transition_matrices)
}

pub(crate) type TransitionFn =
    fn(&NavState, &ImuSample, f64, &NoiseConfig) -> Result<(Matrix15, Matrix15)>;

pub(crate) fn propagate_slice_with(
    state: &NavState,
    samples: &[ImuSample],
    end_time: f64,
    noise: &NoiseConfig,
    transition: TransitionFn,
) -> Result<(NavState, Matrix15, Matrix15)> {
    let mut x = *state;
    let mut phi = Matrix15::identity();
    let mut q = Matrix15::zeros();
    for (k, s) in samples.iter().enumerate() {
        let t_next = samples.get(k + 1).map_or(end_time, |n| n.timestamp);
        let dt = t_next - s.timestamp;
        let (phi_k, q_k) = transition(&x, s, dt, noise)?;
        x = propagate(&x, s, dt)?;
        phi = phi_k * phi;
        q = symmetrize15(&(phi_k * q * phi_k.transpose() + q_k));
    }
    Ok((x, phi, q))
}
