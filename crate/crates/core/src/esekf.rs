//! Conventional error-state EKF used as a comparison baseline.
//!
//! Attitude error is global (`R = Exp(δθ) R̂`); velocity, position and
//! biases are additive. The nominal mechanization is shared with
//! [`crate::ins`].

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{invalid, Result};
use crate::ins::{
    noise_diagonal, propagate, propagate_slice_with, symmetrize15, ImuSample, Matrix15, NavState,
    NoiseConfig,
};
use crate::manifold::{skew, so3_exp, so3_right_jacobian, GroupElement, Vector15};

fn put(m: &mut Matrix15, row: usize, col: usize, block: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(block);
}

/// Error transition and process noise for one step under the additive
/// error convention.
pub fn transition_matrices(
    state: &NavState,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseConfig,
) -> Result<(Matrix15, Matrix15)> {
    let next = propagate(state, imu, dt)?;
    let omega = imu.gyro - state.gyro_bias;
    let r0 = *state.pose.rotation.matrix();
    let r1_jr = next.pose.rotation.matrix() * so3_right_jacobian(&(omega * dt));
    let fa = skew(&(r0 * (imu.accel - state.accel_bias)));
    let i3 = Matrix3::identity();

    let mut phi = Matrix15::identity();
    put(&mut phi, 0, 9, &(-r1_jr * dt));
    put(&mut phi, 3, 0, &(-fa * dt));
    put(&mut phi, 3, 12, &(-r0 * dt));
    put(&mut phi, 6, 0, &(-fa * (0.5 * dt * dt)));
    put(&mut phi, 6, 3, &(i3 * dt));
    put(&mut phi, 6, 12, &(-r0 * (0.5 * dt * dt)));

    let mut g = SMatrix::<f64, 15, 12>::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r1_jr));
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-r0));
    g.fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(-r0 * (0.5 * dt)));
    g.fixed_view_mut::<3, 3>(9, 6).copy_from(&i3);
    g.fixed_view_mut::<3, 3>(12, 9).copy_from(&i3);

    let q = noise_diagonal(noise, dt);
    let gqg = g * SMatrix::<f64, 12, 12>::from_diagonal(&q) * g.transpose();
    Ok((phi, symmetrize15(&gqg)))
}

pub fn propagate_slice(
    state: &NavState,
    samples: &[ImuSample],
    end_time: f64,
    noise: &NoiseConfig,
) -> Result<(NavState, Matrix15, Matrix15)> {
    propagate_slice_with(state, samples, end_time, noise, transition_matrices)
}

/// Applies an additive-convention error to the nominal state.
pub fn inject(state: &NavState, delta: &Vector15) -> Result<NavState> {
    let dtheta = Vector3::new(delta[0], delta[1], delta[2]);
    if dtheta.norm() >= std::f64::consts::PI {
        return invalid("attitude correction must be below pi");
    }
    Ok(NavState {
        pose: GroupElement {
            rotation: so3_exp(&dtheta).compose(&state.pose.rotation),
            velocity: state.pose.velocity + delta.fixed_rows::<3>(3),
            position: state.pose.position + delta.fixed_rows::<3>(6),
        },
        gyro_bias: state.gyro_bias + delta.fixed_rows::<3>(9),
        accel_bias: state.accel_bias + delta.fixed_rows::<3>(12),
    })
}

/// Additive-convention difference `a ⊖ b`.
pub fn difference(a: &NavState, b: &NavState) -> Result<Vector15> {
    let dr = a.pose.rotation.compose(&b.pose.rotation.inverse());
    let dtheta = crate::manifold::so3_log(&dr)?;
    let mut d = Vector15::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&dtheta);
    d.fixed_rows_mut::<3>(3)
        .copy_from(&(a.pose.velocity - b.pose.velocity));
    d.fixed_rows_mut::<3>(6)
        .copy_from(&(a.pose.position - b.pose.position));
    d.fixed_rows_mut::<3>(9)
        .copy_from(&(a.gyro_bias - b.gyro_bias));
    d.fixed_rows_mut::<3>(12)
        .copy_from(&(a.accel_bias - b.accel_bias));
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Rotation;
    use nalgebra::DMatrix;

    #[test]
    fn inject_difference_round_trip() {
        let x = NavState::new(
            Rotation::from_euler(0.2, -0.1, 1.3),
            Vector3::new(45.0, -12.0, 1.5),
            Vector3::new(900.0, -1200.0, -150.0),
        );
        let d = Vector15::from_fn(|i, _| 0.01 * (i as f64 - 7.0));
        let y = inject(&x, &d).unwrap();
        assert!((difference(&y, &x).unwrap() - d).abs().max() < 1e-12);
    }

    #[test]
    fn transition_matches_finite_difference() {
        let x = NavState {
            pose: GroupElement::new(
                Rotation::from_euler(0.2, -0.1, 1.3),
                Vector3::new(45.0, -12.0, 1.5),
                Vector3::new(900.0, -1200.0, -150.0),
            ),
            gyro_bias: Vector3::new(1e-4, -2e-4, 5e-5),
            accel_bias: Vector3::new(0.02, -0.03, 0.01),
        };
        let imu = ImuSample {
            timestamp: 0.0,
            gyro: Vector3::new(0.5, -0.3, 0.8),
            accel: Vector3::new(1.5, 2.0, -10.5),
        };
        let dt = 0.002;
        let (phi, _) = transition_matrices(&x, &imu, dt, &NoiseConfig::default()).unwrap();
        let base = propagate(&x, &imu, dt).unwrap();
        let eps = 1e-6;
        let mut num = DMatrix::zeros(15, 15);
        for j in 0..15 {
            let mut e = Vector15::zeros();
            e[j] = eps;
            let yp = propagate(&inject(&x, &e).unwrap(), &imu, dt).unwrap();
            let ym = propagate(&inject(&x, &(-e)).unwrap(), &imu, dt).unwrap();
            let col =
                (difference(&yp, &base).unwrap() - difference(&ym, &base).unwrap()) / (2.0 * eps);
            num.column_mut(j).copy_from(&col);
        }
        let err = (DMatrix::from_column_slice(15, 15, phi.as_slice()) - num)
            .abs()
            .max();
        assert!(err <= 1e-4, "max abs error {err:e}");
    }
}
