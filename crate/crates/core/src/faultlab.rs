//! Synthetic flight scenarios: analytic trajectories, inverse-kinematics
//! IMU samples, noisy GNSS fixes and fault injection.
//!
//! Randomness is counter-based. Every draw is keyed by
//! `(seed, sensor id, epoch, purpose)`, so a sample never depends on how
//! many other samples were generated before it.

use std::io::Write;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::credibility::SensorSheet;
use crate::error::{invalid, Result};
use crate::ins::{gravity_ned, ImuSample, NavState, NoiseConfig, GRAVITY};
use crate::manifold::{so3_log, GroupElement, Rotation};

/// Tightest bank angle a plan may demand.
pub const MAX_BANK_DEG: f64 = 60.0;

/// Largest accepted IMU step, s.
pub const MAX_IMU_DT: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Purpose {
    ImuNoise = 1,
    ImuBias = 2,
    GnssNoise = 3,
    HeavyTail = 4,
    Init = 5,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Generator for one `(seed, sensor, purpose)` key at one epoch.
fn keyed_rng(seed: u64, sensor: &str, epoch: u64, purpose: Purpose) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed) ^ fnv1a(sensor) ^ splitmix(purpose as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(epoch);
    rng
}

fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Draws a standard-normal 15-vector for initial-condition sampling.
pub fn initial_draw(seed: u64, key: &str) -> [f64; 15] {
    let mut rng = keyed_rng(seed, key, 0, Purpose::Init);
    std::array::from_fn(|_| StandardNormal.sample(&mut rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    /// Constant heading and altitude.
    Straight { duration: f64 },
    /// Coordinated turn; positive angles turn right (clockwise from above).
    Turn { angle_deg: f64, radius: f64 },
    /// Constant-heading altitude change at `rate` m/s (positive up),
    /// including the entry and exit ramps.
    Climb { duration: f64, rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryPlan {
    /// Horizontal ground speed, m/s.
    pub speed: f64,
    pub initial_heading_deg: f64,
    /// Duration of the linear turn-rate and climb-rate ramps, s.
    pub ramp: f64,
    pub duration: f64,
    /// Repeat the segment list until `duration` is covered.
    pub repeat: bool,
    pub segments: Vec<Segment>,
}

impl Default for TrajectoryPlan {
    fn default() -> Self {
        TrajectoryPlan::racetrack(600.0)
    }
}

impl TrajectoryPlan {
    /// Closed racetrack at 50 m/s with 400 m turns and a climb and descent
    /// on the straights. One lap takes about 98 s.
    pub fn racetrack(duration: f64) -> Self {
        let turn = Segment::Turn {
            angle_deg: 180.0,
            radius: 400.0,
        };
        TrajectoryPlan {
            speed: 50.0,
            initial_heading_deg: 0.0,
            ramp: 4.0,
            duration,
            repeat: true,
            segments: vec![
                Segment::Straight { duration: 5.0 },
                Segment::Climb {
                    duration: 10.0,
                    rate: 1.0,
                },
                Segment::Straight { duration: 5.0 },
                turn.clone(),
                Segment::Straight { duration: 5.0 },
                Segment::Climb {
                    duration: 10.0,
                    rate: -1.0,
                },
                Segment::Straight { duration: 5.0 },
                turn,
            ],
        }
    }

    pub fn hover(duration: f64) -> Self {
        TrajectoryPlan {
            speed: 0.0,
            initial_heading_deg: 0.0,
            ramp: 2.0,
            duration,
            repeat: false,
            segments: vec![Segment::Straight { duration }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return invalid("plan speed must be non-negative");
        }
        if !(self.ramp.is_finite() && self.ramp > 0.0) {
            return invalid("ramp duration must be positive");
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return invalid("plan duration must be positive");
        }
        if self.segments.is_empty() {
            return invalid("plan has no segments");
        }
        let min_radius = self.speed.powi(2) / (GRAVITY * MAX_BANK_DEG.to_radians().tan());
        for s in &self.segments {
            match *s {
                Segment::Straight { duration } if !(duration > 0.0) => {
                    return invalid("straight segment needs a positive duration")
                }
                Segment::Turn { angle_deg, radius } => {
                    if !(angle_deg.is_finite() && angle_deg != 0.0) {
                        return invalid("turn angle must be non-zero");
                    }
                    if self.speed == 0.0 {
                        return invalid("turns need a positive speed");
                    }
                    if !(radius >= min_radius) {
                        return invalid(format!(
                            "turn radius {radius} m is below the {min_radius:.1} m limit at {} m/s",
                            self.speed
                        ));
                    }
                }
                Segment::Climb { duration, rate }
                    if !(duration >= 2.0 * self.ramp) || !rate.is_finite() =>
                {
                    return invalid("climb must last at least two ramps");
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Piecewise-linear function of time, zero outside its knots.
#[derive(Clone, Debug, Default)]
struct Profile {
    knots: Vec<(f64, f64)>,
    /// Integral from the first knot up to each knot.
    area: Vec<f64>,
}

impl Profile {
    fn push_trapezoid(&mut self, t0: f64, t1: f64, ramp: f64, value: f64) {
        self.knots
            .extend([(t0, 0.0), (t0 + ramp, value), (t1 - ramp, value), (t1, 0.0)]);
    }

    fn finish(&mut self) {
        let mut acc = 0.0;
        self.area = Vec::with_capacity(self.knots.len());
        for (i, k) in self.knots.iter().enumerate() {
            if i > 0 {
                let p = self.knots[i - 1];
                acc += 0.5 * (p.1 + k.1) * (k.0 - p.0);
            }
            self.area.push(acc);
        }
    }

    /// Index of the last knot at or before `t`.
    fn locate(&self, t: f64) -> Option<usize> {
        match self.knots.first() {
            Some(k) if t >= k.0 => Some(self.knots.partition_point(|k| k.0 <= t) - 1),
            _ => None,
        }
    }

    fn value(&self, t: f64) -> f64 {
        let Some(i) = self.locate(t) else { return 0.0 };
        let Some(&(t1, v1)) = self.knots.get(i + 1) else {
            return 0.0;
        };
        let (t0, v0) = self.knots[i];
        if t1 <= t0 {
            return v1;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    fn integral(&self, t: f64) -> f64 {
        let Some(i) = self.locate(t) else { return 0.0 };
        let (t0, v0) = self.knots[i];
        let base = self.area[i];
        match self.knots.get(i + 1) {
            None => base,
            Some(_) => base + 0.5 * (v0 + self.value(t)) * (t - t0),
        }
    }
}

/// Continuous-time reference motion built from a plan.
#[derive(Clone, Debug)]
pub struct FlightPath {
    speed: f64,
    heading0: f64,
    turn_rate: Profile,
    down_rate: Profile,
}

impl FlightPath {
    pub fn new(plan: &TrajectoryPlan) -> Result<Self> {
        plan.validate()?;
        let mut turn_rate = Profile::default();
        let mut down_rate = Profile::default();
        let mut t = 0.0;
        'outer: loop {
            for s in &plan.segments {
                if t >= plan.duration {
                    break 'outer;
                }
                match *s {
                    Segment::Straight { duration } => t += duration,
                    Segment::Turn { angle_deg, radius } => {
                        let rate = plan.speed / radius * angle_deg.signum();
                        let span = angle_deg.to_radians().abs() * radius / plan.speed + plan.ramp;
                        turn_rate.push_trapezoid(t, t + span, plan.ramp, rate);
                        t += span;
                    }
                    Segment::Climb { duration, rate } => {
                        down_rate.push_trapezoid(t, t + duration, plan.ramp, -rate);
                        t += duration;
                    }
                }
            }
            if !plan.repeat {
                break;
            }
        }
        turn_rate.finish();
        down_rate.finish();
        Ok(FlightPath {
            speed: plan.speed,
            heading0: plan.initial_heading_deg.to_radians(),
            turn_rate,
            down_rate,
        })
    }

    pub fn heading(&self, t: f64) -> f64 {
        self.heading0 + self.turn_rate.integral(t)
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let psi = self.heading(t);
        Vector3::new(
            self.speed * psi.cos(),
            self.speed * psi.sin(),
            self.down_rate.value(t),
        )
    }

    /// Coordinated-flight attitude: yaw along track, pitch along the flight
    /// path, roll balancing the centripetal acceleration.
    pub fn attitude(&self, t: f64) -> Rotation {
        let vd = self.down_rate.value(t);
        let pitch = (-vd).atan2(self.speed);
        let roll = (self.speed * self.turn_rate.value(t) / GRAVITY).atan();
        Rotation::from_euler(roll, pitch, self.heading(t))
    }
}

/// Ground truth at one IMU epoch. Biases are the true sensor biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub timestamp: f64,
    pub state: NavState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub truth: Vec<TruthSample>,
    /// `imu[k]` covers `[truth[k].timestamp, truth[k + 1].timestamp)`.
    pub imu: Vec<ImuSample>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.truth.last().map_or(0.0, |s| s.timestamp)
    }
}

pub const IMU_SENSOR_ID: &str = "imu";

/// Samples the plan every `dt` seconds and derives IMU samples by inverse
/// kinematics, so that re-integrating noise-free samples reproduces the
/// truth to rounding error. With `imu_noise`, white noise and random-walk
/// biases (initial values drawn from the initial-bias sigmas) are added.
pub fn generate_trajectory(
    plan: &TrajectoryPlan,
    dt: f64,
    seed: u64,
    imu_noise: Option<&NoiseConfig>,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt <= MAX_IMU_DT) {
        return invalid(format!("IMU step {dt} outside (0, {MAX_IMU_DT}]"));
    }
    if let Some(n) = imu_noise {
        n.validate()?;
    }
    let path = FlightPath::new(plan)?;
    let steps = (plan.duration / dt).round() as usize;
    let g = gravity_ned();

    let rot: Vec<Rotation> = (0..=steps).map(|k| path.attitude(k as f64 * dt)).collect();
    let vel: Vec<Vector3<f64>> = (0..=steps).map(|k| path.velocity(k as f64 * dt)).collect();

    let (mut bg, mut ba) = match imu_noise {
        Some(n) => {
            let mut rng = keyed_rng(seed, IMU_SENSOR_ID, 0, Purpose::Init);
            (
                normal3(&mut rng) * n.init_gyro_bias,
                normal3(&mut rng) * n.init_accel_bias,
            )
        }
        None => (Vector3::zeros(), Vector3::zeros()),
    };

    let mut truth = Vec::with_capacity(steps + 1);
    let mut imu = Vec::with_capacity(steps);
    let mut p = Vector3::zeros();
    for k in 0..=steps {
        let t = k as f64 * dt;
        truth.push(TruthSample {
            timestamp: t,
            state: NavState {
                pose: GroupElement::new(rot[k], vel[k], p),
                gyro_bias: bg,
                accel_bias: ba,
            },
        });
        if k == steps {
            break;
        }
        let dr = rot[k].inverse().compose(&rot[k + 1]);
        let mut gyro = so3_log(&dr)? / dt;
        let mut accel = rot[k].inverse().rotate(&((vel[k + 1] - vel[k]) / dt - g));
        if let Some(n) = imu_noise {
            let mut w = keyed_rng(seed, IMU_SENSOR_ID, k as u64, Purpose::ImuNoise);
            gyro += bg + normal3(&mut w) * (n.sigma_gyro / dt.sqrt());
            accel += ba + normal3(&mut w) * (n.sigma_accel / dt.sqrt());
            let mut b = keyed_rng(seed, IMU_SENSOR_ID, k as u64, Purpose::ImuBias);
            bg += normal3(&mut b) * (n.sigma_gyro_bias * dt.sqrt());
            ba += normal3(&mut b) * (n.sigma_accel_bias * dt.sqrt());
        }
        imu.push(ImuSample {
            timestamp: t,
            gyro,
            accel,
        });
        p += (vel[k] + vel[k + 1]) * (0.5 * dt);
    }
    Ok(Trajectory { dt, truth, imu })
}

/// Receiver fix quality; `NoFix` marks unusable data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixType {
    NoFix = 0,
    Fix3d = 3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnssMeasurement {
    pub timestamp: f64,
    pub sensor_id: String,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub fixtype: FixType,
    /// Realized position noise, kept for statistics.
    pub position_noise: Vector3<f64>,
    pub velocity_noise: Vector3<f64>,
    /// True when the epoch carries a heavy-tail draw.
    pub outlier: bool,
    /// Index of the epoch within the stream.
    pub epoch: u64,
}

impl GnssMeasurement {
    pub fn is_valid(&self) -> bool {
        self.fixtype == FixType::Fix3d
    }
}

/// Samples truth at `rate_hz` (first fix one period after start) and adds
/// Gaussian noise with the sheet's position and velocity accuracies.
pub fn synthesize_gnss(
    traj: &Trajectory,
    sheet: &SensorSheet,
    rate_hz: f64,
    seed: u64,
) -> Result<Vec<GnssMeasurement>> {
    sheet.validate()?;
    let ratio = gnss_ratio(traj.dt, rate_hz)?;
    let mut out = Vec::new();
    let mut j = 1usize;
    while j * ratio < traj.truth.len() {
        let truth = &traj.truth[j * ratio];
        let epoch = j as u64;
        let mut rng = keyed_rng(seed, &sheet.sensor_id, epoch, Purpose::GnssNoise);
        let np = normal3(&mut rng) * sheet.position;
        let nv = normal3(&mut rng) * sheet.velocity;
        out.push(GnssMeasurement {
            timestamp: truth.timestamp,
            sensor_id: sheet.sensor_id.clone(),
            position: truth.state.pose.position + np,
            velocity: truth.state.pose.velocity + nv,
            fixtype: FixType::Fix3d,
            position_noise: np,
            velocity_noise: nv,
            outlier: false,
            epoch,
        });
        j += 1;
    }
    Ok(out)
}

/// Number of IMU steps per GNSS period.
pub fn gnss_ratio(dt: f64, rate_hz: f64) -> Result<usize> {
    if !(rate_hz > 0.0) {
        return invalid("GNSS rate must be positive");
    }
    let r = 1.0 / (rate_hz * dt);
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-9 * r {
        return invalid(format!(
            "GNSS rate {rate_hz} Hz does not divide the IMU rate"
        ));
    }
    Ok(n as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultKind {
    /// Each epoch is an outlier with probability `p`; outliers use noise
    /// with per-axis standard deviation `s ∘ σ`.
    HeavyTail {
        p: f64,
        s: [f64; 3],
    },
    Jamming,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultWindow {
    pub sensor_id: String,
    /// Window `[start, end)`, s.
    pub start: f64,
    pub end: f64,
    pub fault: FaultKind,
}

impl FaultWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.start < self.end) || !self.start.is_finite() || !self.end.is_finite() {
            return invalid(format!(
                "fault window [{}, {}) is empty",
                self.start, self.end
            ));
        }
        if let FaultKind::HeavyTail { p, s } = &self.fault {
            if !(*p > 0.0 && *p <= 1.0) {
                return invalid(format!("heavy-tail probability {p} outside (0, 1]"));
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return invalid("heavy-tail scales must be positive");
            }
        }
        Ok(())
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Applies the faults addressed to the stream's sensor. `sigma` holds the
/// nominal (position, velocity) accuracies used to scale heavy-tail draws.
///
/// Where windows overlap, the later fault in the list wins.
pub fn inject(
    stream: &[GnssMeasurement],
    faults: &[FaultWindow],
    sigma: (f64, f64),
    seed: u64,
) -> Result<Vec<GnssMeasurement>> {
    let mut out = stream.to_vec();
    let (Some(first), Some(last)) = (stream.first(), stream.last()) else {
        return Ok(out);
    };
    let sensor = &first.sensor_id;
    for f in faults {
        f.validate()?;
        if &f.sensor_id != sensor {
            continue;
        }
        // The stream starts one period after time zero.
        let period = if stream.len() > 1 {
            stream[1].timestamp - stream[0].timestamp
        } else {
            first.timestamp
        };
        if f.start < first.timestamp - period - 1e-9 || f.end > last.timestamp + period + 1e-9 {
            return invalid(format!(
                "fault window [{}, {}) for {sensor} lies outside the stream",
                f.start, f.end
            ));
        }
    }
    for (m, clean) in out.iter_mut().zip(stream) {
        let Some(f) = faults
            .iter()
            .rev()
            .find(|f| &f.sensor_id == sensor && f.contains(m.timestamp))
        else {
            continue;
        };
        *m = clean.clone();
        match &f.fault {
            FaultKind::Jamming => {
                m.fixtype = FixType::NoFix;
                m.position = Vector3::zeros();
                m.velocity = Vector3::zeros();
            }
            FaultKind::HeavyTail { p, s } => {
                let mut rng = keyed_rng(seed, sensor, m.epoch, Purpose::HeavyTail);
                let u: f64 = rng.random();
                if u < *p {
                    let scale = Vector3::from(*s);
                    let np = normal3(&mut rng).component_mul(&scale) * sigma.0;
                    let nv = normal3(&mut rng).component_mul(&scale) * sigma.1;
                    m.position = m.position - m.position_noise + np;
                    m.velocity = m.velocity - m.velocity_noise + nv;
                    m.position_noise = np;
                    m.velocity_noise = nv;
                    m.outlier = true;
                }
            }
        }
    }
    Ok(out)
}

/// Writes a GNSS stream as CSV: `t, pn, pe, pd, vn, ve, vd, fixtype`.
pub fn write_gnss_csv<W: Write>(w: W, stream: &[GnssMeasurement]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["t", "pn", "pe", "pd", "vn", "ve", "vd", "fixtype"])?;
    for m in stream {
        let mut rec: Vec<String> = vec![m.timestamp.to_string()];
        rec.extend(
            m.position
                .iter()
                .chain(m.velocity.iter())
                .map(|v| v.to_string()),
        );
        rec.push((m.fixtype as u8).to_string());
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes IMU samples as CSV: `t, gx, gy, gz, ax, ay, az`.
pub fn write_imu_csv<W: Write>(w: W, samples: &[ImuSample]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["t", "gx", "gy", "gz", "ax", "ay", "az"])?;
    for s in samples {
        let mut rec: Vec<String> = vec![s.timestamp.to_string()];
        rec.extend(s.gyro.iter().chain(s.accel.iter()).map(|v| v.to_string()));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credibility::SensorKind;
    use crate::ins::propagate;

    fn rtk1() -> SensorSheet {
        SensorSheet {
            sensor_id: "GPS1".into(),
            kind: SensorKind::Rtk,
            attitude: 0.0,
            heading: 0.0,
            velocity: 0.03,
            position: 0.02,
            gyro_bias: 0.0,
            accel_bias: 0.0,
            coverage: [1; 6],
            horizon: 0.1,
            delta_v: 0.0,
        }
    }

    #[test]
    fn hover_is_static() {
        let t = generate_trajectory(&TrajectoryPlan::hover(2.0), 0.01, 1, None).unwrap();
        for s in &t.imu {
            assert!(s.gyro.norm() < 1e-15);
            assert!((s.accel - Vector3::new(0.0, 0.0, -GRAVITY)).norm() < 1e-12);
        }
    }

    #[test]
    fn level_turn_reintegrates() {
        let plan = TrajectoryPlan {
            speed: 50.0,
            initial_heading_deg: 10.0,
            ramp: 2.0,
            duration: 40.0,
            repeat: false,
            segments: vec![
                Segment::Straight { duration: 2.0 },
                Segment::Turn {
                    angle_deg: 90.0,
                    radius: 400.0,
                },
            ],
        };
        let t = generate_trajectory(&plan, 0.01, 0, None).unwrap();
        let mut x = t.truth[0].state;
        for (k, s) in t.imu.iter().enumerate() {
            x = propagate(&x, s, t.truth[k + 1].timestamp - s.timestamp).unwrap();
        }
        let yaw = x.pose.rotation.to_euler()[2].to_degrees();
        assert!((yaw - 100.0).abs() < 0.05, "yaw {yaw}");
        let end = t.truth.last().unwrap().state;
        assert!((x.pose.position - end.pose.position).norm() < 1e-6);
        assert!((x.pose.velocity - end.pose.velocity).norm() < 1e-9);
    }

    #[test]
    fn position_derivative_matches_velocity() {
        let t = generate_trajectory(&TrajectoryPlan::racetrack(200.0), 0.01, 0, None).unwrap();
        for k in 1..t.truth.len() - 1 {
            let fd = (t.truth[k + 1].state.pose.position - t.truth[k - 1].state.pose.position)
                / (2.0 * t.dt);
            assert!(
                (fd - t.truth[k].state.pose.velocity).norm() < 1e-3,
                "k = {k}"
            );
        }
    }

    #[test]
    fn racetrack_stays_compact_and_closes() {
        let plan = TrajectoryPlan::racetrack(600.0);
        let t = generate_trajectory(&plan, 0.01, 0, None).unwrap();
        let max = t
            .truth
            .iter()
            .map(|s| s.state.pose.position.norm())
            .fold(0.0, f64::max);
        assert!(max < 2000.0, "max range {max}");
        let max_bank = t
            .truth
            .iter()
            .map(|s| s.state.pose.rotation.to_euler()[0].abs())
            .fold(0.0, f64::max);
        assert!(max_bank.to_degrees() < 60.0);
    }

    #[test]
    fn infeasible_turn_is_rejected() {
        let mut plan = TrajectoryPlan::racetrack(100.0);
        plan.segments = vec![Segment::Turn {
            angle_deg: 90.0,
            radius: 50.0,
        }];
        assert!(generate_trajectory(&plan, 0.01, 0, None).is_err());
        assert!(generate_trajectory(&TrajectoryPlan::hover(1.0), 0.05, 0, None).is_err());
    }

    #[test]
    fn streams_are_deterministic() {
        let plan = TrajectoryPlan::racetrack(20.0);
        let noise = NoiseConfig::default();
        let a = generate_trajectory(&plan, 0.01, 7, Some(&noise)).unwrap();
        let b = generate_trajectory(&plan, 0.01, 7, Some(&noise)).unwrap();
        assert_eq!(a, b);
        let c = generate_trajectory(&plan, 0.01, 8, Some(&noise)).unwrap();
        assert_ne!(a.imu, c.imu);
        let ga = synthesize_gnss(&a, &rtk1(), 10.0, 3).unwrap();
        let gb = synthesize_gnss(&a, &rtk1(), 10.0, 3).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(ga.len(), 200);
        assert!((ga[0].timestamp - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_accuracy_gives_truth() {
        let t = generate_trajectory(&TrajectoryPlan::racetrack(5.0), 0.01, 0, None).unwrap();
        let mut sheet = rtk1();
        sheet.position = 0.0;
        sheet.velocity = 0.0;
        for m in synthesize_gnss(&t, &sheet, 10.0, 1).unwrap() {
            let k = (m.timestamp / 0.01).round() as usize;
            assert_eq!(m.position, t.truth[k].state.pose.position);
            assert_eq!(m.velocity, t.truth[k].state.pose.velocity);
        }
    }

    #[test]
    fn gnss_noise_statistics() {
        let plan = TrajectoryPlan::hover(1000.0);
        let t = generate_trajectory(&plan, 0.01, 0, None).unwrap();
        let g = synthesize_gnss(&t, &rtk1(), 100.0, 11).unwrap();
        let n = g.len() * 3;
        assert!(n >= 100_000 - 3);
        let var: f64 = g
            .iter()
            .map(|m| m.position_noise.norm_squared())
            .sum::<f64>()
            / n as f64;
        assert!((var.sqrt() / 0.02 - 1.0).abs() < 0.03);
    }

    #[test]
    fn injection_windows() {
        let t = generate_trajectory(&TrajectoryPlan::hover(60.0), 0.01, 0, None).unwrap();
        let clean = synthesize_gnss(&t, &rtk1(), 10.0, 5).unwrap();
        assert_eq!(inject(&clean, &[], (0.02, 0.03), 5).unwrap(), clean);

        let faults = vec![
            FaultWindow {
                sensor_id: "GPS1".into(),
                start: 10.0,
                end: 30.0,
                fault: FaultKind::HeavyTail {
                    p: 0.5,
                    s: [2.5, 2.5, 0.5],
                },
            },
            FaultWindow {
                sensor_id: "GPS1".into(),
                start: 20.0,
                end: 40.0,
                fault: FaultKind::Jamming,
            },
            FaultWindow {
                sensor_id: "other".into(),
                start: 0.0,
                end: 60.0,
                fault: FaultKind::Jamming,
            },
        ];
        let out = inject(&clean, &faults, (0.02, 0.03), 5).unwrap();
        for (a, b) in out.iter().zip(&clean) {
            let t = a.timestamp;
            if (20.0..40.0).contains(&t) {
                assert_eq!(a.fixtype, FixType::NoFix);
                assert_eq!(a.position, Vector3::zeros());
            } else if (10.0..20.0).contains(&t) {
                assert!(a.is_valid());
            } else {
                assert_eq!(a, b);
            }
        }
        assert!(out.iter().any(|m| m.outlier));
        assert_eq!(inject(&clean, &faults, (0.02, 0.03), 5).unwrap(), out);
    }

    #[test]
    fn window_outside_stream_is_rejected() {
        let t = generate_trajectory(&TrajectoryPlan::hover(10.0), 0.01, 0, None).unwrap();
        let clean = synthesize_gnss(&t, &rtk1(), 10.0, 5).unwrap();
        let f = FaultWindow {
            sensor_id: "GPS1".into(),
            start: 5.0,
            end: 50.0,
            fault: FaultKind::Jamming,
        };
        assert!(inject(&clean, &[f], (0.02, 0.03), 5).is_err());
    }

    #[test]
    fn csv_has_header() {
        let t = generate_trajectory(&TrajectoryPlan::hover(1.0), 0.01, 0, None).unwrap();
        let g = synthesize_gnss(&t, &rtk1(), 10.0, 5).unwrap();
        let mut buf = Vec::new();
        write_gnss_csv(&mut buf, &g).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,pn,pe,pd,vn,ve,vd,fixtype\n"));
        assert_eq!(text.lines().count(), g.len() + 1);
        let mut buf = Vec::new();
        write_imu_csv(&mut buf, &t.imu).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            t.imu.len() + 1
        );
    }
}
