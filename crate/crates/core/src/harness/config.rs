use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::credibility::{SensorKind, SensorSheet, COVERAGE_COLUMNS};
use crate::error::{Error, Result};
use crate::faultlab::{FaultKind, FaultWindow, TrajectoryPlan};
use crate::imm::DEFAULT_MU_FLOOR;
use crate::ins::NoiseConfig;
use crate::riekf::{MeasurementModel, Observable};
use crate::selection::SelectionOptions;

/// One aiding receiver: accuracy sheet, rate and the noise the filters
/// assume for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub id: String,
    pub kind: SensorKind,
    /// True 1σ position noise, m.
    pub position: f64,
    /// True 1σ velocity noise, m/s.
    pub velocity: f64,
    #[serde(default = "full_coverage")]
    pub coverage: [u8; COVERAGE_COLUMNS],
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    /// Filter measurement noise, m. Defaults to `position`.
    #[serde(default)]
    pub r_position: Option<f64>,
    /// Filter measurement noise, m/s. Defaults to `velocity`.
    #[serde(default)]
    pub r_velocity: Option<f64>,
}

fn full_coverage() -> [u8; COVERAGE_COLUMNS] {
    [1; COVERAGE_COLUMNS]
}

fn default_rate() -> f64 {
    10.0
}

impl SensorConfig {
    fn new(id: &str, kind: SensorKind, position: f64, velocity: f64, r: f64) -> Self {
        SensorConfig {
            id: id.into(),
            kind,
            position,
            velocity,
            coverage: full_coverage(),
            rate_hz: default_rate(),
            r_position: Some(r),
            r_velocity: Some(r),
        }
    }

    /// Accuracy sheet with the GNSS update period as horizon.
    pub fn sheet(&self, delta_v: f64) -> SensorSheet {
        SensorSheet {
            sensor_id: self.id.clone(),
            kind: self.kind,
            attitude: 0.0,
            heading: 0.0,
            velocity: self.velocity,
            position: self.position,
            gyro_bias: 0.0,
            accel_bias: 0.0,
            coverage: self.coverage,
            horizon: 1.0 / self.rate_hz,
            delta_v,
        }
    }

    pub fn measurement_model(&self) -> Result<MeasurementModel> {
        MeasurementModel::new(
            self.id.clone(),
            Observable::PositionVelocity,
            self.r_position.unwrap_or(self.position),
            self.r_velocity.unwrap_or(self.velocity),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Baseline probability `b`.
    pub baseline: f64,
    pub mu_floor: f64,
    /// Velocity change used by heading terms of the error budget, m/s.
    pub delta_v: f64,
    pub selection: SelectionOptions,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            baseline: 1.0,
            mu_floor: DEFAULT_MU_FLOOR,
            delta_v: 0.0,
            selection: SelectionOptions::default(),
        }
    }
}

/// From `at` onwards, a single-model estimator takes its fixes from
/// `sensor` instead of its own receiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub estimator: String,
    pub at: f64,
    pub sensor: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    ImmRiekf,
    Riekf(usize),
    Esekf(usize),
}

impl EstimatorKind {
    /// Parses `IMM-RIEKF`, `RIEKF-Mk` or `ESEKF-Mk` (k counted from 1).
    pub fn parse(name: &str) -> Result<Self> {
        if name == "IMM-RIEKF" {
            return Ok(EstimatorKind::ImmRiekf);
        }
        let model = |prefix: &str| -> Option<usize> {
            name.strip_prefix(prefix)?
                .parse::<usize>()
                .ok()
                .filter(|k| *k >= 1)
        };
        if let Some(k) = model("RIEKF-M") {
            return Ok(EstimatorKind::Riekf(k));
        }
        if let Some(k) = model("ESEKF-M") {
            return Ok(EstimatorKind::Esekf(k));
        }
        Err(Error::Config(format!("unknown estimator {name:?}")))
    }

    pub fn name(&self) -> String {
        match self {
            EstimatorKind::ImmRiekf => "IMM-RIEKF".into(),
            EstimatorKind::Riekf(k) => format!("RIEKF-M{k}"),
            EstimatorKind::Esekf(k) => format!("ESEKF-M{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub imu_rate_hz: f64,
    /// Add IMU white noise and bias drift matching `noise`.
    pub imu_noise: bool,
    pub output_dir: Option<String>,
    pub estimators: Vec<String>,
    pub trajectory: TrajectoryPlan,
    pub noise: NoiseConfig,
    pub fusion: FusionConfig,
    /// Candidate IMUs; the best ranked one drives every estimator.
    pub imus: Vec<SensorSheet>,
    pub sensors: Vec<SensorConfig>,
    pub faults: Vec<FaultWindow>,
    pub switches: Vec<SwitchConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            imu_rate_hz: 100.0,
            imu_noise: true,
            output_dir: None,
            estimators: vec!["IMM-RIEKF".into(), "RIEKF-M1".into(), "ESEKF-M1".into()],
            trajectory: TrajectoryPlan::default(),
            noise: NoiseConfig::default(),
            fusion: FusionConfig::default(),
            imus: vec![SensorSheet {
                sensor_id: "imu".into(),
                kind: SensorKind::Imu,
                attitude: 0.0,
                heading: 0.0,
                velocity: 0.0,
                position: 0.0,
                gyro_bias: 0.1f64.to_radians() / 3600.0,
                accel_bias: 0.0,
                coverage: [1, 0, 1, 1, 1, 1],
                horizon: 0.1,
                delta_v: 0.0,
            }],
            sensors: vec![
                SensorConfig::new("GPS1", SensorKind::Rtk, 0.02, 0.03, 0.01),
                SensorConfig::new("GPS2", SensorKind::Rtk, 0.03, 0.02, 0.02),
                SensorConfig::new("GPS3", SensorKind::Gps, 0.5, 0.1, 0.02),
            ],
            faults: Vec::new(),
            switches: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Heavy-tail and jamming schedule of the reference resilience scenario.
    pub fn resilience_faults() -> Vec<FaultWindow> {
        let heavy = |start, end, p, s| FaultWindow {
            sensor_id: "GPS1".into(),
            start,
            end,
            fault: FaultKind::HeavyTail { p, s },
        };
        let jam = |id: &str, start, end| FaultWindow {
            sensor_id: id.into(),
            start,
            end,
            fault: FaultKind::Jamming,
        };
        vec![
            heavy(100.0, 160.0, 0.1, [2.5, 2.5, 0.5]),
            heavy(160.0, 260.0, 0.05, [5.0, 5.0, 1.0]),
            jam("GPS1", 300.0, 500.0),
            jam("GPS2", 200.0, 300.0),
        ]
    }

    pub fn estimator_kinds(&self) -> Result<Vec<EstimatorKind>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for name in &self.estimators {
            let k = EstimatorKind::parse(name)?;
            if !seen.insert(k) {
                return Err(Error::Config(format!("estimator {name} listed twice")));
            }
            out.push(k);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.noise.validate().map_err(cfg)?;
        self.trajectory.validate().map_err(cfg)?;
        if !(self.imu_rate_hz > 0.0) {
            return Err(Error::Config("imu_rate_hz must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        self.estimator_kinds()?;
        if self.imus.is_empty() {
            return Err(Error::Config("at least one IMU is required".into()));
        }
        for imu in &self.imus {
            imu.validate().map_err(cfg)?;
        }
        if self.sensors.is_empty() {
            return Err(Error::Config(
                "at least one aiding sensor is required".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        for imu in &self.imus {
            if !ids.insert(imu.sensor_id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate sensor id {}",
                    imu.sensor_id
                )));
            }
        }
        let rate = self.sensors[0].rate_hz;
        for s in &self.sensors {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate sensor id {}", s.id)));
            }
            if s.rate_hz != rate {
                return Err(Error::Config(
                    "all aiding sensors must share one rate".into(),
                ));
            }
            s.sheet(self.fusion.delta_v).validate().map_err(cfg)?;
            s.measurement_model().map_err(cfg)?;
        }
        crate::faultlab::gnss_ratio(1.0 / self.imu_rate_hz, rate).map_err(cfg)?;
        for f in &self.faults {
            f.validate().map_err(cfg)?;
            if !self.sensors.iter().any(|s| s.id == f.sensor_id) {
                return Err(Error::Config(format!(
                    "fault targets unknown sensor {}",
                    f.sensor_id
                )));
            }
        }
        for sw in &self.switches {
            match EstimatorKind::parse(&sw.estimator)? {
                EstimatorKind::ImmRiekf => {
                    return Err(Error::Config(
                        "switches apply to single-model estimators".into(),
                    ))
                }
                _ if !self.estimators.contains(&sw.estimator) => {
                    return Err(Error::Config(format!(
                        "switch refers to estimator {} which is not run",
                        sw.estimator
                    )))
                }
                _ => {}
            }
            if !self.sensors.iter().any(|s| s.id == sw.sensor) {
                return Err(Error::Config(format!(
                    "switch targets unknown sensor {}",
                    sw.sensor
                )));
            }
        }
        let f = &self.fusion;
        if !(f.baseline > 0.0 && f.baseline <= 1.0) {
            return Err(Error::Config("fusion.baseline must lie in (0, 1]".into()));
        }
        if !(f.mu_floor > 0.0 && f.mu_floor < 0.1) {
            return Err(Error::Config("fusion.mu_floor must lie in (0, 0.1)".into()));
        }
        Ok(())
    }
}
