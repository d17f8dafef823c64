use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};

use super::config::{EstimatorKind, ScenarioConfig, SwitchConfig};
use super::metrics::{attitude_error, compute_metrics, write_state_csv, MetricsReport, StateRow};
use crate::credibility::{credibility, realtime_index_from_dop, CredibilityIndex, RHO_MAX};
use crate::error::{Error, Result};
use crate::esekf;
use crate::faultlab::{
    generate_trajectory, gnss_ratio, initial_draw, inject, synthesize_gnss, write_gnss_csv,
    GnssMeasurement, Trajectory,
};
use crate::imm::{GnssObservation, Imm, ImmConfig, NavProcess};
use crate::ins::NavState;
use crate::manifold::{boxminus, boxplus, Vector15};
use crate::riekf::{ErrorConvention, MeasurementModel};
use crate::selection::{build_trees, rank_imus, CoverageMatrix, SensorTree};

/// Position error beyond which an estimator is declared diverged, m.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

/// Inputs shared by every estimator of a run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub imu_id: String,
    pub trajectory: Trajectory,
    /// Fault-injected streams by sensor id.
    pub gnss: BTreeMap<String, Vec<GnssMeasurement>>,
    pub models: BTreeMap<String, MeasurementModel>,
    pub credibility: BTreeMap<String, CredibilityIndex>,
    pub trees: Vec<SensorTree>,
    pub initial: NavState,
    /// IMU steps per GNSS epoch.
    pub ratio: usize,
}

impl Scenario {
    pub fn prepare(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let dt = 1.0 / config.imu_rate_hz;
        let noise = config.imu_noise.then_some(&config.noise);
        let trajectory = generate_trajectory(&config.trajectory, dt, config.seed, noise)?;
        let imu_id = rank_imus(&config.imus)?.remove(0);

        let mut gnss = BTreeMap::new();
        let mut models = BTreeMap::new();
        let mut cred = BTreeMap::new();
        let mut coverage = CoverageMatrix::new();
        let imu = config
            .imus
            .iter()
            .find(|s| s.sensor_id == imu_id)
            .expect("ranked IMU exists");
        coverage.insert(imu_id.clone(), imu.coverage)?;
        let mut candidates = Vec::new();
        for s in &config.sensors {
            let sheet = s.sheet(config.fusion.delta_v);
            let clean = synthesize_gnss(&trajectory, &sheet, s.rate_hz, config.seed)?;
            let stream = inject(
                &clean,
                &config.faults,
                (s.position, s.velocity),
                config.seed,
            )?;
            gnss.insert(s.id.clone(), stream);
            models.insert(s.id.clone(), s.measurement_model()?);
            // Trees are formed before any fix arrives, at full realtime score.
            let c = credibility(&sheet, RHO_MAX)?;
            cred.insert(s.id.clone(), c);
            coverage.insert(s.id.clone(), s.coverage)?;
            candidates.push((sheet, c));
        }
        let trees = build_trees(&candidates, &coverage, &imu_id, &config.fusion.selection)?;
        let ratio = gnss_ratio(dt, config.sensors[0].rate_hz)?;

        // Initial estimate: pose drawn from P0 around truth, biases zero.
        let sig = config.noise.initial_sigmas();
        let draw = initial_draw(config.seed, "initial-state");
        let mut delta = Vector15::zeros();
        for i in 0..9 {
            delta[i] = draw[i] * sig[i];
        }
        let truth0 = trajectory.truth[0].state;
        let mut initial = boxplus(&truth0, &delta);
        initial.gyro_bias = Vector3::zeros();
        initial.accel_bias = Vector3::zeros();

        Ok(Scenario {
            config: config.clone(),
            imu_id,
            trajectory,
            gnss,
            models,
            credibility: cred,
            trees,
            initial,
            ratio,
        })
    }

    pub fn epochs(&self) -> usize {
        (self.trajectory.truth.len() - 1) / self.ratio
    }

    /// Truth at GNSS epoch `j` (counted from 1).
    pub fn truth_at(&self, j: usize) -> (f64, NavState) {
        let s = &self.trajectory.truth[j * self.ratio];
        (s.timestamp, s.state)
    }

    pub fn truth_rows(&self) -> Vec<StateRow> {
        (1..=self.epochs())
            .map(|j| {
                let (t, x) = self.truth_at(j);
                StateRow::from_state(t, &x)
            })
            .collect()
    }

    /// Fix of `sensor` at epoch `j`, if present and valid.
    pub fn fix(&self, sensor: &str, j: usize) -> Option<&GnssMeasurement> {
        let m = self.gnss.get(sensor)?.get(j.checked_sub(1)?)?;
        let t = self.trajectory.truth[j * self.ratio].timestamp;
        ((m.timestamp - t).abs() < 0.5 * self.trajectory.dt && m.is_valid()).then_some(m)
    }

    fn observation(&self, model_of: &str, source: &str, j: usize) -> Option<GnssObservation> {
        let m = self.fix(source, j)?;
        let z = DVector::from_iterator(6, m.position.iter().chain(m.velocity.iter()).copied());
        Some(GnssObservation {
            model: self.models[model_of].clone(),
            z,
        })
    }
}

/// Per-epoch output of one estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub t: f64,
    pub state: StateRow,
    /// Wrapped Euler-angle error, deg.
    pub attitude_error: Vector3<f64>,
    pub position_error: Vector3<f64>,
    pub velocity_error: Vector3<f64>,
    /// Normalized estimation error squared over all 15 states.
    pub nees: f64,
    pub mu: Vec<f64>,
    /// Row-major transition matrix used this epoch.
    pub transition: Vec<f64>,
    /// Innovation statistic and dimension per submodel.
    pub q: Vec<Option<(f64, usize)>>,
}

#[derive(Clone, Debug)]
pub struct EstimatorRun {
    pub kind: EstimatorKind,
    /// Aiding sensors of each submodel.
    pub submodels: Vec<Vec<String>>,
    pub records: Vec<EpochRecord>,
    pub metrics: MetricsReport,
    pub diverged: bool,
    pub failure: Option<String>,
}

impl EstimatorRun {
    pub fn name(&self) -> String {
        self.kind.name()
    }

    /// Largest epoch-to-epoch change of the attitude error (norm over the
    /// three Euler axes, deg) between records inside `[from, to]`.
    pub fn max_attitude_jump(&self, from: f64, to: f64) -> f64 {
        self.records
            .windows(2)
            .filter(|w| w[0].t >= from && w[1].t <= to)
            .map(|w| (w[1].attitude_error - w[0].attitude_error).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub truth: Vec<StateRow>,
    pub estimators: Vec<EstimatorRun>,
}

impl ScenarioRun {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorRun> {
        self.estimators.iter().find(|e| e.name() == name)
    }

    pub fn any_diverged(&self) -> bool {
        self.estimators.iter().any(|e| e.diverged)
    }
}

/// Runs every configured estimator over the same streams. Estimators run
/// on separate threads.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    let scenario = Scenario::prepare(config)?;
    let kinds = config.estimator_kinds()?;
    let truth = scenario.truth_rows();
    let estimators = std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|k| {
                let sc = &scenario;
                let truth = &truth;
                s.spawn(move || run_estimator(sc, *k, truth))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("estimator thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ScenarioRun {
        scenario,
        truth,
        estimators,
    })
}

fn nees(err: &Vector15, cov: &DMatrix<f64>) -> f64 {
    let e = DVector::from_column_slice(err.as_slice());
    match cov.clone().cholesky() {
        Some(c) => e.dot(&c.solve(&e)),
        None => f64::INFINITY,
    }
}

struct Source<'a> {
    /// Sensor whose measurement model (and noise) the filter uses.
    model: String,
    switch: Option<&'a SwitchConfig>,
}

impl Source<'_> {
    fn sensor_at(&self, t: f64) -> &str {
        match self.switch {
            Some(sw) if t >= sw.at - 1e-9 => &sw.sensor,
            _ => &self.model,
        }
    }
}

pub fn run_estimator(
    scenario: &Scenario,
    kind: EstimatorKind,
    truth: &[StateRow],
) -> Result<EstimatorRun> {
    let cfg = &scenario.config;
    let (convention, trees): (_, Vec<&SensorTree>) = match kind {
        EstimatorKind::ImmRiekf => (
            ErrorConvention::RightInvariant,
            scenario.trees.iter().collect(),
        ),
        EstimatorKind::Riekf(k) | EstimatorKind::Esekf(k) => {
            let tree = scenario.trees.get(k - 1).ok_or_else(|| {
                Error::Config(format!(
                    "{} requested but only {} submodels exist",
                    kind.name(),
                    scenario.trees.len()
                ))
            })?;
            let conv = if matches!(kind, EstimatorKind::Esekf(_)) {
                ErrorConvention::Standard
            } else {
                ErrorConvention::RightInvariant
            };
            (conv, vec![tree])
        }
    };
    let switch = cfg.switches.iter().find(|s| s.estimator == kind.name());
    let sources: Vec<Vec<Source>> = trees
        .iter()
        .map(|t| {
            t.aiding()
                .map(|id| Source {
                    model: id.clone(),
                    switch,
                })
                .collect()
        })
        .collect();
    let submodels: Vec<Vec<String>> = trees
        .iter()
        .map(|t| t.aiding().cloned().collect())
        .collect();

    let process = NavProcess {
        noise: cfg.noise,
        convention,
    };
    let p0 = cfg.noise.initial_covariance();
    let mut imm = Imm::new(
        process,
        scenario.initial,
        DMatrix::from_column_slice(15, 15, p0.as_slice()),
        trees.len(),
        ImmConfig {
            mu_floor: cfg.fusion.mu_floor,
            baseline: cfg.fusion.baseline,
        },
    )?;

    let mut realtime: Vec<f64> = vec![RHO_MAX; trees.len()];
    let mut records = Vec::with_capacity(scenario.epochs());
    let mut failure = None;
    for j in 1..=scenario.epochs() {
        let (t, x_true) = scenario.truth_at(j);
        let imu = &scenario.trajectory.imu[(j - 1) * scenario.ratio..j * scenario.ratio];

        let mut meas = Vec::with_capacity(trees.len());
        let mut cred = Vec::with_capacity(trees.len());
        for (i, srcs) in sources.iter().enumerate() {
            let mut ms = Vec::new();
            let mut hs = Vec::new();
            for s in srcs {
                let obs = scenario.observation(&s.model, s.sensor_at(t), j);
                let e = scenario.credibility[&s.model].expected;
                hs.push(if obs.is_some() { e * realtime[i] } else { 0.0 });
                ms.extend(obs);
            }
            meas.push(ms);
            cred.push(hs);
        }

        let diag = match imm.step(imu, t, &meas, &cred) {
            Ok(d) => d,
            Err(e) => {
                failure = Some(format!("t = {t}: {e}"));
                break;
            }
        };
        for (i, r) in diag.reports.iter().enumerate() {
            if let Some(r) = r {
                realtime[i] = realtime_index_from_dop(&r.covariance).unwrap_or(0.0);
            }
        }

        let x = *imm.nominal();
        let err = match convention {
            ErrorConvention::RightInvariant => boxminus(&x_true, &x),
            ErrorConvention::Standard => esekf::difference(&x_true, &x),
        };
        let state = StateRow::from_state(t, &x);
        let tr = &truth[j - 1];
        let position_error = state.position() - tr.position();
        let rec = EpochRecord {
            t,
            state,
            attitude_error: attitude_error(&state, tr),
            position_error,
            velocity_error: state.velocity() - tr.velocity(),
            nees: err.map_or(f64::INFINITY, |e| nees(&e, imm.covariance())),
            mu: diag.mu,
            transition: diag.transition.matrix().transpose().as_slice().to_vec(),
            q: diag
                .reports
                .iter()
                .map(|r| r.as_ref().map(|r| (r.statistic, r.dim())))
                .collect(),
        };
        records.push(rec);
        if !(position_error.norm() <= DIVERGENCE_LIMIT) {
            failure = Some(format!(
                "t = {t}: position error {:.1} m",
                position_error.norm()
            ));
            break;
        }
    }

    let diverged = failure.is_some();
    let est_rows: Vec<StateRow> = records.iter().map(|r| r.state).collect();
    let metrics = compute_metrics(&truth[..est_rows.len()], &est_rows)?;
    Ok(EstimatorRun {
        kind,
        submodels,
        records,
        metrics,
        diverged,
        failure,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn fmt_vec(v: &Vector3<f64>) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| x.to_string())
}

/// Writes every artifact of a run into `dir` (created if missing).
pub fn write_outputs(run: &ScenarioRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_state_csv(create(dir, "truth.csv")?, &run.truth)?;
    for (id, stream) in &run.scenario.gnss {
        write_gnss_csv(create(dir, &format!("gnss_{id}.csv"))?, stream)?;
    }

    for est in &run.estimators {
        let name = est.name();
        let rows: Vec<StateRow> = est.records.iter().map(|r| r.state).collect();
        write_state_csv(create(dir, &format!("{name}_state.csv"))?, &rows)?;

        let mut w = csv::Writer::from_writer(create(dir, &format!("{name}_error.csv"))?);
        w.write_record([
            "t", "roll", "pitch", "yaw", "pn", "pe", "pd", "vn", "ve", "vd", "nees",
        ])?;
        for r in &est.records {
            let mut rec = vec![r.t.to_string()];
            rec.extend(fmt_vec(&r.attitude_error));
            rec.extend(fmt_vec(&r.position_error));
            rec.extend(fmt_vec(&r.velocity_error));
            rec.push(r.nees.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;

        if matches!(est.kind, EstimatorKind::ImmRiekf) {
            let n = est.submodels.len();
            let mut w = csv::Writer::from_writer(create(dir, &format!("{name}_mu.csv"))?);
            let mut header = vec!["t".to_string()];
            header.extend((1..=n).map(|i| format!("mu_{i}")));
            for i in 1..=n {
                header.extend((1..=n).map(|j| format!("pi_{i}{j}")));
            }
            header.extend((1..=n).map(|i| format!("q_{i}")));
            w.write_record(&header)?;
            for r in &est.records {
                let mut rec = vec![r.t.to_string()];
                rec.extend(r.mu.iter().map(|v| v.to_string()));
                rec.extend(r.transition.iter().map(|v| v.to_string()));
                rec.extend(
                    r.q.iter()
                        .map(|q| q.map_or(String::new(), |(v, _)| v.to_string())),
                );
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
    }

    let mut w = csv::Writer::from_writer(create(dir, "summary.csv")?);
    let mut header = vec!["estimator".to_string(), "diverged".to_string()];
    for group in ["att", "pos"] {
        let axes: [&str; 3] = if group == "att" {
            ["roll", "pitch", "yaw"]
        } else {
            ["n", "e", "d"]
        };
        for stat in ["std", "mae", "rmse"] {
            for a in axes {
                header.push(format!("{group}_{a}_{stat}"));
            }
        }
    }
    w.write_record(&header)?;
    for est in &run.estimators {
        let m = &est.metrics;
        let mut rec = vec![est.name(), est.diverged.to_string()];
        for group in [&m.attitude, &m.position] {
            for stat in 0..3 {
                for a in group {
                    let v = match stat {
                        0 => a.std,
                        1 => a.mae,
                        _ => a.rmse,
                    };
                    rec.push(v.to_string());
                }
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultlab::TrajectoryPlan;

    fn short(duration: f64) -> ScenarioConfig {
        ScenarioConfig {
            trajectory: TrajectoryPlan::racetrack(duration),
            estimators: vec!["IMM-RIEKF".into(), "RIEKF-M1".into(), "ESEKF-M1".into()],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn trees_follow_credibility() {
        let s = Scenario::prepare(&short(5.0)).unwrap();
        let heads: Vec<_> = s.trees.iter().map(|t| t.level2[0].as_str()).collect();
        assert_eq!(heads, ["GPS1", "GPS2", "GPS3"]);
        assert_eq!(s.epochs(), 50);
    }

    #[test]
    fn short_run_produces_consistent_records() {
        let run = run_scenario(&short(10.0)).unwrap();
        assert_eq!(run.truth.len(), 100);
        for e in &run.estimators {
            assert!(!e.diverged, "{}: {:?}", e.name(), e.failure);
            assert_eq!(e.records.len(), 100);
        }
        let imm = run.estimator("IMM-RIEKF").unwrap();
        for r in &imm.records {
            assert!((r.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn estimators_converge_on_clean_data() {
        let mut c = short(60.0);
        c.imu_noise = false;
        let run = run_scenario(&c).unwrap();
        for e in &run.estimators {
            let tail = &e.records[e.records.len() - 100..];
            let worst = tail
                .iter()
                .map(|r| r.position_error.norm())
                .fold(0.0, f64::max);
            assert!(worst < 0.2, "{}: {worst}", e.name());
        }
    }

    #[test]
    fn outputs_are_written() {
        let run = run_scenario(&short(3.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&run, dir.path()).unwrap();
        for f in [
            "truth.csv",
            "summary.csv",
            "IMM-RIEKF_state.csv",
            "IMM-RIEKF_error.csv",
            "IMM-RIEKF_mu.csv",
            "RIEKF-M1_state.csv",
            "ESEKF-M1_error.csv",
            "gnss_GPS1.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
