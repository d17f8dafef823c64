use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ins::NavState;

/// Navigation output in report units: Euler angles in degrees (roll,
/// pitch, yaw), NED position in m and velocity in m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub t: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub pn: f64,
    pub pe: f64,
    pub pd: f64,
    pub vn: f64,
    pub ve: f64,
    pub vd: f64,
}

impl StateRow {
    pub fn from_state(t: f64, x: &NavState) -> Self {
        let e = x.pose.rotation.to_euler().map(f64::to_degrees);
        let p = x.pose.position;
        let v = x.pose.velocity;
        StateRow {
            t,
            roll: e[0],
            pitch: e[1],
            yaw: e[2],
            pn: p.x,
            pe: p.y,
            pd: p.z,
            vn: v.x,
            ve: v.y,
            vd: v.z,
        }
    }

    pub fn attitude(&self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.pn, self.pe, self.pd)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vn, self.ve, self.vd)
    }
}

/// Wraps an angle in degrees to `(−180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Attitude error (estimate minus truth) as wrapped Euler differences.
pub fn attitude_error(est: &StateRow, truth: &StateRow) -> Vector3<f64> {
    (est.attitude() - truth.attitude()).map(wrap_deg)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AxisStats {
    pub std: f64,
    pub mae: f64,
    pub rmse: f64,
}

impl AxisStats {
    pub fn from_errors(e: &[f64]) -> Self {
        if e.is_empty() {
            return AxisStats::default();
        }
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        AxisStats {
            std: (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt(),
            mae: e.iter().map(|x| x.abs()).sum::<f64>() / n,
            rmse: (e.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Roll, pitch, yaw, deg.
    pub attitude: [AxisStats; 3],
    /// North, east, down, m.
    pub position: [AxisStats; 3],
    pub velocity: [AxisStats; 3],
}

/// Per-axis error statistics of `estimate` against `truth`. Both series
/// must share timestamps.
pub fn compute_metrics(truth: &[StateRow], estimate: &[StateRow]) -> Result<MetricsReport> {
    if truth.len() != estimate.len() {
        return Err(Error::Misaligned(format!(
            "{} truth rows against {} estimate rows",
            truth.len(),
            estimate.len()
        )));
    }
    let mut att: [Vec<f64>; 3] = Default::default();
    let mut pos: [Vec<f64>; 3] = Default::default();
    let mut vel: [Vec<f64>; 3] = Default::default();
    for (t, e) in truth.iter().zip(estimate) {
        if (t.t - e.t).abs() > 1e-6 {
            return Err(Error::Misaligned(format!("timestamps {} and {}", t.t, e.t)));
        }
        let da = attitude_error(e, t);
        let dp = e.position() - t.position();
        let dv = e.velocity() - t.velocity();
        for i in 0..3 {
            att[i].push(da[i]);
            pos[i].push(dp[i]);
            vel[i].push(dv[i]);
        }
    }
    let stats = |v: &[Vec<f64>; 3]| std::array::from_fn(|i| AxisStats::from_errors(&v[i]));
    Ok(MetricsReport {
        attitude: stats(&att),
        position: stats(&pos),
        velocity: stats(&vel),
    })
}

pub fn write_state_csv<W: Write>(w: W, rows: &[StateRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_state_csv<R: Read>(r: R) -> Result<Vec<StateRow>> {
    let mut csv = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in csv.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
