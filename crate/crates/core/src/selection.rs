//! Greedy, coverage-aware grouping of aiding sensors into submodel trees.
//!
//! Each tree is rooted at the primary IMU (level 1), headed by one
//! multi-state sensor (level 2) and completed by single-purpose sensors
//! (level 3) that fill coverage holes or outrank the head.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::credibility::{expected_index, CredibilityIndex, SensorSheet, COVERAGE_COLUMNS};
use crate::error::{invalid, Result};

pub type CoverageRow = [u8; COVERAGE_COLUMNS];

/// Coverage rows keyed by sensor id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    rows: BTreeMap<String, CoverageRow>,
}

impl CoverageMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, row: CoverageRow) -> Result<()> {
        let id = id.into();
        if row.iter().any(|v| *v > 1) {
            return invalid(format!("coverage row for {id} is not binary"));
        }
        self.rows.insert(id, row);
        Ok(())
    }

    pub fn row(&self, id: &str) -> Option<&CoverageRow> {
        self.rows.get(id)
    }

    /// Collects the coverage rows carried by a list of sheets.
    pub fn from_sheets<'a>(sheets: impl IntoIterator<Item = &'a SensorSheet>) -> Result<Self> {
        let mut m = Self::new();
        for s in sheets {
            m.insert(s.sensor_id.clone(), s.coverage)?;
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorTree {
    pub level1: String,
    pub level2: Vec<String>,
    pub level3: Vec<String>,
    pub coverage: CoverageRow,
    /// Set when a required state group is left unconstrained.
    pub coverage_gap: bool,
}

impl SensorTree {
    /// Aiding sensors of the tree (levels 2 and 3).
    pub fn aiding(&self) -> impl Iterator<Item = &String> {
        self.level2.iter().chain(self.level3.iter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionOptions {
    /// Minimum number of covered groups for a sensor to head a tree.
    pub level2_min_coverage: usize,
    /// Groups that every tree should constrain.
    pub required: CoverageRow,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            level2_min_coverage: 4,
            required: [1; COVERAGE_COLUMNS],
        }
    }
}

/// IMU ids ordered by expected index, best first; ties by id.
pub fn rank_imus(sheets: &[SensorSheet]) -> Result<Vec<String>> {
    if sheets.is_empty() {
        return invalid("no IMU to rank");
    }
    let mut scored = sheets
        .iter()
        .map(|s| Ok((expected_index(s)?, s.sensor_id.clone())))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

struct Candidate {
    id: String,
    h: f64,
    row: CoverageRow,
    level2: bool,
}

/// Higher `h` first, then lexicographic id.
fn better(a: &Candidate, b: &Candidate) -> Ordering {
    b.h.total_cmp(&a.h).then_with(|| a.id.cmp(&b.id))
}

fn take_best<F>(pool: &mut Vec<Candidate>, pred: F) -> Option<Candidate>
where
    F: Fn(&Candidate) -> bool,
{
    let idx = pool
        .iter()
        .enumerate()
        .filter(|(_, c)| pred(c))
        .min_by(|(_, a), (_, b)| better(a, b))
        .map(|(i, _)| i)?;
    Some(pool.swap_remove(idx))
}

fn or_into(acc: &mut CoverageRow, row: &CoverageRow) {
    for (a, r) in acc.iter_mut().zip(row) {
        *a |= *r;
    }
}

pub fn build_trees(
    sensors: &[(SensorSheet, CredibilityIndex)],
    coverage: &CoverageMatrix,
    imu: &str,
    options: &SelectionOptions,
) -> Result<Vec<SensorTree>> {
    let Some(imu_row) = coverage.row(imu) else {
        return invalid(format!("no coverage row for IMU {imu}"));
    };
    let mut pool = Vec::with_capacity(sensors.len());
    for (sheet, cred) in sensors {
        let id = &sheet.sensor_id;
        if id == imu {
            continue;
        }
        if pool.iter().any(|c: &Candidate| &c.id == id) {
            return invalid(format!("sensor {id} listed twice"));
        }
        let Some(row) = coverage.row(id) else {
            return invalid(format!("no coverage row for sensor {id}"));
        };
        let count = row.iter().filter(|v| **v == 1).count();
        if count == 0 {
            return invalid(format!("sensor {id} constrains no state group"));
        }
        if !cred.combined.is_finite() {
            return invalid(format!("credibility of {id} is not finite"));
        }
        pool.push(Candidate {
            id: id.clone(),
            h: cred.combined,
            row: *row,
            level2: count >= options.level2_min_coverage,
        });
    }

    let mut trees = Vec::new();
    while !pool.is_empty() {
        let head = take_best(&mut pool, |c| c.level2)
            .or_else(|| take_best(&mut pool, |_| true))
            .expect("pool is non-empty");
        let mut cov = *imu_row;
        or_into(&mut cov, &head.row);
        let mut level3 = Vec::new();

        for j in 0..COVERAGE_COLUMNS {
            if options.required[j] == 1 && cov[j] == 0 {
                if let Some(s) = take_best(&mut pool, |c| !c.level2 && c.row[j] == 1) {
                    or_into(&mut cov, &s.row);
                    level3.push(s.id);
                }
            }
        }
        for j in 0..COVERAGE_COLUMNS {
            if let Some(s) = take_best(&mut pool, |c| !c.level2 && c.row[j] == 1 && c.h > head.h) {
                or_into(&mut cov, &s.row);
                level3.push(s.id);
            }
        }

        let coverage_gap = (0..COVERAGE_COLUMNS).any(|j| options.required[j] == 1 && cov[j] == 0);
        trees.push(SensorTree {
            level1: imu.to_string(),
            level2: vec![head.id],
            level3,
            coverage: cov,
            coverage_gap,
        });
    }
    Ok(trees)
}

/// Decides when credibility has moved enough to warrant rebuilding trees.
#[derive(Clone, Debug, PartialEq)]
pub struct RebuildMonitor {
    band: f64,
    reference: Option<BTreeMap<String, f64>>,
}

impl Default for RebuildMonitor {
    fn default() -> Self {
        RebuildMonitor {
            band: 0.2,
            reference: None,
        }
    }
}

impl RebuildMonitor {
    pub fn new(band: f64) -> Result<Self> {
        if !(band.is_finite() && band >= 0.0) {
            return invalid("hysteresis band must be non-negative");
        }
        Ok(RebuildMonitor {
            band,
            reference: None,
        })
    }

    /// Returns true on the first call and whenever any index leaves the
    /// band around the value recorded at the last rebuild.
    pub fn update(&mut self, current: &[(String, f64)]) -> bool {
        let changed = match &self.reference {
            None => true,
            Some(r) => {
                r.len() != current.len()
                    || current.iter().any(|(id, h)| match r.get(id) {
                        None => true,
                        Some(h0) => (h - h0).abs() > self.band * h0.abs(),
                    })
            }
        };
        if changed {
            self.reference = Some(current.iter().cloned().collect());
        }
        changed
    }
}
