//! Interacting multiple model layer over a shared prediction reference.
//!
//! All submodels share one nominal state and one propagation; each keeps
//! only its own error mean and covariance relative to that nominal. That
//! makes mixing and fusion plain linear operations on error vectors.
//!
//! One [`Imm::step`] runs, in order: transition rebuild, mixing, shared
//! propagation, per-model joint updates, likelihoods, probability update,
//! fusion and feedback.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::ins::{ImuSample, NavState, NoiseConfig};
use crate::riekf::{
    innovation_of, symmetrize, update, ErrorConvention, FilterState, InnovationReport,
    LinearizedMeasurement, MeasurementModel,
};
use crate::{esekf, ins, manifold};

pub const DEFAULT_MU_FLOOR: f64 = 1e-6;

/// Row-stochastic model transition matrix; entry `(i, j)` is the
/// probability of switching from model `i` to model `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix(DMatrix<f64>);

impl TransitionMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return invalid("transition matrix must be square and non-empty");
        }
        if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("transition probabilities must lie in [0, 1]");
        }
        for r in m.row_iter() {
            if (r.sum() - 1.0).abs() > 1e-12 {
                return invalid("transition matrix rows must sum to one");
            }
        }
        Ok(TransitionMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        TransitionMatrix(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[(from, to)]
    }
}

/// Transition matrix from per-submodel sensor credibility.
///
/// `ωᵢ` is the mean `H` of submodel `i`; the diagonal is `b · ωᵢ / Σω` and
/// the remainder of each row is spread evenly.
pub fn build_transition(h_values: &[Vec<f64>], baseline: f64) -> Result<TransitionMatrix> {
    let n = h_values.len();
    if n < 2 {
        return invalid("transition matrix needs at least two submodels");
    }
    if !(baseline > 0.0 && baseline <= 1.0) {
        return invalid(format!("baseline probability {baseline} outside (0, 1]"));
    }
    let mut omega = Vec::with_capacity(n);
    for (i, h) in h_values.iter().enumerate() {
        if h.is_empty() {
            return invalid(format!("submodel {i} has no sensors"));
        }
        if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("credibility values must be non-negative");
        }
        omega.push(h.iter().sum::<f64>() / h.len() as f64);
    }
    let total: f64 = omega.iter().sum();
    if total <= 0.0 {
        return invalid("no submodel has positive credibility");
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let stay = baseline * omega[i] / total;
        let leave = (1.0 - stay) / (n - 1) as f64;
        for j in 0..n {
            m[(i, j)] = if i == j { stay } else { leave };
        }
    }
    TransitionMatrix::new(m)
}

/// Gaussian log-density of innovation `y` under covariance `s`.
pub fn likelihood(y: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let report = crate::riekf::innovation_report(y.clone(), s.clone()).map_err(|e| match e {
        Error::DegenerateMeasurement { .. } => Error::NotPositiveDefinite,
        other => other,
    })?;
    Ok(log_likelihood(&report))
}

pub fn log_likelihood(report: &InnovationReport) -> f64 {
    let m = report.dim() as f64;
    -0.5 * (m * (2.0 * std::f64::consts::PI).ln() + report.log_det() + report.statistic)
}

/// Result of the interaction step for one receiving model.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixed {
    pub filter: FilterState,
    /// Predicted prior probability `μ̂ᵢ = Σⱼ πⱼᵢ μⱼ`.
    pub prior: f64,
}

/// Mixes per-model error estimates.
pub fn mix(
    filters: &[FilterState],
    mu: &[f64],
    transition: &TransitionMatrix,
) -> Result<Vec<Mixed>> {
    let n = filters.len();
    if mu.len() != n || transition.dim() != n {
        return invalid("mixing inputs disagree on model count");
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prior: f64 = (0..n).map(|j| transition.get(j, i) * mu[j]).sum();
        if prior < 1e-300 {
            return Err(Error::NumericalDegeneracy(format!(
                "predicted probability of model {i} vanished"
            )));
        }
        let w: Vec<f64> = (0..n)
            .map(|j| transition.get(j, i) * mu[j] / prior)
            .collect();
        let weighted = filters.iter().zip(&w).map(|(f, wj)| (f, *wj));
        let (delta, cov) = moment_match(weighted);
        out.push(Mixed {
            filter: FilterState { delta, cov },
            prior,
        });
    }
    Ok(out)
}

/// Weighted mean and covariance including the spread of the means.
fn moment_match<'a>(
    parts: impl Iterator<Item = (&'a FilterState, f64)> + Clone,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean: Option<DVector<f64>> = None;
    for (f, w) in parts.clone() {
        match &mut mean {
            None => mean = Some(&f.delta * w),
            Some(m) => *m += &f.delta * w,
        }
    }
    let mean = mean.expect("at least one model");
    let n = mean.len();
    let mut cov = DMatrix::zeros(n, n);
    for (f, w) in parts {
        let d = &f.delta - &mean;
        cov += (&f.cov + &d * d.transpose()) * w;
    }
    (mean, symmetrize(&cov))
}

/// Combines prior probabilities with log-likelihoods.
///
/// `None` marks a model without measurements this epoch. If some model
/// did observe, unobserved ones score `ln μ_floor`; if none did, the prior
/// is returned unchanged.
pub fn update_probabilities(prior: &[f64], log_l: &[Option<f64>], floor: f64) -> Result<Vec<f64>> {
    let n = prior.len();
    if log_l.len() != n || n == 0 {
        return invalid("probability update inputs disagree on model count");
    }
    if !(floor > 0.0 && floor * n as f64 <= 1.0) {
        return invalid(format!(
            "probability floor {floor} is not usable for {n} models"
        ));
    }
    let mu: Vec<f64> = if log_l.iter().all(Option::is_none) {
        prior.to_vec()
    } else {
        let lw: Vec<f64> = prior
            .iter()
            .zip(log_l)
            .map(|(p, l)| p.ln() + l.unwrap_or(floor.ln()))
            .collect();
        let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NumericalDegeneracy(
                "log-likelihoods are not finite".into(),
            ));
        }
        let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    };
    Ok(apply_floor(mu, floor))
}

/// Raises entries below `floor` to it and rescales the rest so the vector
/// stays on the simplex.
fn apply_floor(mut mu: Vec<f64>, floor: f64) -> Vec<f64> {
    let n = mu.len();
    let mut pinned = vec![false; n];
    loop {
        let mut changed = false;
        for i in 0..n {
            if !pinned[i] && mu[i] < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        let k = pinned.iter().filter(|p| **p).count();
        let free: f64 = (0..n).filter(|i| !pinned[*i]).map(|i| mu[i]).sum();
        let target = 1.0 - k as f64 * floor;
        for i in 0..n {
            mu[i] = if pinned[i] {
                floor
            } else {
                mu[i] * target / free
            };
        }
        if !changed {
            return mu;
        }
    }
}

/// Probability-weighted fused error state and covariance.
pub fn fuse(filters: &[FilterState], mu: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if filters.is_empty() || filters.len() != mu.len() {
        return invalid("fusion inputs disagree on model count");
    }
    Ok(moment_match(filters.iter().zip(mu.iter().copied())))
}

/// Nominal-state propagation shared by every submodel.
pub trait SharedProcess {
    type Nominal: Clone;
    type Input;

    fn dim(&self) -> usize;

    /// Propagates `nominal` over `inputs` up to `end_time` and returns the
    /// error transition and process noise accumulated across the slice.
    fn predict(
        &self,
        nominal: &Self::Nominal,
        inputs: &[Self::Input],
        end_time: f64,
    ) -> Result<(Self::Nominal, DMatrix<f64>, DMatrix<f64>)>;

    /// Applies an error correction to the nominal state.
    fn correct(&self, nominal: &Self::Nominal, delta: &DVector<f64>) -> Result<Self::Nominal>;
}

pub trait Measurement<P: SharedProcess> {
    fn linearize(&self, process: &P, nominal: &P::Nominal) -> Result<LinearizedMeasurement>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImmConfig {
    pub mu_floor: f64,
    /// Baseline probability `b` of the transition matrix.
    pub baseline: f64,
}

impl Default for ImmConfig {
    fn default() -> Self {
        ImmConfig {
            mu_floor: DEFAULT_MU_FLOOR,
            baseline: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    pub transition: TransitionMatrix,
    pub prior: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_likelihoods: Vec<Option<f64>>,
    pub reports: Vec<Option<InnovationReport>>,
    /// Fused covariance after feedback.
    pub covariance: DMatrix<f64>,
}

#[derive(Clone)]
pub struct Imm<P: SharedProcess> {
    process: P,
    nominal: P::Nominal,
    filters: Vec<FilterState>,
    mu: Vec<f64>,
    transition: TransitionMatrix,
    config: ImmConfig,
    covariance: DMatrix<f64>,
}

impl<P: SharedProcess> Imm<P> {
    /// Creates a bank of `n` submodels sharing `nominal`, each starting with
    /// zero error, covariance `p0` and uniform probability.
    pub fn new(
        process: P,
        nominal: P::Nominal,
        p0: DMatrix<f64>,
        n: usize,
        config: ImmConfig,
    ) -> Result<Self> {
        if n == 0 {
            return invalid("bank needs at least one submodel");
        }
        if p0.nrows() != process.dim() {
            return invalid("initial covariance does not match process dimension");
        }
        if !(config.mu_floor > 0.0 && config.mu_floor * n as f64 <= 1.0) {
            return invalid("probability floor is not usable for this bank");
        }
        let f = FilterState::new(p0.clone())?;
        Ok(Imm {
            process,
            nominal,
            filters: vec![f; n],
            mu: vec![1.0 / n as f64; n],
            transition: TransitionMatrix::identity(n),
            config,
            covariance: p0,
        })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn nominal(&self) -> &P::Nominal {
        &self.nominal
    }

    pub fn process(&self) -> &P {
        &self.process
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.mu
    }

    pub fn filters(&self) -> &[FilterState] {
        &self.filters
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn set_probabilities(&mut self, mu: Vec<f64>) -> Result<()> {
        if mu.len() != self.len()
            || (mu.iter().sum::<f64>() - 1.0).abs() > 1e-12
            || mu.iter().any(|m| *m < self.config.mu_floor)
        {
            return invalid("probabilities must be on the floored simplex");
        }
        self.mu = mu;
        Ok(())
    }

    /// Runs one epoch with `π` rebuilt from per-submodel credibility.
    ///
    /// If every submodel has zero credibility the previous `π` is kept.
    pub fn step<M: Measurement<P>>(
        &mut self,
        inputs: &[P::Input],
        end_time: f64,
        measurements: &[Vec<M>],
        credibility: &[Vec<f64>],
    ) -> Result<StepDiagnostics> {
        let transition = if self.len() == 1 {
            TransitionMatrix::identity(1)
        } else {
            let any_positive = credibility.iter().flatten().any(|h| *h > 0.0);
            if any_positive {
                build_transition(credibility, self.config.baseline)?
            } else {
                self.transition.clone()
            }
        };
        self.step_with_transition(inputs, end_time, measurements, transition)
    }

    pub fn step_with_transition<M: Measurement<P>>(
        &mut self,
        inputs: &[P::Input],
        end_time: f64,
        measurements: &[Vec<M>],
        transition: TransitionMatrix,
    ) -> Result<StepDiagnostics> {
        let n = self.len();
        if measurements.len() != n || transition.dim() != n {
            return invalid("step inputs disagree on model count");
        }

        let transition = regularize(transition, self.config.mu_floor);
        let mixed = mix(&self.filters, &self.mu, &transition)?;
        let prior: Vec<f64> = mixed.iter().map(|m| m.prior).collect();

        let (nominal, phi, q) = self.process.predict(&self.nominal, inputs, end_time)?;
        let mut filters: Vec<FilterState> = mixed
            .into_iter()
            .map(|m| FilterState {
                delta: &phi * m.filter.delta,
                cov: symmetrize(&(&phi * &m.filter.cov * phi.transpose() + &q)),
            })
            .collect();

        let mut log_l = vec![None; n];
        let mut reports = vec![None; n];
        for (i, ms) in measurements.iter().enumerate() {
            if ms.is_empty() {
                continue;
            }
            let parts = ms
                .iter()
                .map(|m| m.linearize(&self.process, &nominal))
                .collect::<Result<Vec<_>>>()?;
            let joint = LinearizedMeasurement::stack(&parts)?;
            let report = innovation_of(&filters[i], &joint)?;
            filters[i] = update(&filters[i], &report, &joint)?;
            log_l[i] = Some(log_likelihood(&report));
            reports[i] = Some(report);
        }

        let mu = update_probabilities(&prior, &log_l, self.config.mu_floor)?;
        let (fused, covariance) = fuse(&filters, &mu)?;

        self.nominal = self.process.correct(&nominal, &fused)?;
        for f in &mut filters {
            f.delta -= &fused;
        }
        self.filters = filters;
        self.mu = mu.clone();
        self.transition = transition.clone();
        self.covariance = covariance.clone();

        Ok(StepDiagnostics {
            transition,
            prior,
            mu,
            log_likelihoods: log_l,
            reports,
            covariance,
        })
    }
}

/// A model nobody can switch into (an all-zero column, which happens with
/// two models when one has zero credibility) would get a zero prior. Such a
/// matrix is blended with a `floor`-sized share of the uniform matrix.
fn regularize(t: TransitionMatrix, floor: f64) -> TransitionMatrix {
    let n = t.dim();
    let dead = t.matrix().column_iter().any(|c| c.sum() < 1e-200);
    if !dead {
        return t;
    }
    let m = t.matrix() * (1.0 - floor) + DMatrix::from_element(n, n, floor / n as f64);
    TransitionMatrix(m)
}

/// Time-invariant linear Gaussian process `x⁺ = Φ x + w`, `w ~ N(0, Q)`.
/// One input corresponds to one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProcess {
    pub phi: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl SharedProcess for LinearProcess {
    type Nominal = DVector<f64>;
    type Input = ();

    fn dim(&self) -> usize {
        self.phi.nrows()
    }

    fn predict(
        &self,
        nominal: &DVector<f64>,
        inputs: &[()],
        _end_time: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let mut x = nominal.clone();
        let mut phi = DMatrix::identity(n, n);
        let mut q = DMatrix::zeros(n, n);
        for _ in inputs {
            x = &self.phi * x;
            q = &self.phi * q * self.phi.transpose() + &self.q;
            phi = &self.phi * phi;
        }
        Ok((x, phi, q))
    }

    fn correct(&self, nominal: &DVector<f64>, delta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(nominal + delta)
    }
}

/// `z = H x + v`, `v ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMeasurement {
    pub z: DVector<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl Measurement<LinearProcess> for LinearMeasurement {
    fn linearize(
        &self,
        _: &LinearProcess,
        nominal: &DVector<f64>,
    ) -> Result<LinearizedMeasurement> {
        Ok(LinearizedMeasurement {
            residual: &self.z - &self.h * nominal,
            jacobian: self.h.clone(),
            noise: self.r.clone(),
        })
    }
}

/// Strapdown propagation of the 15-state navigation filter.
#[derive(Clone, Debug, PartialEq)]
pub struct NavProcess {
    pub noise: NoiseConfig,
    pub convention: ErrorConvention,
}

impl SharedProcess for NavProcess {
    type Nominal = NavState;
    type Input = ImuSample;

    fn dim(&self) -> usize {
        15
    }

    fn predict(
        &self,
        nominal: &NavState,
        inputs: &[ImuSample],
        end_time: f64,
    ) -> Result<(NavState, DMatrix<f64>, DMatrix<f64>)> {
        let (x, phi, q) = match self.convention {
            ErrorConvention::RightInvariant => {
                ins::propagate_slice(nominal, inputs, end_time, &self.noise)?
            }
            ErrorConvention::Standard => {
                esekf::propagate_slice(nominal, inputs, end_time, &self.noise)?
            }
        };
        Ok((
            x,
            DMatrix::from_column_slice(15, 15, phi.as_slice()),
            DMatrix::from_column_slice(15, 15, q.as_slice()),
        ))
    }

    fn correct(&self, nominal: &NavState, delta: &DVector<f64>) -> Result<NavState> {
        if delta.len() != 15 {
            return invalid("navigation correction must have 15 elements");
        }
        let d = manifold::Vector15::from_column_slice(delta.as_slice());
        if d.fixed_rows::<3>(0).norm() >= std::f64::consts::PI {
            return invalid("attitude correction must be below pi");
        }
        match self.convention {
            ErrorConvention::RightInvariant => Ok(manifold::boxplus(nominal, &d)),
            ErrorConvention::Standard => esekf::inject(nominal, &d),
        }
    }
}

/// A GNSS fix to be applied to a navigation submodel.
#[derive(Clone, Debug, PartialEq)]
pub struct GnssObservation {
    pub model: MeasurementModel,
    pub z: DVector<f64>,
}

impl Measurement<NavProcess> for GnssObservation {
    fn linearize(&self, process: &NavProcess, nominal: &NavState) -> Result<LinearizedMeasurement> {
        self.model.linearize(nominal, &self.z, process.convention)
    }
}
