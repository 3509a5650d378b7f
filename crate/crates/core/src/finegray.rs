//! Fine-Gray estimation from censoring-complete data.
//!
//! With the censoring time known for every subject, the subdistribution risk
//! set at `t` holds everyone who is still event-free and uncensored, plus the
//! subjects with a competing event before `t` whose censoring time is still
//! ahead. That is a classical risk set with exit time `C` for competing
//! events and `min(T, C)` otherwise.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::risk::{self, NewtonOptions, RiskSets};
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Cc,
    Ipcw,
}

/// A converged Fine-Gray fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineGrayFit {
    pub method: FitMethod,
    pub beta_hat: Vec<f64>,
    /// Observed information at `beta_hat`, `p × p` row-major.
    pub information: Vec<f64>,
    pub breslow: StepFunction,
    pub iterations: usize,
    pub converged: bool,
    pub score_norm: f64,
    pub log_likelihood: f64,
    #[serde(skip)]
    pub(crate) inverse_information: Vec<f64>,
}

impl FineGrayFit {
    pub fn dim(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn cif(&self, z: &[f64]) -> StepFunction {
        cif(&self.beta_hat, &self.breslow, z)
    }

    /// Inverse of the information on the identifiable coordinates.
    pub fn inverse_information(&self) -> &[f64] {
        &self.inverse_information
    }
}

/// Censoring-complete at-risk indicator `Y(t)`.
pub fn cc_at_risk(record: &Record, t: f64) -> bool {
    t <= cc_exit_time(record, record.cens_time)
}

fn cc_exit_time(record: &Record, cens_time: Option<f64>) -> f64 {
    if record.status >= 2 {
        cens_time.unwrap_or(record.time)
    } else {
        record.time
    }
}

/// Builds the risk sets, optionally overriding the censoring times of event
/// records (used when fitting many imputations of one dataset).
pub(crate) fn cc_risk_sets(dataset: &Dataset, cens_override: Option<&[Option<f64>]>) -> Result<RiskSets> {
    let p = dataset.dim();
    let n = dataset.len();
    let mut z = Vec::with_capacity(n * p);
    let mut exits = Vec::with_capacity(n);
    let mut events = Vec::new();
    for (i, r) in dataset.records().iter().enumerate() {
        z.extend_from_slice(&r.covariates);
        let cens = match cens_override {
            Some(c) if r.is_event() => c[i],
            _ => r.cens_time,
        };
        if r.status >= 2 && cens.is_none() {
            return Err(Error::MissingCensoringTime { row: i + 1, id: r.id.clone() });
        }
        exits.push(cc_exit_time(r, cens));
        if r.status == 1 {
            events.push((r.time, i));
        }
    }
    Ok(RiskSets::new(p, z, &events, exits, Vec::new(), |_| 1.0, false))
}

pub fn log_partial_likelihood(dataset: &Dataset, beta: &[f64]) -> Result<f64> {
    let rs = cc_risk_sets(dataset, None)?;
    if rs.event_times().is_empty() {
        return Err(Error::NoCause1Events);
    }
    Ok(rs.evaluate(beta, 0, f64::INFINITY)?.loglik)
}

pub fn score(dataset: &Dataset, beta: &[f64]) -> Result<Vec<f64>> {
    let rs = cc_risk_sets(dataset, None)?;
    if rs.event_times().is_empty() {
        return Err(Error::NoCause1Events);
    }
    Ok(rs.evaluate(beta, 1, f64::INFINITY)?.score)
}

/// Negative Hessian of the log partial likelihood, `p × p` row-major.
pub fn information_matrix(dataset: &Dataset, beta: &[f64]) -> Result<Vec<f64>> {
    let rs = cc_risk_sets(dataset, None)?;
    if rs.event_times().is_empty() {
        return Err(Error::NoCause1Events);
    }
    Ok(rs.evaluate(beta, 2, f64::INFINITY)?.info)
}

pub fn breslow_cc(dataset: &Dataset, beta: &[f64]) -> Result<StepFunction> {
    cc_risk_sets(dataset, None)?.breslow(beta)
}

/// Maximum partial likelihood fit. `init` defaults to zero.
pub fn fit_mple(dataset: &Dataset, init: Option<&[f64]>, opts: &NewtonOptions) -> Result<FineGrayFit> {
    let rs = cc_risk_sets(dataset, None)?;
    fit_risk_sets(&rs, init, opts, FitMethod::Cc)
}

pub(crate) fn fit_risk_sets(
    rs: &RiskSets,
    init: Option<&[f64]>,
    opts: &NewtonOptions,
    method: FitMethod,
) -> Result<FineGrayFit> {
    let zeros = vec![0.0; rs.dim()];
    let out = risk::newton(rs, init.unwrap_or(&zeros), opts)?;
    let breslow = rs.breslow(&out.beta)?;
    Ok(FineGrayFit {
        method,
        beta_hat: out.beta,
        information: out.information,
        breslow,
        iterations: out.iterations,
        converged: true,
        score_norm: out.score_norm,
        log_likelihood: out.loglik,
        inverse_information: out.inverse_information,
    })
}

/// `F(t | z) = 1 − exp(−exp(zᵀβ) A(t))`.
pub fn cif(beta: &[f64], breslow: &StepFunction, z: &[f64]) -> StepFunction {
    let risk = risk::dot(z, beta).exp();
    breslow.map(|a| 1.0 - (-risk * a).exp())
}
