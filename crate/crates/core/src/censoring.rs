//! Estimators of the censoring survival function `G(t) = P(C > t)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::risk::{self, NewtonOptions, RiskSets};
use crate::step::StepFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum CensoringSurvival {
    KaplanMeier { curve: StepFunction },
    /// `G(t | z) = exp(−exp(zᵀβ_c) Λ₀(t))`.
    CoxCensoring { beta_c: Vec<f64>, baseline_cumhaz: StepFunction },
    Uniform { c: f64 },
    Weibull { shape: f64, scale: f64 },
    /// Point mass at a known censoring time per subject id.
    Known { times: BTreeMap<String, f64> },
}

/// Kaplan–Meier estimate of the censoring survival: censorings are the
/// events, observed events act as censorings of `C`.
pub fn km_curve(dataset: &Dataset) -> Result<StepFunction> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let records = dataset.records();
    let n = records.len();
    let mut surv = 1.0;
    let mut pairs = Vec::new();
    let mut i = 0;
    while i < n {
        let t = records[i].time;
        let at_risk = n - i;
        let mut j = i;
        let mut censored = 0usize;
        while j < n && records[j].time == t {
            if records[j].status == 0 {
                censored += 1;
            }
            j += 1;
        }
        if censored > 0 {
            surv *= 1.0 - censored as f64 / at_risk as f64;
            pairs.push((t, surv));
        }
        i = j;
    }
    Ok(StepFunction::from_sorted_pairs(1.0, pairs))
}

pub fn km_censoring(dataset: &Dataset) -> Result<CensoringSurvival> {
    Ok(CensoringSurvival::KaplanMeier { curve: km_curve(dataset)? })
}

fn cox_censoring_risk_sets(dataset: &Dataset) -> RiskSets {
    let p = dataset.dim();
    let mut z = Vec::with_capacity(dataset.len() * p);
    let mut exits = Vec::with_capacity(dataset.len());
    let mut events = Vec::new();
    for (i, r) in dataset.records().iter().enumerate() {
        z.extend_from_slice(&r.covariates);
        exits.push(r.time);
        if r.status == 0 {
            events.push((r.time, i));
        }
    }
    RiskSets::new(p, z, &events, exits, Vec::new(), |_| 1.0, false)
}

/// Log partial likelihood of the censoring Cox model (censorings are events).
pub fn cox_censoring_loglik(dataset: &Dataset, beta: &[f64]) -> Result<f64> {
    Ok(cox_censoring_risk_sets(dataset).evaluate(beta, 0, f64::INFINITY)?.loglik)
}

/// Cox model for the censoring times, Breslow ties and baseline.
pub fn cox_censoring(dataset: &Dataset, opts: &NewtonOptions) -> Result<CensoringSurvival> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rs = cox_censoring_risk_sets(dataset);
    if rs.event_times().is_empty() {
        return Err(Error::InvalidArgument("the Cox censoring model needs at least one censoring".into()));
    }
    let out = risk::newton(&rs, &vec![0.0; rs.dim()], opts)?;
    let baseline_cumhaz = rs.breslow(&out.beta)?;
    Ok(CensoringSurvival::CoxCensoring { beta_c: out.beta, baseline_cumhaz })
}

/// Uniform `U(0, c)` whose survival line passes through `(0, 1)` and
/// `(t_anchor, km(t_anchor))`, capped at `horizon`.
pub fn fit_uniform_from_km(km: &StepFunction, t_anchor: f64, horizon: f64) -> Result<CensoringSurvival> {
    let value = km.eval(t_anchor);
    if !(value < 1.0) || !(t_anchor > 0.0) {
        return Err(Error::DegenerateAnchor { anchor: t_anchor, value });
    }
    let c = t_anchor / (1.0 - value);
    Ok(CensoringSurvival::Uniform { c: c.min(horizon) })
}

/// Weibull matching the Kaplan–Meier curve at two anchor times.
pub fn fit_weibull_from_km(km: &StepFunction, anchor1: f64, anchor2: f64) -> Result<CensoringSurvival> {
    let (a1, a2) = if anchor1 < anchor2 { (anchor1, anchor2) } else { (anchor2, anchor1) };
    let (g1, g2) = (km.eval(a1), km.eval(a2));
    for (a, g) in [(a1, g1), (a2, g2)] {
        if !(g > 0.0 && g < 1.0) || !(a > 0.0) {
            return Err(Error::DegenerateAnchor { anchor: a, value: g });
        }
    }
    // −ln G(a) = (a / scale)^shape at both anchors
    let (h1, h2) = (-g1.ln(), -g2.ln());
    if !(h2 > h1) {
        return Err(Error::DegenerateAnchor { anchor: a2, value: g2 });
    }
    let shape = (h2 / h1).ln() / (a2 / a1).ln();
    let scale = a1 / h1.powf(1.0 / shape);
    Ok(CensoringSurvival::Weibull { shape, scale })
}

impl CensoringSurvival {
    pub fn surv_eval(&self, t: f64, z: Option<&[f64]>) -> Result<f64> {
        Ok(match self {
            Self::KaplanMeier { curve } => curve.eval(t),
            Self::CoxCensoring { beta_c, baseline_cumhaz } => {
                let z = z.ok_or(Error::MissingCovariates)?;
                (-risk::dot(z, beta_c).exp() * baseline_cumhaz.eval(t)).exp()
            }
            Self::Uniform { c } => (1.0 - t / c).max(0.0),
            Self::Weibull { shape, scale } => (-(t / scale).powf(*shape)).exp(),
            Self::Known { .. } => return Err(Error::MissingSubject),
        })
    }

    /// Survival for a specific subject.
    pub fn surv_for(&self, t: f64, record: &Record) -> Result<f64> {
        match self {
            Self::Known { times } => {
                let c = known_time(times, record)?;
                Ok(if t < c { 1.0 } else { 0.0 })
            }
            _ => self.surv_eval(t, Some(&record.covariates)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::KaplanMeier { .. } => "km",
            Self::CoxCensoring { .. } => "cox",
            Self::Uniform { .. } => "uniform",
            Self::Weibull { .. } => "weibull",
            Self::Known { .. } => "known",
        }
    }
}

pub(crate) fn known_time(times: &BTreeMap<String, f64>, record: &Record) -> Result<f64> {
    times.get(&record.id).copied().ok_or_else(|| Error::InvalidArgument(format!("no known censoring time for `{}`", record.id)))
}
