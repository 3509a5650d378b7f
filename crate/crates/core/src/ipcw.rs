//! Fine-Gray estimation from incomplete data by inverse probability of
//! censoring weighting.
//!
//! A subject with a competing event at `T` stays in the cause-1 risk set
//! after `T` with weight `G(t−)/G(T−)`, where `G` is the Kaplan–Meier
//! estimate of the censoring survival. Left limits make the weight exactly 1
//! at `t = T`.

use crate::censoring::km_curve;
use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::finegray::{fit_risk_sets, FineGrayFit, FitMethod};
use crate::risk::{NewtonOptions, RiskSets, TailEntry};
use crate::step::StepFunction;

#[derive(Debug, Clone)]
pub struct IpcwContext {
    pub g_hat: StepFunction,
    pub dataset: Dataset,
}

impl IpcwContext {
    /// Fits the Kaplan–Meier censoring survival on `dataset`.
    pub fn new(dataset: Dataset) -> Result<Self> {
        let g_hat = km_curve(&dataset)?;
        Ok(Self { g_hat, dataset })
    }

    pub(crate) fn risk_sets(&self) -> Result<RiskSets> {
        let d = &self.dataset;
        let p = d.dim();
        let mut z = Vec::with_capacity(d.len() * p);
        let mut exits = Vec::with_capacity(d.len());
        let mut events = Vec::new();
        let mut tail = Vec::new();
        for (i, r) in d.records().iter().enumerate() {
            z.extend_from_slice(&r.covariates);
            exits.push(r.time);
            match r.status {
                0 => {}
                1 => events.push((r.time, i)),
                _ => {
                    let g = self.g_hat.left_limit(r.time);
                    if !(g > 0.0) {
                        return Err(Error::ZeroGhat { time: r.time });
                    }
                    tail.push(TailEntry { subject: i, start: r.time, weight: 1.0 / g });
                }
            }
        }
        let g_hat = &self.g_hat;
        Ok(RiskSets::new(p, z, &events, exits, tail, |t| g_hat.left_limit(t), true))
    }
}

/// `r(t) = 1{C ≥ min(T, t)}` from the observed data.
pub fn vitality(record: &Record, t: f64) -> bool {
    record.is_event() || record.time >= t
}

/// `w(t) = r(t) G(t−) / G(min(X, t)−)`.
pub fn ipcw_weight(record: &Record, ctx: &IpcwContext, t: f64) -> Result<f64> {
    if !vitality(record, t) {
        return Ok(0.0);
    }
    if t <= record.time {
        return Ok(1.0);
    }
    let denom = ctx.g_hat.left_limit(record.time);
    if !(denom > 0.0) {
        return Err(Error::ZeroGhat { time: record.time });
    }
    Ok(ctx.g_hat.left_limit(t) / denom)
}

/// Weighted score `Ũ(t, β)` over cause-1 event times `≤ t`.
pub fn ipcw_score(ctx: &IpcwContext, t: f64, beta: &[f64]) -> Result<Vec<f64>> {
    let rs = ctx.risk_sets()?;
    if rs.event_times().is_empty() {
        return Ok(vec![0.0; rs.dim()]);
    }
    Ok(rs.evaluate(beta, 1, t)?.score)
}

/// Weighted log pseudo-likelihood whose gradient is `Ũ(τ, β)`.
pub fn ipcw_log_pseudo_likelihood(ctx: &IpcwContext, beta: &[f64]) -> Result<f64> {
    let rs = ctx.risk_sets()?;
    Ok(rs.evaluate(beta, 0, f64::INFINITY)?.loglik)
}

pub fn fit_mple_ipcw(ctx: &IpcwContext, init: Option<&[f64]>, opts: &NewtonOptions) -> Result<FineGrayFit> {
    let rs = ctx.risk_sets()?;
    fit_risk_sets(&rs, init, opts, FitMethod::Ipcw)
}

pub fn breslow_ipcw(ctx: &IpcwContext, beta: &[f64]) -> Result<StepFunction> {
    ctx.risk_sets()?.breslow(beta)
}
