//! Multiple imputation of the censoring times of event subjects.
//!
//! Each missing `C_i` is drawn from the estimated conditional law
//! `P(C > t | C > T_i) = G(t)/G(T_i)` by inverse transform, producing
//! augmented, censoring-complete datasets.

use rand::Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censoring::{self, known_time, CensoringSurvival};
use crate::data::{Completeness, Dataset, Record};
use crate::error::{Error, Result};
use crate::risk::NewtonOptions;
use crate::rng::{self, role, Stream};
use crate::step::StepFunction;

/// How the censoring survival is estimated before drawing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ImputationMethod {
    KaplanMeier,
    Cox,
    /// Straight line through `(0, 1)` and the Kaplan–Meier value at `anchor`.
    Uniform { anchor: f64 },
    /// Weibull matched to the Kaplan–Meier curve at two anchors.
    Weibull { anchor1: f64, anchor2: f64 },
}

impl ImputationMethod {
    pub fn fit(&self, dataset: &Dataset, opts: &NewtonOptions) -> Result<CensoringSurvival> {
        match *self {
            Self::KaplanMeier => censoring::km_censoring(dataset),
            Self::Cox => censoring::cox_censoring(dataset, opts),
            Self::Uniform { anchor } => {
                censoring::fit_uniform_from_km(&censoring::km_curve(dataset)?, anchor, dataset.horizon())
            }
            Self::Weibull { anchor1, anchor2 } => {
                censoring::fit_weibull_from_km(&censoring::km_curve(dataset)?, anchor1, anchor2)
            }
        }
    }
}

/// Value used when the conditional survival never falls to `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRule {
    #[default]
    LargestObservedTime,
    Horizon,
}

impl TailRule {
    /// Tail value for an event at `t_event`, pushed past `t_event` when needed
    /// so the imputed time stays strictly later.
    pub fn value(self, dataset: &Dataset, t_event: f64) -> f64 {
        let candidates = match self {
            Self::LargestObservedTime => [dataset.largest_time(), dataset.horizon()],
            Self::Horizon => [dataset.horizon(), dataset.horizon()],
        };
        candidates.into_iter().find(|&c| c > t_event).unwrap_or_else(|| t_event.next_up())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    pub method: ImputationMethod,
    pub m: usize,
    pub seed: u64,
    pub tail_rule: TailRule,
}

impl ImputationConfig {
    pub fn new(method: ImputationMethod, seed: u64) -> Self {
        Self { method, m: 10_000, seed, tail_rule: TailRule::default() }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_tail_rule(mut self, tail_rule: TailRule) -> Self {
        self.tail_rule = tail_rule;
        self
    }
}

/// Smallest `t > T` with `G(t)/G(T) ≤ u`, or `tail` when there is none.
pub fn conditional_draw(g: &CensoringSurvival, record: &Record, u: f64, tail: f64) -> Result<f64> {
    let t_event = record.time;
    let zero_mass = || Error::ZeroConditioningMass { id: record.id.clone() };
    let g_t = g.surv_for(t_event, record)?;
    if !(g_t > 0.0) {
        return Err(zero_mass());
    }
    let drawn = match g {
        CensoringSurvival::Uniform { c } => Some(c - u * (c - t_event)),
        CensoringSurvival::Weibull { shape, scale } => {
            Some(scale * ((t_event / scale).powf(*shape) - u.ln()).powf(1.0 / shape))
        }
        CensoringSurvival::KaplanMeier { curve } => walk(curve, g, record, u * g_t)?,
        CensoringSurvival::CoxCensoring { baseline_cumhaz, .. } => walk(baseline_cumhaz, g, record, u * g_t)?,
        CensoringSurvival::Known { times } => Some(known_time(times, record)?),
    };
    Ok(match drawn {
        Some(t) if t > t_event => t,
        _ => tail,
    })
}

/// First jump after the event time where the survival is at most `level`.
fn walk(steps: &StepFunction, g: &CensoringSurvival, record: &Record, level: f64) -> Result<Option<f64>> {
    let times = steps.jump_times();
    let start = times.partition_point(|&t| t <= record.time);
    for &t in &times[start..] {
        if g.surv_for(t, record)? <= level {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// One censoring time per record (`None` for records that are not events),
/// consuming one uniform per event record in record order.
pub(crate) fn draw_cens_times(
    dataset: &Dataset,
    g: &CensoringSurvival,
    tail_rule: TailRule,
    stream: &mut Stream,
) -> Result<Vec<Option<f64>>> {
    dataset
        .records()
        .iter()
        .map(|r| {
            if !r.is_event() {
                return Ok(r.cens_time);
            }
            let u: f64 = stream.sample(Open01);
            conditional_draw(g, r, u, tail_rule.value(dataset, r.time)).map(Some)
        })
        .collect()
}

/// Augments `dataset` once; `m` is the 1-based imputation index.
pub fn impute_once(
    dataset: &Dataset,
    g: &CensoringSurvival,
    tail_rule: TailRule,
    m: usize,
    stream: &mut Stream,
) -> Result<Dataset> {
    let cens = draw_cens_times(dataset, g, tail_rule, stream)?;
    Ok(dataset.augment(&cens, Completeness::Augmented(m)))
}

pub(crate) fn impute_stream(seed: u64, m: usize) -> Stream {
    rng::stream(seed, role::IMPUTE, m as u64)
}

/// Censoring times of all `M` augmentations, without building datasets.
pub(crate) fn impute_cens_times(
    dataset: &Dataset,
    g: &CensoringSurvival,
    config: &ImputationConfig,
) -> Result<Vec<Vec<Option<f64>>>> {
    if config.m == 0 {
        return Err(Error::InvalidSize("the number of imputations must be at least 1".into()));
    }
    (1..=config.m)
        .into_par_iter()
        .map(|m| draw_cens_times(dataset, g, config.tail_rule, &mut impute_stream(config.seed, m)))
        .collect()
}

/// `M` augmented datasets; the `m`-th uses stream `(seed, "impute", m)`.
pub fn impute_many(dataset: &Dataset, g: &CensoringSurvival, config: &ImputationConfig) -> Result<Vec<Dataset>> {
    let all = impute_cens_times(dataset, g, config)?;
    Ok(all.iter().enumerate().map(|(i, c)| dataset.augment(c, Completeness::Augmented(i + 1))).collect())
}
