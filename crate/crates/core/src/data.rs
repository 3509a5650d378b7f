//! Records, datasets and the band time interval.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: observed time `min(T, C)`, status (0 = censored, k ≥ 1 =
/// event of cause k), covariates and, when known, the censoring time `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub time: f64,
    pub status: u32,
    pub covariates: Vec<f64>,
    pub cens_time: Option<f64>,
}

impl Record {
    pub fn new(id: impl Into<String>, time: f64, status: u32, covariates: Vec<f64>, cens_time: Option<f64>) -> Self {
        Self { id: id.into(), time, status, covariates, cens_time }
    }

    pub fn is_event(&self) -> bool {
        self.status >= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Completeness {
    Incomplete,
    CensoringComplete,
    /// The `m`-th imputed dataset (1-based).
    Augmented(usize),
}

impl Completeness {
    pub fn is_censoring_complete(self) -> bool {
        !matches!(self, Completeness::Incomplete)
    }
}

/// A validated collection of records, sorted by `(time, status descending, id)`.
///
/// The only way to build one is [`Dataset::new`], so every instance satisfies
/// the record invariants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    records: Vec<Record>,
    completeness: Completeness,
    horizon: f64,
}

fn record_order(a: &Record, b: &Record) -> Ordering {
    a.time
        .total_cmp(&b.time)
        .then(b.status.cmp(&a.status))
        .then_with(|| a.id.cmp(&b.id))
}

impl Dataset {
    /// Validates and sorts. `horizon` defaults to the largest time or
    /// censoring time present.
    pub fn new(mut records: Vec<Record>, completeness: Completeness, horizon: Option<f64>) -> Result<Self> {
        let p = records.first().map_or(0, |r| r.covariates.len());
        for (idx, r) in records.iter().enumerate() {
            let row = idx + 1;
            if !(r.time.is_finite() && r.time >= 0.0) {
                return Err(Error::NegativeTime { row, id: r.id.clone() });
            }
            if r.covariates.len() != p {
                return Err(Error::CovariateLengthMismatch { row, expected: p, found: r.covariates.len() });
            }
            if let Some(c) = r.cens_time {
                if !(c.is_finite() && c >= r.time) {
                    return Err(Error::CensoringBeforeTime { row, time: r.time, cens_time: c });
                }
                if r.status == 0 && c != r.time {
                    return Err(Error::InvalidArgument(format!(
                        "row {row}: censored record `{}` has cens_time {c} different from time {}",
                        r.id, r.time
                    )));
                }
            }
            if completeness.is_censoring_complete() && r.is_event() && r.cens_time.is_none() {
                return Err(Error::MissingCensoringTime { row, id: r.id.clone() });
            }
        }
        let max_time = records
            .iter()
            .flat_map(|r| std::iter::once(r.time).chain(r.cens_time))
            .fold(0.0_f64, f64::max);
        let horizon = horizon.unwrap_or(max_time);
        if !(horizon.is_finite() && horizon > 0.0 || records.is_empty()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if let Some((idx, r)) = records.iter().enumerate().find(|(_, r)| r.time > horizon) {
            return Err(Error::BeyondHorizon { row: idx + 1, time: r.time, horizon });
        }
        records.sort_by(record_order);
        Ok(Self { records, completeness, horizon })
    }

    /// Re-runs validation on an existing dataset.
    pub fn validate(self) -> Result<Self> {
        Self::new(self.records, self.completeness, Some(self.horizon))
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn completeness(&self) -> Completeness {
        self.completeness
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of covariates per record.
    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.covariates.len())
    }

    pub fn largest_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.time)
    }

    /// Observed event times of `cause`, ascending.
    pub fn event_times(&self, cause: u32) -> Vec<f64> {
        self.records.iter().filter(|r| r.status == cause).map(|r| r.time).collect()
    }

    /// Drops the censoring times of event records.
    pub fn degrade_to_incomplete(&self) -> Dataset {
        let records = self
            .records
            .iter()
            .map(|r| Record { cens_time: if r.is_event() { None } else { r.cens_time }, ..r.clone() })
            .collect();
        Dataset { records, completeness: Completeness::Incomplete, horizon: self.horizon }
    }

    /// Replaces censoring times of event records, keeping the record order
    /// (the sort key does not involve `cens_time`).
    pub(crate) fn augment(&self, cens_times: &[Option<f64>], completeness: Completeness) -> Dataset {
        debug_assert_eq!(cens_times.len(), self.records.len());
        let records = self
            .records
            .iter()
            .zip(cens_times)
            .map(|(r, c)| Record { cens_time: if r.is_event() { *c } else { r.cens_time }, ..r.clone() })
            .collect();
        Dataset { records, completeness, horizon: self.horizon }
    }
}

/// The time window `[t1, t2]` on which bands are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandInterval {
    pub t1: f64,
    pub t2: f64,
}

impl BandInterval {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1 <= t2) || t1 < 0.0 {
            return Err(Error::InvalidArgument(format!("invalid band interval [{t1}, {t2}]")));
        }
        Ok(Self { t1, t2 })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t1 <= t && t <= self.t2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalRule {
    /// First and last decile of the observed event times of the cause.
    SingleSample,
    Fixed(f64, f64),
}

/// `⌈p·n⌉`-th order statistic (1-based, clamped to `[1, n]`) of sorted data.
pub fn order_statistic(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // Guard against `p·n` landing a rounding error above an integer.
    let k = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[k - 1]
}

pub fn band_interval(dataset: &Dataset, cause: u32, rule: IntervalRule) -> Result<BandInterval> {
    match rule {
        IntervalRule::SingleSample => {
            let times = dataset.event_times(cause);
            if times.len() < 2 {
                return Err(Error::TooFewEvents { cause, found: times.len() });
            }
            // records are time-sorted, so `times` is too
            let t1 = order_statistic(&times, 0.1).max(times[0]);
            let t2 = order_statistic(&times, 0.9);
            BandInterval::new(t1, t2)
        }
        IntervalRule::Fixed(a, b) => {
            let tau = dataset.horizon();
            BandInterval::new(a.clamp(0.0, tau), b.clamp(0.0, tau))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, time: f64, status: u32, cens: Option<f64>) -> Record {
        Record::new(id, time, status, vec![0.0], cens)
    }

    #[test]
    fn missing_censoring_time_under_censoring_complete() {
        let err = Dataset::new(vec![rec("a", 3.0, 1, None)], Completeness::CensoringComplete, None).unwrap_err();
        assert!(matches!(err, Error::MissingCensoringTime { row: 1, .. }));
    }

    #[test]
    fn incomplete_records_are_time_sorted() {
        let d = Dataset::new(
            vec![rec("a", 5.0, 0, None), rec("b", 2.0, 1, None)],
            Completeness::Incomplete,
            None,
        )
        .unwrap();
        let ids: Vec<&str> = d.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
    }

    #[test]
    fn negative_time_rejected() {
        let err = Dataset::new(vec![rec("a", -1.0, 0, None)], Completeness::Incomplete, None).unwrap_err();
        assert!(matches!(err, Error::NegativeTime { .. }));
    }

    #[test]
    fn covariate_length_mismatch_rejected() {
        let mut bad = rec("b", 1.0, 0, None);
        bad.covariates = vec![1.0, 2.0];
        let err = Dataset::new(vec![rec("a", 1.0, 0, None), bad], Completeness::Incomplete, None).unwrap_err();
        assert!(matches!(err, Error::CovariateLengthMismatch { row: 2, expected: 1, found: 2 }));
    }

    #[test]
    fn events_precede_censorings_at_ties() {
        let d = Dataset::new(
            vec![rec("a", 2.0, 0, None), rec("b", 2.0, 2, None), rec("c", 2.0, 1, None)],
            Completeness::Incomplete,
            None,
        )
        .unwrap();
        let status: Vec<u32> = d.records().iter().map(|r| r.status).collect();
        assert_eq!(status, [2, 1, 0]);
    }

    fn events_at(times: &[f64]) -> Dataset {
        let recs = times.iter().enumerate().map(|(i, &t)| rec(&format!("s{i}"), t, 1, None)).collect();
        Dataset::new(recs, Completeness::Incomplete, None).unwrap()
    }

    #[test]
    fn deciles_by_order_statistic() {
        let times: Vec<f64> = (1..=10).map(f64::from).collect();
        // enumerate: ⌈0.1·10⌉ = 1st, ⌈0.9·10⌉ = 9th order statistic
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let expected = (sorted[0], sorted[8]);
        let iv = band_interval(&events_at(&times), 1, IntervalRule::SingleSample).unwrap();
        assert_eq!((iv.t1, iv.t2), expected);
        assert_eq!((iv.t1, iv.t2), (1.0, 9.0));
    }

    #[test]
    fn degenerate_deciles() {
        let iv = band_interval(&events_at(&[4.0; 5]), 1, IntervalRule::SingleSample).unwrap();
        assert_eq!((iv.t1, iv.t2), (4.0, 4.0));
    }

    #[test]
    fn fixed_interval_clipped_to_horizon() {
        let d = Dataset::new(vec![rec("a", 3.0, 1, None)], Completeness::Incomplete, Some(40.0)).unwrap();
        let iv = band_interval(&d, 1, IntervalRule::Fixed(0.5, 50.0)).unwrap();
        assert_eq!((iv.t1, iv.t2), (0.5, 40.0));
    }

    #[test]
    fn too_few_events() {
        let err = band_interval(&events_at(&[1.0]), 1, IntervalRule::SingleSample).unwrap_err();
        assert!(matches!(err, Error::TooFewEvents { found: 1, .. }));
    }

    proptest! {
        #[test]
        fn validate_is_idempotent(
            rows in prop::collection::vec((0u32..200, 0u32..3, -2.0f64..2.0), 0..30)
        ) {
            let recs: Vec<Record> = rows
                .iter()
                .enumerate()
                .map(|(i, &(t, s, z))| Record::new(format!("r{i}"), f64::from(t) / 4.0, s, vec![z], None))
                .collect();
            let once = Dataset::new(recs, Completeness::Incomplete, Some(100.0)).unwrap();
            let twice = once.clone().validate().unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn single_sample_interval_uses_event_times(
            times in prop::collection::vec(0u32..500, 2..60)
        ) {
            let ts: Vec<f64> = times.iter().map(|&t| f64::from(t) / 10.0).collect();
            let d = events_at(&ts);
            let iv = band_interval(&d, 1, IntervalRule::SingleSample).unwrap();
            prop_assert!(iv.t1 <= iv.t2);
            prop_assert!(ts.contains(&iv.t1));
            prop_assert!(ts.contains(&iv.t2));
        }
    }
}
