use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous, piecewise-constant function on `[0, ∞)`.
///
/// The value is `initial_value` on `[0, jump_times[0])` and `values[j]` on
/// `[jump_times[j], jump_times[j + 1])`; the last value extends to infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    initial_value: f64,
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn constant(value: f64) -> Self {
        Self { initial_value: value, jump_times: Vec::new(), values: Vec::new() }
    }

    /// Builds a step function, rejecting unsorted or mismatched input.
    pub fn new(initial_value: f64, jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} jump times but {} values",
                jump_times.len(),
                values.len()
            )));
        }
        if jump_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("jump times must be strictly increasing".into()));
        }
        Ok(Self { initial_value, jump_times, values })
    }

    /// Builds from `(time, value)` pairs sorted by time; equal times keep the
    /// last value.
    pub(crate) fn from_sorted_pairs(initial_value: f64, pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut jump_times: Vec<f64> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (t, v) in pairs {
            match jump_times.last() {
                Some(&last) if last == t => *values.last_mut().unwrap() = v,
                _ => {
                    debug_assert!(jump_times.last().is_none_or(|&l| l < t));
                    jump_times.push(t);
                    values.push(v);
                }
            }
        }
        Self { initial_value, jump_times, values }
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&x| x <= t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    /// Value approached from the left, `f(t−)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&x| x < t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    pub fn last_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial_value)
    }

    /// Applies `f` to every level, keeping the jump positions.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            initial_value: f(self.initial_value),
            jump_times: self.jump_times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Sorted union of the jump times of several step functions.
pub fn union_jump_times<'a>(curves: impl IntoIterator<Item = &'a StepFunction>) -> Vec<f64> {
    let mut all: Vec<f64> = curves.into_iter().flat_map(|c| c.jump_times.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Mean of values that are usually identical or nearly so.
///
/// Accumulates deviations from the first element, so a list of identical
/// values averages to that value bit for bit.
pub(crate) fn shifted_mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let k = values.len();
    let mut it = values;
    let Some(first) = it.next() else { return f64::NAN };
    let dev: f64 = it.map(|v| v - first).sum();
    first + dev / k as f64
}
