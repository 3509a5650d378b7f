//! Resampling building blocks: multipliers, subsample draws of augmented
//! datasets, Efron resamples, sup statistics and curve averages.

mod bands;
mod wild;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{order_statistic, BandInterval, Dataset, Record};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::step::{shifted_mean, union_jump_times, StepFunction};

pub use bands::{
    band_grid, bipcw_band, bipcw_band_with, cc_band, cc_band_with, wb_mi_band, BandMethod, BandResult, BandSettings,
    CenterRule, MiEnsemble,
};
pub use wild::{wb_refit_cc, WildBasis, WildRefit};

/// One standard normal multiplier per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierVector {
    pub g: Vec<f64>,
}

pub fn draw_multipliers(n: usize, stream: &mut Stream) -> Result<MultiplierVector> {
    if n == 0 {
        return Err(Error::InvalidSize("cannot draw multipliers for zero subjects".into()));
    }
    Ok(MultiplierVector { g: (0..n).map(|_| stream.sample(StandardNormal)).collect() })
}

/// `I` indices drawn uniformly with replacement from `1..=M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleDraw {
    pub m: usize,
    pub pi: Vec<usize>,
}

impl SubsampleDraw {
    /// `X[l][m]`: whether the `l`-th selection picked dataset `m` (both 0-based).
    pub fn indicator(&self, l: usize, m: usize) -> f64 {
        if self.pi[l] == m + 1 {
            1.0
        } else {
            0.0
        }
    }

    /// Multiplicity of each dataset, a multinomial `(I; 1/M, …, 1/M)` vector.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.m];
        for &k in &self.pi {
            c[k - 1] += 1;
        }
        c
    }
}

pub fn draw_subsample(m: usize, i: usize, stream: &mut Stream) -> Result<SubsampleDraw> {
    if m == 0 || i == 0 {
        return Err(Error::InvalidSize(format!("subsample of {i} from {m} datasets")));
    }
    Ok(SubsampleDraw { m, pi: (0..i).map(|_| stream.random_range(1..=m)).collect() })
}

/// `⌈(1−α)B⌉`-th order statistic of the sup statistics.
pub fn band_quantile(sups: &[f64], alpha: f64) -> Result<f64> {
    if sups.is_empty() {
        return Err(Error::EmptySups);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut sorted = sups.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(order_statistic(&sorted, 1.0 - alpha))
}

/// `sup |√n (a − b)|` over `[t1, t2]`, attained at `t1` or at a jump inside.
pub fn sup_stat(a: &StepFunction, b: &StepFunction, interval: BandInterval, n: usize) -> f64 {
    let mut points = vec![interval.t1, interval.t2];
    points.extend(union_jump_times([a, b]).into_iter().filter(|&t| interval.contains(t)));
    let sqrt_n = (n as f64).sqrt();
    points.iter().map(|&t| (sqrt_n * (a.eval(t) - b.eval(t))).abs()).fold(0.0, f64::max)
}

/// Pointwise mean of step functions on the union of their jumps.
pub fn mi_pointwise_mean(curves: &[StepFunction]) -> Result<StepFunction> {
    mean_of(curves.iter())
}

/// Mean of the selected curves, counted with multiplicity.
pub fn mi_center(curves: &[StepFunction], draw: &SubsampleDraw) -> Result<StepFunction> {
    if draw.m != curves.len() {
        return Err(Error::InvalidSize(format!("draw over {} datasets, {} curves given", draw.m, curves.len())));
    }
    mean_of(draw.pi.iter().map(|&k| &curves[k - 1]))
}

fn mean_of<'a>(curves: impl Iterator<Item = &'a StepFunction> + Clone) -> Result<StepFunction> {
    let list: Vec<&StepFunction> = curves.collect();
    if list.is_empty() {
        return Err(Error::EmptyList);
    }
    let times = union_jump_times(list.iter().copied());
    let initial = shifted_mean(list.iter().map(|c| c.initial_value()));
    let values = times.iter().map(|&t| shifted_mean(list.iter().map(|c| c.eval(t)))).collect();
    StepFunction::new(initial, times, values)
}

/// Draws `n` records with replacement; repeated records get ids `id#k`.
pub fn efron_resample(dataset: &Dataset, stream: &mut Stream) -> Result<Dataset> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let source = dataset.records();
    let mut seen = vec![0usize; n];
    let records: Vec<Record> = (0..n)
        .map(|_| {
            let k = stream.random_range(0..n);
            seen[k] += 1;
            let r = &source[k];
            Record { id: format!("{}#{}", r.id, seen[k]), ..r.clone() }
        })
        .collect();
    Dataset::new(records, dataset.completeness(), Some(dataset.horizon()))
}
