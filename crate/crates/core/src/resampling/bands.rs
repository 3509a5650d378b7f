//! Time-simultaneous confidence bands for the cumulative incidence function.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{band_quantile, draw_multipliers, draw_subsample, efron_resample, SubsampleDraw, WildBasis};
use crate::censoring::CensoringSurvival;
use crate::data::{BandInterval, Dataset};
use crate::error::{Error, Result};
use crate::finegray::{cc_risk_sets, fit_risk_sets, FineGrayFit, FitMethod};
use crate::imputation::{impute_cens_times, ImputationConfig};
use crate::ipcw::{fit_mple_ipcw, IpcwContext};
use crate::risk::NewtonOptions;
use crate::rng::{self, role};
use crate::step::shifted_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandMethod {
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "WBMI")]
    WbMi,
    #[serde(rename = "BIPCW")]
    Bipcw,
}

/// Which curve the WB-MI band is centered at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterRule {
    /// Mean of `I` datasets picked by the draw from stream `(seed, "pi", 0)`.
    #[default]
    SubsampleDraw,
    /// Mean over all `M` augmented datasets.
    FullMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSettings {
    pub z: Vec<f64>,
    pub alpha: f64,
    pub boot: usize,
    pub interval: BandInterval,
    pub seed: u64,
    pub newton: NewtonOptions,
}

impl BandSettings {
    pub fn new(z: Vec<f64>, alpha: f64, boot: usize, interval: BandInterval, seed: u64) -> Self {
        Self { z, alpha, boot, interval, seed, newton: NewtonOptions::default() }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.z.len() != dim {
            return Err(Error::InvalidArgument(format!("z has {} entries, the data have {dim} covariates", self.z.len())));
        }
        if self.boot == 0 {
            return Err(Error::InvalidSize("at least one bootstrap replicate is needed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub method: BandMethod,
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower_clipped: Vec<f64>,
    pub upper_clipped: Vec<f64>,
    pub q: f64,
    pub alpha: f64,
    pub n: usize,
    pub interval: BandInterval,
    pub boot: usize,
    pub m: Option<usize>,
    pub i: Option<usize>,
    pub seed: u64,
    pub failures: usize,
    pub sups: Vec<f64>,
}

impl BandResult {
    fn assemble(
        method: BandMethod,
        grid: Vec<f64>,
        center: Vec<f64>,
        sups: Vec<f64>,
        settings: &BandSettings,
        n: usize,
    ) -> Result<Self> {
        let q = band_quantile(&sups, settings.alpha)?;
        let half = q / (n as f64).sqrt();
        let lower: Vec<f64> = center.iter().map(|c| c - half).collect();
        let upper: Vec<f64> = center.iter().map(|c| c + half).collect();
        Ok(Self {
            method,
            lower_clipped: lower.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            upper_clipped: upper.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            grid,
            center,
            lower,
            upper,
            q,
            alpha: settings.alpha,
            n,
            interval: settings.interval,
            boot: settings.boot,
            m: None,
            i: None,
            seed: settings.seed,
            failures: 0,
            sups,
        })
    }

    /// `q/√n`.
    pub fn half_width(&self) -> f64 {
        self.q / (self.n as f64).sqrt()
    }

    fn index_at(&self, t: f64) -> Option<usize> {
        if !self.interval.contains(t) {
            return None;
        }
        self.grid.partition_point(|&g| g <= t).checked_sub(1)
    }

    /// Lower band at `t` (a step function on the grid), `None` outside the interval.
    pub fn lower_at(&self, t: f64) -> Option<f64> {
        self.index_at(t).map(|k| self.lower[k])
    }

    pub fn upper_at(&self, t: f64) -> Option<f64> {
        self.index_at(t).map(|k| self.upper[k])
    }

    /// Whether `truth` lies inside the band at every point of `points` that
    /// falls in the interval.
    pub fn covers(&self, truth: impl Fn(f64) -> f64, points: &[f64]) -> bool {
        points.iter().all(|&t| match self.index_at(t) {
            Some(k) => {
                let f = truth(t);
                self.lower[k] <= f && f <= self.upper[k]
            }
            None => true,
        })
    }
}

/// `{t1} ∪ {event times in (t1, t2)} ∪ {t2}`: every cause-1 CIF estimate is
/// constant between consecutive points, so suprema over `[t1, t2]` are maxima
/// over this grid.
pub fn band_grid(dataset: &Dataset, interval: BandInterval) -> Vec<f64> {
    let mut grid = vec![interval.t1];
    let mut inside = dataset.event_times(1);
    inside.dedup();
    grid.extend(inside.into_iter().filter(|&t| t > interval.t1 && t < interval.t2));
    if interval.t2 > interval.t1 {
        grid.push(interval.t2);
    }
    grid
}

fn sup_on_grid(a: &[f64], b: &[f64], n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    a.iter().zip(b).map(|(x, y)| (sqrt_n * (x - y)).abs()).fold(0.0, f64::max)
}

fn cif_on_grid(fit: &FineGrayFit, z: &[f64], grid: &[f64]) -> Vec<f64> {
    let curve = fit.cif(z);
    grid.iter().map(|&t| curve.eval(t)).collect()
}

/// Wild-bootstrap band from censoring-complete data with multipliers from
/// streams `(seed, "wb", b)`.
pub fn cc_band(dataset: &Dataset, settings: &BandSettings) -> Result<BandResult> {
    let n = dataset.len();
    cc_band_with(dataset, settings, |b| {
        Ok(draw_multipliers(n, &mut rng::stream(settings.seed, role::WILD, b as u64))?.g)
    })
}

/// As [`cc_band`] with caller-supplied multipliers for replicate `b` (1-based).
pub fn cc_band_with(
    dataset: &Dataset,
    settings: &BandSettings,
    multipliers: impl Fn(usize) -> Result<Vec<f64>> + Sync,
) -> Result<BandResult> {
    settings.check(dataset.dim())?;
    let n = dataset.len();
    let rs = cc_risk_sets(dataset, None)?;
    let fit = fit_risk_sets(&rs, None, &settings.newton, FitMethod::Cc)?;
    let basis = WildBasis::from_risk_sets(&rs, &fit)?;
    let grid = band_grid(dataset, settings.interval);
    let counts = basis.grid_counts(&grid);
    let center = cif_on_grid(&fit, &settings.z, &grid);
    let sups = (1..=settings.boot)
        .into_par_iter()
        .map(|b| {
            let g = multipliers(b)?;
            if g.len() != n {
                return Err(Error::InvalidSize(format!("{} multipliers for {n} subjects", g.len())));
            }
            let mut star = vec![0.0; grid.len()];
            basis.cif_on_grid(&g, &settings.z, &counts, &mut star);
            Ok(sup_on_grid(&star, &center, n))
        })
        .collect::<Result<Vec<f64>>>()?;
    BandResult::assemble(BandMethod::Cc, grid, center, sups, settings, n)
}

/// The `M` augmented fits of an incomplete dataset together with their
/// wild-bootstrap bases.
#[derive(Debug, Clone)]
pub struct MiEnsemble {
    fits: Vec<FineGrayFit>,
    bases: Vec<WildBasis>,
}

impl MiEnsemble {
    /// Imputes `M` censoring-time vectors and fits each augmented dataset.
    pub fn build(
        dataset: &Dataset,
        g: &CensoringSurvival,
        config: &ImputationConfig,
        newton: &NewtonOptions,
    ) -> Result<Self> {
        let cens = impute_cens_times(dataset, g, config).map_err(|e| Error::ImputationFailed(Box::new(e)))?;
        let outcomes: Vec<Result<(FineGrayFit, WildBasis)>> = cens
            .par_iter()
            .map(|c| {
                let rs = cc_risk_sets(dataset, Some(c))?;
                let fit = fit_risk_sets(&rs, None, newton, FitMethod::Cc)?;
                let basis = WildBasis::from_risk_sets(&rs, &fit)?;
                Ok((fit, basis))
            })
            .collect();
        let mut fits = Vec::with_capacity(outcomes.len());
        let mut bases = Vec::with_capacity(outcomes.len());
        let mut failed = Vec::new();
        let mut first = None;
        for (m, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok((f, b)) => {
                    fits.push(f);
                    bases.push(b);
                }
                Err(e) => {
                    failed.push(m + 1);
                    first.get_or_insert(e);
                }
            }
        }
        if let Some(first) = first {
            return Err(Error::FitFailed { indices: failed, first: Box::new(first) });
        }
        Ok(Self { fits, bases })
    }

    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    pub fn fits(&self) -> &[FineGrayFit] {
        &self.fits
    }

    pub fn bases(&self) -> &[WildBasis] {
        &self.bases
    }

    /// Estimated CIF of every augmented dataset at `grid`, `M` rows.
    pub fn curves_on(&self, z: &[f64], grid: &[f64]) -> Vec<Vec<f64>> {
        self.fits.iter().map(|f| cif_on_grid(f, z, grid)).collect()
    }

    /// Wild-bootstrap CIF of every augmented dataset under the shared multipliers.
    pub fn replicate_curves_on(&self, g: &[f64], z: &[f64], grid: &[f64]) -> Vec<Vec<f64>> {
        self.bases
            .iter()
            .map(|b| {
                let mut out = vec![0.0; grid.len()];
                b.cif_on_grid(g, z, &b.grid_counts(grid), &mut out);
                out
            })
            .collect()
    }

    /// Mean over the datasets selected by `draw` of their wild-bootstrap CIFs,
    /// all under the same multipliers `g`.
    pub fn replicate_on(&self, draw: &SubsampleDraw, g: &[f64], z: &[f64], grid: &[f64]) -> Vec<f64> {
        let mut rows = Vec::with_capacity(draw.pi.len());
        for &k in &draw.pi {
            let b = &self.bases[k - 1];
            let mut out = vec![0.0; grid.len()];
            b.cif_on_grid(g, z, &b.grid_counts(grid), &mut out);
            rows.push(out);
        }
        column_means(&rows, grid.len())
    }
}

/// Columnwise mean of equally long rows.
pub(crate) fn column_means(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    (0..width).map(|j| shifted_mean(rows.iter().map(|r| r[j]))).collect()
}

/// Band from incomplete data by wild bootstrap on `M` multiply imputed
/// datasets; replicate `b` uses streams `(seed, "pi", b)` and `(seed, "wb", b)`.
pub fn wb_mi_band(
    dataset: &Dataset,
    g: &CensoringSurvival,
    imputation: &ImputationConfig,
    settings: &BandSettings,
    i: usize,
    center_rule: CenterRule,
) -> Result<BandResult> {
    settings.check(dataset.dim())?;
    if i == 0 {
        return Err(Error::InvalidSize("I must be at least 1".into()));
    }
    let ensemble = MiEnsemble::build(dataset, g, imputation, &settings.newton)?;
    let m = ensemble.len();
    if i >= m && m > 1 {
        log::warn!("subsample size I = {i} is not below M = {m}");
    }
    let n = dataset.len();
    let grid = band_grid(dataset, settings.interval);
    let curves = ensemble.curves_on(&settings.z, &grid);
    let full_mean = column_means(&curves, grid.len());
    let counts: Vec<Vec<usize>> = ensemble.bases.iter().map(|b| b.grid_counts(&grid)).collect();

    let sups = (1..=settings.boot)
        .into_par_iter()
        .map(|b| {
            let draw = draw_subsample(m, i, &mut rng::stream(settings.seed, role::SUBSAMPLE, b as u64))?;
            let mult = draw_multipliers(n, &mut rng::stream(settings.seed, role::WILD, b as u64))?;
            let rows: Vec<Vec<f64>> = draw
                .pi
                .iter()
                .map(|&k| {
                    let mut out = vec![0.0; grid.len()];
                    ensemble.bases[k - 1].cif_on_grid(&mult.g, &settings.z, &counts[k - 1], &mut out);
                    out
                })
                .collect();
            Ok(sup_on_grid(&column_means(&rows, grid.len()), &full_mean, n))
        })
        .collect::<Result<Vec<f64>>>()?;

    let center = match center_rule {
        CenterRule::FullMean => full_mean,
        CenterRule::SubsampleDraw => {
            let draw = draw_subsample(m, i, &mut rng::stream(settings.seed, role::SUBSAMPLE, 0))?;
            let rows: Vec<Vec<f64>> = draw.pi.iter().map(|&k| curves[k - 1].clone()).collect();
            column_means(&rows, grid.len())
        }
    };
    let mut band = BandResult::assemble(BandMethod::WbMi, grid, center, sups, settings, n)?;
    band.m = Some(m);
    band.i = Some(i);
    Ok(band)
}

/// Efron-bootstrap band around the IPCW estimate; replicate `b` resamples
/// with stream `(seed, "boot", b)`.
pub fn bipcw_band(dataset: &Dataset, settings: &BandSettings) -> Result<BandResult> {
    bipcw_band_with(dataset, settings, |b, d| efron_resample(d, &mut rng::stream(settings.seed, role::BOOT, b as u64)))
}

/// As [`bipcw_band`] with a caller-supplied resampler for replicate `b`.
pub fn bipcw_band_with(
    dataset: &Dataset,
    settings: &BandSettings,
    resample: impl Fn(usize, &Dataset) -> Result<Dataset> + Sync,
) -> Result<BandResult> {
    settings.check(dataset.dim())?;
    let n = dataset.len();
    let ctx = IpcwContext::new(dataset.clone())?;
    let fit = fit_mple_ipcw(&ctx, None, &settings.newton)?;
    let grid = band_grid(dataset, settings.interval);
    let center = cif_on_grid(&fit, &settings.z, &grid);
    let outcomes: Vec<Option<f64>> = (1..=settings.boot)
        .into_par_iter()
        .map(|b| {
            let boot = resample(b, dataset).and_then(|d| {
                let ctx = IpcwContext::new(d)?;
                fit_mple_ipcw(&ctx, None, &settings.newton)
            });
            match boot {
                Ok(f) => Some(sup_on_grid(&cif_on_grid(&f, &settings.z, &grid), &center, n)),
                Err(e) => {
                    log::debug!("bootstrap replicate {b} dropped: {e}");
                    None
                }
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures > 0 {
        log::info!("{failures} of {} bootstrap replicates failed and were dropped", settings.boot);
    }
    if failures * 20 > settings.boot {
        return Err(Error::TooManyFailedReplicates { failed: failures, total: settings.boot });
    }
    let sups = outcomes.into_iter().flatten().collect();
    let mut band = BandResult::assemble(BandMethod::Bipcw, grid, center, sups, settings, n)?;
    band.failures = failures;
    Ok(band)
}
