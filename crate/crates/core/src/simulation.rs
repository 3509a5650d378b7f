//! Data generators, censoring calibration and the coverage harness.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Bernoulli, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censoring::km_censoring;
use crate::data::{order_statistic, BandInterval, Completeness, Dataset, Record};
use crate::error::{Error, Result};
use crate::imputation::{ImputationConfig, ImputationMethod, TailRule};
use crate::resampling::{bipcw_band, cc_band, wb_mi_band, BandResult, BandSettings, CenterRule};
use crate::risk::{dot, NewtonOptions};
use crate::rng::{role, Stream, StreamKey};

/// How event times and causes are generated from covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// Constant cause-specific hazards `α_k exp(zᵀβ₀)` sharing one coefficient.
    CauseSpecific,
    /// Fine-Gray model with `F₁(t | z) = 1 − (1 − p(1 − e^{−t}))^{exp(zᵀβ₀)}`;
    /// cause-2 times are exponential with rate `exp(zᵀβ₀)`.
    FineGrayDirect { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensoringLevel {
    Light,
    Strong,
}

impl CensoringLevel {
    /// Target range of the average censoring rate.
    pub fn target(self) -> (f64, f64) {
        match self {
            Self::Light => (0.20, 0.25),
            Self::Strong => (0.37, 0.43),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Light => "light",
            Self::Strong => "strong",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub beta0: Vec<f64>,
    pub rates: (f64, f64),
    pub censor_target: (f64, f64),
    pub censoring_label: String,
    pub z0: Vec<f64>,
    pub alpha: f64,
    pub n_sims: usize,
    pub boot: usize,
    pub m: usize,
    pub i: usize,
    pub seed: u64,
    pub generator: Generator,
    pub center_rule: CenterRule,
    pub tail_rule: TailRule,
    pub newton: NewtonOptions,
}

impl SimConfig {
    /// Design of the coverage study at desk scale: 500 simulations, 500
    /// bootstrap replicates, `M = 1000`, `I = 10`.
    pub fn study(n: usize, level: CensoringLevel, rates: (f64, f64), seed: u64) -> Self {
        Self {
            n,
            beta0: vec![-0.05, -0.25, -0.05],
            rates,
            censor_target: level.target(),
            censoring_label: level.label().to_string(),
            z0: vec![-2.0 / 3.0, 0.0, 1.0],
            alpha: 0.05,
            n_sims: 500,
            boot: 500,
            m: 1000,
            i: 10,
            seed,
            generator: Generator::CauseSpecific,
            center_rule: CenterRule::default(),
            tail_rule: TailRule::default(),
            newton: NewtonOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (a1, a2) = self.rates;
        if !(a1 > 0.0 && a2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid hazard rates ({a1}, {a2})")));
        }
        let (lo, hi) = self.censor_target;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidArgument(format!("invalid censoring target ({lo}, {hi})")));
        }
        if let Generator::FineGrayDirect { p } = self.generator {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidArgument(format!("cause-1 mass p = {p} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// `Z₁ ~ N(0,1)`, `Z₂ ~ Bernoulli(0.15)`, `Z₃ ~ Bernoulli(0.4)`, independent.
pub fn gen_covariates(n: usize, stream: &mut Stream) -> Vec<Vec<f64>> {
    (0..n).map(|_| draw_covariates(stream)).collect()
}

fn draw_covariates(stream: &mut Stream) -> Vec<f64> {
    let z1: f64 = stream.sample(StandardNormal);
    let z2 = stream.sample(Bernoulli::new(0.15).expect("valid probability"));
    let z3 = stream.sample(Bernoulli::new(0.4).expect("valid probability"));
    vec![z1, f64::from(u8::from(z2)), f64::from(u8::from(z3))]
}

/// Event time and cause for covariates `z`.
pub fn gen_event(z: &[f64], config: &SimConfig, stream: &mut Stream) -> (f64, u32) {
    let risk = dot(z, &config.beta0).exp();
    match config.generator {
        Generator::CauseSpecific => {
            let (a1, a2) = config.rates;
            let t = stream.sample(Exp::new((a1 + a2) * risk).expect("positive rate"));
            let cause = if stream.random::<f64>() * (a1 + a2) < a1 { 1 } else { 2 };
            (t, cause)
        }
        Generator::FineGrayDirect { p } => {
            let f_inf = 1.0 - (1.0 - p).powf(risk);
            let v: f64 = stream.random();
            if v < f_inf {
                // invert F₁(t) = v on the cause-1 part
                let inner = (1.0 - (1.0 - v).powf(1.0 / risk)) / p;
                (-(1.0 - inner).ln(), 1)
            } else {
                (stream.sample(Exp::new(risk).expect("positive rate")), 2)
            }
        }
    }
}

/// `F₁(t | z)` under the configured generator.
pub fn true_cif(z: &[f64], config: &SimConfig, t: f64) -> f64 {
    let risk = dot(z, &config.beta0).exp();
    match config.generator {
        Generator::CauseSpecific => {
            let (a1, a2) = config.rates;
            a1 / (a1 + a2) * (1.0 - (-(a1 + a2) * risk * t).exp())
        }
        Generator::FineGrayDirect { p } => 1.0 - (1.0 - p * (1.0 - (-t).exp())).powf(risk),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Upper end of the uniform censoring distribution `U(0, c)`.
    pub c: f64,
    /// Monte-Carlo censoring rate at `c`.
    pub rate: f64,
    /// Whether `rate` lies inside the target range.
    pub within_target: bool,
    pub iterations: usize,
}

const CALIBRATION_SUBJECTS: usize = 100_000;

/// Bisection on `c` until the Monte-Carlo censoring rate `P(C < T)` is within
/// 0.005 of the midpoint of the target range. The same subjects are reused at
/// every probe.
pub fn calibrate_censoring(config: &SimConfig) -> Result<Calibration> {
    config.validate()?;
    let mut stream = StreamKey::new(config.seed).tag(role::SIM).tag("calibrate").stream();
    let pairs: Vec<(f64, f64)> = (0..CALIBRATION_SUBJECTS)
        .map(|_| {
            let z = draw_covariates(&mut stream);
            let (t, _) = gen_event(&z, config, &mut stream);
            (t, stream.random::<f64>())
        })
        .collect();
    let rate = |c: f64| pairs.iter().filter(|&&(t, v)| c * v < t).count() as f64 / pairs.len() as f64;
    let (lo_target, hi_target) = config.censor_target;
    let target = 0.5 * (lo_target + hi_target);
    let done = |r: f64| (r - target).abs() <= 0.005;

    let mut hi = 1.0;
    let mut doublings = 0;
    while rate(hi) > target {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::CalibrationFailed(format!("no c brings the censoring rate down to {target}")));
        }
    }
    let mut lo = 0.0;
    for iteration in 1..=60 {
        let c = 0.5 * (lo + hi);
        let r = rate(c);
        if done(r) {
            let within_target = (lo_target..=hi_target).contains(&r);
            if !within_target {
                log::warn!("calibrated censoring rate {r:.5} lies outside [{lo_target}, {hi_target}] (c = {c:.4e})");
            }
            return Ok(Calibration { c, rate: r, within_target, iterations: iteration });
        }
        if r > target {
            lo = c;
        } else {
            hi = c;
        }
    }
    Err(Error::CalibrationFailed(format!("censoring rate not within 0.005 of {target} after 60 bisection steps")))
}

/// `n` subjects with `C ~ U(0, c)` retained for everyone.
pub fn gen_dataset(config: &SimConfig, c: f64, stream: &mut Stream) -> Result<Dataset> {
    let records = (0..config.n)
        .map(|i| {
            let z = draw_covariates(stream);
            let (t, cause) = gen_event(&z, config, stream);
            let cens = c * stream.random::<f64>();
            if t <= cens {
                Record::new(format!("s{i}"), t, cause, z, Some(cens))
            } else {
                Record::new(format!("s{i}"), cens, 0, z, Some(cens))
            }
        })
        .collect();
    Dataset::new(records, Completeness::CensoringComplete, Some(c))
}

/// Drops the censoring times of event records.
pub fn degrade_to_incomplete(dataset: &Dataset) -> Dataset {
    dataset.degrade_to_incomplete()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoverageMethod {
    #[serde(rename = "CC-WB")]
    CcWb,
    #[serde(rename = "WB-MI")]
    WbMi,
    #[serde(rename = "B-IPCW")]
    BIpcw,
}

impl CoverageMethod {
    pub const ALL: [Self; 3] = [Self::CcWb, Self::WbMi, Self::BIpcw];

    pub fn label(self) -> &'static str {
        match self {
            Self::CcWb => "CC-WB",
            Self::WbMi => "WB-MI",
            Self::BIpcw => "B-IPCW",
        }
    }
}

/// Result of one band in one simulated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub sim: usize,
    pub method: CoverageMethod,
    pub covered: bool,
    pub width: f64,
}

/// One row of the coverage table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub censoring: String,
    pub rates: String,
    pub method: String,
    pub cp_percent: f64,
    pub median_width: f64,
    pub n_sims: usize,
    #[serde(rename = "B")]
    pub boot: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "I")]
    pub i: usize,
    pub seed: u64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub interval: BandInterval,
    pub calibration_c: f64,
    /// Failed samples per method, in the order of the rows.
    pub failures: Vec<usize>,
    pub failure_messages: Vec<String>,
}

impl CoverageReport {
    pub fn row(&self, method: CoverageMethod) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.method == method.label())
    }
}

/// Coverage percentage and median width of one method; `None` when no sample succeeded.
pub fn summarize(outcomes: &[SimOutcome], method: CoverageMethod) -> Option<(f64, f64)> {
    let mine: Vec<&SimOutcome> = outcomes.iter().filter(|o| o.method == method).collect();
    if mine.is_empty() {
        return None;
    }
    let covered = mine.iter().filter(|o| o.covered).count();
    let mut widths: Vec<f64> = mine.iter().map(|o| o.width).collect();
    widths.sort_by(f64::total_cmp);
    let k = widths.len();
    let median = if k % 2 == 1 { widths[k / 2] } else { 0.5 * (widths[k / 2 - 1] + widths[k / 2]) };
    Some((100.0 * covered as f64 / k as f64, median))
}

/// Points at which a band is checked against the truth: its own grid plus
/// 200 equispaced points of the interval.
pub fn coverage_points(band: &BandResult) -> Vec<f64> {
    let BandInterval { t1, t2 } = band.interval;
    let mut pts = band.grid.clone();
    pts.extend((0..200).map(|k| t1 + (t2 - t1) * f64::from(k) / 199.0));
    pts
}

fn sample_stream(seed: u64, sim: usize) -> Stream {
    StreamKey::new(seed).tag(role::SIM).index(sim as u64).tag("data").stream()
}

fn sample_band_seed(seed: u64, sim: usize) -> u64 {
    StreamKey::new(seed).tag(role::SIM).index(sim as u64).tag("bands").derive_seed()
}

/// Deciles of the observed cause-1 times pooled over all samples.
pub fn pooled_interval(samples: &[Dataset]) -> Result<BandInterval> {
    let mut times: Vec<f64> = samples.iter().flat_map(|d| d.event_times(1)).collect();
    if times.len() < 2 {
        return Err(Error::TooFewEvents { cause: 1, found: times.len() });
    }
    times.sort_by(f64::total_cmp);
    BandInterval::new(order_statistic(&times, 0.1), order_statistic(&times, 0.9))
}

/// The three bands for one simulated sample.
fn run_sample(config: &SimConfig, sim: usize, data: &Dataset, pooled: BandInterval) -> Vec<Result<SimOutcome>> {
    let first = data.event_times(1).first().copied();
    let Some(first) = first else {
        return CoverageMethod::ALL.iter().map(|_| Err(Error::NoCause1Events)).collect();
    };
    let t1 = pooled.t1.max(first).min(pooled.t2);
    let interval = BandInterval { t1, t2: pooled.t2 };
    let seed = sample_band_seed(config.seed, sim);
    let mut settings = BandSettings::new(config.z0.clone(), config.alpha, config.boot, interval, seed);
    settings.newton = config.newton;
    let incomplete = data.degrade_to_incomplete();
    let truth = |t: f64| true_cif(&config.z0, config, t);

    CoverageMethod::ALL
        .iter()
        .map(|&method| {
            let band = match method {
                CoverageMethod::CcWb => cc_band(data, &settings),
                CoverageMethod::WbMi => {
                    let imp = ImputationConfig {
                        method: ImputationMethod::KaplanMeier,
                        m: config.m,
                        seed,
                        tail_rule: config.tail_rule,
                    };
                    km_censoring(&incomplete)
                        .and_then(|g| wb_mi_band(&incomplete, &g, &imp, &settings, config.i, config.center_rule))
                }
                CoverageMethod::BIpcw => bipcw_band(&incomplete, &settings),
            }?;
            let covered = band.covers(truth, &coverage_points(&band));
            Ok(SimOutcome { sim, method, covered, width: 2.0 * band.half_width() })
        })
        .collect()
}

/// Runs the coverage study for censoring parameter `c`.
pub fn run_coverage(config: &SimConfig, c: f64) -> Result<CoverageReport> {
    config.validate()?;
    let started = Instant::now();
    let samples: Vec<Dataset> = (0..config.n_sims)
        .into_par_iter()
        .map(|s| gen_dataset(config, c, &mut sample_stream(config.seed, s)))
        .collect::<Result<_>>()?;
    let pooled = pooled_interval(&samples)?;

    let results: Vec<Vec<Result<SimOutcome>>> =
        samples.par_iter().enumerate().map(|(s, d)| run_sample(config, s, d, pooled)).collect();

    let mut outcomes = Vec::new();
    let mut failures = vec![0; CoverageMethod::ALL.len()];
    let mut failure_messages = Vec::new();
    for (s, per_sample) in results.into_iter().enumerate() {
        for (k, r) in per_sample.into_iter().enumerate() {
            match r {
                Ok(o) => outcomes.push(o),
                Err(e) => {
                    failures[k] += 1;
                    failure_messages.push(format!("sim {s} {}: {e}", CoverageMethod::ALL[k].label()));
                }
            }
        }
    }
    let runtime_s = started.elapsed().as_secs_f64();
    let rows = CoverageMethod::ALL
        .iter()
        .map(|&method| {
            let (cp, width) = summarize(&outcomes, method).unwrap_or((f64::NAN, f64::NAN));
            CoverageRow {
                n: config.n,
                censoring: config.censoring_label.clone(),
                rates: format!("({},{})", config.rates.0, config.rates.1),
                method: method.label().to_string(),
                cp_percent: cp,
                median_width: width,
                n_sims: config.n_sims,
                boot: config.boot,
                m: config.m,
                i: config.i,
                seed: config.seed,
                runtime_s,
            }
        })
        .collect();
    Ok(CoverageReport { rows, interval: pooled, calibration_c: c, failures, failure_messages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn config(rates: (f64, f64), beta0: Vec<f64>) -> SimConfig {
        SimConfig { beta0, ..SimConfig::study(100, CensoringLevel::Light, rates, 1) }
    }

    #[test]
    fn covariates_are_reproducible() {
        let a = gen_covariates(20, &mut rng::stream(4, role::SIM, 0));
        let b = gen_covariates(20, &mut rng::stream(4, role::SIM, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn only_cause_one_without_competing_hazard() {
        let cfg = config((0.1, 0.0), vec![0.0; 3]);
        let mut s = rng::stream(1, role::SIM, 0);
        assert!((0..1000).all(|_| gen_event(&[0.0; 3], &cfg, &mut s).1 == 1));
    }

    #[test]
    fn true_cif_limits() {
        let cfg = config((0.05, 0.05), vec![0.0; 3]);
        assert_eq!(true_cif(&[0.0; 3], &cfg, 0.0), 0.0);
        assert!((true_cif(&[0.0; 3], &cfg, 1e6) - 0.5).abs() < 1e-12);
        let fg = SimConfig { generator: Generator::FineGrayDirect { p: 0.3 }, ..cfg };
        assert!((true_cif(&[0.0; 3], &fg, 1e6) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn huge_c_censors_nobody() {
        let cfg = config((0.08, 0.008), vec![-0.05, -0.25, -0.05]);
        let d = gen_dataset(&cfg, 1e9, &mut rng::stream(2, role::SIM, 0)).unwrap();
        assert!(d.records().iter().all(|r| r.status != 0));
        let inc = degrade_to_incomplete(&d);
        assert_eq!(inc.len(), d.len());
        assert_eq!(inc.clone().validate().unwrap(), inc);
    }

    #[test]
    fn all_censored_dataset_degrades_to_itself() {
        let cfg = config((0.08, 0.008), vec![0.0; 3]);
        let d = gen_dataset(&cfg, 1e-6, &mut rng::stream(2, role::SIM, 1)).unwrap();
        assert!(d.records().iter().all(|r| r.status == 0));
        assert_eq!(degrade_to_incomplete(&d).records(), d.records());
    }

    #[test]
    fn calibration_fixed_point_for_unit_exponential() {
        // rate(c) = (1 − e^{−c})/c = 0.5 at c ≈ 1.5936
        let cfg = SimConfig { censor_target: (0.45, 0.55), ..config((0.5, 0.5), vec![0.0; 3]) };
        let cal = calibrate_censoring(&cfg).unwrap();
        let f = |c: f64| (1.0 - (-c).exp()) / c - 0.5;
        let (mut lo, mut hi) = (0.5, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // stopping band 0.005 plus four Monte-Carlo standard errors
        assert!(f(cal.c).abs() < 0.005 + 4.0 * (0.25f64 / 1e5).sqrt(), "{} vs {lo}", cal.c);
        assert!((cal.c - lo).abs() < 0.1);
        assert!(cal.within_target);
        assert_eq!(calibrate_censoring(&cfg).unwrap(), cal);
    }

    #[test]
    fn infeasible_target_is_flagged() {
        let cfg = SimConfig { censor_target: (0.0001, 0.0002), ..config((0.08, 0.008), vec![0.0; 3]) };
        match calibrate_censoring(&cfg) {
            Ok(cal) => assert!(!cal.within_target || cal.c > 1e3),
            Err(e) => assert!(matches!(e, Error::CalibrationFailed(_))),
        }
    }

    #[test]
    fn summary_ignores_order() {
        let outcomes: Vec<SimOutcome> = (0..7)
            .map(|s| SimOutcome { sim: s, method: CoverageMethod::WbMi, covered: s % 3 != 0, width: s as f64 })
            .collect();
        let mut reversed = outcomes.clone();
        reversed.reverse();
        assert_eq!(summarize(&outcomes, CoverageMethod::WbMi), summarize(&reversed, CoverageMethod::WbMi));
        let (cp, width) = summarize(&outcomes, CoverageMethod::WbMi).unwrap();
        assert!((cp - 100.0 * 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(width, 3.0);
        assert_eq!(summarize(&outcomes, CoverageMethod::CcWb), None);
    }
}
