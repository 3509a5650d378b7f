#![allow(dead_code)]

use crband_core::rng::StreamKey;
use crband_core::simulation::{gen_dataset, CensoringLevel, SimConfig};
use crband_core::{Completeness, Dataset, Record};
use rand::Rng;

pub fn sim_config(n: usize, rates: (f64, f64), seed: u64) -> SimConfig {
    SimConfig::study(n, CensoringLevel::Light, rates, seed)
}

/// Censoring-complete sample from the study design with `C ~ U(0, c)`.
pub fn sim_dataset(n: usize, rates: (f64, f64), c: f64, seed: u64) -> Dataset {
    let cfg = sim_config(n, rates, seed);
    gen_dataset(&cfg, c, &mut StreamKey::new(seed).tag("fixture").stream()).unwrap()
}

/// Small censoring-complete dataset with `p` covariates, both causes and
/// tied times on a coarse grid.
pub fn toy_dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut s = StreamKey::new(seed).tag("toy").stream();
    let records = (0..n)
        .map(|i| {
            let z: Vec<f64> = (0..p).map(|_| s.random_range(-1.5..1.5)).collect();
            let t = f64::from(s.random_range(1..40u32)) / 4.0;
            let c = f64::from(s.random_range(1..48u32)) / 4.0;
            let cause = if s.random::<f64>() < 0.65 { 1 } else { 2 };
            if t <= c {
                Record::new(format!("t{i}"), t, cause, z, Some(c))
            } else {
                Record::new(format!("t{i}"), c, 0, z, Some(c))
            }
        })
        .collect();
    Dataset::new(records, Completeness::CensoringComplete, None).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fine-Gray log partial likelihood written straight from its definition:
/// subject `j` is at risk at `t` while its exit time (the censoring time after
/// a competing event, the observed time otherwise) is at least `t`.
pub fn direct_cc_loglik(d: &Dataset, beta: &[f64]) -> f64 {
    let exit = |r: &Record| if r.status >= 2 { r.cens_time.unwrap() } else { r.time };
    let mut ll = 0.0;
    for ev in d.records().iter().filter(|r| r.status == 1) {
        let denom: f64 =
            d.records().iter().filter(|r| exit(r) >= ev.time).map(|r| dot(&r.covariates, beta).exp()).sum();
        ll += dot(&ev.covariates, beta) - denom.ln();
    }
    ll
}

/// Product-limit estimate of `P(C > t)` evaluated directly at `t`.
pub fn direct_km_censoring(d: &Dataset, t: f64) -> f64 {
    let mut times: Vec<f64> = d.records().iter().filter(|r| r.status == 0 && r.time <= t).map(|r| r.time).collect();
    times.dedup();
    times.iter().fold(1.0, |s, &u| {
        let at_risk = d.records().iter().filter(|r| r.time >= u).count() as f64;
        let cens = d.records().iter().filter(|r| r.status == 0 && r.time == u).count() as f64;
        s * (1.0 - cens / at_risk)
    })
}

fn left_limit(f: impl Fn(f64) -> f64, t: f64) -> f64 {
    f(t - 1e-9 * t.max(1.0))
}

/// IPCW log pseudo-likelihood from its definition: competing subjects stay
/// at risk after their event with weight `G(t−)/G(T−)`.
pub fn direct_ipcw_loglik(d: &Dataset, beta: &[f64]) -> f64 {
    let g = |t: f64| direct_km_censoring(d, t);
    let mut ll = 0.0;
    for ev in d.records().iter().filter(|r| r.status == 1) {
        let t = ev.time;
        let denom: f64 = d
            .records()
            .iter()
            .map(|r| {
                let w = if r.time >= t {
                    1.0
                } else if r.status >= 2 {
                    left_limit(g, t) / left_limit(g, r.time)
                } else {
                    0.0
                };
                w * dot(&r.covariates, beta).exp()
            })
            .sum();
        ll += dot(&ev.covariates, beta) - denom.ln();
    }
    ll
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[j] += h;
            down[j] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Maximiser of a concave function on `[lo, hi]`: a coarse grid scan followed
/// by golden-section refinement.
pub fn argmax_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = 400;
    let h = (hi - lo) / f64::from(steps);
    let best = (0..=steps).map(|k| lo + h * f64::from(k)).max_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if f(x1) < f(x2) {
            a = x1;
        } else {
            b = x2;
        }
    }
    0.5 * (a + b)
}

/// Root of a monotone function on `[lo, hi]` by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Same dataset with every covariate column but the first removed.
pub fn first_covariate_only(d: &Dataset) -> Dataset {
    let records = d.records().iter().map(|r| Record { covariates: vec![r.covariates[0]], ..r.clone() }).collect();
    Dataset::new(records, d.completeness(), Some(d.horizon())).unwrap()
}

/// Runs a Monte-Carlo check; a failure is retried once with a fresh seed.
pub fn stochastic(name: &str, check: impl Fn(u64) -> Result<(), String>) {
    if let Err(first) = check(1) {
        eprintln!("{name}: first attempt failed ({first}), rerunning");
        if let Err(second) = check(2) {
            panic!("{name}: {second}");
        }
    }
}

/// `|x − mean| ≤ 3 sd / √n`.
pub fn within_3_sigma(x: f64, mean: f64, sd: f64, n: usize) -> Result<(), String> {
    let bound = 3.0 * sd / (n as f64).sqrt();
    if (x - mean).abs() <= bound {
        Ok(())
    } else {
        Err(format!("{x} differs from {mean} by more than {bound}"))
    }
}
