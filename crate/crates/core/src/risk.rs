//! Weighted risk-set sums and the Newton solver shared by every Cox-type fit.
//!
//! A subject contributes to the risk set at an event time `t` with weight 1
//! while `t ≤ exit`, and optionally with weight `scale(t) · tail_weight` once
//! `t > tail_start`. The first part covers the classical, censoring-complete
//! and Cox-censoring risk sets; the tail carries the IPCW weights of subjects
//! after a competing event. Both parts are accumulated in a single sorted
//! sweep, so one evaluation costs `O(n p²)` after an `O(n log n)` setup.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, NewtonDiagnostics, Result};
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, max_halvings: 30 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TailEntry {
    pub subject: usize,
    pub start: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct RiskSets {
    p: usize,
    z: Vec<f64>,
    event_times: Vec<f64>,
    event_offsets: Vec<usize>,
    event_subjects: Vec<usize>,
    /// Subjects by decreasing exit time.
    exit_order: Vec<(f64, usize)>,
    /// Tail entries by increasing start, with the tail scale at each event time.
    tail: Vec<TailEntry>,
    tail_scale: Vec<f64>,
    weighted: bool,
}

/// Risk-set sums at every event time, scaled by `exp(-shift)`.
struct Sums {
    shift: f64,
    s0: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub score: Vec<f64>,
    pub info: Vec<f64>,
}

/// Per-event-time quantities used by the Breslow estimator and the wild
/// bootstrap, on the natural (unshifted) scale.
#[derive(Debug, Clone)]
pub(crate) struct EventProfile {
    pub s0: Vec<f64>,
    /// `S1/S0` at each event time, `K × p` row-major.
    pub mean_z: Vec<f64>,
}

impl RiskSets {
    /// `events` are `(time, subject)` pairs sorted by time.
    pub fn new(
        p: usize,
        z: Vec<f64>,
        events: &[(f64, usize)],
        exits: Vec<f64>,
        mut tail: Vec<TailEntry>,
        tail_scale_at: impl Fn(f64) -> f64,
        weighted: bool,
    ) -> Self {
        debug_assert_eq!(z.len(), exits.len() * p);
        let mut event_times = Vec::new();
        let mut event_offsets = vec![0];
        let mut event_subjects = Vec::with_capacity(events.len());
        for (idx, &(t, s)) in events.iter().enumerate() {
            if event_times.last() != Some(&t) {
                if idx > 0 {
                    event_offsets.push(idx);
                }
                event_times.push(t);
            }
            event_subjects.push(s);
        }
        if !events.is_empty() {
            event_offsets.push(events.len());
        }
        let mut exit_order: Vec<(f64, usize)> = exits.iter().copied().zip(0..).collect();
        exit_order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        tail.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.subject.cmp(&b.subject)));
        let tail_scale =
            if tail.is_empty() { Vec::new() } else { event_times.iter().map(|&t| tail_scale_at(t)).collect() };
        Self { p, z, event_times, event_offsets, event_subjects, exit_order, tail, tail_scale, weighted }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn event_offsets(&self) -> &[usize] {
        &self.event_offsets
    }

    pub fn event_subjects(&self) -> &[usize] {
        &self.event_subjects
    }

    pub fn covariates(&self, subject: usize) -> &[f64] {
        &self.z[subject * self.p..(subject + 1) * self.p]
    }

    pub fn n_subjects(&self) -> usize {
        self.exit_order.len()
    }

    /// Columns with at least one nonzero entry.
    pub fn active_columns(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| (0..self.n_subjects()).any(|i| self.z[i * self.p + j] != 0.0)).collect()
    }

    fn linear_predictors(&self, beta: &[f64]) -> Vec<f64> {
        self.z.chunks_exact(self.p.max(1)).take(self.n_subjects()).map(|zi| dot(zi, beta)).collect::<Vec<_>>()
    }

    fn sums(&self, beta: &[f64], order: usize) -> Result<Sums> {
        let p = self.p;
        let k_count = self.event_times.len();
        let eta = if p == 0 { vec![0.0; self.n_subjects()] } else { self.linear_predictors(beta) };
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let risk: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

        let w1 = if order >= 1 { p } else { 0 };
        let w2 = if order >= 2 { p * p } else { 0 };
        let mut s0 = vec![0.0; k_count];
        let mut s1 = vec![0.0; k_count * w1];
        let mut s2 = vec![0.0; k_count * w2];

        let mut acc0 = 0.0;
        let mut acc1 = vec![0.0; w1];
        let mut acc2 = vec![0.0; w2];
        let add = |subject: usize, weight: f64, a0: &mut f64, a1: &mut [f64], a2: &mut [f64]| {
            let r = risk[subject] * weight;
            *a0 += r;
            if !a1.is_empty() {
                let zi = &self.z[subject * p..(subject + 1) * p];
                for (a, &zj) in a1.iter_mut().zip(zi) {
                    *a += r * zj;
                }
                if !a2.is_empty() {
                    for (j, &zj) in zi.iter().enumerate() {
                        let rz = r * zj;
                        for (l, &zl) in zi.iter().enumerate() {
                            a2[j * p + l] += rz * zl;
                        }
                    }
                }
            }
        };

        // classical part: subjects with exit ≥ t, sweeping t downwards
        let mut next = 0;
        for k in (0..k_count).rev() {
            let t = self.event_times[k];
            while next < self.exit_order.len() && self.exit_order[next].0 >= t {
                add(self.exit_order[next].1, 1.0, &mut acc0, &mut acc1, &mut acc2);
                next += 1;
            }
            s0[k] = acc0;
            s1[k * w1..(k + 1) * w1].copy_from_slice(&acc1);
            s2[k * w2..(k + 1) * w2].copy_from_slice(&acc2);
        }

        // tail part: subjects with start < t, sweeping t upwards
        if !self.tail.is_empty() {
            let (mut t0, mut t1, mut t2) = (0.0, vec![0.0; w1], vec![0.0; w2]);
            let mut next = 0;
            for k in 0..k_count {
                let t = self.event_times[k];
                while next < self.tail.len() && self.tail[next].start < t {
                    let e = &self.tail[next];
                    add(e.subject, e.weight, &mut t0, &mut t1, &mut t2);
                    next += 1;
                }
                let scale = self.tail_scale[k];
                s0[k] += scale * t0;
                for (s, a) in s1[k * w1..(k + 1) * w1].iter_mut().zip(&t1) {
                    *s += scale * a;
                }
                for (s, a) in s2[k * w2..(k + 1) * w2].iter_mut().zip(&t2) {
                    *s += scale * a;
                }
            }
        }

        for (k, &v) in s0.iter().enumerate() {
            if !(v > 0.0) {
                let time = self.event_times[k];
                return Err(if self.weighted { Error::ZeroWeightedRiskSet { time } } else { Error::EmptyRiskSet { time } });
            }
        }
        Ok(Sums { shift, s0, s1, s2 })
    }

    /// Log partial likelihood together with score and information, restricted
    /// to event times `≤ upto`.
    pub fn evaluate(&self, beta: &[f64], order: usize, upto: f64) -> Result<Evaluation> {
        let p = self.p;
        let sums = self.sums(beta, order)?;
        let mut loglik = 0.0;
        let mut score = vec![0.0; if order >= 1 { p } else { 0 }];
        let mut info = vec![0.0; if order >= 2 { p * p } else { 0 }];
        let mut mean = vec![0.0; p];
        for k in 0..self.event_times.len() {
            if self.event_times[k] > upto {
                break;
            }
            let members = &self.event_subjects[self.event_offsets[k]..self.event_offsets[k + 1]];
            let d = members.len() as f64;
            let s0 = sums.s0[k];
            for &i in members {
                loglik += dot(self.covariates(i), beta);
            }
            loglik -= d * (s0.ln() + sums.shift);
            if order >= 1 {
                for j in 0..p {
                    mean[j] = sums.s1[k * p + j] / s0;
                }
                for &i in members {
                    for (s, (&zj, &mj)) in score.iter_mut().zip(self.covariates(i).iter().zip(&mean)) {
                        *s += zj - mj;
                    }
                }
                if order >= 2 {
                    let s2 = &sums.s2[k * p * p..(k + 1) * p * p];
                    for j in 0..p {
                        for l in 0..p {
                            info[j * p + l] += d * (s2[j * p + l] / s0 - mean[j] * mean[l]);
                        }
                    }
                }
            }
        }
        Ok(Evaluation { loglik, score, info })
    }

    pub fn profile(&self, beta: &[f64]) -> Result<EventProfile> {
        let p = self.p;
        let sums = self.sums(beta, 1)?;
        let scale = sums.shift.exp();
        let mut mean_z = vec![0.0; self.event_times.len() * p];
        for k in 0..self.event_times.len() {
            for j in 0..p {
                mean_z[k * p + j] = sums.s1[k * p + j] / sums.s0[k];
            }
        }
        let s0 = sums.s0.iter().map(|v| v * scale).collect();
        Ok(EventProfile { s0, mean_z })
    }

    /// Breslow cumulative hazard with increments `d_k / S0(t_k)`.
    pub fn breslow(&self, beta: &[f64]) -> Result<StepFunction> {
        if self.event_times.is_empty() {
            return Ok(StepFunction::constant(0.0));
        }
        let profile = self.profile(beta)?;
        let mut cum = 0.0;
        let pairs: Vec<(f64, f64)> = self
            .event_times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let d = (self.event_offsets[k + 1] - self.event_offsets[k]) as f64;
                cum += d / profile.s0[k];
                (t, cum)
            })
            .collect();
        Ok(StepFunction::from_sorted_pairs(0.0, pairs))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Cholesky solve of the information restricted to `active` columns.
/// Returns the Newton step and the full-size inverse (zeros off the active block).
fn solve_active(info: &[f64], score: &[f64], p: usize, active: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = active.len();
    let mut step = vec![0.0; p];
    let mut inverse = vec![0.0; p * p];
    if q == 0 {
        return Ok((step, inverse));
    }
    let sub = DMatrix::from_fn(q, q, |a, b| info[active[a] * p + active[b]]);
    let chol = sub.cholesky().ok_or(Error::SingularInformation)?;
    let rhs = DVector::from_fn(q, |a, _| score[active[a]]);
    let delta = chol.solve(&rhs);
    let inv = chol.inverse();
    if delta.iter().any(|v| !v.is_finite()) || inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInformation);
    }
    for a in 0..q {
        step[active[a]] = delta[a];
        for b in 0..q {
            inverse[active[a] * p + active[b]] = inv[(a, b)];
        }
    }
    Ok((step, inverse))
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub information: Vec<f64>,
    pub inverse_information: Vec<f64>,
    pub score_norm: f64,
    pub iterations: usize,
}

/// Newton–Raphson with step halving on the log partial likelihood.
///
/// Columns that are identically zero are held at zero. Convergence needs both
/// a small score (`≤ tol·(1 + |ℓ|)`) and a small Newton increment; the second
/// condition keeps a diverging fit (monotone likelihood) from being reported
/// as converged once its score has flattened out.
pub(crate) fn newton(rs: &RiskSets, init: &[f64], opts: &NewtonOptions) -> Result<NewtonOutcome> {
    let p = rs.dim();
    if init.len() != p {
        return Err(Error::InvalidArgument(format!("initial value has length {}, expected {p}", init.len())));
    }
    if rs.event_times().is_empty() {
        return Err(Error::NoCause1Events);
    }
    let active = rs.active_columns();
    let mut beta: Vec<f64> = init.to_vec();
    for j in 0..p {
        if !active.contains(&j) {
            beta[j] = 0.0;
        }
    }
    let mut eval = rs.evaluate(&beta, 2, f64::INFINITY)?;
    let mut path = vec![beta.clone()];

    for iteration in 1..=opts.max_iter {
        let score_norm = sup_norm(&eval.score);
        let (step, inverse) = match solve_active(&eval.info, &eval.score, p, &active) {
            Ok(solved) => solved,
            // information lost along the path: the likelihood has flattened out while diverging
            Err(Error::SingularInformation) if iteration > 1 => {
                return Err(non_convergence(iteration, score_norm, eval.loglik, path));
            }
            Err(e) => return Err(e),
        };
        let small_score = score_norm <= opts.tol * (1.0 + eval.loglik.abs());
        let small_step = sup_norm(&step) <= 1e-4 * (1.0 + sup_norm(&beta));
        if small_score && small_step {
            return Ok(polish(rs, beta, eval, step, inverse, &active, iteration));
        }

        let mut fraction = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + fraction * s).collect();
            if let Ok(e) = rs.evaluate(&candidate, 0, f64::INFINITY) {
                if e.loglik.is_finite() && e.loglik >= eval.loglik {
                    accepted = Some(candidate);
                    break;
                }
            }
            fraction *= 0.5;
        }
        let Some(next) = accepted else {
            if small_score {
                return Ok(polish(rs, beta, eval, step, inverse, &active, iteration));
            }
            return Err(non_convergence(iteration, score_norm, eval.loglik, path));
        };
        beta = next;
        eval = rs.evaluate(&beta, 2, f64::INFINITY)?;
        path.push(beta.clone());
    }
    let score_norm = sup_norm(&eval.score);
    Err(non_convergence(opts.max_iter, score_norm, eval.loglik, path))
}

fn non_convergence(iterations: usize, score_norm: f64, loglik: f64, beta_path: Vec<Vec<f64>>) -> Error {
    Error::NonConvergence(Box::new(NewtonDiagnostics { iterations, score_norm, log_likelihood: loglik, beta_path }))
}

/// Takes the final (tiny) Newton step when it does not lower the likelihood,
/// then reports information and its inverse at the returned point.
fn polish(
    rs: &RiskSets,
    beta: Vec<f64>,
    eval: Evaluation,
    step: Vec<f64>,
    inverse: Vec<f64>,
    active: &[usize],
    iterations: usize,
) -> NewtonOutcome {
    let p = rs.dim();
    let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
    if !active.is_empty() {
        if let Ok(e) = rs.evaluate(&candidate, 2, f64::INFINITY) {
            if e.loglik >= eval.loglik && sup_norm(&e.score) <= sup_norm(&eval.score) {
                if let Ok((_, inv)) = solve_active(&e.info, &e.score, p, active) {
                    return NewtonOutcome {
                        beta: candidate,
                        loglik: e.loglik,
                        score_norm: sup_norm(&e.score),
                        information: e.info,
                        inverse_information: inv,
                        iterations,
                    };
                }
            }
        }
    }
    NewtonOutcome {
        beta,
        loglik: eval.loglik,
        score_norm: sup_norm(&eval.score),
        information: eval.info,
        inverse_information: inverse,
        iterations,
    }
}
