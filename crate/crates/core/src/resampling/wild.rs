//! One-step wild-bootstrap refits of a censoring-complete Fine-Gray fit.
//!
//! With multipliers `G_i`,
//!
//! ```text
//! U*     = Σ_i G_i (Z_i − E(β̂, T_i))                      (cause-1 events)
//! β*     = β̂ + J⁻¹ U*
//! A*(t)  = Â(t) + Σ_{T_i ≤ t} G_i / S0(β̂, T_i) − B(t)ᵀ (β* − β̂)
//! B(t)   = Σ_{T_i ≤ t} E(β̂, T_i) ΔÂ(T_i)
//! ```
//!
//! where `E = S1/S0`. Everything is affine in `G`, so all sums over events are
//! precomputed once per fit.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::finegray::{self, cc_risk_sets, FineGrayFit};
use crate::risk::{dot, RiskSets};
use crate::step::StepFunction;

#[derive(Debug, Clone)]
pub struct WildBasis {
    p: usize,
    n: usize,
    beta_hat: Vec<f64>,
    jinv: Vec<f64>,
    event_times: Vec<f64>,
    offsets: Vec<usize>,
    subjects: Vec<usize>,
    /// `Z_i − E(T_i)` per event, `p` entries each.
    u: Vec<f64>,
    inv_s0: Vec<f64>,
    cum_a: Vec<f64>,
    cum_b: Vec<f64>,
}

/// A wild-bootstrap replicate of the coefficients and the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct WildRefit {
    pub beta_star: Vec<f64>,
    pub breslow_star: StepFunction,
}

impl WildRefit {
    pub fn cif(&self, z: &[f64]) -> StepFunction {
        finegray::cif(&self.beta_star, &self.breslow_star, z)
    }
}

impl WildBasis {
    /// Basis for a fit of the censoring-complete `dataset`.
    pub fn new(fit: &FineGrayFit, dataset: &Dataset) -> Result<Self> {
        Self::from_risk_sets(&cc_risk_sets(dataset, None)?, fit)
    }

    pub(crate) fn from_risk_sets(rs: &RiskSets, fit: &FineGrayFit) -> Result<Self> {
        let p = rs.dim();
        let profile = rs.profile(&fit.beta_hat)?;
        let event_times = rs.event_times().to_vec();
        let offsets = rs.event_offsets().to_vec();
        let subjects = rs.event_subjects().to_vec();
        let k_count = event_times.len();
        let mut u = Vec::with_capacity(subjects.len() * p);
        for k in 0..k_count {
            let mean = &profile.mean_z[k * p..(k + 1) * p];
            for &i in &subjects[offsets[k]..offsets[k + 1]] {
                u.extend(rs.covariates(i).iter().zip(mean).map(|(z, e)| z - e));
            }
        }
        // levels of the fitted baseline, so a zero perturbation returns them bit for bit
        let cum_a: Vec<f64> = event_times.iter().map(|&t| fit.breslow.eval(t)).collect();
        let mut cum_b = vec![0.0; k_count * p];
        let mut acc = vec![0.0; p];
        let mut prev = 0.0;
        for k in 0..k_count {
            let jump = cum_a[k] - prev;
            prev = cum_a[k];
            for j in 0..p {
                acc[j] += profile.mean_z[k * p + j] * jump;
            }
            cum_b[k * p..(k + 1) * p].copy_from_slice(&acc);
        }
        Ok(Self {
            p,
            n: rs.n_subjects(),
            beta_hat: fit.beta_hat.clone(),
            jinv: fit.inverse_information.clone(),
            event_times,
            offsets,
            subjects,
            u,
            inv_s0: profile.s0.iter().map(|s| 1.0 / s).collect(),
            cum_a,
            cum_b,
        })
    }

    /// Number of subjects, i.e. the required multiplier length.
    pub fn n_subjects(&self) -> usize {
        self.n
    }

    pub fn beta_hat(&self) -> &[f64] {
        &self.beta_hat
    }

    fn check(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.n {
            return Err(Error::InvalidSize(format!("{} multipliers for {} subjects", g.len(), self.n)));
        }
        Ok(())
    }

    /// `J⁻¹ U*`.
    fn delta(&self, g: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut u_star = vec![0.0; p];
        for (e, &i) in self.subjects.iter().enumerate() {
            for j in 0..p {
                u_star[j] += g[i] * self.u[e * p + j];
            }
        }
        (0..p).map(|j| dot(&self.jinv[j * p..(j + 1) * p], &u_star)).collect()
    }

    /// `A*` at each event time.
    fn breslow_levels(&self, g: &[f64], delta: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut run = 0.0;
        (0..self.event_times.len())
            .map(|k| {
                let gsum: f64 = self.subjects[self.offsets[k]..self.offsets[k + 1]].iter().map(|&i| g[i]).sum();
                run += gsum * self.inv_s0[k];
                self.cum_a[k] + run - dot(&self.cum_b[k * p..(k + 1) * p], delta)
            })
            .collect()
    }

    pub fn refit(&self, g: &[f64]) -> Result<WildRefit> {
        self.check(g)?;
        let delta = self.delta(g);
        let levels = self.breslow_levels(g, &delta);
        let beta_star = self.beta_hat.iter().zip(&delta).map(|(b, d)| b + d).collect();
        let breslow_star = StepFunction::new(0.0, self.event_times.clone(), levels)?;
        Ok(WildRefit { beta_star, breslow_star })
    }

    /// Number of event times `≤ t` for each grid point.
    pub(crate) fn grid_counts(&self, grid: &[f64]) -> Vec<usize> {
        grid.iter().map(|&t| self.event_times.partition_point(|&e| e <= t)).collect()
    }

    /// Replicate CIF at the grid points described by `counts`.
    pub(crate) fn cif_on_grid(&self, g: &[f64], z: &[f64], counts: &[usize], out: &mut [f64]) {
        let delta = self.delta(g);
        let levels = self.breslow_levels(g, &delta);
        let beta_star: Vec<f64> = self.beta_hat.iter().zip(&delta).map(|(b, d)| b + d).collect();
        let risk = dot(z, &beta_star).exp();
        for (o, &c) in out.iter_mut().zip(counts) {
            let a = if c == 0 { 0.0 } else { levels[c - 1] };
            *o = 1.0 - (-risk * a).exp();
        }
    }
}

/// Wild-bootstrap refit of `fit` on the censoring-complete `dataset`.
pub fn wb_refit_cc(fit: &FineGrayFit, dataset: &Dataset, g: &[f64]) -> Result<WildRefit> {
    WildBasis::new(fit, dataset)?.refit(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Completeness, Record};
    use crate::finegray::fit_mple;
    use crate::risk::NewtonOptions;

    fn toy() -> Dataset {
        let rows = [
            ("a", 1.0, 1, 0.5, Some(8.0)),
            ("b", 1.5, 0, -0.3, None),
            ("c", 2.0, 2, 1.2, Some(6.0)),
            ("d", 2.5, 1, -1.0, Some(9.0)),
            ("e", 3.0, 1, 0.8, Some(7.0)),
            ("f", 4.0, 0, 0.1, None),
            ("g", 4.5, 1, -0.4, Some(9.5)),
            ("h", 5.0, 0, 0.7, None),
        ];
        let recs = rows.iter().map(|&(id, t, s, z, c)| Record::new(id, t, s, vec![z], c)).collect();
        Dataset::new(recs, Completeness::CensoringComplete, None).unwrap()
    }

    #[test]
    fn zero_multipliers_return_the_fit() {
        let d = toy();
        let fit = fit_mple(&d, None, &NewtonOptions::default()).unwrap();
        let r = wb_refit_cc(&fit, &d, &vec![0.0; d.len()]).unwrap();
        assert_eq!(r.beta_star, fit.beta_hat);
        for &t in fit.breslow.jump_times() {
            assert_eq!(r.breslow_star.eval(t), fit.breslow.eval(t));
        }
    }

    #[test]
    fn antithetic_pairs_average_to_the_fit() {
        let d = toy();
        let fit = fit_mple(&d, None, &NewtonOptions::default()).unwrap();
        let g: Vec<f64> = (0..d.len()).map(|i| (i as f64 * 1.37).sin() * 1.5).collect();
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let (a, b) = (wb_refit_cc(&fit, &d, &g).unwrap(), wb_refit_cc(&fit, &d, &neg).unwrap());
        assert!((a.beta_star[0] + b.beta_star[0] - 2.0 * fit.beta_hat[0]).abs() < 1e-12);
        for &t in fit.breslow.jump_times() {
            let sum = a.breslow_star.eval(t) + b.breslow_star.eval(t);
            assert!((sum - 2.0 * fit.breslow.eval(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn three_subject_hand_expansion() {
        // two cause-1 events and one censoring; J is a scalar
        let recs = vec![
            Record::new("a", 1.0, 1, vec![1.0], Some(5.0)),
            Record::new("b", 2.0, 1, vec![0.0], Some(5.0)),
            Record::new("c", 3.0, 0, vec![2.0], None),
        ];
        let d = Dataset::new(recs, Completeness::CensoringComplete, None).unwrap();
        let fit = fit_mple(&d, None, &NewtonOptions::default()).unwrap();
        let b = fit.beta_hat[0];
        let (ea, eb, ec) = (b.exp(), 1.0, (2.0 * b).exp());
        // risk sets {a, b, c} at 1 and {b, c} at 2
        let (s0_1, s1_1) = (ea + eb + ec, ea + 2.0 * ec);
        let (s0_2, s1_2) = (eb + ec, 2.0 * ec);
        let (m1, m2) = (s1_1 / s0_1, s1_2 / s0_2);
        let g = [0.7, -1.1, 0.4];
        let u_star = g[0] * (1.0 - m1) + g[1] * (0.0 - m2);
        let jinv = 1.0 / fit.information[0];
        let delta = jinv * u_star;
        let r = wb_refit_cc(&fit, &d, &g).unwrap();
        assert!((r.beta_star[0] - (b + delta)).abs() < 1e-12);
        let a1 = 1.0 / s0_1 + g[0] / s0_1 - m1 / s0_1 * delta;
        let a2 = 1.0 / s0_1 + 1.0 / s0_2 + g[0] / s0_1 + g[1] / s0_2 - (m1 / s0_1 + m2 / s0_2) * delta;
        assert!((r.breslow_star.eval(1.0) - a1).abs() < 1e-12);
        assert!((r.breslow_star.eval(2.5) - a2).abs() < 1e-12);
    }

    #[test]
    fn grid_evaluation_matches_the_refit_curve() {
        let d = toy();
        let fit = fit_mple(&d, None, &NewtonOptions::default()).unwrap();
        let basis = WildBasis::new(&fit, &d).unwrap();
        let g: Vec<f64> = (0..d.len()).map(|i| (i as f64).cos()).collect();
        let grid = [0.5, 1.0, 2.2, 2.5, 3.0, 4.7, 10.0];
        let mut out = vec![0.0; grid.len()];
        basis.cif_on_grid(&g, &[0.3], &basis.grid_counts(&grid), &mut out);
        let curve = basis.refit(&g).unwrap().cif(&[0.3]);
        for (t, v) in grid.iter().zip(&out) {
            assert_eq!(*v, curve.eval(*t));
        }
    }

    #[test]
    fn wrong_multiplier_length() {
        let d = toy();
        let fit = fit_mple(&d, None, &NewtonOptions::default()).unwrap();
        assert!(matches!(wb_refit_cc(&fit, &d, &[0.0]), Err(Error::InvalidSize(_))));
    }
}
