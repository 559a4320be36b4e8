//! Verdicts on the WINE identity, the work decomposition law and the
//! cost-term decomposition, computed from simulation output.
//!
//! Every check is linear in per-batch sums, so each is evaluated batch by
//! batch and its confidence interval comes from the spread across batches.
//!
//! For a rank cutoff `r` the decomposition reads
//!
//! ```text
//! E[W_r] = [rho_r (E[(S_r)_e] - E[S_r] + E[A_e]) + rho_rcy E[(S_rcy)_e]] / (1 - rho_r)
//!          + E_acc[W_r] - rho_r E_acc[A_res]
//! E_acc[V] = (E[(1 - J_r) V] + lambda_rcy E_rcy[S_rcy V]) / (1 - rho_r)
//! ```
//!
//! with the fresh-arrival quantities `rho_r`, `E[S_r]`, `E[(S_r)_e]` and
//! `E[A_e]` taken from the model and everything else measured.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dists::Distribution;
use crate::jobs::{JobKind, JobState, RankFunction};
use crate::quad::{log_space, r_integral};
use crate::sim::{BatchSums, SimConfig, SimStats};
use crate::stats::{batch_estimate, Estimate};

/// Number of half-widths a residual may deviate from zero.
pub const CI_WIDTHS: f64 = 3.0;

/// Fresh-arrival quantities of the model at each grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTerms {
    pub lambda: f64,
    /// E[A_e].
    pub a_excess: f64,
    pub r_grid: Vec<f64>,
    /// E[S_r].
    pub s_r: Vec<f64>,
    /// E[S_r^2].
    pub s_r2: Vec<f64>,
}

impl ModelTerms {
    pub fn new(config: &SimConfig, rf: &RankFunction, r_grid: &[f64]) -> Self {
        let d = &config.job_model.size;
        let (s_r, s_r2) = r_grid.iter().map(|&r| fresh_moments(d, rf, r)).unzip();
        ModelTerms {
            lambda: config.lambda(),
            a_excess: config.arrival.excess_mean(),
            r_grid: r_grid.to_vec(),
            s_r,
            s_r2,
        }
    }

    pub fn rho_r(&self, j: usize) -> f64 {
        self.lambda * self.s_r[j]
    }
}

/// `(E[S_r], E[S_r^2])` for a fresh job.
fn fresh_moments(d: &Distribution, rf: &RankFunction, r: f64) -> (f64, f64) {
    match rf.model().kind {
        JobKind::KnownSize => {
            if r == f64::INFINITY {
                (d.mean(), d.second_moment())
            } else {
                // relevant means remaining work strictly below r
                let below = r.next_down();
                (d.partial_moment(1, below), d.partial_moment(2, below))
            }
        }
        JobKind::UnknownSize => match rf.relevant_intervals(r).first() {
            Some(&(0.0, e)) => (d.limited_mean(e), d.limited_second_moment(e)),
            _ => (0.0, 0.0),
        },
    }
}

/// SRPT r-work moments: `(E[S 1(S <= r)], (lambda/2) E[S^2 1(S <= r)],
/// (lambda/2) r^2 P(S > r))`, i.e. `E[S_r]`, `rho_r E[(S_r)_e]` and
/// `rho_rcy E[(S_rcy)_e]`.
pub fn srpt_closed_form_moments(s: &Distribution, lambda: f64, r: f64) -> (f64, f64, f64) {
    if r <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if r == f64::INFINITY {
        return (s.mean(), 0.5 * lambda * s.second_moment(), 0.0);
    }
    (
        s.partial_moment(1, r),
        0.5 * lambda * s.partial_moment(2, r),
        0.5 * lambda * r * r * s.tail(r),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub r: f64,
    pub lhs: Estimate,
    pub rhs_fixed: f64,
    pub rhs_rcy: Estimate,
    pub rhs_acc_w: Estimate,
    pub rhs_acc_ares: Estimate,
    pub residual: Estimate,
    /// E_acc applied to the constant 1.
    pub acc_one: Estimate,
    pub pass: bool,
}

/// Relative slack for residuals whose batch CI collapses to rounding noise,
/// e.g. at levels where the law holds exactly on every path.
pub const ROUNDOFF: f64 = 1e-9;

/// `|residual|` over its allowance `3 ci + ROUNDOFF max(1, |lhs|)`; a row
/// passes when this is at most 1.
pub fn residual_ratio(residual: Estimate, lhs: Estimate) -> f64 {
    residual.mean.abs() / (CI_WIDTHS * residual.ci + ROUNDOFF * lhs.mean.abs().max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub rows: Vec<DecompositionRow>,
}

impl DecompositionReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "r,lhs,lhs_ci,rhs_fixed,rhs_rcy,rhs_acc_w,rhs_acc_ares,residual,residual_ci,acc_one,acc_one_ci,pass"
        )?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                row.r,
                row.lhs.mean,
                row.lhs.ci,
                row.rhs_fixed,
                row.rhs_rcy.mean,
                row.rhs_acc_w.mean,
                row.rhs_acc_ares.mean,
                row.residual.mean,
                row.residual.ci,
                row.acc_one.mean,
                row.acc_one.ci,
                row.pass
            )?;
        }
        Ok(())
    }
}

/// Per-batch pieces of the decomposition at grid bit `j`.
struct BatchTerms {
    lhs: f64,
    rcy: f64,
    acc_w: f64,
    acc_ares: f64,
    acc_one: f64,
    idle: f64,
    setup: f64,
    palm_sw: f64,
}

fn batch_terms(b: &BatchSums, j: usize, rho_r: f64) -> BatchTerms {
    let t = b.duration;
    let rs = &b.per_r[j];
    let denom = 1.0 - rho_r;
    let nonrel_w = (rs.int_w - rs.int_jw) / t;
    let palm_sw = rs.rcy_sw / t;
    let nonrel_ares = (b.int_ares - rs.int_j_ares) / t;
    BatchTerms {
        lhs: rs.int_w / t,
        rcy: 0.5 * rs.rcy_s2 / t / denom,
        acc_w: (nonrel_w + palm_sw) / denom,
        acc_ares: (nonrel_ares + rs.rcy_sares / t) / denom,
        acc_one: (1.0 - rs.int_j / t + rs.rcy_s / t) / denom,
        idle: (rs.int_w - rs.int_jw - rs.int_jsetup_w) / t / denom,
        setup: rs.int_jsetup_w / t / denom,
        palm_sw: palm_sw / denom,
    }
}

fn rhs_fixed(m: &ModelTerms, j: usize) -> f64 {
    let rho = m.rho_r(j);
    if m.s_r[j] == 0.0 {
        return 0.0;
    }
    let s_e = m.s_r2[j] / (2.0 * m.s_r[j]);
    rho * (s_e - m.s_r[j] + m.a_excess) / (1.0 - rho)
}

/// Checks the work decomposition law at every grid point.
pub fn decomposition_check(stats: &SimStats, model: &ModelTerms) -> DecompositionReport {
    assert_eq!(
        stats.r_grid, model.r_grid,
        "model terms built for another grid"
    );
    let rows = (0..stats.r_grid.len())
        .map(|j| {
            let rho = model.rho_r(j);
            let fixed = rhs_fixed(model, j);
            let terms: Vec<BatchTerms> = stats
                .batches
                .iter()
                .map(|b| batch_terms(b, j, rho))
                .collect();
            let col = |f: &dyn Fn(&BatchTerms) -> f64| {
                batch_estimate(&terms.iter().map(f).collect::<Vec<_>>())
            };
            let residual = col(&|t| t.lhs - (fixed + t.rcy + t.acc_w - rho * t.acc_ares));
            let lhs = col(&|t| t.lhs);
            DecompositionRow {
                r: stats.r_grid[j],
                lhs,
                rhs_fixed: fixed,
                rhs_rcy: col(&|t| t.rcy),
                rhs_acc_w: col(&|t| t.acc_w),
                rhs_acc_ares: col(&|t| rho * t.acc_ares),
                pass: residual_ratio(residual, lhs) <= 1.0,
                residual,
                acc_one: col(&|t| t.acc_one),
            }
        })
        .collect();
    DecompositionReport { rows }
}

/// The four cost terms, the policy-invariant baseline integral, and the
/// WINE value of E[N] from the per-r work, all integrated over the r-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub m_res: Estimate,
    pub m_rcy: Estimate,
    pub m_idle: Estimate,
    pub m_setup: Estimate,
    /// Integral of the fixed and recycling terms of the decomposition.
    pub baseline: Estimate,
    /// Integral of E[W_r] / r^2.
    pub wine_n: Estimate,
    /// `wine_n - (baseline + m_res + m_rcy + m_idle + m_setup)`.
    pub reconstruction_residual: Estimate,
}

impl CostTerms {
    pub fn reconstruction_pass(&self) -> bool {
        self.reconstruction_residual.mean.abs()
            <= CI_WIDTHS * self.reconstruction_residual.ci + 1e-9
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "term,value,ci")?;
        for (name, e) in [
            ("m_res", self.m_res),
            ("m_rcy", self.m_rcy),
            ("m_idle", self.m_idle),
            ("m_setup", self.m_setup),
            ("baseline", self.baseline),
            ("wine_n", self.wine_n),
            ("reconstruction_residual", self.reconstruction_residual),
        ] {
            writeln!(w, "{name},{},{}", e.mean, e.ci)?;
        }
        Ok(())
    }
}

/// Integrates a per-r integrand over the grid, holding the value at `inf`
/// (or the last finite point) beyond the grid.
fn grid_integral(r_grid: &[f64], values: &[f64]) -> f64 {
    let n_fin = r_grid.iter().filter(|r| r.is_finite()).count();
    let f_inf = values[values.len() - 1];
    r_integral(&r_grid[..n_fin], &values[..n_fin], f_inf)
}

/// Cost terms of one run; `model` must be built on the run's r-grid.
pub fn cost_terms(stats: &SimStats, model: &ModelTerms) -> CostTerms {
    assert_eq!(
        stats.r_grid, model.r_grid,
        "model terms built for another grid"
    );
    let nr = stats.r_grid.len();
    let mut series: [Vec<f64>; 7] = Default::default();
    for b in &stats.batches {
        let mut res = vec![0.0; nr];
        let mut rcy = vec![0.0; nr];
        let mut idle = vec![0.0; nr];
        let mut setup = vec![0.0; nr];
        let mut base = vec![0.0; nr];
        let mut w = vec![0.0; nr];
        for j in 0..nr {
            let rho = model.rho_r(j);
            let t = batch_terms(b, j, rho);
            res[j] = -rho * t.acc_ares;
            rcy[j] = t.palm_sw;
            idle[j] = t.idle;
            setup[j] = t.setup;
            base[j] = rhs_fixed(model, j) + t.rcy;
            w[j] = t.lhs;
        }
        let g = &stats.r_grid;
        let vals = [
            grid_integral(g, &res),
            grid_integral(g, &rcy),
            grid_integral(g, &idle),
            grid_integral(g, &setup),
            grid_integral(g, &base),
            grid_integral(g, &w),
        ];
        for (s, v) in series.iter_mut().zip(vals) {
            s.push(v);
        }
        let recon = vals[5] - (vals[4] + vals[0] + vals[1] + vals[2] + vals[3]);
        series[6].push(recon);
    }
    let e = |i: usize| batch_estimate(&series[i]);
    CostTerms {
        m_res: e(0),
        m_rcy: e(1),
        m_idle: e(2),
        m_setup: e(3),
        baseline: e(4),
        wine_n: e(5),
        reconstruction_residual: e(6),
    }
}

/// WINE at sampled epochs: the r-integral of the summed per-job expected
/// r-work against the number of jobs present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WineCheck {
    /// Time-average E[N] from the run.
    pub direct: Estimate,
    /// Mean over epochs of the r-integral.
    pub wine: Estimate,
    /// Largest |integral - N| over epochs.
    pub max_pathwise_error: f64,
    pub epochs: usize,
}

/// `int_0^inf sum_i E[S_r(x_i)] / r^2 dr` for one set of job states.
///
/// Known sizes: the summed r-work is a step function of `r` with a jump of
/// `x_i` at each state, integrated exactly. Unknown sizes: trapezoid in
/// `ln r` on 512 log-spaced points from `1e-3 E[S]` to the largest tabulated
/// rank, with each job's own rank added to the grid and an analytic tail
/// above the top where the r-work no longer depends on `r`.
pub fn pathwise_wine(rf: &RankFunction, states: &[f64]) -> f64 {
    match rf.table() {
        None => {
            let mut xs: Vec<f64> = states.to_vec();
            xs.sort_by(|a, b| a.total_cmp(b));
            let mut total = 0.0;
            let mut w = 0.0;
            for (i, &x) in xs.iter().enumerate() {
                w += x;
                let next = xs.get(i + 1).copied().unwrap_or(f64::INFINITY);
                total += w * (1.0 / x - 1.0 / next);
            }
            total
        }
        Some(t) => {
            let mean = rf.model().size.mean();
            let lo = 1e-3 * mean;
            let hi = t.max_rank().max(lo * 2.0) * (1.0 + 1e-9);
            let base = log_space(lo, hi, 512);
            states
                .iter()
                .map(|&x| {
                    let own = rf.rank_at(x);
                    let mut grid = base.clone();
                    if own > lo && own < hi {
                        // the integrand jumps at the job's own rank
                        let p = grid.partition_point(|&r| r <= own);
                        grid.insert(p, own * (1.0 + 1e-12));
                        grid.insert(p, own);
                    }
                    let state = JobState::new(x);
                    let vals = rf.r_work_profile(state, &grid);
                    let tail = rf.expected_r_work(state, f64::INFINITY);
                    r_integral(&grid, &vals, tail)
                })
                .sum()
        }
    }
}

pub fn wine_check(stats: &SimStats, rf: &RankFunction) -> WineCheck {
    let values: Vec<(f64, f64)> = stats
        .snapshots
        .iter()
        .map(|s| (pathwise_wine(rf, &s.states), s.states.len() as f64))
        .collect();
    let max_err = values
        .iter()
        .map(|(v, n)| (v - n).abs())
        .fold(0.0, f64::max);
    let groups = 20.min(values.len().max(1));
    let per = values.len() / groups.max(1);
    let means: Vec<f64> = if per == 0 {
        values.iter().map(|v| v.0).collect()
    } else {
        values
            .chunks(per)
            .take(groups)
            .map(|c| c.iter().map(|v| v.0).sum::<f64>() / c.len() as f64)
            .collect()
    };
    WineCheck {
        direct: stats.mean_n,
        wine: batch_estimate(&means),
        max_pathwise_error: max_err,
        epochs: values.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jobs::{JobModel, RankGrid};
    use crate::sim::{run_with, Policy};

    fn known_exp() -> RankFunction {
        RankFunction::new(
            &JobModel::new(JobKind::KnownSize, Distribution::Exponential { rate: 1.0 }),
            RankGrid::default(),
        )
        .unwrap()
    }

    #[test]
    fn pathwise_wine_known_examples() {
        let rf = known_exp();
        assert_eq!(pathwise_wine(&rf, &[2.0, 0.5]), 2.0);
        assert_eq!(pathwise_wine(&rf, &[]), 0.0);
    }

    #[test]
    fn pathwise_wine_unknown_is_close_to_n() {
        let rf = RankFunction::new(
            &JobModel::new(
                JobKind::UnknownSize,
                Distribution::Bimodal {
                    low: 1.0,
                    high: 10.0,
                    p_low: 0.9,
                },
            ),
            RankGrid {
                ages: 1024,
                y_points: 1024,
            },
        )
        .unwrap();
        let v = pathwise_wine(&rf, &[0.0, 0.5, 3.0]);
        assert!((v - 3.0).abs() < 3e-2, "{v}");
    }

    #[test]
    fn srpt_moments_examples() {
        let s = Distribution::Exponential { rate: 1.0 };
        assert!((srpt_closed_form_moments(&s, 0.5, f64::INFINITY).0 - 1.0).abs() < 1e-15);
        let (m, _, _) = srpt_closed_form_moments(&s, 0.5, 2.0);
        assert!((m - (1.0 - 3.0 * (-2.0f64).exp())).abs() < 1e-12);
        assert_eq!(srpt_closed_form_moments(&s, 0.5, 0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mm1_total_work_reduces_to_pk() {
        let rf = known_exp();
        let mut c = SimConfig::new(
            1,
            Distribution::Exponential { rate: 0.5 },
            rf.model().clone(),
            Distribution::zero(),
            Policy::Gittins,
            0.0,
        )
        .with_arrivals(2e5);
        c.r_grid = vec![0.5, 1.0, 2.0, f64::INFINITY];
        c.snapshots = 200;
        let s = run_with(&c, &rf).unwrap();
        let m = ModelTerms::new(&c, &rf, &s.r_grid);
        let rep = decomposition_check(&s, &m);
        assert!(rep.pass(), "{rep:?}");
        let last = rep.rows.last().unwrap();
        // rho E[S_e] / (1 - rho) with E_acc[A_res] = 1/lambda
        assert!(last.lhs.covers(1.0, 3.0));
        for row in &rep.rows {
            assert!(row.acc_one.covers(1.0, 3.0), "{row:?}");
        }
        let w = wine_check(&s, &rf);
        assert!(w.max_pathwise_error < 1e-9);
        let ct = cost_terms(&s, &m);
        assert!(ct.m_idle.mean.abs() < 1e-9 && ct.m_setup.mean == 0.0);
        assert!(ct.reconstruction_pass(), "{ct:?}");
    }

    #[test]
    fn csv_writers_emit_one_row_per_r() {
        let rf = known_exp();
        let mut c = SimConfig::new(
            1,
            Distribution::Exponential { rate: 0.5 },
            rf.model().clone(),
            Distribution::zero(),
            Policy::Gittins,
            0.0,
        )
        .with_arrivals(1e4);
        c.r_grid = vec![1.0, f64::INFINITY];
        let s = run_with(&c, &rf).unwrap();
        let m = ModelTerms::new(&c, &rf, &s.r_grid);
        let mut buf = Vec::new();
        decomposition_check(&s, &m).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        let mut buf = Vec::new();
        cost_terms(&s, &m).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 8);
    }
}
