//! Loss terms of the suboptimality-gap bound, and the comparisons of
//! simulated E[N] against bounds and reference systems.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dists::DistError;
use crate::palm::CI_WIDTHS;
use crate::sim::{SimConfig, SimStats};
use crate::stats::Estimate;

/// `C = 9 / (8 ln 1.5) + 1`, about 3.775.
pub fn c_const() -> f64 {
    9.0 / (8.0 * 1.5f64.ln()) + 1.0
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("only {observed} setups observed; at least 100 are needed")]
    InsufficientSamples { observed: u64 },
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// One pass/fail comparison of an observed value against a bound or target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub observed: f64,
    pub ci: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Verdict {
    /// PASS when `observed <= bound + 3 ci`.
    pub fn at_most(name: impl Into<String>, observed: Estimate, bound: f64) -> Verdict {
        Verdict {
            name: name.into(),
            observed: observed.mean,
            ci: observed.ci,
            bound,
            pass: observed.mean <= bound + CI_WIDTHS * observed.ci,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}: observed {:.4} (ci {:.4}) vs bound {:.4} {}",
            self.name,
            self.observed,
            self.ci,
            self.bound,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub loss_a: f64,
    pub loss_b: f64,
    pub loss_c: f64,
    pub c_const: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// E[U_e].
    pub setup_excess: f64,
    pub gap_observed: Option<Estimate>,
    pub verdicts: Vec<Verdict>,
}

impl BoundsReport {
    pub fn total(&self) -> f64 {
        self.loss_a + self.loss_b + self.loss_c
    }
}

/// The three loss terms:
///
/// ```text
/// l_a = C (k - 1) ln(1 / (1 - rho))
/// l_b = lambda (A_max - A_min)
/// l_c = 1(P(U > 0) > 0) (2 (k - 1) + lambda (A_max + k E[U_e]))
/// ```
pub fn loss_terms(config: &SimConfig) -> Result<BoundsReport, BoundsError> {
    let rb = config.arrival.residual_bounds()?;
    let lambda = config.lambda();
    let rho = config.rho();
    let k = config.k as f64;
    let c = c_const();
    let loss_a = c * (k - 1.0) * (1.0 / (1.0 - rho)).ln();
    let loss_b = lambda * (rb.a_max - rb.a_min);
    let setup_excess = config.setup.excess_mean();
    let loss_c = if config.setup.is_zero() {
        0.0
    } else {
        2.0 * (k - 1.0) + lambda * (rb.a_max + k * setup_excess)
    };
    Ok(BoundsReport {
        loss_a,
        loss_b,
        loss_c,
        c_const: c,
        a_min: rb.a_min,
        a_max: rb.a_max,
        setup_excess,
        gap_observed: None,
        verdicts: Vec::new(),
    })
}

/// Difference of two independent estimates.
pub fn difference(a: Estimate, b: Estimate) -> Estimate {
    Estimate::new(a.mean - b.mean, (a.ci * a.ci + b.ci * b.ci).sqrt())
}

/// Ratio of two independent estimates with a first-order half-width.
pub fn ratio(a: Estimate, b: Estimate) -> Estimate {
    let r = a.mean / b.mean;
    let rel = ((a.ci / a.mean).powi(2) + (b.ci / b.mean).powi(2)).sqrt();
    Estimate::new(r, r.abs() * rel)
}

/// Gittins in the G/G/k/setup against SRPT in the G/G/1 with the same
/// arrivals and sizes: the gap in E[N] must not exceed the loss terms.
pub fn check_gap_multiserver(
    config: &SimConfig,
    gtn: &SimStats,
    baseline: &SimStats,
) -> Result<BoundsReport, BoundsError> {
    let mut rep = loss_terms(config)?;
    let gap = difference(gtn.mean_n, baseline.mean_n);
    rep.gap_observed = Some(gap);
    rep.verdicts.push(Verdict::at_most("gap", gap, rep.total()));
    Ok(rep)
}

/// E[N] under Gittins must not exceed E[N] under any other non-idling
/// policy of the same M/G/1/setup.
pub fn check_single_server_optimality(
    gittins: &SimStats,
    others: &[(String, SimStats)],
) -> Vec<Verdict> {
    others
        .iter()
        .map(|(name, s)| {
            // mean_n(Gtn) - mean_n(pi) <= 0 within the combined interval
            Verdict::at_most(
                format!("gittins vs {name}"),
                difference(gittins.mean_n, s.mean_n),
                0.0,
            )
        })
        .collect()
}

/// Heavy-traffic limit of E[N] under SRPT in the G/G/1 over the M/G/1:
/// `(c_S^2 + c_A^2) / (c_S^2 + 1)`.
pub fn heavy_traffic_limit(cs2: f64, ca2: f64) -> f64 {
    (cs2 + ca2) / (cs2 + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub rho: f64,
    pub ratio: Estimate,
}

/// Per-load ratio `E[N]_num / E[N]_den` over a load sweep.
pub fn heavy_traffic_ratio(series: &[(f64, &SimStats, &SimStats)]) -> Vec<RatioPoint> {
    series
        .iter()
        .map(|&(rho, num, den)| RatioPoint {
            rho,
            ratio: ratio(num.mean_n, den.mean_n),
        })
        .collect()
}

/// Whether the point estimates get strictly closer to `target` as the load
/// increases.
pub fn approaches(points: &[RatioPoint], target: f64) -> bool {
    points
        .windows(2)
        .all(|w| (w[1].ratio.mean - target).abs() < (w[0].ratio.mean - target).abs())
}

/// Whether the point estimates strictly decrease as the load increases.
pub fn decreasing(points: &[RatioPoint]) -> bool {
    points.windows(2).all(|w| w[1].ratio.mean < w[0].ratio.mean)
}

/// Conditional mean of N given that a particular server is setting up with
/// setup age `a` must satisfy `E[N | a] <= lambda a + lambda A_max + k - 1`.
/// Checked per setup-age bin against the bin's mean age. Returns `None`
/// when setups have zero work (the check is vacuous).
pub fn check_setup_number_bound(
    config: &SimConfig,
    stats: &SimStats,
) -> Result<Option<Vec<Verdict>>, BoundsError> {
    if config.setup.is_zero() {
        return Ok(None);
    }
    if stats.setups_started < 100 {
        return Err(BoundsError::InsufficientSamples {
            observed: stats.setups_started,
        });
    }
    let a_max = config.arrival.residual_bounds()?.a_max;
    let lambda = config.lambda();
    let k = config.k as f64;
    let verdicts = stats
        .setup_bins
        .iter()
        .enumerate()
        .filter(|(_, b)| b.time > 0.0)
        .map(|(i, b)| {
            let bound = lambda * b.mean_age.mean + lambda * a_max + k - 1.0;
            Verdict::at_most(format!("setup age bin {i}"), b.mean_n, bound)
        })
        .collect();
    Ok(Some(verdicts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::Distribution;
    use crate::jobs::{JobKind, JobModel};
    use crate::sim::Policy;

    fn cfg(k: usize, arrival: Distribution, setup: Distribution) -> SimConfig {
        SimConfig::new(
            k,
            arrival,
            JobModel::new(JobKind::KnownSize, Distribution::Exponential { rate: 1.0 }),
            setup,
            Policy::Gittins,
            1.0,
        )
    }

    #[test]
    fn constant_value() {
        assert!((c_const() - 3.775).abs() < 1e-3);
    }

    #[test]
    fn loss_examples() {
        let r = loss_terms(&cfg(
            1,
            Distribution::Exponential { rate: 0.5 },
            Distribution::zero(),
        ))
        .unwrap();
        assert_eq!((r.loss_a, r.loss_b, r.loss_c), (0.0, 0.0, 0.0));

        // k = 2 with rho = 0.5 needs lambda = 1 for E[S] = 2: scale sizes
        let mut c = cfg(
            2,
            Distribution::Exponential { rate: 0.25 },
            Distribution::zero(),
        );
        c.job_model.size = Distribution::Exponential { rate: 0.5 };
        let r = loss_terms(&c).unwrap();
        assert!((r.loss_a - c_const() * 2f64.ln()).abs() < 1e-12);
        assert!((r.loss_a - 2.6166).abs() < 1e-3);
        assert_eq!((r.loss_b, r.loss_c), (0.0, 0.0));

        let r = loss_terms(&cfg(
            2,
            Distribution::Deterministic { value: 2.0 },
            Distribution::Deterministic { value: 1.0 },
        ))
        .unwrap();
        assert!((r.loss_b - 1.0).abs() < 1e-12);
        assert!((r.loss_c - 3.5).abs() < 1e-12);
    }

    #[test]
    fn loss_a_grows_with_load_and_servers() {
        let mut prev = 0.0;
        for rho in [0.3, 0.5, 0.7, 0.9, 0.99] {
            let c = cfg(
                2,
                Distribution::Exponential { rate: 1.0 },
                Distribution::zero(),
            )
            .with_rho(rho);
            let r = loss_terms(&c).unwrap();
            assert!(r.loss_a > prev);
            prev = r.loss_a;
        }
        let a2 = loss_terms(&cfg(
            2,
            Distribution::Exponential { rate: 0.5 },
            Distribution::zero(),
        ))
        .unwrap();
        let a3 = loss_terms(&cfg(
            3,
            Distribution::Exponential { rate: 0.5 },
            Distribution::zero(),
        ))
        .unwrap();
        assert!(a3.loss_a > a2.loss_a);
    }

    #[test]
    fn loss_b_tracks_lambda_under_scaling() {
        let base = cfg(
            1,
            Distribution::Uniform {
                low: 0.0,
                high: 2.0,
            },
            Distribution::zero(),
        );
        for rho in [0.5, 0.8, 0.95] {
            let c = base.with_rho(rho);
            let rb = c.arrival.residual_bounds().unwrap();
            let r = loss_terms(&c).unwrap();
            assert!((r.loss_b - c.lambda() * (rb.a_max - rb.a_min)).abs() < 1e-12);
        }
    }

    #[test]
    fn setup_bound_example_values() {
        // k = 1, Poisson lambda = 0.5, A_max = 2: bound at a = 1 is 1.5
        let lambda: f64 = 0.5;
        assert!((lambda * 1.0 + lambda * 2.0 + 0.0 - 1.5).abs() < 1e-12);
        // k = 2, Uniform(0, 2) arrivals: lambda = 1, A_max = 1, bound at a = 0 is 2
        let c = cfg(
            2,
            Distribution::Uniform {
                low: 0.0,
                high: 2.0,
            },
            Distribution::Deterministic { value: 1.0 },
        );
        let a_max = c.arrival.residual_bounds().unwrap().a_max;
        assert!((c.lambda() * 0.0 + c.lambda() * a_max + 1.0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn setup_bound_vacuous_without_setups() {
        let c = cfg(
            1,
            Distribution::Exponential { rate: 0.5 },
            Distribution::zero(),
        );
        let s = crate::sim::run(&c.clone().with_arrivals(1e3)).unwrap();
        assert_eq!(check_setup_number_bound(&c, &s), Ok(None));
    }

    #[test]
    fn trend_helpers() {
        let p = |rho, m| RatioPoint {
            rho,
            ratio: Estimate::new(m, 0.0),
        };
        assert!(approaches(&[p(0.8, 0.7), p(0.9, 0.6), p(0.95, 0.55)], 0.5));
        assert!(!approaches(&[p(0.8, 0.6), p(0.9, 0.7)], 0.5));
        assert!(decreasing(&[p(0.8, 2.0), p(0.9, 1.5)]));
        assert!((heavy_traffic_limit(1.0, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(heavy_traffic_limit(1.0, 1.0), 1.0);
    }
}
