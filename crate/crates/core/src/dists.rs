//! Parametric nonnegative distributions used for interarrival times, job
//! sizes and setup work.
//!
//! Every family exposes exact moments, the tail function, partial moments
//! `E[V^n 1(V <= x)]` for `n <= 2`, and the bounds on the conditional mean
//! residual `E[V - a | V > a]` that the gap bounds are stated in terms of.

use rand::Rng;
use rand_distr::{Distribution as _, Exp, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid {family} parameters: {reason}")]
    InvalidParams {
        family: &'static str,
        reason: String,
    },
    #[error("identically zero distribution is only allowed for setup work")]
    ZeroNotAllowed,
    #[error("conditional mean residual is unbounded (sup exceeds {0})")]
    UnboundedResidual(f64),
}

/// A nonnegative random variable, described in config files as
/// `{ family = "...", <params> }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Deterministic {
        value: f64,
    },
    Exponential {
        rate: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Mixture of exponentials: branch `i` is chosen with `probs[i]` and has rate `rates[i]`.
    Hyperexponential {
        probs: Vec<f64>,
        rates: Vec<f64>,
    },
    Erlang {
        shape: u32,
        rate: f64,
    },
    BoundedPareto {
        alpha: f64,
        low: f64,
        high: f64,
    },
    /// Two-point distribution: `low` with probability `p_low`, otherwise `high`.
    Bimodal {
        low: f64,
        high: f64,
        p_low: f64,
    },
}

/// Bounds `[a_min, a_max]` on `E[A - a | A > a]` over all ages `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualBounds {
    pub a_min: f64,
    pub a_max: f64,
}

impl ResidualBounds {
    pub fn contains(&self, v: f64, eps: f64) -> bool {
        v >= self.a_min - eps && v <= self.a_max + eps
    }
}

fn positive(family: &'static str, name: &str, v: f64) -> Result<(), DistError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DistError::InvalidParams {
            family,
            reason: format!("{name} must be finite and > 0, got {v}"),
        })
    }
}

fn exp_partial(rate: f64, n: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let z = rate * x;
    let e = (-z).exp();
    match n {
        0 => -(-z).exp_m1(),
        1 => (1.0 - (1.0 + z) * e) / rate,
        2 => (2.0 - (z * z + 2.0 * z + 2.0) * e) / (rate * rate),
        _ => unreachable!("partial moments only up to order 2"),
    }
}

/// P(Erlang(shape, rate) > x).
fn erlang_tail(shape: u32, rate: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let z = rate * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..shape {
        term *= z / i as f64;
        sum += term;
    }
    (sum.ln() - z).exp().min(1.0)
}

impl Distribution {
    pub fn zero() -> Self {
        Distribution::Deterministic { value: 0.0 }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Distribution::Deterministic { .. } => "deterministic",
            Distribution::Exponential { .. } => "exponential",
            Distribution::Uniform { .. } => "uniform",
            Distribution::Hyperexponential { .. } => "hyperexponential",
            Distribution::Erlang { .. } => "erlang",
            Distribution::BoundedPareto { .. } => "bounded_pareto",
            Distribution::Bimodal { .. } => "bimodal",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Distribution::Deterministic { value } if *value == 0.0)
    }

    /// Checks parameters. `allow_zero` admits the identically-zero
    /// distribution (setup work only).
    pub fn validate(&self, allow_zero: bool) -> Result<(), DistError> {
        let fam = self.family_name();
        match self {
            Distribution::Deterministic { value } => {
                if *value == 0.0 {
                    if allow_zero {
                        return Ok(());
                    }
                    return Err(DistError::ZeroNotAllowed);
                }
                positive(fam, "value", *value)
            }
            Distribution::Exponential { rate } => positive(fam, "rate", *rate),
            Distribution::Uniform { low, high } => {
                if !(low.is_finite() && *low >= 0.0 && high.is_finite() && high > low) {
                    return Err(DistError::InvalidParams {
                        family: fam,
                        reason: format!("need 0 <= low < high, got low={low} high={high}"),
                    });
                }
                Ok(())
            }
            Distribution::Hyperexponential { probs, rates } => {
                if probs.is_empty() || probs.len() != rates.len() {
                    return Err(DistError::InvalidParams {
                        family: fam,
                        reason: "probs and rates must be non-empty and of equal length".into(),
                    });
                }
                for r in rates {
                    positive(fam, "rate", *r)?;
                }
                for p in probs {
                    positive(fam, "prob", *p)?;
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(DistError::InvalidParams {
                        family: fam,
                        reason: format!("probs must sum to 1, got {total}"),
                    });
                }
                Ok(())
            }
            Distribution::Erlang { shape, rate } => {
                if *shape == 0 {
                    return Err(DistError::InvalidParams {
                        family: fam,
                        reason: "shape must be >= 1".into(),
                    });
                }
                positive(fam, "rate", *rate)
            }
            Distribution::BoundedPareto { alpha, low, high } => {
                positive(fam, "alpha", *alpha)?;
                positive(fam, "low", *low)?;
                positive(fam, "high", *high)?;
                if high <= low {
                    return Err(DistError::InvalidParams {
                        family: fam,
                        reason: format!("high ({high}) must exceed low ({low})"),
                    });
                }
                Ok(())
            }
            Distribution::Bimodal { low, high, p_low } => {
                positive(fam, "low", *low)?;
                positive(fam, "high", *high)?;
                if high <= low || !(*p_low > 0.0 && *p_low < 1.0) {
                    return Err(DistError::InvalidParams {
                        family: fam,
                        reason: format!(
                            "need low < high and 0 < p_low < 1, got {low}, {high}, {p_low}"
                        ),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::Deterministic { value } => *value,
            Distribution::Exponential { rate } => {
                Exp::new(*rate).expect("validated rate").sample(rng)
            }
            Distribution::Uniform { low, high } => rng.gen_range(*low..*high),
            Distribution::Hyperexponential { probs, rates } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut branch = rates.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        branch = i;
                        break;
                    }
                }
                Exp::new(rates[branch]).expect("validated rate").sample(rng)
            }
            Distribution::Erlang { shape, rate } => Gamma::new(*shape as f64, 1.0 / rate)
                .expect("validated erlang")
                .sample(rng),
            Distribution::BoundedPareto { alpha, low, high } => {
                let u: f64 = rng.gen();
                let ratio = (low / high).powf(*alpha);
                low * (1.0 - u * (1.0 - ratio)).powf(-1.0 / alpha)
            }
            Distribution::Bimodal { low, high, p_low } => {
                if rng.gen::<f64>() < *p_low {
                    *low
                } else {
                    *high
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    pub fn second_moment(&self) -> f64 {
        self.raw_moment(2)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() - m * m).max(0.0)
    }

    fn raw_moment(&self, n: u32) -> f64 {
        match self {
            Distribution::Deterministic { value } => value.powi(n as i32),
            Distribution::Exponential { rate } => factorial(n) / rate.powi(n as i32),
            Distribution::Uniform { low, high } => {
                (high.powi(n as i32 + 1) - low.powi(n as i32 + 1))
                    / ((n as f64 + 1.0) * (high - low))
            }
            Distribution::Hyperexponential { probs, rates } => probs
                .iter()
                .zip(rates)
                .map(|(p, r)| p * factorial(n) / r.powi(n as i32))
                .sum(),
            Distribution::Erlang { shape, rate } => {
                let k = *shape as f64;
                (0..n).map(|i| k + i as f64).product::<f64>() / rate.powi(n as i32)
            }
            Distribution::BoundedPareto { high, .. } => self.partial_moment(n, *high),
            Distribution::Bimodal { low, high, p_low } => {
                p_low * low.powi(n as i32) + (1.0 - p_low) * high.powi(n as i32)
            }
        }
    }

    /// P(V > t).
    pub fn tail(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 1.0;
        }
        match self {
            Distribution::Deterministic { value } => {
                if t < *value {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::Exponential { rate } => (-rate * t).exp(),
            Distribution::Uniform { low, high } => ((high - t) / (high - low)).clamp(0.0, 1.0),
            Distribution::Hyperexponential { probs, rates } => probs
                .iter()
                .zip(rates)
                .map(|(p, r)| p * (-r * t).exp())
                .sum(),
            Distribution::Erlang { shape, rate } => erlang_tail(*shape, *rate, t),
            Distribution::BoundedPareto { alpha, low, high } => {
                if t < *low {
                    1.0
                } else if t >= *high {
                    0.0
                } else {
                    let norm = 1.0 - (low / high).powf(*alpha);
                    (((low / t).powf(*alpha)) - (low / high).powf(*alpha)) / norm
                }
            }
            Distribution::Bimodal { low, high, p_low } => {
                if t < *low {
                    1.0
                } else if t < *high {
                    1.0 - p_low
                } else {
                    0.0
                }
            }
        }
    }

    /// P(V <= t).
    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.tail(t)
    }

    /// Density of the absolutely continuous part at `t` (zero for atoms).
    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Distribution::Deterministic { .. } | Distribution::Bimodal { .. } => 0.0,
            Distribution::Exponential { rate } => rate * (-rate * t).exp(),
            Distribution::Uniform { low, high } => {
                if t >= *low && t < *high {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
            Distribution::Hyperexponential { probs, rates } => probs
                .iter()
                .zip(rates)
                .map(|(p, r)| p * r * (-r * t).exp())
                .sum(),
            Distribution::Erlang { shape, rate } => {
                let k = *shape as f64;
                let log = k * rate.ln() + (k - 1.0) * t.ln() - rate * t - ln_factorial(*shape - 1);
                if t == 0.0 {
                    if *shape == 1 {
                        *rate
                    } else {
                        0.0
                    }
                } else {
                    log.exp()
                }
            }
            Distribution::BoundedPareto { alpha, low, high } => {
                if t < *low || t >= *high {
                    0.0
                } else {
                    let norm = 1.0 - (low / high).powf(*alpha);
                    alpha * low.powf(*alpha) * t.powf(-alpha - 1.0) / norm
                }
            }
        }
    }

    /// Point masses of the distribution.
    pub fn atoms(&self) -> Vec<f64> {
        match self {
            Distribution::Deterministic { value } => vec![*value],
            Distribution::Bimodal { low, high, .. } => vec![*low, *high],
            _ => Vec::new(),
        }
    }

    /// E[V^n 1(V <= x)] for n in {0, 1, 2}.
    pub fn partial_moment(&self, n: u32, x: f64) -> f64 {
        assert!(n <= 2, "partial moments only up to order 2");
        if x < 0.0 {
            return 0.0;
        }
        match self {
            Distribution::Deterministic { value } => {
                if *value <= x {
                    value.powi(n as i32)
                } else {
                    0.0
                }
            }
            Distribution::Exponential { rate } => exp_partial(*rate, n, x),
            Distribution::Uniform { low, high } => {
                if x < *low {
                    0.0
                } else {
                    let top = x.min(*high);
                    (top.powi(n as i32 + 1) - low.powi(n as i32 + 1))
                        / ((n as f64 + 1.0) * (high - low))
                }
            }
            Distribution::Hyperexponential { probs, rates } => probs
                .iter()
                .zip(rates)
                .map(|(p, r)| p * exp_partial(*r, n, x))
                .sum(),
            Distribution::Erlang { shape, rate } => {
                let k = *shape as f64;
                let coef = (0..n).map(|i| k + i as f64).product::<f64>() / rate.powi(n as i32);
                coef * (1.0 - erlang_tail(shape + n, *rate, x))
            }
            Distribution::BoundedPareto { alpha, low, high } => {
                if x < *low {
                    return 0.0;
                }
                let top = x.min(*high);
                let norm = 1.0 - (low / high).powf(*alpha);
                let c = alpha * low.powf(*alpha) / norm;
                let e = n as f64 - alpha;
                if e.abs() < 1e-12 {
                    c * (top / low).ln()
                } else {
                    c * (top.powf(e) - low.powf(e)) / e
                }
            }
            Distribution::Bimodal { low, high, p_low } => {
                let mut s = 0.0;
                if *low <= x {
                    s += p_low * low.powi(n as i32);
                }
                if *high <= x {
                    s += (1.0 - p_low) * high.powi(n as i32);
                }
                s
            }
        }
    }

    /// P(a < V <= b), computed without cancellation where the family allows.
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self {
            Distribution::Exponential { rate } => {
                let a = a.max(0.0);
                (-rate * a).exp() * -(-rate * (b - a)).exp_m1()
            }
            Distribution::Hyperexponential { probs, rates } => {
                let a = a.max(0.0);
                probs
                    .iter()
                    .zip(rates)
                    .map(|(p, r)| p * (-r * a).exp() * -(-r * (b - a)).exp_m1())
                    .sum()
            }
            _ => (self.tail(a) - self.tail(b)).max(0.0),
        }
    }

    /// Integral of the tail over [a, b] (b may be infinite), i.e.
    /// E[min(V, b) - min(V, a)].
    pub fn tail_integral(&self, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        if b <= a {
            return 0.0;
        }
        let exp_piece = |rate: f64| {
            if b == f64::INFINITY {
                (-rate * a).exp() / rate
            } else {
                (-rate * a).exp() * -(-rate * (b - a)).exp_m1() / rate
            }
        };
        match self {
            Distribution::Exponential { rate } => exp_piece(*rate),
            Distribution::Hyperexponential { probs, rates } => probs
                .iter()
                .zip(rates)
                .map(|(p, r)| p * exp_piece(*r))
                .sum(),
            Distribution::Deterministic { value } => (b.min(*value) - a).max(0.0),
            Distribution::Bimodal { low, high, p_low } => {
                let seg = |lo: f64, hi: f64| (b.min(hi) - a.max(lo)).max(0.0);
                seg(0.0, *low) + (1.0 - p_low) * seg(*low, *high)
            }
            Distribution::Uniform { low, high } => {
                let below = (b.min(*low) - a).max(0.0);
                let (s, e) = (a.max(*low), b.min(*high));
                let inside = if e > s {
                    ((high - s).powi(2) - (high - e).powi(2)) / (2.0 * (high - low))
                } else {
                    0.0
                };
                below + inside
            }
            _ => (self.limited_mean(b) - self.limited_mean(a)).max(0.0),
        }
    }

    /// E[min(V, y)].
    pub fn limited_mean(&self, y: f64) -> f64 {
        if y == f64::INFINITY {
            return self.mean();
        }
        self.partial_moment(1, y) + y * self.tail(y)
    }

    /// E[min(V, y)^2].
    pub fn limited_second_moment(&self, y: f64) -> f64 {
        if y == f64::INFINITY {
            return self.second_moment();
        }
        self.partial_moment(2, y) + y * y * self.tail(y)
    }

    /// E[V - a | V > a]; `None` when P(V > a) = 0.
    pub fn mean_residual(&self, a: f64) -> Option<f64> {
        let t = self.tail(a);
        if t <= 0.0 {
            return None;
        }
        Some(self.tail_integral(a, f64::INFINITY) / t)
    }

    /// Inverse CDF: smallest x with P(V <= x) >= p.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            Distribution::Deterministic { value } => *value,
            Distribution::Exponential { rate } => -(-p).ln_1p() / rate,
            Distribution::Uniform { low, high } => low + p * (high - low),
            Distribution::Bimodal { low, high, p_low } => {
                if p <= *p_low {
                    *low
                } else {
                    *high
                }
            }
            Distribution::BoundedPareto { alpha, low, high } => {
                let ratio = (low / high).powf(*alpha);
                (low * (1.0 - p * (1.0 - ratio)).powf(-1.0 / alpha)).min(*high)
            }
            _ => {
                let mut hi = self.mean().max(1e-300);
                while self.cdf(hi) < p {
                    hi *= 2.0;
                    if !hi.is_finite() {
                        return f64::INFINITY;
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                hi
            }
        }
    }

    /// Mean of the excess (equilibrium) distribution, E[V^2] / (2 E[V]);
    /// zero for the identically-zero distribution.
    pub fn excess_mean(&self) -> f64 {
        let m = self.mean();
        if m == 0.0 {
            0.0
        } else {
            self.second_moment() / (2.0 * m)
        }
    }

    /// Tail of the excess distribution, P(V_e > t).
    pub fn excess_tail(&self, t: f64) -> f64 {
        let m = self.mean();
        if m == 0.0 {
            return 0.0;
        }
        ((m - self.limited_mean(t)) / m).clamp(0.0, 1.0)
    }

    /// Squared coefficient of variation Var[V] / E[V]^2.
    pub fn cv2(&self) -> f64 {
        let m = self.mean();
        self.variance() / (m * m)
    }

    /// The same family with time rescaled by `factor` (V -> factor * V).
    pub fn scaled(&self, factor: f64) -> Distribution {
        match self {
            Distribution::Deterministic { value } => Distribution::Deterministic {
                value: value * factor,
            },
            Distribution::Exponential { rate } => Distribution::Exponential {
                rate: rate / factor,
            },
            Distribution::Uniform { low, high } => Distribution::Uniform {
                low: low * factor,
                high: high * factor,
            },
            Distribution::Hyperexponential { probs, rates } => Distribution::Hyperexponential {
                probs: probs.clone(),
                rates: rates.iter().map(|r| r / factor).collect(),
            },
            Distribution::Erlang { shape, rate } => Distribution::Erlang {
                shape: *shape,
                rate: rate / factor,
            },
            Distribution::BoundedPareto { alpha, low, high } => Distribution::BoundedPareto {
                alpha: *alpha,
                low: low * factor,
                high: high * factor,
            },
            Distribution::Bimodal { low, high, p_low } => Distribution::Bimodal {
                low: low * factor,
                high: high * factor,
                p_low: *p_low,
            },
        }
    }

    /// Analytic `[inf, sup]` of E[A - a | A > a] where available, numeric
    /// sweep otherwise.
    pub fn residual_bounds(&self) -> Result<ResidualBounds, DistError> {
        let b = match self {
            Distribution::Deterministic { value } => ResidualBounds {
                a_min: 0.0,
                a_max: *value,
            },
            Distribution::Exponential { rate } => ResidualBounds {
                a_min: 1.0 / rate,
                a_max: 1.0 / rate,
            },
            // E[A - t | A > t] is (low+high)/2 - t below low and (high - t)/2 above.
            Distribution::Uniform { low, high } => ResidualBounds {
                a_min: 0.0,
                a_max: 0.5 * (low + high),
            },
            // IFR: mean residual decreases from the mean to 1/rate.
            Distribution::Erlang { shape, rate } => ResidualBounds {
                a_min: 1.0 / rate,
                a_max: *shape as f64 / rate,
            },
            // DFR: mean residual increases from the mean to 1/min rate.
            Distribution::Hyperexponential { rates, .. } => {
                let min_rate = rates.iter().cloned().fold(f64::INFINITY, f64::min);
                ResidualBounds {
                    a_min: self.mean(),
                    a_max: 1.0 / min_rate,
                }
            }
            Distribution::Bimodal { low, high, .. } => ResidualBounds {
                a_min: 0.0,
                a_max: self.mean().max(high - low),
            },
            Distribution::BoundedPareto { .. } => return self.residual_bounds_numeric(10_000),
        };
        Ok(b)
    }

    /// Sweeps E[A - a | A > a] over `points` ages up to the 1 - 1e-9
    /// quantile (plus the atoms and their left neighbourhoods).
    pub fn residual_bounds_numeric(&self, points: usize) -> Result<ResidualBounds, DistError> {
        let top = self.quantile(1.0 - 1e-9);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut visit = |a: f64| {
            if let Some(m) = self.mean_residual(a) {
                lo = lo.min(m);
                hi = hi.max(m);
            }
        };
        for i in 0..=points {
            visit(top * i as f64 / points as f64);
        }
        for atom in self.atoms() {
            visit(atom);
            visit(atom * (1.0 - 1e-12));
        }
        if !hi.is_finite() || !lo.is_finite() || hi > 1e9 * self.mean() {
            return Err(DistError::UnboundedResidual(hi));
        }
        Ok(ResidualBounds {
            a_min: lo,
            a_max: hi,
        })
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn families() -> Vec<Distribution> {
        vec![
            Distribution::Deterministic { value: 2.0 },
            Distribution::Exponential { rate: 1.0 },
            Distribution::Uniform {
                low: 0.0,
                high: 4.0,
            },
            Distribution::Hyperexponential {
                probs: vec![0.5, 0.5],
                rates: vec![2.0, 2.0 / 3.0],
            },
            Distribution::Erlang {
                shape: 3,
                rate: 2.0,
            },
            Distribution::BoundedPareto {
                alpha: 1.5,
                low: 0.5,
                high: 50.0,
            },
            Distribution::Bimodal {
                low: 1.0,
                high: 10.0,
                p_low: 0.9,
            },
        ]
    }

    #[test]
    fn deterministic_sample_is_point_mass() {
        let d = Distribution::Deterministic { value: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| d.sample(&mut rng) == 2.0));
    }

    #[test]
    fn exponential_sample_mean_and_reproducibility() {
        let d = Distribution::Exponential { rate: 1.0 };
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = d.sample(&mut a);
            assert_eq!(x, d.sample(&mut b));
            sum += x;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn uniform_support() {
        let d = Distribution::Uniform {
            low: 0.0,
            high: 4.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).all(|_| {
            let x = d.sample(&mut rng);
            (0.0..=4.0).contains(&x)
        }));
    }

    #[test]
    fn excess_mean_examples() {
        assert_relative_eq!(
            Distribution::Deterministic { value: 2.0 }.excess_mean(),
            1.0
        );
        assert_relative_eq!(Distribution::Exponential { rate: 1.0 }.excess_mean(), 1.0);
        assert_relative_eq!(
            Distribution::Uniform {
                low: 0.0,
                high: 1.0
            }
            .excess_mean(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert_eq!(Distribution::zero().excess_mean(), 0.0);
    }

    #[test]
    fn residual_bound_examples() {
        let lam = 0.4;
        let b = Distribution::Exponential { rate: lam }
            .residual_bounds()
            .unwrap();
        assert_relative_eq!(b.a_min, 1.0 / lam);
        assert_relative_eq!(b.a_max, 1.0 / lam);
        let b = Distribution::Deterministic { value: 3.0 }
            .residual_bounds()
            .unwrap();
        assert_eq!((b.a_min, b.a_max), (0.0, 3.0));
        let b = Distribution::Uniform {
            low: 0.0,
            high: 4.0,
        }
        .residual_bounds()
        .unwrap();
        assert_eq!((b.a_min, b.a_max), (0.0, 2.0));
    }

    #[test]
    fn cv2_examples() {
        assert_relative_eq!(
            Distribution::Exponential { rate: 3.0 }.cv2(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(Distribution::Deterministic { value: 5.0 }.cv2(), 0.0);
        // p = 1/2 mixture of rates 2 and 2/3: E[S] = 1, E[S^2] = 2.5.
        let h = Distribution::Hyperexponential {
            probs: vec![0.5, 0.5],
            rates: vec![2.0, 2.0 / 3.0],
        };
        assert_relative_eq!(h.cv2(), 1.5, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = h.sample(&mut rng);
            s1 += x;
            s2 += x * x;
        }
        let m = s1 / n as f64;
        let v = s2 / n as f64 - m * m;
        assert!(((v / (m * m)) - 1.5).abs() / 1.5 < 0.01);
    }

    #[test]
    fn moments_match_samples_for_every_family() {
        for d in families() {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let n = 1_000_000;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += d.sample(&mut rng);
            }
            let se = (d.variance() / n as f64).sqrt();
            let mean = sum / n as f64;
            assert!(
                (mean - d.mean()).abs() <= 3.0 * se + 1e-12,
                "{}: sample mean {mean} vs {}",
                d.family_name(),
                d.mean()
            );
        }
    }

    #[test]
    fn partial_moments_agree_with_quadrature() {
        for d in families() {
            let top = d.quantile(1.0 - 1e-12);
            for &x in &[0.3, 1.0, 2.5, 7.0] {
                // E[min(V, x)] = int_0^x P(V > t) dt, E[min(V,x)^2] = int_0^x 2t P(V>t) dt
                let m = 20_000;
                let h = x / m as f64;
                let (mut q1, mut q2) = (0.0, 0.0);
                for i in 0..m {
                    let t = (i as f64 + 0.5) * h;
                    q1 += d.tail(t) * h;
                    q2 += 2.0 * t * d.tail(t) * h;
                }
                let tol = 2e-3 * d.mean().max(1.0);
                assert!(
                    (d.limited_mean(x) - q1).abs() < tol,
                    "{} x={x}",
                    d.family_name()
                );
                assert!((d.limited_second_moment(x) - q2).abs() < tol * x.max(1.0) * 2.0);
            }
            assert!((d.partial_moment(1, top) - d.mean()).abs() < 1e-6 * d.mean());
        }
    }

    #[test]
    fn jensen_and_excess_inequality() {
        for d in families() {
            assert!(d.second_moment() >= d.mean() * d.mean() * (1.0 - 1e-12));
            assert!(d.excess_mean() >= d.mean() / 2.0 - 1e-12);
        }
        let det = Distribution::Deterministic { value: 1.7 };
        assert_relative_eq!(det.excess_mean(), det.mean() / 2.0);
    }

    #[test]
    fn tail_is_monotone() {
        for d in families() {
            let top = d.quantile(1.0 - 1e-9) * 1.1;
            let mut prev = d.tail(0.0);
            assert!(prev <= 1.0);
            for i in 1..=1000 {
                let t = top * i as f64 / 1000.0;
                let cur = d.tail(t);
                assert!(cur <= prev + 1e-15, "{} at {t}", d.family_name());
                prev = cur;
            }
            assert!(prev < 1e-6);
        }
    }

    #[test]
    fn residual_bounds_contain_numeric_sweep() {
        for d in families() {
            let b = d.residual_bounds().unwrap();
            let top = d.quantile(1.0 - 1e-9);
            let eps = 1e-6 * b.a_max;
            for i in 0..1000 {
                let a = top * i as f64 / 1000.0;
                if let Some(m) = d.mean_residual(a) {
                    assert!(
                        b.contains(m, eps),
                        "{} a={a} m={m} b={b:?}",
                        d.family_name()
                    );
                }
            }
        }
    }

    #[test]
    fn nbue_families_have_amax_at_most_mean() {
        for d in [
            Distribution::Exponential { rate: 2.0 },
            Distribution::Uniform {
                low: 1.0,
                high: 3.0,
            },
            Distribution::Erlang {
                shape: 4,
                rate: 1.5,
            },
            Distribution::Deterministic { value: 0.7 },
        ] {
            let b = d.residual_bounds().unwrap();
            assert!(b.a_max <= d.mean() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn validation_errors() {
        assert!(Distribution::Exponential { rate: -1.0 }
            .validate(false)
            .is_err());
        assert!(Distribution::BoundedPareto {
            alpha: 1.0,
            low: 2.0,
            high: 1.0
        }
        .validate(false)
        .is_err());
        assert_eq!(
            Distribution::zero().validate(false),
            Err(DistError::ZeroNotAllowed)
        );
        assert!(Distribution::zero().validate(true).is_ok());
    }

    #[test]
    fn config_roundtrip() {
        let src = r#"family = "hyperexponential"
probs = [0.5, 0.5]
rates = [2.0, 0.6666]
"#;
        let d: Distribution = toml::from_str(src).unwrap();
        assert!(matches!(d, Distribution::Hyperexponential { .. }));
    }
}
