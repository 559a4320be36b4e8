//! Markov-process job models and their Gittins rank functions.
//!
//! Two job models are supported. Under known sizes a job's state is its
//! remaining work and the rank is the state itself (SRPT). Under unknown
//! sizes the state is attained service and the rank is the best
//! service-per-completion ratio
//!
//! ```text
//! rank(x) = inf_{y > x} E[min(S, y) - x | S > x] / P(S <= y | S > x)
//! ```
//!
//! tabulated on an age grid and interpolated linearly between nodes, with
//! separate left limits at the atoms of `S` so that jumps are represented
//! exactly.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dists::{DistError, Distribution};
use crate::quad::{gauss_legendre, log_space};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JobError {
    #[error("age {age} is beyond the rank table domain (max {max})")]
    DomainExceeded { age: f64, max: f64 },
    #[error("job state is completed")]
    Completed,
    #[error("invalid size distribution: {0}")]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    KnownSize,
    UnknownSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobModel {
    pub kind: JobKind,
    pub size: Distribution,
}

/// What the scheduler knows about a job: remaining work (known sizes) or
/// attained service (unknown sizes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobState {
    pub value: f64,
    pub completed: bool,
}

impl JobState {
    pub fn new(value: f64) -> Self {
        JobState {
            value,
            completed: false,
        }
    }

    pub fn done() -> Self {
        JobState {
            value: 0.0,
            completed: true,
        }
    }
}

impl JobModel {
    pub fn new(kind: JobKind, size: Distribution) -> Self {
        JobModel { kind, size }
    }

    pub fn validate(&self) -> Result<(), JobError> {
        self.size.validate(false)?;
        Ok(())
    }

    /// Draws a job size and returns `(initial state, hidden size)`.
    pub fn new_job<R: Rng + ?Sized>(&self, rng: &mut R) -> (JobState, f64) {
        let size = self.size.sample(rng);
        (self.initial_state(size), size)
    }

    pub fn initial_state(&self, size: f64) -> JobState {
        match self.kind {
            JobKind::KnownSize => JobState::new(size),
            JobKind::UnknownSize => JobState::new(0.0),
        }
    }

    /// State after `service` units of work. `hidden_size` is the job's true
    /// size, consulted only to decide completion under unknown sizes.
    pub fn advance(&self, state: JobState, service: f64, hidden_size: f64) -> JobState {
        assert!(!state.completed, "cannot advance a completed job");
        assert!(service >= 0.0);
        match self.kind {
            JobKind::KnownSize => {
                let rem = state.value - service;
                if rem <= 0.0 {
                    JobState::done()
                } else {
                    JobState::new(rem)
                }
            }
            JobKind::UnknownSize => {
                let age = state.value + service;
                if age >= hidden_size {
                    JobState::done()
                } else {
                    JobState::new(age)
                }
            }
        }
    }
}

/// Resolution of the unknown-size rank table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankGrid {
    /// Log-spaced ages (atoms of `S` and age 0 are added on top).
    pub ages: usize,
    /// Candidate give-up points per age before golden-section refinement.
    pub y_points: usize,
}

impl Default for RankGrid {
    fn default() -> Self {
        RankGrid {
            ages: 4096,
            y_points: 4096,
        }
    }
}

/// Upper quantile used to bound tables and grids.
pub const TOP_QUANTILE: f64 = 1.0 - 1e-9;

/// Evaluates the unknown-size Gittins rank at age `x` directly: minimum of
/// the ratio over a log-spaced set of give-up points, the atoms of `S`, the
/// `y -> x+` hazard limit and `y = inf`, followed by golden-section
/// refinement around the best grid point.
pub fn direct_rank(dist: &Distribution, x: f64, y_points: usize) -> f64 {
    let tx = dist.tail(x);
    if tx <= 0.0 {
        return 0.0;
    }
    let ratio = |y: f64| {
        let p = dist.interval_mass(x, y);
        if p <= 0.0 {
            f64::INFINITY
        } else {
            dist.tail_integral(x, y) / p
        }
    };
    let mut best = dist.tail_integral(x, f64::INFINITY) / tx;
    let f = dist.density(x);
    if f > 0.0 {
        best = best.min(tx / f);
    }
    for atom in dist.atoms() {
        if atom > x {
            best = best.min(ratio(atom));
        }
    }
    let top = dist.quantile(1.0 - 1e-12);
    if top <= x || y_points < 2 {
        return best;
    }
    let span = top - x;
    let offsets = log_space(1e-7 * span, span, y_points);
    let mut best_j = 0;
    let mut best_grid = f64::INFINITY;
    for (j, off) in offsets.iter().enumerate() {
        let v = ratio(x + off);
        if v < best_grid {
            best_grid = v;
            best_j = j;
        }
    }
    best = best.min(best_grid);
    let lo = if best_j == 0 {
        0.0
    } else {
        offsets[best_j - 1]
    };
    let hi = offsets[(best_j + 1).min(offsets.len() - 1)];
    best.min(golden_min(|o| ratio(x + o), lo.max(1e-9 * span), hi))
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = fc.min(fd);
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        best = best.min(fc).min(fd);
        if (b - a) <= 1e-14 * b.abs().max(1e-300) {
            break;
        }
    }
    best
}

/// Tabulated unknown-size rank: on `[ages[i], ages[i+1])` the rank runs
/// linearly from `right[i]` to `left[i+1]`. Past the last node the rank is
/// held at its final value.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    ages: Vec<f64>,
    right: Vec<f64>,
    left: Vec<f64>,
}

impl RankTable {
    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn max_age(&self) -> f64 {
        *self.ages.last().expect("non-empty table")
    }

    fn segment(&self, x: f64) -> usize {
        // largest i with ages[i] <= x
        match self.ages.partition_point(|&a| a <= x) {
            0 => 0,
            p => p - 1,
        }
    }

    /// Rank at age `x`, extending the last value past the table domain.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        if i + 1 >= self.ages.len() {
            return self.right[i];
        }
        let (a0, a1) = (self.ages[i], self.ages[i + 1]);
        let (v0, v1) = (self.right[i], self.left[i + 1]);
        v0 + (v1 - v0) * (x - a0) / (a1 - a0)
    }

    /// Pieces `(start, end, v_start, v_end)` of the piecewise-linear rank
    /// from `from` onward; the final piece is constant and unbounded.
    pub(crate) fn pieces_from(&self, from: f64) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        let start = self.segment(from);
        let n = self.ages.len();
        (start..n).map(move |i| {
            if i + 1 < n {
                let (a0, a1) = (self.ages[i], self.ages[i + 1]);
                let (v0, v1) = (self.right[i], self.left[i + 1]);
                if from > a0 {
                    let vf = v0 + (v1 - v0) * (from - a0) / (a1 - a0);
                    (from, a1, vf, v1)
                } else {
                    (a0, a1, v0, v1)
                }
            } else {
                let a0 = self.ages[i].max(from);
                (a0, f64::INFINITY, self.right[i], self.right[i])
            }
        })
    }

    /// Largest finite tabulated rank value.
    pub fn max_rank(&self) -> f64 {
        self.right
            .iter()
            .chain(self.left.iter())
            .cloned()
            .fold(0.0, f64::max)
    }

    /// Smallest tabulated rank value.
    pub fn min_rank(&self) -> f64 {
        self.right
            .iter()
            .chain(self.left.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Ages at which the rank, quantized to geometric buckets of relative
    /// width `quantum` (ranks below `floor` share one bucket), moves into a
    /// higher bucket.
    pub fn upward_bucket_crossings(&self, quantum: f64, floor: f64) -> Vec<f64> {
        let lq = (1.0 + quantum).ln();
        let bucket = |v: f64| (v.max(floor).ln() / lq).floor();
        let mut out = Vec::new();
        for i in 0..self.ages.len() {
            if bucket(self.right[i]) > bucket(self.left[i]) {
                out.push(self.ages[i]);
            }
        }
        for (s, e, v0, v1) in self.pieces_from(0.0) {
            if !e.is_finite() {
                break;
            }
            if v1 <= v0 {
                continue;
            }
            let (b0, b1) = (bucket(v0) as i64, bucket(v1) as i64);
            for b in (b0 + 1)..=b1 {
                let level = (b as f64 * lq).exp();
                if level > v0 && level <= v1 {
                    out.push(s + (level - v0) / (v1 - v0) * (e - s));
                }
            }
        }
        out
    }

    /// Maximal age intervals on which the rank is strictly below `r`.
    pub fn below_intervals(&self, r: f64) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut push = |s: f64, e: f64| {
            if e <= s {
                return;
            }
            if let Some(last) = out.last_mut() {
                if last.1 >= s {
                    last.1 = last.1.max(e);
                    return;
                }
            }
            out.push((s, e));
        };
        for (s, e, v0, v1) in self.pieces_from(0.0) {
            match (v0 < r, v1 < r) {
                (true, true) => push(s, e),
                (false, false) => {}
                (true, false) => {
                    let c = s + (r - v0) / (v1 - v0) * (e - s);
                    push(s, c);
                }
                (false, true) => {
                    let c = s + (r - v0) / (v1 - v0) * (e - s);
                    push(c, e);
                }
            }
        }
        out
    }
}

/// Gittins rank as a function of job state.
#[derive(Debug, Clone)]
pub struct RankFunction {
    model: JobModel,
    table: Option<RankTable>,
}

impl RankFunction {
    /// Closed-form rank for known sizes; builds the table for unknown sizes.
    pub fn new(model: &JobModel, grid: RankGrid) -> Result<Self, JobError> {
        model.validate()?;
        match model.kind {
            JobKind::KnownSize => Ok(RankFunction {
                model: model.clone(),
                table: None,
            }),
            JobKind::UnknownSize => Ok(build_rank_table(model, grid)),
        }
    }

    pub fn model(&self) -> &JobModel {
        &self.model
    }

    pub fn table(&self) -> Option<&RankTable> {
        self.table.as_ref()
    }

    /// Gittins rank of a job state.
    pub fn gittins_rank(&self, state: JobState) -> Result<f64, JobError> {
        if state.completed {
            return Err(JobError::Completed);
        }
        match &self.table {
            None => Ok(state.value),
            Some(t) => {
                if state.value > t.max_age() {
                    return Err(JobError::DomainExceeded {
                        age: state.value,
                        max: t.max_age(),
                    });
                }
                Ok(t.eval(state.value))
            }
        }
    }

    /// Rank at a state value, extended past the table domain.
    pub fn rank_at(&self, x: f64) -> f64 {
        match &self.table {
            None => x,
            Some(t) => t.eval(x),
        }
    }

    /// State-space intervals of r-relevant states (rank < r).
    pub fn relevant_intervals(&self, r: f64) -> Vec<(f64, f64)> {
        match &self.table {
            None => {
                if r > 0.0 {
                    vec![(0.0, r)]
                } else {
                    Vec::new()
                }
            }
            Some(t) => {
                if r == f64::INFINITY {
                    vec![(0.0, f64::INFINITY)]
                } else {
                    t.below_intervals(r)
                }
            }
        }
    }

    /// E[S_r(x)]: expected service until the job finishes or first reaches
    /// a state of rank at least `r`.
    pub fn expected_r_work(&self, state: JobState, r: f64) -> f64 {
        if state.completed {
            return 0.0;
        }
        let x = state.value;
        match &self.table {
            None => {
                if x < r {
                    x
                } else {
                    0.0
                }
            }
            Some(t) => {
                let y = first_reach(t, x, r).unwrap_or(f64::INFINITY);
                if y <= x {
                    return 0.0;
                }
                let d = &self.model.size;
                let tx = d.tail(x);
                if tx <= 0.0 {
                    0.0
                } else {
                    d.tail_integral(x, y) / tx
                }
            }
        }
    }

    /// `expected_r_work(state, r)` for every `r` in the ascending slice `rs`,
    /// in one forward sweep over the rank table.
    pub fn r_work_profile(&self, state: JobState, rs: &[f64]) -> Vec<f64> {
        if state.completed {
            return vec![0.0; rs.len()];
        }
        let x = state.value;
        let Some(t) = &self.table else {
            return rs.iter().map(|&r| if x < r { x } else { 0.0 }).collect();
        };
        let d = &self.model.size;
        let tx = d.tail(x);
        if tx <= 0.0 {
            return vec![0.0; rs.len()];
        }
        let pieces: Vec<(f64, f64, f64, f64)> = t.pieces_from(x).collect();
        let mut p = 0;
        rs.iter()
            .map(|&r| {
                debug_assert!(r.is_nan() || r >= 0.0);
                let y = loop {
                    if r == f64::INFINITY || p >= pieces.len() {
                        break f64::INFINITY;
                    }
                    let (s, e, v0, v1) = pieces[p];
                    if v0 >= r {
                        break s;
                    }
                    if v1 >= r && e.is_finite() {
                        break s + (r - v0) / (v1 - v0) * (e - s);
                    }
                    p += 1;
                };
                if y <= x {
                    0.0
                } else {
                    d.tail_integral(x, y) / tx
                }
            })
            .collect()
    }

    /// Single-job WINE integral `int_0^inf E[S_r(x)] / r^2 dr`, which equals 1
    /// for a Gittins rank.
    ///
    /// For unknown sizes the r-integral is evaluated in its age form: with
    /// `M(x, t)` the running maximum of the rank over `[x, t]`,
    /// `int E[S_r(x)]/r^2 dr = int_x^inf P(S > t | S > x) / M(x, t) dt`,
    /// integrated piecewise over the table with Gauss-Legendre rules.
    pub fn single_job_wine(&self, state: JobState) -> f64 {
        if state.completed {
            return 0.0;
        }
        let x = state.value;
        match &self.table {
            // int_x^inf x / r^2 dr
            None => x * (1.0 / x),
            Some(t) => {
                let d = &self.model.size;
                let tx = d.tail(x);
                if tx <= 0.0 {
                    return 0.0;
                }
                let mut running = 0.0f64;
                let mut total = 0.0;
                for (s, e, v0, v1) in t.pieces_from(x) {
                    if e == f64::INFINITY {
                        running = running.max(v0);
                        total += d.tail_integral(s, e) / running;
                        break;
                    }
                    running = running.max(v0);
                    if v1 <= running {
                        total += d.tail_integral(s, e) / running;
                    } else {
                        // linear rank overtakes the running max at c
                        let c = s + (running - v0) / (v1 - v0) * (e - s);
                        let c = c.clamp(s, e);
                        total += d.tail_integral(s, c) / running.max(f64::MIN_POSITIVE);
                        let slope = (v1 - v0) / (e - s);
                        total += gauss_legendre(|u| d.tail(u) / (v0 + slope * (u - s)), c, e);
                        running = v1;
                    }
                    if d.tail(e) <= 0.0 {
                        break;
                    }
                }
                total / tx
            }
        }
    }

    /// Writes the table as `age,rank` CSV rows; atoms contribute a row for
    /// the left limit followed by a row for the value at the atom.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "age,rank")?;
        if let Some(t) = &self.table {
            for i in 0..t.ages.len() {
                if t.left[i] != t.right[i] {
                    writeln!(w, "{},{}", t.ages[i], t.left[i])?;
                }
                writeln!(w, "{},{}", t.ages[i], t.right[i])?;
            }
        }
        Ok(())
    }
}

/// First age `y >= x` with rank(y) >= r, or `None` if the rank stays below `r`.
fn first_reach(t: &RankTable, x: f64, r: f64) -> Option<f64> {
    if r == f64::INFINITY {
        return None;
    }
    for (s, e, v0, v1) in t.pieces_from(x) {
        if v0 >= r {
            return Some(s);
        }
        if v1 >= r && e.is_finite() {
            return Some(s + (r - v0) / (v1 - v0) * (e - s));
        }
    }
    None
}

/// Tabulates the unknown-size Gittins rank on `grid.ages` log-spaced ages up
/// to the `1 - 1e-9` quantile of `S`, plus age 0 and every atom.
pub fn build_rank_table(model: &JobModel, grid: RankGrid) -> RankFunction {
    let d = &model.size;
    let top = d.quantile(TOP_QUANTILE);
    let mut ages = vec![0.0];
    ages.extend(log_space(1e-6 * top, top, grid.ages.max(2)));
    for atom in d.atoms() {
        if atom > 0.0 && atom <= top {
            ages.push(atom);
        }
    }
    ages.sort_by(|a, b| a.partial_cmp(b).expect("finite ages"));
    ages.dedup();
    let atoms = d.atoms();
    let (right, left): (Vec<f64>, Vec<f64>) = ages
        .par_iter()
        .map(|&a| {
            let left_val = if atoms.contains(&a) && a > 0.0 {
                Some(direct_rank(d, a * (1.0 - 1e-12), grid.y_points))
            } else {
                None
            };
            let right_val = if d.tail(a) > 0.0 {
                direct_rank(d, a, grid.y_points)
            } else {
                left_val.unwrap_or(0.0)
            };
            (right_val, left_val.unwrap_or(right_val))
        })
        .unzip();
    RankFunction {
        model: model.clone(),
        table: Some(RankTable { ages, right, left }),
    }
}
