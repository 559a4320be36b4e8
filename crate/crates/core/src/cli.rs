//! Experiment driver behind the `ggk` binary.
//!
//! An experiment is a TOML file with a base [`SimConfig`], an optional sweep
//! over load, server count and policy, and the list of checks to run.
//!
//! ```toml
//! name = "mm1"
//! replications = 4
//! suite = ["simulate", "wine"]
//!
//! [base]
//! k = 1
//! policy = "gittins"
//! horizon = 50000.0
//! arrival = { family = "exponential", rate = 0.5 }
//! job_model = { kind = "known_size", size = { family = "exponential", rate = 1.0 } }
//!
//! [sweep]
//! rho = [0.5, 0.9]
//! ```
//!
//! Exit codes: 0 success, 1 I/O failure, 2 config error, 3 unstable run,
//! 4 a verification check failed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{
    approaches, check_gap_multiserver, check_setup_number_bound, check_single_server_optimality,
    difference, heavy_traffic_limit, heavy_traffic_ratio, loss_terms, BoundsError, Verdict,
};
use crate::jobs::{JobKind, JobModel, RankFunction, RankGrid};
use crate::palm::{
    cost_terms, decomposition_check, residual_ratio, wine_check, ModelTerms, CI_WIDTHS,
};
use crate::sim::{run_with, Policy, SimConfig, SimError, SimStats};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNSTABLE: i32 = 3;
pub const EXIT_FAIL: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Simulate,
    Wine,
    Decomposition,
    Gap,
    SingleServerOptimality,
    HeavyTraffic,
    SetupBound,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub rho: Option<Vec<f64>>,
    pub k: Option<Vec<usize>>,
    pub policy: Option<Vec<Policy>>,
    /// Scale each point's horizon by `((1 - rho_base) / (1 - rho))^2`.
    #[serde(default)]
    pub scale_horizon: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub suite: Vec<Suite>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default = "here")]
    pub output_dir: PathBuf,
    pub base: SimConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Single-server system used as the reference for `gap` and
    /// `heavy-traffic`; load sweeps are applied to it as well.
    #[serde(default)]
    pub baseline: Option<SimConfig>,
}

fn one() -> usize {
    1
}

fn here() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Unstable(String),
    Io(std::io::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Unstable(_) => EXIT_UNSTABLE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Unstable(m) => write!(f, "unstable run: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonConvergence(_) | SimError::RecyclingStorm { .. } => {
                CliError::Unstable(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if let Some(s) = &self.sweep {
            if s.rho.as_ref().is_some_and(|v| v.is_empty())
                || s.k.as_ref().is_some_and(|v| v.is_empty())
                || s.policy.as_ref().is_some_and(|v| v.is_empty())
            {
                return bad("sweep lists must be non-empty");
            }
            if let Some(rhos) = &s.rho {
                if rhos.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                    return bad("sweep.rho values must be positive");
                }
            }
        }
        self.base.validate()?;
        for p in self.points() {
            p.validate()?;
        }
        if let Some(b) = &self.baseline {
            b.validate()?;
        }
        Ok(())
    }

    /// Every sweep point, in rho-major then k then policy order.
    pub fn points(&self) -> Vec<SimConfig> {
        let sweep = self.sweep.clone().unwrap_or_default();
        let rhos = sweep
            .rho
            .clone()
            .map(|v| v.into_iter().map(Some).collect())
            .unwrap_or(vec![None]);
        let ks = sweep.k.clone().unwrap_or(vec![self.base.k]);
        let policies = sweep.policy.clone().unwrap_or(vec![self.base.policy]);
        let mut out = Vec::new();
        for rho in &rhos {
            for &k in &ks {
                for &policy in &policies {
                    let mut c = self.base.clone();
                    c.k = k;
                    c.policy = policy;
                    if let Some(rho) = *rho {
                        c = apply_rho(&c, rho, sweep.scale_horizon);
                    }
                    out.push(c);
                }
            }
        }
        out
    }

    /// The baseline matched to a sweep point's load.
    pub fn baseline_for(&self, point: &SimConfig) -> Option<SimConfig> {
        let scale = self.sweep.as_ref().is_some_and(|s| s.scale_horizon);
        self.baseline.as_ref().map(|b| {
            let mut c = if (b.rho() - point.rho()).abs() > 1e-12 * point.rho() {
                apply_rho(b, point.rho(), scale)
            } else {
                b.clone()
            };
            c.seed = point.seed;
            c
        })
    }
}

fn apply_rho(c: &SimConfig, rho: f64, scale_horizon: bool) -> SimConfig {
    let mut out = c.with_rho(rho);
    if scale_horizon {
        out.horizon = c.horizon * ((1.0 - c.rho()) / (1.0 - rho)).powi(2);
    }
    out
}

/// First 16 hex digits of the SHA-256 of the config's TOML form.
pub fn config_hash(c: &SimConfig) -> String {
    let text = toml::to_string(c).expect("configs serialize to TOML");
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep`. Independent of the sweep point, so that all
/// points of one replication share arrival and size streams.
pub fn replication_seed(base: u64, rep: usize) -> u64 {
    splitmix64(base ^ splitmix64(rep as u64))
}

#[derive(Debug, Parser)]
#[command(
    name = "ggk",
    version,
    about = "G/G/k/setup scheduling simulator and verifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every sweep point and write simulate.csv and simulate_r.csv.
    Simulate(RunArgs),
    /// Run the configured checks and print one verdict line per check.
    Verify(RunArgs),
    /// Export the rank function of the base job model as CSV.
    RankTable(TableArgs),
    /// Print the loss terms of the gap bound for every sweep point.
    Bounds(TableArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "GGK_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub suite: Option<Vec<Suite>>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(|_| EXIT_OK),
        Command::Verify(a) => cmd_verify(&a),
        Command::RankTable(a) => cmd_rank_table(&a).map(|_| EXIT_OK),
        Command::Bounds(a) => cmd_bounds(&a).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ggk: {e}");
            e.code()
        }
    }
}

/// Loaded experiment with command-line overrides applied.
struct Experiment {
    spec: ExperimentSpec,
    workers: usize,
    out: PathBuf,
}

impl Experiment {
    fn load(a: &RunArgs) -> Result<Self, CliError> {
        let mut spec = ExperimentSpec::load(&a.config)?;
        if let Some(seed) = a.seed {
            spec.base.seed = seed;
            if let Some(b) = &mut spec.baseline {
                b.seed = seed;
            }
        }
        if let Some(s) = &a.suite {
            spec.suite = s.clone();
        }
        let workers = match a.workers {
            Some(0) => return Err(CliError::Config("--workers must be at least 1".into())),
            Some(w) => w,
            None => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
        };
        let out = a.out.clone().unwrap_or_else(|| spec.output_dir.clone());
        Ok(Experiment { spec, workers, out })
    }
}

/// One simulated config: per-replication stats and their pooled merge.
pub struct PointResult {
    pub config: SimConfig,
    pub hash: String,
    pub reps: Vec<SimStats>,
    pub merged: SimStats,
    pub rank: Arc<RankFunction>,
}

/// Runs all replications of every config on a pool of `workers` threads.
/// Results come back in input order regardless of scheduling.
pub fn run_points(
    configs: &[SimConfig],
    replications: usize,
    workers: usize,
) -> Result<Vec<PointResult>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| {
        let mut models: Vec<JobModel> = Vec::new();
        for c in configs {
            if !models.contains(&c.job_model) {
                models.push(c.job_model.clone());
            }
        }
        let ranks: Vec<Arc<RankFunction>> = models
            .iter()
            .map(|m| {
                RankFunction::new(m, RankGrid::default())
                    .map(Arc::new)
                    .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let rank_of =
            |c: &SimConfig| ranks[models.iter().position(|m| m == &c.job_model).unwrap()].clone();

        let jobs: Vec<(usize, usize)> = (0..configs.len())
            .flat_map(|p| (0..replications).map(move |r| (p, r)))
            .collect();
        let stats: Vec<Result<SimStats, SimError>> = jobs
            .par_iter()
            .map(|&(p, r)| {
                let mut c = configs[p].clone();
                c.seed = replication_seed(configs[p].seed, r);
                eprintln!(
                    "ggk: point {p} replication {r} (rho {:.3}, k {}, {})",
                    c.rho(),
                    c.k,
                    c.policy.name()
                );
                run_with(&c, &rank_of(&c))
            })
            .collect();
        let mut stats = stats.into_iter();
        configs
            .iter()
            .map(|c| {
                let reps: Vec<SimStats> = stats
                    .by_ref()
                    .take(replications)
                    .collect::<Result<_, _>>()?;
                Ok(PointResult {
                    config: c.clone(),
                    hash: config_hash(c),
                    merged: SimStats::merge(&reps),
                    reps,
                    rank: rank_of(c),
                })
            })
            .collect()
    })
}

pub const SIMULATE_HEADER: &str = "config_hash,name,point,replication,rho,k,policy,kind,arrivals,duration,\
mean_n,mean_n_ci,mean_w,mean_w_ci,mean_busy,mean_busy_ci,mean_j_setup,mean_j_setup_ci,setups_started";

pub const SIMULATE_R_HEADER: &str =
    "config_hash,point,r,mean_w_r,mean_w_r_ci,mean_j_r,mean_j_r_ci,\
rho_r,rho_r_ci,rho_rcy,rho_rcy_ci,lambda_rcy,lambda_rcy_ci,rcy_excess,rcy_excess_ci";

fn simulate_row(
    out: &mut String,
    name: &str,
    point: usize,
    rep: &str,
    hash: &str,
    c: &SimConfig,
    s: &SimStats,
) {
    let _ = writeln!(
        out,
        "{hash},{name},{point},{rep},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        c.rho(),
        c.k,
        c.policy.name(),
        match s.kind {
            JobKind::KnownSize => "known_size",
            JobKind::UnknownSize => "unknown_size",
        },
        s.arrivals,
        s.duration,
        s.mean_n.mean,
        s.mean_n.ci,
        s.mean_w.mean,
        s.mean_w.ci,
        s.mean_busy.mean,
        s.mean_busy.ci,
        s.mean_j_setup.mean,
        s.mean_j_setup.ci,
        s.setups_started,
    );
}

/// CSV bodies for a set of simulated points: one row per replication and
/// one merged row per point, plus merged per-r statistics.
pub fn simulate_csv(name: &str, results: &[PointResult]) -> (String, String) {
    let mut main = format!("{SIMULATE_HEADER}\n");
    let mut per_r = format!("{SIMULATE_R_HEADER}\n");
    for (p, res) in results.iter().enumerate() {
        for (r, s) in res.reps.iter().enumerate() {
            simulate_row(
                &mut main,
                name,
                p,
                &r.to_string(),
                &res.hash,
                &res.config,
                s,
            );
        }
        simulate_row(
            &mut main,
            name,
            p,
            "merged",
            &res.hash,
            &res.config,
            &res.merged,
        );
        for rs in &res.merged.per_r {
            let _ = writeln!(
                per_r,
                "{},{p},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                res.hash,
                rs.r,
                rs.mean_w_r.mean,
                rs.mean_w_r.ci,
                rs.mean_j_r.mean,
                rs.mean_j_r.ci,
                rs.rho_r.mean,
                rs.rho_r.ci,
                rs.rho_rcy.mean,
                rs.rho_rcy.ci,
                rs.lambda_rcy.mean,
                rs.lambda_rcy.ci,
                rs.rcy_excess.mean,
                rs.rcy_excess.ci,
            );
        }
    }
    (main, per_r)
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)?;
    Ok(())
}

pub fn cmd_simulate(a: &RunArgs) -> Result<Vec<PointResult>, CliError> {
    let ex = Experiment::load(a)?;
    let results = run_points(&ex.spec.points(), ex.spec.replications, ex.workers)?;
    let (main, per_r) = simulate_csv(&ex.spec.name, &results);
    write_file(&ex.out, "simulate.csv", &main)?;
    write_file(&ex.out, "simulate_r.csv", &per_r)?;
    eprintln!(
        "ggk: wrote {} points to {}",
        results.len(),
        ex.out.display()
    );
    Ok(results)
}

fn tag(c: &SimConfig) -> String {
    format!("rho={:.3} k={} {}", c.rho(), c.k, c.policy.name())
}

fn verdict_line(v: &Verdict) -> String {
    v.line()
}

/// Runs the suite and returns the exit code: 0 when every check passes,
/// 4 otherwise.
pub fn cmd_verify(a: &RunArgs) -> Result<i32, CliError> {
    let ex = Experiment::load(a)?;
    let spec = &ex.spec;
    if spec.suite.is_empty() {
        return Err(CliError::Config("suite is empty".into()));
    }
    let needs_baseline = spec
        .suite
        .iter()
        .any(|s| matches!(s, Suite::Gap | Suite::HeavyTraffic));
    if needs_baseline && spec.baseline.is_none() {
        return Err(CliError::Config(
            "gap and heavy-traffic checks need a [baseline] config".into(),
        ));
    }

    let points = spec.points();
    // every config needed by some check, deduplicated by hash
    let mut wanted: BTreeMap<String, SimConfig> = BTreeMap::new();
    let mut add = |c: SimConfig| {
        wanted.entry(config_hash(&c)).or_insert(c);
    };
    for p in &points {
        add(p.clone());
        if needs_baseline {
            add(spec.baseline_for(p).expect("baseline checked above"));
        }
        if spec.suite.contains(&Suite::SingleServerOptimality) {
            for policy in Policy::ALL {
                let mut c = p.clone();
                c.policy = policy;
                add(c);
            }
        }
    }
    let configs: Vec<SimConfig> = wanted.into_values().collect();
    let results = run_points(&configs, spec.replications, ex.workers)?;
    let by_hash: BTreeMap<&str, &PointResult> =
        results.iter().map(|r| (r.hash.as_str(), r)).collect();
    let get = |c: &SimConfig| by_hash[config_hash(c).as_str()];

    let mut lines: Vec<(String, bool)> = Vec::new();
    let mut decomposition_csv = String::new();
    for &suite in &spec.suite {
        match suite {
            Suite::Simulate => {
                let res: Vec<&PointResult> = points.iter().map(get).collect();
                for r in res {
                    lines.push((
                        format!(
                            "SIMULATE [{}]: mean_n {:.4} (ci {:.4}) over {} arrivals",
                            tag(&r.config),
                            r.merged.mean_n.mean,
                            r.merged.mean_n.ci,
                            r.merged.arrivals
                        ),
                        r.merged.mean_n.mean.is_finite(),
                    ));
                }
            }
            Suite::Wine => {
                for p in &points {
                    let r = get(p);
                    if r.merged.snapshots.is_empty() {
                        lines.push((
                            format!("WINE [{}]: no snapshots recorded FAIL", tag(p)),
                            false,
                        ));
                        continue;
                    }
                    let w = wine_check(&r.merged, &r.rank);
                    let diff = difference(w.direct, w.wine);
                    let pass = diff.mean.abs() <= CI_WIDTHS * diff.ci;
                    lines.push((
                        format!(
                            "WINE [{}]: direct {:.4} vs integral {:.4} (ci {:.4}), max epoch error {:.2e} over {} epochs {}",
                            tag(p),
                            w.direct.mean,
                            w.wine.mean,
                            diff.ci,
                            w.max_pathwise_error,
                            w.epochs,
                            pass_word(pass)
                        ),
                        pass,
                    ));
                }
            }
            Suite::Decomposition => {
                for p in &points {
                    let r = get(p);
                    let model = ModelTerms::new(p, &r.rank, &r.merged.r_grid);
                    let rep = decomposition_check(&r.merged, &model);
                    let mut buf = Vec::new();
                    rep.write_csv(&mut buf)?;
                    let body = String::from_utf8_lossy(&buf);
                    for (i, line) in body.lines().enumerate() {
                        if i == 0 && decomposition_csv.is_empty() {
                            let _ = writeln!(decomposition_csv, "config_hash,{line}");
                        } else if i > 0 {
                            let _ = writeln!(decomposition_csv, "{},{line}", r.hash);
                        }
                    }
                    let worst = rep
                        .rows
                        .iter()
                        .map(|row| residual_ratio(row.residual, row.lhs))
                        .fold(0.0, f64::max);
                    let costs = cost_terms(&r.merged, &model);
                    let pass = rep.pass() && costs.reconstruction_pass();
                    lines.push((
                        format!(
                            "DECOMPOSITION [{}]: {} r values, worst |residual| / allowance {:.2}, reconstruction residual {:.4} (ci {:.4}) {}",
                            tag(p),
                            rep.rows.len(),
                            worst,
                            costs.reconstruction_residual.mean,
                            costs.reconstruction_residual.ci,
                            pass_word(pass)
                        ),
                        pass,
                    ));
                }
            }
            Suite::Gap => {
                for p in &points {
                    let b = spec.baseline_for(p).expect("baseline checked above");
                    let rep = check_gap_multiserver(p, &get(p).merged, &get(&b).merged)?;
                    for v in &rep.verdicts {
                        lines.push((
                            format!(
                                "GAP [{}]: loss a {:.4} b {:.4} c {:.4}; {}",
                                tag(p),
                                rep.loss_a,
                                rep.loss_b,
                                rep.loss_c,
                                verdict_line(v)
                            ),
                            v.pass,
                        ));
                    }
                }
            }
            Suite::SingleServerOptimality => {
                let mut seen = Vec::new();
                for p in &points {
                    let mut g = p.clone();
                    g.policy = Policy::Gittins;
                    let h = config_hash(&g);
                    if seen.contains(&h) {
                        continue;
                    }
                    seen.push(h);
                    let others: Vec<(String, SimStats)> = Policy::ALL
                        .iter()
                        .filter(|&&q| q != Policy::Gittins)
                        .map(|&q| {
                            let mut c = g.clone();
                            c.policy = q;
                            (q.name().to_string(), get(&c).merged.clone())
                        })
                        .collect();
                    for v in check_single_server_optimality(&get(&g).merged, &others) {
                        lines.push((
                            format!("OPTIMALITY [{}]: {}", tag(&g), verdict_line(&v)),
                            v.pass,
                        ));
                    }
                }
            }
            Suite::HeavyTraffic => {
                // group by everything but load
                let mut groups: BTreeMap<String, Vec<&SimConfig>> = BTreeMap::new();
                for p in &points {
                    groups
                        .entry(format!("k={} {}", p.k, p.policy.name()))
                        .or_default()
                        .push(p);
                }
                for (key, mut group) in groups {
                    group.sort_by(|a, b| a.rho().total_cmp(&b.rho()));
                    let bases: Vec<SimConfig> = group
                        .iter()
                        .map(|p| spec.baseline_for(p).unwrap())
                        .collect();
                    let series: Vec<(f64, &SimStats, &SimStats)> = group
                        .iter()
                        .zip(&bases)
                        .map(|(p, b)| (p.rho(), &get(p).merged, &get(b).merged))
                        .collect();
                    let ratios = heavy_traffic_ratio(&series);
                    let base = spec.baseline.as_ref().unwrap();
                    let limit = if group[0].k == 1 {
                        heavy_traffic_limit(group[0].job_model.size.cv2(), group[0].arrival.cv2())
                            / heavy_traffic_limit(base.job_model.size.cv2(), base.arrival.cv2())
                    } else {
                        1.0
                    };
                    let pass = approaches(&ratios, limit);
                    let body: Vec<String> = ratios
                        .iter()
                        .map(|r| format!("{:.3}:{:.4}(ci {:.4})", r.rho, r.ratio.mean, r.ratio.ci))
                        .collect();
                    lines.push((
                        format!(
                            "HEAVY-TRAFFIC [{key}]: ratios {} toward limit {:.4} {}",
                            body.join(" "),
                            limit,
                            pass_word(pass)
                        ),
                        pass,
                    ));
                }
            }
            Suite::SetupBound => {
                for p in &points {
                    match check_setup_number_bound(p, &get(p).merged) {
                        Ok(None) => lines.push((
                            format!("SETUP-BOUND [{}]: no setup work, skipped", tag(p)),
                            true,
                        )),
                        Ok(Some(vs)) => {
                            let pass = vs.iter().all(|v| v.pass);
                            let worst = vs
                                .iter()
                                .map(|v| v.observed - v.bound)
                                .fold(f64::NEG_INFINITY, f64::max);
                            lines.push((
                                format!(
                                    "SETUP-BOUND [{}]: {} bins, worst observed minus bound {:.4} {}",
                                    tag(p),
                                    vs.len(),
                                    worst,
                                    pass_word(pass)
                                ),
                                pass,
                            ));
                        }
                        Err(BoundsError::InsufficientSamples { observed }) => lines.push((
                            format!(
                                "SETUP-BOUND [{}]: only {observed} setups observed FAIL",
                                tag(p)
                            ),
                            false,
                        )),
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
    }

    let points_res: Vec<PointResult> = results
        .into_iter()
        .filter(|r| points.iter().any(|p| config_hash(p) == r.hash))
        .collect();
    let (main, per_r) = simulate_csv(&spec.name, &points_res);
    write_file(&ex.out, "simulate.csv", &main)?;
    write_file(&ex.out, "simulate_r.csv", &per_r)?;
    if !decomposition_csv.is_empty() {
        write_file(&ex.out, "decomposition.csv", &decomposition_csv)?;
    }
    let report: String = lines.iter().map(|(l, _)| format!("{l}\n")).collect();
    write_file(&ex.out, "verify.txt", &report)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    lock.write_all(report.as_bytes())?;
    Ok(if lines.iter().all(|(_, p)| *p) {
        EXIT_OK
    } else {
        EXIT_FAIL
    })
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(std::io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn cmd_rank_table(a: &TableArgs) -> Result<(), CliError> {
    let spec = ExperimentSpec::load(&a.config)?;
    let rf = RankFunction::new(&spec.base.job_model, RankGrid::default())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut w = sink(&a.out)?;
    rf.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub const BOUNDS_HEADER: &str =
    "config_hash,rho,k,loss_a,loss_b,loss_c,total,c_const,a_min,a_max,setup_excess";

pub fn cmd_bounds(a: &TableArgs) -> Result<(), CliError> {
    let spec = ExperimentSpec::load(&a.config)?;
    let mut body = format!("{BOUNDS_HEADER}\n");
    for p in spec.points() {
        let r = loss_terms(&p)?;
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{},{},{},{}",
            config_hash(&p),
            p.rho(),
            p.k,
            r.loss_a,
            r.loss_b,
            r.loss_c,
            r.total(),
            r.c_const,
            r.a_min,
            r.a_max,
            r.setup_excess
        );
    }
    let mut w = sink(&a.out)?;
    w.write_all(body.as_bytes())?;
    w.flush()?;
    Ok(())
}
