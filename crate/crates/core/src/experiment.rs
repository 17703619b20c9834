//! Replicated simulation studies: selection success rates, post-selection
//! estimator spread, threshold coverage, and the oracle verification battery.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirics::{count_contexts, SymbolSequence};
use crate::error::{Error, Result};
use crate::lags::LagSet;
use crate::model::{presets, ModelSpec, MtdModel, ZERO_TOLERANCE};
use crate::oracle::{self, ExactLaw, KlCheck, OracleReport};
use crate::select::{self, Selection, SelectionTrace};
use crate::thresholds::{cell_violation_bound, deviation_radius, ThresholdParams};

pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_C: f64 = 2.0;
pub const DEFAULT_C_GRID: [f64; 12] = [
    0.01, 0.02, 0.03, 0.04, 0.05, 0.07, 0.1, 0.2, 0.5, 1.0, 2.0, 4.0,
];
pub const DEFAULT_GRID_N: usize = 100;
pub const DEFAULT_GRID_REPLICATIONS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Pcp,
    Fsc(usize),
    Fs(usize),
    Alg2(f64),
    /// Every lag of `[-d, -1]`.
    Naive,
}

impl Method {
    /// Whether the method's output depends on the threshold constants.
    pub fn uses_thresholds(&self) -> bool {
        matches!(self, Method::Pcp | Method::Fsc(_))
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let bad = || {
            Error::Parse(format!(
                "unknown method {s:?}; expected pcp | fsc:L | fs:L | alg2:TAU | naive"
            ))
        };
        let count = |a: Option<&str>| a.and_then(|x| x.parse::<usize>().ok()).ok_or_else(bad);
        match name.to_ascii_lowercase().as_str() {
            "pcp" if arg.is_none() => Ok(Method::Pcp),
            "naive" if arg.is_none() => Ok(Method::Naive),
            "fsc" => Ok(Method::Fsc(count(arg)?)),
            "fs" => Ok(Method::Fs(count(arg)?)),
            "alg2" => arg
                .and_then(|x| x.parse::<f64>().ok())
                .filter(|t| *t > 0.0)
                .map(Method::Alg2)
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Pcp => write!(f, "pcp"),
            Method::Fsc(l) => write!(f, "fsc:{l}"),
            Method::Fs(l) => write!(f, "fs:{l}"),
            Method::Alg2(t) => write!(f, "alg2:{t}"),
            Method::Naive => write!(f, "naive"),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Runs `method` on the whole sequence. `split` is the FSC split point
/// (default `n / 2`); `pcp_set` is the PCP superset (default `[-d, -1]`).
pub fn run_method(
    seq: &SymbolSequence,
    method: Method,
    d: usize,
    params: &ThresholdParams,
    split: Option<usize>,
    pcp_set: Option<&LagSet>,
) -> Result<Selection> {
    let n = seq.len();
    match method {
        Method::Pcp => {
            let full = LagSet::full(d);
            select::pcp_select(seq, pcp_set.unwrap_or(&full), d, params, (0, n))
        }
        Method::Fsc(l) => select::fsc_select(seq, d, l, split, params),
        Method::Fs(l) => select::fs_only_select(seq, d, l),
        Method::Alg2(t) => select::algorithm2_select(seq, d, t),
        Method::Naive => {
            if n <= d {
                return Err(Error::WindowTooShort { n, m: 0, d });
            }
            Ok(Selection {
                selected: LagSet::full(d),
                trace: SelectionTrace {
                    method: "naive".into(),
                    ..Default::default()
                },
            })
        }
    }
}

/// Where an experiment's model comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    /// A preset name (see [`resolve_model`]) or a path to a JSON model.
    Named(String),
    Inline(ModelSpec),
}

impl ModelSource {
    pub fn load(&self) -> Result<MtdModel> {
        match self {
            ModelSource::Named(s) => resolve_model(s),
            ModelSource::Inline(spec) => spec.clone().into_model(),
        }
    }
}

/// `experiment1:i,j,d`, `experiment2:i,j,d`, `iid:d`, or a JSON file path.
pub fn resolve_model(s: &str) -> Result<MtdModel> {
    let nums = |args: &str, want: usize| -> Result<Vec<usize>> {
        let v: Vec<usize> = args
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("bad preset arguments {args:?}")))?;
        if v.len() != want {
            return Err(Error::Parse(format!(
                "preset needs {want} arguments, got {args:?}"
            )));
        }
        Ok(v)
    };
    match s.split_once(':') {
        Some(("experiment1", a)) => {
            let v = nums(a, 3)?;
            presets::experiment_one(v[0], v[1], v[2])
        }
        Some(("experiment2", a)) => {
            let v = nums(a, 3)?;
            presets::experiment_two(v[0], v[1], v[2])
        }
        Some(("iid", a)) => {
            let v = nums(a, 1)?;
            presets::iid(crate::model::Alphabet::binary(), vec![0.5, 0.5], v[0])
        }
        _ => MtdModel::load(Path::new(s)),
    }
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_mu() -> f64 {
    0.5
}
fn default_split() -> f64 {
    0.5
}
fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}
fn default_grid() -> Vec<f64> {
    DEFAULT_C_GRID.to_vec()
}
fn default_grid_n() -> usize {
    DEFAULT_GRID_N
}
fn default_grid_reps() -> usize {
    DEFAULT_GRID_REPLICATIONS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub methods: Vec<Method>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Fixed `C` in `alpha = C log n`; grid-searched when absent.
    #[serde(default)]
    pub alpha_c: Option<f64>,
    #[serde(default = "default_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_grid_reps")]
    pub grid_replications: usize,
    /// FSC split point as a fraction of `n`.
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Also report the spread of `p̂(0 | 0, ..., 0)` on the selected lags.
    #[serde(default)]
    pub estimate_zero: bool,
    /// Target lag set (signed); defaults to the model's relevant lags.
    #[serde(default)]
    pub truth: Option<Vec<i64>>,
}

impl ExperimentConfig {
    pub fn new(
        model: ModelSource,
        methods: Vec<Method>,
        sample_sizes: Vec<usize>,
        replications: usize,
        seed: u64,
    ) -> Self {
        Self {
            model,
            methods,
            sample_sizes,
            replications,
            seed,
            epsilon: default_epsilon(),
            mu: default_mu(),
            alpha_c: None,
            c_grid: default_grid(),
            grid_n: DEFAULT_GRID_N,
            grid_replications: DEFAULT_GRID_REPLICATIONS,
            split_fraction: default_split(),
            burn_in: DEFAULT_BURN_IN,
            estimate_zero: false,
            truth: None,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        if self.methods.is_empty() {
            return fail("no methods given".into());
        }
        if self.sample_sizes.is_empty() {
            return fail("no sample sizes given".into());
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n <= d + 1) {
            return fail(format!("sample size {n} must exceed d + 1 = {}", d + 1));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return fail(format!(
                "split fraction {} outside (0, 1)",
                self.split_fraction
            ));
        }
        if self.alpha_c.is_none() {
            if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0)) {
                return fail("C grid must be nonempty and positive".into());
            }
            if self.grid_replications == 0 || self.grid_n <= d + 1 {
                return fail(format!(
                    "grid search needs replications >= 1 and n > {}",
                    d + 1
                ));
            }
        }
        if let Some(c) = self.alpha_c {
            if !(c > 0.0) {
                return fail(format!("C must be > 0, got {c}"));
            }
        }
        ThresholdParams::new(self.epsilon, 1.0, self.mu)?;
        Ok(())
    }

    fn params(&self, n: usize, c: f64) -> Result<ThresholdParams> {
        ThresholdParams::new(self.epsilon, c * (n as f64).ln(), self.mu)
    }

    fn split(&self, n: usize) -> usize {
        (n as f64 * self.split_fraction).floor() as usize
    }
}

/// Deterministic per-`(master, n)` seed.
pub fn sample_seed(master: u64, n: usize) -> u64 {
    let mut z = master ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `rep`-th replication sample of size `n`.
pub fn simulate_replication(
    model: &MtdModel,
    n: usize,
    burn_in: usize,
    master: u64,
    rep: u64,
) -> Result<SymbolSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(master, n));
    rng.set_stream(rep);
    SymbolSequence::new(
        model.simulate_with(n, burn_in, &mut rng)?,
        model.alphabet().clone(),
    )
}

/// Offset separating grid-search samples from evaluation samples.
const GRID_SEED_OFFSET: u64 = 0x5EED_0F_C6_A1D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CChoice {
    pub method: Method,
    pub c: f64,
    /// Empty when `C` was fixed by the configuration.
    pub grid: Vec<GridPoint>,
}

/// One `(method, n)` cell of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub n: usize,
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub replications: usize,
    pub successes: usize,
    pub frequency: f64,
    pub std_error: f64,
    pub p_hat_mean: Option<f64>,
    pub p_hat_sd: Option<f64>,
    /// Replications where the all-zero context on the selected lags occurred.
    pub p_hat_defined: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub truth: LagSet,
    pub c_choices: Vec<CChoice>,
    pub rows: Vec<ResultRow>,
}

/// Binomial standard error `sqrt(f (1 - f) / r)`.
pub fn binomial_se(frequency: f64, reps: usize) -> f64 {
    (frequency * (1.0 - frequency) / reps as f64).sqrt()
}

/// Sample mean and standard deviation (`r - 1` denominator).
pub fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (Some(m), None);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (Some(m), Some(v.sqrt()))
}

/// `p̂(0 | 0_S)` over the whole sample, `None` when the context is unseen.
pub fn p_hat_zero(seq: &SymbolSequence, s: &LagSet) -> Result<Option<f64>> {
    let counts = count_contexts(seq, s, 0, seq.len())?;
    Ok(counts
        .lookup(&vec![0; s.len()])
        .map(|id| counts.p_hat(id)[0]))
}

/// Largest `C` whose success frequency is within one binomial standard error
/// of the best.
pub fn choose_c(grid: &[GridPoint], reps: usize) -> f64 {
    let best = grid.iter().map(|g| g.frequency).fold(0.0, f64::max);
    let floor = best - binomial_se(best, reps);
    grid.iter()
        .filter(|g| g.frequency >= floor)
        .map(|g| g.c)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Success frequency of each `C` in `grid` at sample size `n`, on shared samples.
pub fn grid_search(
    model: &MtdModel,
    method: Method,
    truth: &LagSet,
    cfg: &ExperimentConfig,
    n: usize,
    reps: usize,
    grid: &[f64],
) -> Result<Vec<GridPoint>> {
    let d = model.order();
    let master = cfg.seed.wrapping_add(GRID_SEED_OFFSET);
    let params: Vec<ThresholdParams> = grid
        .iter()
        .map(|&c| cfg.params(n, c))
        .collect::<Result<_>>()?;
    let hits: Vec<Vec<bool>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let seq = simulate_replication(model, n, cfg.burn_in, master, r)?;
            params
                .iter()
                .map(|p| {
                    Ok(
                        run_method(&seq, method, d, p, Some(cfg.split(n)), None)?.selected
                            == *truth,
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &c)| GridPoint {
            c,
            frequency: hits.iter().filter(|h| h[i]).count() as f64 / reps as f64,
        })
        .collect())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let model = cfg.model.load()?;
    let d = model.order();
    cfg.validate(d)?;
    let truth = match &cfg.truth {
        Some(t) => LagSet::from_signed(d, t.iter().copied())?,
        None => model.relevant_lags(ZERO_TOLERANCE),
    };

    let mut c_choices = Vec::new();
    for &method in &cfg.methods {
        if !method.uses_thresholds() {
            continue;
        }
        let choice = match cfg.alpha_c {
            Some(c) => CChoice {
                method,
                c,
                grid: Vec::new(),
            },
            None => {
                let grid = grid_search(
                    &model,
                    method,
                    &truth,
                    cfg,
                    cfg.grid_n,
                    cfg.grid_replications,
                    &cfg.c_grid,
                )?;
                CChoice {
                    method,
                    c: choose_c(&grid, cfg.grid_replications),
                    grid,
                }
            }
        };
        c_choices.push(choice);
    }
    let c_of = |m: Method| c_choices.iter().find(|c| c.method == m).map(|c| c.c);

    let mut rows = Vec::new();
    for &n in &cfg.sample_sizes {
        let params: Vec<Option<ThresholdParams>> = cfg
            .methods
            .iter()
            .map(|&m| c_of(m).map(|c| cfg.params(n, c)).transpose())
            .collect::<Result<_>>()?;
        let fallback = cfg.params(n, DEFAULT_C)?;
        // outcomes[rep][method] = (success, p̂(0|0))
        let outcomes: Vec<Vec<(bool, Option<f64>)>> = (0..cfg.replications as u64)
            .into_par_iter()
            .map(|r| {
                let seq = simulate_replication(&model, n, cfg.burn_in, cfg.seed, r)?;
                cfg.methods
                    .iter()
                    .zip(&params)
                    .map(|(&m, p)| {
                        let sel = run_method(
                            &seq,
                            m,
                            d,
                            p.as_ref().unwrap_or(&fallback),
                            Some(cfg.split(n)),
                            None,
                        )?;
                        let est = if cfg.estimate_zero {
                            p_hat_zero(&seq, &sel.selected)?
                        } else {
                            None
                        };
                        Ok((sel.selected == truth, est))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (i, &m) in cfg.methods.iter().enumerate() {
            let successes = outcomes.iter().filter(|o| o[i].0).count();
            let frequency = successes as f64 / cfg.replications as f64;
            let est: Vec<f64> = outcomes.iter().filter_map(|o| o[i].1).collect();
            let (mean, sd) = mean_sd(&est);
            rows.push(ResultRow {
                method: m,
                n,
                c: c_of(m),
                alpha: params[i].map(|p| p.alpha),
                replications: cfg.replications,
                successes,
                frequency,
                std_error: binomial_se(frequency, cfg.replications),
                p_hat_mean: mean,
                p_hat_sd: sd,
                p_hat_defined: cfg.estimate_zero.then_some(est.len()),
            });
        }
    }
    Ok(ExperimentResults {
        config: cfg.clone(),
        truth,
        c_choices,
        rows,
    })
}

pub fn write_rows_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Per-cell outcome of the coverage study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellCoverage {
    pub context: Vec<usize>,
    pub symbol: usize,
    pub violations: usize,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageResult {
    pub replications: usize,
    pub n: usize,
    pub lag_set: LagSet,
    pub cells: Vec<CellCoverage>,
    /// `4 ceil(log(mu (n - d) / alpha + 2) / log(1 + eps)) e^{-alpha}`.
    pub bound: f64,
    pub max_frequency: f64,
    pub max_std_error: f64,
}

impl CoverageResult {
    /// `max_frequency <= min(1, bound) + 3 SE`.
    pub fn passes(&self) -> bool {
        self.max_frequency <= self.bound.min(1.0) + 3.0 * self.max_std_error
    }
}

/// Frequency of `|p̂(a|x_S) - p(a|x_S)| >= radius(a, x_S)` over replications,
/// for every `(a, x_S)` with `S` the model's relevant lags.
pub fn coverage_study(
    model: &MtdModel,
    n: usize,
    reps: usize,
    params: &ThresholdParams,
    seed: u64,
) -> Result<CoverageResult> {
    if reps == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let d = model.order();
    let s = model.relevant_lags(ZERO_TOLERANCE);
    let na = model.alphabet().size();
    let n_ctx = na.pow(s.len() as u32);
    let contexts: Vec<Vec<usize>> = (0..n_ctx)
        .map(|mut x| {
            (0..s.len())
                .map(|_| {
                    let v = x % na;
                    x /= na;
                    v
                })
                .collect()
        })
        .collect();
    let truth: Vec<Vec<f64>> = contexts
        .iter()
        .map(|ctx| {
            let mut past = vec![0; d];
            for (&k, &v) in s.distances().iter().zip(ctx) {
                past[d - k] = v;
            }
            model.transition_prob(&past)
        })
        .collect::<Result<_>>()?;
    let hits: Vec<Vec<bool>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let seq = simulate_replication(model, n, DEFAULT_BURN_IN, seed, r)?;
            let counts = count_contexts(&seq, &s, 0, n)?;
            let mut out = vec![false; n_ctx * na];
            for (i, ctx) in contexts.iter().enumerate() {
                if let Some(id) = counts.lookup(ctx) {
                    let nb = counts.total(id);
                    for (a, p) in counts.p_hat(id).into_iter().enumerate() {
                        out[i * na + a] =
                            (p - truth[i][a]).abs() >= deviation_radius(p, nb, params);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let cells: Vec<CellCoverage> = (0..n_ctx * na)
        .map(|c| {
            let violations = hits.iter().filter(|h| h[c]).count();
            CellCoverage {
                context: contexts[c / na].clone(),
                symbol: c % na,
                violations,
                frequency: violations as f64 / reps as f64,
            }
        })
        .collect();
    let max_frequency = cells.iter().map(|c| c.frequency).fold(0.0, f64::max);
    Ok(CoverageResult {
        replications: reps,
        n,
        lag_set: s,
        bound: cell_violation_bound(n - d, params),
        max_std_error: binomial_se(max_frequency, reps),
        max_frequency,
        cells,
    })
}

/// A fixed grid of single-lag KL checks with `d <= 6`, `n <= 100`.
pub fn kl_grid() -> Vec<(f64, f64, f64, usize, usize, usize, usize)> {
    let mut out = Vec::new();
    let lambdas = [0.1, 0.3, 0.5, 0.7, 0.9];
    let pairs = [(0.5, 0.5), (0.4, 0.6), (0.2, 0.7), (0.1, 0.9), (0.3, 0.35)];
    let dims = [
        (1, 2, 2, 10),
        (1, 3, 3, 25),
        (2, 4, 4, 50),
        (1, 6, 6, 100),
        (3, 5, 6, 7),
    ];
    for (i, &l) in lambdas.iter().enumerate() {
        for (j, &(p0, p1)) in pairs.iter().enumerate() {
            for shift in [0, 2] {
                let (a, b, d, n) = dims[(i + j + shift) % dims.len()];
                out.push((l, p0, p1, a, b, d, n));
            }
        }
    }
    out
}

pub fn run_kl_grid() -> Result<Vec<KlCheck>> {
    kl_grid()
        .into_par_iter()
        .map(|(l, p0, p1, j, k, d, n)| {
            oracle::kl_bound_check(l, p0, p1, j, k, d, n, oracle::DEFAULT_BUDGET)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

fn check(name: &str, value: f64, limit: f64, passed: bool) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        value,
        limit,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyOutcome {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<OracleReport>,
    pub kl: Vec<KlCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageResult>,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub budget: usize,
    /// Largest `|S|` enumerated; every subset when `None`.
    pub max_set_size: Option<usize>,
    pub coverage_replications: usize,
    pub coverage_n: usize,
    pub seed: u64,
    /// Added to every `nu_bar` before checking (mutation testing).
    pub nu_bar_perturbation: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            budget: oracle::DEFAULT_BUDGET,
            max_set_size: None,
            coverage_replications: 200,
            coverage_n: 2000,
            seed: 1,
            nu_bar_perturbation: 0.0,
        }
    }
}

pub const IDENTITY_TOLERANCE: f64 = 1e-10;
pub const INEQUALITY_TOLERANCE: f64 = 1e-12;

/// Runs the oracle battery on `model`; over-budget models are skipped.
pub fn verify_model(model: &MtdModel, opts: &VerifyOptions) -> Result<VerifyOutcome> {
    let mut checks = Vec::new();
    let kl = run_kl_grid()?;
    let worst_kl = kl
        .iter()
        .map(|c| c.exact - c.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(check(
        "kl_bound",
        worst_kl,
        0.0,
        kl.iter().all(KlCheck::holds),
    ));

    let law = match ExactLaw::with_budget(model, opts.budget) {
        Ok(l) => l,
        Err(e @ Error::BudgetExceeded { .. }) => {
            return Ok(VerifyOutcome {
                skipped: Some(e.to_string()),
                report: None,
                kl,
                coverage: None,
                checks,
            })
        }
        Err(e) => return Err(e),
    };
    let mut report = oracle::oracle_report(&law, opts.max_set_size)?;
    if opts.nu_bar_perturbation != 0.0 {
        report
            .structure
            .perturb_nu_bar(opts.nu_bar_perturbation, law.model().alphabet());
    }
    let st = &report.structure;
    checks.push(check(
        "stationary_residual",
        report.stationary_residual,
        oracle::STATIONARY_TOLERANCE,
        report.stationary_residual <= oracle::STATIONARY_TOLERANCE,
    ));
    checks.push(check(
        "covariance_identity",
        st.max_identity_residual,
        IDENTITY_TOLERANCE,
        st.max_identity_residual <= IDENTITY_TOLERANCE,
    ));
    checks.push(check(
        "influence_inequality",
        st.min_inequality_slack,
        -INEQUALITY_TOLERANCE,
        st.min_inequality_slack >= -INEQUALITY_TOLERANCE,
    ));
    checks.push(check(
        "zero_influence_when_covered",
        st.nonzero_when_covered as f64,
        0.0,
        st.nonzero_when_covered == 0,
    ));
    if let Some(b) = st.max_binary_residual {
        checks.push(check(
            "binary_covariance_identity",
            b,
            IDENTITY_TOLERANCE,
            b <= IDENTITY_TOLERANCE,
        ));
    }
    if let (Some(k), Some(lb)) = (st.kappa, st.kappa_lower_bound) {
        checks.push(check("kappa_lower_bound", k, lb, k >= lb));
    }

    let coverage = if !law.relevant().is_empty()
        && opts.coverage_replications > 0
        && opts.coverage_n > model.order() + 1
    {
        let params = ThresholdParams::new(0.1, 3.0, 0.5)?;
        let c = coverage_study(
            model,
            opts.coverage_n,
            opts.coverage_replications,
            &params,
            opts.seed,
        )?;
        checks.push(check(
            "threshold_coverage",
            c.max_frequency,
            c.bound.min(1.0) + 3.0 * c.max_std_error,
            c.passes(),
        ));
        Some(c)
    } else {
        None
    };
    Ok(VerifyOutcome {
        skipped: None,
        report: Some(report),
        kl,
        coverage,
        checks,
    })
}
