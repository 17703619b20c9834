//! Exact MTD model representation.
//!
//! An MTD chain of order `d` draws `X_t` by first picking a component with
//! probability `lambda_j` (`j = 0` or a lag `-k`), then drawing from the base
//! law `p0` or from the single-lag kernel `p_{-k}(. | X_{t-k})`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::lags::LagSet;

/// Tolerance for probability-vector and weight-sum checks.
pub const SUM_TOLERANCE: f64 = 1e-12;
/// Oscillations at or below this value are treated as zero.
pub const ZERO_TOLERANCE: f64 = 1e-12;

/// Ordered finite set of real-valued symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct Alphabet {
    values: Vec<f64>,
    labels: Vec<String>,
}

impl Alphabet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let labels = values.iter().map(|v| format!("{v}")).collect();
        Self::with_labels(values, labels)
    }

    /// Alphabet whose symbols print as `labels` (used by sequence files).
    pub fn with_labels(values: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(contract("alphabet needs at least two symbols"));
        }
        if labels.len() != values.len() {
            return Err(contract("one label per symbol"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(contract("alphabet values must be finite"));
        }
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                if values[i] == values[j] {
                    return Err(contract(format!("duplicate symbol value {}", values[i])));
                }
                if labels[i] == labels[j] {
                    return Err(contract(format!("duplicate symbol label {}", labels[i])));
                }
            }
        }
        Ok(Self { values, labels })
    }

    /// `{0, 1}`.
    pub fn binary() -> Self {
        Self::new(vec![0.0, 1.0]).expect("binary alphabet")
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// `max |a|`.
    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |a - b|`.
    pub fn diam(&self) -> f64 {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self
            .values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    /// `min_{a != b} |a - b|`.
    pub fn min_gap(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        v.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero_one(&self) -> bool {
        self.values == [0.0, 1.0]
    }
}

/// One broken model invariant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending component, e.g. `"lambda[-3]"` or `"kernel[-1] row 0"`.
    pub location: String,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Shape,
    WeightOutOfRange,
    WeightsSum,
    NegativeProbability,
    P0Sum,
    RowSum,
    MissingKernel,
    NonFinite,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::Shape => "shape mismatch",
            ViolationKind::WeightOutOfRange => "weight outside [0, 1]",
            ViolationKind::WeightsSum => "weights sum ≠ 1",
            ViolationKind::NegativeProbability => "negative probability",
            ViolationKind::P0Sum => "p0 sum ≠ 1",
            ViolationKind::RowSum => "row sum ≠ 1",
            ViolationKind::MissingKernel => "positive weight without kernel",
            ViolationKind::NonFinite => "non-finite value",
        };
        write!(
            f,
            "{what} at {} (residual {:e})",
            self.location, self.residual
        )
    }
}

/// Mixture transition distribution model of order `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MtdModel {
    alphabet: Alphabet,
    order: usize,
    lambda0: f64,
    /// `lambdas[k - 1]` is the weight of lag `-k`.
    lambdas: Vec<f64>,
    p0: Vec<f64>,
    /// `kernels[k - 1]`, row-major `|A| x |A|`, entry `(b, a) = p_{-k}(a | b)`.
    /// `None` means the lag carries no kernel and must have zero weight.
    kernels: Vec<Option<Vec<f64>>>,
}

impl MtdModel {
    /// Assembles a model without validating it; see [`MtdModel::validate`].
    pub fn new(
        alphabet: Alphabet,
        order: usize,
        lambda0: f64,
        lambdas: Vec<f64>,
        p0: Vec<f64>,
        kernels: Vec<Option<Vec<Vec<f64>>>>,
    ) -> Self {
        let kernels = kernels
            .into_iter()
            .map(|k| k.map(|rows| rows.into_iter().flatten().collect()))
            .collect();
        Self {
            alphabet,
            order,
            lambda0,
            lambdas,
            p0,
            kernels,
        }
    }

    /// Like [`MtdModel::new`] but rejects invalid parameters.
    pub fn checked(
        alphabet: Alphabet,
        order: usize,
        lambda0: f64,
        lambdas: Vec<f64>,
        p0: Vec<f64>,
        kernels: Vec<Option<Vec<Vec<f64>>>>,
    ) -> Result<Self> {
        let m = Self::new(alphabet, order, lambda0, lambdas, p0, kernels);
        m.ensure_valid()?;
        Ok(m)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    /// Weight of lag `-k`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.lambdas[k - 1]
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn has_kernel(&self, k: usize) -> bool {
        self.kernels[k - 1].is_some()
    }

    /// `p_{-k}(a | b)`; lags without a kernel behave as uniform rows.
    pub fn kernel(&self, k: usize, b: usize, a: usize) -> f64 {
        let na = self.alphabet.size();
        match &self.kernels[k - 1] {
            Some(m) => m[b * na + a],
            None => 1.0 / na as f64,
        }
    }

    /// `m_{-k}(b) = sum_a a p_{-k}(a | b)`.
    pub fn cond_mean(&self, k: usize, b: usize) -> f64 {
        (0..self.alphabet.size())
            .map(|a| self.alphabet.value(a) * self.kernel(k, b, a))
            .sum()
    }

    /// `sum_a a p0(a)`.
    pub fn base_mean(&self) -> f64 {
        self.p0
            .iter()
            .enumerate()
            .map(|(a, p)| self.alphabet.value(a) * p)
            .sum()
    }

    /// Lists every invariant violation; empty iff the model is a valid MTD.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let na = self.alphabet.size();
        let d = self.order;
        if d == 0 {
            put(&mut out, ViolationKind::Shape, "order".into(), 0.0);
        }
        if self.lambdas.len() != d {
            put(
                &mut out,
                ViolationKind::Shape,
                "lambda".into(),
                self.lambdas.len() as f64 - d as f64,
            );
        }
        if self.kernels.len() != d {
            put(
                &mut out,
                ViolationKind::Shape,
                "kernels".into(),
                self.kernels.len() as f64 - d as f64,
            );
        }
        if self.p0.len() != na {
            put(
                &mut out,
                ViolationKind::Shape,
                "p0".into(),
                self.p0.len() as f64 - na as f64,
            );
        }
        if !out.is_empty() {
            return out;
        }

        let weights = std::iter::once(("lambda[0]".to_string(), self.lambda0)).chain(
            self.lambdas
                .iter()
                .enumerate()
                .map(|(i, &l)| (format!("lambda[-{}]", i + 1), l)),
        );
        let mut total = 0.0;
        for (loc, w) in weights {
            if !w.is_finite() {
                put(&mut out, ViolationKind::NonFinite, loc, f64::NAN);
                continue;
            }
            if !(0.0..=1.0).contains(&w) {
                let r = if w < 0.0 { w } else { w - 1.0 };
                put(&mut out, ViolationKind::WeightOutOfRange, loc, r);
            }
            total += w;
        }
        if (total - 1.0).abs() > SUM_TOLERANCE || !total.is_finite() {
            put(
                &mut out,
                ViolationKind::WeightsSum,
                "lambda".into(),
                total - 1.0,
            );
        }

        check_probability_vector(&self.p0, "p0", ViolationKind::P0Sum, &mut out);

        for k in 1..=d {
            match &self.kernels[k - 1] {
                None => {
                    if self.lambdas[k - 1] != 0.0 {
                        put(
                            &mut out,
                            ViolationKind::MissingKernel,
                            format!("kernel[-{k}]"),
                            self.lambdas[k - 1],
                        );
                    }
                }
                Some(m) if m.len() != na * na => {
                    put(
                        &mut out,
                        ViolationKind::Shape,
                        format!("kernel[-{k}]"),
                        m.len() as f64 - (na * na) as f64,
                    );
                }
                Some(m) => {
                    for b in 0..na {
                        check_probability_vector(
                            &m[b * na..(b + 1) * na],
                            &format!("kernel[-{k}] row {b}"),
                            ViolationKind::RowSum,
                            &mut out,
                        );
                    }
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(v))
        }
    }

    /// `p(. | x_{-d:-1})` for a chronological past (`past[d - k] = x_{-k}`).
    pub fn transition_prob(&self, past: &[usize]) -> Result<Vec<f64>> {
        if past.len() != self.order {
            return Err(contract(format!(
                "past has length {}, expected order {}",
                past.len(),
                self.order
            )));
        }
        let na = self.alphabet.size();
        if let Some(&s) = past.iter().find(|&&s| s >= na) {
            return Err(contract(format!("symbol index {s} outside alphabet")));
        }
        let mut out = vec![0.0; na];
        self.transition_into(|k| past[self.order - k], &mut out);
        Ok(out)
    }

    /// Writes `p(. | x)` where `symbol_at(k)` returns `x_{-k}`.
    ///
    /// Lags with zero weight or no kernel are skipped, so the result depends
    /// on the past only through lags that carry weight.
    pub(crate) fn transition_into(&self, symbol_at: impl Fn(usize) -> usize, out: &mut [f64]) {
        let na = self.alphabet.size();
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.lambda0 * self.p0[a];
        }
        for k in 1..=self.order {
            let w = self.lambdas[k - 1];
            if w == 0.0 {
                continue;
            }
            if let Some(m) = &self.kernels[k - 1] {
                let b = symbol_at(k);
                let row = &m[b * na..(b + 1) * na];
                for (o, p) in out.iter_mut().zip(row) {
                    *o += w * p;
                }
            }
        }
    }

    /// `lambda_{-k} * max_{b,c} d_TV(p_{-k}(.|b), p_{-k}(.|c))`.
    pub fn oscillation(&self, k: usize) -> f64 {
        let na = self.alphabet.size();
        let mut best: f64 = 0.0;
        for b in 0..na {
            for c in b + 1..na {
                let tv: f64 = 0.5
                    * (0..na)
                        .map(|a| (self.kernel(k, b, a) - self.kernel(k, c, a)).abs())
                        .sum::<f64>();
                best = best.max(tv);
            }
        }
        self.lambdas[k - 1] * best
    }

    /// `max_{b != c} |m_{-k}(b) - m_{-k}(c)| / |b - c|`.
    pub fn lip_norm(&self, k: usize) -> f64 {
        let na = self.alphabet.size();
        let mut best: f64 = 0.0;
        for b in 0..na {
            for c in b + 1..na {
                let num = (self.cond_mean(k, b) - self.cond_mean(k, c)).abs();
                let den = (self.alphabet.value(b) - self.alphabet.value(c)).abs();
                best = best.max(num / den);
            }
        }
        best
    }

    /// `Lambda = {j : delta_j > tol}`.
    pub fn relevant_lags(&self, tol: f64) -> LagSet {
        let lags = (1..=self.order).filter(|&k| self.oscillation(k) > tol);
        LagSet::from_distances(self.order, lags).expect("lags within order")
    }

    pub fn diagnostics(&self) -> Result<ModelDiagnostics> {
        self.diagnostics_with_tolerance(ZERO_TOLERANCE)
    }

    pub fn diagnostics_with_tolerance(&self, tol: f64) -> Result<ModelDiagnostics> {
        self.ensure_valid()?;
        let d = self.order;
        let na = self.alphabet.size();
        let oscillations: Vec<f64> = (1..=d).map(|k| self.oscillation(k)).collect();
        let relevant = LagSet::from_distances(d, (1..=d).filter(|&k| oscillations[k - 1] > tol))?;
        let delta_min = relevant
            .distances()
            .iter()
            .map(|&k| oscillations[k - 1])
            .reduce(f64::min);
        let lip_norms: Vec<f64> = (1..=d).map(|k| self.lip_norm(k)).collect();
        let tilde_delta_min = relevant
            .distances()
            .iter()
            .map(|&k| self.lambdas[k - 1] * lip_norms[k - 1])
            .reduce(f64::min);
        let big_delta = 1.0
            - relevant
                .distances()
                .iter()
                .map(|&k| oscillations[k - 1])
                .sum::<f64>();

        // p(a | x_Lambda) is a sum of terms each depending on one coordinate,
        // so its minimum over contexts is the sum of per-lag minima.
        let mut p_min = f64::INFINITY;
        for a in 0..na {
            let mut v = self.lambda0 * self.p0[a];
            for k in 1..=d {
                let w = self.lambdas[k - 1];
                if w == 0.0 {
                    continue;
                }
                let lo = (0..na)
                    .map(|b| self.kernel(k, b, a))
                    .fold(f64::INFINITY, f64::min);
                v += w * lo;
            }
            p_min = p_min.min(v);
        }

        let cond_means = (1..=d)
            .map(|k| (0..na).map(|b| self.cond_mean(k, b)).collect())
            .collect();

        Ok(ModelDiagnostics {
            oscillations,
            relevant,
            delta_min,
            tilde_delta_min,
            big_delta,
            p_min,
            cond_means,
            lip_norms,
        })
    }

    /// Draws a sample of length `n` after `burn_in` discarded transitions.
    pub fn simulate(&self, n: usize, seed: u64, burn_in: usize) -> Result<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.simulate_with(n, burn_in, &mut rng)
    }

    /// The first `d` symbols are i.i.d. uniform; the chain then runs
    /// `burn_in + n` transitions and the last `n` symbols are returned.
    pub fn simulate_with<R: Rng + ?Sized>(
        &self,
        n: usize,
        burn_in: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        self.ensure_valid()?;
        if n == 0 {
            return Err(contract("sample length must be at least 1"));
        }
        let na = self.alphabet.size();
        let d = self.order;

        // Component 0 is the base law; component k >= 1 is lag -k.
        let mut comps: Vec<(usize, f64)> = Vec::new();
        if self.lambda0 > 0.0 {
            comps.push((0, self.lambda0));
        }
        for k in 1..=d {
            if self.lambdas[k - 1] > 0.0 {
                comps.push((k, self.lambdas[k - 1]));
            }
        }
        let mut cum = Vec::with_capacity(comps.len());
        let mut acc = 0.0;
        for &(_, w) in &comps {
            acc += w;
            cum.push(acc);
        }

        let total = d + burn_in + n;
        let mut x = Vec::with_capacity(total);
        for _ in 0..d {
            x.push(rng.random_range(0..na));
        }
        for t in d..total {
            let u: f64 = rng.random::<f64>() * acc;
            let ci = cum.partition_point(|&c| c <= u).min(comps.len() - 1);
            let comp = comps[ci].0;
            let v: f64 = rng.random();
            let a = if comp == 0 {
                draw(&self.p0, v)
            } else {
                let b = x[t - comp];
                let m = self.kernels[comp - 1]
                    .as_ref()
                    .expect("weighted lag has kernel");
                draw(&m[b * na..(b + 1) * na], v)
            };
            x.push(a);
        }
        Ok(x.split_off(d + burn_in))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        spec.into_model()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_spec(&self) -> ModelSpec {
        let na = self.alphabet.size();
        let mut lambda = BTreeMap::new();
        lambda.insert("0".to_string(), self.lambda0);
        let mut kernels = BTreeMap::new();
        for k in 1..=self.order {
            let w = self.lambdas[k - 1];
            if w != 0.0 {
                lambda.insert(format!("-{k}"), w);
            }
            if let Some(m) = &self.kernels[k - 1] {
                kernels.insert(format!("-{k}"), m.chunks(na).map(|r| r.to_vec()).collect());
            }
        }
        ModelSpec {
            alphabet: self.alphabet.values.clone(),
            labels: if self
                .alphabet
                .labels
                .iter()
                .zip(&self.alphabet.values)
                .all(|(l, v)| *l == format!("{v}"))
            {
                None
            } else {
                Some(self.alphabet.labels.clone())
            },
            order: self.order,
            lambda,
            p0: self.p0.clone(),
            kernels,
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("model serializes")
    }
}

fn put(out: &mut Vec<Violation>, kind: ViolationKind, location: String, residual: f64) {
    out.push(Violation {
        kind,
        location,
        residual,
    })
}

fn check_probability_vector(
    v: &[f64],
    loc: &str,
    sum_kind: ViolationKind,
    out: &mut Vec<Violation>,
) {
    if v.iter().any(|p| !p.is_finite()) {
        put(out, ViolationKind::NonFinite, loc.to_string(), f64::NAN);
        return;
    }
    for (a, &p) in v.iter().enumerate() {
        if p < 0.0 {
            put(
                out,
                ViolationKind::NegativeProbability,
                format!("{loc}[{a}]"),
                p,
            );
        }
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        put(out, sum_kind, loc.to_string(), s - 1.0);
    }
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // rounding left u just above the last partial sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Oscillations and the derived constants that enter the error bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    /// `oscillations[k - 1] = delta_{-k}`.
    pub oscillations: Vec<f64>,
    pub relevant: LagSet,
    pub delta_min: Option<f64>,
    pub tilde_delta_min: Option<f64>,
    /// `1 - sum_{j in Lambda} delta_j`.
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    pub p_min: f64,
    /// `cond_means[k - 1][b] = m_{-k}(b)`.
    pub cond_means: Vec<Vec<f64>>,
    pub lip_norms: Vec<f64>,
}

/// JSON form of a model:
/// `{alphabet, order, lambda: {"0": .., "-1": ..}, p0, kernels: {"-1": [[..]]}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub alphabet: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub order: usize,
    pub lambda: BTreeMap<String, f64>,
    pub p0: Vec<f64>,
    #[serde(default)]
    pub kernels: BTreeMap<String, Vec<Vec<f64>>>,
}

impl ModelSpec {
    pub fn into_model(self) -> Result<MtdModel> {
        let alphabet = match self.labels {
            Some(l) => Alphabet::with_labels(self.alphabet, l)?,
            None => Alphabet::new(self.alphabet)?,
        };
        let d = self.order;
        let parse_lag = |key: &str| -> Result<usize> {
            let v: i64 = key
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad lag key {key:?}")))?;
            let k = v.unsigned_abs() as usize;
            if v > 0 || k > d {
                return Err(Error::Parse(format!("lag key {key:?} outside [-{d}, 0]")));
            }
            Ok(k)
        };
        let mut lambda0 = 0.0;
        let mut lambdas = vec![0.0; d];
        for (key, w) in &self.lambda {
            match parse_lag(key)? {
                0 => lambda0 = *w,
                k => lambdas[k - 1] = *w,
            }
        }
        let mut kernels = vec![None; d];
        for (key, rows) in self.kernels {
            match parse_lag(&key)? {
                0 => return Err(Error::Parse("lag 0 has no kernel".into())),
                k => kernels[k - 1] = Some(rows),
            }
        }
        Ok(MtdModel::new(
            alphabet, d, lambda0, lambdas, self.p0, kernels,
        ))
    }
}

/// Seeded generator for replication `rep` of an experiment with `master` seed.
pub fn replication_rng(master: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep);
    rng
}

/// Models used by the reference experiments.
pub mod presets {
    use super::*;

    fn two_lag(
        lag_a: usize,
        row_a: [[f64; 2]; 2],
        w_a: f64,
        lag_b: usize,
        row_b: [[f64; 2]; 2],
        w_b: f64,
        lambda0: f64,
        d: usize,
    ) -> Result<MtdModel> {
        if lag_a == lag_b || lag_a == 0 || lag_b == 0 || lag_a > d || lag_b > d {
            return Err(contract(format!(
                "need distinct lags within [1, {d}], got {lag_a} and {lag_b}"
            )));
        }
        let mut lambdas = vec![0.0; d];
        let mut kernels = vec![None; d];
        lambdas[lag_a - 1] = w_a;
        lambdas[lag_b - 1] = w_b;
        kernels[lag_a - 1] = Some(row_a.iter().map(|r| r.to_vec()).collect());
        kernels[lag_b - 1] = Some(row_b.iter().map(|r| r.to_vec()).collect());
        MtdModel::checked(
            Alphabet::binary(),
            d,
            lambda0,
            lambdas,
            vec![0.5, 0.5],
            kernels,
        )
    }

    /// Binary model with relevant lags `-i` and `-j`: `p0 = (0.5, 0.5)`,
    /// `lambda0 = 0.4`, `lambda_{-i} = 0.2`, `lambda_{-j} = 0.4`,
    /// `p_{-i}(0|0) = 0.3`, `p_{-i}(0|1) = 0.6`, `p_{-j}(0|0) = 0.5`,
    /// `p_{-j}(0|1) = 0.9`.
    pub fn experiment_one(i: usize, j: usize, d: usize) -> Result<MtdModel> {
        two_lag(
            i,
            [[0.3, 0.7], [0.6, 0.4]],
            0.2,
            j,
            [[0.5, 0.5], [0.9, 0.1]],
            0.4,
            0.4,
            d,
        )
    }

    /// Binary model with relevant lags `-i` and `-j`: `p0 = (0.5, 0.5)`,
    /// `lambda0 = 0.2`, `lambda_{-i} = lambda_{-j} = 0.4`,
    /// `p_{-i}(0|0) = 0.7`, `p_{-i}(0|1) = 0.3`, `p_{-j}(0|0) = 0.3`,
    /// `p_{-j}(0|1) = 0.7`.
    pub fn experiment_two(i: usize, j: usize, d: usize) -> Result<MtdModel> {
        two_lag(
            i,
            [[0.7, 0.3], [0.3, 0.7]],
            0.4,
            j,
            [[0.3, 0.7], [0.7, 0.3]],
            0.4,
            0.2,
            d,
        )
    }

    /// Independent draws from `p0` (`lambda0 = 1`).
    pub fn iid(alphabet: Alphabet, p0: Vec<f64>, d: usize) -> Result<MtdModel> {
        MtdModel::checked(alphabet, d, 1.0, vec![0.0; d], p0, vec![None; d])
    }

    /// Random model over `alphabet` with `lambda0 >= lambda0_min`, full-support
    /// `p0` and kernel rows, and each lag independently switched off
    /// (zero weight, no kernel) with probability `p_off`.
    pub fn random<R: Rng + ?Sized>(
        alphabet: Alphabet,
        d: usize,
        lambda0_min: f64,
        p_off: f64,
        rng: &mut R,
    ) -> Result<MtdModel> {
        if !(0.0..1.0).contains(&lambda0_min) || !(0.0..=1.0).contains(&p_off) {
            return Err(contract(
                "lambda0_min must lie in [0, 1) and p_off in [0, 1]",
            ));
        }
        let na = alphabet.size();
        let simplex = |rng: &mut R| {
            let w: Vec<f64> = (0..na).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let p0 = simplex(rng);
        let on: Vec<bool> = (0..d).map(|_| !rng.random_bool(p_off)).collect();
        let raw: Vec<f64> = on
            .iter()
            .map(|&o| if o { rng.random_range(0.1..1.0) } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        let lambda0 = if total == 0.0 {
            1.0
        } else {
            rng.random_range(lambda0_min..1.0)
        };
        let lambdas: Vec<f64> = raw
            .iter()
            .map(|&w| {
                if total > 0.0 {
                    (1.0 - lambda0) * w / total
                } else {
                    0.0
                }
            })
            .collect();
        let kernels = on
            .iter()
            .map(|&o| o.then(|| (0..na).map(|_| simplex(rng)).collect()))
            .collect();
        // renormalizing can leave the weights a few ulps away from 1
        let lambda0 = 1.0 - lambdas.iter().sum::<f64>();
        MtdModel::checked(alphabet, d, lambda0, lambdas, p0, kernels)
    }

    /// Binary single-lag model
    /// `p(1 | x) = (1 - lambda) / 2 + lambda * p(1 | x_{-j})`.
    pub fn single_lag(
        lambda: f64,
        p1_given0: f64,
        p1_given1: f64,
        j: usize,
        d: usize,
    ) -> Result<MtdModel> {
        if j == 0 || j > d {
            return Err(contract(format!("lag -{j} outside [-{d}, -1]")));
        }
        let mut lambdas = vec![0.0; d];
        let mut kernels = vec![None; d];
        lambdas[j - 1] = lambda;
        kernels[j - 1] = Some(vec![
            vec![1.0 - p1_given0, p1_given0],
            vec![1.0 - p1_given1, p1_given1],
        ]);
        MtdModel::checked(
            Alphabet::binary(),
            d,
            1.0 - lambda,
            lambdas,
            vec![0.5, 0.5],
            kernels,
        )
    }
}
