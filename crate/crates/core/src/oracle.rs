//! Exact quantities of a stationary MTD chain by enumeration of its
//! `|A|^d` states.
//!
//! The window `(X_{-d}, ..., X_{-1}, X_0)` has law `pi(x) p(a | x)`.
//! Window coordinate `0` is `X_0`; coordinate `k >= 1` is `X_{-k}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{contract, Error, Result};
use crate::lags::LagSet;
use crate::model::{presets, MtdModel, ZERO_TOLERANCE};

pub const DEFAULT_BUDGET: usize = 1 << 18;
pub const STATIONARY_TOLERANCE: f64 = 1e-12;
pub const MAX_POWER_ITERATIONS: usize = 1_000_000;
/// Largest state space solved densely when power iteration stalls.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Clone, Debug)]
pub struct ExactLaw {
    model: MtdModel,
    relevant: LagSet,
    na: usize,
    d: usize,
    states: usize,
    /// `trans[s * na + a] = p(a | s)`.
    trans: Vec<f64>,
    stationary: Vec<f64>,
    residual: f64,
}

impl ExactLaw {
    pub fn new(model: &MtdModel) -> Result<Self> {
        Self::with_budget(model, DEFAULT_BUDGET)
    }

    pub fn with_budget(model: &MtdModel, budget: usize) -> Result<Self> {
        model.ensure_valid()?;
        let na = model.alphabet().size();
        let d = model.order();
        let states = (na as u128).pow(d as u32);
        if states > budget as u128 {
            return Err(Error::BudgetExceeded {
                states: usize::try_from(states).unwrap_or(usize::MAX),
                budget,
            });
        }
        let states = states as usize;
        let mut trans = vec![0.0; states * na];
        for (s, row) in trans.chunks_exact_mut(na).enumerate() {
            model.transition_into(|k| digit(s, k, na), row);
        }
        if !(model.lambda0() * model.p0().iter().cloned().fold(f64::INFINITY, f64::min) > 0.0)
            && trans.iter().any(|&p| p <= 0.0)
        {
            return Err(Error::Degenerate(
                "exact law needs lambda0 * min p0 > 0 or full-support transitions".into(),
            ));
        }
        let (stationary, residual) = stationary_law(&trans, na, d, states)?;
        Ok(Self {
            relevant: model.relevant_lags(ZERO_TOLERANCE),
            model: model.clone(),
            na,
            d,
            states,
            trans,
            stationary,
            residual,
        })
    }

    pub fn model(&self) -> &MtdModel {
        &self.model
    }

    pub fn relevant(&self) -> &LagSet {
        &self.relevant
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// `pi(s)`, where state `s` holds `x_{-k}` in base-`|A|` digit `k - 1`.
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// L1 distance between `pi` and `pi P`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn state_of(&self, past: &[usize]) -> usize {
        // past[d - k] = x_{-k}
        (1..=self.d)
            .map(|k| past[self.d - k] * self.na.pow(k as u32 - 1))
            .sum()
    }

    /// Joint law of the window coordinates `coords`, indexed by
    /// `sum_i x_{coords[i]} |A|^i`.
    pub fn marginal(&self, coords: &[usize]) -> Result<Vec<f64>> {
        for (i, &c) in coords.iter().enumerate() {
            if c > self.d || coords[..i].contains(&c) {
                return Err(contract(format!("bad window coordinate list {coords:?}")));
            }
        }
        Ok(self.joint(coords))
    }

    fn joint(&self, coords: &[usize]) -> Vec<f64> {
        let na = self.na;
        let mut out = vec![0.0; na.pow(coords.len() as u32)];
        let with_x0 = coords.contains(&0);
        for s in 0..self.states {
            let ps = self.stationary[s];
            if with_x0 {
                for a in 0..na {
                    let idx = index_of(coords, na, |k| if k == 0 { a } else { digit(s, k, na) });
                    out[idx] += ps * self.trans[s * na + a];
                }
            } else {
                let idx = index_of(coords, na, |k| digit(s, k, na));
                out[idx] += ps;
            }
        }
        out
    }

    /// `P(X_target = . | X_given = given_values)`; `None` when the
    /// conditioning event has probability zero.
    pub fn conditional(
        &self,
        target: usize,
        given: &[usize],
        given_values: &[usize],
    ) -> Result<Option<Vec<f64>>> {
        if given.contains(&target) || given.len() != given_values.len() {
            return Err(contract("target must not be conditioned on"));
        }
        let mut coords = given.to_vec();
        coords.push(target);
        let joint = self.marginal(&coords)?;
        let base: usize = given_values
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.na.pow(i as u32))
            .sum();
        let stride = self.na.pow(given.len() as u32);
        let row: Vec<f64> = (0..self.na).map(|a| joint[base + a * stride]).collect();
        let tot: f64 = row.iter().sum();
        Ok((tot > 0.0).then(|| row.into_iter().map(|p| p / tot).collect()))
    }

    /// Law of `X_0` given the window coordinates `v` (all `>= 1`) at every
    /// value of `x_V`, as `out[x_V * |A| + a]`, plus `P(x_V)`.
    ///
    /// Built as `lambda0 p0(a) + sum_{j in Lambda} lambda_j E[p_j(a | X_j) | x_V]`
    /// with the terms for `j in V` evaluated directly, so two values of `x_V`
    /// that agree on `Lambda` produce bit-identical rows.
    fn x0_given(&self, v: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let na = self.na;
        let pv = self.joint(v);
        let nv = pv.len();
        let hidden: Vec<usize> = self
            .relevant
            .distances()
            .iter()
            .copied()
            .filter(|j| !v.contains(j))
            .collect();
        let extended: Vec<Vec<f64>> = hidden
            .iter()
            .map(|&j| {
                let mut c = v.to_vec();
                c.push(j);
                self.joint(&c)
            })
            .collect();
        let mut out = vec![0.0; nv * na];
        for x in 0..nv {
            if pv[x] <= 0.0 {
                continue;
            }
            let row = &mut out[x * na..(x + 1) * na];
            for (a, o) in row.iter_mut().enumerate() {
                *o = self.model.lambda0() * self.model.p0()[a];
            }
            for &j in self.relevant.distances() {
                let w = self.model.lambda(j);
                if let Some(pos) = v.iter().position(|&c| c == j) {
                    let b = (x / na.pow(pos as u32)) % na;
                    for (a, o) in row.iter_mut().enumerate() {
                        *o += w * self.model.kernel(j, b, a);
                    }
                } else {
                    let h = hidden.iter().position(|&c| c == j).expect("hidden lag");
                    let mut mix = vec![0.0; na];
                    for e in 0..na {
                        let q = extended[h][x + e * nv] / pv[x];
                        for (a, m) in mix.iter_mut().enumerate() {
                            *m += q * self.model.kernel(j, e, a);
                        }
                    }
                    for (o, m) in row.iter_mut().zip(mix) {
                        *o += w * m;
                    }
                }
            }
        }
        (out, pv)
    }

    fn check_pair(&self, k: usize, s: &LagSet) -> Result<()> {
        if s.order() != self.d || k == 0 || k > self.d || s.contains(k) {
            return Err(contract(format!(
                "need lag -{k} in [-{}, -1] outside {s}",
                self.d
            )));
        }
        Ok(())
    }

    /// `nu_bar_{k,S} = E[sum_{b,c} P_{X_S}(X_k=b) P_{X_S}(X_k=c) d_TV(P_{X_S}(X_0|X_k=b), P_{X_S}(X_0|X_k=c))]`.
    pub fn nu_bar(&self, k: usize, s: &LagSet) -> Result<f64> {
        self.check_pair(k, s)?;
        let na = self.na;
        let ns = na.pow(s.len() as u32);
        let mut v = s.distances().to_vec();
        v.push(k);
        let (rows, pv) = self.x0_given(&v);
        let mut total = 0.0;
        for xs in 0..ns {
            let p_s: f64 = (0..na).map(|b| pv[xs + b * ns]).sum();
            if p_s <= 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for b in 0..na {
                let pb = pv[xs + b * ns];
                if pb <= 0.0 {
                    continue;
                }
                for c in 0..na {
                    let pc = pv[xs + c * ns];
                    if c == b || pc <= 0.0 {
                        continue;
                    }
                    let rb = &rows[(xs + b * ns) * na..(xs + b * ns + 1) * na];
                    let rc = &rows[(xs + c * ns) * na..(xs + c * ns + 1) * na];
                    let tv = 0.5 * rb.iter().zip(rc).map(|(x, y)| (x - y).abs()).sum::<f64>();
                    inner += (pb / p_s) * (pc / p_s) * tv;
                }
            }
            total += p_s * inner;
        }
        Ok(total)
    }

    /// `E|Cov_{X_S}(X_0, g(X_k))|` by direct summation over the window law.
    pub fn expected_abs_cov(&self, k: usize, s: &LagSet, g: &[f64]) -> Result<f64> {
        self.check_pair(k, s)?;
        Ok(self
            .cov_by_context(k, s, g)
            .iter()
            .map(|(p, c)| p * c.abs())
            .sum())
    }

    /// `(P(x_S), Cov_{x_S}(X_0, g(X_k)))` for every `x_S`.
    fn cov_by_context(&self, k: usize, s: &LagSet, g: &[f64]) -> Vec<(f64, f64)> {
        let na = self.na;
        let ns = na.pow(s.len() as u32);
        let mut coords = s.distances().to_vec();
        coords.push(k);
        coords.push(0);
        let joint = self.joint(&coords);
        let vals = self.model.alphabet().values();
        (0..ns)
            .map(|xs| {
                let (mut p, mut e0, mut ek, mut e0k) = (0.0, 0.0, 0.0, 0.0);
                for b in 0..na {
                    for (a, &va) in vals.iter().enumerate() {
                        let q = joint[xs + b * ns + a * ns * na];
                        p += q;
                        e0 += q * va;
                        ek += q * g[b];
                        e0k += q * va * g[b];
                    }
                }
                if p <= 0.0 {
                    (0.0, 0.0)
                } else {
                    (p, e0k / p - (e0 / p) * (ek / p))
                }
            })
            .collect()
    }

    /// `Cov_{x_S}(f(X_j), g(X_k))` for every `x_S` (`j` may equal `k`).
    fn cov_lags_by_context(
        &self,
        j: usize,
        k: usize,
        s: &LagSet,
        f: &[f64],
        g: &[f64],
    ) -> Vec<f64> {
        let na = self.na;
        let ns = na.pow(s.len() as u32);
        let mut coords = s.distances().to_vec();
        coords.push(k);
        if j != k {
            coords.push(j);
        }
        let joint = self.joint(&coords);
        (0..ns)
            .map(|xs| {
                let (mut p, mut ef, mut eg, mut efg) = (0.0, 0.0, 0.0, 0.0);
                for b in 0..na {
                    let reps = if j == k { 1 } else { na };
                    for e in 0..reps {
                        let q = joint[xs + b * ns + e * ns * na];
                        let xj = if j == k { b } else { e };
                        p += q;
                        ef += q * f[xj];
                        eg += q * g[b];
                        efg += q * f[xj] * g[b];
                    }
                }
                if p <= 0.0 {
                    0.0
                } else {
                    efg / p - (ef / p) * (eg / p)
                }
            })
            .collect()
    }

    fn cond_means(&self, k: usize) -> Vec<f64> {
        (0..self.na).map(|b| self.model.cond_mean(k, b)).collect()
    }

    /// Largest `|Cov_{x_S}(X_0, m_k(X_k)) - sum_{j in Lambda \ S} lambda_j Cov_{x_S}(m_j(X_j), m_k(X_k))|`,
    /// also checked with `X_k` in place of `m_k(X_k)`.
    pub fn covariance_identity_residual(&self, k: usize, s: &LagSet) -> Result<f64> {
        self.check_pair(k, s)?;
        let mk = self.cond_means(k);
        let id = self.model.alphabet().values().to_vec();
        let mut worst: f64 = 0.0;
        for g in [&mk, &id] {
            let lhs = self.cov_by_context(k, s, g);
            let mut rhs = vec![0.0; lhs.len()];
            for &j in self.relevant.distances() {
                if s.contains(j) {
                    continue;
                }
                let c = self.cov_lags_by_context(j, k, s, &self.cond_means(j), g);
                for (r, cj) in rhs.iter_mut().zip(c) {
                    *r += self.model.lambda(j) * cj;
                }
            }
            for ((p, l), r) in lhs.iter().zip(&rhs) {
                if *p > 0.0 {
                    worst = worst.max((l - r).abs());
                }
            }
        }
        Ok(worst)
    }

    /// `P_S = min_{j in Lambda} min_{b != c} max_{compatible (x, y)} min(P(x), P(y))`
    /// for a set `S` containing `Lambda`.
    pub fn p_s(&self, s: &LagSet) -> Result<f64> {
        if !self.relevant.is_subset(s) || s.order() != self.d {
            return Err(contract(format!(
                "{s} must contain the relevant lags {}",
                self.relevant
            )));
        }
        if self.relevant.is_empty() {
            return Err(Error::Degenerate("no relevant lags".into()));
        }
        let na = self.na;
        let pm = self.joint(s.distances());
        let mut out = f64::INFINITY;
        for &j in self.relevant.distances() {
            let pos = s.position(j).expect("relevant lag in S");
            let stride = na.pow(pos as u32);
            for b in 0..na {
                for c in 0..na {
                    if b == c {
                        continue;
                    }
                    let mut best: f64 = 0.0;
                    for x in 0..pm.len() {
                        if (x / stride) % na != b {
                            continue;
                        }
                        let y = x - b * stride + c * stride;
                        best = best.max(pm[x].min(pm[y]));
                    }
                    out = out.min(best);
                }
            }
        }
        Ok(out)
    }
}

#[inline]
fn digit(s: usize, k: usize, na: usize) -> usize {
    (s / na.pow(k as u32 - 1)) % na
}

#[inline]
fn index_of(coords: &[usize], na: usize, sym: impl Fn(usize) -> usize) -> usize {
    let mut idx = 0;
    let mut w = 1;
    for &c in coords {
        idx += sym(c) * w;
        w *= na;
    }
    idx
}

fn step(trans: &[f64], na: usize, d: usize, pi: &[f64], next: &mut [f64]) {
    let keep = na.pow(d as u32 - 1);
    next.iter_mut().for_each(|x| *x = 0.0);
    for (s, &p) in pi.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let shifted = (s % keep) * na;
        for a in 0..na {
            next[shifted + a] += p * trans[s * na + a];
        }
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn stationary_law(trans: &[f64], na: usize, d: usize, states: usize) -> Result<(Vec<f64>, f64)> {
    let mut pi = vec![1.0 / states as f64; states];
    let mut next = vec![0.0; states];
    for _ in 0..MAX_POWER_ITERATIONS {
        step(trans, na, d, &pi, &mut next);
        let r = l1(&pi, &next);
        std::mem::swap(&mut pi, &mut next);
        if r <= STATIONARY_TOLERANCE {
            step(trans, na, d, &pi, &mut next);
            return Ok((pi.clone(), l1(&pi, &next)));
        }
    }
    if states <= DENSE_LIMIT {
        let pi = dense_stationary(trans, na, d, states)?;
        step(trans, na, d, &pi, &mut next);
        let r = l1(&pi, &next);
        return Ok((pi, r));
    }
    Err(Error::Degenerate(format!(
        "stationary law did not converge in {MAX_POWER_ITERATIONS} iterations"
    )))
}

/// Solves `pi (P - I) = 0`, `sum pi = 1`.
fn dense_stationary(trans: &[f64], na: usize, d: usize, states: usize) -> Result<Vec<f64>> {
    let keep = na.pow(d as u32 - 1);
    let mut m = nalgebra::DMatrix::<f64>::zeros(states, states);
    for s in 0..states {
        m[(s, s)] -= 1.0;
        for a in 0..na {
            let t = (s % keep) * na + a;
            m[(t, s)] += trans[s * na + a];
        }
    }
    for s in 0..states {
        m[(states - 1, s)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(states);
    rhs[states - 1] = 1.0;
    m.lu()
        .solve(&rhs)
        .map(|v| v.iter().map(|x| x.max(0.0)).collect())
        .ok_or_else(|| Error::Degenerate("singular stationary system".into()))
}

/// One `(k, S)` entry of the structure check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairCheck {
    pub lag: i64,
    pub base: LagSet,
    pub nu_bar: f64,
    /// `E|Cov_{X_S}(X_0, X_k)|`.
    pub abs_cov: f64,
    /// `Diam(A) ||A||_inf nu_bar - E|Cov|`; never negative in theory.
    pub inequality_slack: f64,
    pub identity_residual: f64,
    /// `Lambda ⊆ S`.
    pub covered: bool,
    /// `|nu_bar - 2 E|Cov||` on the alphabet `{0, 1}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binary_residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub pairs: Vec<PairCheck>,
    pub max_identity_residual: f64,
    pub min_inequality_slack: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_binary_residual: Option<f64>,
    /// Pairs with `Lambda ⊆ S` whose `nu_bar` is not exactly zero.
    pub nonzero_when_covered: usize,
    /// `min_{S: Lambda ⊄ S} max_{k in Lambda \ S} E|Cov_{X_S}(X_0, X_k)|`;
    /// absent when not every subset was enumerated or `Lambda` is empty.
    pub kappa: Option<f64>,
    /// `p_min^2 Gamma_1 min|b - c|^2 tilde_delta_min / (2 sqrt|Lambda|)`
    /// when `Gamma_1 > 0`.
    pub kappa_lower_bound: Option<f64>,
}

/// All subsets of `{1..=d}` of size at most `max_size`, as bit masks.
fn subsets(d: usize, max_size: usize) -> Vec<LagSet> {
    (0u64..1 << d)
        .filter(|m| m.count_ones() as usize <= max_size)
        .map(|m| {
            LagSet::from_distances(d, (1..=d).filter(|k| m >> (k - 1) & 1 == 1)).expect("in range")
        })
        .collect()
}

/// Checks `Diam ||A|| nu_bar >= E|Cov|`, the conditional covariance identity,
/// `nu_bar = 0` on `Lambda ⊆ S`, and (binary) `nu_bar = 2 E|Cov|` for every
/// `(k, S)` with `|S| <= max_set_size`; computes `kappa` when every subset is
/// enumerated.
pub fn verify_structure(law: &ExactLaw, max_set_size: Option<usize>) -> Result<StructureReport> {
    let d = law.d;
    let full = max_set_size.is_none_or(|m| m >= d);
    let sets = subsets(d, max_set_size.unwrap_or(d));
    let alphabet = law.model.alphabet();
    let scale = alphabet.diam() * alphabet.norm_inf();
    let binary = alphabet.is_zero_one();
    let ident = alphabet.values().to_vec();
    let jobs: Vec<(usize, &LagSet)> = sets
        .iter()
        .flat_map(|s| s.complement().into_iter().map(move |k| (k, s)))
        .collect();
    let pairs: Vec<PairCheck> = jobs
        .par_iter()
        .map(|&(k, s)| {
            let nu = law.nu_bar(k, s)?;
            let cov = law.expected_abs_cov(k, s, &ident)?;
            Ok(PairCheck {
                lag: -(k as i64),
                base: s.clone(),
                nu_bar: nu,
                abs_cov: cov,
                inequality_slack: scale * nu - cov,
                identity_residual: law.covariance_identity_residual(k, s)?,
                covered: law.relevant().is_subset(s),
                binary_residual: binary.then(|| (nu - 2.0 * cov).abs()),
            })
        })
        .collect::<Result<_>>()?;

    let relevant = law.relevant();
    let nonzero_when_covered = pairs
        .iter()
        .filter(|p| p.covered && p.nu_bar != 0.0)
        .count();
    let kappa = (full && !relevant.is_empty()).then(|| {
        sets.iter()
            .filter(|s| !relevant.is_subset(s))
            .map(|s| {
                pairs
                    .iter()
                    .filter(|p| &p.base == s && relevant.contains(p.lag.unsigned_abs() as usize))
                    .map(|p| p.abs_cov)
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    });
    let kappa_lower_bound = if kappa.is_some() {
        let wd = verify_weak_dependence(law)?;
        let diag = law.model.diagnostics()?;
        match (wd.gamma1 > 0.0, diag.tilde_delta_min) {
            (true, Some(td)) => Some(
                diag.p_min.powi(2) * wd.gamma1 * alphabet.min_gap().powi(2) * td
                    / (2.0 * (relevant.len() as f64).sqrt()),
            ),
            _ => None,
        }
    } else {
        None
    };
    Ok(StructureReport {
        max_identity_residual: pairs
            .iter()
            .map(|p| p.identity_residual)
            .fold(0.0, f64::max),
        min_inequality_slack: pairs
            .iter()
            .map(|p| p.inequality_slack)
            .fold(f64::INFINITY, f64::min),
        max_binary_residual: binary.then(|| {
            pairs
                .iter()
                .filter_map(|p| p.binary_residual)
                .fold(0.0, f64::max)
        }),
        nonzero_when_covered,
        kappa,
        kappa_lower_bound,
        pairs,
    })
}

impl StructureReport {
    /// Shifts every `nu_bar` by `eps` and recomputes the summaries that
    /// depend on it.
    pub fn perturb_nu_bar(&mut self, eps: f64, alphabet: &crate::model::Alphabet) {
        let scale = alphabet.diam() * alphabet.norm_inf();
        for p in &mut self.pairs {
            p.nu_bar += eps;
            p.inequality_slack = scale * p.nu_bar - p.abs_cov;
            if let Some(r) = p.binary_residual.as_mut() {
                *r = (p.nu_bar - 2.0 * p.abs_cov).abs();
            }
        }
        self.min_inequality_slack = self
            .pairs
            .iter()
            .map(|p| p.inequality_slack)
            .fold(f64::INFINITY, f64::min);
        if self.max_binary_residual.is_some() {
            self.max_binary_residual = Some(
                self.pairs
                    .iter()
                    .filter_map(|p| p.binary_residual)
                    .fold(0.0, f64::max),
            );
        }
        self.nonzero_when_covered = self
            .pairs
            .iter()
            .filter(|p| p.covered && p.nu_bar != 0.0)
            .count();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakDependence {
    /// `1 - max` of the inward-dependence ratio; `1` when no `(S, k, b, c)`
    /// is admissible.
    pub gamma1: f64,
    /// Smallest admissible outward-dependence constant (binary alphabets).
    pub gamma2: Option<f64>,
}

/// Evaluates the inward dependence ratio
/// `max_{x_S} sum_{j in Lambda \ (S ∪ {k})} lambda_j |E_{x_S}(m_j(X_j)|X_k=b) - E_{x_S}(m_j(X_j)|X_k=c)| / (lambda_k |m_k(b) - m_k(c)|)`
/// over all `S` with `Lambda ⊄ S`, `k in Lambda \ S`, `b != c`, and on binary
/// alphabets `sum_{j in Lambda \ S} max_{x_S} |P_{x_S}(X_k=1|X_j=1) - P_{x_S}(X_k=1|X_j=0)|`
/// over `S ⊆ Lambda`, `k ∉ Lambda`.
pub fn verify_weak_dependence(law: &ExactLaw) -> Result<WeakDependence> {
    let d = law.d;
    let na = law.na;
    let relevant = law.relevant().clone();
    let model = &law.model;
    let jobs: Vec<(LagSet, usize)> = subsets(d, d)
        .into_iter()
        .filter(|s| !relevant.is_subset(s))
        .flat_map(|s| {
            relevant
                .distances()
                .iter()
                .filter(|&&k| !s.contains(k))
                .map(|&k| (s.clone(), k))
                .collect::<Vec<_>>()
        })
        .collect();
    let worst = jobs
        .par_iter()
        .map(|(s, k)| {
            let k = *k;
            let ns = na.pow(s.len() as u32);
            let mk = law.cond_means(k);
            let others: Vec<usize> = relevant
                .distances()
                .iter()
                .copied()
                .filter(|&j| j != k && !s.contains(j))
                .collect();
            // cond[j][(xs, b)] = E_{x_S}(m_j(X_j) | X_k = b)
            let mut base = s.distances().to_vec();
            base.push(k);
            let pk = law.joint(&base);
            let cond: Vec<Vec<f64>> = others
                .iter()
                .map(|&j| {
                    let mut c = base.clone();
                    c.push(j);
                    let pj = law.joint(&c);
                    let mj = law.cond_means(j);
                    (0..ns * na)
                        .map(|x| {
                            if pk[x] <= 0.0 {
                                f64::NAN
                            } else {
                                (0..na).map(|e| pj[x + e * ns * na] * mj[e]).sum::<f64>() / pk[x]
                            }
                        })
                        .collect()
                })
                .collect();
            let mut worst: f64 = 0.0;
            for b in 0..na {
                for c in 0..na {
                    let den = model.lambda(k) * (mk[b] - mk[c]).abs();
                    if b == c || den <= 0.0 {
                        continue;
                    }
                    for xs in 0..ns {
                        let mut num = 0.0;
                        let mut defined = true;
                        for (h, &j) in others.iter().enumerate() {
                            let (eb, ec) = (cond[h][xs + b * ns], cond[h][xs + c * ns]);
                            if eb.is_nan() || ec.is_nan() {
                                defined = false;
                                break;
                            }
                            num += model.lambda(j) * (eb - ec).abs();
                        }
                        if defined {
                            worst = worst.max(num / den);
                        }
                    }
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);

    let gamma2 = if model.alphabet().size() == 2 {
        let irrelevant: Vec<usize> = relevant.complement();
        let sub: Vec<LagSet> = subsets(d, d)
            .into_iter()
            .filter(|s| s.is_subset(&relevant))
            .collect();
        let mut g2: f64 = 0.0;
        for s in &sub {
            let ns = 2usize.pow(s.len() as u32);
            for &k in &irrelevant {
                let mut total = 0.0;
                for &j in relevant.distances().iter().filter(|&&j| !s.contains(j)) {
                    let mut c = s.distances().to_vec();
                    c.push(j);
                    c.push(k);
                    let p = law.joint(&c);
                    let mut best: f64 = 0.0;
                    for xs in 0..ns {
                        let cond1 = |xj: usize| {
                            let p0 = p[xs + xj * ns];
                            let p1 = p[xs + xj * ns + 2 * ns];
                            let t = p0 + p1;
                            (t > 0.0).then(|| p1 / t)
                        };
                        if let (Some(a), Some(b)) = (cond1(1), cond1(0)) {
                            best = best.max((a - b).abs());
                        }
                    }
                    total += best;
                }
                g2 = g2.max(total);
            }
        }
        Some(g2)
    } else {
        None
    };
    Ok(WeakDependence {
        gamma1: 1.0 - worst,
        gamma2,
    })
}

/// `xi* = kappa / (4 ||A|| Diam(A))`, `ell* = floor(log2|A| / (8 xi*^2))`.
pub fn ell_xi_star(kappa: f64, alphabet: &crate::model::Alphabet) -> Result<(f64, u64)> {
    if !(kappa > 0.0) {
        return Err(Error::Degenerate(format!("kappa = {kappa}")));
    }
    let xi = kappa / (4.0 * alphabet.norm_inf() * alphabet.diam());
    let ell = ((alphabet.size() as f64).log2() / (8.0 * xi * xi)).floor();
    Ok((xi, ell as u64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KlCheck {
    pub lambda: f64,
    pub delta: f64,
    pub d: usize,
    pub n: usize,
    pub j: usize,
    pub k: usize,
    pub exact: f64,
    pub bound: f64,
}

impl KlCheck {
    pub fn holds(&self) -> bool {
        self.exact <= self.bound
    }
}

/// Exact `KL(P^(j)_n || P^(k)_n)` between two single-lag chains
/// `p(1|x) = (1 - lambda)/2 + lambda p(1|x_{-j})`, computed as the divergence
/// of the stationary `d`-blocks plus `(n - d)` expected one-step divergences,
/// against `2 n delta^2 / (1 - lambda)`.
#[allow(clippy::too_many_arguments)]
pub fn kl_bound_check(
    lambda: f64,
    p1_given0: f64,
    p1_given1: f64,
    j: usize,
    k: usize,
    d: usize,
    n: usize,
    budget: usize,
) -> Result<KlCheck> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(contract(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    let mj = presets::single_lag(lambda, p1_given0, p1_given1, j, d)?;
    let mk = presets::single_lag(lambda, p1_given0, p1_given1, k, d)?;
    let lj = ExactLaw::with_budget(&mj, budget)?;
    let lk = ExactLaw::with_budget(&mk, budget)?;
    let kl = |p: &[f64], q: &[f64]| -> f64 {
        p.iter()
            .zip(q)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).ln())
            .sum()
    };
    let head: Vec<usize> = (1..=n.min(d)).collect();
    let mut exact = kl(&lj.joint(&head), &lk.joint(&head));
    if n > d {
        let mut step_kl = 0.0;
        for s in 0..lj.states {
            let r = s * 2..s * 2 + 2;
            step_kl += lj.stationary[s] * kl(&lj.trans[r.clone()], &lk.trans[r]);
        }
        exact += (n - d) as f64 * step_kl;
    }
    let delta = lambda * (p1_given1 - p1_given0).abs();
    Ok(KlCheck {
        lambda,
        delta,
        d,
        n,
        j,
        k,
        exact,
        bound: 2.0 * n as f64 * delta * delta / (1.0 - lambda),
    })
}

/// Everything the oracle knows about one model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub order: usize,
    pub alphabet_size: usize,
    pub states: usize,
    pub relevant: LagSet,
    pub stationary_residual: f64,
    pub structure: StructureReport,
    pub weak_dependence: WeakDependence,
    /// `P_S` for `S = Lambda`.
    pub p_lambda: Option<f64>,
    pub xi_star: Option<f64>,
    pub ell_star: Option<u64>,
}

pub fn oracle_report(law: &ExactLaw, max_set_size: Option<usize>) -> Result<OracleReport> {
    let structure = verify_structure(law, max_set_size)?;
    let weak_dependence = verify_weak_dependence(law)?;
    let p_lambda = if law.relevant().is_empty() {
        None
    } else {
        Some(law.p_s(law.relevant())?)
    };
    let star = structure
        .kappa
        .filter(|&k| k > 0.0)
        .map(|k| ell_xi_star(k, law.model.alphabet()))
        .transpose()?;
    Ok(OracleReport {
        order: law.d,
        alphabet_size: law.na,
        states: law.states,
        relevant: law.relevant().clone(),
        stationary_residual: law.residual,
        weak_dependence,
        p_lambda,
        xi_star: star.map(|s| s.0),
        ell_star: star.map(|s| s.1),
        structure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{replication_rng, Alphabet};

    #[test]
    fn iid_stationary_is_product() {
        let m = presets::iid(Alphabet::binary(), vec![0.3, 0.7], 3).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        for s in 0..8 {
            let ones = (0..3).filter(|i| s >> i & 1 == 1).count() as i32;
            let want = 0.7f64.powi(ones) * 0.3f64.powi(3 - ones);
            assert!((law.stationary()[s] - want).abs() < 1e-14);
        }
        for k in 1..=3 {
            assert_eq!(law.nu_bar(k, &LagSet::empty(3)).unwrap(), 0.0);
        }
    }

    #[test]
    fn symmetric_chain_is_uniform() {
        let m = presets::single_lag(0.6, 0.5, 0.5, 1, 1).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        assert!((law.stationary()[0] - 0.5).abs() < 1e-14);
        assert!(law.residual() <= STATIONARY_TOLERANCE);
    }

    #[test]
    fn marginals_are_consistent() {
        let m = presets::experiment_one(1, 3, 3).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        assert!(law.residual() <= STATIONARY_TOLERANCE);
        assert!((law.stationary().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let j13 = law.marginal(&[1, 3]).unwrap();
        let j1 = law.marginal(&[1]).unwrap();
        for b in 0..2 {
            assert!((j13[b] + j13[b + 2] - j1[b]).abs() < 1e-14);
        }
        // shift invariance of the stationary law
        let j2 = law.marginal(&[2]).unwrap();
        let j0 = law.marginal(&[0]).unwrap();
        assert!((j1[0] - j2[0]).abs() < 1e-11 && (j0[0] - j1[0]).abs() < 1e-11);
        for past in [[0, 0, 0], [1, 0, 1], [0, 1, 1]] {
            let given_vals = [past[2], past[1], past[0]];
            let c = law
                .conditional(0, &[1, 2, 3], &given_vals)
                .unwrap()
                .unwrap();
            let t = m.transition_prob(&past).unwrap();
            assert!((c[0] - t[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let m = presets::experiment_one(1, 8, 8).unwrap();
        let err = ExactLaw::with_budget(&m, 100).unwrap_err();
        assert!(matches!(
            err,
            Error::BudgetExceeded {
                states: 256,
                budget: 100
            }
        ));
    }

    #[test]
    fn dense_solver_agrees_with_power_iteration() {
        let m = presets::experiment_one(1, 3, 3).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        let dense = dense_stationary(&law.trans, 2, 3, 8).unwrap();
        assert!(l1(&dense, law.stationary()) < 1e-12);
    }

    #[test]
    fn nu_bar_zero_when_lambda_covered() {
        let m = presets::experiment_one(1, 3, 4).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        let s = LagSet::from_distances(4, [1, 3]).unwrap();
        assert_eq!(law.nu_bar(2, &s).unwrap(), 0.0);
        assert_eq!(law.nu_bar(4, &s).unwrap(), 0.0);
        assert!(law.nu_bar(1, &LagSet::empty(4)).unwrap() > 0.0);
    }

    #[test]
    fn binary_nu_bar_is_twice_abs_cov() {
        let m = presets::experiment_one(1, 3, 3).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        for s in subsets(3, 2) {
            for k in s.complement() {
                let nu = law.nu_bar(k, &s).unwrap();
                let cov = law.expected_abs_cov(k, &s, &[0.0, 1.0]).unwrap();
                assert!((nu - 2.0 * cov).abs() < 1e-12, "k={k} S={s}");
            }
        }
    }

    #[test]
    fn structure_on_ternary_random_model() {
        let alphabet = Alphabet::new(vec![-1.0, 0.0, 2.0]).unwrap();
        let mut rng = replication_rng(3, 0);
        let m = presets::random(alphabet, 3, 0.1, 0.3, &mut rng).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        let r = verify_structure(&law, None).unwrap();
        assert!(r.max_identity_residual <= 1e-10);
        assert!(r.min_inequality_slack >= -1e-12);
        assert_eq!(r.nonzero_when_covered, 0);
        assert!(r.max_binary_residual.is_none());
    }

    #[test]
    fn experiment_one_kappa_and_bound() {
        let m = presets::experiment_one(1, 3, 3).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        let r = verify_structure(&law, None).unwrap();
        let kappa = r.kappa.unwrap();
        assert!(kappa > 0.0);
        let bound = r.kappa_lower_bound.unwrap();
        assert!(kappa >= bound, "{kappa} < {bound}");
        let wd = verify_weak_dependence(&law).unwrap();
        assert!(wd.gamma1 > wd.gamma2.unwrap());
    }

    #[test]
    fn weak_dependence_degenerate_cases() {
        let m = presets::iid(Alphabet::binary(), vec![0.5, 0.5], 3).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        let wd = verify_weak_dependence(&law).unwrap();
        assert_eq!(wd.gamma1, 1.0);
        assert_eq!(wd.gamma2, Some(0.0));
        let m = presets::single_lag(0.5, 0.2, 0.8, 2, 3).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        assert_eq!(verify_weak_dependence(&law).unwrap().gamma1, 1.0);
    }

    #[test]
    fn star_parameters() {
        let (xi, ell) = ell_xi_star(0.25, &Alphabet::binary()).unwrap();
        assert_eq!(xi, 0.0625);
        assert_eq!(ell, 32);
        let (_, ell2) = ell_xi_star(0.5, &Alphabet::binary()).unwrap();
        assert_eq!(ell2, 8);
        assert!(ell_xi_star(0.0, &Alphabet::binary()).is_err());
        let alt = (2.0f64 * 1.0 / (0.25f64 * 0.25)).floor() as u64;
        assert_eq!(alt, ell);
    }

    #[test]
    fn kl_trivial_cases() {
        let c = kl_bound_check(0.5, 0.4, 0.4, 1, 3, 3, 20, DEFAULT_BUDGET).unwrap();
        assert_eq!(c.exact, 0.0);
        assert_eq!(c.bound, 0.0);
        let c = kl_bound_check(0.5, 0.3, 0.8, 2, 2, 3, 20, DEFAULT_BUDGET).unwrap();
        assert_eq!(c.exact, 0.0);
    }

    #[test]
    fn kl_reference_point() {
        let c = kl_bound_check(0.5, 0.5, 0.7, 1, 4, 4, 50, DEFAULT_BUDGET).unwrap();
        assert!((c.bound - 2.0).abs() < 1e-12);
        assert!(c.exact > 0.0 && c.holds());
    }

    #[test]
    fn p_s_requires_cover() {
        let m = presets::experiment_one(1, 3, 3).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        assert!(law.p_s(&LagSet::from_distances(3, [1]).unwrap()).is_err());
        let p = law.p_s(&LagSet::full(3)).unwrap();
        let q = law.p_s(law.relevant()).unwrap();
        assert!(p > 0.0 && q >= p);
    }

    #[test]
    fn report_serializes() {
        let m = presets::experiment_one(1, 2, 2).unwrap();
        let law = ExactLaw::new(&m).unwrap();
        let r = oracle_report(&law, None).unwrap();
        let j = serde_json::to_value(&r).unwrap();
        assert_eq!(j["relevant"]["lags"], serde_json::json!([-1, -2]));
        assert!(j["structure"]["kappa"].as_f64().unwrap() > 0.0);
    }
}
