//! Lag selectors: pairwise comparisons (PCP), forward stepwise growth (FS),
//! FS followed by a cut on a held-out window (FSC), and the thresholded
//! two-phase variant.

use rayon::prelude::*;
use serde::Serialize;

use crate::empirics::{
    count_contexts, countable_range, total_variation, ContextCodec, SymbolSequence,
};
use crate::error::{contract, Result};
use crate::lags::LagSet;
use crate::thresholds::{individual_threshold, ThresholdParams};

/// The compatible pair with the largest `d_TV - t` for one lag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    /// Symbol indices in lag-set order.
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub tv: f64,
    pub threshold: f64,
    /// `tv - threshold`; nonnegative iff the lag is retained.
    pub margin: f64,
}

/// Outcome of the pairwise test for one lag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutVerdict {
    pub lag: i64,
    pub retained: bool,
    /// Observed compatible pairs differing at this lag; zero means the lag
    /// could not be tested and is dropped.
    pub observed_pairs: usize,
    pub witness: Option<Witness>,
}

/// One forward-stepwise iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FsStep {
    pub base: LagSet,
    pub added: i64,
    pub nu_hat: f64,
}

/// Phase-two decision of the thresholded variant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PruneVerdict {
    pub lag: i64,
    pub nu_hat: f64,
    pub retained: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SelectionTrace {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<LagSet>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fs_steps: Vec<FsStep>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cut: Vec<CutVerdict>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub prune: Vec<PruneVerdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub selected: LagSet,
    pub trace: SelectionTrace,
}

/// `nu_hat_{k,S}` for every `k` outside `S`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NuStatistics {
    pub base_set: LagSet,
    /// `(signed lag, value)` in increasing distance.
    pub values: Vec<(i64, f64)>,
}

fn check_order(seq: &SymbolSequence, set: &LagSet, d: usize) -> Result<()> {
    if set.order() != d {
        return Err(contract(format!(
            "lag set order {} differs from d = {d}",
            set.order()
        )));
    }
    if seq.is_empty() {
        return Err(contract("empty sequence"));
    }
    Ok(())
}

/// PCP over the window `(m, n]`: lag `j` of `S` is kept iff some observed
/// `(S \ {j})`-compatible pair has `d_TV(p̂(.|x), p̂(.|y)) >= s(x) + s(y)`.
pub fn pcp_select(
    seq: &SymbolSequence,
    s: &LagSet,
    d: usize,
    params: &ThresholdParams,
    window: (usize, usize),
) -> Result<Selection> {
    let verdicts = pairwise_tests(seq, s, d, params, window)?;
    let selected = LagSet::from_distances(
        d,
        verdicts
            .iter()
            .filter(|v| v.retained)
            .map(|v| v.lag.unsigned_abs() as usize),
    )?;
    Ok(Selection {
        selected,
        trace: SelectionTrace {
            method: "pcp".into(),
            candidate: Some(s.clone()),
            cut: verdicts,
            ..Default::default()
        },
    })
}

fn pairwise_tests(
    seq: &SymbolSequence,
    s: &LagSet,
    d: usize,
    params: &ThresholdParams,
    window: (usize, usize),
) -> Result<Vec<CutVerdict>> {
    check_order(seq, s, d)?;
    params.check()?;
    countable_range(seq.len(), window.0, window.1, d)?;
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let counts = count_contexts(seq, s, window.0, window.1)?;
    let na = counts.n_symbols();
    let p_hat: Vec<Vec<f64>> = (0..counts.len()).map(|id| counts.p_hat(id)).collect();
    let thr: Vec<f64> = (0..counts.len())
        .map(|id| individual_threshold(&p_hat[id], counts.total(id), params))
        .collect();
    let codec = counts.codec();

    Ok(s.distances()
        .par_iter()
        .enumerate()
        .map(|(pos, &k)| {
            let mut observed = 0usize;
            let mut best: Option<(usize, usize, f64, f64)> = None;
            for id in 0..counts.len() {
                let b = codec.coord(counts.key(id), pos);
                for c in b + 1..na {
                    let Some(other) = counts.sibling(id, pos, c) else {
                        continue;
                    };
                    observed += 1;
                    let tv = total_variation(&p_hat[id], &p_hat[other]);
                    let t = thr[id] + thr[other];
                    if best.is_none_or(|(_, _, btv, bt)| tv - t > btv - bt) {
                        best = Some((id, other, tv, t));
                    }
                }
            }
            let witness = best.map(|(x, y, tv, t)| Witness {
                x: counts.context(x),
                y: counts.context(y),
                tv,
                threshold: t,
                margin: tv - t,
            });
            CutVerdict {
                lag: -(k as i64),
                retained: witness.as_ref().is_some_and(|w| w.tv >= w.threshold),
                observed_pairs: observed,
                witness,
            }
        })
        .collect())
}

/// Context ids of `S` at the countable positions of `(m0, m1]`, densely
/// numbered in first-occurrence order.
fn context_ids(
    data: &[usize],
    na: usize,
    s: &LagSet,
    range: std::ops::Range<usize>,
) -> (Vec<u32>, usize) {
    let codec = ContextCodec::new(na, s.len());
    let mut index = rustc_hash::FxHashMap::default();
    let ids = range
        .map(|t0| {
            let key = codec.key_at(data, t0, s.distances());
            let next = index.len() as u32;
            *index.entry(key).or_insert(next)
        })
        .collect();
    (ids, index.len())
}

fn nu_from_ids(
    data: &[usize],
    na: usize,
    ids: &[u32],
    n_ctx: usize,
    start: usize,
    k: usize,
) -> f64 {
    let cell = na * na;
    let mut counts = vec![0u64; n_ctx * cell];
    for (i, &id) in ids.iter().enumerate() {
        let t0 = start + i;
        counts[id as usize * cell + data[t0 - k] * na + data[t0]] += 1;
    }
    let positions = ids.len() as f64;
    let mut total = 0.0;
    let mut rows = vec![0u64; na];
    for ctx in counts.chunks_exact(cell) {
        for (b, r) in rows.iter_mut().enumerate() {
            *r = ctx[b * na..(b + 1) * na].iter().sum();
        }
        let n_ctx_total: u64 = rows.iter().sum();
        if n_ctx_total == 0 {
            continue;
        }
        let mut acc = 0.0;
        for b in 0..na {
            if rows[b] == 0 {
                continue;
            }
            for c in b + 1..na {
                if rows[c] == 0 {
                    continue;
                }
                let (nb, nc) = (rows[b] as f64, rows[c] as f64);
                let mut tv = 0.0;
                for a in 0..na {
                    tv += (ctx[b * na + a] as f64 / nb - ctx[c * na + a] as f64 / nc).abs();
                }
                acc += 2.0 * nb * nc * (0.5 * tv);
            }
        }
        total += acc / (n_ctx_total as f64 * positions);
    }
    total
}

/// `nu_hat_{k,S}` on the window `(m0, m1]`.
pub fn nu_hat_window(
    seq: &SymbolSequence,
    k: usize,
    s: &LagSet,
    d: usize,
    window: (usize, usize),
) -> Result<f64> {
    check_order(seq, s, d)?;
    if k == 0 || k > d || s.contains(k) {
        return Err(contract(format!(
            "lag -{k} must lie in [-{d}, -1] outside {s}"
        )));
    }
    let range = countable_range(seq.len(), window.0, window.1, d)?;
    let start = range.start;
    let na = seq.alphabet().size();
    let (ids, n_ctx) = context_ids(seq.data(), na, s, range);
    Ok(nu_from_ids(seq.data(), na, &ids, n_ctx, start, k))
}

/// `nu_hat_{m,k,S}` computed from `X_1, ..., X_m`.
pub fn nu_hat(seq: &SymbolSequence, k: usize, s: &LagSet, d: usize, m: usize) -> Result<f64> {
    nu_hat_window(seq, k, s, d, (0, m))
}

/// `nu_hat_{k,S}` for every `k` outside `S` on the window `(m0, m1]`.
pub fn nu_statistics(
    seq: &SymbolSequence,
    s: &LagSet,
    d: usize,
    window: (usize, usize),
) -> Result<NuStatistics> {
    check_order(seq, s, d)?;
    let range = countable_range(seq.len(), window.0, window.1, d)?;
    let start = range.start;
    let na = seq.alphabet().size();
    let (ids, n_ctx) = context_ids(seq.data(), na, s, range);
    let values = s
        .complement()
        .par_iter()
        .map(|&k| {
            (
                -(k as i64),
                nu_from_ids(seq.data(), na, &ids, n_ctx, start, k),
            )
        })
        .collect();
    Ok(NuStatistics {
        base_set: s.clone(),
        values,
    })
}

/// Largest value, smallest distance on ties.
fn argmax(stats: &NuStatistics) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &(lag, v) in &stats.values {
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((lag.unsigned_abs() as usize, v));
        }
    }
    best
}

fn forward_stepwise(
    seq: &SymbolSequence,
    d: usize,
    ell: usize,
    window: (usize, usize),
    tau: Option<f64>,
) -> Result<(LagSet, Vec<FsStep>)> {
    let mut s = LagSet::empty(d);
    let mut steps = Vec::new();
    countable_range(seq.len(), window.0, window.1, d)?;
    while s.len() < ell {
        let stats = nu_statistics(seq, &s, d, window)?;
        let Some((k, v)) = argmax(&stats) else { break };
        if tau.is_some_and(|t| v <= t) {
            break;
        }
        steps.push(FsStep {
            base: s.clone(),
            added: -(k as i64),
            nu_hat: v,
        });
        s = s.with(k)?;
    }
    Ok((s, steps))
}

/// Greedy growth of a candidate set to `ell` lags using `X_1, ..., X_m`.
pub fn fs_step(seq: &SymbolSequence, d: usize, ell: usize, m: usize) -> Result<Selection> {
    if ell > d {
        return Err(contract(format!("budget ell = {ell} exceeds d = {d}")));
    }
    if seq.is_empty() {
        return Err(contract("empty sequence"));
    }
    let (selected, fs_steps) = forward_stepwise(seq, d, ell, (0, m), None)?;
    Ok(Selection {
        selected,
        trace: SelectionTrace {
            method: format!("fs:{ell}"),
            fs_steps,
            ..Default::default()
        },
    })
}

/// Pairwise test of each candidate lag on the window `(m, n]`.
pub fn cut_step(
    seq: &SymbolSequence,
    candidate: &LagSet,
    d: usize,
    params: &ThresholdParams,
    window: (usize, usize),
) -> Result<Selection> {
    let mut sel = pcp_select(seq, candidate, d, params, window)?;
    sel.trace.method = "cut".into();
    Ok(sel)
}

/// FS on `X_1..X_m` followed by the cut on `X_{m+1}..X_n`; `m` defaults to
/// `n / 2`.
pub fn fsc_select(
    seq: &SymbolSequence,
    d: usize,
    ell: usize,
    split: Option<usize>,
    params: &ThresholdParams,
) -> Result<Selection> {
    let n = seq.len();
    let m = split.unwrap_or(n / 2);
    if m >= n {
        return Err(contract(format!("split {m} must be below n = {n}")));
    }
    let fs = fs_step(seq, d, ell, m)?;
    let cut = cut_step(seq, &fs.selected, d, params, (m, n))?;
    Ok(Selection {
        selected: cut.selected,
        trace: SelectionTrace {
            method: format!("fsc:{ell}"),
            candidate: Some(fs.selected),
            fs_steps: fs.trace.fs_steps,
            cut: cut.trace.cut,
            prune: Vec::new(),
        },
    })
}

/// FS on the whole sample with a known number of relevant lags; binary
/// alphabets only.
pub fn fs_only_select(seq: &SymbolSequence, d: usize, ell: usize) -> Result<Selection> {
    if seq.alphabet().size() != 2 {
        return Err(contract(format!(
            "FS without cut needs a binary alphabet, got {} symbols",
            seq.alphabet().size()
        )));
    }
    fs_step(seq, d, ell, seq.len())
}

/// Adds argmax lags while `nu_hat > tau`, then drops every `j` with
/// `nu_hat_{j, S \ {j}} < tau`. Uses the whole sample.
pub fn algorithm2_select(seq: &SymbolSequence, d: usize, tau: f64) -> Result<Selection> {
    if !(tau > 0.0) {
        return Err(contract(format!("tau must be > 0, got {tau}")));
    }
    if seq.is_empty() {
        return Err(contract("empty sequence"));
    }
    let window = (0, seq.len());
    let (grown, fs_steps) = forward_stepwise(seq, d, d, window, Some(tau))?;
    let prune: Vec<PruneVerdict> = grown
        .distances()
        .par_iter()
        .map(|&j| {
            let v = nu_hat_window(seq, j, &grown.without(j), d, window)?;
            Ok(PruneVerdict {
                lag: -(j as i64),
                nu_hat: v,
                retained: v >= tau,
            })
        })
        .collect::<Result<_>>()?;
    let selected = LagSet::from_distances(
        d,
        prune
            .iter()
            .filter(|p| p.retained)
            .map(|p| p.lag.unsigned_abs() as usize),
    )?;
    Ok(Selection {
        selected,
        trace: SelectionTrace {
            method: format!("alg2:{tau}"),
            candidate: Some(grown),
            fs_steps,
            prune,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Alphabet};

    fn seq(data: Vec<usize>) -> SymbolSequence {
        SymbolSequence::new(data, Alphabet::binary()).unwrap()
    }

    fn simulate(model: &crate::model::MtdModel, n: usize, seed: u64) -> SymbolSequence {
        SymbolSequence::new(
            model.simulate(n, seed, 1000).unwrap(),
            model.alphabet().clone(),
        )
        .unwrap()
    }

    /// Direct evaluation of the weighted-TV average with hash maps.
    fn nu_reference(data: &[usize], na: usize, k: usize, s: &[usize], d: usize, m: usize) -> f64 {
        use std::collections::BTreeMap;
        let mut cnt: BTreeMap<(Vec<usize>, usize, usize), f64> = BTreeMap::new();
        let mut ctx_tot: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let mut cb_tot: BTreeMap<(Vec<usize>, usize), f64> = BTreeMap::new();
        for t0 in d..m {
            let x: Vec<usize> = s.iter().map(|&j| data[t0 - j]).collect();
            let b = data[t0 - k];
            *cnt.entry((x.clone(), b, data[t0])).or_default() += 1.0;
            *ctx_tot.entry(x.clone()).or_default() += 1.0;
            *cb_tot.entry((x, b)).or_default() += 1.0;
        }
        let pos = (m - d) as f64;
        let mut out = 0.0;
        for (x, &nx) in &ctx_tot {
            for b in 0..na {
                for c in 0..na {
                    let nb = cb_tot.get(&(x.clone(), b)).copied().unwrap_or(0.0);
                    let nc = cb_tot.get(&(x.clone(), c)).copied().unwrap_or(0.0);
                    if nb == 0.0 || nc == 0.0 {
                        continue;
                    }
                    let tv: f64 = (0..na)
                        .map(|a| {
                            let pb = cnt.get(&(x.clone(), b, a)).copied().unwrap_or(0.0) / nb;
                            let pc = cnt.get(&(x.clone(), c, a)).copied().unwrap_or(0.0) / nc;
                            (pb - pc).abs()
                        })
                        .sum::<f64>()
                        / 2.0;
                    out += nx / pos * (nb / nx) * (nc / nx) * tv;
                }
            }
        }
        out
    }

    #[test]
    fn nu_hat_matches_reference() {
        let model = presets::experiment_one(1, 3, 4).unwrap();
        let s = simulate(&model, 3000, 5);
        for set in [vec![], vec![1], vec![1, 3], vec![2, 4]] {
            let ls = LagSet::from_distances(4, set.clone()).unwrap();
            for k in ls.complement() {
                let got = nu_hat(&s, k, &ls, 4, 2000).unwrap();
                let want = nu_reference(s.data(), 2, k, &set, 4, 2000);
                assert!(
                    (got - want).abs() < 1e-12,
                    "k={k} S={set:?}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn nu_hat_ternary_matches_reference() {
        let alpha = Alphabet::new(vec![0.0, 1.0, 2.0]).unwrap();
        let data: Vec<usize> = (0..500u64)
            .map(|i| ((i * 7919 + i * i * 13) % 3) as usize)
            .collect();
        let s = SymbolSequence::new(data, alpha).unwrap();
        let ls = LagSet::from_distances(3, [2]).unwrap();
        for k in [1, 3] {
            let got = nu_hat(&s, k, &ls, 3, 500).unwrap();
            let want = nu_reference(s.data(), 3, k, &[2], 3, 500);
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nu_hat_rejects_member_lag() {
        let s = seq(vec![0, 1, 0, 1, 1, 0]);
        let ls = LagSet::from_distances(2, [1]).unwrap();
        assert!(nu_hat(&s, 1, &ls, 2, 6).is_err());
        assert!(nu_hat(&s, 3, &ls, 2, 6).is_err());
    }

    #[test]
    fn nu_hat_of_constant_context_is_zero() {
        // X_{t-1} is always 0: every (b, c) term with b != c has a zero count
        let s = seq(vec![0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(nu_hat(&s, 1, &LagSet::empty(1), 1, 7).unwrap(), 0.0);
    }

    #[test]
    fn nu_hat_of_deterministic_copy_is_half() {
        // X_t = 1 - X_{t-1}
        let s = seq(vec![0, 1, 0, 1, 0, 1, 0, 1, 0]);
        let v = nu_hat(&s, 1, &LagSet::empty(1), 1, 9).unwrap();
        // pairs (0,1) and (1,0) both have TV 1 and weight 1/2 * 1/2
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fs_zero_budget_is_empty() {
        let s = seq(vec![0, 1, 1, 0, 1, 0, 0]);
        let sel = fs_step(&s, 3, 0, 7).unwrap();
        assert!(sel.selected.is_empty());
        assert!(sel.trace.fs_steps.is_empty());
        assert!(fs_step(&s, 3, 4, 7).is_err());
    }

    #[test]
    fn fs_full_budget_exhausts() {
        let model = presets::experiment_one(1, 3, 3).unwrap();
        let s = simulate(&model, 400, 1);
        let sel = fs_step(&s, 3, 3, 400).unwrap();
        assert_eq!(sel.selected, LagSet::full(3));
        assert_eq!(sel.trace.fs_steps.len(), 3);
    }

    #[test]
    fn fs_ties_prefer_most_recent_lag() {
        let s = seq(vec![0; 50]);
        let sel = fs_step(&s, 4, 2, 50).unwrap();
        assert_eq!(sel.selected.distances(), &[1, 2]);
    }

    #[test]
    fn fs_finds_relevant_lags() {
        let model = presets::experiment_one(1, 8, 8).unwrap();
        let s = simulate(&model, 20_000, 3);
        let sel = fs_step(&s, 8, 2, 20_000).unwrap();
        assert_eq!(sel.selected.distances(), &[1, 8]);
    }

    #[test]
    fn pcp_empty_set_and_unobserved_pairs() {
        let s = seq(vec![0, 1, 1, 0, 1, 0, 0]);
        let p = ThresholdParams::new(0.1, 1.0, 0.5).unwrap();
        let sel = pcp_select(&s, &LagSet::empty(2), 2, &p, (0, 7)).unwrap();
        assert!(sel.selected.is_empty());
        let s = seq(vec![0; 20]);
        let sel = pcp_select(&s, &LagSet::full(3), 3, &p, (0, 20)).unwrap();
        assert!(sel.selected.is_empty());
        assert!(sel
            .trace
            .cut
            .iter()
            .all(|v| v.observed_pairs == 0 && v.witness.is_none()));
    }

    #[test]
    fn pcp_window_errors() {
        let s = seq(vec![0, 1, 1, 0]);
        let p = ThresholdParams::new(0.1, 1.0, 0.5).unwrap();
        let err = pcp_select(&s, &LagSet::full(5), 5, &p, (0, 4)).unwrap_err();
        assert!(err.to_string().contains("window shorter than order"));
    }

    #[test]
    fn pcp_recovers_strong_lag() {
        let model = presets::single_lag(0.9, 0.05, 0.95, 2, 3).unwrap();
        let s = simulate(&model, 5000, 11);
        let p = ThresholdParams::scaled(5000, 1.0).unwrap();
        let sel = pcp_select(&s, &LagSet::full(3), 3, &p, (0, 5000)).unwrap();
        assert_eq!(sel.selected.distances(), &[2]);
        let w = sel.trace.cut[1].witness.as_ref().unwrap();
        assert!(w.margin >= 0.0 && w.tv >= w.threshold);
    }

    #[test]
    fn cut_equals_pcp_on_window() {
        let model = presets::experiment_one(1, 4, 4).unwrap();
        let s = simulate(&model, 3000, 2);
        let p = ThresholdParams::scaled(3000, 0.5).unwrap();
        let cand = LagSet::from_distances(4, [1, 2, 4]).unwrap();
        let a = cut_step(&s, &cand, 4, &p, (1500, 3000)).unwrap();
        let b = pcp_select(&s, &cand, 4, &p, (1500, 3000)).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.trace.cut, b.trace.cut);
    }

    #[test]
    fn fsc_output_within_candidate() {
        let model = presets::experiment_one(1, 5, 5).unwrap();
        let s = simulate(&model, 4000, 9);
        let p = ThresholdParams::scaled(4000, 0.1).unwrap();
        let sel = fsc_select(&s, 5, 3, None, &p).unwrap();
        let cand = sel.trace.candidate.clone().unwrap();
        assert_eq!(cand.len(), 3);
        assert!(sel.selected.is_subset(&cand));
    }

    #[test]
    fn fs_only_rejects_ternary() {
        let alpha = Alphabet::new(vec![0.0, 1.0, 2.0]).unwrap();
        let s = SymbolSequence::new(vec![0, 1, 2, 0, 1, 2], alpha).unwrap();
        assert!(fs_only_select(&s, 2, 1).is_err());
    }

    #[test]
    fn algorithm2_unit_tau_is_empty() {
        let model = presets::experiment_one(1, 3, 3).unwrap();
        let s = simulate(&model, 2000, 4);
        let sel = algorithm2_select(&s, 3, 1.0).unwrap();
        assert!(sel.selected.is_empty());
        assert!(algorithm2_select(&s, 3, 0.0).is_err());
    }

    #[test]
    fn algorithm2_recovers_lags() {
        let model = presets::experiment_one(1, 4, 4).unwrap();
        let s = simulate(&model, 50_000, 8);
        let sel = algorithm2_select(&s, 4, 0.03).unwrap();
        assert_eq!(sel.selected.distances(), &[1, 4]);
        assert!(sel
            .selected
            .is_subset(sel.trace.candidate.as_ref().unwrap()));
    }

    #[test]
    fn trace_serializes() {
        let model = presets::experiment_one(1, 3, 3).unwrap();
        let s = simulate(&model, 2000, 4);
        let p = ThresholdParams::scaled(2000, 0.5).unwrap();
        let sel = fsc_select(&s, 3, 2, None, &p).unwrap();
        let j = serde_json::to_value(&sel).unwrap();
        assert_eq!(j["trace"]["method"], "fsc:2");
        assert!(j["trace"]["fs_steps"].as_array().unwrap().len() == 2);
    }
}
