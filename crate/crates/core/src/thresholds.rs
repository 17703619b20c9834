//! Adaptive random thresholds.
//!
//! Every threshold is built from the empirical variance proxy
//! `V̂(a, x) = mu / (mu - psi(mu)) * p̂(a|x) + alpha / ((mu - psi(mu)) * N̄(x))`
//! with `psi(mu) = e^mu - mu - 1`. A context that was never observed has an
//! infinite threshold.

use serde::{Deserialize, Serialize};

use crate::empirics::ContextCounts;
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub mu: f64,
}

impl ThresholdParams {
    pub fn new(epsilon: f64, alpha: f64, mu: f64) -> Result<Self> {
        let p = Self { epsilon, alpha, mu };
        p.check()?;
        Ok(p)
    }

    /// `epsilon = 0.1`, `mu = 0.5`, `alpha = c * ln(n)`.
    pub fn scaled(n: usize, c: f64) -> Result<Self> {
        Self::new(0.1, c * (n as f64).ln(), 0.5)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(contract(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(contract(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.mu > 0.0 && self.mu < 3.0) {
            return Err(contract(format!("mu must lie in (0, 3), got {}", self.mu)));
        }
        if self.mu <= psi(self.mu) {
            return Err(contract(format!(
                "mu = {} violates mu > psi(mu) = {}",
                self.mu,
                psi(self.mu)
            )));
        }
        Ok(())
    }

    /// `mu - psi(mu)`.
    fn gap(&self) -> f64 {
        self.mu - psi(self.mu)
    }
}

pub fn psi(mu: f64) -> f64 {
    mu.exp() - mu - 1.0
}

/// Variance proxy for one symbol of a context observed `n_bar > 0` times.
pub fn v_hat(p_hat: f64, n_bar: u64, params: &ThresholdParams) -> Result<f64> {
    if n_bar == 0 {
        return Err(contract("v_hat needs an observed context (n_bar > 0)"));
    }
    Ok(v_hat_unchecked(p_hat, n_bar as f64, params))
}

#[inline]
fn v_hat_unchecked(p_hat: f64, n_bar: f64, params: &ThresholdParams) -> f64 {
    let g = params.gap();
    params.mu / g * p_hat + params.alpha / (g * n_bar)
}

/// `s_n(x) = sum_a sqrt(alpha (1 + eps) V̂(a, x) / (2 N̄)) + alpha |A| / (6 N̄)`,
/// infinite when `n_bar == 0`.
pub fn individual_threshold(p_hat: &[f64], n_bar: u64, params: &ThresholdParams) -> f64 {
    if n_bar == 0 {
        return f64::INFINITY;
    }
    let nb = n_bar as f64;
    let scale = params.alpha * (1.0 + params.epsilon) / (2.0 * nb);
    let root: f64 = p_hat
        .iter()
        .map(|&p| (scale * v_hat_unchecked(p, nb, params)).sqrt())
        .sum();
    root + params.alpha * p_hat.len() as f64 / (6.0 * nb)
}

/// [`individual_threshold`] for the context `ctx` of a count table.
pub fn s_n(counts: &ContextCounts, ctx: &[usize], params: &ThresholdParams) -> f64 {
    match counts.lookup(ctx) {
        Some(id) => individual_threshold(&counts.p_hat(id), counts.total(id), params),
        None => f64::INFINITY,
    }
}

/// `t_n(x, y) = s_n(x) + s_n(y)`.
pub fn pair_threshold(
    counts: &ContextCounts,
    x: &[usize],
    y: &[usize],
    params: &ThresholdParams,
) -> f64 {
    s_n(counts, x, params) + s_n(counts, y, params)
}

/// Per-symbol deviation radius
/// `sqrt(2 alpha (1 + eps) V̂ / N̄) + alpha / (3 N̄)`; infinite when unseen.
pub fn deviation_radius(p_hat: f64, n_bar: u64, params: &ThresholdParams) -> f64 {
    if n_bar == 0 {
        return f64::INFINITY;
    }
    let nb = n_bar as f64;
    (2.0 * params.alpha * (1.0 + params.epsilon) * v_hat_unchecked(p_hat, nb, params) / nb).sqrt()
        + params.alpha / (3.0 * nb)
}

/// Probability bound for one `(a, x)` cell exceeding its deviation radius
/// when `positions` positions are counted:
/// `4 ceil(log(mu positions / alpha + 2) / log(1 + eps)) e^{-alpha}`.
pub fn cell_violation_bound(positions: usize, params: &ThresholdParams) -> f64 {
    let peel =
        ((params.mu * positions as f64 / params.alpha + 2.0).ln() / params.epsilon.ln_1p()).ceil();
    4.0 * peel * (-params.alpha).exp()
}

/// Noise levels of one lag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LagNoise {
    /// Signed lag.
    pub lag: i64,
    /// `pair_min[b][c] = t_{n,j}(b, c)`; infinite (JSON `null`) when no
    /// compatible pair with `x_j = b`, `y_j = c` was observed.
    pub pair_min: Vec<Vec<f64>>,
    /// `t_{n,j} = max_{b != c} t_{n,j}(b, c)`.
    pub t: f64,
    /// `gamma_{n,j} = 2 t_{n,j}`.
    pub gamma: f64,
}

/// `t_{n,j}(b,c)`, `t_{n,j}` and `gamma_{n,j}` for every lag of the count
/// table's lag set.
pub fn noise_levels(counts: &ContextCounts, params: &ThresholdParams) -> Vec<LagNoise> {
    let na = counts.n_symbols();
    let thresholds: Vec<f64> = (0..counts.len())
        .map(|id| individual_threshold(&counts.p_hat(id), counts.total(id), params))
        .collect();
    let codec = counts.codec();
    counts
        .lag_set()
        .distances()
        .iter()
        .enumerate()
        .map(|(pos, &k)| {
            let mut pair_min = vec![vec![f64::INFINITY; na]; na];
            for id in 0..counts.len() {
                let b = codec.coord(counts.key(id), pos);
                for c in 0..na {
                    if c == b {
                        continue;
                    }
                    if let Some(other) = counts.sibling(id, pos, c) {
                        let t = thresholds[id] + thresholds[other];
                        if t < pair_min[b][c] {
                            pair_min[b][c] = t;
                        }
                    }
                }
            }
            let mut t: f64 = 0.0;
            for b in 0..na {
                for c in 0..na {
                    if b != c {
                        t = t.max(pair_min[b][c]);
                    }
                }
            }
            LagNoise {
                lag: -(k as i64),
                pair_min,
                t,
                gamma: 2.0 * t,
            }
        })
        .collect()
}
