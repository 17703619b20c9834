//! Transition-probability tables over a selected lag set, with per-cell
//! confidence radii.

use std::io::Write;

use serde::Serialize;

use crate::empirics::{count_contexts, format_context, SymbolSequence};
use crate::error::{contract, Result};
use crate::lags::LagSet;
use crate::thresholds::{deviation_radius, ThresholdParams};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelRow {
    /// Symbol indices in lag-set order.
    pub context: Vec<usize>,
    pub count: u64,
    pub p_hat: Vec<f64>,
    /// Infinite (JSON `null`) for unobserved contexts.
    pub radius: Vec<f64>,
}

/// One row per context of `A^Λ̂`, in lexicographic order with the most
/// recent lag varying slowest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatedKernel {
    pub lag_set: LagSet,
    pub params: ThresholdParams,
    pub n_symbols: usize,
    pub rows: Vec<KernelRow>,
}

/// Largest lag set whose full table is materialized.
pub const MAX_TABLE_ROWS: usize = 1 << 20;

/// Counts on the full sample, `p̂` per context and
/// `r(a) = sqrt(2 alpha (1 + eps) V̂ / N̄) + alpha / (3 N̄)`.
pub fn estimate_kernel(
    seq: &SymbolSequence,
    lag_set: &LagSet,
    params: &ThresholdParams,
) -> Result<EstimatedKernel> {
    if lag_set.is_empty() {
        return Err(contract("estimation needs a nonempty lag set"));
    }
    params.check()?;
    let na = seq.alphabet().size();
    let rows_total = (na as u128).pow(lag_set.len() as u32);
    if rows_total > MAX_TABLE_ROWS as u128 {
        return Err(contract(format!(
            "table over {} lags would have {rows_total} rows",
            lag_set.len()
        )));
    }
    let counts = count_contexts(seq, lag_set, 0, seq.len())?;
    let mut ctx = vec![0usize; lag_set.len()];
    let mut rows = Vec::with_capacity(rows_total as usize);
    for _ in 0..rows_total {
        let row = match counts.lookup(&ctx) {
            Some(id) => {
                let n_bar = counts.total(id);
                let p = counts.p_hat(id);
                let radius = p
                    .iter()
                    .map(|&q| deviation_radius(q, n_bar, params))
                    .collect();
                KernelRow {
                    context: ctx.clone(),
                    count: n_bar,
                    p_hat: p,
                    radius,
                }
            }
            None => KernelRow {
                context: ctx.clone(),
                count: 0,
                p_hat: vec![1.0 / na as f64; na],
                radius: vec![f64::INFINITY; na],
            },
        };
        rows.push(row);
        for c in ctx.iter_mut().rev() {
            *c += 1;
            if *c < na {
                break;
            }
            *c = 0;
        }
    }
    Ok(EstimatedKernel {
        lag_set: lag_set.clone(),
        params: *params,
        n_symbols: na,
        rows,
    })
}

impl EstimatedKernel {
    pub fn row(&self, ctx: &[usize]) -> Option<&KernelRow> {
        self.rows.iter().find(|r| r.context == ctx)
    }

    /// Writes `context,symbol,p_hat,count,radius`; infinite radii print as `inf`.
    pub fn write_csv<W: Write>(&self, alphabet: &crate::model::Alphabet, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["context", "symbol", "p_hat", "count", "radius"])?;
        for r in &self.rows {
            let ctx = format_context(alphabet, &r.context);
            for a in 0..self.n_symbols {
                wr.write_record([
                    ctx.as_str(),
                    alphabet.label(a),
                    &r.p_hat[a].to_string(),
                    &r.count.to_string(),
                    &r.radius[a].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Alphabet};

    fn params() -> ThresholdParams {
        ThresholdParams::new(0.1, 2.0, 0.5).unwrap()
    }

    #[test]
    fn rows_cover_all_contexts() {
        let s = SymbolSequence::new(vec![0, 0, 0, 1, 0, 0, 1, 1], Alphabet::binary()).unwrap();
        let k = estimate_kernel(&s, &LagSet::full(2), &params()).unwrap();
        assert_eq!(k.rows.len(), 4);
        let ctxs: Vec<_> = k.rows.iter().map(|r| r.context.clone()).collect();
        assert_eq!(ctxs, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        for r in &k.rows {
            assert!((r.p_hat.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if r.count == 0 {
                assert!(r.radius.iter().all(|x| x.is_infinite()));
            } else {
                assert!(r.radius.iter().all(|x| x.is_finite() && *x > 0.0));
            }
        }
        // (x_{-1}, x_{-2}) = (1, 1) never occurs before position 8
        assert_eq!(k.row(&[1, 1]).unwrap().count, 0);
    }

    #[test]
    fn radius_formula() {
        let model = presets::experiment_one(1, 2, 2).unwrap();
        let s =
            SymbolSequence::new(model.simulate(500, 1, 100).unwrap(), Alphabet::binary()).unwrap();
        let p = params();
        let k = estimate_kernel(&s, &LagSet::full(2), &p).unwrap();
        for r in k.rows.iter().filter(|r| r.count > 0) {
            for a in 0..2 {
                let nb = r.count as f64;
                let g = p.mu - crate::thresholds::psi(p.mu);
                let v = p.mu / g * r.p_hat[a] + p.alpha / (g * nb);
                let want = (2.0 * p.alpha * 1.1 * v / nb).sqrt() + p.alpha / (3.0 * nb);
                assert!((r.radius[a] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_empty_lag_set() {
        let s = SymbolSequence::new(vec![0, 1, 0], Alphabet::binary()).unwrap();
        assert!(estimate_kernel(&s, &LagSet::empty(1), &params()).is_err());
    }

    #[test]
    fn csv_marks_infinite_radius() {
        let s = SymbolSequence::new(vec![0, 0, 0, 0], Alphabet::binary()).unwrap();
        let k = estimate_kernel(&s, &LagSet::full(1), &params()).unwrap();
        let mut out = Vec::new();
        k.write_csv(&Alphabet::binary(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("context,symbol,p_hat,count,radius\n0,0,1,3,"));
        assert!(text.contains("1,0,0.5,0,inf"));
        let j = k.to_json_string().unwrap();
        assert!(j.contains("null"));
    }
}
