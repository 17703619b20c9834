use proptest::prelude::*;

use mtdlag::empirics::count_contexts;
use mtdlag::estimate::estimate_kernel;
use mtdlag::select::{cut_step, fsc_select, nu_hat, nu_hat_window, pcp_select};
use mtdlag::thresholds::{deviation_radius, individual_threshold, noise_levels};
use mtdlag::{Alphabet, LagSet, SymbolSequence, ThresholdParams};

fn alphabet(na: usize) -> Alphabet {
    Alphabet::new((0..na).map(|i| i as f64).collect()).unwrap()
}

/// `(sequence, d, S)` with `n > d + 1` and `S` a subset of `[-d, -1]`.
fn sample() -> impl Strategy<Value = (SymbolSequence, usize, LagSet)> {
    (2usize..=3, 1usize..=4).prop_flat_map(|(na, d)| {
        (
            prop::collection::vec(0..na, (d + 20)..400),
            prop::collection::vec(any::<bool>(), d),
        )
            .prop_map(move |(data, mask)| {
                let seq = SymbolSequence::new(data, alphabet(na)).unwrap();
                let lags = (1..=d).filter(|k| mask[k - 1]);
                (seq, d, LagSet::from_distances(d, lags).unwrap())
            })
    })
}

fn params(alpha: f64) -> ThresholdParams {
    ThresholdParams::new(0.1, alpha, 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nu_hat_is_a_probability_weighted_distance((seq, d, s) in sample()) {
        for k in (1..=d).filter(|k| !s.contains(*k)) {
            let v = nu_hat(&seq, k, &s, d, seq.len()).unwrap();
            prop_assert!((0.0..=1.0).contains(&v), "nu_hat = {v}");
        }
    }

    #[test]
    fn pcp_selects_within_its_candidate_set((seq, d, s) in sample(), c in 0.01f64..2.0) {
        let p = params(c * (seq.len() as f64).ln());
        let sel = pcp_select(&seq, &s, d, &p, (0, seq.len())).unwrap();
        prop_assert!(sel.selected.is_subset(&s));
        prop_assert_eq!(sel.trace.cut.len(), s.len());
        for v in &sel.trace.cut {
            prop_assert_eq!(v.retained, v.witness.as_ref().is_some_and(|w| w.margin >= 0.0));
        }
    }

    #[test]
    fn pcp_is_deterministic((seq, d, s) in sample()) {
        let p = params(1.5);
        let a = pcp_select(&seq, &s, d, &p, (0, seq.len())).unwrap();
        let b = pcp_select(&seq, &s, d, &p, (0, seq.len())).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fsc_prunes_its_forward_candidate((seq, d, _s) in sample(), ell in 1usize..4, c in 0.01f64..1.0) {
        let p = params(c * (seq.len() as f64).ln());
        let sel = fsc_select(&seq, d, ell.min(d), None, &p).unwrap();
        let cand = sel.trace.candidate.clone().unwrap();
        prop_assert_eq!(cand.len(), ell.min(d));
        prop_assert!(sel.selected.is_subset(&cand));
    }

    #[test]
    fn cut_matches_pcp_on_the_same_window((seq, d, s) in sample(), c in 0.01f64..1.0) {
        let p = params(c * 5.0);
        let m = seq.len() / 3;
        let cut = cut_step(&seq, &s, d, &p, (m, seq.len())).unwrap();
        let pcp = pcp_select(&seq, &s, d, &p, (m, seq.len())).unwrap();
        prop_assert_eq!(cut.selected, pcp.selected);
        prop_assert_eq!(cut.trace.cut, pcp.trace.cut);
    }

    #[test]
    fn pcp_is_invariant_under_symbol_relabeling((seq, d, s) in sample(), c in 0.01f64..1.0, rot in 1usize..3) {
        let na = seq.alphabet().size();
        let perm: Vec<usize> = (0..na).map(|a| (a + rot) % na).collect();
        let relabeled = seq.relabeled(&perm, alphabet(na)).unwrap();
        let p = params(c * (seq.len() as f64).ln());
        let a = pcp_select(&seq, &s, d, &p, (0, seq.len())).unwrap();
        let b = pcp_select(&relabeled, &s, d, &p, (0, seq.len())).unwrap();
        prop_assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn nu_hat_is_invariant_under_symbol_relabeling((seq, d, s) in sample()) {
        let na = seq.alphabet().size();
        let perm: Vec<usize> = (0..na).rev().collect();
        let relabeled = seq.relabeled(&perm, alphabet(na)).unwrap();
        for k in (1..=d).filter(|k| !s.contains(*k)) {
            let a = nu_hat_window(&seq, k, &s, d, (0, seq.len())).unwrap();
            let b = nu_hat_window(&relabeled, k, &s, d, (0, seq.len())).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_levels_grow_with_alpha((seq, _d, s) in sample(), a1 in 0.1f64..3.0, extra in 0.0f64..3.0) {
        prop_assume!(!s.is_empty());
        let counts = count_contexts(&seq, &s, 0, seq.len()).unwrap();
        let lo = noise_levels(&counts, &params(a1));
        let hi = noise_levels(&counts, &params(a1 + extra));
        for (l, h) in lo.iter().zip(&hi) {
            prop_assert!(l.t <= h.t || (l.t.is_infinite() && h.t.is_infinite()));
            prop_assert_eq!(l.gamma, 2.0 * l.t);
        }
    }

    #[test]
    fn thresholds_shrink_with_more_data(p in 0.0f64..=1.0, n in 1u64..100_000, more in 1u64..100_000, alpha in 0.1f64..10.0) {
        let pr = params(alpha);
        let q = [p, 1.0 - p];
        prop_assert!(individual_threshold(&q, n + more, &pr) <= individual_threshold(&q, n, &pr));
        prop_assert!(deviation_radius(p, n + more, &pr) <= deviation_radius(p, n, &pr));
        prop_assert!(individual_threshold(&q, 0, &pr).is_infinite());
    }

    #[test]
    fn radii_grow_with_alpha(p in 0.0f64..=1.0, n in 1u64..100_000, a in 0.1f64..10.0, extra in 0.0f64..10.0) {
        prop_assert!(deviation_radius(p, n, &params(a)) <= deviation_radius(p, n, &params(a + extra)));
    }

    #[test]
    fn estimated_counts_cover_every_position((seq, d, s) in sample()) {
        prop_assume!(!s.is_empty());
        let k = estimate_kernel(&seq, &s, &params(2.0)).unwrap();
        let na = seq.alphabet().size();
        prop_assert_eq!(k.rows.len(), na.pow(s.len() as u32));
        let total: u64 = k.rows.iter().map(|r| r.count).sum();
        // every position after the first d has a full past
        prop_assert_eq!(total as usize, seq.len() - d);
        for r in &k.rows {
            prop_assert!((r.p_hat.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
