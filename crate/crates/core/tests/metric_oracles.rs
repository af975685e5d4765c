//! Rank metrics and yearly statistics checked against brute-force oracles.

use leakgain::metrics::{
    average_ranks, bootstrap_ci, daily_auc, daily_rank_ic, wilcoxon_one_sided, yearly_stats, MetricsError,
};
use proptest::prelude::*;

fn brute_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let below = xs.iter().filter(|&&y| y < x).count() as f64;
            let ties = xs.iter().enumerate().filter(|&(j, &y)| j != i && y == x).count() as f64;
            1.0 + below + ties / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn brute_auc(s: &[f64], y: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        for (j, &yj) in y.iter().enumerate() {
            if yi > 0.0 && yj <= 0.0 {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn brute_wilcoxon(d: &[f64]) -> f64 {
    let nz: Vec<f64> = d.iter().copied().filter(|&x| x != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|x| x.abs()).collect();
    let r = brute_ranks(&abs);
    let observed: f64 = nz.iter().zip(&r).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let n = nz.len();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| r[k]).sum();
            w >= observed
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

/// Vectors with heavy ties: values drawn from a small grid.
fn tied_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4i32..5, len).prop_map(|v| v.into_iter().map(|x| x as f64 * 0.5).collect())
}

fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop_oneof![tied_vec(n..n + 1), prop::collection::vec(-1.0f64..1.0, n)],
            prop_oneof![tied_vec(n..n + 1), prop::collection::vec(-1.0f64..1.0, n)],
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn ranks_match_counting_oracle(xs in tied_vec(1..50)) {
        prop_assert_eq!(average_ranks(&xs), brute_ranks(&xs));
    }

    #[test]
    fn rank_ic_matches_pairwise_oracle((s, y) in paired(3..51)) {
        let expected = pearson(&brute_ranks(&s), &brute_ranks(&y));
        match (daily_rank_ic(&s, &y), expected) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn auc_matches_pairwise_oracle((s, y) in paired(3..51)) {
        match (daily_auc(&s, &y), brute_auc(&s, &y)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn wilcoxon_matches_enumeration(d in tied_vec(1..13)) {
        match wilcoxon_one_sided(&d) {
            Ok(p) => prop_assert!((p - brute_wilcoxon(&d)).abs() < 1e-15),
            Err(e) => {
                prop_assert_eq!(e, MetricsError::AllZeros);
                prop_assert!(d.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn bootstrap_interval_brackets_within_range(v in prop::collection::vec(-5.0f64..5.0, 2..12), seed in any::<u64>()) {
        let (lo, hi) = bootstrap_ci(&v, 500, seed).unwrap();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min - 1e-12 <= lo && lo <= hi && hi <= max + 1e-12);
        prop_assert_eq!(bootstrap_ci(&v, 500, seed).unwrap(), (lo, hi));
    }
}

#[test]
fn auc_is_invariant_to_monotone_score_transforms() {
    let s = [0.3, -1.2, 0.3, 2.0, 0.0, -0.5];
    let y = [1.0, -1.0, 0.0, 2.0, 1.0, -3.0];
    let t: Vec<f64> = s.iter().map(|x: &f64| x.exp() * 3.0 + 1.0).collect();
    assert_eq!(daily_auc(&s, &y), daily_auc(&t, &y));
    assert_eq!(daily_rank_ic(&s, &y), daily_rank_ic(&t, &y));
}

#[test]
fn nine_positive_years_give_one_in_512() {
    let d = [0.4, 1.1, 2.0, 0.2, 3.3, 0.9, 1.7, 0.05, 2.6];
    assert_eq!(wilcoxon_one_sided(&d).unwrap(), 1.0 / 512.0);
    let s = yearly_stats(&d, 2000, 3).unwrap();
    assert_eq!(s.positive_years, 9);
    assert_eq!(s.wilcoxon_p, Some(1.0 / 512.0));
}

#[test]
fn all_zero_years_have_no_p_value() {
    let s = yearly_stats(&[0.0; 9], 1000, 1).unwrap();
    assert_eq!(s.wilcoxon_p, None);
    assert_eq!(s.positive_years, 0);
    assert_eq!(s.ci, Some((0.0, 0.0)));
}
