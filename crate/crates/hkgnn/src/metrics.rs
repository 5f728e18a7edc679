//! Ranking metrics over per-example ranks of the true POI. Ties are scored
//! pessimistically: the true POI ranks below every competitor with an equal
//! score, so a constant scorer lands at rank |P|.

use crate::error::{Error, Result};

/// 1-based rank of `label` in `scores` under the pessimistic tie-break.
pub fn rank_of(scores: &[f64], label: usize) -> Result<u32> {
    if label >= scores.len() {
        return Err(Error::Invalid(format!(
            "label {label} out of {} candidates",
            scores.len()
        )));
    }
    let target = scores[label];
    if !target.is_finite() {
        return Err(Error::NonFinite(format!("score of label {label}")));
    }
    let mut rank = 1u32;
    for (j, &s) in scores.iter().enumerate() {
        if j != label && s >= target {
            rank += 1;
        }
    }
    Ok(rank)
}

fn nonempty(ranks: &[u32]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Invalid("no ranks to aggregate".to_string()));
    }
    Ok(())
}

/// Fraction of examples ranked within the top k.
pub fn acc_at_k(ranks: &[u32], k: u32) -> Result<f64> {
    nonempty(ranks)?;
    if k == 0 {
        return Err(Error::Invalid("Acc@K needs K >= 1".to_string()));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean of 1/rank.
pub fn mrr(ranks: &[u32]) -> Result<f64> {
    nonempty(ranks)?;
    let sum: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum();
    Ok(sum / ranks.len() as f64)
}

/// Arithmetic mean rank.
pub fn average_rank(ranks: &[u32]) -> Result<f64> {
    nonempty(ranks)?;
    let sum: f64 = ranks.iter().map(|&r| r as f64).sum();
    Ok(sum / ranks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn acc_counts_ranks_within_k() {
        let ranks = [1, 3, 20];
        assert_eq!(acc_at_k(&ranks, 5).unwrap(), 2.0 / 3.0);
        assert_eq!(acc_at_k(&ranks, 1).unwrap(), 1.0 / 3.0);
        assert_eq!(acc_at_k(&ranks, 20).unwrap(), 1.0);
        assert_eq!(acc_at_k(&ranks, 1000).unwrap(), 1.0);
    }

    #[test]
    fn acc_rejects_empty_input_and_zero_k() {
        assert!(acc_at_k(&[], 5).is_err());
        assert!(acc_at_k(&[1], 0).is_err());
    }

    #[test]
    fn mrr_averages_reciprocals() {
        let got = mrr(&[1, 2, 4]).unwrap();
        assert!((got - (1.0 + 0.5 + 0.25) / 3.0).abs() <= 1e-15);
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(mrr(&[5]).unwrap(), 0.2);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn average_rank_is_the_mean() {
        assert_eq!(average_rank(&[1, 3, 20]).unwrap(), 8.0);
        assert_eq!(average_rank(&[1, 1]).unwrap(), 1.0);
        assert!(average_rank(&[]).is_err());
    }

    #[test]
    fn worsening_any_rank_raises_average_rank() {
        let base = [4u32, 7, 2, 9];
        let ar = average_rank(&base).unwrap();
        for i in 0..base.len() {
            let mut worse = base;
            worse[i] += 1;
            assert!(average_rank(&worse).unwrap() > ar);
        }
    }

    #[test]
    fn unique_top_score_ranks_first() {
        assert_eq!(rank_of(&[0.1, 0.9, 0.3], 1).unwrap(), 1);
        assert_eq!(rank_of(&[0.1, 0.9, 0.3], 0).unwrap(), 3);
    }

    #[test]
    fn ties_resolve_against_the_label() {
        assert_eq!(rank_of(&[0.5, 0.5, 0.5, 0.5], 2).unwrap(), 4);
        assert_eq!(rank_of(&[0.5, 0.9, 0.5, 0.1], 0).unwrap(), 3);
    }

    #[test]
    fn rank_rejects_bad_inputs() {
        assert!(rank_of(&[], 0).is_err());
        assert!(rank_of(&[1.0, 2.0], 2).is_err());
        assert!(rank_of(&[1.0, f64::NAN], 1).is_err());
    }

    proptest! {
        #[test]
        fn rank_stays_in_bounds(scores in prop::collection::vec(-1e3..1e3f64, 1..40), label in 0usize..40) {
            prop_assume!(label < scores.len());
            let r = rank_of(&scores, label).unwrap();
            prop_assert!(r >= 1 && r as usize <= scores.len());
        }

        #[test]
        fn acc_is_monotone_in_k(ranks in prop::collection::vec(1u32..100, 1..50), k in 1u32..99) {
            let lo = acc_at_k(&ranks, k).unwrap();
            let hi = acc_at_k(&ranks, k + 1).unwrap();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn mrr_and_ar_stay_in_range(ranks in prop::collection::vec(1u32..500, 1..50)) {
            let m = mrr(&ranks).unwrap();
            prop_assert!(m > 0.0 && m <= 1.0);
            let ar = average_rank(&ranks).unwrap();
            let max = *ranks.iter().max().unwrap() as f64;
            prop_assert!(ar >= 1.0 && ar <= max);
        }
    }
}
