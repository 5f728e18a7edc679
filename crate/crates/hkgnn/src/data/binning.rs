//! Equal-frequency sextile binning of POI statistics. Each statistic maps to
//! a bin in 0..=5 using boundaries computed over the whole dataset; nulls stay
//! null and later contribute no fact slot.

use crate::data::PoiRecord;

/// Boundaries for one statistic: value v lands in bin `#{b in boundaries : v ≥ b}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SextileBins {
    /// At most 5 boundaries; empty when no values were present.
    pub boundaries: Vec<f64>,
}

impl SextileBins {
    /// Fit on the non-null values of a statistic.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return SextileBins { boundaries: Vec::new() };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let boundaries = (1..6).map(|j| sorted[n * j / 6]).collect();
        SextileBins { boundaries }
    }

    pub fn bin(&self, v: f64) -> u8 {
        self.boundaries.iter().filter(|&&b| v >= b).count() as u8
    }
}

/// Binned statistics of one POI, aligned by index with the input records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinnedSideInfo {
    pub rating: Option<u8>,
    pub n_comments: Option<u8>,
    pub n_likes: Option<u8>,
    pub n_photos: Option<u8>,
}

pub fn bin_side_info(pois: &[PoiRecord]) -> (Vec<BinnedSideInfo>, [SextileBins; 4]) {
    let collect = |f: fn(&PoiRecord) -> Option<f64>| -> Vec<f64> {
        pois.iter().filter_map(f).collect()
    };
    let bins = [
        SextileBins::fit(&collect(|p| p.rating)),
        SextileBins::fit(&collect(|p| p.n_comments)),
        SextileBins::fit(&collect(|p| p.n_likes)),
        SextileBins::fit(&collect(|p| p.n_photos)),
    ];
    let binned = pois
        .iter()
        .map(|p| BinnedSideInfo {
            rating: p.rating.map(|v| bins[0].bin(v)),
            n_comments: p.n_comments.map(|v| bins[1].bin(v)),
            n_likes: p.n_likes.map(|v| bins[2].bin(v)),
            n_photos: p.n_photos.map(|v| bins[3].bin(v)),
        })
        .collect();
    (binned, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poi_with_rating(id: usize, rating: Option<f64>) -> PoiRecord {
        PoiRecord {
            id: format!("p{id}"),
            lat: 0.0,
            lon: 0.0,
            cat1: None,
            cat2: Vec::new(),
            rating,
            n_comments: None,
            n_likes: None,
            n_photos: None,
            price_tier: None,
            contacts: Vec::new(),
        }
    }

    #[test]
    fn identical_values_share_one_bin() {
        let pois: Vec<PoiRecord> = (0..50).map(|i| poi_with_rating(i, Some(3.0))).collect();
        let (binned, _) = bin_side_info(&pois);
        let first = binned[0].rating.unwrap();
        assert!(binned.iter().all(|b| b.rating == Some(first)));
    }

    #[test]
    fn six_hundred_distinct_values_give_hundred_per_bin() {
        let pois: Vec<PoiRecord> = (0..600).map(|i| poi_with_rating(i, Some(i as f64))).collect();
        let (binned, _) = bin_side_info(&pois);
        let mut counts = [0usize; 6];
        for b in &binned {
            counts[b.rating.unwrap() as usize] += 1;
        }
        assert_eq!(counts, [100; 6]);
    }

    #[test]
    fn null_stays_null() {
        let mut pois: Vec<PoiRecord> = (0..10).map(|i| poi_with_rating(i, Some(i as f64))).collect();
        pois.push(poi_with_rating(10, None));
        let (binned, _) = bin_side_info(&pois);
        assert_eq!(binned[10].rating, None);
        assert!(binned[..10].iter().all(|b| b.rating.is_some()));
    }

    #[test]
    fn bins_stay_in_range() {
        let pois: Vec<PoiRecord> = (0..37).map(|i| poi_with_rating(i, Some((i % 7) as f64))).collect();
        let (binned, _) = bin_side_info(&pois);
        assert!(binned.iter().all(|b| b.rating.unwrap() <= 5));
    }

    proptest! {
        #[test]
        fn binning_is_monotone(values in proptest::collection::vec(0.0..1e6f64, 2..200)) {
            let bins = SextileBins::fit(&values);
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in sorted.windows(2) {
                prop_assert!(bins.bin(w[0]) <= bins.bin(w[1]));
            }
        }

        #[test]
        fn equal_values_equal_bins(values in proptest::collection::vec(0.0..100.0f64, 2..100)) {
            let bins = SextileBins::fit(&values);
            for &v in &values {
                prop_assert_eq!(bins.bin(v), bins.bin(v));
                prop_assert!(bins.bin(v) <= 5);
            }
        }
    }
}
