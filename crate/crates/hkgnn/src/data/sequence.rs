//! Training-example construction: every check-in (except each user's first)
//! becomes a label, with the up-to-M most recent earlier check-ins as input.

use crate::data::{time_partition, DatasetSplit, TimeKey};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// One supervised example. History is real entries only, oldest first;
/// padding to fixed length happens at batch assembly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqExample {
    pub user: u32,
    /// (poi, time) of each history position; 1 ≤ len ≤ M.
    pub history: Vec<(u32, TimeKey)>,
    pub label_poi: u32,
    pub query_time: TimeKey,
}

impl SeqExample {
    pub fn real_len(&self) -> usize {
        self.history.len()
    }
}

/// Examples for one split part, ordered by (user, position). Histories may
/// reach back into earlier parts; labels stay within the requested part.
pub fn build_sequences(split: &DatasetSplit, m: usize, part: SplitPart) -> Result<Vec<SeqExample>> {
    if m == 0 {
        return Err(Error::Invalid("sequence length M must be at least 1".to_string()));
    }
    let mut out = Vec::new();
    for t in &split.trajectories {
        let (lo, hi) = match part {
            SplitPart::Train => (0, t.n_train),
            SplitPart::Val => (t.n_train, t.n_train + t.n_val),
            SplitPart::Test => (t.n_train + t.n_val, t.checkins.len()),
        };
        for idx in lo..hi {
            if idx == 0 {
                continue;
            }
            let from = idx.saturating_sub(m);
            let history = t.checkins[from..idx]
                .iter()
                .map(|c| (c.poi, time_partition(c.timestamp, c.tz_offset_minutes)))
                .collect();
            let label = &t.checkins[idx];
            out.push(SeqExample {
                user: t.user,
                history,
                label_poi: label.poi,
                query_time: time_partition(label.timestamp, label.tz_offset_minutes),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Checkin, UserTrajectory};

    fn trajectory(user: u32, n: usize) -> UserTrajectory {
        let checkins: Vec<Checkin> = (0..n)
            .map(|i| Checkin {
                user,
                poi: i as u32,
                timestamp: 1_325_462_400 + i as i64 * 3600,
                tz_offset_minutes: 0,
            })
            .collect();
        let (n_train, n_val, _) = crate::data::split_counts(n);
        UserTrajectory {
            user,
            checkins,
            n_train,
            n_val,
        }
    }

    fn split_of(trajectories: Vec<UserTrajectory>) -> DatasetSplit {
        DatasetSplit {
            trajectories,
            least_visited: Vec::new(),
            least_fraction: 0.0,
            removed_users: 0,
        }
    }

    #[test]
    fn first_checkin_yields_no_example() {
        let split = split_of(vec![trajectory(0, 10)]);
        let train = build_sequences(&split, 100, SplitPart::Train).unwrap();
        // Positions 1..=6 of the 7 train check-ins.
        assert_eq!(train.len(), 6);
        assert_eq!(train[0].history.len(), 1);
        assert_eq!(train[0].label_poi, 1);
    }

    #[test]
    fn short_history_kept_whole() {
        let split = split_of(vec![trajectory(0, 10)]);
        let train = build_sequences(&split, 100, SplitPart::Train).unwrap();
        let last = train.last().unwrap();
        assert_eq!(last.real_len(), 6);
        assert_eq!(last.label_poi, 6);
    }

    #[test]
    fn long_history_truncated_to_most_recent() {
        let split = split_of(vec![trajectory(0, 150)]);
        let m = 100;
        let train = build_sequences(&split, m, SplitPart::Train).unwrap();
        let last = train.last().unwrap();
        // Label is position 104; history must be positions 4..104.
        assert_eq!(last.label_poi, 104);
        assert_eq!(last.real_len(), m);
        assert_eq!(last.history[0].0, 4);
        assert_eq!(last.history[m - 1].0, 103);
    }

    #[test]
    fn val_and_test_histories_cross_parts() {
        let split = split_of(vec![trajectory(0, 10)]);
        let val = build_sequences(&split, 100, SplitPart::Val).unwrap();
        assert_eq!(val.len(), 1);
        assert_eq!(val[0].label_poi, 7);
        assert_eq!(val[0].real_len(), 7);
        let test = build_sequences(&split, 100, SplitPart::Test).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test[0].label_poi, 8);
        assert_eq!(test[1].label_poi, 9);
        assert_eq!(test[1].real_len(), 9);
    }

    #[test]
    fn query_time_matches_label_checkin() {
        let split = split_of(vec![trajectory(0, 10)]);
        let train = build_sequences(&split, 100, SplitPart::Train).unwrap();
        let ex = &train[0];
        let label_checkin = &split.trajectories[0].checkins[1];
        assert_eq!(
            ex.query_time,
            time_partition(label_checkin.timestamp, label_checkin.tz_offset_minutes)
        );
    }

    #[test]
    fn ordering_is_user_then_position() {
        let split = split_of(vec![trajectory(0, 5), trajectory(1, 5)]);
        let train = build_sequences(&split, 100, SplitPart::Train).unwrap();
        let users: Vec<u32> = train.iter().map(|e| e.user).collect();
        assert_eq!(users, vec![0, 0, 1, 1]);
    }

    #[test]
    fn zero_m_rejected() {
        let split = split_of(vec![trajectory(0, 5)]);
        assert!(build_sequences(&split, 0, SplitPart::Train).is_err());
    }
}
