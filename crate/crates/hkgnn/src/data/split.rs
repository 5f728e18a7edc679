//! Chronological per-user splits and the least-visited POI subset.

use std::collections::HashMap;

use crate::data::{Checkin, RawDataset};
use crate::error::{Error, Result};

/// One user's full trajectory with split boundaries baked in.
#[derive(Clone, Debug, PartialEq)]
pub struct UserTrajectory {
    pub user: u32,
    /// Chronological; equal timestamps keep input-file order.
    pub checkins: Vec<Checkin>,
    pub n_train: usize,
    pub n_val: usize,
}

impl UserTrajectory {
    pub fn n_test(&self) -> usize {
        self.checkins.len() - self.n_train - self.n_val
    }

    pub fn train(&self) -> &[Checkin] {
        &self.checkins[..self.n_train]
    }

    pub fn val(&self) -> &[Checkin] {
        &self.checkins[self.n_train..self.n_train + self.n_val]
    }

    pub fn test(&self) -> &[Checkin] {
        &self.checkins[self.n_train + self.n_val..]
    }
}

/// Split dataset: retained trajectories plus the least-visited POI set.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    /// Ascending user index; only users with ≥ 3 check-ins.
    pub trajectories: Vec<UserTrajectory>,
    /// Sorted POI indices forming the bottom `least_fraction` by visit count.
    pub least_visited: Vec<u32>,
    pub least_fraction: f64,
    pub removed_users: usize,
}

impl DatasetSplit {
    pub fn is_least_visited(&self, poi: u32) -> bool {
        self.least_visited.binary_search(&poi).is_ok()
    }

    pub fn total_checkins(&self) -> usize {
        self.trajectories.iter().map(|t| t.checkins.len()).sum()
    }
}

/// Train/val/test sizes for an n-check-in trajectory: floors of 70% and 10%,
/// remainder to test.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

pub fn split_trajectories(ds: &RawDataset, n_pois: usize, least_fraction: f64) -> Result<DatasetSplit> {
    if !(0.0..=1.0).contains(&least_fraction) {
        return Err(Error::Invalid(format!("least fraction {least_fraction} outside [0, 1]")));
    }
    let mut per_user: HashMap<u32, Vec<Checkin>> = HashMap::new();
    for c in &ds.checkins {
        per_user.entry(c.user).or_default().push(*c);
    }
    let mut users: Vec<u32> = per_user.keys().copied().collect();
    users.sort_unstable();

    let mut trajectories = Vec::new();
    let mut removed_users = 0;
    for user in users {
        let mut checkins = per_user.remove(&user).unwrap();
        if checkins.len() < 3 {
            removed_users += 1;
            continue;
        }
        checkins.sort_by_key(|c| c.timestamp);
        let (n_train, n_val, _) = split_counts(checkins.len());
        trajectories.push(UserTrajectory {
            user,
            checkins,
            n_train,
            n_val,
        });
    }
    if trajectories.is_empty() {
        return Err(Error::Invalid(
            "no users with at least 3 check-ins remain after filtering".to_string(),
        ));
    }
    let least_visited = least_visited_set(&trajectories, n_pois, least_fraction);
    Ok(DatasetSplit {
        trajectories,
        least_visited,
        least_fraction,
        removed_users,
    })
}

/// Bottom `fraction` of POIs by total check-in count over the retained
/// trajectories; ties and zero-visit POIs order by POI index.
pub fn least_visited_set(trajectories: &[UserTrajectory], n_pois: usize, fraction: f64) -> Vec<u32> {
    let mut counts = vec![0usize; n_pois];
    for t in trajectories {
        for c in &t.checkins {
            counts[c.poi as usize] += 1;
        }
    }
    let mut order: Vec<u32> = (0..n_pois as u32).collect();
    order.sort_by_key(|&p| (counts[p as usize], p));
    let take = (fraction * n_pois as f64).floor() as usize;
    let mut least: Vec<u32> = order.into_iter().take(take).collect();
    least.sort_unstable();
    least
}
