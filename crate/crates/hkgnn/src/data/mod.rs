//! LBSN ingestion and preprocessing: raw file parsing, local-time partition,
//! side-information binning, chronological splits, sequence building, and a
//! deterministic synthetic generator for tests.

mod archive;
mod binning;
mod raw;
mod sequence;
mod split;
mod synth;
mod time;

pub use archive::{load_archive, save_archive, Archive};
pub use binning::{bin_side_info, BinnedSideInfo, SextileBins};
pub use raw::{load_dataset, RawDataset};
pub use sequence::{build_sequences, SeqExample, SplitPart};
pub use split::{least_visited_set, split_counts, split_trajectories, DatasetSplit, UserTrajectory};
pub use synth::{generate_synthetic, SynthSpec};
pub use time::time_partition;

use crate::error::{Error, Result};
use crate::geo::geohash_encode;

/// One visit event. User and POI are dense dataset-local indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Checkin {
    pub user: u32,
    pub poi: u32,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    /// Fixed local-time offset, minutes east of UTC.
    pub tz_offset_minutes: i32,
}

/// Calendar position of a check-in: weekly half-hour slot, month, year.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeKey {
    /// `day_of_week·48 + hour·2 + (minute ≥ 30)`, Monday = 0, so 0..=335.
    pub t_d: u16,
    /// 1..=12
    pub t_m: u8,
    pub t_y: i32,
}

/// Nested geohash cells of a coordinate at lengths 4, 5, 6.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LocationKey {
    pub g4: String,
    pub g5: String,
    pub g6: String,
}

impl LocationKey {
    pub fn from_coords(lat: f64, lon: f64) -> Result<Self> {
        let g6 = geohash_encode(lat, lon, 6)?;
        Ok(LocationKey {
            g4: g6[..4].to_string(),
            g5: g6[..5].to_string(),
            g6,
        })
    }
}

/// A POI with coordinates and nullable side information.
#[derive(Clone, Debug, PartialEq)]
pub struct PoiRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub cat1: Option<String>,
    pub cat2: Vec<String>,
    pub rating: Option<f64>,
    pub n_comments: Option<f64>,
    pub n_likes: Option<f64>,
    pub n_photos: Option<f64>,
    /// 1..=4 when present.
    pub price_tier: Option<u8>,
    pub contacts: Vec<String>,
}

impl PoiRecord {
    pub fn location(&self) -> Result<LocationKey> {
        LocationKey::from_coords(self.lat, self.lon)
    }

    pub fn validate(&self, path: &str, line: usize) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Malformed {
                path: path.to_string(),
                line,
                msg: format!("coordinate ({}, {}) out of range", self.lat, self.lon),
            });
        }
        if let Some(p) = self.price_tier {
            if !(1..=4).contains(&p) {
                return Err(Error::Malformed {
                    path: path.to_string(),
                    line,
                    msg: format!("price tier {p} outside 1..=4"),
                });
            }
        }
        for v in [self.rating, self.n_comments, self.n_likes, self.n_photos].into_iter().flatten() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Malformed {
                    path: path.to_string(),
                    line,
                    msg: format!("negative or non-finite statistic {v}"),
                });
            }
        }
        Ok(())
    }
}
