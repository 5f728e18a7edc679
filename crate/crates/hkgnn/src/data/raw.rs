//! Raw file ingestion. Three inputs: check-ins (TSV), POIs (CSV), and
//! friendships (TSV), each with a header row. Parsing is strict about shape
//! (errors carry line numbers) but follows documented drop policies for
//! cross-file references.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::DateTime;
use log::warn;

use crate::data::{Checkin, PoiRecord};
use crate::error::{Error, Result};

/// Parsed dataset with users and POIs interned to dense indices.
#[derive(Clone, Debug, Default)]
pub struct RawDataset {
    /// Raw user ids; index is the dataset-local user index.
    pub users: Vec<String>,
    pub pois: Vec<PoiRecord>,
    /// File order preserved; per-user chronological order is NOT implied.
    pub checkins: Vec<Checkin>,
    /// Deduplicated undirected edges as (low, high) user-index pairs.
    pub friendships: Vec<(u32, u32)>,
    pub dropped_unknown_poi: usize,
    pub dropped_unknown_friend_user: usize,
    pub dropped_self_friendship: usize,
}

impl RawDataset {
    pub fn poi_index(&self) -> HashMap<&str, u32> {
        self.pois
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.as_str(), i as u32))
            .collect()
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn check_header(path: &Path, got: &str, want: &[&str]) -> Result<()> {
    let fields: Vec<&str> = got.trim_end_matches(['\r', '\n']).split('\t').collect();
    if fields != want {
        return Err(malformed(
            path,
            1,
            format!("header {:?}, expected {:?}", fields, want),
        ));
    }
    Ok(())
}

pub fn load_dataset(
    checkins_path: &Path,
    pois_path: &Path,
    friendships_path: &Path,
) -> Result<RawDataset> {
    let mut ds = RawDataset::default();

    // POIs first so check-ins can resolve against them.
    load_pois(pois_path, &mut ds)?;
    let poi_idx: HashMap<String, u32> = ds
        .pois
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.clone(), i as u32))
        .collect();

    let mut user_idx: HashMap<String, u32> = HashMap::new();
    let reader = open(checkins_path)?;
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(checkins_path, 1, "empty file"))?;
    let header = header.map_err(|e| Error::io(checkins_path.display().to_string(), e))?;
    check_header(checkins_path, &header, &["user_id", "poi_id", "timestamp", "tz_offset_minutes"])?;

    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(checkins_path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(malformed(
                checkins_path,
                line_no,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let ts = DateTime::parse_from_rfc3339(fields[2])
            .map_err(|e| malformed(checkins_path, line_no, format!("bad timestamp {:?}: {e}", fields[2])))?
            .timestamp();
        let tz: i32 = fields[3]
            .parse()
            .map_err(|_| malformed(checkins_path, line_no, format!("bad tz offset {:?}", fields[3])))?;
        if tz.abs() > 14 * 60 {
            return Err(malformed(checkins_path, line_no, format!("tz offset {tz} out of range")));
        }
        let Some(&poi) = poi_idx.get(fields[1]) else {
            ds.dropped_unknown_poi += 1;
            continue;
        };
        let next = user_idx.len() as u32;
        let user = *user_idx.entry(fields[0].to_string()).or_insert(next);
        if user == next {
            ds.users.push(fields[0].to_string());
        }
        ds.checkins.push(Checkin {
            user,
            poi,
            timestamp: ts,
            tz_offset_minutes: tz,
        });
    }
    if ds.dropped_unknown_poi > 0 {
        warn!(
            "dropped {} check-ins referencing unknown POIs",
            ds.dropped_unknown_poi
        );
    }

    load_friendships(friendships_path, &user_idx, &mut ds)?;
    Ok(ds)
}

fn load_pois(path: &Path, ds: &mut RawDataset) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let want = [
        "poi_id", "lat", "lon", "cat1", "cat2", "rating", "n_comments", "n_likes", "n_photos",
        "price_tier", "contacts",
    ];
    {
        let got = reader
            .headers()
            .map_err(|e| malformed(path, 1, e.to_string()))?;
        let got: Vec<&str> = got.iter().collect();
        if got != want {
            return Err(malformed(path, 1, format!("header {:?}, expected {:?}", got, want)));
        }
    }
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != want.len() {
            return Err(malformed(
                path,
                line,
                format!("expected {} fields, got {}", want.len(), record.len()),
            ));
        }
        let field = |k: usize| record.get(k).unwrap_or("").trim();
        let req_f64 = |k: usize, name: &str| -> Result<f64> {
            field(k)
                .parse()
                .map_err(|_| malformed(path, line, format!("bad {name} {:?}", field(k))))
        };
        let opt_f64 = |k: usize, name: &str| -> Result<Option<f64>> {
            if field(k).is_empty() {
                Ok(None)
            } else {
                req_f64(k, name).map(Some)
            }
        };
        let list = |k: usize| -> Vec<String> {
            field(k)
                .split('|')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(malformed(path, line, "empty poi_id"));
        }
        if !seen.insert(id.clone()) {
            return Err(malformed(path, line, format!("duplicate poi_id {id:?}")));
        }
        let price_tier = if field(9).is_empty() {
            None
        } else {
            Some(
                field(9)
                    .parse::<u8>()
                    .map_err(|_| malformed(path, line, format!("bad price_tier {:?}", field(9))))?,
            )
        };
        let poi = PoiRecord {
            id,
            lat: req_f64(1, "lat")?,
            lon: req_f64(2, "lon")?,
            cat1: (!field(3).is_empty()).then(|| field(3).to_string()),
            cat2: list(4),
            rating: opt_f64(5, "rating")?,
            n_comments: opt_f64(6, "n_comments")?,
            n_likes: opt_f64(7, "n_likes")?,
            n_photos: opt_f64(8, "n_photos")?,
            price_tier,
            contacts: list(10),
        };
        poi.validate(&path.display().to_string(), line)?;
        ds.pois.push(poi);
    }
    Ok(())
}

fn load_friendships(path: &Path, user_idx: &HashMap<String, u32>, ds: &mut RawDataset) -> Result<()> {
    let reader = open(path)?;
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(path, 1, "empty file"))?;
    let header = header.map_err(|e| Error::io(path.display().to_string(), e))?;
    check_header(path, &header, &["user_a", "user_b"])?;

    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(malformed(
                path,
                line_no,
                format!("expected 2 tab-separated fields, got {}", fields.len()),
            ));
        }
        let (Some(&a), Some(&b)) = (user_idx.get(fields[0]), user_idx.get(fields[1])) else {
            ds.dropped_unknown_friend_user += 1;
            continue;
        };
        if a == b {
            ds.dropped_self_friendship += 1;
            continue;
        }
        edges.insert((a.min(b), a.max(b)));
    }
    if ds.dropped_unknown_friend_user > 0 {
        warn!(
            "dropped {} friendship rows referencing users absent from the check-in file",
            ds.dropped_unknown_friend_user
        );
    }
    if ds.dropped_self_friendship > 0 {
        warn!("dropped {} self-friendship rows", ds.dropped_self_friendship);
    }
    ds.friendships = edges.into_iter().collect();
    Ok(())
}
