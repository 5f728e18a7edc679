//! Preprocessed-dataset archive.
//!
//! The prepare stage parses and splits the raw files once, then writes
//! everything later stages need: retained trajectories with their split
//! boundaries, the least-visited POI set, the full POI table, friendships,
//! and the raw user ids. Training and evaluation read this archive instead
//! of ever touching the raw files again, so one parse serves every run.

use std::path::Path;

use crate::container::{Reader, Writer};
use crate::data::{Checkin, DatasetSplit, PoiRecord, UserTrajectory};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HKGSPLIT";
const VERSION: u32 = 1;

/// A parsed, split dataset; the unit the prepare stage hands downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub split: DatasetSplit,
    /// Indexed by the dense POI ids the trajectories use.
    pub pois: Vec<PoiRecord>,
    /// Deduplicated low-high user index pairs.
    pub friendships: Vec<(u32, u32)>,
    /// Raw user ids, indexed by dense user index.
    pub users: Vec<String>,
}

impl Archive {
    /// Referential integrity between the four parts.
    pub fn validate(&self) -> Result<()> {
        let n_pois = self.pois.len() as u32;
        let n_users = self.users.len() as u32;
        let fail = |msg: String| Err(Error::Invalid(format!("archive: {msg}")));

        let lf = self.split.least_fraction;
        if !(0.0..=1.0).contains(&lf) {
            return fail(format!("least fraction {lf} outside [0, 1]"));
        }
        if !self.split.least_visited.windows(2).all(|w| w[0] < w[1]) {
            return fail("least-visited set is not strictly ascending".to_string());
        }
        if let Some(&p) = self.split.least_visited.last() {
            if p >= n_pois {
                return fail(format!("least-visited poi {p} outside 0..{n_pois}"));
            }
        }
        let mut prev_user = None;
        for t in &self.split.trajectories {
            if prev_user.is_some_and(|u| u >= t.user) {
                return fail("trajectories are not in ascending user order".to_string());
            }
            prev_user = Some(t.user);
            if t.user >= n_users {
                return fail(format!("trajectory user {} outside 0..{n_users}", t.user));
            }
            if t.n_train == 0 || t.n_train + t.n_val > t.checkins.len() {
                return fail(format!(
                    "user {}: split {}+{} does not fit {} check-ins",
                    t.user,
                    t.n_train,
                    t.n_val,
                    t.checkins.len()
                ));
            }
            let mut prev_ts = i64::MIN;
            for c in &t.checkins {
                if c.user != t.user {
                    return fail(format!("user {} trajectory holds a check-in by {}", t.user, c.user));
                }
                if c.poi >= n_pois {
                    return fail(format!("check-in poi {} outside 0..{n_pois}", c.poi));
                }
                if c.timestamp < prev_ts {
                    return fail(format!("user {}: check-ins not chronological", t.user));
                }
                prev_ts = c.timestamp;
            }
        }
        for &(a, b) in &self.friendships {
            if a >= b || b >= n_users {
                return fail(format!("friendship ({a}, {b}) is not an ordered pair below {n_users}"));
            }
        }
        Ok(())
    }
}

fn put_opt_f64(w: &mut Writer<impl std::io::Write>, v: Option<f64>) -> Result<()> {
    w.bool(v.is_some())?;
    match v {
        Some(x) => w.f64(x),
        None => Ok(()),
    }
}

fn put_opt_str(w: &mut Writer<impl std::io::Write>, v: &Option<String>) -> Result<()> {
    w.bool(v.is_some())?;
    match v {
        Some(s) => w.str(s),
        None => Ok(()),
    }
}

pub fn save_archive(path: &Path, archive: &Archive) -> Result<()> {
    archive.validate()?;
    let mut w = Writer::create(path, MAGIC, VERSION)?;
    w.strs(&archive.users)?;

    w.u64(archive.pois.len() as u64)?;
    for p in &archive.pois {
        w.str(&p.id)?;
        w.f64(p.lat)?;
        w.f64(p.lon)?;
        put_opt_str(&mut w, &p.cat1)?;
        w.strs(&p.cat2)?;
        put_opt_f64(&mut w, p.rating)?;
        put_opt_f64(&mut w, p.n_comments)?;
        put_opt_f64(&mut w, p.n_likes)?;
        put_opt_f64(&mut w, p.n_photos)?;
        w.u8(p.price_tier.unwrap_or(0))?;
        w.strs(&p.contacts)?;
    }

    w.u64(archive.friendships.len() as u64)?;
    for &(a, b) in &archive.friendships {
        w.u32(a)?;
        w.u32(b)?;
    }

    w.f64(archive.split.least_fraction)?;
    w.u64(archive.split.removed_users as u64)?;
    w.u32s(&archive.split.least_visited)?;
    w.u64(archive.split.trajectories.len() as u64)?;
    for t in &archive.split.trajectories {
        w.u32(t.user)?;
        w.u64(t.n_train as u64)?;
        w.u64(t.n_val as u64)?;
        w.u64(t.checkins.len() as u64)?;
        for c in &t.checkins {
            w.u32(c.poi)?;
            w.i64(c.timestamp)?;
            w.i64(c.tz_offset_minutes as i64)?;
        }
    }
    w.finish()
}

pub fn load_archive(path: &Path) -> Result<Archive> {
    let mut r = Reader::open(path, MAGIC, VERSION)?;
    let users = r.strs()?;

    let n_pois = r.u64()? as usize;
    let mut pois = Vec::with_capacity(n_pois.min(1 << 20));
    for _ in 0..n_pois {
        let id = r.str()?;
        let lat = r.f64()?;
        let lon = r.f64()?;
        let cat1 = if r.bool()? { Some(r.str()?) } else { None };
        let cat2 = r.strs()?;
        let rating = if r.bool()? { Some(r.f64()?) } else { None };
        let n_comments = if r.bool()? { Some(r.f64()?) } else { None };
        let n_likes = if r.bool()? { Some(r.f64()?) } else { None };
        let n_photos = if r.bool()? { Some(r.f64()?) } else { None };
        let price = r.u8()?;
        let contacts = r.strs()?;
        pois.push(PoiRecord {
            id,
            lat,
            lon,
            cat1,
            cat2,
            rating,
            n_comments,
            n_likes,
            n_photos,
            price_tier: (price != 0).then_some(price),
            contacts,
        });
    }

    let n_friend = r.u64()? as usize;
    let mut friendships = Vec::with_capacity(n_friend.min(1 << 20));
    for _ in 0..n_friend {
        let a = r.u32()?;
        let b = r.u32()?;
        friendships.push((a, b));
    }

    let least_fraction = r.f64()?;
    let removed_users = r.u64()? as usize;
    let least_visited = r.u32s()?;
    let n_traj = r.u64()? as usize;
    let mut trajectories = Vec::with_capacity(n_traj.min(1 << 20));
    for _ in 0..n_traj {
        let user = r.u32()?;
        let n_train = r.u64()? as usize;
        let n_val = r.u64()? as usize;
        let n_checkins = r.u64()? as usize;
        let mut checkins = Vec::with_capacity(n_checkins.min(1 << 20));
        for _ in 0..n_checkins {
            let poi = r.u32()?;
            let timestamp = r.i64()?;
            let tz = r.i64()?;
            let tz_offset_minutes = i32::try_from(tz).map_err(|_| {
                Error::artifact(path.display().to_string(), format!("timezone offset {tz} overflows"))
            })?;
            checkins.push(Checkin { user, poi, timestamp, tz_offset_minutes });
        }
        trajectories.push(UserTrajectory { user, checkins, n_train, n_val });
    }
    r.end()?;

    let archive = Archive {
        split: DatasetSplit { trajectories, least_visited, least_fraction, removed_users },
        pois,
        friendships,
        users,
    };
    archive.validate()?;
    Ok(archive)
}
