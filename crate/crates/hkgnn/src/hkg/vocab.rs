//! Entity and relation vocabularies. Entity ids are dense, deterministic, and
//! independent of which facts end up in the graph: users, POIs, every weekly
//! time slot, months, the dataset's year range, geohash cells of all POIs, and
//! all side-information values get ids up front.

use std::collections::HashMap;

use log::warn;

use crate::data::{time_partition, DatasetSplit, PoiRecord};
use crate::error::{Error, Result};

pub const N_RELATIONS: usize = 7;
pub const RELATION_NAMES: [&str; N_RELATIONS] =
    ["mobile", "social", "cat1", "cat2", "stats", "price", "contact"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum RelationId {
    Mobile = 0,
    Social = 1,
    Cat1 = 2,
    Cat2 = 3,
    Stats = 4,
    Price = 5,
    Contact = 6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StatKind {
    Rating,
    Comments,
    Likes,
    Photos,
}

pub const STAT_KINDS: [StatKind; 4] = [
    StatKind::Rating,
    StatKind::Comments,
    StatKind::Likes,
    StatKind::Photos,
];

/// Typed identity of one vocabulary entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKey {
    Pad,
    /// Dataset-local user index.
    User(u32),
    /// Dataset-local POI index.
    Poi(u32),
    Geo4(String),
    Geo5(String),
    Geo6(String),
    /// Weekly half-hour slot, 0..=335.
    TimeSlot(u16),
    /// 1..=12
    Month(u8),
    Year(i32),
    Cat1(String),
    Cat2(String),
    StatBin(StatKind, u8),
    /// Price tier 1..=4.
    Price(u8),
    Contact(String),
}

/// Bidirectional entity-key ↔ dense-id map. Id 0 is the pad entity; POIs,
/// time slots, months, and years occupy contiguous blocks.
#[derive(Clone, Debug)]
pub struct EntityVocab {
    keys: Vec<EntityKey>,
    by_key: HashMap<EntityKey, u32>,
    user_base: u32,
    retained_users: Vec<u32>,
    user_rank: HashMap<u32, u32>,
    poi_base: u32,
    n_pois: u32,
    tslot_base: u32,
    month_base: u32,
    year_base: u32,
    year_min: i32,
    year_max: i32,
}

impl EntityVocab {
    /// Users come from the retained split, years from every retained
    /// check-in's local calendar, everything else from the POI table. Fact
    /// membership (and in particular the train/test boundary) cannot move
    /// vocabulary ids.
    pub fn build(split: &DatasetSplit, pois: &[PoiRecord]) -> Result<EntityVocab> {
        let mut keys = vec![EntityKey::Pad];

        let user_base = keys.len() as u32;
        let retained_users: Vec<u32> = split.trajectories.iter().map(|t| t.user).collect();
        keys.extend(retained_users.iter().map(|&u| EntityKey::User(u)));

        let poi_base = keys.len() as u32;
        keys.extend((0..pois.len() as u32).map(EntityKey::Poi));

        let tslot_base = keys.len() as u32;
        keys.extend((0..336u16).map(EntityKey::TimeSlot));

        let month_base = keys.len() as u32;
        keys.extend((1..=12u8).map(EntityKey::Month));

        let (mut year_min, mut year_max) = (i32::MAX, i32::MIN);
        for t in &split.trajectories {
            for c in &t.checkins {
                let y = time_partition(c.timestamp, c.tz_offset_minutes).t_y;
                year_min = year_min.min(y);
                year_max = year_max.max(y);
            }
        }
        let year_base = keys.len() as u32;
        keys.extend((year_min..=year_max).map(EntityKey::Year));

        let mut g4: Vec<String> = Vec::new();
        let mut g5: Vec<String> = Vec::new();
        let mut g6: Vec<String> = Vec::new();
        let mut cat1: Vec<String> = Vec::new();
        let mut cat2: Vec<String> = Vec::new();
        let mut contacts: Vec<String> = Vec::new();
        for p in pois {
            let loc = p.location()?;
            g4.push(loc.g4);
            g5.push(loc.g5);
            g6.push(loc.g6);
            cat1.extend(p.cat1.clone());
            cat2.extend(p.cat2.iter().cloned());
            contacts.extend(p.contacts.iter().cloned());
        }
        for list in [&mut g4, &mut g5, &mut g6, &mut cat1, &mut cat2, &mut contacts] {
            list.sort();
            list.dedup();
        }
        keys.extend(g4.into_iter().map(EntityKey::Geo4));
        keys.extend(g5.into_iter().map(EntityKey::Geo5));
        keys.extend(g6.into_iter().map(EntityKey::Geo6));
        keys.extend(cat1.into_iter().map(EntityKey::Cat1));
        keys.extend(cat2.into_iter().map(EntityKey::Cat2));
        for kind in STAT_KINDS {
            keys.extend((0..=5u8).map(move |b| EntityKey::StatBin(kind, b)));
        }
        keys.extend((1..=4u8).map(EntityKey::Price));
        keys.extend(contacts.into_iter().map(EntityKey::Contact));

        let by_key: HashMap<EntityKey, u32> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i as u32))
            .collect();
        if by_key.len() != keys.len() {
            return Err(Error::Vocab("duplicate entity key".to_string()));
        }
        let user_rank = retained_users
            .iter()
            .enumerate()
            .map(|(r, &u)| (u, r as u32))
            .collect();
        Ok(EntityVocab {
            by_key,
            user_base,
            user_rank,
            poi_base,
            n_pois: pois.len() as u32,
            tslot_base,
            month_base,
            year_base,
            year_min,
            year_max,
            retained_users,
            keys,
        })
    }

    /// Rebuilds a vocabulary from a serialized key list, re-deriving every
    /// block offset. The list must follow the layout `build` produces: pad,
    /// users, POIs, time slots, months, a contiguous year range, then the
    /// unstructured tail.
    pub fn from_keys(keys: Vec<EntityKey>) -> Result<EntityVocab> {
        let fail = |msg: &str| Err(Error::Vocab(format!("key list: {msg}")));
        if keys.first() != Some(&EntityKey::Pad) {
            return fail("id 0 is not the pad entity");
        }
        let mut i = 1;
        let user_base = i as u32;
        let mut retained_users = Vec::new();
        while let Some(&EntityKey::User(u)) = keys.get(i) {
            retained_users.push(u);
            i += 1;
        }
        let poi_base = i as u32;
        let mut n_pois = 0u32;
        while keys.get(i) == Some(&EntityKey::Poi(n_pois)) {
            n_pois += 1;
            i += 1;
        }
        if matches!(keys.get(i), Some(EntityKey::Poi(_))) {
            return fail("POI block is out of order");
        }
        let tslot_base = i as u32;
        for t in 0..336u16 {
            if keys.get(i) != Some(&EntityKey::TimeSlot(t)) {
                return fail("time-slot block is not the full week in order");
            }
            i += 1;
        }
        let month_base = i as u32;
        for m in 1..=12u8 {
            if keys.get(i) != Some(&EntityKey::Month(m)) {
                return fail("month block is not 1..=12 in order");
            }
            i += 1;
        }
        let year_base = i as u32;
        let (mut year_min, mut year_max) = (0, 0);
        let mut any_year = false;
        while let Some(&EntityKey::Year(y)) = keys.get(i) {
            if !any_year {
                year_min = y;
            } else if y != year_max + 1 {
                return fail("year block is not contiguous");
            }
            any_year = true;
            year_max = y;
            i += 1;
        }
        if !any_year {
            return fail("missing year block");
        }
        let by_key: HashMap<EntityKey, u32> = keys
            .iter()
            .enumerate()
            .map(|(id, k)| (k.clone(), id as u32))
            .collect();
        if by_key.len() != keys.len() {
            return fail("duplicate entity key");
        }
        let user_rank = retained_users
            .iter()
            .enumerate()
            .map(|(r, &u)| (u, r as u32))
            .collect();
        Ok(EntityVocab {
            by_key,
            user_base,
            user_rank,
            poi_base,
            n_pois,
            tslot_base,
            month_base,
            year_base,
            year_min,
            year_max,
            retained_users,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn id(&self, key: &EntityKey) -> Option<u32> {
        self.by_key.get(key).copied()
    }

    pub fn key(&self, id: u32) -> Result<&EntityKey> {
        self.keys
            .get(id as usize)
            .ok_or_else(|| Error::Vocab(format!("entity id {id} out of range {}", self.keys.len())))
    }

    pub fn keys(&self) -> &[EntityKey] {
        &self.keys
    }

    pub fn n_pois(&self) -> u32 {
        self.n_pois
    }

    pub fn n_users(&self) -> u32 {
        self.retained_users.len() as u32
    }

    pub fn retained_users(&self) -> &[u32] {
        &self.retained_users
    }

    /// Entity id of a retained user, or None if the user was filtered out.
    pub fn user_id(&self, user: u32) -> Option<u32> {
        self.user_rank.get(&user).map(|r| self.user_base + r)
    }

    /// Entity id of a POI index; POIs form one contiguous block.
    pub fn poi_entity(&self, poi: u32) -> u32 {
        debug_assert!(poi < self.n_pois);
        self.poi_base + poi
    }

    pub fn poi_base(&self) -> u32 {
        self.poi_base
    }

    /// Reverse of `poi_entity` for ids inside the POI block.
    pub fn poi_of_entity(&self, id: u32) -> Option<u32> {
        (id >= self.poi_base && id < self.poi_base + self.n_pois).then(|| id - self.poi_base)
    }

    pub fn tslot_entity(&self, t_d: u16) -> u32 {
        debug_assert!(t_d < 336);
        self.tslot_base + t_d as u32
    }

    pub fn month_entity(&self, t_m: u8) -> u32 {
        debug_assert!((1..=12).contains(&t_m));
        self.month_base + (t_m - 1) as u32
    }

    /// Years outside the observed range clamp to the nearest known year so a
    /// query slightly beyond the data still resolves.
    pub fn year_entity(&self, t_y: i32) -> u32 {
        let clamped = t_y.clamp(self.year_min, self.year_max);
        if clamped != t_y {
            warn!("year {t_y} outside observed range {}..={}, clamped", self.year_min, self.year_max);
        }
        self.year_base + (clamped - self.year_min) as u32
    }

    /// FNV-1a over every key in id order; checkpoints refuse to load when
    /// this differs from the vocabulary they were trained against.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv::new();
        for key in &self.keys {
            hash_key(&mut h, key);
        }
        h.finish()
    }
}

/// FNV-1a 64-bit running hash.
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Fnv::new()
    }
}

fn hash_key(h: &mut Fnv, key: &EntityKey) {
    match key {
        EntityKey::Pad => h.write(&[0]),
        EntityKey::User(u) => {
            h.write(&[1]);
            h.write(&u.to_le_bytes());
        }
        EntityKey::Poi(p) => {
            h.write(&[2]);
            h.write(&p.to_le_bytes());
        }
        EntityKey::Geo4(s) => {
            h.write(&[3]);
            h.write(s.as_bytes());
        }
        EntityKey::Geo5(s) => {
            h.write(&[4]);
            h.write(s.as_bytes());
        }
        EntityKey::Geo6(s) => {
            h.write(&[5]);
            h.write(s.as_bytes());
        }
        EntityKey::TimeSlot(t) => {
            h.write(&[6]);
            h.write(&t.to_le_bytes());
        }
        EntityKey::Month(m) => {
            h.write(&[7]);
            h.write(&[*m]);
        }
        EntityKey::Year(y) => {
            h.write(&[8]);
            h.write(&y.to_le_bytes());
        }
        EntityKey::Cat1(s) => {
            h.write(&[9]);
            h.write(s.as_bytes());
        }
        EntityKey::Cat2(s) => {
            h.write(&[10]);
            h.write(s.as_bytes());
        }
        EntityKey::StatBin(kind, b) => {
            h.write(&[11, *kind as u8, *b]);
        }
        EntityKey::Price(p) => {
            h.write(&[12, *p]);
        }
        EntityKey::Contact(s) => {
            h.write(&[13]);
            h.write(s.as_bytes());
        }
    }
    // Separator so concatenated variable-length payloads cannot collide.
    h.write(&[0xff]);
}

impl StatKind {
    pub fn from_u8(v: u8) -> Result<StatKind> {
        Ok(match v {
            0 => StatKind::Rating,
            1 => StatKind::Comments,
            2 => StatKind::Likes,
            3 => StatKind::Photos,
            _ => return Err(Error::Vocab(format!("bad stat kind {v}"))),
        })
    }
}
