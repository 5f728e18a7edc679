//! Fixed-shape batch assembly from variable-length sequence examples.
//!
//! Every history position carries eight entity ids: user, POI, the three
//! geohash cells, weekly time slot, month, year. Padded positions hold the
//! pad entity in all eight and are masked out.

use crate::data::{PoiRecord, SeqExample, TimeKey};
use crate::error::{Error, Result};
use crate::hkg::{EntityKey, EntityVocab};

pub const IDS_PER_POSITION: usize = 8;

/// Per-POI entity ids that do not depend on the visit: POI itself plus its
/// geohash cells at lengths 4, 5, 6.
#[derive(Clone, Debug)]
pub struct PoiContext {
    rows: Vec<[u32; 4]>,
}

impl PoiContext {
    pub fn build(vocab: &EntityVocab, pois: &[PoiRecord]) -> Result<PoiContext> {
        if pois.len() != vocab.n_pois() as usize {
            return Err(Error::Vocab(format!(
                "{} POI records against {} vocabulary slots",
                pois.len(),
                vocab.n_pois()
            )));
        }
        let mut rows = Vec::with_capacity(pois.len());
        for (p, rec) in pois.iter().enumerate() {
            let loc = rec.location()?;
            let lookup = |key: EntityKey| {
                vocab
                    .id(&key)
                    .ok_or_else(|| Error::Vocab(format!("POI {}: {key:?} missing", rec.id)))
            };
            rows.push([
                vocab.poi_entity(p as u32),
                lookup(EntityKey::Geo4(loc.g4))?,
                lookup(EntityKey::Geo5(loc.g5))?,
                lookup(EntityKey::Geo6(loc.g6))?,
            ]);
        }
        Ok(PoiContext { rows })
    }

    pub fn n_pois(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, poi: u32) -> &[u32; 4] {
        &self.rows[poi as usize]
    }

    /// Entity id of every candidate POI in dense order.
    pub fn poi_entities(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r[0]).collect()
    }
}

/// A batch of histories padded to a common length M.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckinBatch {
    pub b: usize,
    pub m: usize,
    /// b·m·8, position-major.
    pub entity_ids: Vec<u32>,
    /// b·m, true for real positions.
    pub mask: Vec<bool>,
    /// b, candidate-set index of the next POI (dense POI order).
    pub label_poi: Vec<u32>,
    /// b·3 entity ids: time slot, month, year of the next check-in.
    pub query_time: Vec<u32>,
}

impl CheckinBatch {
    pub fn validate(&self, n_pois: u32) -> Result<()> {
        if self.entity_ids.len() != self.b * self.m * IDS_PER_POSITION
            || self.mask.len() != self.b * self.m
            || self.label_poi.len() != self.b
            || self.query_time.len() != self.b * 3
        {
            return Err(Error::Invalid(format!(
                "inconsistent batch buffers for b={} m={}",
                self.b, self.m
            )));
        }
        for (pos, &live) in self.mask.iter().enumerate() {
            let ids = &self.entity_ids[pos * IDS_PER_POSITION..(pos + 1) * IDS_PER_POSITION];
            let all_pad = ids.iter().all(|&v| v == 0);
            if live && all_pad {
                return Err(Error::Invalid(format!("live position {pos} holds pad ids")));
            }
            if !live && !all_pad {
                return Err(Error::Invalid(format!("padded position {pos} holds real ids")));
            }
        }
        for (i, &label) in self.label_poi.iter().enumerate() {
            if label >= n_pois {
                return Err(Error::Invalid(format!(
                    "example {i}: label POI {label} out of {n_pois}"
                )));
            }
        }
        for row in self.mask.chunks(self.m) {
            if !row.iter().any(|&v| v) {
                return Err(Error::Invalid("example with empty history".to_string()));
            }
        }
        Ok(())
    }

    /// Padded-position flags, the complement of `mask`.
    pub fn pad_flags(&self) -> Vec<bool> {
        self.mask.iter().map(|&v| !v).collect()
    }
}

fn time_entities(vocab: &EntityVocab, t: &TimeKey) -> [u32; 3] {
    [
        vocab.tslot_entity(t.t_d),
        vocab.month_entity(t.t_m),
        vocab.year_entity(t.t_y),
    ]
}

/// Pack examples into one batch of length `m`, truncating longer histories
/// to their most recent `m` entries.
pub fn assemble_batch(
    examples: &[SeqExample],
    vocab: &EntityVocab,
    ctx: &PoiContext,
    m: usize,
) -> Result<CheckinBatch> {
    if examples.is_empty() || m == 0 {
        return Err(Error::Invalid("empty batch or zero sequence length".to_string()));
    }
    let b = examples.len();
    let mut entity_ids = vec![0u32; b * m * IDS_PER_POSITION];
    let mut mask = vec![false; b * m];
    let mut label_poi = Vec::with_capacity(b);
    let mut query_time = Vec::with_capacity(b * 3);
    for (i, ex) in examples.iter().enumerate() {
        let user = vocab
            .user_id(ex.user)
            .ok_or_else(|| Error::Vocab(format!("user {} not in vocabulary", ex.user)))?;
        let tail = &ex.history[ex.history.len().saturating_sub(m)..];
        if tail.is_empty() {
            return Err(Error::Invalid(format!("example {i} has no history")));
        }
        for (j, (poi, time)) in tail.iter().enumerate() {
            let pos = i * m + j;
            let [poi_ent, g4, g5, g6] = *ctx.row(*poi);
            let [t_d, t_m, t_y] = time_entities(vocab, time);
            entity_ids[pos * IDS_PER_POSITION..(pos + 1) * IDS_PER_POSITION]
                .copy_from_slice(&[user, poi_ent, g4, g5, g6, t_d, t_m, t_y]);
            mask[pos] = true;
        }
        label_poi.push(ex.label_poi);
        query_time.extend(time_entities(vocab, &ex.query_time));
    }
    let batch = CheckinBatch { b, m, entity_ids, mask, label_poi, query_time };
    batch.validate(vocab.n_pois())?;
    Ok(batch)
}
