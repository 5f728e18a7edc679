//! Fact extraction from the split dataset. Only training check-ins produce
//! mobility facts; side information and friendships are time-independent and
//! enter regardless of the split.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use crate::data::{time_partition, BinnedSideInfo, DatasetSplit, PoiRecord};
use crate::error::{Error, Result};
use crate::hkg::vocab::{EntityKey, EntityVocab, RelationId, N_RELATIONS, STAT_KINDS};
use crate::hkg::Fact;

/// Largest fact arity; the arity-8 mobility tuple sets the bound, and longer
/// category/contact lists are truncated to fit it.
pub const MAX_ARITY: usize = 8;

/// Relation families that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FamilyMask {
    pub mobility: bool,
    pub social: bool,
    pub side_info: bool,
}

impl Default for FamilyMask {
    fn default() -> Self {
        FamilyMask { mobility: true, social: true, side_info: true }
    }
}

impl FamilyMask {
    pub fn label(&self) -> String {
        let mut off = Vec::new();
        if !self.mobility {
            off.push("mobility");
        }
        if !self.social {
            off.push("social");
        }
        if !self.side_info {
            off.push("side-info");
        }
        if off.is_empty() {
            "full".to_string()
        } else {
            format!("without {}", off.join("+"))
        }
    }
}

/// Deduplicated fact set with per-relation counts.
#[derive(Clone, Debug)]
pub struct Hkg {
    /// Sorted by (relation, entities); duplicates removed.
    pub facts: Vec<Fact>,
    pub relation_counts: [usize; N_RELATIONS],
    /// Facts that lost values to the arity cap.
    pub truncated_facts: usize,
    /// Friendship pairs skipped because one side was filtered out.
    pub skipped_friendships: usize,
}

impl Hkg {
    pub fn n_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn facts_of(&self, relation: RelationId) -> impl Iterator<Item = &Fact> {
        let r = relation as u8;
        self.facts.iter().filter(move |f| f.relation == r)
    }
}

pub fn build_hkg(
    split: &DatasetSplit,
    pois: &[PoiRecord],
    bins: &[BinnedSideInfo],
    friendships: &[(u32, u32)],
    vocab: &EntityVocab,
    mask: FamilyMask,
) -> Result<Hkg> {
    if bins.len() != pois.len() {
        return Err(Error::Invalid(format!(
            "binned side info rows {} do not match {} POIs",
            bins.len(),
            pois.len()
        )));
    }
    let mut set: BTreeSet<Fact> = BTreeSet::new();
    let mut truncated_facts = 0usize;
    let mut skipped_friendships = 0usize;

    if mask.mobility {
        let geo_ids = poi_geo_ids(pois, vocab)?;
        for t in &split.trajectories {
            let user = vocab
                .user_id(t.user)
                .ok_or_else(|| Error::Vocab(format!("retained user {} missing from vocab", t.user)))?;
            for c in t.train() {
                let tk = time_partition(c.timestamp, c.tz_offset_minutes);
                let (g4, g5, g6) = geo_ids[c.poi as usize];
                set.insert(Fact {
                    relation: RelationId::Mobile as u8,
                    entities: vec![
                        user,
                        vocab.poi_entity(c.poi),
                        g4,
                        g5,
                        g6,
                        vocab.tslot_entity(tk.t_d),
                        vocab.month_entity(tk.t_m),
                        vocab.year_entity(tk.t_y),
                    ],
                });
            }
        }
    }

    if mask.social {
        for &(a, b) in friendships {
            match (vocab.user_id(a), vocab.user_id(b)) {
                (Some(ua), Some(ub)) => {
                    set.insert(Fact { relation: RelationId::Social as u8, entities: vec![ua, ub] });
                }
                _ => skipped_friendships += 1,
            }
        }
        if skipped_friendships > 0 {
            warn!("{skipped_friendships} friendship pairs referenced filtered-out users");
        }
    }

    if mask.side_info {
        let cat2_freq = value_counts(pois.iter().flat_map(|p| p.cat2.iter()));
        let contact_freq = value_counts(pois.iter().flat_map(|p| p.contacts.iter()));
        for (poi, (p, b)) in pois.iter().zip(bins).enumerate() {
            let p_ent = vocab.poi_entity(poi as u32);
            if let Some(c1) = &p.cat1 {
                let id = lookup(vocab, &EntityKey::Cat1(c1.clone()))?;
                set.insert(Fact { relation: RelationId::Cat1 as u8, entities: vec![p_ent, id] });
            }
            if !p.cat2.is_empty() {
                let (vals, cut) = capped_values(&p.cat2, &cat2_freq);
                if cut {
                    truncated_facts += 1;
                    warn!("poi {} lists {} fine categories, keeping {}", p.id, p.cat2.len(), vals.len());
                }
                let mut entities = vec![p_ent];
                for v in vals {
                    entities.push(lookup(vocab, &EntityKey::Cat2(v.clone()))?);
                }
                set.insert(Fact { relation: RelationId::Cat2 as u8, entities });
            }
            let mut stat_entities = vec![p_ent];
            for (kind, bin) in STAT_KINDS.into_iter().zip(stat_bins(b)) {
                if let Some(bin) = bin {
                    stat_entities.push(lookup(vocab, &EntityKey::StatBin(kind, bin))?);
                }
            }
            if stat_entities.len() >= 2 {
                set.insert(Fact { relation: RelationId::Stats as u8, entities: stat_entities });
            }
            if let Some(price) = p.price_tier {
                let id = lookup(vocab, &EntityKey::Price(price))?;
                set.insert(Fact { relation: RelationId::Price as u8, entities: vec![p_ent, id] });
            }
            if !p.contacts.is_empty() {
                let (vals, cut) = capped_values(&p.contacts, &contact_freq);
                if cut {
                    truncated_facts += 1;
                    warn!("poi {} lists {} contact types, keeping {}", p.id, p.contacts.len(), vals.len());
                }
                let mut entities = vec![p_ent];
                for v in vals {
                    entities.push(lookup(vocab, &EntityKey::Contact(v.clone()))?);
                }
                set.insert(Fact { relation: RelationId::Contact as u8, entities });
            }
        }
    }

    let facts: Vec<Fact> = set.into_iter().collect();
    let mut relation_counts = [0usize; N_RELATIONS];
    for f in &facts {
        if f.arity() < 2 || f.arity() > MAX_ARITY {
            return Err(Error::Invalid(format!(
                "fact of relation {} has arity {}, outside 2..={MAX_ARITY}",
                f.relation,
                f.arity()
            )));
        }
        relation_counts[f.relation as usize] += 1;
    }
    Ok(Hkg { facts, relation_counts, truncated_facts, skipped_friendships })
}

fn lookup(vocab: &EntityVocab, key: &EntityKey) -> Result<u32> {
    vocab
        .id(key)
        .ok_or_else(|| Error::Vocab(format!("entity {key:?} missing from vocab")))
}

fn poi_geo_ids(pois: &[PoiRecord], vocab: &EntityVocab) -> Result<Vec<(u32, u32, u32)>> {
    pois.iter()
        .map(|p| {
            let loc = p.location()?;
            Ok((
                lookup(vocab, &EntityKey::Geo4(loc.g4))?,
                lookup(vocab, &EntityKey::Geo5(loc.g5))?,
                lookup(vocab, &EntityKey::Geo6(loc.g6))?,
            ))
        })
        .collect()
}

fn stat_bins(b: &BinnedSideInfo) -> [Option<u8>; 4] {
    [b.rating, b.n_comments, b.n_likes, b.n_photos]
}

fn value_counts<'a>(values: impl Iterator<Item = &'a String>) -> BTreeMap<&'a String, usize> {
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    counts
}

/// First-occurrence-deduplicated values, capped at `MAX_ARITY - 1`. When over
/// the cap, keeps the values most frequent across the whole POI table (ties
/// favor the lexically smaller value) and preserves record order among the
/// survivors.
fn capped_values<'a>(
    values: &'a [String],
    freq: &BTreeMap<&String, usize>,
) -> (Vec<&'a String>, bool) {
    let mut seen = BTreeSet::new();
    let mut distinct: Vec<&String> = Vec::new();
    for v in values {
        if seen.insert(v) {
            distinct.push(v);
        }
    }
    let cap = MAX_ARITY - 1;
    if distinct.len() <= cap {
        return (distinct, false);
    }
    let mut ranked = distinct.clone();
    ranked.sort_by_key(|v| (std::cmp::Reverse(freq.get(v).copied().unwrap_or(0)), (*v).clone()));
    let keep: BTreeSet<&String> = ranked.into_iter().take(cap).collect();
    (distinct.into_iter().filter(|v| keep.contains(v)).collect(), true)
}
