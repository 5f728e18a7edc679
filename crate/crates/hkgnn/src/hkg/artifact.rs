//! Serialized graph artifact.
//!
//! Stores the entity vocabulary, the deduplicated fact list, and the
//! clique-expanded adjacency, plus the relation-family mask the facts were
//! built under. Training stages load this instead of re-deriving the graph,
//! and the stats command reads it to report entity and fact counts.

use std::io::{Read, Write as IoWrite};
use std::path::Path;

use crate::container::{Reader, Writer};
use crate::error::{Error, Result};
use crate::hkg::vocab::{EntityKey, EntityVocab, StatKind, N_RELATIONS, STAT_KINDS};
use crate::hkg::{CliqueAdjacency, Fact, FamilyMask, Hkg};

const MAGIC: &[u8; 8] = b"HKGGRAPH";
const VERSION: u32 = 1;

/// The constructed graph, ready for embedding and refinement.
#[derive(Clone, Debug)]
pub struct GraphArtifact {
    pub vocab: EntityVocab,
    pub hkg: Hkg,
    pub adjacency: CliqueAdjacency,
    /// Relation families the facts were built with.
    pub mask: FamilyMask,
}

impl GraphArtifact {
    pub fn validate(&self) -> Result<()> {
        let n = self.vocab.len();
        let fail = |msg: String| Err(Error::Invalid(format!("graph: {msg}")));
        for f in &self.hkg.facts {
            if f.relation as usize >= N_RELATIONS {
                return fail(format!("relation {} out of range", f.relation));
            }
            if f.entities.iter().any(|&e| e == 0 || e as usize >= n) {
                return fail(format!("fact references an entity outside 1..{n}"));
            }
        }
        let mut counts = [0usize; N_RELATIONS];
        for f in &self.hkg.facts {
            counts[f.relation as usize] += 1;
        }
        if counts != self.hkg.relation_counts {
            return fail("relation counts do not match the fact list".to_string());
        }
        let adj = &self.adjacency;
        if adj.n != n {
            return fail(format!("adjacency covers {} vertices, vocabulary has {n}", adj.n));
        }
        if adj.ptr.len() != n + 1 || adj.ptr[0] != 0 || *adj.ptr.last().unwrap() != adj.adj.len() {
            return fail("adjacency row pointers are inconsistent".to_string());
        }
        if !adj.ptr.windows(2).all(|w| w[0] <= w[1]) {
            return fail("adjacency row pointers decrease".to_string());
        }
        if adj.adj.iter().any(|&v| v as usize >= n) {
            return fail(format!("adjacency entry outside 0..{n}"));
        }
        Ok(())
    }
}

fn put_key(w: &mut Writer<impl IoWrite>, key: &EntityKey) -> Result<()> {
    match key {
        EntityKey::Pad => w.u8(0),
        EntityKey::User(u) => {
            w.u8(1)?;
            w.u32(*u)
        }
        EntityKey::Poi(p) => {
            w.u8(2)?;
            w.u32(*p)
        }
        EntityKey::Geo4(s) => {
            w.u8(3)?;
            w.str(s)
        }
        EntityKey::Geo5(s) => {
            w.u8(4)?;
            w.str(s)
        }
        EntityKey::Geo6(s) => {
            w.u8(5)?;
            w.str(s)
        }
        EntityKey::TimeSlot(t) => {
            w.u8(6)?;
            w.u32(*t as u32)
        }
        EntityKey::Month(m) => {
            w.u8(7)?;
            w.u8(*m)
        }
        EntityKey::Year(y) => {
            w.u8(8)?;
            w.i64(*y as i64)
        }
        EntityKey::Cat1(s) => {
            w.u8(9)?;
            w.str(s)
        }
        EntityKey::Cat2(s) => {
            w.u8(10)?;
            w.str(s)
        }
        EntityKey::StatBin(kind, bin) => {
            w.u8(11)?;
            let idx = STAT_KINDS.iter().position(|k| k == kind).expect("known stat kind");
            w.u8(idx as u8)?;
            w.u8(*bin)
        }
        EntityKey::Price(p) => {
            w.u8(12)?;
            w.u8(*p)
        }
        EntityKey::Contact(s) => {
            w.u8(13)?;
            w.str(s)
        }
    }
}

fn get_key(r: &mut Reader<impl Read>, path: &Path) -> Result<EntityKey> {
    let tag = r.u8()?;
    Ok(match tag {
        0 => EntityKey::Pad,
        1 => EntityKey::User(r.u32()?),
        2 => EntityKey::Poi(r.u32()?),
        3 => EntityKey::Geo4(r.str()?),
        4 => EntityKey::Geo5(r.str()?),
        5 => EntityKey::Geo6(r.str()?),
        6 => {
            let t = r.u32()?;
            let t = u16::try_from(t).map_err(|_| {
                Error::artifact(path.display().to_string(), format!("time slot {t} overflows"))
            })?;
            EntityKey::TimeSlot(t)
        }
        7 => EntityKey::Month(r.u8()?),
        8 => {
            let y = r.i64()?;
            let y = i32::try_from(y).map_err(|_| {
                Error::artifact(path.display().to_string(), format!("year {y} overflows"))
            })?;
            EntityKey::Year(y)
        }
        9 => EntityKey::Cat1(r.str()?),
        10 => EntityKey::Cat2(r.str()?),
        11 => {
            let idx = r.u8()? as usize;
            let kind: StatKind = *STAT_KINDS.get(idx).ok_or_else(|| {
                Error::artifact(path.display().to_string(), format!("stat kind {idx} unknown"))
            })?;
            EntityKey::StatBin(kind, r.u8()?)
        }
        12 => EntityKey::Price(r.u8()?),
        13 => EntityKey::Contact(r.str()?),
        t => {
            return Err(Error::artifact(
                path.display().to_string(),
                format!("entity key tag {t} unknown"),
            ))
        }
    })
}

pub fn save_graph(path: &Path, graph: &GraphArtifact) -> Result<()> {
    graph.validate()?;
    let mut w = Writer::create(path, MAGIC, VERSION)?;

    w.u64(graph.vocab.len() as u64)?;
    for key in graph.vocab.keys() {
        put_key(&mut w, key)?;
    }

    w.bool(graph.mask.mobility)?;
    w.bool(graph.mask.social)?;
    w.bool(graph.mask.side_info)?;

    w.u64(graph.hkg.facts.len() as u64)?;
    for f in &graph.hkg.facts {
        w.u8(f.relation)?;
        w.u32s(&f.entities)?;
    }
    w.u64(graph.hkg.truncated_facts as u64)?;
    w.u64(graph.hkg.skipped_friendships as u64)?;

    w.u64(graph.adjacency.n as u64)?;
    let ptr: Vec<u64> = graph.adjacency.ptr.iter().map(|&p| p as u64).collect();
    w.u64s(&ptr)?;
    w.u32s(&graph.adjacency.adj)?;
    w.finish()
}

pub fn load_graph(path: &Path) -> Result<GraphArtifact> {
    let mut r = Reader::open(path, MAGIC, VERSION)?;

    let n_keys = r.u64()? as usize;
    let mut keys = Vec::with_capacity(n_keys.min(1 << 20));
    for _ in 0..n_keys {
        keys.push(get_key(&mut r, path)?);
    }
    let vocab = EntityVocab::from_keys(keys)?;

    let mask = FamilyMask { mobility: r.bool()?, social: r.bool()?, side_info: r.bool()? };

    let n_facts = r.u64()? as usize;
    let mut facts = Vec::with_capacity(n_facts.min(1 << 20));
    for _ in 0..n_facts {
        let relation = r.u8()?;
        let entities = r.u32s()?;
        facts.push(Fact { relation, entities });
    }
    let truncated_facts = r.u64()? as usize;
    let skipped_friendships = r.u64()? as usize;
    let mut relation_counts = [0usize; N_RELATIONS];
    for f in &facts {
        let slot = relation_counts.get_mut(f.relation as usize).ok_or_else(|| {
            Error::artifact(path.display().to_string(), format!("relation {} unknown", f.relation))
        })?;
        *slot += 1;
    }
    let hkg = Hkg { facts, relation_counts, truncated_facts, skipped_friendships };

    let n = r.u64()? as usize;
    let ptr: Vec<usize> = r.u64s()?.into_iter().map(|p| p as usize).collect();
    let adj = r.u32s()?;
    r.end()?;

    let graph =
        GraphArtifact { vocab, hkg, adjacency: CliqueAdjacency { n, ptr, adj }, mask };
    graph.validate()?;
    Ok(graph)
}
