//! Trained-state persistence.
//!
//! A checkpoint bundles the run configuration, the hash of the entity
//! vocabulary it was trained against, and up to three model parts: the
//! embedding table (always present), the refinement stack, and the sequence
//! model. Loading verifies shapes and finiteness, and
//! [`load_checkpoint_expecting`] refuses to pair a checkpoint with a dataset
//! whose vocabulary hashes differently, since entity ids would then point at
//! the wrong rows.

use std::path::Path;

use crate::asm::{AsmModel, AttentionBlock, Sffn};
use crate::config::RunConfig;
use crate::container::{Reader, Writer};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::gnn::{GatLayer, GatStack};

const MAGIC: &[u8; 8] = b"HKGNNCKP";
const VERSION: u32 = 1;

const TAG_KG: &str = "kg-embeddings";
const TAG_HGNN: &str = "hgnn";
const TAG_ASM: &str = "asm";

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Hash of the vocabulary the ids in `table` index into.
    pub vocab_hash: u64,
    pub table: EmbeddingTable,
    pub stack: Option<GatStack>,
    pub model: Option<AsmModel>,
}

impl Checkpoint {
    /// Cross-checks the parts against each other and the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.table.validate()?;
        let d = self.table.d;
        if d != self.config.kg.d {
            return Err(Error::Checkpoint(format!(
                "table width {d} does not match configured kg.d {}",
                self.config.kg.d
            )));
        }
        if let Some(stack) = &self.stack {
            stack.validate(d)?;
            for layer in &stack.layers {
                layer.w.check_finite("refinement weight")?;
                layer.a.check_finite("refinement attention vector")?;
            }
        }
        if let Some(model) = &self.model {
            model.validate()?;
            if model.d != d {
                return Err(Error::Checkpoint(format!(
                    "sequence model width {} does not match table width {d}",
                    model.d
                )));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.validate()?;
    let mut w = Writer::create(path, MAGIC, VERSION)?;
    w.u64(ckpt.vocab_hash)?;
    w.str(&ckpt.config.to_toml_string())?;
    let n_parts = 1 + ckpt.stack.is_some() as u32 + ckpt.model.is_some() as u32;
    w.u32(n_parts)?;

    w.str(TAG_KG)?;
    w.u64(ckpt.table.d as u64)?;
    w.u64(ckpt.table.alpha as u64)?;
    w.tensor(&ckpt.table.entities)?;
    w.tensor(&ckpt.table.relations)?;

    if let Some(stack) = &ckpt.stack {
        w.str(TAG_HGNN)?;
        w.u64(stack.layers.len() as u64)?;
        for layer in &stack.layers {
            w.f64(layer.slope)?;
            w.tensor(&layer.w)?;
            w.tensor(&layer.a)?;
        }
    }

    if let Some(model) = &ckpt.model {
        w.str(TAG_ASM)?;
        w.u64(model.d as u64)?;
        w.u64(model.encoder.n_h as u64)?;
        w.f64(model.dropout)?;
        w.bool(model.scale_by_dk)?;
        for (_, tensor) in model.named() {
            w.tensor(tensor)?;
        }
    }
    w.finish()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::open(path, MAGIC, VERSION)?;
    let fail = |msg: String| Error::artifact(path.display().to_string(), msg);

    let vocab_hash = r.u64()?;
    let config = RunConfig::from_toml_str(&r.str()?)
        .map_err(|e| fail(format!("embedded config: {e}")))?;
    let n_parts = r.u32()?;
    if !(1..=3).contains(&n_parts) {
        return Err(fail(format!("{n_parts} parts, expected 1 to 3")));
    }

    r.expect_str(TAG_KG)?;
    let d = r.u64()? as usize;
    let alpha = r.u64()? as usize;
    let mut entities = r.tensor()?;
    let mut relations = r.tensor()?;
    entities.requires_grad = true;
    relations.requires_grad = true;
    let table = EmbeddingTable { entities, relations, d, alpha };

    let mut stack = None;
    let mut model = None;
    for _ in 1..n_parts {
        match r.str()?.as_str() {
            TAG_HGNN if stack.is_none() => {
                let n_layers = r.u64()? as usize;
                let mut layers = Vec::with_capacity(n_layers);
                for _ in 0..n_layers {
                    let slope = r.f64()?;
                    let w = r.tensor()?;
                    let a = r.tensor()?;
                    layers.push(GatLayer { w, a, slope });
                }
                stack = Some(GatStack { layers });
            }
            TAG_ASM if model.is_none() => {
                let d = r.u64()? as usize;
                let n_h = r.u64()? as usize;
                let dropout = r.f64()?;
                let scale_by_dk = r.bool()?;
                let sffn = |r: &mut Reader<_>| -> Result<Sffn> {
                    Ok(Sffn { w: r.tensor()?, b: r.tensor()? })
                };
                let sffn_in = sffn(&mut r)?;
                let block = |r: &mut Reader<_>| -> Result<AttentionBlock> {
                    Ok(AttentionBlock {
                        w_q: r.tensor()?,
                        w_k: r.tensor()?,
                        w_v: r.tensor()?,
                        w_o: r.tensor()?,
                        n_h,
                    })
                };
                let encoder = block(&mut r)?;
                let sffn_enc = sffn(&mut r)?;
                let sffn_time = sffn(&mut r)?;
                let decoder = block(&mut r)?;
                model = Some(AsmModel {
                    d,
                    sffn_in,
                    encoder,
                    sffn_enc,
                    sffn_time,
                    decoder,
                    dropout,
                    scale_by_dk,
                });
            }
            tag => return Err(fail(format!("unexpected part {tag:?}"))),
        }
    }
    r.end()?;

    let ckpt = Checkpoint { config, vocab_hash, table, stack, model };
    ckpt.validate()?;
    Ok(ckpt)
}

/// Loads and refuses checkpoints trained against a different vocabulary.
pub fn load_checkpoint_expecting(path: &Path, vocab_hash: u64) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.vocab_hash != vocab_hash {
        return Err(Error::Checkpoint(format!(
            "{} was trained against vocabulary {:016x} but the data hashes to {vocab_hash:016x}; \
             entity ids would not line up",
            path.display(),
            ckpt.vocab_hash
        )));
    }
    Ok(ckpt)
}
