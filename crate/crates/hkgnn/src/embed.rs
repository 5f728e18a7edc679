//! HSimplE n-ary fact scoring and the embedding training stage. A fact is
//! scored by rotating each entity vector according to its slot, taking the
//! elementwise product together with the relation vector, and summing; the
//! loss pushes true facts above sampled corruptions.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hkg::{Fact, N_RELATIONS};
use crate::optim::{Adam, ParamSet};
use crate::tape::{NodeId, Tape};
use crate::tensor::{init_params, InitScheme, Tensor};

pub const ENTITY_PARAM: &str = "kg.entities";
pub const RELATION_PARAM: &str = "kg.relations";

/// Entity and relation vectors. Entity row 0 is the pad slot and stays zero
/// through training.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    /// |E|×d
    pub entities: Tensor,
    /// One row per relation.
    pub relations: Tensor,
    pub d: usize,
    /// Max fact arity; slot offsets are multiples of d/alpha.
    pub alpha: usize,
}

impl EmbeddingTable {
    pub fn new_random(n_entities: usize, d: usize, alpha: usize, rng: &mut impl Rng) -> Result<Self> {
        check_dims(d, alpha)?;
        let mut entities = init_params(&[n_entities, d], InitScheme::GlorotUniform, rng);
        entities.data_mut()[..d].fill(0.0);
        entities.requires_grad = true;
        let mut relations = init_params(&[N_RELATIONS, d], InitScheme::GlorotUniform, rng);
        relations.requires_grad = true;
        let table = EmbeddingTable { entities, relations, d, alpha };
        table.validate()?;
        Ok(table)
    }

    pub fn n_entities(&self) -> usize {
        self.entities.rows()
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.d, self.alpha)?;
        if self.entities.cols() != self.d || self.relations.cols() != self.d {
            return Err(Error::Invalid(format!(
                "table column counts {}/{} do not match d={}",
                self.entities.cols(),
                self.relations.cols(),
                self.d
            )));
        }
        if self.entities.rows() < 2 {
            return Err(Error::Invalid("entity table needs pad plus at least one entity".to_string()));
        }
        if self.entities.data()[..self.d].iter().any(|&v| v != 0.0) {
            return Err(Error::Invalid("pad entity row must be zero".to_string()));
        }
        self.entities.check_finite("entity table")?;
        self.relations.check_finite("relation table")?;
        Ok(())
    }
}

fn check_dims(d: usize, alpha: usize) -> Result<()> {
    if d == 0 || alpha < 2 {
        return Err(Error::Invalid(format!("need d > 0 and alpha >= 2, got d={d} alpha={alpha}")));
    }
    if d % alpha != 0 {
        return Err(Error::Invalid(format!("d={d} must be divisible by alpha={alpha}")));
    }
    Ok(())
}

/// Circular left rotation: out[i] = v[(i+x) mod d].
pub fn shift(v: &[f64], x: usize) -> Vec<f64> {
    debug_assert!(x < v.len());
    let d = v.len();
    (0..d).map(|i| v[(i + x) % d]).collect()
}

fn check_fact(fact: &Fact, n_entities: usize, alpha: usize) -> Result<()> {
    let k = fact.arity();
    if k < 2 || k > alpha {
        return Err(Error::Invalid(format!("fact arity {k} outside 2..={alpha}")));
    }
    for &e in &fact.entities {
        if e == 0 || e as usize >= n_entities {
            return Err(Error::Invalid(format!(
                "fact entity {e} outside 1..{n_entities} (0 is the pad slot)"
            )));
        }
    }
    if fact.relation as usize >= N_RELATIONS {
        return Err(Error::Invalid(format!("relation {} out of range", fact.relation)));
    }
    Ok(())
}

/// Score of one fact, computed directly on the table.
pub fn hsimple_score(table: &EmbeddingTable, fact: &Fact) -> Result<f64> {
    check_fact(fact, table.n_entities(), table.alpha)?;
    let d = table.d;
    let step = d / table.alpha;
    let mut acc: Vec<f64> = table.relations.row(fact.relation as usize).to_vec();
    for (j, &e) in fact.entities.iter().enumerate() {
        let row = table.entities.row(e as usize);
        let off = step * j;
        for (c, a) in acc.iter_mut().enumerate() {
            *a *= row[(c + off) % d];
        }
    }
    Ok(acc.iter().sum())
}

/// For each slot, `n` uniformly sampled replacement ids, never the pad and
/// never the id already in that slot.
pub fn sample_slot_negatives(
    fact: &Fact,
    n: usize,
    n_entities: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<u32>>> {
    check_fact(fact, n_entities, fact.arity().max(2))?;
    if n > 0 && n_entities < 3 {
        return Err(Error::Invalid(
            "sampling a replacement needs at least two non-pad entities".to_string(),
        ));
    }
    Ok(fact
        .entities
        .iter()
        .map(|&orig| {
            (0..n)
                .map(|_| {
                    let v = rng.gen_range(1..n_entities as u32 - 1);
                    if v >= orig {
                        v + 1
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect())
}

/// Corrupted copies of `fact`, slot-major: the first `n` replace slot 0,
/// the next `n` slot 1, and so on. Exactly n·arity facts.
pub fn negative_samples(
    fact: &Fact,
    n: usize,
    n_entities: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Fact>> {
    let slots = sample_slot_negatives(fact, n, n_entities, rng)?;
    let mut out = Vec::with_capacity(n * fact.arity());
    for (j, ids) in slots.iter().enumerate() {
        for &id in ids {
            let mut f = fact.clone();
            f.entities[j] = id;
            out.push(f);
        }
    }
    Ok(out)
}

pub fn sample_batch_negatives(
    batch: &[Fact],
    n: usize,
    n_entities: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Vec<u32>>>> {
    batch.iter().map(|f| sample_slot_negatives(f, n, n_entities, rng)).collect()
}

/// Tape node for the summed batch loss
/// Σ −log(e^φ(x) / (e^φ(x) + Σ_neg e^φ(x'))), stabilized as
/// Σ log(1 + Σ_neg e^{φ(x')−φ(x)}).
///
/// Facts are grouped by (relation, arity); within a group, each slot's
/// negatives reuse the product of the other slots' rotated vectors, so the
/// per-negative work is one gather, one rotation, and one elementwise product.
pub fn kg_batch_loss(
    tape: &mut Tape,
    entities: NodeId,
    relations: NodeId,
    alpha: usize,
    batch: &[Fact],
    negatives: &[Vec<Vec<u32>>],
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty fact batch".to_string()));
    }
    if negatives.len() != batch.len() {
        return Err(Error::Invalid(format!(
            "{} negative lists for {} facts",
            negatives.len(),
            batch.len()
        )));
    }
    let (n_entities, d) = tape.dims(entities);
    check_dims(d, alpha)?;
    let step = d / alpha;

    let nneg = negatives[0].first().map_or(0, Vec::len);
    let mut groups: BTreeMap<(u8, usize), Vec<usize>> = BTreeMap::new();
    for (i, fact) in batch.iter().enumerate() {
        check_fact(fact, n_entities, alpha)?;
        if negatives[i].len() != fact.arity() || negatives[i].iter().any(|s| s.len() != nneg) {
            return Err(Error::Invalid(format!(
                "fact {i}: negatives must cover every slot with {nneg} samples each"
            )));
        }
        groups.entry((fact.relation, fact.arity())).or_default().push(i);
    }

    let mut group_losses = Vec::new();
    for ((relation, k), idxs) in groups {
        let n = idxs.len();
        let rel_rows = tape.gather(relations, &vec![relation as usize; n])?;

        let mut rotated = Vec::with_capacity(k);
        for j in 0..k {
            let ids: Vec<usize> = idxs.iter().map(|&f| batch[f].entities[j] as usize).collect();
            let g = tape.gather(entities, &ids)?;
            rotated.push(if j == 0 { g } else { tape.rotate_cols(g, step * j)? });
        }

        // prefix[j] multiplies slots before j, suffix[j] the slots after it.
        let mut prefix: Vec<Option<NodeId>> = Vec::with_capacity(k);
        let mut acc: Option<NodeId> = None;
        for &r in &rotated {
            prefix.push(acc);
            acc = Some(match acc {
                None => r,
                Some(a) => tape.mul(a, r)?,
            });
        }
        let all_slots = acc.expect("arity >= 2");
        let mut suffix: Vec<Option<NodeId>> = vec![None; k];
        let mut acc: Option<NodeId> = None;
        for j in (0..k).rev() {
            suffix[j] = acc;
            acc = Some(match acc {
                None => rotated[j],
                Some(a) => tape.mul(a, rotated[j])?,
            });
        }

        let pos_prod = tape.mul(all_slots, rel_rows)?;
        let pos = tape.sum_rows(pos_prod)?;

        if nneg == 0 {
            continue;
        }
        let mut slot_scores = Vec::with_capacity(k);
        for j in 0..k {
            let others = match (prefix[j], suffix[j]) {
                (Some(p), Some(s)) => tape.mul(p, s)?,
                (Some(p), None) => p,
                (None, Some(s)) => s,
                (None, None) => unreachable!("arity >= 2"),
            };
            let shared = tape.mul(others, rel_rows)?;
            let shared_rep = tape.repeat_interleave_rows(shared, nneg)?;
            let ids: Vec<usize> = idxs
                .iter()
                .flat_map(|&f| negatives[f][j].iter().map(|&e| e as usize))
                .collect();
            let g = tape.gather(entities, &ids)?;
            let gr = if j == 0 { g } else { tape.rotate_cols(g, step * j)? };
            let prod = tape.mul(gr, shared_rep)?;
            let scores = tape.sum_rows(prod)?;
            slot_scores.push(tape.reshape(scores, n, nneg)?);
        }
        let negs = tape.concat_cols(&slot_scores)?;
        let neg_pos = tape.scale(pos, -1.0)?;
        let diff = tape.add_col_broadcast(negs, neg_pos)?;
        let per_fact = tape.softplus_lse_rows(diff)?;
        group_losses.push(tape.sum_all(per_fact)?);
    }

    match group_losses.split_first() {
        None => Ok(tape.constant_scalar(0.0)),
        Some((&first, rest)) => {
            let mut total = first;
            for &g in rest {
                total = tape.add(total, g)?;
            }
            Ok(total)
        }
    }
}

/// Summed batch loss evaluated on a fixed table, sampling fresh negatives.
pub fn kg_loss(
    batch: &[Fact],
    table: &EmbeddingTable,
    n_negatives: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let negatives = sample_batch_negatives(batch, n_negatives, table.n_entities(), rng)?;
    let mut tape = Tape::new();
    let e = tape.leaf_tensor(&table.entities, false)?;
    let r = tape.leaf_tensor(&table.relations, false)?;
    let root = kg_batch_loss(&mut tape, e, r, table.alpha, batch, &negatives)?;
    Ok(tape.scalar_value(root))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KgConfig {
    pub d: usize,
    pub alpha: usize,
    pub n_negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for KgConfig {
    fn default() -> Self {
        KgConfig { d: 256, alpha: 8, n_negatives: 10, epochs: 100, lr: 0.01, batch_size: 512 }
    }
}

#[derive(Debug)]
pub struct KgTrainOutcome {
    pub table: EmbeddingTable,
    /// Mean per-fact loss by epoch.
    pub epoch_losses: Vec<f64>,
    /// Epoch whose loss went non-finite; the returned table is then the state
    /// after the last completed epoch.
    pub diverged_at: Option<usize>,
}

pub fn train_kg(
    facts: &[Fact],
    n_entities: usize,
    cfg: &KgConfig,
    rng: &mut impl Rng,
) -> Result<KgTrainOutcome> {
    if facts.is_empty() {
        return Err(Error::Invalid("no facts to train on".to_string()));
    }
    check_dims(cfg.d, cfg.alpha)?;
    if cfg.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".to_string()));
    }
    for f in facts {
        check_fact(f, n_entities, cfg.alpha)?;
    }

    let mut params = ParamSet::new();
    let mut entities = init_params(&[n_entities, cfg.d], InitScheme::GlorotUniform, rng);
    entities.data_mut()[..cfg.d].fill(0.0);
    let ent_idx = params.add(ENTITY_PARAM, entities, true)?;
    let relations = init_params(&[N_RELATIONS, cfg.d], InitScheme::GlorotUniform, rng);
    let rel_idx = params.add(RELATION_PARAM, relations, false)?;
    let mut adam = Adam::new(cfg.lr);

    let table_from = |params: &ParamSet| EmbeddingTable {
        entities: params.get(ent_idx).value.clone(),
        relations: params.get(rel_idx).value.clone(),
        d: cfg.d,
        alpha: cfg.alpha,
    };

    let mut snapshot = table_from(&params);
    let mut order: Vec<usize> = (0..facts.len()).collect();
    let mut epoch_losses = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut failure: Option<Error> = None;
        'batches: for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Fact> = chunk.iter().map(|&i| facts[i].clone()).collect();
            let negatives = sample_batch_negatives(&batch, cfg.n_negatives, n_entities, rng)?;
            let outcome = (|| {
                let mut tape = Tape::new();
                let leaves = params.leaves(&mut tape)?;
                let sum_loss = kg_batch_loss(
                    &mut tape,
                    leaves[ent_idx],
                    leaves[rel_idx],
                    cfg.alpha,
                    &batch,
                    &negatives,
                )?;
                let value = tape.scalar_value(sum_loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("batch loss {value}")));
                }
                let root = tape.scale(sum_loss, 1.0 / batch.len() as f64)?;
                let grads = tape.backward(root)?;
                params.absorb(&grads, &leaves);
                Ok(value)
            })();
            match outcome {
                Ok(value) => total += value,
                Err(e) => {
                    failure = Some(e);
                    break 'batches;
                }
            }
            if let Err(e) = adam.step(&mut params) {
                failure = Some(e);
                break 'batches;
            }
        }
        if let Some(e) = failure {
            warn!("embedding training diverged at epoch {epoch} ({e}); keeping last completed epoch");
            return Ok(KgTrainOutcome { table: snapshot, epoch_losses, diverged_at: Some(epoch) });
        }
        let mean = total / facts.len() as f64;
        epoch_losses.push(mean);
        info!("kg epoch {epoch}: mean fact loss {mean:.6}");
        snapshot = table_from(&params);
    }
    Ok(KgTrainOutcome { table: snapshot, epoch_losses, diverged_at: None })
}
