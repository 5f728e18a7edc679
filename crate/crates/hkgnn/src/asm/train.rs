//! Supervised training of the sequence model on next-POI labels, with the
//! refinement layers and entity table updated jointly unless frozen, plus
//! eval-mode scoring and top-k recommendation.

use log::info;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::asm::batch::{assemble_batch, CheckinBatch, PoiContext};
use crate::asm::model::{model_forward, poi_loss, AsmModel, Mode};
use crate::data::{build_sequences, time_partition, DatasetSplit, SeqExample, SplitPart, TimeKey};
use crate::embed::{EmbeddingTable, ENTITY_PARAM};
use crate::error::{Error, Result};
use crate::gnn::{refine, refine_table, GatStack};
use crate::hkg::{CliqueAdjacency, EntityVocab};
use crate::optim::{Adam, ParamSet};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AsmConfig {
    pub d: usize,
    pub n_h: usize,
    /// History length M.
    pub m: usize,
    pub dropout: f64,
    /// Weight of the squared-norm regularizer.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Scale attention logits by 1/√d_k instead of 1/√d.
    pub scale_by_dk: bool,
    pub gat_layers: usize,
    pub gat_slope: f64,
    /// Refine once per run instead of inside every step; the entity table
    /// and attention layers stay frozen at their pretrained values.
    pub refine_per_epoch: bool,
    /// Stop once the running train accuracy reaches this value; the final
    /// epoch's parameters are then returned instead of the best-validation
    /// snapshot.
    pub early_stop_train_acc: Option<f64>,
}

impl Default for AsmConfig {
    fn default() -> Self {
        AsmConfig {
            d: 256,
            n_h: 4,
            m: 100,
            dropout: 0.2,
            lambda: 1e-4,
            lr: 1e-5,
            epochs: 50,
            batch_size: 32,
            scale_by_dk: false,
            gat_layers: 2,
            gat_slope: 0.2,
            refine_per_epoch: false,
            early_stop_train_acc: None,
        }
    }
}

impl AsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_h == 0 || self.d % self.n_h != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide d={}",
                self.n_h, self.d
            )));
        }
        if self.m == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "M, batch size, and epochs must be positive".to_string(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("bad regularization weight {}", self.lambda)));
        }
        if let Some(t) = self.early_stop_train_acc {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("early-stop accuracy {t} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_acc1: f64,
    pub val_acc1: Option<f64>,
}

/// Trained artifacts plus the per-epoch record. `best_epoch` names the
/// epoch whose parameters were kept.
#[derive(Clone, Debug)]
pub struct AsmTrainOutcome {
    pub model: AsmModel,
    pub stack: GatStack,
    pub table: EmbeddingTable,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode matching scores, row-major b×|P|.
pub fn eval_scores(
    batch: &CheckinBatch,
    model: &AsmModel,
    h2: &Tensor,
    poi_entities: &[u32],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let h2n = tape.leaf_tensor(h2, false)?;
    let nodes = model.leaf_nodes(&mut tape)?;
    let scores = model_forward(&mut tape, batch, h2n, &nodes, model, poi_entities, &mut Mode::Eval)?;
    Ok(tape.value(scores).to_vec())
}

fn accuracy_at_1(
    examples: &[SeqExample],
    vocab: &EntityVocab,
    ctx: &PoiContext,
    model: &AsmModel,
    h2: &Tensor,
    poi_entities: &[u32],
    m: usize,
    batch_size: usize,
) -> Result<f64> {
    let mut hit = 0usize;
    for chunk in examples.chunks(batch_size) {
        let batch = assemble_batch(chunk, vocab, ctx, m)?;
        let scores = eval_scores(&batch, model, h2, poi_entities)?;
        let n = poi_entities.len();
        for (i, &label) in batch.label_poi.iter().enumerate() {
            if argmax(&scores[i * n..(i + 1) * n]) == label as usize {
                hit += 1;
            }
        }
    }
    Ok(hit as f64 / examples.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    params: &mut ParamSet,
    stack: &GatStack,
    model: &AsmModel,
    frozen_h2: Option<&Tensor>,
    adj: &CliqueAdjacency,
    batch: &CheckinBatch,
    labels: &[usize],
    poi_entities: &[u32],
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let leaves = params.leaves(&mut tape)?;
    let h2 = match frozen_h2 {
        Some(t) => tape.leaf_tensor(t, false)?,
        None => {
            let ent = leaves[params.index_of(ENTITY_PARAM).expect("entity table registered")];
            let layers = stack.node_ids(params, &leaves)?;
            refine(&mut tape, ent, &layers, adj)?
        }
    };
    let nodes = model.node_ids(params, &leaves)?;
    let mut mode = Mode::Train { rng };
    let scores = model_forward(&mut tape, batch, h2, &nodes, model, poi_entities, &mut mode)?;
    let score_vals = tape.value(scores).to_vec();
    let loss = poi_loss(&mut tape, scores, labels, &leaves, lambda)?;
    let loss_val = tape.scalar_value(loss);
    let grads = tape.backward(loss)?;
    params.zero_grads();
    params.absorb(&grads, &leaves);
    Ok((loss_val, score_vals))
}

fn current_artifacts(
    params: &ParamSet,
    frozen_upstream: bool,
    pretrained: &EmbeddingTable,
    stack: &GatStack,
    model: &AsmModel,
) -> Result<(EmbeddingTable, GatStack, AsmModel)> {
    let table = if frozen_upstream {
        pretrained.clone()
    } else {
        EmbeddingTable {
            entities: params
                .by_name(ENTITY_PARAM)
                .ok_or_else(|| Error::Invalid("entity table missing from parameters".to_string()))?
                .value
                .clone(),
            relations: pretrained.relations.clone(),
            d: pretrained.d,
            alpha: pretrained.alpha,
        }
    };
    let mut s = stack.clone();
    if !frozen_upstream {
        s.load_from_params(params)?;
    }
    let mut m = model.clone();
    m.load_from_params(params)?;
    Ok((table, s, m))
}

/// Train on every history/label pair of the train part, scoring validation
/// accuracy each epoch. Divergence aborts with the failing epoch in the
/// message.
pub fn train_model(
    split: &DatasetSplit,
    vocab: &EntityVocab,
    ctx: &PoiContext,
    adj: &CliqueAdjacency,
    pretrained: &EmbeddingTable,
    cfg: &AsmConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AsmTrainOutcome> {
    cfg.validate()?;
    pretrained.validate()?;
    if pretrained.d != cfg.d {
        return Err(Error::Config(format!(
            "pretrained dimension {} does not match configured d={}",
            pretrained.d, cfg.d
        )));
    }
    if pretrained.n_entities() != vocab.len() || adj.n != vocab.len() {
        return Err(Error::Config(format!(
            "table {} rows, adjacency {} vertices, vocabulary {} entities",
            pretrained.n_entities(),
            adj.n,
            vocab.len()
        )));
    }
    let poi_entities = ctx.poi_entities();
    let train_ex = build_sequences(split, cfg.m, SplitPart::Train)?;
    if train_ex.is_empty() {
        return Err(Error::Train("no training examples".to_string()));
    }
    let val_ex = build_sequences(split, cfg.m, SplitPart::Val)?;

    let model = AsmModel::new_random(cfg.d, cfg.n_h, cfg.dropout, cfg.scale_by_dk, rng)?;
    let stack = GatStack::new_random(cfg.d, cfg.gat_layers, cfg.gat_slope, rng);

    let mut params = ParamSet::new();
    if !cfg.refine_per_epoch {
        params.add(ENTITY_PARAM, pretrained.entities.clone(), true)?;
        stack.add_to_params(&mut params)?;
    }
    model.add_to_params(&mut params)?;
    let mut adam = Adam::new(cfg.lr);

    // With the upstream frozen there is nothing to recompute between
    // epochs, so one refinement serves the whole run.
    let frozen_h2 = if cfg.refine_per_epoch {
        Some(refine_table(&pretrained.entities, &stack, adj)?.h2)
    } else {
        None
    };

    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, (EmbeddingTable, GatStack, AsmModel))> = None;
    let mut last: Option<(usize, (EmbeddingTable, GatStack, AsmModel))> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut hit = 0usize;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let examples: Vec<SeqExample> = chunk.iter().map(|&i| train_ex[i].clone()).collect();
            let batch = assemble_batch(&examples, vocab, ctx, cfg.m)?;
            let labels: Vec<usize> = batch.label_poi.iter().map(|&v| v as usize).collect();
            let (loss_val, score_vals) = train_step(
                &mut params,
                &stack,
                &model,
                frozen_h2.as_ref(),
                adj,
                &batch,
                &labels,
                &poi_entities,
                cfg.lambda,
                rng,
            )
            .map_err(|e| Error::Train(format!("diverged at epoch {epoch}: {e}")))?;
            adam.step(&mut params)?;
            let n = poi_entities.len();
            for (i, &label) in labels.iter().enumerate() {
                if argmax(&score_vals[i * n..(i + 1) * n]) == label {
                    hit += 1;
                }
            }
            loss_sum += loss_val * batch.b as f64;
            seen += batch.b;
        }
        let train_loss = loss_sum / seen as f64;
        let train_acc1 = hit as f64 / seen as f64;

        let artifacts =
            current_artifacts(&params, cfg.refine_per_epoch, pretrained, &stack, &model)?;
        let val_acc1 = if val_ex.is_empty() {
            None
        } else {
            let h2 = match &frozen_h2 {
                Some(t) => t.clone(),
                None => refine_table(&artifacts.0.entities, &artifacts.1, adj)?.h2,
            };
            Some(accuracy_at_1(
                &val_ex,
                vocab,
                ctx,
                &artifacts.2,
                &h2,
                &poi_entities,
                cfg.m,
                cfg.batch_size,
            )?)
        };
        match val_acc1 {
            Some(v) => info!(
                "asm epoch {epoch}: loss {train_loss:.6} train acc@1 {train_acc1:.4} val acc@1 {v:.4}"
            ),
            None => info!("asm epoch {epoch}: loss {train_loss:.6} train acc@1 {train_acc1:.4}"),
        }
        epochs.push(EpochStats { train_loss, train_acc1, val_acc1 });

        let metric = val_acc1.unwrap_or(train_acc1);
        if best.as_ref().map_or(true, |(m, _, _)| metric > *m) {
            best = Some((metric, epoch, artifacts.clone()));
        }
        last = Some((epoch, artifacts));
        if let Some(threshold) = cfg.early_stop_train_acc {
            if train_acc1 >= threshold {
                info!("asm early stop at epoch {epoch}: train acc@1 {train_acc1:.4}");
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, (table, stack, model)) = if stopped_early {
        last.expect("at least one epoch ran")
    } else {
        let (_, e, a) = best.expect("at least one epoch ran");
        (e, a)
    };
    Ok(AsmTrainOutcome { model, stack, table, epochs, best_epoch, stopped_early })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recommendation {
    pub poi: u32,
    pub score: f64,
}

/// Top-k next-POI list for a user at a query time, scored over every
/// candidate with the user's most recent history. Ties break toward the
/// lower POI id; k is clipped to the candidate count.
#[allow(clippy::too_many_arguments)]
pub fn recommend(
    split: &DatasetSplit,
    vocab: &EntityVocab,
    ctx: &PoiContext,
    model: &AsmModel,
    h2: &Tensor,
    user: u32,
    query_time: TimeKey,
    k: usize,
    m: usize,
) -> Result<Vec<Recommendation>> {
    let traj = split
        .trajectories
        .iter()
        .find(|t| t.user == user)
        .ok_or_else(|| Error::Vocab(format!("unknown user {user}")))?;
    if traj.checkins.is_empty() {
        return Err(Error::Invalid(format!("user {user} has no history")));
    }
    let from = traj.checkins.len().saturating_sub(m);
    let history: Vec<(u32, TimeKey)> = traj.checkins[from..]
        .iter()
        .map(|c| (c.poi, time_partition(c.timestamp, c.tz_offset_minutes)))
        .collect();
    let example = SeqExample { user, history, label_poi: 0, query_time };
    let batch = assemble_batch(&[example], vocab, ctx, m)?;
    let scores = eval_scores(&batch, model, h2, &ctx.poi_entities())?;
    let mut ranked: Vec<Recommendation> = scores
        .iter()
        .enumerate()
        .map(|(poi, &score)| Recommendation { poi: poi as u32, score })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.poi.cmp(&b.poi)));
    ranked.truncate(k.min(ranked.len()));
    Ok(ranked)
}
