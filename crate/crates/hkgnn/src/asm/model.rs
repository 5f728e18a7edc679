//! Model parameters and tape-level forward passes: check-in encoding, the
//! self-attention encoder over histories, time-conditioned candidate
//! encoding, the candidate-to-history cross-attention decoder, matching
//! scores, and the regularized cross-entropy objective.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::asm::batch::{CheckinBatch, IDS_PER_POSITION};
use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tape::{NodeId, Tape};
use crate::tensor::{init_params, InitScheme, Tensor};

/// Single-layer feed-forward network: ReLU(xW + b).
#[derive(Clone, Debug)]
pub struct Sffn {
    /// in×out
    pub w: Tensor,
    /// 1×out
    pub b: Tensor,
}

impl Sffn {
    pub fn new_random(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Sffn {
        Sffn {
            w: init_params(&[d_in, d_out], InitScheme::GlorotUniform, rng),
            b: Tensor::new(vec![1, d_out], vec![0.0; d_out]).expect("bias shape"),
        }
    }

    pub fn validate(&self, d_in: usize, d_out: usize) -> Result<()> {
        if self.w.rows() != d_in
            || self.w.cols() != d_out
            || self.b.rows() != 1
            || self.b.cols() != d_out
        {
            return Err(Error::Invalid(format!(
                "feed-forward shapes {}×{} and {}×{} do not map {d_in} to {d_out}",
                self.w.rows(),
                self.w.cols(),
                self.b.rows(),
                self.b.cols()
            )));
        }
        Ok(())
    }
}

/// Multi-head attention projections; head h uses column slice
/// h·d_k..(h+1)·d_k of each projection, d_k = d/N_h.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub n_h: usize,
}

impl AttentionBlock {
    pub fn new_random(d: usize, n_h: usize, rng: &mut impl Rng) -> AttentionBlock {
        AttentionBlock {
            w_q: init_params(&[d, d], InitScheme::GlorotUniform, rng),
            w_k: init_params(&[d, d], InitScheme::GlorotUniform, rng),
            w_v: init_params(&[d, d], InitScheme::GlorotUniform, rng),
            w_o: init_params(&[d, d], InitScheme::GlorotUniform, rng),
            n_h,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_h == 0 || d % self.n_h != 0 {
            return Err(Error::Invalid(format!("{} heads do not divide d={d}", self.n_h)));
        }
        for (name, t) in [
            ("W_Q", &self.w_q),
            ("W_K", &self.w_k),
            ("W_V", &self.w_v),
            ("W_O", &self.w_o),
        ] {
            if t.rows() != d || t.cols() != d {
                return Err(Error::Invalid(format!(
                    "{name} is {}×{}, want {d}×{d}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        Ok(())
    }
}

/// Train or eval behavior of a forward pass. Train mode draws dropout masks
/// from the given generator; eval mode skips dropout entirely.
pub enum Mode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

fn apply_dropout(tape: &mut Tape, x: NodeId, p: f64, mode: &mut Mode) -> Result<NodeId> {
    match mode {
        Mode::Train { rng } if p > 0.0 => tape.dropout(x, p, &mut **rng),
        _ => Ok(x),
    }
}

/// The full parameter set of the sequence model.
#[derive(Clone, Debug)]
pub struct AsmModel {
    pub d: usize,
    /// 8d → d over the concatenated per-position entity embeddings.
    pub sffn_in: Sffn,
    pub encoder: AttentionBlock,
    /// d → d after the encoder attention.
    pub sffn_enc: Sffn,
    /// 4d → d over [POI ‖ slot ‖ month ‖ year] for each candidate.
    pub sffn_time: Sffn,
    pub decoder: AttentionBlock,
    pub dropout: f64,
    /// Scale attention logits by 1/√d_k instead of 1/√d.
    pub scale_by_dk: bool,
}

const SFFN_IN: [&str; 2] = ["asm.sffn_in.w", "asm.sffn_in.b"];
const SFFN_ENC: [&str; 2] = ["asm.sffn_enc.w", "asm.sffn_enc.b"];
const SFFN_TIME: [&str; 2] = ["asm.sffn_time.w", "asm.sffn_time.b"];
const ENC: [&str; 4] = ["asm.enc.wq", "asm.enc.wk", "asm.enc.wv", "asm.enc.wo"];
const DEC: [&str; 4] = ["asm.dec.wq", "asm.dec.wk", "asm.dec.wv", "asm.dec.wo"];

impl AsmModel {
    pub fn new_random(
        d: usize,
        n_h: usize,
        dropout: f64,
        scale_by_dk: bool,
        rng: &mut impl Rng,
    ) -> Result<AsmModel> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Invalid(format!("dropout {dropout} outside [0,1)")));
        }
        let model = AsmModel {
            d,
            sffn_in: Sffn::new_random(IDS_PER_POSITION * d, d, rng),
            encoder: AttentionBlock::new_random(d, n_h, rng),
            sffn_enc: Sffn::new_random(d, d, rng),
            sffn_time: Sffn::new_random(4 * d, d, rng),
            decoder: AttentionBlock::new_random(d, n_h, rng),
            dropout,
            scale_by_dk,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.sffn_in.validate(IDS_PER_POSITION * self.d, self.d)?;
        self.encoder.validate(self.d)?;
        self.sffn_enc.validate(self.d, self.d)?;
        self.sffn_time.validate(4 * self.d, self.d)?;
        self.decoder.validate(self.d)?;
        Ok(())
    }

    /// Denominator dimension for the logit scale.
    pub fn scale_dim(&self) -> usize {
        if self.scale_by_dk {
            self.d / self.encoder.n_h
        } else {
            self.d
        }
    }

    /// Parameter tensors paired with their canonical names, in the same
    /// order as [`AsmModel::param_names`].
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            (SFFN_IN[0], &self.sffn_in.w),
            (SFFN_IN[1], &self.sffn_in.b),
            (ENC[0], &self.encoder.w_q),
            (ENC[1], &self.encoder.w_k),
            (ENC[2], &self.encoder.w_v),
            (ENC[3], &self.encoder.w_o),
            (SFFN_ENC[0], &self.sffn_enc.w),
            (SFFN_ENC[1], &self.sffn_enc.b),
            (SFFN_TIME[0], &self.sffn_time.w),
            (SFFN_TIME[1], &self.sffn_time.b),
            (DEC[0], &self.decoder.w_q),
            (DEC[1], &self.decoder.w_k),
            (DEC[2], &self.decoder.w_v),
            (DEC[3], &self.decoder.w_o),
        ]
    }

    pub fn param_names() -> Vec<&'static str> {
        let mut names = Vec::new();
        names.extend(SFFN_IN);
        names.extend(ENC);
        names.extend(SFFN_ENC);
        names.extend(SFFN_TIME);
        names.extend(DEC);
        names
    }

    pub fn add_to_params(&self, params: &mut ParamSet) -> Result<()> {
        for (name, t) in self.named() {
            params.add(name, t.clone(), false)?;
        }
        Ok(())
    }

    /// Tape nodes for this model's parameters, resolved through a ParamSet.
    pub fn node_ids(&self, params: &ParamSet, leaves: &[NodeId]) -> Result<AsmNodes> {
        let find = |name: &str| {
            params
                .index_of(name)
                .map(|i| leaves[i])
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
        };
        Ok(AsmNodes {
            sffn_in: SffnNodes { w: find(SFFN_IN[0])?, b: find(SFFN_IN[1])? },
            encoder: BlockNodes {
                w_q: find(ENC[0])?,
                w_k: find(ENC[1])?,
                w_v: find(ENC[2])?,
                w_o: find(ENC[3])?,
            },
            sffn_enc: SffnNodes { w: find(SFFN_ENC[0])?, b: find(SFFN_ENC[1])? },
            sffn_time: SffnNodes { w: find(SFFN_TIME[0])?, b: find(SFFN_TIME[1])? },
            decoder: BlockNodes {
                w_q: find(DEC[0])?,
                w_k: find(DEC[1])?,
                w_v: find(DEC[2])?,
                w_o: find(DEC[3])?,
            },
        })
    }

    /// Constant leaves for an eval-only forward on a fresh tape.
    pub fn leaf_nodes(&self, tape: &mut Tape) -> Result<AsmNodes> {
        let mut leaf = |t: &Tensor| tape.leaf_tensor(t, false);
        Ok(AsmNodes {
            sffn_in: SffnNodes { w: leaf(&self.sffn_in.w)?, b: leaf(&self.sffn_in.b)? },
            encoder: BlockNodes {
                w_q: leaf(&self.encoder.w_q)?,
                w_k: leaf(&self.encoder.w_k)?,
                w_v: leaf(&self.encoder.w_v)?,
                w_o: leaf(&self.encoder.w_o)?,
            },
            sffn_enc: SffnNodes { w: leaf(&self.sffn_enc.w)?, b: leaf(&self.sffn_enc.b)? },
            sffn_time: SffnNodes { w: leaf(&self.sffn_time.w)?, b: leaf(&self.sffn_time.b)? },
            decoder: BlockNodes {
                w_q: leaf(&self.decoder.w_q)?,
                w_k: leaf(&self.decoder.w_k)?,
                w_v: leaf(&self.decoder.w_v)?,
                w_o: leaf(&self.decoder.w_o)?,
            },
        })
    }

    pub fn load_from_params(&mut self, params: &ParamSet) -> Result<()> {
        let get = |name: &str| {
            params
                .by_name(name)
                .map(|p| p.value.clone())
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
        };
        self.sffn_in = Sffn { w: get(SFFN_IN[0])?, b: get(SFFN_IN[1])? };
        self.encoder = AttentionBlock {
            w_q: get(ENC[0])?,
            w_k: get(ENC[1])?,
            w_v: get(ENC[2])?,
            w_o: get(ENC[3])?,
            n_h: self.encoder.n_h,
        };
        self.sffn_enc = Sffn { w: get(SFFN_ENC[0])?, b: get(SFFN_ENC[1])? };
        self.sffn_time = Sffn { w: get(SFFN_TIME[0])?, b: get(SFFN_TIME[1])? };
        self.decoder = AttentionBlock {
            w_q: get(DEC[0])?,
            w_k: get(DEC[1])?,
            w_v: get(DEC[2])?,
            w_o: get(DEC[3])?,
            n_h: self.decoder.n_h,
        };
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SffnNodes {
    pub w: NodeId,
    pub b: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockNodes {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
    pub w_o: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct AsmNodes {
    pub sffn_in: SffnNodes,
    pub encoder: BlockNodes,
    pub sffn_enc: SffnNodes,
    pub sffn_time: SffnNodes,
    pub decoder: BlockNodes,
}

pub fn sffn_forward(tape: &mut Tape, x: NodeId, sffn: SffnNodes) -> Result<NodeId> {
    let lin = tape.matmul(x, sffn.w)?;
    let biased = tape.add_bias(lin, sffn.b)?;
    tape.relu(biased)
}

/// Per-position check-in representation: gather the eight entity rows,
/// concatenate to 8d, map through the input network, zero the padding.
pub fn encode_checkins(
    tape: &mut Tape,
    batch: &CheckinBatch,
    h2: NodeId,
    sffn_in: SffnNodes,
) -> Result<NodeId> {
    let positions = batch.b * batch.m;
    let mut parts = Vec::with_capacity(IDS_PER_POSITION);
    for j in 0..IDS_PER_POSITION {
        let idx: Vec<usize> = (0..positions)
            .map(|pos| batch.entity_ids[pos * IDS_PER_POSITION + j] as usize)
            .collect();
        parts.push(tape.gather(h2, &idx)?);
    }
    let concat = tape.concat_cols(&parts)?;
    let c = sffn_forward(tape, concat, sffn_in)?;
    tape.zero_rows(c, &batch.pad_flags())
}

/// Scaled dot-product attention with `n_h` column-sliced heads, applied
/// batch by batch. `key_live` marks attendable key positions per batch;
/// a batch with no live key fails. Dropout hits the post-softmax weights.
#[allow(clippy::too_many_arguments)]
pub fn multihead(
    tape: &mut Tape,
    q_in: NodeId,
    kv_in: NodeId,
    block: BlockNodes,
    n_h: usize,
    n_batches: usize,
    key_live: &[bool],
    scale_dim: usize,
    dropout: f64,
    mode: &mut Mode,
) -> Result<NodeId> {
    let (q_rows, d) = tape.dims(q_in);
    let (kv_rows, d2) = tape.dims(kv_in);
    if d != d2 {
        return Err(Error::shape("multihead", format!("query dim {d} vs key dim {d2}")));
    }
    if n_batches == 0 || q_rows % n_batches != 0 || kv_rows % n_batches != 0 {
        return Err(Error::shape(
            "multihead",
            format!("{q_rows}/{kv_rows} rows do not split into {n_batches} batches"),
        ));
    }
    if n_h == 0 || d % n_h != 0 {
        return Err(Error::shape("multihead", format!("{n_h} heads do not divide {d}")));
    }
    let rq = q_rows / n_batches;
    let rk = kv_rows / n_batches;
    if key_live.len() != kv_rows {
        return Err(Error::shape(
            "multihead",
            format!("{} key flags for {kv_rows} key rows", key_live.len()),
        ));
    }
    if scale_dim == 0 {
        return Err(Error::Invalid("zero attention scale dimension".to_string()));
    }
    let d_k = d / n_h;
    let inv_scale = 1.0 / (scale_dim as f64).sqrt();

    let q_p = tape.matmul(q_in, block.w_q)?;
    let k_p = tape.matmul(kv_in, block.w_k)?;
    let v_p = tape.matmul(kv_in, block.w_v)?;

    let mut per_batch = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let q_b = tape.slice_rows(q_p, b * rq, (b + 1) * rq)?;
        let k_b = tape.slice_rows(k_p, b * rk, (b + 1) * rk)?;
        let v_b = tape.slice_rows(v_p, b * rk, (b + 1) * rk)?;
        let live = &key_live[b * rk..(b + 1) * rk];
        let mask: Vec<bool> = (0..rq).flat_map(|_| live.iter().copied()).collect();
        let mut heads = Vec::with_capacity(n_h);
        for h in 0..n_h {
            let q_bh = tape.slice_cols(q_b, h * d_k, (h + 1) * d_k)?;
            let k_bh = tape.slice_cols(k_b, h * d_k, (h + 1) * d_k)?;
            let v_bh = tape.slice_cols(v_b, h * d_k, (h + 1) * d_k)?;
            let raw = tape.matmul_nt(q_bh, k_bh)?;
            let scaled = tape.scale(raw, inv_scale)?;
            let weights = tape.softmax_rows(scaled, Some(&mask))?;
            let weights = apply_dropout(tape, weights, dropout, mode)?;
            heads.push(tape.matmul(weights, v_bh)?);
        }
        per_batch.push(tape.concat_cols(&heads)?);
    }
    let stacked =
        if per_batch.len() == 1 { per_batch[0] } else { tape.concat_rows(&per_batch)? };
    tape.matmul(stacked, block.w_o)
}

/// Encoder: self-attention over the check-in rows, then the output network,
/// with padded positions zeroed.
#[allow(clippy::too_many_arguments)]
pub fn kaae_forward(
    tape: &mut Tape,
    c: NodeId,
    batch: &CheckinBatch,
    block: BlockNodes,
    sffn_enc: SffnNodes,
    n_h: usize,
    scale_dim: usize,
    dropout: f64,
    mode: &mut Mode,
) -> Result<NodeId> {
    let att = multihead(tape, c, c, block, n_h, batch.b, &batch.mask, scale_dim, dropout, mode)?;
    let f = sffn_forward(tape, att, sffn_enc)?;
    let f = apply_dropout(tape, f, dropout, mode)?;
    tape.zero_rows(f, &batch.pad_flags())
}

/// Candidate rows conditioned on the query time: for each batch element,
/// every candidate POI is concatenated with the three query-time embeddings
/// and mapped to d. Output is (b·|P|)×d, candidates fastest.
pub fn time_encode_pois(
    tape: &mut Tape,
    batch: &CheckinBatch,
    h2: NodeId,
    sffn_time: SffnNodes,
    poi_entities: &[u32],
) -> Result<NodeId> {
    let n_pois = poi_entities.len();
    if n_pois == 0 {
        return Err(Error::Invalid("empty candidate set".to_string()));
    }
    let rows = batch.b * n_pois;
    let mut idx_poi = Vec::with_capacity(rows);
    let mut idx_time: [Vec<usize>; 3] = [
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
        Vec::with_capacity(rows),
    ];
    for b in 0..batch.b {
        for &poi in poi_entities {
            idx_poi.push(poi as usize);
            for (j, idx) in idx_time.iter_mut().enumerate() {
                idx.push(batch.query_time[b * 3 + j] as usize);
            }
        }
    }
    let g_poi = tape.gather(h2, &idx_poi)?;
    let g_td = tape.gather(h2, &idx_time[0])?;
    let g_tm = tape.gather(h2, &idx_time[1])?;
    let g_ty = tape.gather(h2, &idx_time[2])?;
    let concat = tape.concat_cols(&[g_poi, g_td, g_tm, g_ty])?;
    sffn_forward(tape, concat, sffn_time)
}

/// Decoder: candidates attend over the encoded history.
#[allow(clippy::too_many_arguments)]
pub fn staad_forward(
    tape: &mut Tape,
    p_prime: NodeId,
    f: NodeId,
    batch: &CheckinBatch,
    block: BlockNodes,
    n_h: usize,
    scale_dim: usize,
    dropout: f64,
    mode: &mut Mode,
) -> Result<NodeId> {
    multihead(tape, p_prime, f, block, n_h, batch.b, &batch.mask, scale_dim, dropout, mode)
}

/// ŷ_bj = S_bj · P′_bj, reshaped to b×|P|.
pub fn matching_scores(
    tape: &mut Tape,
    s: NodeId,
    p_prime: NodeId,
    b: usize,
    n_pois: usize,
) -> Result<NodeId> {
    let prod = tape.mul(s, p_prime)?;
    let dots = tape.sum_rows(prod)?;
    tape.reshape(dots, b, n_pois)
}

/// Mean cross-entropy of the labels under row softmax, plus
/// λ·Σ‖θ‖² over the given parameter leaves.
pub fn poi_loss(
    tape: &mut Tape,
    scores: NodeId,
    labels: &[usize],
    reg_leaves: &[NodeId],
    lambda: f64,
) -> Result<NodeId> {
    if lambda < 0.0 {
        return Err(Error::Invalid(format!("negative regularization weight {lambda}")));
    }
    let ce = tape.cross_entropy_rows(scores, labels)?;
    if lambda == 0.0 || reg_leaves.is_empty() {
        return Ok(ce);
    }
    let mut acc = tape.sum_squares(reg_leaves[0])?;
    for &leaf in &reg_leaves[1..] {
        let sq = tape.sum_squares(leaf)?;
        acc = tape.add(acc, sq)?;
    }
    let reg = tape.scale(acc, lambda)?;
    tape.add(ce, reg)
}

/// End-to-end scores for one batch given refined embeddings on the tape.
pub fn model_forward(
    tape: &mut Tape,
    batch: &CheckinBatch,
    h2: NodeId,
    nodes: &AsmNodes,
    model: &AsmModel,
    poi_entities: &[u32],
    mode: &mut Mode,
) -> Result<NodeId> {
    let n_h = model.encoder.n_h;
    let scale_dim = model.scale_dim();
    let c = encode_checkins(tape, batch, h2, nodes.sffn_in)?;
    let f = kaae_forward(
        tape,
        c,
        batch,
        nodes.encoder,
        nodes.sffn_enc,
        n_h,
        scale_dim,
        model.dropout,
        mode,
    )?;
    let p_prime = time_encode_pois(tape, batch, h2, nodes.sffn_time, poi_entities)?;
    let s = staad_forward(
        tape,
        p_prime,
        f,
        batch,
        nodes.decoder,
        n_h,
        scale_dim,
        model.dropout,
        mode,
    )?;
    matching_scores(tape, s, p_prime, batch.b, poi_entities.len())
}
