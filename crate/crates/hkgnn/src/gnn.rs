//! Graph-attention refinement of entity embeddings over the clique-expanded
//! adjacency. Rows are transformed by right-multiplication (h′ = hW), edge
//! logits come from the split attention vector, and each vertex aggregates
//! its neighbors' transformed rows under a per-row softmax.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hkg::CliqueAdjacency;
use crate::optim::ParamSet;
use crate::tape::{NodeId, Tape};
use crate::tensor::{init_params, InitScheme, Tensor};

pub const DEFAULT_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct GatLayer {
    /// d×d
    pub w: Tensor,
    /// 2d×1, split into destination and source halves.
    pub a: Tensor,
    /// Negative slope of the LeakyReLU on edge logits.
    pub slope: f64,
}

impl GatLayer {
    pub fn new_random(d: usize, slope: f64, rng: &mut impl Rng) -> GatLayer {
        GatLayer {
            w: init_params(&[d, d], InitScheme::GlorotUniform, rng),
            a: init_params(&[2 * d, 1], InitScheme::GlorotUniform, rng),
            slope,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.w.rows() != d || self.w.cols() != d || self.a.rows() != 2 * d || self.a.cols() != 1 {
            return Err(Error::Invalid(format!(
                "gat layer shapes W {}×{}, a {}×{} do not fit d={d}",
                self.w.rows(),
                self.w.cols(),
                self.a.rows(),
                self.a.cols()
            )));
        }
        Ok(())
    }
}

/// The refinement network; two layers by default.
#[derive(Clone, Debug)]
pub struct GatStack {
    pub layers: Vec<GatLayer>,
}

pub fn gat_w_name(layer: usize) -> String {
    format!("gat.w{layer}")
}

pub fn gat_a_name(layer: usize) -> String {
    format!("gat.a{layer}")
}

impl GatStack {
    pub fn new_random(d: usize, n_layers: usize, slope: f64, rng: &mut impl Rng) -> GatStack {
        GatStack { layers: (0..n_layers).map(|_| GatLayer::new_random(d, slope, rng)).collect() }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for layer in &self.layers {
            layer.validate(d)?;
        }
        Ok(())
    }

    pub fn add_to_params(&self, params: &mut ParamSet) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            params.add(&gat_w_name(i), layer.w.clone(), false)?;
            params.add(&gat_a_name(i), layer.a.clone(), false)?;
        }
        Ok(())
    }

    /// Tape nodes for each layer's parameters, given the leaves created from
    /// a ParamSet this stack was added to.
    pub fn node_ids(&self, params: &ParamSet, leaves: &[NodeId]) -> Result<Vec<GatLayerNodes>> {
        (0..self.layers.len())
            .map(|i| {
                let w = params
                    .index_of(&gat_w_name(i))
                    .ok_or_else(|| Error::Invalid(format!("missing parameter {}", gat_w_name(i))))?;
                let a = params
                    .index_of(&gat_a_name(i))
                    .ok_or_else(|| Error::Invalid(format!("missing parameter {}", gat_a_name(i))))?;
                Ok(GatLayerNodes { w: leaves[w], a: leaves[a], slope: self.layers[i].slope })
            })
            .collect()
    }

    /// Copy trained values back from a ParamSet.
    pub fn load_from_params(&mut self, params: &ParamSet) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.w = params
                .by_name(&gat_w_name(i))
                .ok_or_else(|| Error::Invalid(format!("missing parameter {}", gat_w_name(i))))?
                .value
                .clone();
            layer.a = params
                .by_name(&gat_a_name(i))
                .ok_or_else(|| Error::Invalid(format!("missing parameter {}", gat_a_name(i))))?
                .value
                .clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GatLayerNodes {
    pub w: NodeId,
    pub a: NodeId,
    pub slope: f64,
}

/// Refined second-layer output, one row per vertex.
#[derive(Clone, Debug)]
pub struct RefinedEmbeddings {
    pub h2: Tensor,
}

/// Attention weights of vertex `v` over its sorted neighbor list, computed
/// directly on tensors. An isolated vertex has no weights.
pub fn attention_coeffs(
    layer: &GatLayer,
    h: &Tensor,
    adj: &CliqueAdjacency,
    v: u32,
) -> Result<Vec<(u32, f64)>> {
    let d = h.cols();
    layer.validate(d)?;
    if h.rows() != adj.n {
        return Err(Error::Invalid(format!("{} feature rows for {} vertices", h.rows(), adj.n)));
    }
    let neigh = crate::hkg::neighbors(adj, v)?;
    if neigh.is_empty() {
        return Ok(Vec::new());
    }
    let transform = |row: &[f64]| -> Vec<f64> {
        (0..d).map(|c| (0..d).map(|k| row[k] * layer.w.at(k, c)).sum()).collect()
    };
    let a = layer.a.data();
    let hw_v = transform(h.row(v as usize));
    let s_self: f64 = (0..d).map(|c| a[c] * hw_v[c]).sum();
    let leaky = |x: f64| if x >= 0.0 { x } else { layer.slope * x };
    let logits: Vec<f64> = neigh
        .iter()
        .map(|&j| {
            let hw_j = transform(h.row(j as usize));
            let s_j: f64 = (0..d).map(|c| a[d + c] * hw_j[c]).sum();
            leaky(s_self + s_j)
        })
        .collect();
    let m = logits.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let denom: f64 = exps.iter().sum();
    Ok(neigh.iter().zip(exps).map(|(&j, e)| (j, e / denom)).collect())
}

/// One round of attention aggregation: out_i = ReLU(Σ_{j∈N_i} β_ij (h_j W)).
/// Isolated vertices come out as zero rows.
pub fn gat_layer_forward(
    tape: &mut Tape,
    h: NodeId,
    layer: GatLayerNodes,
    adj: &CliqueAdjacency,
) -> Result<NodeId> {
    let (n, d) = tape.dims(h);
    if n != adj.n {
        return Err(Error::shape("gat_layer", format!("{n} feature rows for {} vertices", adj.n)));
    }
    let (ar, ac) = tape.dims(layer.a);
    if ar != 2 * d || ac != 1 {
        return Err(Error::shape("gat_layer", format!("attention vector {ar}×{ac}, want {}×1", 2 * d)));
    }
    let hw = tape.matmul(h, layer.w)?;
    let a_dst = tape.slice_rows(layer.a, 0, d)?;
    let a_src = tape.slice_rows(layer.a, d, 2 * d)?;
    let s_dst = tape.matmul(hw, a_dst)?;
    let s_src = tape.matmul(hw, a_src)?;

    let mut dst = Vec::with_capacity(adj.nnz());
    for i in 0..adj.n {
        dst.extend(std::iter::repeat(i).take(adj.ptr[i + 1] - adj.ptr[i]));
    }
    let src: Vec<usize> = adj.adj.iter().map(|&j| j as usize).collect();

    let ld = tape.gather(s_dst, &dst)?;
    let ls = tape.gather(s_src, &src)?;
    let logits = tape.add(ld, ls)?;
    let act = tape.leaky_relu(logits, layer.slope)?;
    let weights = tape.segment_softmax(act, &adj.ptr)?;
    let messages = tape.gather(hw, &src)?;
    let agg = tape.segment_weighted_sum(weights, messages, &adj.ptr)?;
    tape.relu(agg)
}

/// Stacked layers; the entity matrix goes in, the last layer's output comes
/// out, and gradients flow back to every input node.
pub fn refine(
    tape: &mut Tape,
    entities: NodeId,
    layers: &[GatLayerNodes],
    adj: &CliqueAdjacency,
) -> Result<NodeId> {
    let mut h = entities;
    for &layer in layers {
        h = gat_layer_forward(tape, h, layer, adj)?;
    }
    Ok(h)
}

/// Value-only refinement of a fixed entity table.
pub fn refine_table(
    entities: &Tensor,
    stack: &GatStack,
    adj: &CliqueAdjacency,
) -> Result<RefinedEmbeddings> {
    stack.validate(entities.cols())?;
    let mut tape = Tape::new();
    let h = tape.leaf_tensor(entities, false)?;
    let mut nodes = Vec::with_capacity(stack.layers.len());
    for layer in &stack.layers {
        nodes.push(GatLayerNodes {
            w: tape.leaf_tensor(&layer.w, false)?,
            a: tape.leaf_tensor(&layer.a, false)?,
            slope: layer.slope,
        });
    }
    let out = refine(&mut tape, h, &nodes, adj)?;
    let (n, d) = tape.dims(out);
    let h2 = Tensor::new(vec![n, d], tape.value(out).to_vec())?;
    h2.check_finite("refined embeddings")?;
    Ok(RefinedEmbeddings { h2 })
}
