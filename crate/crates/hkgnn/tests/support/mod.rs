//! Dense reference implementations for the acceptance suite. Everything
//! here favors explicitness over speed: full matrices, permutation-matrix
//! rotations, nested loops, and no code shared with the library paths under
//! test.

use hkgnn::hkg::{CliqueAdjacency, Fact};
use hkgnn::tensor::Tensor;

/// Plain row-major matrix product, a: ra×ca, b: ca×cb.
pub fn mat_mul(a: &[f64], ra: usize, ca: usize, b: &[f64], cb: usize) -> Vec<f64> {
    let mut out = vec![0.0; ra * cb];
    for i in 0..ra {
        for k in 0..ca {
            for j in 0..cb {
                out[i * cb + j] += a[i * ca + k] * b[k * cb + j];
            }
        }
    }
    out
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / denom).collect()
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Rotation as an explicit permutation matrix: row i of the output picks
/// input coordinate (i + off) mod d.
fn rotation_matrix(d: usize, off: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + (i + off) % d] = 1.0;
    }
    m
}

/// Reference fact score: rotate each slot's entity vector by its offset via
/// a permutation matrix, multiply everything elementwise with the relation
/// vector, and sum the coordinates.
pub fn dense_fact_score(entities: &Tensor, relations: &Tensor, alpha: usize, fact: &Fact) -> f64 {
    let d = entities.cols();
    let step = d / alpha;
    let mut acc: Vec<f64> = relations.row(fact.relation as usize).to_vec();
    for (j, &e) in fact.entities.iter().enumerate() {
        let rot = rotation_matrix(d, step * j);
        let row = entities.row(e as usize);
        let shifted = mat_mul(&rot, d, d, row, 1);
        for (a, s) in acc.iter_mut().zip(&shifted) {
            *a *= s;
        }
    }
    acc.iter().sum()
}

/// Reference clique expansion: materialize the |V|×|edges| incidence matrix
/// H and return Sgn(H·Hᵀ) as a dense 0/1 matrix.
pub fn dense_clique_expansion(facts: &[Fact], n: usize) -> Vec<Vec<u8>> {
    let mut inc = vec![vec![0u32; facts.len()]; n];
    for (e, f) in facts.iter().enumerate() {
        for &v in &f.entities {
            inc[v as usize][e] = 1;
        }
    }
    let mut a = vec![vec![0u8; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: u32 = (0..facts.len()).map(|e| inc[i][e] * inc[j][e]).sum();
            a[i][j] = (dot > 0) as u8;
        }
    }
    a
}

pub fn csr_to_dense(a: &CliqueAdjacency) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; a.n]; a.n];
    for i in 0..a.n {
        for &j in &a.adj[a.ptr[i]..a.ptr[i + 1]] {
            out[i][j as usize] = 1;
        }
    }
    out
}

/// Reference attention weights of vertex `v`: LeakyReLU edge logits from
/// the destination and source halves of `a`, then softmax over the
/// neighborhood read off the dense adjacency.
pub fn dense_attention_row(
    h: &Tensor,
    w: &Tensor,
    a: &Tensor,
    slope: f64,
    adj: &[Vec<u8>],
    v: usize,
) -> Vec<(u32, f64)> {
    let d = h.cols();
    let hw: Vec<Vec<f64>> =
        (0..h.rows()).map(|i| mat_mul(h.row(i), 1, d, w.data(), d)).collect();
    let av = a.data();
    let neigh: Vec<usize> = (0..adj.len()).filter(|&j| adj[v][j] == 1).collect();
    if neigh.is_empty() {
        return Vec::new();
    }
    let s_dst: f64 = (0..d).map(|c| av[c] * hw[v][c]).sum();
    let logits: Vec<f64> = neigh
        .iter()
        .map(|&j| {
            let s_src: f64 = (0..d).map(|c| av[d + c] * hw[j][c]).sum();
            leaky(s_dst + s_src, slope)
        })
        .collect();
    let weights = softmax(&logits);
    neigh.iter().map(|&j| j as u32).zip(weights).collect()
}

/// Reference single-layer graph attention pass over every vertex: weighted
/// neighborhood sums of the projected features, then ReLU. Isolated
/// vertices produce zero rows.
pub fn dense_gat_layer(
    h: &Tensor,
    w: &Tensor,
    a: &Tensor,
    slope: f64,
    adj: &[Vec<u8>],
) -> Vec<Vec<f64>> {
    let d = h.cols();
    let hw: Vec<Vec<f64>> =
        (0..h.rows()).map(|i| mat_mul(h.row(i), 1, d, w.data(), d)).collect();
    (0..h.rows())
        .map(|v| {
            let coeffs = dense_attention_row(h, w, a, slope, adj, v);
            let mut out = vec![0.0; d];
            for (j, beta) in coeffs {
                for (o, x) in out.iter_mut().zip(&hw[j as usize]) {
                    *o += beta * x;
                }
            }
            for o in out.iter_mut() {
                *o = o.max(0.0);
            }
            out
        })
        .collect()
}

/// Reference multi-head attention: per batch and head, mask dead keys out
/// of the softmax, average the value slices, concatenate the heads, and
/// apply the output projection.
#[allow(clippy::too_many_arguments)]
pub fn dense_multihead(
    q: &Tensor,
    kv: &Tensor,
    w_q: &Tensor,
    w_k: &Tensor,
    w_v: &Tensor,
    w_o: &Tensor,
    n_h: usize,
    n_batches: usize,
    key_live: &[bool],
    scale_dim: usize,
) -> Vec<f64> {
    let d = q.cols();
    let d_k = d / n_h;
    let rq = q.rows() / n_batches;
    let rk = kv.rows() / n_batches;
    let qp = mat_mul(q.data(), q.rows(), d, w_q.data(), d);
    let kp = mat_mul(kv.data(), kv.rows(), d, w_k.data(), d);
    let vp = mat_mul(kv.data(), kv.rows(), d, w_v.data(), d);

    let mut cat = vec![0.0; q.rows() * d];
    for b in 0..n_batches {
        let live: Vec<usize> =
            (0..rk).filter(|&j| key_live[b * rk + j]).map(|j| b * rk + j).collect();
        for h in 0..n_h {
            for i in 0..rq {
                let qi = &qp[(b * rq + i) * d + h * d_k..(b * rq + i) * d + (h + 1) * d_k];
                let logits: Vec<f64> = live
                    .iter()
                    .map(|&j| {
                        let kj = &kp[j * d + h * d_k..j * d + (h + 1) * d_k];
                        let dot: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum();
                        dot / (scale_dim as f64).sqrt()
                    })
                    .collect();
                let weights = softmax(&logits);
                for (wt, &j) in weights.iter().zip(&live) {
                    let vj = &vp[j * d + h * d_k..j * d + (h + 1) * d_k];
                    for (t, &vv) in vj.iter().enumerate() {
                        cat[(b * rq + i) * d + h * d_k + t] += wt * vv;
                    }
                }
            }
        }
    }
    mat_mul(&cat, q.rows(), d, w_o.data(), d)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
