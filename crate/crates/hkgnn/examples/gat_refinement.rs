//! One attention layer over a small graph: the weights each vertex spreads
//! over its neighborhood sum to 1, and running the stack mixes features
//! along the structure while isolated vertices stay untouched by attention.

use hkgnn::gnn::{attention_coeffs, refine_table, GatStack};
use hkgnn::hkg::{clique_expand, incidence, Fact};
use hkgnn::tensor::Tensor;
use hkgnn::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    // A 6-vertex graph from two overlapping hyperedges (vertex 0 is the
    // untouched pad slot).
    let facts = vec![
        Fact { relation: 0, entities: vec![1, 2, 3] },
        Fact { relation: 0, entities: vec![3, 4, 5] },
    ];
    let adj = clique_expand(&incidence(&facts, 6)?);
    for v in 0..adj.n {
        let row = &adj.adj[adj.ptr[v]..adj.ptr[v + 1]];
        println!("vertex {v}: neighbors {row:?}");
    }

    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = Tensor::new(vec![6, d], (0..6 * d).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let stack = GatStack::new_random(d, 2, 0.2, &mut rng);

    println!("\nfirst-layer attention of vertex 3 over its neighborhood:");
    let coeffs = attention_coeffs(&stack.layers[0], &h, &adj, 3)?;
    let mut total = 0.0;
    for (j, beta) in &coeffs {
        println!("  beta(3 <- {j}) = {beta:.4}");
        total += beta;
    }
    println!("  sum {total:.12}");

    let refined = refine_table(&h, &stack, &adj)?.h2;
    println!("\nvertex 1 before {:?}", &h.row(1)[..3]);
    println!("vertex 1 after  {:?}", &refined.row(1)[..3]);
    println!("pad vertex 0 after {:?}", &refined.row(0)[..3]);
    Ok(())
}
