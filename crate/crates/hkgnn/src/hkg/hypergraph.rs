//! Hypergraph view of the fact set and its clique-expanded adjacency,
//! A = Sgn(H·Hᵀ), kept sparse as CSR so |V|² is never materialized.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::hkg::Fact;

/// One hyperedge per fact, holding the fact's distinct entities. Relations
/// are not vertices; relation identity lives only in the scoring function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hypergraph {
    pub n_vertices: usize,
    /// Sorted distinct entity ids per edge.
    pub edges: Vec<Vec<u32>>,
}

/// Sparse symmetric 0/1 adjacency in CSR form; rows are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliqueAdjacency {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub adj: Vec<u32>,
}

pub fn incidence(facts: &[Fact], n_vertices: usize) -> Result<Hypergraph> {
    if facts.is_empty() {
        return Err(Error::Invalid("cannot build a hypergraph from zero facts".to_string()));
    }
    let mut edges = Vec::with_capacity(facts.len());
    for f in facts {
        let mut e: Vec<u32> = f.entities.clone();
        e.sort_unstable();
        e.dedup();
        if let Some(&max) = e.last() {
            if max as usize >= n_vertices {
                return Err(Error::Invalid(format!(
                    "fact entity {max} out of range for {n_vertices} vertices"
                )));
            }
        }
        edges.push(e);
    }
    Ok(Hypergraph { n_vertices, edges })
}

/// Vertices sharing an edge become mutual neighbors; every vertex touched by
/// at least one edge also neighbors itself. Vertices in no edge get empty
/// rows, which downstream layers turn into zero outputs.
pub fn clique_expand(h: &Hypergraph) -> CliqueAdjacency {
    let mut sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); h.n_vertices];
    for edge in &h.edges {
        for &i in edge {
            sets[i as usize].extend(edge.iter().copied());
        }
    }
    let mut ptr = Vec::with_capacity(h.n_vertices + 1);
    ptr.push(0usize);
    let mut adj = Vec::new();
    for set in sets {
        adj.extend(set);
        ptr.push(adj.len());
    }
    CliqueAdjacency { n: h.n_vertices, ptr, adj }
}

/// Sorted neighbor list of `v`, itself included when `v` touches any edge.
pub fn neighbors(a: &CliqueAdjacency, v: u32) -> Result<&[u32]> {
    if v as usize >= a.n {
        return Err(Error::Invalid(format!("vertex {v} out of range for {} vertices", a.n)));
    }
    Ok(&a.adj[a.ptr[v as usize]..a.ptr[v as usize + 1]])
}

impl CliqueAdjacency {
    pub fn nnz(&self) -> usize {
        self.adj.len()
    }

    pub fn row(&self, v: u32) -> &[u32] {
        &self.adj[self.ptr[v as usize]..self.ptr[v as usize + 1]]
    }

    pub fn contains(&self, i: u32, j: u32) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fact(entities: &[u32]) -> Fact {
        Fact { relation: 0, entities: entities.to_vec() }
    }

    /// Dense reference: H is |V|×|edges| 0/1 incidence, and the result is
    /// Sgn(H·Hᵀ) materialized in full.
    fn dense_sgn_hht(h: &Hypergraph) -> Vec<Vec<u8>> {
        let n = h.n_vertices;
        let mut inc = vec![vec![0u32; h.edges.len()]; n];
        for (e, edge) in h.edges.iter().enumerate() {
            for &v in edge {
                inc[v as usize][e] = 1;
            }
        }
        let mut a = vec![vec![0u8; n]; n];
        for i in 0..n {
            for j in 0..n {
                let dot: u32 = (0..h.edges.len()).map(|e| inc[i][e] * inc[j][e]).sum();
                a[i][j] = (dot > 0) as u8;
            }
        }
        a
    }

    fn csr_to_dense(a: &CliqueAdjacency) -> Vec<Vec<u8>> {
        let mut out = vec![vec![0u8; a.n]; a.n];
        for i in 0..a.n as u32 {
            for &j in a.row(i) {
                out[i as usize][j as usize] = 1;
            }
        }
        out
    }

    #[test]
    fn triple_fact_makes_one_three_vertex_edge() {
        let h = incidence(&[fact(&[0, 1, 2])], 3).unwrap();
        assert_eq!(h.edges, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn repeated_entity_collapses_in_the_edge() {
        let h = incidence(&[fact(&[1, 1, 0])], 2).unwrap();
        assert_eq!(h.edges, vec![vec![0, 1]]);
    }

    #[test]
    fn shared_entity_appears_in_both_edges() {
        let h = incidence(&[fact(&[0, 1]), fact(&[0, 2])], 3).unwrap();
        let rows_with_zero = h.edges.iter().filter(|e| e.contains(&0)).count();
        assert_eq!(rows_with_zero, 2);
    }

    #[test]
    fn empty_fact_set_rejected() {
        assert!(incidence(&[], 3).is_err());
    }

    #[test]
    fn out_of_range_entity_rejected() {
        assert!(incidence(&[fact(&[0, 5])], 3).is_err());
    }

    #[test]
    fn single_edge_clique_is_all_ones() {
        let h = incidence(&[fact(&[0, 1, 2])], 3).unwrap();
        let a = clique_expand(&h);
        for i in 0..3 {
            for j in 0..3 {
                assert!(a.contains(i, j), "missing ({i},{j})");
            }
        }
        assert_eq!(a.nnz(), 9);
    }

    #[test]
    fn disjoint_edges_make_block_diagonal() {
        let h = incidence(&[fact(&[0, 1, 2]), fact(&[3, 4])], 5).unwrap();
        let a = clique_expand(&h);
        let dense = csr_to_dense(&a);
        assert_eq!(dense, dense_sgn_hht(&h));
        assert!(!a.contains(0, 3));
        assert!(!a.contains(4, 2));
        assert!(a.contains(3, 4));
    }

    #[test]
    fn neighbors_sorted_and_self_inclusive() {
        let h = incidence(&[fact(&[2, 0, 3]), fact(&[3, 5])], 6).unwrap();
        let a = clique_expand(&h);
        assert_eq!(neighbors(&a, 0).unwrap(), &[0, 2, 3]);
        assert_eq!(neighbors(&a, 3).unwrap(), &[0, 2, 3, 5]);
        // Vertices 1 and 4 sit in no edge.
        assert_eq!(neighbors(&a, 1).unwrap(), &[] as &[u32]);
        assert_eq!(neighbors(&a, 4).unwrap(), &[] as &[u32]);
        assert!(neighbors(&a, 6).is_err());
    }

    #[test]
    fn lone_vertex_edge_neighbors_itself() {
        let h = incidence(&[fact(&[1, 1])], 2).unwrap();
        let a = clique_expand(&h);
        assert_eq!(neighbors(&a, 1).unwrap(), &[1]);
    }

    proptest! {
        #[test]
        fn matches_dense_oracle(
            edges in prop::collection::vec(
                prop::collection::vec(0u32..12, 1..6),
                1..10,
            )
        ) {
            let facts: Vec<Fact> = edges.iter().map(|e| fact(e)).collect();
            let h = incidence(&facts, 12).unwrap();
            let a = clique_expand(&h);
            prop_assert_eq!(csr_to_dense(&a), dense_sgn_hht(&h));
        }

        #[test]
        fn adjacency_symmetric_and_pairwise_complete(
            edges in prop::collection::vec(
                prop::collection::vec(0u32..10, 2..5),
                1..8,
            )
        ) {
            let facts: Vec<Fact> = edges.iter().map(|e| fact(e)).collect();
            let h = incidence(&facts, 10).unwrap();
            let a = clique_expand(&h);
            for i in 0..10u32 {
                for &j in a.row(i) {
                    prop_assert!(a.contains(j, i));
                }
            }
            for f in &facts {
                for &x in &f.entities {
                    for &y in &f.entities {
                        prop_assert!(a.contains(x, y));
                    }
                }
            }
        }
    }
}
