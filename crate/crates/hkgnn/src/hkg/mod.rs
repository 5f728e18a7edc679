//! The hyper-relational knowledge graph: entity and relation vocabularies,
//! fact construction from a processed dataset, and the hypergraph views
//! (incidence, clique-expansion adjacency) that drive message passing.

mod artifact;
mod facts;
mod hypergraph;
mod vocab;

pub use artifact::{load_graph, save_graph, GraphArtifact};
pub use facts::{build_hkg, FamilyMask, Hkg, MAX_ARITY};
pub use hypergraph::{clique_expand, incidence, neighbors, CliqueAdjacency, Hypergraph};
pub use vocab::{
    EntityKey, EntityVocab, Fnv, RelationId, StatKind, N_RELATIONS, RELATION_NAMES, STAT_KINDS,
};

/// One n-ary tuple r(e₁…e_k). Entity ids index the vocabulary; slot order is
/// fixed per relation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub relation: u8,
    pub entities: Vec<u32>,
}

impl Fact {
    pub fn arity(&self) -> usize {
        self.entities.len()
    }
}
