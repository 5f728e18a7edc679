//! From check-ins to a hyper-relational knowledge graph: build the entity
//! vocabulary, emit facts for every relation family, and expand hyperedges
//! into the pairwise adjacency the attention layers consume.

use hkgnn::data::{bin_side_info, generate_synthetic, load_dataset, split_trajectories, SynthSpec};
use hkgnn::hkg::{
    build_hkg, clique_expand, incidence, neighbors, EntityVocab, FamilyMask, RELATION_NAMES,
};
use hkgnn::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SynthSpec { n_users: 15, n_pois: 10, n_checkins: 600, seed: 42 };
    let [checkins, pois, friendships] = generate_synthetic(&spec, dir.path())?;

    let ds = load_dataset(&checkins, &pois, &friendships)?;
    let split = split_trajectories(&ds, ds.pois.len(), 0.3)?;

    let vocab = EntityVocab::build(&split, &ds.pois)?;
    println!(
        "vocabulary: {} entities ({} users, {} POIs, the rest geo cells, time slots, and side info)",
        vocab.len(),
        vocab.n_users(),
        vocab.n_pois()
    );

    // Mobility facts come from training check-ins only; held-out data never
    // leaks into the graph.
    let (bins, _) = bin_side_info(&ds.pois);
    let hkg = build_hkg(&split, &ds.pois, &bins, &ds.friendships, &vocab, FamilyMask::default())?;
    println!("\n{} facts by relation:", hkg.n_facts());
    for (name, count) in RELATION_NAMES.iter().zip(hkg.relation_counts.iter()) {
        println!("  {name:<12} {count}");
    }

    let adj = clique_expand(&incidence(&hkg.facts, vocab.len())?);
    let edges = adj.adj.len();
    println!("\nclique expansion: {} vertices, {} directed edges", adj.n, edges);

    let poi0 = vocab.poi_entity(0);
    println!(
        "entity {} ({:?}) touches {} neighbors",
        poi0,
        vocab.key(poi0)?,
        neighbors(&adj, poi0)?.len()
    );
    Ok(())
}
