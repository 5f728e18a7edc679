//! The three ranking metrics and their sanity identities: a random scorer
//! lands near the middle rank, a constant scorer loses every tie, and a
//! perfect scorer sits at 1 across the board.

use hkgnn::metrics::{acc_at_k, average_rank, mrr, rank_of};
use hkgnn::Result;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn main() -> Result<()> {
    let n_pois = 50;
    let n_examples = 2000;
    let mut rng = StdRng::seed_from_u64(17);

    let mut random_ranks = Vec::new();
    let mut constant_ranks = Vec::new();
    let mut perfect_ranks = Vec::new();
    for _ in 0..n_examples {
        let label = rng.gen_range(0..n_pois);
        let random: Vec<f64> = (0..n_pois).map(|_| rng.gen()).collect();
        random_ranks.push(rank_of(&random, label)?);
        constant_ranks.push(rank_of(&vec![0.5; n_pois], label)?);
        let mut perfect = vec![0.0; n_pois];
        perfect[label] = 1.0;
        perfect_ranks.push(rank_of(&perfect, label)?);
    }

    println!("{n_examples} examples over {n_pois} candidates\n");
    for (name, ranks) in [
        ("random scores", &random_ranks),
        ("constant scores", &constant_ranks),
        ("perfect scores", &perfect_ranks),
    ] {
        println!(
            "{name:<16} Acc@1 {:.3}  Acc@10 {:.3}  MRR {:.3}  AR {:.2}",
            acc_at_k(ranks, 1)?,
            acc_at_k(ranks, 10)?,
            mrr(ranks)?,
            average_rank(ranks)?
        );
    }

    // Ties resolve against the true POI, so constant scores always produce
    // the worst possible rank.
    assert!(constant_ranks.iter().all(|&r| r == n_pois as u32));
    println!("\nconstant scorer: every rank is {n_pois} (pessimistic ties)");
    println!("random scorer: AR sits near ({n_pois}+1)/2 = {:.1}", (n_pois as f64 + 1.0) / 2.0);
    Ok(())
}
