//! Embedding the fact set: train the n-ary scorer with negative sampling
//! and watch true facts pull ahead of corrupted ones.

use hkgnn::data::{bin_side_info, generate_synthetic, load_dataset, split_trajectories, SynthSpec};
use hkgnn::embed::{hsimple_score, negative_samples, train_kg, KgConfig};
use hkgnn::hkg::{build_hkg, EntityVocab, FamilyMask};
use hkgnn::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SynthSpec { n_users: 12, n_pois: 10, n_checkins: 500, seed: 9 };
    let [checkins, pois, friendships] = generate_synthetic(&spec, dir.path())?;
    let ds = load_dataset(&checkins, &pois, &friendships)?;
    let split = split_trajectories(&ds, ds.pois.len(), 0.3)?;
    let vocab = EntityVocab::build(&split, &ds.pois)?;
    let (bins, _) = bin_side_info(&ds.pois);
    let hkg = build_hkg(&split, &ds.pois, &bins, &ds.friendships, &vocab, FamilyMask::default())?;
    println!("{} facts over {} entities", hkg.n_facts(), vocab.len());

    let cfg = KgConfig {
        d: 32,
        alpha: 8,
        n_negatives: 4,
        epochs: 60,
        lr: 0.01,
        batch_size: 128,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let outcome = train_kg(&hkg.facts, vocab.len(), &cfg, &mut rng)?;
    for (e, loss) in outcome.epoch_losses.iter().enumerate() {
        if e % 10 == 0 || e + 1 == outcome.epoch_losses.len() {
            println!("epoch {e:>3}  loss {loss:.4}");
        }
    }

    // Each negative corrupts exactly one slot of the fact.
    let fact = &hkg.facts[0];
    let truth = hsimple_score(&outcome.table, fact)?;
    let mut better = 0;
    let negs = negative_samples(fact, 5, vocab.len(), &mut rng)?;
    for neg in &negs {
        if truth > hsimple_score(&outcome.table, neg)? {
            better += 1;
        }
    }
    println!(
        "\ntrue fact scores {truth:.3}, beating {better}/{} one-slot corruptions",
        negs.len()
    );
    Ok(())
}
