//! Training the attention encoder and decoder over check-in histories, with
//! pretrained entity vectors underneath, and watching it memorize a small
//! deterministic city.

use hkgnn::asm::{train_model, AsmConfig, PoiContext};
use hkgnn::data::{bin_side_info, generate_synthetic, load_dataset, split_trajectories, SynthSpec};
use hkgnn::embed::{train_kg, KgConfig};
use hkgnn::hkg::{build_hkg, clique_expand, incidence, EntityVocab, FamilyMask};
use hkgnn::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SynthSpec { n_users: 12, n_pois: 8, n_checkins: 700, seed: 21 };
    let [checkins, pois, friendships] = generate_synthetic(&spec, dir.path())?;
    let ds = load_dataset(&checkins, &pois, &friendships)?;
    let split = split_trajectories(&ds, ds.pois.len(), 0.3)?;
    let vocab = EntityVocab::build(&split, &ds.pois)?;
    let (bins, _) = bin_side_info(&ds.pois);
    let hkg = build_hkg(&split, &ds.pois, &bins, &ds.friendships, &vocab, FamilyMask::default())?;
    let adj = clique_expand(&incidence(&hkg.facts, vocab.len())?);
    let ctx = PoiContext::build(&vocab, &ds.pois)?;

    let d = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let kg_cfg = KgConfig { d, alpha: 8, n_negatives: 2, epochs: 30, lr: 0.01, batch_size: 128 };
    let pretrained = train_kg(&hkg.facts, vocab.len(), &kg_cfg, &mut rng)?.table;
    println!("pretrained {} entity vectors of width {d}", vocab.len());

    let cfg = AsmConfig {
        d,
        n_h: 2,
        m: 16,
        dropout: 0.0,
        lambda: 1e-5,
        lr: 1e-3,
        epochs: 25,
        batch_size: 32,
        scale_by_dk: false,
        gat_layers: 1,
        gat_slope: 0.2,
        refine_per_epoch: false,
        early_stop_train_acc: None,
    };
    let outcome = train_model(&split, &vocab, &ctx, &adj, &pretrained, &cfg, &mut rng)?;
    for (e, s) in outcome.epochs.iter().enumerate() {
        if e % 5 == 0 || e + 1 == outcome.epochs.len() {
            match s.val_acc1 {
                Some(v) => println!(
                    "epoch {e:>3}  loss {:.4}  train@1 {:.3}  val@1 {v:.3}",
                    s.train_loss, s.train_acc1
                ),
                None => println!(
                    "epoch {e:>3}  loss {:.4}  train@1 {:.3}",
                    s.train_loss, s.train_acc1
                ),
            }
        }
    }
    println!(
        "kept epoch {} ({})",
        outcome.best_epoch + 1,
        if outcome.stopped_early { "early stop" } else { "best validation" }
    );
    Ok(())
}
