//! The whole pipeline on a synthetic city: generate raw files, prepare the
//! artifacts, pretrain fact embeddings, train the sequence model, evaluate
//! both test sets, and ask for a recommendation.

use hkgnn::config::RunConfig;
use hkgnn::data::{generate_synthetic, SynthSpec};
use hkgnn::eval::render_table;
use hkgnn::pipeline::{
    evaluate_stage, load_prepared, prepare, recommend_stage, train_kg_stage, train_stage,
};
use hkgnn::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");

    let spec = SynthSpec { n_users: 20, n_pois: 12, n_checkins: 1500, seed: 7 };
    let [checkins, pois, friendships] = generate_synthetic(&spec, dir.path())?;
    println!("raw files under {}", dir.path().display());

    let out = dir.path().join("prepared");
    let summary = prepare(&checkins, &pois, &friendships, 0.3, &out)?;
    println!("{summary}\n");
    let prepared = load_prepared(&out)?;

    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.kg.d = 32;
    cfg.kg.epochs = 40;
    cfg.kg.batch_size = 128;
    cfg.gnn.layers = 1;
    cfg.asm.n_h = 2;
    cfg.asm.m = 16;
    cfg.asm.lr = 1e-3;
    cfg.asm.epochs = 15;
    cfg.eval.batch_size = 32;

    let (kg_ckpt, losses) = train_kg_stage(&prepared, &cfg)?;
    println!(
        "embedding pretraining: loss {:.4} -> {:.4} over {} epochs",
        losses[0],
        losses[losses.len() - 1],
        losses.len()
    );

    let (ckpt, outcome) = train_stage(&prepared, &kg_ckpt, &cfg)?;
    let best = &outcome.epochs[outcome.best_epoch];
    println!(
        "sequence model: best epoch {} of {}, train Acc@1 {:.3}\n",
        outcome.best_epoch + 1,
        outcome.epochs.len(),
        best.train_acc1
    );

    let standard = evaluate_stage(&prepared, &ckpt, false)?;
    let least = evaluate_stage(&prepared, &ckpt, true)?;
    print!("{}", render_table(&[standard, least]));

    let user = &prepared.archive.users[0];
    let picks = recommend_stage(&prepared, &ckpt, user, "2012-07-06T19:00:00-05:00", 5)?;
    println!("\nFriday 19:00 suggestions for {user}:");
    for (i, s) in picks.iter().enumerate() {
        println!("  {}. {}  (score {:.3})", i + 1, s.poi_id, s.score);
    }
    Ok(())
}
