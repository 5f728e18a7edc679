//! Removing one component at a time: pretrained embeddings, the refinement
//! layers, and each relation family, with the full model as the baseline.

use hkgnn::config::RunConfig;
use hkgnn::data::{generate_synthetic, SynthSpec};
use hkgnn::pipeline::{
    load_prepared, prepare, render_ablation_table, run_ablations, ALL_ABLATIONS,
};
use hkgnn::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SynthSpec { n_users: 15, n_pois: 10, n_checkins: 900, seed: 13 };
    let [checkins, pois, friendships] = generate_synthetic(&spec, dir.path())?;
    let out = dir.path().join("prepared");
    prepare(&checkins, &pois, &friendships, 0.3, &out)?;
    let prepared = load_prepared(&out)?;

    let mut cfg = RunConfig::default();
    cfg.seed = 13;
    cfg.kg.d = 32;
    cfg.kg.epochs = 30;
    cfg.kg.batch_size = 128;
    cfg.gnn.layers = 1;
    cfg.asm.n_h = 2;
    cfg.asm.m = 16;
    cfg.asm.lr = 1e-3;
    cfg.asm.epochs = 10;
    cfg.eval.batch_size = 32;

    println!("training {} variants, a few minutes of patience...\n", ALL_ABLATIONS.len());
    let rows = run_ablations(&prepared, &cfg, &ALL_ABLATIONS)?;
    print!("{}", render_ablation_table(&rows));
    Ok(())
}
