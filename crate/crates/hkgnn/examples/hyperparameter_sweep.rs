//! One row per value of a single hyperparameter, here the number of
//! refinement layers, with everything else held at the base settings.

use hkgnn::config::RunConfig;
use hkgnn::data::{generate_synthetic, SynthSpec};
use hkgnn::pipeline::{load_prepared, parse_sweep_spec, prepare, render_sweep_table, run_sweep};
use hkgnn::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SynthSpec { n_users: 12, n_pois: 8, n_checkins: 600, seed: 31 };
    let [checkins, pois, friendships] = generate_synthetic(&spec, dir.path())?;
    let out = dir.path().join("prepared");
    prepare(&checkins, &pois, &friendships, 0.3, &out)?;
    let prepared = load_prepared(&out)?;

    let mut cfg = RunConfig::default();
    cfg.seed = 31;
    cfg.kg.d = 32;
    cfg.kg.epochs = 20;
    cfg.kg.batch_size = 128;
    cfg.asm.n_h = 2;
    cfg.asm.m = 16;
    cfg.asm.lr = 1e-3;
    cfg.asm.epochs = 8;
    cfg.eval.batch_size = 32;

    let (key, values) = parse_sweep_spec("gnn.layers=0,1,2")?;
    let rows = run_sweep(&prepared, &cfg, &key, &values)?;
    print!("{}", render_sweep_table(&rows));
    println!("\nzero layers means the sequence model reads raw pretrained vectors");
    Ok(())
}
