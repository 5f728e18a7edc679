//! Stage orchestration over persisted artifacts.
//!
//! The command-line tool and the examples both drive the pipeline through
//! these functions: prepare raw files into an archive and a graph artifact,
//! pretrain embeddings, train the sequence model, evaluate, recommend, and
//! run ablation or sweep grids. Every stage derives its randomness from the
//! configured seed plus a stage tag, so reruns are bit-identical and stages
//! cannot entangle their streams.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::DateTime;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::asm::{recommend, train_model, AsmTrainOutcome, PoiContext};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    bin_side_info, load_archive, load_dataset, save_archive, split_trajectories, time_partition,
    Archive, TimeKey,
};
use crate::embed::{train_kg, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, EvalSet};
use crate::gnn::refine_table;
use crate::hkg::{
    build_hkg, clique_expand, incidence, load_graph, save_graph, EntityVocab, FamilyMask, Fnv,
    GraphArtifact,
};
use crate::tensor::Tensor;

pub const ARCHIVE_FILE: &str = "data.bin";
pub const GRAPH_FILE: &str = "graph.bin";

/// What the prepare stage produced, for logging and sanity checks.
#[derive(Clone, Debug, PartialEq)]
pub struct PrepareSummary {
    pub users_kept: usize,
    pub users_removed: usize,
    pub n_pois: usize,
    pub n_checkins: usize,
    pub n_entities: usize,
    pub n_facts: usize,
    pub n_least_visited: usize,
}

impl fmt::Display for PrepareSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "users kept      {}", self.users_kept)?;
        writeln!(f, "users removed   {}", self.users_removed)?;
        writeln!(f, "POIs            {}", self.n_pois)?;
        writeln!(f, "check-ins       {}", self.n_checkins)?;
        writeln!(f, "entities        {}", self.n_entities)?;
        writeln!(f, "facts           {}", self.n_facts)?;
        write!(f, "least-visited   {}", self.n_least_visited)
    }
}

/// The two artifacts every later stage works from.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub archive: Archive,
    pub graph: GraphArtifact,
}

pub fn archive_path(dir: &Path) -> PathBuf {
    dir.join(ARCHIVE_FILE)
}

pub fn graph_path(dir: &Path) -> PathBuf {
    dir.join(GRAPH_FILE)
}

/// Parses the raw files once, splits chronologically, builds the graph, and
/// writes both artifacts under `out_dir`.
pub fn prepare(
    checkins: &Path,
    pois: &Path,
    friendships: &Path,
    least_fraction: f64,
    out_dir: &Path,
) -> Result<PrepareSummary> {
    let ds = load_dataset(checkins, pois, friendships)?;
    let split = split_trajectories(&ds, ds.pois.len(), least_fraction)?;
    let archive =
        Archive { split, pois: ds.pois, friendships: ds.friendships, users: ds.users };

    let vocab = EntityVocab::build(&archive.split, &archive.pois)?;
    let (bins, _) = bin_side_info(&archive.pois);
    let mask = FamilyMask::default();
    let hkg = build_hkg(&archive.split, &archive.pois, &bins, &archive.friendships, &vocab, mask)?;
    let adjacency = clique_expand(&incidence(&hkg.facts, vocab.len())?);
    let graph = GraphArtifact { vocab, hkg, adjacency, mask };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    save_archive(&archive_path(out_dir), &archive)?;
    save_graph(&graph_path(out_dir), &graph)?;

    let summary = PrepareSummary {
        users_kept: archive.split.trajectories.len(),
        users_removed: archive.split.removed_users,
        n_pois: archive.pois.len(),
        n_checkins: archive.split.trajectories.iter().map(|t| t.checkins.len()).sum(),
        n_entities: graph.vocab.len(),
        n_facts: graph.hkg.n_facts(),
        n_least_visited: archive.split.least_visited.len(),
    };
    info!("prepared {} -> {}", checkins.display(), out_dir.display());
    Ok(summary)
}

/// Loads both artifacts and cross-checks that they describe the same data.
pub fn load_prepared(dir: &Path) -> Result<Prepared> {
    let archive = load_archive(&archive_path(dir))?;
    let graph = load_graph(&graph_path(dir))?;
    let rebuilt = EntityVocab::build(&archive.split, &archive.pois)?;
    if rebuilt.hash() != graph.vocab.hash() {
        return Err(Error::Invalid(format!(
            "{}: archive and graph artifact disagree about the vocabulary; re-run prepare",
            dir.display()
        )));
    }
    Ok(Prepared { archive, graph })
}

/// Seed for one stage: the run seed folded with a stage tag, so stages draw
/// from unrelated streams while staying reproducible.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Fnv::new();
    h.write(&seed.to_le_bytes());
    h.write(stage.as_bytes());
    h.finish()
}

/// Short hex identifier tying a report to the code and settings that made
/// it: crate version folded with the config hash.
pub fn build_id(cfg: &RunConfig) -> String {
    let mut h = Fnv::new();
    h.write(env!("CARGO_PKG_VERSION").as_bytes());
    h.write(&cfg.hash().to_le_bytes());
    format!("{:012x}", h.finish() & 0xffff_ffff_ffff)
}

/// Pretrains the embedding table on the fact set; the returned checkpoint
/// holds no refinement stack or sequence model yet.
pub fn train_kg_stage(prepared: &Prepared, cfg: &RunConfig) -> Result<(Checkpoint, Vec<f64>)> {
    cfg.validate()?;
    let widest = prepared.graph.hkg.facts.iter().map(|f| f.arity()).max().unwrap_or(0);
    if widest > cfg.kg.alpha {
        return Err(Error::Config(format!(
            "kg.alpha: {} slots cannot hold a fact of arity {widest}; raise kg.alpha",
            cfg.kg.alpha
        )));
    }
    let vocab = &prepared.graph.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, "train-kg"));
    let outcome = train_kg(&prepared.graph.hkg.facts, vocab.len(), &cfg.kg_config(), &mut rng)?;
    if let Some(epoch) = outcome.diverged_at {
        return Err(Error::Train(format!(
            "embedding loss went non-finite at epoch {epoch}; lower kg.lr or raise kg.batch_size"
        )));
    }
    let ckpt = Checkpoint {
        config: cfg.clone(),
        vocab_hash: vocab.hash(),
        table: outcome.table,
        stack: None,
        model: None,
    };
    ckpt.validate()?;
    Ok((ckpt, outcome.epoch_losses))
}

fn check_vocab(prepared: &Prepared, ckpt: &Checkpoint) -> Result<()> {
    let here = prepared.graph.vocab.hash();
    if ckpt.vocab_hash != here {
        return Err(Error::Checkpoint(format!(
            "checkpoint vocabulary {:016x} does not match the prepared data {here:016x}",
            ckpt.vocab_hash
        )));
    }
    Ok(())
}

/// Trains the refinement stack and sequence model on top of a pretrained
/// embedding checkpoint, returning the full checkpoint.
pub fn train_stage(
    prepared: &Prepared,
    kg: &Checkpoint,
    cfg: &RunConfig,
) -> Result<(Checkpoint, AsmTrainOutcome)> {
    cfg.validate()?;
    check_vocab(prepared, kg)?;
    if kg.table.entities.cols() != cfg.kg.d {
        return Err(Error::Config(format!(
            "kg.d: {} does not match the embedding checkpoint width {}",
            cfg.kg.d,
            kg.table.entities.cols()
        )));
    }
    let vocab = &prepared.graph.vocab;
    let ctx = PoiContext::build(vocab, &prepared.archive.pois)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, "train-asm"));
    let outcome = train_model(
        &prepared.archive.split,
        vocab,
        &ctx,
        &prepared.graph.adjacency,
        &kg.table,
        &cfg.asm_config(),
        &mut rng,
    )?;
    let ckpt = Checkpoint {
        config: cfg.clone(),
        vocab_hash: vocab.hash(),
        table: outcome.table.clone(),
        stack: Some(outcome.stack.clone()),
        model: Some(outcome.model.clone()),
    };
    ckpt.validate()?;
    Ok((ckpt, outcome))
}

/// Runs the checkpoint's refinement stack over its entity table.
pub fn refined_entities(prepared: &Prepared, ckpt: &Checkpoint) -> Result<Tensor> {
    let stack = ckpt
        .stack
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("no refinement stack; run the train stage".to_string()))?;
    Ok(refine_table(&ckpt.table.entities, stack, &prepared.graph.adjacency)?.h2)
}

/// Scores every test example of the chosen set with the checkpointed model.
pub fn evaluate_stage(prepared: &Prepared, ckpt: &Checkpoint, least: bool) -> Result<EvalReport> {
    check_vocab(prepared, ckpt)?;
    let model = ckpt
        .model
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("no sequence model; run the train stage".to_string()))?;
    let h2 = refined_entities(prepared, ckpt)?;
    let ctx = PoiContext::build(&prepared.graph.vocab, &prepared.archive.pois)?;
    let set = if least { EvalSet::LeastVisited } else { EvalSet::Standard };
    evaluate(
        &prepared.archive.split,
        &prepared.graph.vocab,
        &ctx,
        model,
        &h2,
        ckpt.config.asm.m,
        ckpt.config.eval.batch_size,
        set,
    )
}

/// One scored suggestion, with the POI's raw dataset id attached.
#[derive(Clone, Debug)]
pub struct Suggestion {
    pub poi: u32,
    pub poi_id: String,
    pub score: f64,
}

/// Parses an RFC 3339 time like `2012-07-04T18:30:00+02:00`; the offset
/// decides the local calendar the model sees.
pub fn parse_query_time(s: &str) -> Result<TimeKey> {
    let dt = DateTime::parse_from_rfc3339(s).map_err(|e| {
        Error::Invalid(format!("query time {s:?}: {e}; expected RFC 3339 with offset"))
    })?;
    Ok(time_partition(dt.timestamp(), dt.offset().local_minus_utc() / 60))
}

/// Top-k next-POI suggestions for a raw user id at a query time.
pub fn recommend_stage(
    prepared: &Prepared,
    ckpt: &Checkpoint,
    user_id: &str,
    time: &str,
    k: usize,
) -> Result<Vec<Suggestion>> {
    check_vocab(prepared, ckpt)?;
    let model = ckpt
        .model
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("no sequence model; run the train stage".to_string()))?;
    let user = prepared
        .archive
        .users
        .iter()
        .position(|u| u == user_id)
        .ok_or_else(|| Error::Invalid(format!("user {user_id:?} is not in the dataset")))?;
    let query_time = parse_query_time(time)?;
    let h2 = refined_entities(prepared, ckpt)?;
    let ctx = PoiContext::build(&prepared.graph.vocab, &prepared.archive.pois)?;
    let ranked = recommend(
        &prepared.archive.split,
        &prepared.graph.vocab,
        &ctx,
        model,
        &h2,
        user as u32,
        query_time,
        k,
        ckpt.config.asm.m,
    )?;
    Ok(ranked
        .into_iter()
        .map(|r| Suggestion {
            poi: r.poi,
            poi_id: prepared.archive.pois[r.poi as usize].id.clone(),
            score: r.score,
        })
        .collect())
}

/// Model variants for the component study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    Full,
    /// Random entity vectors instead of pretrained ones.
    NoKgInit,
    /// No refinement layers; raw embeddings feed the sequence model.
    NoRefine,
    NoMobility,
    NoSocial,
    NoSideInfo,
}

pub const ALL_ABLATIONS: [AblationVariant; 6] = [
    AblationVariant::Full,
    AblationVariant::NoKgInit,
    AblationVariant::NoRefine,
    AblationVariant::NoMobility,
    AblationVariant::NoSocial,
    AblationVariant::NoSideInfo,
];

impl AblationVariant {
    pub fn label(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoKgInit => "w/o pretrained embeddings",
            AblationVariant::NoRefine => "w/o graph refinement",
            AblationVariant::NoMobility => "w/o mobility facts",
            AblationVariant::NoSocial => "w/o social facts",
            AblationVariant::NoSideInfo => "w/o side-info facts",
        }
    }

    fn family_mask(&self) -> Option<FamilyMask> {
        let full = FamilyMask::default();
        match self {
            AblationVariant::NoMobility => Some(FamilyMask { mobility: false, ..full }),
            AblationVariant::NoSocial => Some(FamilyMask { social: false, ..full }),
            AblationVariant::NoSideInfo => Some(FamilyMask { side_info: false, ..full }),
            _ => None,
        }
    }
}

/// One ablation result: the variant, its selected-epoch train accuracy, and
/// the standard test-set report.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub train_acc1: f64,
    pub report: EvalReport,
}

/// Swaps relation families out of the graph, rebuilding the adjacency; the
/// vocabulary (and so every entity id) stays fixed.
fn masked_prepared(prepared: &Prepared, mask: FamilyMask) -> Result<Prepared> {
    let (bins, _) = bin_side_info(&prepared.archive.pois);
    let hkg = build_hkg(
        &prepared.archive.split,
        &prepared.archive.pois,
        &bins,
        &prepared.archive.friendships,
        &prepared.graph.vocab,
        mask,
    )?;
    let adjacency = clique_expand(&incidence(&hkg.facts, prepared.graph.vocab.len())?);
    Ok(Prepared {
        archive: prepared.archive.clone(),
        graph: GraphArtifact {
            vocab: prepared.graph.vocab.clone(),
            hkg,
            adjacency,
            mask,
        },
    })
}

/// Trains and evaluates one variant end to end under the given settings.
pub fn run_ablation(
    prepared: &Prepared,
    cfg: &RunConfig,
    variant: AblationVariant,
) -> Result<AblationRow> {
    cfg.validate()?;
    let prepared = match variant.family_mask() {
        Some(mask) => &masked_prepared(prepared, mask)?,
        None => prepared,
    };
    let mut cfg = cfg.clone();
    if variant == AblationVariant::NoRefine {
        cfg.gnn.layers = 0;
    }

    let kg_ckpt = if variant == AblationVariant::NoKgInit {
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, "random-init"));
        let vocab = &prepared.graph.vocab;
        let table = EmbeddingTable::new_random(vocab.len(), cfg.kg.d, cfg.kg.alpha, &mut rng)?;
        Checkpoint {
            config: cfg.clone(),
            vocab_hash: vocab.hash(),
            table,
            stack: None,
            model: None,
        }
    } else {
        train_kg_stage(prepared, &cfg)?.0
    };

    let (ckpt, outcome) = train_stage(prepared, &kg_ckpt, &cfg)?;
    let report = evaluate_stage(prepared, &ckpt, false)?;
    info!("ablation {}: test Acc@1 {:.4}", variant.label(), report.acc1);
    Ok(AblationRow {
        label: variant.label().to_string(),
        train_acc1: outcome.epochs[outcome.best_epoch].train_acc1,
        report,
    })
}

pub fn run_ablations(
    prepared: &Prepared,
    cfg: &RunConfig,
    variants: &[AblationVariant],
) -> Result<Vec<AblationRow>> {
    variants.iter().map(|&v| run_ablation(prepared, cfg, v)).collect()
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "variant                      train@1  Acc@1   Acc@5   Acc@10  MRR     AR\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:<28} {:>7.4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>7.2}\n",
            r.label, r.train_acc1, r.report.acc1, r.report.acc5, r.report.acc10, r.report.mrr,
            r.report.ar
        ));
    }
    out
}

/// Applies one sweep assignment to a config. Accepts short aliases for the
/// common knobs and dotted section keys for the rest.
pub fn apply_param(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
    }
    match key {
        "d" | "kg.d" => cfg.kg.d = parse(key, value)?,
        "alpha" | "kg.alpha" => cfg.kg.alpha = parse(key, value)?,
        "negatives" | "kg.n_negatives" => cfg.kg.n_negatives = parse(key, value)?,
        "kg.epochs" => cfg.kg.epochs = parse(key, value)?,
        "kg.lr" => cfg.kg.lr = parse(key, value)?,
        "kg.batch_size" => cfg.kg.batch_size = parse(key, value)?,
        "layers" | "gnn.layers" => cfg.gnn.layers = parse(key, value)?,
        "slope" | "gnn.slope" => cfg.gnn.slope = parse(key, value)?,
        "heads" | "asm.n_h" => cfg.asm.n_h = parse(key, value)?,
        "m" | "asm.m" => cfg.asm.m = parse(key, value)?,
        "dropout" | "asm.dropout" => cfg.asm.dropout = parse(key, value)?,
        "lambda" | "asm.lambda" => cfg.asm.lambda = parse(key, value)?,
        "lr" | "asm.lr" => cfg.asm.lr = parse(key, value)?,
        "epochs" | "asm.epochs" => cfg.asm.epochs = parse(key, value)?,
        "batch" | "asm.batch_size" => cfg.asm.batch_size = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        _ => return Err(Error::Config(format!("unknown sweep parameter {key:?}"))),
    }
    Ok(())
}

/// `name=v1,v2,v3` into the key and its values.
pub fn parse_sweep_spec(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep spec {spec:?} is not name=v1,v2,...")))?;
    let values: Vec<String> =
        values.split(',').filter(|v| !v.is_empty()).map(str::to_string).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("sweep spec {spec:?} lists no values")));
    }
    Ok((key.to_string(), values))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub key: String,
    pub value: String,
    pub train_acc1: f64,
    pub best_epoch: usize,
    pub report: EvalReport,
}

/// Full pipeline once per value of one parameter.
pub fn run_sweep(
    prepared: &Prepared,
    base: &RunConfig,
    key: &str,
    values: &[String],
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|value| {
            let mut cfg = base.clone();
            apply_param(&mut cfg, key, value)?;
            cfg.validate()?;
            let (kg_ckpt, _) = train_kg_stage(prepared, &cfg)?;
            let (ckpt, outcome) = train_stage(prepared, &kg_ckpt, &cfg)?;
            let report = evaluate_stage(prepared, &ckpt, false)?;
            info!("sweep {key}={value}: test Acc@1 {:.4}", report.acc1);
            Ok(SweepRow {
                key: key.to_string(),
                value: value.clone(),
                train_acc1: outcome.epochs[outcome.best_epoch].train_acc1,
                best_epoch: outcome.best_epoch,
                report,
            })
        })
        .collect()
}

pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("value        train@1  best-ep  Acc@1   Acc@5   Acc@10  MRR     AR\n");
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>7.4}  {:>7}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>7.2}\n",
            format!("{}={}", r.key, r.value),
            r.train_acc1,
            r.best_epoch,
            r.report.acc1,
            r.report.acc5,
            r.report.acc10,
            r.report.mrr,
            r.report.ar
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{load_checkpoint_expecting, save_checkpoint};
    use crate::data::{generate_synthetic, SynthSpec};
    use tempfile::tempdir;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.seed = 11;
        cfg.kg.d = 16;
        cfg.kg.alpha = 8;
        cfg.kg.epochs = 3;
        cfg.kg.batch_size = 64;
        cfg.kg.n_negatives = 2;
        cfg.gnn.layers = 1;
        cfg.asm.n_h = 2;
        cfg.asm.m = 4;
        cfg.asm.dropout = 0.0;
        cfg.asm.lr = 1e-3;
        cfg.asm.epochs = 2;
        cfg.asm.batch_size = 16;
        cfg.eval.batch_size = 8;
        cfg
    }

    fn prepared_fixture(dir: &Path) -> Prepared {
        let spec = SynthSpec { n_users: 8, n_pois: 6, n_checkins: 160, seed: 4 };
        let [c, p, f] = generate_synthetic(&spec, dir).unwrap();
        let raw_summary = prepare(&c, &p, &f, 0.3, &dir.join("prepared")).unwrap();
        assert!(raw_summary.users_kept > 0);
        load_prepared(&dir.join("prepared")).unwrap()
    }

    #[test]
    fn prepare_writes_artifacts_that_load_back() {
        let dir = tempdir().unwrap();
        let prepared = prepared_fixture(dir.path());
        assert_eq!(prepared.archive.pois.len(), 6);
        assert_eq!(
            prepared.graph.vocab.hash(),
            EntityVocab::build(&prepared.archive.split, &prepared.archive.pois).unwrap().hash()
        );
        assert!(prepared.graph.hkg.n_facts() > 0);
    }

    #[test]
    fn full_pipeline_runs_and_checkpoints_reproduce_metrics() {
        let dir = tempdir().unwrap();
        let prepared = prepared_fixture(dir.path());
        let cfg = tiny_config();

        let (kg_ckpt, losses) = train_kg_stage(&prepared, &cfg).unwrap();
        assert_eq!(losses.len(), cfg.kg.epochs);
        assert!(kg_ckpt.model.is_none());

        let (ckpt, outcome) = train_stage(&prepared, &kg_ckpt, &cfg).unwrap();
        assert_eq!(outcome.epochs.len() <= cfg.asm.epochs, true);
        let report = evaluate_stage(&prepared, &ckpt, false).unwrap();
        assert_eq!(report.n_candidates, 6);
        assert!(!report.ranks.is_empty());

        let path = dir.path().join("full.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint_expecting(&path, prepared.graph.vocab.hash()).unwrap();
        let report2 = evaluate_stage(&prepared, &loaded, false).unwrap();
        assert_eq!(report.acc1, report2.acc1);
        assert_eq!(report.mrr, report2.mrr);
        assert_eq!(report.ar, report2.ar);
        assert_eq!(report.ranks, report2.ranks);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let dir = tempdir().unwrap();
        let prepared = prepared_fixture(dir.path());
        let cfg = tiny_config();
        let (a, la) = train_kg_stage(&prepared, &cfg).unwrap();
        let (b, lb) = train_kg_stage(&prepared, &cfg).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.table.entities.data(), b.table.entities.data());
        let (ca, oa) = train_stage(&prepared, &a, &cfg).unwrap();
        let (cb, ob) = train_stage(&prepared, &b, &cfg).unwrap();
        assert_eq!(oa.epochs, ob.epochs);
        assert_eq!(ca.table.entities.data(), cb.table.entities.data());
    }

    #[test]
    fn recommend_stage_resolves_raw_ids() {
        let dir = tempdir().unwrap();
        let prepared = prepared_fixture(dir.path());
        let cfg = tiny_config();
        let (kg_ckpt, _) = train_kg_stage(&prepared, &cfg).unwrap();
        let (ckpt, _) = train_stage(&prepared, &kg_ckpt, &cfg).unwrap();

        let user = prepared.archive.users[prepared.archive.split.trajectories[0].user as usize]
            .clone();
        let out = recommend_stage(&prepared, &ckpt, &user, "2012-07-04T18:30:00+02:00", 3)
            .unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        for s in &out {
            assert_eq!(prepared.archive.pois[s.poi as usize].id, s.poi_id);
        }
        let err = recommend_stage(&prepared, &ckpt, "nobody", "2012-07-04T18:30:00+02:00", 3)
            .unwrap_err();
        assert!(err.to_string().contains("nobody"), "{err}");
        let err = recommend_stage(&prepared, &ckpt, &user, "yesterday", 3).unwrap_err();
        assert!(err.to_string().contains("RFC 3339"), "{err}");
    }

    #[test]
    fn query_time_parses_through_the_local_calendar() {
        let t = parse_query_time("2012-07-04T18:30:00+02:00").unwrap();
        let dt = DateTime::parse_from_rfc3339("2012-07-04T18:30:00+02:00").unwrap();
        assert_eq!(t, time_partition(dt.timestamp(), 120));
        assert_eq!(t.t_m, 7);
        assert_eq!(t.t_y, 2012);
    }

    #[test]
    fn ablation_variants_change_what_they_claim() {
        let dir = tempdir().unwrap();
        let prepared = prepared_fixture(dir.path());

        let masked = masked_prepared(&prepared, FamilyMask { mobility: false, ..Default::default() })
            .unwrap();
        assert_eq!(masked.graph.vocab.hash(), prepared.graph.vocab.hash());
        assert!(masked.graph.hkg.n_facts() < prepared.graph.hkg.n_facts());
        assert_eq!(masked.graph.hkg.relation_counts[0], 0);

        let cfg = tiny_config();
        let row = run_ablation(&prepared, &cfg, AblationVariant::NoRefine).unwrap();
        assert_eq!(row.label, "w/o graph refinement");
        let row = run_ablation(&prepared, &cfg, AblationVariant::NoKgInit).unwrap();
        assert!(row.report.ar >= 1.0);
    }

    #[test]
    fn sweep_applies_parameters_and_reports_per_value() {
        let dir = tempdir().unwrap();
        let prepared = prepared_fixture(dir.path());
        let mut cfg = tiny_config();
        cfg.asm.epochs = 1;
        cfg.kg.epochs = 1;

        let (key, values) = parse_sweep_spec("layers=1,2").unwrap();
        let rows = run_sweep(&prepared, &cfg, &key, &values).unwrap();
        assert_eq!(rows.len(), 2);
        let table = render_sweep_table(&rows);
        assert!(table.contains("layers=1") && table.contains("layers=2"), "{table}");

        let mut c = tiny_config();
        apply_param(&mut c, "d", "64").unwrap();
        assert_eq!(c.kg.d, 64);
        apply_param(&mut c, "asm.lr", "0.01").unwrap();
        assert_eq!(c.asm.lr, 0.01);
        let err = apply_param(&mut c, "window", "9").unwrap_err();
        assert!(err.to_string().contains("window"), "{err}");
        assert!(parse_sweep_spec("layers").is_err());
        assert!(parse_sweep_spec("layers=").is_err());
    }

    #[test]
    fn build_id_is_stable_but_config_sensitive() {
        let a = build_id(&tiny_config());
        let b = build_id(&tiny_config());
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        let mut cfg = tiny_config();
        cfg.seed = 999;
        assert_ne!(a, build_id(&cfg));
    }
}
