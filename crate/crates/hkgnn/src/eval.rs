//! Test-set evaluation: per-example ranks of the true next POI under the
//! trained scorer, aggregated into Acc@{1,5,10}, MRR, and AR, over either
//! the full test split or the least-visited subset. Batches score in
//! parallel against read-only artifacts; assembly stays in example order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::{assemble_batch, eval_scores, AsmModel, PoiContext};
use crate::data::{build_sequences, DatasetSplit, SplitPart};
use crate::error::{Error, Result};
use crate::hkg::EntityVocab;
use crate::metrics::{acc_at_k, average_rank, mrr, rank_of};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSet {
    Standard,
    LeastVisited,
}

impl EvalSet {
    pub fn label(&self) -> &'static str {
        match self {
            EvalSet::Standard => "standard",
            EvalSet::LeastVisited => "least-visited",
        }
    }
}

/// One test example's outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub user: u32,
    pub label_poi: u32,
    pub rank: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub set: EvalSet,
    pub n_candidates: usize,
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub mrr: f64,
    pub ar: f64,
    pub ranks: Vec<RankRecord>,
}

/// Aggregate a rank list into the report metrics.
pub fn summarize(set: EvalSet, n_candidates: usize, ranks: Vec<RankRecord>) -> Result<EvalReport> {
    let bare: Vec<u32> = ranks.iter().map(|r| r.rank).collect();
    Ok(EvalReport {
        set,
        n_candidates,
        acc1: acc_at_k(&bare, 1)?,
        acc5: acc_at_k(&bare, 5)?,
        acc10: acc_at_k(&bare, 10)?,
        mrr: mrr(&bare)?,
        ar: average_rank(&bare)?,
        ranks,
    })
}

/// Rank every test example of the chosen set. `h2` carries the refined (or
/// deliberately unrefined) embeddings; batches run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    split: &DatasetSplit,
    vocab: &EntityVocab,
    ctx: &PoiContext,
    model: &AsmModel,
    h2: &Tensor,
    m: usize,
    batch_size: usize,
    set: EvalSet,
) -> Result<EvalReport> {
    if batch_size == 0 {
        return Err(Error::Invalid("zero evaluation batch size".to_string()));
    }
    let mut examples = build_sequences(split, m, SplitPart::Test)?;
    if set == EvalSet::LeastVisited {
        examples.retain(|e| split.is_least_visited(e.label_poi));
    }
    if examples.is_empty() {
        return Err(Error::Invalid(format!("empty test set ({})", set.label())));
    }
    let poi_entities = ctx.poi_entities();
    let n = poi_entities.len();
    let per_batch: Vec<Vec<RankRecord>> = examples
        .par_chunks(batch_size)
        .map(|chunk| -> Result<Vec<RankRecord>> {
            let batch = assemble_batch(chunk, vocab, ctx, m)?;
            let scores = eval_scores(&batch, model, h2, &poi_entities)?;
            chunk
                .iter()
                .enumerate()
                .map(|(i, ex)| {
                    let rank = rank_of(&scores[i * n..(i + 1) * n], ex.label_poi as usize)?;
                    Ok(RankRecord { user: ex.user, label_poi: ex.label_poi, rank })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    summarize(set, n, per_batch.into_iter().flatten().collect())
}

/// Fixed-width table over the reported sets, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "set            examples  Acc@1   Acc@5   Acc@10  MRR     AR\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{:<14} {:>8}  {:.4}  {:.4}  {:.4}  {:.4}  {:.2}\n",
            r.set.label(),
            r.ranks.len(),
            r.acc1,
            r.acc5,
            r.acc10,
            r.mrr,
            r.ar
        ));
    }
    out
}

/// One flat key-value JSON document for regression diffs. Deliberately
/// carries no timing, so identical runs serialize identically.
pub fn report_json(r: &EvalReport, config_hash: u64, build_id: &str) -> String {
    serde_json::json!({
        "set": r.set.label(),
        "examples": r.ranks.len(),
        "candidates": r.n_candidates,
        "acc1": r.acc1,
        "acc5": r.acc5,
        "acc10": r.acc10,
        "mrr": r.mrr,
        "ar": r.ar,
        "config_hash": format!("{config_hash:016x}"),
        "build_id": build_id,
    })
    .to_string()
}

/// Per-example ranks, one JSON object per line.
pub fn ranks_jsonl(r: &EvalReport) -> String {
    let mut out = String::new();
    for rec in &r.ranks {
        out.push_str(&serde_json::to_string(rec).expect("rank record serializes"));
        out.push('\n');
    }
    out
}

/// Parse a ranks file back into records.
pub fn parse_ranks_jsonl(text: &str) -> Result<Vec<RankRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Invalid(format!("bad rank record {l:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{bin_side_info, split_counts, Checkin, PoiRecord, UserTrajectory};
    use crate::embed::EmbeddingTable;
    use crate::gnn::{refine_table, GatStack};
    use crate::hkg::{build_hkg, clique_expand, incidence, FamilyMask};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poi_record(id: &str, lat: f64, lon: f64) -> PoiRecord {
        PoiRecord {
            id: id.to_string(),
            lat,
            lon,
            cat1: Some("Food".to_string()),
            cat2: vec![],
            rating: Some(4.0),
            n_comments: None,
            n_likes: None,
            n_photos: None,
            price_tier: Some(2),
            contacts: vec![],
        }
    }

    struct Fixture {
        split: DatasetSplit,
        vocab: EntityVocab,
        ctx: PoiContext,
        model: AsmModel,
        h2: Tensor,
    }

    fn fixture(least: Vec<u32>) -> Fixture {
        let pois = vec![
            poi_record("a", 40.0, -74.0),
            poi_record("b", 40.1, -74.1),
            poi_record("c", 41.0, -73.0),
        ];
        let mut trajectories = Vec::new();
        for user in 0..4u32 {
            let checkins: Vec<Checkin> = (0..12)
                .map(|i| Checkin {
                    user,
                    poi: ((i + user as usize) % 3) as u32,
                    timestamp: 1_325_462_400 + (user as i64) * 977 + i as i64 * 7200,
                    tz_offset_minutes: 0,
                })
                .collect();
            let (n_train, n_val, _) = split_counts(12);
            trajectories.push(UserTrajectory { user, checkins, n_train, n_val });
        }
        let split = DatasetSplit {
            trajectories,
            least_fraction: if least.is_empty() { 0.0 } else { 0.3 },
            least_visited: least,
            removed_users: 0,
        };
        let vocab = EntityVocab::build(&split, &pois).unwrap();
        let ctx = PoiContext::build(&vocab, &pois).unwrap();
        let (bins, _) = bin_side_info(&pois);
        let hkg = build_hkg(&split, &pois, &bins, &[], &vocab, FamilyMask::default()).unwrap();
        let adj = clique_expand(&incidence(&hkg.facts, vocab.len()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let table = EmbeddingTable::new_random(vocab.len(), 8, 8, &mut rng).unwrap();
        let stack = GatStack::new_random(8, 1, 0.2, &mut rng);
        let model = AsmModel::new_random(8, 2, 0.0, false, &mut rng).unwrap();
        let h2 = refine_table(&table.entities, &stack, &adj).unwrap().h2;
        Fixture { split, vocab, ctx, model, h2 }
    }

    fn run(f: &Fixture, set: EvalSet) -> Result<EvalReport> {
        evaluate(&f.split, &f.vocab, &f.ctx, &f.model, &f.h2, 4, 2, set)
    }

    #[test]
    fn standard_set_covers_every_test_example() {
        let f = fixture(vec![]);
        let report = run(&f, EvalSet::Standard).unwrap();
        // 12 check-ins per user leave 3 test positions each.
        assert_eq!(report.ranks.len(), 12);
        assert!(report.ranks.iter().all(|r| r.rank >= 1 && r.rank <= 3));
        assert!(report.acc1 <= report.acc5 && report.acc5 <= report.acc10);
    }

    #[test]
    fn least_visited_keeps_only_matching_labels() {
        let f = fixture(vec![1]);
        let report = run(&f, EvalSet::LeastVisited).unwrap();
        assert!(!report.ranks.is_empty());
        assert!(report.ranks.iter().all(|r| r.label_poi == 1));
        let standard = run(&f, EvalSet::Standard).unwrap();
        assert!(report.ranks.len() < standard.ranks.len());
    }

    #[test]
    fn empty_least_set_is_an_explicit_error() {
        let f = fixture(vec![]);
        let err = run(&f, EvalSet::LeastVisited).unwrap_err();
        assert!(err.to_string().contains("empty test set"));
    }

    #[test]
    fn parallel_evaluation_is_deterministic() {
        let f = fixture(vec![]);
        let a = run(&f, EvalSet::Standard).unwrap();
        let b = run(&f, EvalSet::Standard).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn persisted_ranks_reproduce_the_metrics() {
        let f = fixture(vec![]);
        let report = run(&f, EvalSet::Standard).unwrap();
        let text = ranks_jsonl(&report);
        let parsed = parse_ranks_jsonl(&text).unwrap();
        assert_eq!(parsed, report.ranks);
        let again = summarize(EvalSet::Standard, report.n_candidates, parsed).unwrap();
        assert_eq!(again.acc1, report.acc1);
        assert_eq!(again.mrr, report.mrr);
        assert_eq!(again.ar, report.ar);
    }

    #[test]
    fn report_json_is_flat_and_stable() {
        let f = fixture(vec![]);
        let report = run(&f, EvalSet::Standard).unwrap();
        let a = report_json(&report, 0xdead_beef, "v0.1.0-abc123");
        let b = report_json(&report, 0xdead_beef, "v0.1.0-abc123");
        assert_eq!(a, b);
        let value: serde_json::Value = serde_json::from_str(&a).unwrap();
        let obj = value.as_object().unwrap();
        assert!(obj.values().all(|v| !v.is_object() && !v.is_array()));
        assert_eq!(obj["set"], "standard");
        assert_eq!(obj["config_hash"], "00000000deadbeef");
    }

    #[test]
    fn batch_size_covers_ragged_tails() {
        let f = fixture(vec![]);
        let small = evaluate(&f.split, &f.vocab, &f.ctx, &f.model, &f.h2, 4, 5, EvalSet::Standard)
            .unwrap();
        let big = evaluate(&f.split, &f.vocab, &f.ctx, &f.model, &f.h2, 4, 64, EvalSet::Standard)
            .unwrap();
        assert_eq!(small.ranks, big.ranks);
    }
}
