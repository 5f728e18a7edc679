//! The attention sequence model: check-in encoding, knowledge-aware
//! self-attention over each user's history, time-conditioned candidate
//! encoding, cross-attention from candidates to history, and inner-product
//! matching scores with a cross-entropy objective.

mod batch;
mod model;
mod train;

pub use batch::{assemble_batch, CheckinBatch, PoiContext, IDS_PER_POSITION};
pub use model::{
    encode_checkins, kaae_forward, matching_scores, model_forward, multihead, poi_loss,
    sffn_forward, staad_forward, time_encode_pois, AsmModel, AsmNodes, AttentionBlock, BlockNodes,
    Mode, Sffn, SffnNodes,
};
pub use train::{
    eval_scores, recommend, train_model, AsmConfig, AsmTrainOutcome, EpochStats, Recommendation,
};
