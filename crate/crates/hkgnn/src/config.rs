//! Run configuration.
//!
//! One TOML file drives every pipeline stage. Each section deserializes with
//! `deny_unknown_fields` so a typo fails loudly instead of silently falling
//! back to a default, and [`RunConfig::validate`] names the offending key in
//! its error message. The FNV hash of the canonical TOML serialization is
//! stamped into checkpoints and reports so results can be traced back to the
//! exact settings that produced them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asm::AsmConfig;
use crate::embed::KgConfig;
use crate::error::{Error, Result};
use crate::hkg::Fnv;

/// Settings for every stage of a run, grouped by pipeline phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random choice in the pipeline derives from it.
    pub seed: u64,
    pub data: DataSection,
    pub kg: KgSection,
    pub gnn: GnnSection,
    pub asm: AsmSection,
    pub eval: EvalSection,
}

/// Raw input locations and preprocessing knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub checkins: String,
    pub pois: String,
    pub friendships: String,
    /// Fraction of POIs (by ascending visit count) forming the least-visited
    /// evaluation set.
    pub least_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            checkins: "checkins.txt".to_string(),
            pois: "pois.txt".to_string(),
            friendships: "friendships.txt".to_string(),
            least_fraction: 0.3,
        }
    }
}

/// Knowledge-graph embedding stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgSection {
    /// Embedding width shared by every downstream stage.
    pub d: usize,
    /// Max fact arity; rotation offsets are multiples of d/alpha.
    pub alpha: usize,
    /// Corrupted facts per positive per slot group.
    pub n_negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for KgSection {
    fn default() -> Self {
        let k = KgConfig::default();
        KgSection {
            d: k.d,
            alpha: k.alpha,
            n_negatives: k.n_negatives,
            epochs: k.epochs,
            lr: k.lr,
            batch_size: k.batch_size,
        }
    }
}

/// Graph attention refinement stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnSection {
    /// Zero layers skips refinement entirely.
    pub layers: usize,
    /// Negative-side slope of the attention LeakyReLU.
    pub slope: f64,
}

impl Default for GnnSection {
    fn default() -> Self {
        GnnSection { layers: 2, slope: 0.2 }
    }
}

/// Sequence-model training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsmSection {
    /// Attention heads; must divide the embedding width.
    pub n_h: usize,
    /// History length; longer trajectories keep their most recent positions.
    pub m: usize,
    pub dropout: f64,
    /// L2 penalty weight on trainable parameters.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Scale attention logits by 1/sqrt(d/n_h) instead of 1/sqrt(d).
    pub scale_by_dk: bool,
    /// Freeze embeddings and the refinement stack, refining once up front.
    pub refine_per_epoch: bool,
    /// Stop as soon as train accuracy reaches this threshold.
    pub early_stop_train_acc: Option<f64>,
}

impl Default for AsmSection {
    fn default() -> Self {
        let a = AsmConfig::default();
        AsmSection {
            n_h: a.n_h,
            m: a.m,
            dropout: a.dropout,
            lambda: a.lambda,
            lr: a.lr,
            epochs: a.epochs,
            batch_size: a.batch_size,
            scale_by_dk: a.scale_by_dk,
            refine_per_epoch: a.refine_per_epoch,
            early_stop_train_acc: a.early_stop_train_acc,
        }
    }
}

/// Evaluation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Test examples scored per parallel chunk.
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { batch_size: 64 }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// FNV-1a over the canonical TOML form; any settings change moves it.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(self.to_toml_string().as_bytes());
        h.finish()
    }

    /// Checks every numeric constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        fn fail(key: &str, msg: String) -> Result<()> {
            Err(Error::Config(format!("{key}: {msg}")))
        }
        let lf = self.data.least_fraction;
        if !(0.0..=1.0).contains(&lf) || !lf.is_finite() {
            return fail("data.least_fraction", format!("{lf} outside [0, 1]"));
        }
        if self.kg.d == 0 {
            return fail("kg.d", "must be positive".to_string());
        }
        if self.kg.alpha < 2 {
            return fail("kg.alpha", format!("{} below the minimum arity 2", self.kg.alpha));
        }
        if self.kg.d % self.kg.alpha != 0 {
            return fail("kg.d", format!("{} not divisible by kg.alpha {}", self.kg.d, self.kg.alpha));
        }
        if self.kg.epochs == 0 {
            return fail("kg.epochs", "must be positive".to_string());
        }
        if !(self.kg.lr.is_finite() && self.kg.lr > 0.0) {
            return fail("kg.lr", format!("{} not a positive finite rate", self.kg.lr));
        }
        if self.kg.batch_size == 0 {
            return fail("kg.batch_size", "must be positive".to_string());
        }
        if !(self.gnn.slope > 0.0 && self.gnn.slope < 1.0) {
            return fail("gnn.slope", format!("{} outside (0, 1)", self.gnn.slope));
        }
        if self.asm.n_h == 0 {
            return fail("asm.n_h", "must be positive".to_string());
        }
        if self.kg.d % self.asm.n_h != 0 {
            return fail("asm.n_h", format!("{} does not divide kg.d {}", self.asm.n_h, self.kg.d));
        }
        if self.asm.m == 0 {
            return fail("asm.m", "must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.asm.dropout) {
            return fail("asm.dropout", format!("{} outside [0, 1)", self.asm.dropout));
        }
        if !(self.asm.lambda.is_finite() && self.asm.lambda >= 0.0) {
            return fail("asm.lambda", format!("{} negative or non-finite", self.asm.lambda));
        }
        if !(self.asm.lr.is_finite() && self.asm.lr > 0.0) {
            return fail("asm.lr", format!("{} not a positive finite rate", self.asm.lr));
        }
        if self.asm.epochs == 0 {
            return fail("asm.epochs", "must be positive".to_string());
        }
        if self.asm.batch_size == 0 {
            return fail("asm.batch_size", "must be positive".to_string());
        }
        if let Some(acc) = self.asm.early_stop_train_acc {
            if !(0.0..=1.0).contains(&acc) {
                return fail("asm.early_stop_train_acc", format!("{acc} outside [0, 1]"));
            }
        }
        if self.eval.batch_size == 0 {
            return fail("eval.batch_size", "must be positive".to_string());
        }
        Ok(())
    }

    /// Embedding-stage view of the settings.
    pub fn kg_config(&self) -> KgConfig {
        KgConfig {
            d: self.kg.d,
            alpha: self.kg.alpha,
            n_negatives: self.kg.n_negatives,
            epochs: self.kg.epochs,
            lr: self.kg.lr,
            batch_size: self.kg.batch_size,
        }
    }

    /// Sequence-stage view; width comes from the kg section so the stages
    /// cannot drift apart.
    pub fn asm_config(&self) -> AsmConfig {
        AsmConfig {
            d: self.kg.d,
            n_h: self.asm.n_h,
            m: self.asm.m,
            dropout: self.asm.dropout,
            lambda: self.asm.lambda,
            lr: self.asm.lr,
            epochs: self.asm.epochs,
            batch_size: self.asm.batch_size,
            scale_by_dk: self.asm.scale_by_dk,
            gat_layers: self.gnn.layers,
            gat_slope: self.gnn.slope,
            refine_per_epoch: self.asm.refine_per_epoch,
            early_stop_train_acc: self.asm.early_stop_train_acc,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation_and_match_the_stage_configs() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.kg_config(), KgConfig::default());
        let asm = cfg.asm_config();
        assert_eq!(asm.d, 256);
        assert_eq!(asm.n_h, 4);
        assert_eq!(asm.m, 100);
        assert_eq!(asm.lr, 1e-5);
        assert_eq!(asm.gat_layers, 2);
        assert_eq!(cfg.data.least_fraction, 0.3);
    }

    #[test]
    fn toml_roundtrip_preserves_everything() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.kg.d = 64;
        cfg.kg.alpha = 4;
        cfg.asm.early_stop_train_acc = Some(0.93);
        cfg.data.checkins = "/tmp/c.txt".to_string();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::from_toml_str("[kg]\nwidth = 64\n").unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
        let err = RunConfig::from_toml_str("optimizer = \"adam\"\n").unwrap_err();
        assert!(err.to_string().contains("optimizer"), "{err}");
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg = RunConfig::from_toml_str("[kg]\nd = 64\nalpha = 4\n").unwrap();
        assert_eq!(cfg.kg.d, 64);
        assert_eq!(cfg.kg.epochs, 100);
        assert_eq!(cfg.asm.m, 100);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn validation_errors_name_the_key() {
        let cases: &[(&str, &str)] = &[
            ("[kg]\nd = 60\n", "kg.d"),
            ("[kg]\nlr = 0.0\n", "kg.lr"),
            ("[gnn]\nslope = 1.5\n", "gnn.slope"),
            ("[asm]\nn_h = 3\n", "asm.n_h"),
            ("[asm]\ndropout = 1.0\n", "asm.dropout"),
            ("[asm]\nlambda = -0.1\n", "asm.lambda"),
            ("[data]\nleast_fraction = 1.2\n", "data.least_fraction"),
            ("[eval]\nbatch_size = 0\n", "eval.batch_size"),
            ("[asm]\nearly_stop_train_acc = 1.5\n", "asm.early_stop_train_acc"),
        ];
        for (text, key) in cases {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert!(err.to_string().contains(key), "config {text:?} gave {err}");
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        let mut c = RunConfig::default();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
        let mut d = RunConfig::default();
        d.asm.lr = 1e-4;
        assert_ne!(a.hash(), d.hash());
    }
}
