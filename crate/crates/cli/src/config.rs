//! Experiment configuration as a flat map of dotted keys.

use std::collections::BTreeMap;
use std::path::Path;

use anchormt::baselines::embeddings::SgnsConfig;
use anchormt::model::ModelConfig;
use anchormt::pretraining::AcpConfig;
use anchormt::synth::SynthSpec;
use anchormt::training::AtConfig;
use anchormt::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; above 1 enables data-parallel training and decoding.
    pub jobs: usize,
    pub corpus_max_sentences: Option<usize>,
    /// Case-insensitive dictionary lookup.
    pub corpus_lowercase: bool,
    pub bpe_merges: usize,
    pub model: ModelConfig,
    pub at: AtConfig,
    pub acp: AcpConfig,
    pub eval_ks: Vec<usize>,
    pub synth: SynthSpec,
    pub sgns: SgnsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            jobs: 1,
            corpus_max_sentences: None,
            corpus_lowercase: false,
            bpe_merges: 2000,
            // Vocabulary size comes from the codec at run time.
            model: ModelConfig::desk(0),
            at: AtConfig::default(),
            acp: AcpConfig::default(),
            eval_ks: vec![1, 5, 10],
            synth: SynthSpec::default(),
            sgns: SgnsConfig::default(),
        }
    }
}

fn put<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config values serialize")
}

fn take<T: DeserializeOwned>(slot: &mut T, key: &str, v: &Value) -> Result<(), Error> {
    *slot = serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("{key}: {e}")))?;
    Ok(())
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        impl ExperimentConfig {
            pub fn to_flat(&self) -> BTreeMap<String, Value> {
                let mut m = BTreeMap::new();
                $(m.insert($key.to_owned(), put(&self.$($field).+));)*
                m
            }

            pub fn set(&mut self, key: &str, v: &Value) -> Result<(), Error> {
                match key {
                    $($key => take(&mut self.$($field).+, key, v),)*
                    _ => Err(Error::Config(format!("unknown key {key}"))),
                }
            }
        }
    };
}

keys! {
    "seed" => seed;
    "jobs" => jobs;
    "corpus.max_sentences" => corpus_max_sentences;
    "corpus.lowercase" => corpus_lowercase;
    "bpe.merges" => bpe_merges;
    "model.num_layers" => model.num_layers;
    "model.model_dim" => model.model_dim;
    "model.ff_dim" => model.ff_dim;
    "model.num_heads" => model.num_heads;
    "model.max_len" => model.max_len;
    "model.dropout" => model.dropout;
    "model.length_penalty" => model.length_penalty;
    "model.encoder_private_bottom" => model.share.encoder_private_bottom;
    "model.decoder_private_top" => model.share.decoder_private_top;
    "noise.drop_prob" => at.noise.drop_prob;
    "noise.shuffle_window" => at.noise.shuffle_window;
    "at.batch_size" => at.batch_size;
    "at.denoise_weight" => at.denoise_weight;
    "at.max_steps" => at.max_steps;
    "at.eval_every" => at.eval_every;
    "at.patience" => at.patience;
    "at.min_delta" => at.min_delta;
    "at.val_sentences" => at.val_sentences;
    "at.biview_gen_batch_multiplier" => at.biview_gen_batch_multiplier;
    "at.biview_max_steps" => at.biview_max_steps;
    "at.biview_denoise" => at.biview_denoise;
    "at.lr" => at.adam.lr;
    "at.beta1" => at.adam.beta1;
    "at.beta2" => at.adam.beta2;
    "at.eps" => at.adam.eps;
    "at.warmup_steps" => at.adam.warmup_steps;
    "at.clip_norm" => at.adam.clip_norm;
    "acp.mask_prob" => acp.mask_prob;
    "acp.mask_split" => acp.mask_split;
    "acp.steps" => acp.steps;
    "acp.batch_size" => acp.batch_size;
    "acp.log_every" => acp.log_every;
    "acp.lr" => acp.adam.lr;
    "acp.beta1" => acp.adam.beta1;
    "acp.beta2" => acp.adam.beta2;
    "acp.eps" => acp.adam.eps;
    "acp.warmup_steps" => acp.adam.warmup_steps;
    "acp.clip_norm" => acp.adam.clip_norm;
    "eval.ks" => eval_ks;
    "synth.vocab_size" => synth.vocab_size;
    "synth.sentence_count" => synth.sentence_count;
    "synth.min_len" => synth.min_len;
    "synth.max_len" => synth.max_len;
    "synth.reorder_window" => synth.reorder_window;
    "synth.dict_coverage" => synth.dict_coverage;
    "synth.heldout_count" => synth.heldout_count;
    "synth.zipf_exponent" => synth.zipf_exponent;
    "synth.successor_prob" => synth.successor_prob;
    "synth.successors_per_word" => synth.successors_per_word;
    "synth.modifier_fraction" => synth.modifier_fraction;
    "baseline.sgns_dim" => sgns.dim;
    "baseline.sgns_window" => sgns.window;
    "baseline.sgns_negatives" => sgns.negatives;
    "baseline.sgns_min_count" => sgns.min_count;
    "baseline.sgns_epochs" => sgns.epochs;
    "baseline.sgns_lr" => sgns.lr;
}

impl ExperimentConfig {
    /// Applies a JSON object of dotted keys. Nested objects are rejected so each
    /// setting has exactly one spelling.
    pub fn apply_json(&mut self, text: &str) -> Result<(), Error> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not JSON: {e}")))?;
        let Value::Object(map) = v else {
            return Err(Error::Config("config must be a JSON object of dotted keys".into()));
        };
        for (k, v) in &map {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// `key=value`, where the value is read as JSON and falls back to a bare string.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), Error> {
        let (k, raw) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        self.set(k.trim(), &v)
    }

    /// Defaults, then the file, then overrides in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let mut c = Self::default();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.to_owned(),
                source,
            })?;
            c.apply_json(&text)?;
        }
        for o in overrides {
            c.apply_override(o)?;
        }
        c.propagate();
        c.validate()?;
        Ok(c)
    }

    /// Hands the master seed and parallelism to every module config. Modules
    /// derive their own named streams from it.
    fn propagate(&mut self) {
        let parallel = self.jobs > 1;
        self.at.seed = self.seed;
        self.at.parallel = parallel;
        self.acp.seed = self.seed;
        self.acp.parallel = parallel;
        self.synth.seed = self.seed;
        self.sgns.seed = self.seed;
    }

    fn validate(&self) -> Result<(), Error> {
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::Config("eval.ks must be non-empty positive integers".into()));
        }
        self.at.validate()?;
        self.acp.validate()?;
        self.synth.validate()
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            ..self.model.clone()
        }
    }
}
