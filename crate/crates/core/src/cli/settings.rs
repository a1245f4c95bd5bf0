//! `key = value` settings shared by config files and command-line flags.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::CorpusSpec;
use crate::error::{Error, Result};
use crate::train::{LenScale, Objective, Selection, TagRuleName, TrainConfig};

/// Parses a flat config file: one `key = value` per line, `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", i + 1)));
        }
        out.push((k.replace('_', "-"), v.to_string()));
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    parse_config_text(&fs::read_to_string(path)?)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.replace('-', "_")))
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn reject_seed(key: &str) -> Result<()> {
    if key == "seed" {
        return Err(Error::Config("the seed must be passed with --seed".into()));
    }
    Ok(())
}

/// Applies one setting to a corpus spec. The pivot may be written `L<k>` or `<k>`.
pub fn apply_corpus_key(spec: &mut CorpusSpec, key: &str, v: &str) -> Result<()> {
    reject_seed(key)?;
    match key {
        "languages" => spec.n_languages = parse(key, v)?,
        "pivot" => spec.pivot = parse(key, v.strip_prefix('L').unwrap_or(v))?,
        "train-per-dir" => spec.train_per_direction = parse(key, v)?,
        "valid-sentences" => spec.valid_sentences = parse(key, v)?,
        "test-sentences" => spec.test_sentences = parse(key, v)?,
        "min-len" => spec.min_len = parse(key, v)?,
        "max-len" => spec.max_len = parse(key, v)?,
        "concept-vocab" => spec.concept_vocab = parse(key, v)?,
        "zipf" => spec.zipf_exponent = parse(key, v)?,
        _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
    }
    Ok(())
}

/// Applies one setting to a training config.
pub fn apply_train_key(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    reject_seed(key)?;
    match key {
        "objective" => cfg.objective = v.parse::<Objective>()?,
        "gamma1" => cfg.gamma1 = parse(key, v)?,
        "gamma2" => cfg.gamma2 = parse(key, v)?,
        "sra-gamma" => cfg.sra_gamma = parse(key, v)?,
        "sf-gamma" => cfg.sf_gamma = parse(key, v)?,
        "cl-gamma" => cfg.cl_gamma = parse(key, v)?,
        "cl-tau" => cfg.cl_tau = parse(key, v)?,
        "mixup-alpha" => cfg.mixup_alpha = parse(key, v)?,
        "mixup-beta" => cfg.mixup_beta = parse(key, v)?,
        "mixup-tag" => cfg.mixup_tag = parse_enum::<TagRuleName>(key, v)?,
        "adam-beta1" => cfg.adam_beta1 = parse(key, v)?,
        "adam-beta2" => cfg.adam_beta2 = parse(key, v)?,
        "adam-eps" => cfg.adam_eps = parse(key, v)?,
        "peak-lr" => cfg.peak_lr = parse(key, v)?,
        "warmup-steps" => cfg.warmup_steps = parse(key, v)?,
        "pretrain-steps" => cfg.pretrain_steps = parse(key, v)?,
        "total-steps" => cfg.total_steps = parse(key, v)?,
        "batch-sentences" => cfg.batch_sentences = parse(key, v)?,
        "stop-grad-hy" => cfg.stop_grad_hy = parse_bool(key, v)?,
        "include-tag-position" => cfg.include_tag_position = parse_bool(key, v)?,
        "len-scale" => cfg.len_scale = parse_enum::<LenScale>(key, v)?,
        "selection" => cfg.selection = parse_enum::<Selection>(key, v)?,
        "eval-every" => cfg.eval_every = parse(key, v)?,
        "eval-sentences" => cfg.eval_sentences = parse(key, v)?,
        "d-model" => cfg.model.d_model = parse(key, v)?,
        "n-heads" => cfg.model.n_heads = parse(key, v)?,
        "n-layers" => cfg.model.n_layers = parse(key, v)?,
        "d-ff" => cfg.model.d_ff = parse(key, v)?,
        "max-len" => cfg.model.max_len = parse(key, v)?,
        "dropout" => cfg.model.dropout = parse(key, v)?,
        _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
    }
    Ok(())
}
