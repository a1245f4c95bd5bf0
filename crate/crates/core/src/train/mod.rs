//! Training loop: CE pretraining, then the configured objective, with periodic validation.

mod config;
mod eval;
mod loss;
mod optim;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{LenScale, Objective, Selection, TagRuleName, TrainConfig, REFERENCE_PEAK_LR, REFERENCE_WARMUP_STEPS};
pub use eval::{evaluate, evaluate_with, DirectionMetrics, EvalReport};
pub use loss::{
    baseline_loss, combined_loss, info_nce, objective_loss, sra_distance, LossBreakdown, LossGraph, Pair, StepRng,
    TargetStates,
};
pub use optim::{lr_at, Adam};

use crate::autodiff::Tape;
use crate::data::{DirectionKind, ParallelCorpus, Split};
use crate::error::{Error, Result};
use crate::model::{ModelParameters, TaggedSentence, Weights};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// One validation snapshot.
///
/// Loss components are measured without dropout on a fixed batch of validation
/// pairs, using the gammas active in the current phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub phase: Phase,
    pub lr: f64,
    pub probe: LossBreakdown,
    pub eval: EvalReport,
}

/// Model and optimizer state between steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParameters,
    pub step: usize,
    pub records: Vec<MetricsRecord>,
    adam: Adam,
    best: Option<(f64, usize, ModelParameters)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected checkpoint.
    pub params: ModelParameters,
    pub best_step: usize,
    pub last: ModelParameters,
    pub records: Vec<MetricsRecord>,
    /// Test-set evaluation of the selected checkpoint.
    pub test: EvalReport,
}

fn check_compatible(cfg: &TrainConfig, corpus: &ParallelCorpus) -> Result<()> {
    cfg.validate()?;
    let need = corpus.registry.vocab_size();
    if cfg.model.vocab_size < need {
        return Err(Error::Config(format!(
            "model vocab {} is smaller than the corpus vocab {need}",
            cfg.model.vocab_size
        )));
    }
    if cfg.model.max_len < corpus.spec.max_len + 1 {
        return Err(Error::Config(format!(
            "model max_len {} cannot hold tagged sentences of {} tokens",
            cfg.model.max_len, corpus.spec.max_len
        )));
    }
    if corpus.train_pairs().is_empty() {
        return Err(Error::InvalidInput("corpus has no training pairs".into()));
    }
    Ok(())
}

/// Fixed validation batch used for loss logging: supervised pairs taken round-robin over directions.
fn probe_batch(corpus: &ParallelCorpus, size: usize) -> Vec<&(TaggedSentence, TaggedSentence)> {
    let sets: Vec<_> = corpus
        .sets(Split::Valid)
        .filter(|s| s.direction.kind == DirectionKind::Supervised && !s.pairs.is_empty())
        .collect();
    let mut out = Vec::with_capacity(size);
    let mut i = 0;
    while out.len() < size && !sets.is_empty() && i < size * sets.len() {
        let set = sets[i % sets.len()];
        if let Some(p) = set.pairs.get(i / sets.len()) {
            out.push(p);
        }
        i += 1;
    }
    out
}

fn phase_of(step: usize, cfg: &TrainConfig) -> Phase {
    if step <= cfg.pretrain_steps {
        Phase::Pretrain
    } else {
        Phase::Finetune
    }
}

fn phase_objective(phase: Phase, cfg: &TrainConfig) -> Objective {
    match phase {
        Phase::Pretrain => Objective::CeOnly,
        Phase::Finetune => cfg.objective,
    }
}

fn probe_loss(
    params: &ModelParameters,
    corpus: &ParallelCorpus,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<LossBreakdown> {
    let batch = probe_batch(corpus, cfg.batch_sentences.max(2));
    if batch.is_empty() {
        return Ok(LossBreakdown::default());
    }
    let pairs: Vec<Pair<'_>> = batch.iter().map(|(x, y)| (x, y)).collect();
    let objective = phase_objective(phase, cfg);
    let probe_cfg = TrainConfig {
        gamma1: if objective.uses_ot() { cfg.gamma1 } else { 0.0 },
        gamma2: if objective.uses_at() { cfg.gamma2 } else { 0.0 },
        ..cfg.clone()
    };
    let rng = StepRng {
        seed: cfg.seed,
        step: 0,
        train: false,
    };
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, params, false);
    Ok(objective_loss(
        &mut tape,
        &w,
        &pairs,
        &probe_cfg,
        Objective::CeOtAt,
        &rng,
        TargetStates::Encode,
    )?
    .breakdown)
}

/// Fresh parameters and optimizer for `cfg.seed`.
pub fn init_state(cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    let params = ModelParameters::init(cfg.model, &mut stream(cfg.seed, "init", &[]))?;
    let adam = Adam::new(params.tensors(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    Ok(TrainState {
        params,
        step: 0,
        records: Vec::new(),
        adam,
        best: None,
    })
}

/// One optimisation step on a freshly sampled batch; returns the batch loss.
pub fn train_step(state: &mut TrainState, corpus: &ParallelCorpus, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let step = state.step + 1;
    let pairs = corpus.train_pairs();
    let mut r = stream(cfg.seed, "batch", &[step as u64]);
    let batch: Vec<Pair<'_>> = (0..cfg.batch_sentences)
        .map(|_| {
            let p = pairs[r.gen_range(0..pairs.len())];
            (&p.0, &p.1)
        })
        .collect();
    let objective = phase_objective(phase_of(step, cfg), cfg);
    let rng = StepRng {
        seed: cfg.seed,
        step: step as u64,
        train: true,
    };
    let mut tape = Tape::new();
    let w = Weights::bind(&mut tape, &state.params, true);
    let graph = objective_loss(&mut tape, &w, &batch, cfg, objective, &rng, TargetStates::Encode)?;
    if !graph.breakdown.total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = tape.backward(graph.loss)?;
    let g: Vec<_> = w.vars().iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
    let lr = lr_at(step, cfg.peak_lr, cfg.warmup_steps);
    state.adam.step(state.params.tensors_mut(), &g, lr)?;
    state.step = step;
    Ok(graph.breakdown)
}

fn record(state: &mut TrainState, corpus: &ParallelCorpus, cfg: &TrainConfig) -> Result<MetricsRecord> {
    let phase = phase_of(state.step, cfg);
    let eval = evaluate(&state.params, corpus, Split::Valid, cfg.eval_sentences)?;
    let rec = MetricsRecord {
        step: state.step,
        phase,
        lr: lr_at(state.step, cfg.peak_lr, cfg.warmup_steps),
        probe: probe_loss(&state.params, corpus, cfg, phase)?,
        eval,
    };
    // selection ignores pretraining snapshots once there is a second phase
    let eligible = phase == Phase::Finetune || cfg.pretrain_steps == cfg.total_steps;
    if eligible {
        let score = match cfg.selection {
            Selection::ZeroShot => rec.eval.zero_shot_accuracy,
            Selection::Supervised => rec.eval.supervised_accuracy,
        };
        if state.best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            state.best = Some((score, state.step, state.params.clone()));
        }
    }
    state.records.push(rec.clone());
    Ok(rec)
}

fn is_eval_step(step: usize, cfg: &TrainConfig) -> bool {
    step == cfg.total_steps || step == cfg.pretrain_steps || (cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every))
}

/// Runs steps until `until` (inclusive), evaluating on schedule.
pub fn run_until(
    state: &mut TrainState,
    corpus: &ParallelCorpus,
    cfg: &TrainConfig,
    until: usize,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<()> {
    check_compatible(cfg, corpus)?;
    if until > cfg.total_steps {
        return Err(Error::Config(format!(
            "cannot run past total_steps {}",
            cfg.total_steps
        )));
    }
    while state.step < until {
        train_step(state, corpus, cfg)?;
        if is_eval_step(state.step, cfg) {
            let rec = record(state, corpus, cfg)?;
            on_record(&rec);
        }
    }
    Ok(())
}

/// CE-only pretraining phase. Its result does not depend on the objective,
/// so one pretrained state can seed several objectives.
pub fn pretrain(
    cfg: &TrainConfig,
    corpus: &ParallelCorpus,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainState> {
    let mut state = init_state(cfg)?;
    run_until(&mut state, corpus, cfg, cfg.pretrain_steps, on_record)?;
    Ok(state)
}

/// Runs the remaining steps and evaluates the selected checkpoint on the test split.
pub fn finish(
    mut state: TrainState,
    cfg: &TrainConfig,
    corpus: &ParallelCorpus,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    run_until(&mut state, corpus, cfg, cfg.total_steps, on_record)?;
    if state.best.is_none() {
        // nothing evaluated yet (e.g. zero steps)
        record(&mut state, corpus, cfg)?;
    }
    let (_, best_step, params) = state.best.take().expect("at least one evaluation");
    let test = evaluate(&params, corpus, Split::Test, 0)?;
    Ok(TrainOutcome {
        params,
        best_step,
        last: state.params,
        records: state.records,
        test,
    })
}

pub fn train(cfg: &TrainConfig, corpus: &ParallelCorpus) -> Result<TrainOutcome> {
    train_with(cfg, corpus, &mut |_| {})
}

pub fn train_with(
    cfg: &TrainConfig,
    corpus: &ParallelCorpus,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    check_compatible(cfg, corpus)?;
    let state = pretrain(cfg, corpus, on_record)?;
    finish(state, cfg, corpus, on_record)
}

/// One JSON object per record.
pub fn write_metrics_jsonl(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    step: usize,
    direction: String,
    kind: &'a str,
    accuracy: f64,
    off_target_rate: f64,
    consistency: Option<f64>,
    ce: f64,
    ot: f64,
    at: f64,
    total: f64,
}

fn kind_name(k: DirectionKind) -> &'static str {
    match k {
        DirectionKind::Supervised => "supervised",
        DirectionKind::ZeroShot => "zero_shot",
    }
}

/// Flat CSV: one row per direction per record, plus the two averages.
pub fn write_summary_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        let row = |direction: String, kind: &'static str, accuracy: f64, off_target_rate: f64| SummaryRow {
            step: r.step,
            direction,
            kind,
            accuracy,
            off_target_rate,
            consistency: r.eval.consistency,
            ce: r.probe.ce,
            ot: r.probe.ot,
            at: r.probe.at,
            total: r.probe.total,
        };
        for d in &r.eval.directions {
            w.serialize(row(
                format!("L{}-L{}", d.src, d.tgt),
                kind_name(d.kind),
                d.accuracy,
                d.off_target_rate,
            ))?;
        }
        let sup_off = {
            let s: Vec<f64> = r
                .eval
                .directions
                .iter()
                .filter(|d| d.kind == DirectionKind::Supervised)
                .map(|d| d.off_target_rate)
                .collect();
            s.iter().sum::<f64>() / s.len().max(1) as f64
        };
        w.serialize(row(
            "zero_shot_avg".into(),
            "zero_shot",
            r.eval.zero_shot_accuracy,
            r.eval.zero_shot_off_target,
        ))?;
        w.serialize(row(
            "supervised_avg".into(),
            "supervised",
            r.eval.supervised_accuracy,
            sup_off,
        ))?;
    }
    w.flush()?;
    Ok(())
}
