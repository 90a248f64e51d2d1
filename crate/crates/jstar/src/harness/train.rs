//! Seed-deterministic mini-batch training.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::model::{Checkpoint, ForwardOut, InitScope, Mode, Model, ModelConfig, Variant};
use crate::numcore::{Adam, AdamConfig, Rng};

use super::data::{Dataset, DatasetRecord, Split};
use super::vocab::{sot_to_ids, string_to_ids, words_to_piece_ids};
use super::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ToyAsr,
    ToyMtReorder,
    ToyConversation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f32,
    /// Evaluate the dev split every this many steps (and at the last step).
    pub dev_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 1000,
            batch_size: 16,
            seed: 1,
            clip_norm: 5.0,
            dev_every: 50,
        }
    }
}

/// Everything one run needs: architecture, optimizer, data, task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: PathBuf,
    pub task: Task,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub loss_asr: f64,
    pub loss_st: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<StepLog>,
    /// (step, mean dev translation-side loss per record).
    pub dev_curve: Vec<(usize, f64)>,
}

/// Model inputs and targets extracted from one record.
pub enum RecordTargets {
    Features { asr: Vec<usize>, st: Vec<usize> },
    Chars { chars: Vec<usize>, src: Vec<usize>, tgt: Vec<usize> },
}

pub fn record_targets(task: Task, record: &DatasetRecord) -> Result<RecordTargets> {
    match task {
        Task::ToyAsr | Task::ToyConversation => Ok(RecordTargets::Features {
            asr: sot_to_ids(&record.asr_sot()),
            st: sot_to_ids(&record.st_sot()),
        }),
        Task::ToyMtReorder => {
            let chars = record
                .source_chars
                .as_ref()
                .ok_or_else(|| HarnessError::Data(format!("record {} has no characters", record.id)))?;
            Ok(RecordTargets::Chars {
                chars: string_to_ids(chars),
                src: words_to_piece_ids(record.words.iter().map(|w| w.text.as_str())),
                tgt: words_to_piece_ids(record.translation_words.iter().map(|w| w.text.as_str())),
            })
        }
    }
}

pub fn forward_record(
    model: &Model,
    task: Task,
    record: &DatasetRecord,
    mode: Mode,
) -> Result<ForwardOut> {
    match record_targets(task, record)? {
        RecordTargets::Features { asr, st } => {
            let features = record.features()?;
            Ok(model.jstar_forward(&features, &asr, &st, mode)?)
        }
        RecordTargets::Chars { chars, src, tgt } => {
            Ok(model.mt_forward(&chars, &src, &tgt, mode)?)
        }
    }
}

/// Mean translation-side loss per record over a split, in eval mode.
pub fn mean_st_loss(model: &Model, task: Task, records: &[&DatasetRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(HarnessError::Data("no records to evaluate".into()));
    }
    let mut total = 0.0;
    for r in records {
        total += forward_record(model, task, r, Mode::Eval)?.loss_st;
    }
    Ok(total / records.len() as f64)
}

/// Train a fresh model (optionally initialized from a checkpoint scope) on
/// the dataset's train split. Identical configurations produce bit-identical
/// checkpoints and loss curves.
pub fn train(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    optim: &OptimConfig,
    task: Task,
    init: Option<(&Checkpoint, InitScope)>,
) -> Result<TrainOutcome> {
    if model_cfg.variant == Variant::MtChar && task != Task::ToyMtReorder {
        return Err(HarnessError::Config(
            "character-input model only trains on the reorder task".into(),
        ));
    }
    if model_cfg.variant == Variant::Jstar && task == Task::ToyMtReorder {
        return Err(HarnessError::Config("the reorder task needs the character variant".into()));
    }
    let train_records = dataset.split(Split::Train);
    if train_records.is_empty() {
        return Err(HarnessError::Data("train split is empty".into()));
    }
    let dev_records = dataset.split(Split::Dev);

    let mut model = Model::new(model_cfg.clone(), optim.seed)?;
    if let Some((ckpt, scope)) = init {
        model.init_from_checkpoint(ckpt, scope)?;
    }
    let mut adam = Adam::new(
        AdamConfig { lr: optim.lr, beta1: optim.beta1, beta2: optim.beta2, eps: optim.eps },
        &model.params,
    );
    let mut rng = Rng::new(optim.seed ^ 0x7472_6169_6e21);

    let mut order: Vec<usize> = (0..train_records.len()).collect();
    rng.shuffle(&mut order);
    let mut cursor = 0usize;

    let mut log = Vec::with_capacity(optim.steps);
    let mut dev_curve = Vec::new();
    for step in 1..=optim.steps {
        let scale = 1.0 / optim.batch_size as f64;
        let (mut loss, mut loss_asr, mut loss_st) = (0.0, 0.0, 0.0);
        for _ in 0..optim.batch_size {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let record = train_records[order[cursor]];
            cursor += 1;
            let out = forward_record(&model, task, record, Mode::Train { rng: &mut rng })
                .map_err(|e| diverged(step, e))?;
            if !out.loss.is_finite() {
                return Err(HarnessError::Diverged {
                    step,
                    detail: format!("loss became non-finite on record {}", record.id),
                });
            }
            loss += out.loss * scale;
            loss_asr += out.loss_asr * scale;
            loss_st += out.loss_st * scale;
            let mut graph = out.graph;
            graph
                .backward_seeded(out.loss_node, scale, &mut model.params)
                .map_err(|e| diverged(step, e.into()))?;
        }
        model.params.clip_grad_norm(optim.clip_norm)?;
        adam.step(&mut model.params)?;
        log.push(StepLog { step, loss, loss_asr, loss_st });

        if !dev_records.is_empty() && (step % optim.dev_every == 0 || step == optim.steps) {
            dev_curve.push((step, mean_st_loss(&model, task, &dev_records)?));
        }
    }
    Ok(TrainOutcome { model, log, dev_curve })
}

fn diverged(step: usize, e: HarnessError) -> HarnessError {
    match e {
        HarnessError::Model(crate::model::ModelError::Num(
            crate::numcore::NumError::NonFinite { op },
        )) => HarnessError::Diverged { step, detail: format!("non-finite value in {op}") },
        other => other,
    }
}

/// First step at which the dev curve reaches `threshold`, if any.
pub fn steps_to_reach(dev_curve: &[(usize, f64)], threshold: f64) -> Option<usize> {
    dev_curve.iter().find(|(_, loss)| *loss <= threshold).map(|&(step, _)| step)
}
