//! Source-domain finetuning, pseudo-label finetuning for an unlabeled
//! target, and the round loop tying them together.
//!
//! Round 0 finetunes on the merged source set (next-token objective over
//! question/answer pairs). Each later round freezes the previous round's
//! checkpoint, pseudo-labels every target sample with it (rank fallback on,
//! so the label set is total and nothing is confidence-filtered), and
//! finetunes a copy of that adapter state on source ground truth plus
//! target pseudo-labels interleaved into shared shuffled batches.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{
    generative_classify_with, write_prediction_log, MatchedBy, PredictionRecord,
    DEFAULT_BEAM_WIDTH, DEFAULT_MAX_TOKENS,
};
use crate::dataset::{CategorySet, SampleRecord};
use crate::error::{Error, Result};
use crate::prompt::{render_prompt, PromptInstance, TemplateVariant};
use crate::provider::LmProvider;
use crate::reflm::{
    save_checkpoint, train_step, Example, OptimState, RefLm, Schedule, TrainConfig,
};
use crate::token::END_TOKEN;

/// One pseudo-labeled target sample, with the checkpoint that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledSample {
    pub id: String,
    pub pseudo_label: String,
    pub raw_answer: String,
    pub matched_by: MatchedBy,
    pub checkpoint_id: String,
}

/// Outcome of one round. Round 0 is the source-only finetune; round r > 0
/// was trained with pseudo-labels generated by round r-1's checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub checkpoint_id: String,
    pub pseudo_labels: Vec<PseudoLabeledSample>,
    pub target_accuracy: Option<f64>,
}

/// Everything the round loop needs beyond the data: the two training
/// schedules (source-only runs in steps, pseudo-label rounds in epochs),
/// the prompt variant, and the generation settings used for pseudo-labels
/// and accuracy.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub dg: TrainConfig,
    pub uda: TrainConfig,
    pub variant: TemplateVariant,
    pub beam_width: usize,
    pub max_tokens: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dg: TrainConfig::default(),
            uda: TrainConfig {
                schedule: Schedule::Epochs(2),
                ..TrainConfig::default()
            },
            variant: TemplateVariant::Standard,
            beam_width: DEFAULT_BEAM_WIDTH,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub steps_run: usize,
    pub final_loss: Option<f64>,
}

/// Render the prompt for one sample under the configured variant.
pub fn sample_prompt(
    sample: &SampleRecord,
    cs: &CategorySet,
    variant: TemplateVariant,
) -> Result<PromptInstance> {
    let description = sample
        .description
        .as_ref()
        .ok_or_else(|| Error::MissingDescription {
            id: sample.id.clone(),
        })?;
    let p = render_prompt(&description.render(), cs, variant, Some(&sample.domain))?;
    Ok(p.with_sample_id(sample.id.clone()))
}

fn answer_tokens(cs: &CategorySet, label: &str, id: &str) -> Result<Vec<String>> {
    let position = cs.position(label).ok_or_else(|| Error::Label {
        id: id.to_string(),
        label: label.to_string(),
    })?;
    let mut tokens = cs.answer_tokens(position).to_vec();
    tokens.push(END_TOKEN.to_string());
    Ok(tokens)
}

/// Build (prompt, answer) training examples from labeled samples; the
/// answer is the category's token sequence plus the end marker.
fn build_examples(
    lm: &RefLm,
    samples: &[SampleRecord],
    labels: impl Fn(&SampleRecord) -> Result<String>,
    cs: &CategorySet,
    variant: TemplateVariant,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        let label = labels(sample)?;
        let prompt = sample_prompt(sample, cs, variant)?;
        let tokens = answer_tokens(cs, &label, &sample.id)?;
        out.push(Example::new(lm, &prompt.text, &tokens)?);
    }
    Ok(out)
}

fn ground_truth(sample: &SampleRecord) -> Result<String> {
    sample
        .label
        .clone()
        .ok_or_else(|| Error::Arg(format!("sample '{}' has no label", sample.id)))
}

/// Seeded minibatch loop. Examples are reshuffled at each epoch boundary;
/// batches may span the boundary. A non-finite gradient aborts with the
/// model left at its last good state.
fn run_finetune(lm: &mut RefLm, examples: &[Example], cfg: &TrainConfig) -> Result<FinetuneReport> {
    cfg.validate()?;
    let total_steps = match cfg.schedule {
        Schedule::Steps(n) => n,
        Schedule::Epochs(e) => {
            if examples.is_empty() {
                0
            } else {
                e * examples.len().div_ceil(cfg.batch_size)
            }
        }
    };
    if total_steps == 0 {
        return Ok(FinetuneReport {
            steps_run: 0,
            final_loss: None,
        });
    }
    if examples.is_empty() {
        return Err(Error::Arg("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len(); // forces a shuffle before the first batch
    let mut state = OptimState::new(lm);
    let mut final_loss = None;
    let batch_len = cfg.batch_size.min(examples.len());
    for _ in 0..total_steps {
        let mut batch = Vec::with_capacity(batch_len);
        for _ in 0..batch_len {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(examples[order[cursor]].clone());
            cursor += 1;
        }
        final_loss = Some(train_step(lm, &mut state, &batch, cfg)?);
    }
    Ok(FinetuneReport {
        steps_run: total_steps,
        final_loss,
    })
}

/// Finetune on merged source domains with ground-truth labels.
pub fn finetune_dg(
    lm: &mut RefLm,
    source: &[SampleRecord],
    cs: &CategorySet,
    cfg: &TrainConfig,
    variant: TemplateVariant,
) -> Result<FinetuneReport> {
    let examples = build_examples(lm, source, ground_truth, cs, variant)?;
    run_finetune(lm, &examples, cfg)
}

/// Generate one pseudo-label per target sample with the frozen checkpoint.
/// Rank fallback keeps the label set total, so the pseudo-label objective
/// sums over every target sample.
pub fn pseudo_label(
    lm: &RefLm,
    target: &[SampleRecord],
    cs: &CategorySet,
    cfg: &PipelineConfig,
) -> Result<Vec<PseudoLabeledSample>> {
    let checkpoint_id = lm.param_digest();
    let mut out = Vec::with_capacity(target.len());
    for sample in target {
        let prompt = sample_prompt(sample, cs, cfg.variant)?;
        let prediction =
            generative_classify_with(lm, &prompt, cs, true, cfg.beam_width, cfg.max_tokens)
                .map_err(|e| e.context(format!("pseudo-labeling '{}'", sample.id)))?;
        let label = prediction
            .category
            .clone()
            .expect("rank fallback always yields a category");
        out.push(PseudoLabeledSample {
            id: sample.id.clone(),
            pseudo_label: label,
            raw_answer: prediction.raw_answer,
            matched_by: prediction.matched_by,
            checkpoint_id: checkpoint_id.clone(),
        });
    }
    Ok(out)
}

/// Finetune on source ground truth plus target pseudo-labels, both terms in
/// one summed objective: the two sets are interleaved by a global shuffle
/// into shared batches. With an empty target this degenerates exactly to
/// [`finetune_dg`].
pub fn finetune_uda(
    lm: &mut RefLm,
    source: &[SampleRecord],
    target: &[SampleRecord],
    pseudo_labels: &[PseudoLabeledSample],
    cs: &CategorySet,
    cfg: &TrainConfig,
    variant: TemplateVariant,
) -> Result<FinetuneReport> {
    let by_id: HashMap<&str, &PseudoLabeledSample> =
        pseudo_labels.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut examples = build_examples(lm, source, ground_truth, cs, variant)?;
    let target_examples = build_examples(
        lm,
        target,
        |s| {
            by_id
                .get(s.id.as_str())
                .map(|p| p.pseudo_label.clone())
                .ok_or_else(|| Error::Arg(format!("sample '{}' has no pseudo-label", s.id)))
        },
        cs,
        variant,
    )?;
    examples.extend(target_examples);
    run_finetune(lm, &examples, cfg)
}

/// Accuracy of generative classification (no fallback; UNMATCHED counts as
/// wrong) over the labeled subset of `samples`. `None` if nothing is
/// labeled.
pub fn generative_accuracy(
    lm: &dyn LmProvider,
    samples: &[SampleRecord],
    cs: &CategorySet,
    cfg: &PipelineConfig,
) -> Result<Option<f64>> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for sample in samples {
        let Some(label) = &sample.label else { continue };
        let prompt = sample_prompt(sample, cs, cfg.variant)?;
        let prediction =
            generative_classify_with(lm, &prompt, cs, false, cfg.beam_width, cfg.max_tokens)?;
        total += 1;
        if prediction.category.as_deref().map(|c| cs.position(c)) == Some(cs.position(label)) {
            correct += 1;
        }
    }
    Ok((total > 0).then(|| 100.0 * correct as f64 / total as f64))
}

/// The full training pipeline: a source-only round 0, then `rounds`
/// pseudo-label rounds, each warm-starting from the previous round's
/// adapter state and labeling with the previous round's frozen checkpoint.
/// When `run_dir` is given, every round persists its checkpoint, its
/// pseudo-labels (prediction-log format), and a state summary before the
/// next round starts, so a failed round leaves completed rounds on disk.
pub fn run_algorithm1(
    mut lm: RefLm,
    source: &[SampleRecord],
    target: &[SampleRecord],
    cs: &CategorySet,
    cfg: &PipelineConfig,
    rounds: usize,
    run_dir: Option<&Path>,
) -> Result<(RefLm, Vec<RoundState>)> {
    let mut states = Vec::with_capacity(rounds + 1);
    finetune_dg(&mut lm, source, cs, &cfg.dg, cfg.variant)?;
    let state = RoundState {
        round: 0,
        checkpoint_id: lm.param_digest(),
        pseudo_labels: Vec::new(),
        target_accuracy: generative_accuracy(&lm, target, cs, cfg)?,
    };
    persist_round(run_dir, &lm, &state)?;
    states.push(state);

    for round in 1..=rounds {
        let labels = pseudo_label(&lm, target, cs, cfg)?;
        let round_cfg = TrainConfig {
            shuffle_seed: cfg.uda.shuffle_seed.wrapping_add(round as u64),
            ..cfg.uda.clone()
        };
        finetune_uda(
            &mut lm,
            source,
            target,
            &labels,
            cs,
            &round_cfg,
            cfg.variant,
        )?;
        let state = RoundState {
            round,
            checkpoint_id: lm.param_digest(),
            pseudo_labels: labels,
            target_accuracy: generative_accuracy(&lm, target, cs, cfg)?,
        };
        persist_round(run_dir, &lm, &state)?;
        states.push(state);
    }
    Ok((lm, states))
}

#[derive(Serialize, Deserialize)]
struct RoundSummary {
    round: usize,
    checkpoint_id: String,
    pseudo_label_count: usize,
    /// Checkpoint that generated this round's pseudo-labels (round 0: none).
    pseudo_labels_from: Option<String>,
    target_accuracy: Option<f64>,
}

fn persist_round(run_dir: Option<&Path>, lm: &RefLm, state: &RoundState) -> Result<()> {
    let Some(dir) = run_dir else { return Ok(()) };
    let round_dir = dir.join(format!("round_{}", state.round));
    fs::create_dir_all(&round_dir)?;
    save_checkpoint(lm, None, round_dir.join("checkpoint.bin"))?;
    let records: Vec<PredictionRecord> = state
        .pseudo_labels
        .iter()
        .map(|p| PredictionRecord {
            id: p.id.clone(),
            raw_answer: p.raw_answer.clone(),
            category: Some(p.pseudo_label.clone()),
            matched_by: p.matched_by,
            score: None,
        })
        .collect();
    write_prediction_log(round_dir.join("pseudo_labels.jsonl"), &records)?;
    let summary = RoundSummary {
        round: state.round,
        checkpoint_id: state.checkpoint_id.clone(),
        pseudo_label_count: state.pseudo_labels.len(),
        pseudo_labels_from: state.pseudo_labels.first().map(|p| p.checkpoint_id.clone()),
        target_accuracy: state.target_accuracy,
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::FormatFile(e.to_string()))?;
    fs::write(round_dir.join("state.json"), json)?;
    Ok(())
}
