//! Evaluation protocols and analysis: leave-one-out accuracy tables,
//! source->target adaptation tables, word-frequency domain-gap analysis,
//! sensitivity reports, and embedding export.

mod stopwords;

pub use stopwords::{is_stop_word, STOP_WORDS, STOP_WORDS_VERSION};

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::classify::{generative_classify_with, MatchedBy, PredictionRecord};
use crate::dataset::{merge_and_split, CategorySet, MultiDomainDataset, SampleRecord};
use crate::error::{Error, Result};

use crate::provider::{EmbedInput, EmbeddingProvider, LmProvider};
use crate::reflm::{ModelConfig, RefLm};
use crate::token::{tokenize, END_TOKEN};
use crate::train::{finetune_dg, run_algorithm1, sample_prompt, PipelineConfig};

/// One protocol task: a target domain for leave-one-out, a source->target
/// pair for adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub task: String,
    pub accuracy: f64,
    pub unmatched_rate: f64,
}

/// Accuracy percentages per task plus their arithmetic mean. `partial` is
/// set when some tasks failed and were skipped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyTable {
    pub rows: Vec<TaskRow>,
    pub partial: bool,
}

impl AccuracyTable {
    pub fn average(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.accuracy).sum::<f64>() / self.rows.len() as f64
    }

    /// Plain-text table, one decimal, Avg row appended.
    pub fn render_plain(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.task.len())
            .chain(["task".len(), "Avg".len()])
            .max()
            .unwrap_or(4);
        let mut out = format!(
            "{:width$}  {:>8}  {:>11}\n",
            "task", "accuracy", "unmatched %"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:width$}  {:>8.1}  {:>11.1}\n",
                r.task, r.accuracy, r.unmatched_rate
            ));
        }
        out.push_str(&format!("{:width$}  {:>8.1}\n", "Avg", self.average()));
        if self.partial {
            out.push_str("(partial: some tasks failed)\n");
        }
        out
    }

    pub fn render_tsv(&self) -> String {
        let mut out = String::from("task\taccuracy\tunmatched_rate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.1}\t{:.1}\n",
                r.task, r.accuracy, r.unmatched_rate
            ));
        }
        out.push_str(&format!("Avg\t{:.1}\t\n", self.average()));
        out
    }
}

/// Per-sample predictions plus the headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub unmatched_rate: f64,
    pub predictions: Vec<PredictionRecord>,
}

/// Accuracy of generative classification over labeled, described samples.
/// No rank fallback: an UNMATCHED answer counts as wrong.
pub fn evaluate_accuracy(
    lm: &dyn LmProvider,
    samples: &[SampleRecord],
    cs: &CategorySet,
    cfg: &PipelineConfig,
) -> Result<EvalOutcome> {
    let mut predictions = Vec::with_capacity(samples.len());
    let mut correct = 0usize;
    let mut unmatched = 0usize;
    for sample in samples {
        let label = sample
            .label
            .as_deref()
            .ok_or_else(|| Error::Arg(format!("sample '{}' has no label", sample.id)))?;
        let prompt = sample_prompt(sample, cs, cfg.variant)?;
        let p = generative_classify_with(lm, &prompt, cs, false, cfg.beam_width, cfg.max_tokens)?;
        if p.matched_by == MatchedBy::Unmatched {
            unmatched += 1;
        }
        if p.category.as_deref().map(|c| cs.position(c)) == Some(cs.position(label)) {
            correct += 1;
        }
        predictions.push(PredictionRecord::new(&sample.id, &p));
    }
    let total = samples.len().max(1) as f64;
    Ok(EvalOutcome {
        accuracy: 100.0 * correct as f64 / total,
        unmatched_rate: 100.0 * unmatched as f64 / total,
        predictions,
    })
}

/// Protocol settings: model shape for the fresh per-task models, the
/// training pipeline, and an optional directory for per-task artifacts.
#[derive(Debug, Clone, Default)]
pub struct ProtocolConfig {
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
    pub run_dir: Option<PathBuf>,
}

/// Leave-one-out protocol: each domain in turn is the test target while all
/// others train a fresh model. A failed task marks the table partial and is
/// skipped.
pub fn dg_protocol(ds: &MultiDomainDataset, cfg: &ProtocolConfig) -> Result<AccuracyTable> {
    if ds.domain_count() < 2 {
        return Err(Error::Arg("leave-one-out needs at least 2 domains".into()));
    }
    let cs = ds.category_set();
    let mut table = AccuracyTable::default();
    for target_domain in ds.domain_names().iter().map(|d| d.to_string()) {
        let outcome = (|| -> Result<EvalOutcome> {
            let (source, target) = merge_and_split(ds, &target_domain)?;
            let mut lm = RefLm::new(cs, &cfg.model)?;
            finetune_dg(&mut lm, &source, cs, &cfg.pipeline.dg, cfg.pipeline.variant)?;
            let outcome = evaluate_accuracy(&lm, &target, cs, &cfg.pipeline)?;
            if let Some(dir) = &cfg.run_dir {
                let task_dir = dir.join(format!("dg_{target_domain}"));
                fs::create_dir_all(&task_dir)?;
                crate::reflm::save_checkpoint(&lm, None, task_dir.join("checkpoint.bin"))?;
                crate::classify::write_prediction_log(
                    task_dir.join("predictions.jsonl"),
                    &outcome.predictions,
                )?;
            }
            Ok(outcome)
        })();
        match outcome {
            Ok(o) => table.rows.push(TaskRow {
                task: target_domain,
                accuracy: o.accuracy,
                unmatched_rate: o.unmatched_rate,
            }),
            Err(_) => table.partial = true,
        }
    }
    Ok(table)
}

/// Source->target protocol over every ordered domain pair: the full round
/// pipeline runs per pair and the final round's accuracy is reported.
pub fn uda_protocol(
    ds: &MultiDomainDataset,
    cfg: &ProtocolConfig,
    rounds: usize,
) -> Result<AccuracyTable> {
    if ds.domain_count() < 2 {
        return Err(Error::Arg("adaptation needs at least 2 domains".into()));
    }
    let cs = ds.category_set();
    let mut table = AccuracyTable::default();
    let domains: Vec<String> = ds.domain_names().iter().map(|d| d.to_string()).collect();
    for source_domain in &domains {
        for target_domain in &domains {
            if source_domain == target_domain {
                continue;
            }
            let task = format!("{source_domain}->{target_domain}");
            let outcome = (|| -> Result<TaskRow> {
                let source = ds.domain(source_domain).expect("domain exists").to_vec();
                let target = ds.domain(target_domain).expect("domain exists").to_vec();
                let lm = RefLm::new(cs, &cfg.model)?;
                let run_dir = cfg
                    .run_dir
                    .as_ref()
                    .map(|d| d.join(format!("uda_{source_domain}_{target_domain}")));
                let (final_lm, _) = run_algorithm1(
                    lm,
                    &source,
                    &target,
                    cs,
                    &cfg.pipeline,
                    rounds,
                    run_dir.as_deref(),
                )?;
                let outcome = evaluate_accuracy(&final_lm, &target, cs, &cfg.pipeline)?;
                Ok(TaskRow {
                    task: task.clone(),
                    accuracy: outcome.accuracy,
                    unmatched_rate: outcome.unmatched_rate,
                })
            })();
            match outcome {
                Ok(row) => table.rows.push(row),
                Err(_) => table.partial = true,
            }
        }
    }
    Ok(table)
}

/// Matrix rendering of a pair table: rows are sources, columns targets,
/// with per-row and per-column averages and the overall average in the
/// corner.
pub fn render_uda_matrix(table: &AccuracyTable, domains: &[String]) -> String {
    let cell = |s: &str, t: &str| -> Option<f64> {
        let task = format!("{s}->{t}");
        table
            .rows
            .iter()
            .find(|r| r.task == task)
            .map(|r| r.accuracy)
    };
    let width = domains
        .iter()
        .map(|d| d.len())
        .chain([7])
        .max()
        .unwrap_or(7)
        + 2;
    let mut out = format!("{:width$}", "");
    for t in domains {
        out.push_str(&format!("{t:>width$}"));
    }
    out.push_str(&format!("{:>width$}\n", "Avg"));
    let mut col_sums = vec![(0.0f64, 0usize); domains.len()];
    for s in domains {
        out.push_str(&format!("{s:width$}"));
        let mut row_sum = 0.0;
        let mut row_n = 0usize;
        for (j, t) in domains.iter().enumerate() {
            match cell(s, t) {
                Some(v) => {
                    out.push_str(&format!("{v:>width$.1}"));
                    row_sum += v;
                    row_n += 1;
                    col_sums[j].0 += v;
                    col_sums[j].1 += 1;
                }
                None => out.push_str(&format!("{:>width$}", "-")),
            }
        }
        if row_n > 0 {
            out.push_str(&format!("{:>width$.1}", row_sum / row_n as f64));
        } else {
            out.push_str(&format!("{:>width$}", "-"));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:width$}", "Avg"));
    for (sum, n) in &col_sums {
        if *n > 0 {
            out.push_str(&format!("{:>width$.1}", sum / *n as f64));
        } else {
            out.push_str(&format!("{:>width$}", "-"));
        }
    }
    out.push_str(&format!("{:>width$.1}\n", table.average()));
    out
}

/// Per-domain, per-sample frequency of each word across rendered
/// descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub words: Vec<String>,
    pub domains: Vec<String>,
    cells: Vec<Vec<f64>>,
}

impl FrequencyTable {
    pub fn cell(&self, word_index: usize, domain_index: usize) -> f64 {
        self.cells[word_index][domain_index]
    }

    /// Cell rounded to the 2 decimals the table reports.
    pub fn cell_2dp(&self, word_index: usize, domain_index: usize) -> f64 {
        (self.cell(word_index, domain_index) * 100.0).round() / 100.0
    }

    pub fn render_plain(&self) -> String {
        let width = self
            .words
            .iter()
            .map(|w| w.len())
            .chain(["word".len()])
            .max()
            .unwrap();
        let mut out = format!("{:width$}", "word");
        for d in &self.domains {
            out.push_str(&format!("  {d:>8}"));
        }
        out.push('\n');
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(&format!("{w:width$}"));
            for j in 0..self.domains.len() {
                out.push_str(&format!("  {:>8.2}", self.cell(i, j)));
            }
            out.push('\n');
        }
        out
    }

    pub fn render_tsv(&self) -> String {
        let mut out = String::from("word");
        for d in &self.domains {
            out.push('\t');
            out.push_str(d);
        }
        out.push('\n');
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for j in 0..self.domains.len() {
                out.push_str(&format!("\t{:.2}", self.cell(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Count word occurrences (tokenized, case-insensitive; multi-token words
/// count as sliding-window phrase hits) per domain, divided by the domain's
/// sample count.
pub fn word_frequency(samples: &[SampleRecord], words: &[String]) -> Result<FrequencyTable> {
    let mut domains: Vec<String> = Vec::new();
    for s in samples {
        if !domains.contains(&s.domain) {
            domains.push(s.domain.clone());
        }
    }
    let needles: Vec<Vec<String>> = words.iter().map(|w| tokenize(w)).collect();
    if needles.iter().any(|n| n.is_empty()) {
        return Err(Error::Arg("a frequency word has no tokens".into()));
    }
    let mut counts = vec![vec![0usize; domains.len()]; words.len()];
    let mut domain_sizes = vec![0usize; domains.len()];
    for s in samples {
        let description = s
            .description
            .as_ref()
            .ok_or_else(|| Error::MissingDescription { id: s.id.clone() })?;
        let d = domains
            .iter()
            .position(|d| *d == s.domain)
            .expect("collected");
        domain_sizes[d] += 1;
        let tokens = tokenize(&description.render());
        for (w, needle) in needles.iter().enumerate() {
            if needle.len() > tokens.len() {
                continue;
            }
            counts[w][d] += tokens
                .windows(needle.len())
                .filter(|win| *win == needle.as_slice())
                .count();
        }
    }
    let cells = counts
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(&domain_sizes)
                .map(|(c, n)| if *n == 0 { 0.0 } else { c as f64 / *n as f64 })
                .collect()
        })
        .collect();
    Ok(FrequencyTable {
        words: words.to_vec(),
        domains,
        cells,
    })
}

/// Words of one sample's description ranked by loss-gradient sensitivity,
/// stop words excluded, ties by first occurrence. Only the native reference
/// model exposes gradients; remote models cannot run this analysis.
pub fn sensitivity_report(
    lm: &RefLm,
    sample: &SampleRecord,
    cs: &CategorySet,
    cfg: &PipelineConfig,
    top_n: usize,
) -> Result<Vec<(String, f64)>> {
    let label = sample
        .label
        .as_deref()
        .ok_or_else(|| Error::Arg(format!("sample '{}' has no label", sample.id)))?;
    let position = cs.position(label).ok_or_else(|| Error::Label {
        id: sample.id.clone(),
        label: label.to_string(),
    })?;
    let description = sample
        .description
        .as_ref()
        .ok_or_else(|| Error::MissingDescription {
            id: sample.id.clone(),
        })?;
    let prompt = sample_prompt(sample, cs, cfg.variant)?;
    let mut answer = cs.answer_tokens(position).to_vec();
    answer.push(END_TOKEN.to_string());
    let all_scores = lm.token_sensitivity(&prompt.text, &answer)?;
    // Restrict to words of the description itself; the instruction wrapper
    // is shared boilerplate.
    let description_words: HashSet<String> = description
        .render()
        .split_whitespace()
        .map(|chunk| {
            chunk
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect();
    let mut kept: Vec<(String, f64)> = all_scores
        .into_iter()
        .filter(|(w, _)| description_words.contains(w) && !is_stop_word(w))
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1)); // stable: ties keep occurrence order
    kept.truncate(top_n);
    Ok(kept)
}

/// Export one embedding row per sample as TSV: id, domain, label, then the
/// vector components. Samples with an image locator embed it; otherwise the
/// rendered description text is embedded.
pub fn export_embeddings(
    samples: &[SampleRecord],
    provider: &dyn EmbeddingProvider,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let mut rows: Vec<(String, Vec<f64>)> = Vec::with_capacity(samples.len());
    let mut dim: Option<usize> = None;
    for s in samples {
        let vector = match (&s.image_ref, &s.description) {
            (Some(image), _) => provider.embed(EmbedInput::Image(image))?,
            (None, Some(d)) => provider.embed(EmbedInput::Text(&d.render()))?,
            (None, None) => {
                return Err(Error::MissingDescription { id: s.id.clone() });
            }
        };
        match dim {
            None => dim = Some(vector.dim()),
            Some(d) if d != vector.dim() => {
                return Err(Error::Dim {
                    expected: d,
                    got: vector.dim(),
                })
            }
            _ => {}
        }
        let prefix = format!(
            "{}\t{}\t{}",
            s.id,
            s.domain,
            s.label.as_deref().unwrap_or("")
        );
        rows.push((prefix, vector.values().to_vec()));
    }
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    let mut header = String::from("id\tdomain\tlabel");
    if let Some(d) = dim {
        for i in 0..d {
            header.push_str(&format!("\tv{i}"));
        }
    }
    out.write_all(header.as_bytes())?;
    out.write_all(b"\n")?;
    for (prefix, values) in &rows {
        out.write_all(prefix.as_bytes())?;
        for v in values {
            out.write_all(format!("\t{v}").as_bytes())?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(rows.len())
}
