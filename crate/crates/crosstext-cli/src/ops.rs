//! Subcommand implementations: thin wiring from flags and config to the
//! library, plus manifests and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crosstext::classify::{
    generative_classify_with, rank_classify_with, write_prediction_log, MatchedBy,
    PredictionRecord, ScoreNorm,
};
use crosstext::dataset::{
    emit_text_dataset, load_dataset, merge_and_split, stats, CategorySet, MultiDomainDataset,
    SampleRecord,
};
use crosstext::description::{build_description, DescriptionConfig};
use crosstext::eval::{
    dg_protocol, evaluate_accuracy, export_embeddings, render_uda_matrix, sensitivity_report,
    uda_protocol, word_frequency, AccuracyTable, ProtocolConfig, TaskRow, STOP_WORDS_VERSION,
};
use crosstext::prompt::TemplateVariant;
use crosstext::provider::ResponseCache;
use crosstext::reflm::{save_checkpoint, ModelConfig, RefLm, Schedule, TrainConfig};
use crosstext::train::{finetune_dg, run_algorithm1, sample_prompt, PipelineConfig};
use crosstext::vocab::{build_or_load, load_vocab_file, VocabKind};
use crosstext::{Error, Result};

use crate::manifest::{write_manifest, RunLock};
use crate::providers::ProviderFlags;
use crate::settings::Settings;
use crate::{
    AnalyzeCommand, CacheCommand, Cli, Command, DataFlags, ModelFlags, PromptFlags, TrainFlags,
};

const DATASET_FORMAT: &str = "ds1";
const PREDICTION_LOG_FORMAT: &str = "pl1";
const CHECKPOINT_FORMAT: &str = "ckpt1";

pub fn run(cli: Cli) -> Result<()> {
    let st = Settings::load(cli.config.as_deref())?;
    let providers = cli.providers;
    match cli.command {
        Command::IndexVocab {
            vocab,
            kind,
            generate_from,
        } => index_vocab(&st, &providers, &vocab, &kind, generate_from.as_deref()),
        Command::Extract {
            data,
            tag_vocab,
            attr_vocab,
            out,
            k,
            m,
            n,
            overwrite,
        } => extract(
            &st,
            &providers,
            &data,
            &tag_vocab,
            &attr_vocab,
            &out,
            (k, m, n),
            overwrite,
        ),
        Command::BuildDataset { data, out } => build_dataset(&data, &out),
        Command::FinetuneDg {
            data,
            target,
            run,
            train,
            model,
            prompt,
        } => finetune_dg_cmd(
            &st,
            &providers,
            &data,
            target.as_deref(),
            &run,
            &train,
            &model,
            &prompt,
        ),
        Command::UdaRun {
            data,
            source,
            target,
            rounds,
            run,
            train,
            model,
            prompt,
        } => uda_run(
            &st, &providers, &data, &source, &target, rounds, &run, &train, &model, &prompt,
        ),
        Command::Classify {
            data,
            domain,
            fallback,
            out,
            prompt,
        } => classify_cmd(
            &st,
            &providers,
            &data,
            domain.as_deref(),
            fallback,
            &out,
            &prompt,
        ),
        Command::RankClassify {
            data,
            domain,
            length_normalize,
            out,
            prompt,
        } => rank_classify_cmd(
            &st,
            &providers,
            &data,
            domain.as_deref(),
            length_normalize,
            &out,
            &prompt,
        ),
        Command::EvaluateDg {
            data,
            target,
            run,
            train,
            model,
            prompt,
        } => evaluate_dg(
            &st,
            &providers,
            &data,
            target.as_deref(),
            &run,
            &train,
            &model,
            &prompt,
        ),
        Command::EvaluateUda {
            data,
            rounds,
            run,
            train,
            model,
            prompt,
        } => evaluate_uda(
            &st, &providers, &data, rounds, &run, &train, &model, &prompt,
        ),
        Command::Analyze(cmd) => analyze(&st, &providers, cmd),
        Command::Cache(CacheCommand::Gc { dir }) => cache_gc(&providers, dir.as_deref()),
        Command::Stats { data } => stats_cmd(&data),
    }
}

fn load_data(data: &DataFlags) -> Result<MultiDomainDataset> {
    let cs = CategorySet::load(&data.categories)?;
    load_dataset(&data.dataset, cs)
}

fn variant_of(st: &Settings, prompt: &PromptFlags) -> Result<TemplateVariant> {
    let name = st.resolve("variant", prompt.variant.clone(), "standard".to_string())?;
    TemplateVariant::parse(&name)
}

fn model_config(st: &Settings, model: &ModelFlags) -> Result<ModelConfig> {
    let defaults = ModelConfig::default();
    Ok(ModelConfig {
        feat_dim: st.resolve("feat_dim", model.feat_dim, defaults.feat_dim)?,
        rank: st.resolve("rank", model.rank, defaults.rank)?,
        alpha: st.resolve("alpha", model.alpha, defaults.alpha)?,
        hash_seed: st.resolve("hash_seed", None, defaults.hash_seed)?,
        init_seed: st.resolve("init_seed", model.init_seed, defaults.init_seed)?,
        w0_scale: st.resolve("w0_scale", None, defaults.w0_scale)?,
        a_scale: st.resolve("a_scale", None, defaults.a_scale)?,
    })
}

fn pipeline_config(
    st: &Settings,
    train: &TrainFlags,
    prompt: &PromptFlags,
) -> Result<PipelineConfig> {
    let defaults = TrainConfig::default();
    let lr = st.resolve("lr", train.lr, defaults.learning_rate)?;
    let batch_size = st.resolve("batch_size", train.batch_size, defaults.batch_size)?;
    let weight_decay = st.resolve("weight_decay", train.weight_decay, defaults.weight_decay)?;
    let seed = st.resolve("seed", train.seed, defaults.shuffle_seed)?;
    let steps = st.resolve("steps", train.steps, 100usize)?;
    let uda_epochs = st.resolve("uda_epochs", train.uda_epochs, 2usize)?;
    let uda_lr = st.resolve("uda_lr", train.uda_lr, lr)?;
    let base = TrainConfig {
        learning_rate: lr,
        weight_decay,
        batch_size,
        shuffle_seed: seed,
        schedule: Schedule::Steps(steps),
        ..TrainConfig::default()
    };
    Ok(PipelineConfig {
        uda: TrainConfig {
            learning_rate: uda_lr,
            schedule: Schedule::Epochs(uda_epochs),
            ..base.clone()
        },
        dg: base,
        variant: variant_of(st, prompt)?,
        beam_width: st.resolve("beam_width", prompt.beam_width, 4usize)?,
        max_tokens: st.resolve("max_tokens", prompt.max_tokens, 16usize)?,
    })
}

fn manifest_entries(
    st: &Settings,
    command: &str,
    providers: &ProviderFlags,
) -> BTreeMap<String, String> {
    let mut entries = st.effective();
    entries.insert("command".into(), command.into());
    entries.insert("provider".into(), providers.identity_summary());
    entries.insert("format.dataset".into(), DATASET_FORMAT.into());
    entries.insert("format.prediction_log".into(), PREDICTION_LOG_FORMAT.into());
    entries.insert("format.checkpoint".into(), CHECKPOINT_FORMAT.into());
    entries.insert("format.stopwords".into(), STOP_WORDS_VERSION.into());
    entries
}

fn index_vocab(
    st: &Settings,
    providers: &ProviderFlags,
    vocab: &Path,
    kind: &str,
    generate_from: Option<&Path>,
) -> Result<()> {
    let kind = match kind {
        "tag" => VocabKind::Tag,
        "attribute" => VocabKind::Attribute,
        other => return Err(Error::Arg(format!("unknown vocabulary kind '{other}'"))),
    };
    st.note("vocab", vocab.display());
    if let Some(tags) = generate_from {
        if kind != VocabKind::Attribute {
            return Err(Error::Arg(
                "--generate-from only applies to attribute vocabularies".into(),
            ));
        }
        if !vocab.exists() {
            let attr_provider = providers.attributer()?;
            let mut lines = Vec::new();
            for tag in load_vocab_file(tags)? {
                lines.extend(attr_provider.attributes(&tag)?);
            }
            fs::write(vocab, lines.join("\n") + "\n")?;
            println!(
                "generated {} attributes from {}",
                lines.len(),
                tags.display()
            );
        }
    }
    let texts = load_vocab_file(vocab)?;
    let embedder = providers.embedder()?;
    let index = build_or_load(&texts, kind, embedder.as_ref(), providers.cache_dir())?;
    println!(
        "indexed {} {} entries (dim {})",
        index.len(),
        kind.as_str(),
        index.dim()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn extract(
    st: &Settings,
    providers: &ProviderFlags,
    data: &DataFlags,
    tag_vocab: &Path,
    attr_vocab: &Path,
    out: &Path,
    kmn: (Option<usize>, Option<usize>, Option<usize>),
    overwrite: bool,
) -> Result<()> {
    let cfg = DescriptionConfig {
        k: st.resolve("k", kmn.0, 5usize)?,
        m: st.resolve("m", kmn.1, 5usize)?,
        n: st.resolve("n", kmn.2, 5usize)?,
    };
    cfg.validate()?;
    let ds = load_data(data)?;
    let embedder = providers.embedder()?;
    let captioner = providers.captioner()?;
    let tag_index = build_or_load(
        &load_vocab_file(tag_vocab)?,
        VocabKind::Tag,
        embedder.as_ref(),
        providers.cache_dir(),
    )?;
    let attr_index = build_or_load(
        &load_vocab_file(attr_vocab)?,
        VocabKind::Attribute,
        embedder.as_ref(),
        providers.cache_dir(),
    )?;
    let mut described = Vec::new();
    let mut built = 0usize;
    for sample in ds.iter_samples() {
        let mut sample = sample.clone();
        if sample.description.is_none() || overwrite {
            let image = sample
                .image_ref
                .as_deref()
                .ok_or_else(|| Error::MissingDescription {
                    id: sample.id.clone(),
                })?;
            let d = build_description(
                image,
                &tag_index,
                &attr_index,
                embedder.as_ref(),
                captioner.as_ref(),
                &cfg,
            )
            .map_err(|e| e.context(format!("sample '{}'", sample.id)))?;
            sample.description = Some(d.to_text());
            built += 1;
        }
        described.push(sample);
    }
    let described = MultiDomainDataset::new(described, ds.category_set().clone())?;
    let count = emit_text_dataset(&described, out)?;
    println!(
        "described {built} samples, wrote {count} records to {}",
        out.display()
    );
    Ok(())
}

fn build_dataset(data: &DataFlags, out: &Path) -> Result<()> {
    let ds = load_data(data)?;
    let count = emit_text_dataset(&ds, out)?;
    println!("wrote {count} records to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finetune_dg_cmd(
    st: &Settings,
    providers: &ProviderFlags,
    data: &DataFlags,
    target: Option<&str>,
    run: &Path,
    train: &TrainFlags,
    model: &ModelFlags,
    prompt: &PromptFlags,
) -> Result<()> {
    let _lock = RunLock::acquire(run)?;
    let ds = load_data(data)?;
    let pipeline = pipeline_config(st, train, prompt)?;
    let mcfg = model_config(st, model)?;
    let source: Vec<SampleRecord> = match target {
        Some(t) => merge_and_split(&ds, t)?.0,
        None => ds.iter_samples().cloned().collect(),
    };
    st.note("dataset", data.dataset.display());
    st.note("categories", data.categories.display());
    st.note("target", target.unwrap_or("-"));
    st.note("template_version", pipeline.variant.version_tag());
    let mut lm = RefLm::new(ds.category_set(), &mcfg)?;
    let report = finetune_dg(
        &mut lm,
        &source,
        ds.category_set(),
        &pipeline.dg,
        pipeline.variant,
    )?;
    save_checkpoint(&lm, None, run.join("checkpoint.bin"))?;
    let mut entries = manifest_entries(st, "finetune-dg", providers);
    entries.insert("checkpoint_id".into(), lm.param_digest());
    write_manifest(run, &entries)?;
    println!(
        "finetuned {} steps on {} samples, final loss {}, checkpoint {}",
        report.steps_run,
        source.len(),
        report
            .final_loss
            .map_or("n/a".into(), |l| format!("{l:.4}")),
        lm.param_digest()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn uda_run(
    st: &Settings,
    providers: &ProviderFlags,
    data: &DataFlags,
    source: &str,
    target: &str,
    rounds: Option<usize>,
    run: &Path,
    train: &TrainFlags,
    model: &ModelFlags,
    prompt: &PromptFlags,
) -> Result<()> {
    let _lock = RunLock::acquire(run)?;
    let ds = load_data(data)?;
    let rounds = st.resolve("rounds", rounds, 1usize)?;
    let pipeline = pipeline_config(st, train, prompt)?;
    let mcfg = model_config(st, model)?;
    let source_samples = ds
        .domain(source)
        .ok_or_else(|| Error::Domain(source.to_string()))?
        .to_vec();
    let target_samples = ds
        .domain(target)
        .ok_or_else(|| Error::Domain(target.to_string()))?
        .to_vec();
    st.note("dataset", data.dataset.display());
    st.note("source", source);
    st.note("target", target);
    st.note("template_version", pipeline.variant.version_tag());
    let lm = RefLm::new(ds.category_set(), &mcfg)?;
    let (_, states) = run_algorithm1(
        lm,
        &source_samples,
        &target_samples,
        ds.category_set(),
        &pipeline,
        rounds,
        Some(run),
    )?;
    let mut entries = manifest_entries(st, "uda-run", providers);
    entries.insert(
        "final_checkpoint_id".into(),
        states
            .last()
            .map(|s| s.checkpoint_id.clone())
            .unwrap_or_default(),
    );
    write_manifest(run, &entries)?;
    for state in &states {
        println!(
            "round {}: checkpoint {} accuracy {}",
            state.round,
            state.checkpoint_id,
            state
                .target_accuracy
                .map_or("n/a".into(), |a| format!("{a:.1}")),
        );
    }
    Ok(())
}

fn selected_samples<'a>(
    ds: &'a MultiDomainDataset,
    domain: Option<&str>,
) -> Result<Vec<&'a SampleRecord>> {
    match domain {
        Some(d) => Ok(ds
            .domain(d)
            .ok_or_else(|| Error::Domain(d.to_string()))?
            .iter()
            .collect()),
        None => Ok(ds.iter_samples().collect()),
    }
}

fn print_prediction_summary(
    records: &[PredictionRecord],
    samples: &[&SampleRecord],
    cs: &CategorySet,
) {
    let unmatched = records
        .iter()
        .filter(|r| r.matched_by == MatchedBy::Unmatched)
        .count();
    let labeled: Vec<(&PredictionRecord, &str)> = records
        .iter()
        .zip(samples)
        .filter_map(|(r, s)| s.label.as_deref().map(|l| (r, l)))
        .collect();
    print!(
        "classified {} samples ({unmatched} unmatched)",
        records.len()
    );
    if !labeled.is_empty() {
        let correct = labeled
            .iter()
            .filter(|(r, l)| r.category.as_deref().map(|c| cs.position(c)) == Some(cs.position(l)))
            .count();
        print!(
            ", accuracy {:.1} over {} labeled",
            100.0 * correct as f64 / labeled.len() as f64,
            labeled.len()
        );
    }
    println!();
}

fn classify_cmd(
    st: &Settings,
    providers: &ProviderFlags,
    data: &DataFlags,
    domain: Option<&str>,
    fallback: bool,
    out: &Path,
    prompt: &PromptFlags,
) -> Result<()> {
    let ds = load_data(data)?;
    let variant = variant_of(st, prompt)?;
    let beam_width = st.resolve("beam_width", prompt.beam_width, 4usize)?;
    let max_tokens = st.resolve("max_tokens", prompt.max_tokens, 16usize)?;
    let lm = providers.lm()?;
    let samples = selected_samples(&ds, domain)?;
    let mut records = Vec::with_capacity(samples.len());
    for sample in &samples {
        let p = sample_prompt(sample, ds.category_set(), variant)?;
        let prediction = generative_classify_with(
            lm.as_ref(),
            &p,
            ds.category_set(),
            fallback,
            beam_width,
            max_tokens,
        )?;
        records.push(PredictionRecord::new(&sample.id, &prediction));
    }
    write_prediction_log(out, &records)?;
    print_prediction_summary(&records, &samples, ds.category_set());
    Ok(())
}

fn rank_classify_cmd(
    st: &Settings,
    providers: &ProviderFlags,
    data: &DataFlags,
    domain: Option<&str>,
    length_normalize: bool,
    out: &Path,
    prompt: &PromptFlags,
) -> Result<()> {
    let ds = load_data(data)?;
    let variant = variant_of(st, prompt)?;
    let norm = if length_normalize {
        ScoreNorm::PerToken
    } else {
        ScoreNorm::Sum
    };
    let lm = providers.lm()?;
    let samples = selected_samples(&ds, domain)?;
    let mut records = Vec::with_capacity(samples.len());
    for sample in &samples {
        let p = sample_prompt(sample, ds.category_set(), variant)?;
        let prediction = rank_classify_with(lm.as_ref(), &p, ds.category_set(), norm)?;
        records.push(PredictionRecord::new(&sample.id, &prediction));
    }
    write_prediction_log(out, &records)?;
    print_prediction_summary(&records, &samples, ds.category_set());
    Ok(())
}

fn write_reports(run: &Path, name: &str, table: &AccuracyTable, extra: Option<&str>) -> Result<()> {
    let reports = run.join("reports");
    fs::create_dir_all(&reports)?;
    fs::write(reports.join(format!("{name}.txt")), table.render_plain())?;
    fs::write(reports.join(format!("{name}.tsv")), table.render_tsv())?;
    if let Some(text) = extra {
        fs::write(reports.join(format!("{name}_matrix.txt")), text)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_dg(
    st: &Settings,
    providers: &ProviderFlags,
    data: &DataFlags,
    target: Option<&str>,
    run: &Path,
    train: &TrainFlags,
    model: &ModelFlags,
    prompt: &PromptFlags,
) -> Result<()> {
    let _lock = RunLock::acquire(run)?;
    let ds = load_data(data)?;
    let cfg = ProtocolConfig {
        model: model_config(st, model)?,
        pipeline: pipeline_config(st, train, prompt)?,
        run_dir: Some(run.join("tasks")),
    };
    st.note("dataset", data.dataset.display());
    st.note("template_version", cfg.pipeline.variant.version_tag());
    let table = match target {
        Some(t) => {
            let (source, held_out) = merge_and_split(&ds, t)?;
            let mut lm = RefLm::new(ds.category_set(), &cfg.model)?;
            finetune_dg(
                &mut lm,
                &source,
                ds.category_set(),
                &cfg.pipeline.dg,
                cfg.pipeline.variant,
            )?;
            let outcome = evaluate_accuracy(&lm, &held_out, ds.category_set(), &cfg.pipeline)?;
            AccuracyTable {
                rows: vec![TaskRow {
                    task: t.to_string(),
                    accuracy: outcome.accuracy,
                    unmatched_rate: outcome.unmatched_rate,
                }],
                partial: false,
            }
        }
        None => dg_protocol(&ds, &cfg)?,
    };
    write_reports(run, "dg_accuracy", &table, None)?;
    write_manifest(run, &manifest_entries(st, "evaluate-dg", providers))?;
    print!("{}", table.render_plain());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_uda(
    st: &Settings,
    providers: &ProviderFlags,
    data: &DataFlags,
    rounds: Option<usize>,
    run: &Path,
    train: &TrainFlags,
    model: &ModelFlags,
    prompt: &PromptFlags,
) -> Result<()> {
    let _lock = RunLock::acquire(run)?;
    let ds = load_data(data)?;
    let rounds = st.resolve("rounds", rounds, 1usize)?;
    let cfg = ProtocolConfig {
        model: model_config(st, model)?,
        pipeline: pipeline_config(st, train, prompt)?,
        run_dir: Some(run.join("tasks")),
    };
    st.note("dataset", data.dataset.display());
    st.note("template_version", cfg.pipeline.variant.version_tag());
    let table = uda_protocol(&ds, &cfg, rounds)?;
    let domains: Vec<String> = ds.domain_names().iter().map(|d| d.to_string()).collect();
    let matrix = render_uda_matrix(&table, &domains);
    write_reports(run, "uda_accuracy", &table, Some(&matrix))?;
    write_manifest(run, &manifest_entries(st, "evaluate-uda", providers))?;
    print!("{matrix}");
    Ok(())
}

fn analyze(st: &Settings, providers: &ProviderFlags, cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Freq { data, words, out } => {
            let ds = load_data(&data)?;
            let words: Vec<String> = words
                .split(',')
                .map(|w| w.trim().to_string())
                .filter(|w| !w.is_empty())
                .collect();
            if words.is_empty() {
                return Err(Error::Arg("no words given".into()));
            }
            let samples: Vec<SampleRecord> = ds.iter_samples().cloned().collect();
            let table = word_frequency(&samples, &words)?;
            if let Some(out) = out {
                fs::write(&out, table.render_tsv())?;
            }
            print!("{}", table.render_plain());
            Ok(())
        }
        AnalyzeCommand::Sensitivity {
            data,
            id,
            top_n,
            prompt,
        } => {
            let ds = load_data(&data)?;
            let top_n = st.resolve("top_n", top_n, 10usize)?;
            let pipeline = PipelineConfig {
                variant: variant_of(st, &prompt)?,
                ..PipelineConfig::default()
            };
            let lm = providers.reference_lm()?;
            let sample = ds
                .iter_samples()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::Arg(format!("no sample with id '{id}'")))?;
            let report = sensitivity_report(&lm, sample, ds.category_set(), &pipeline, top_n)?;
            for (word, score) in report {
                println!("{word}\t{score:.6}");
            }
            Ok(())
        }
        AnalyzeCommand::Embeddings { data, domain, out } => {
            let ds = load_data(&data)?;
            let samples: Vec<SampleRecord> = selected_samples(&ds, domain.as_deref())?
                .into_iter()
                .cloned()
                .collect();
            let provider = providers.embedder()?;
            let count = export_embeddings(&samples, provider.as_ref(), &out)?;
            println!("exported {count} rows to {}", out.display());
            Ok(())
        }
    }
}

fn cache_gc(providers: &ProviderFlags, dir: Option<&Path>) -> Result<()> {
    let dir = dir
        .or(providers.cache_dir())
        .ok_or_else(|| Error::Arg("no cache directory: pass --dir or --cache".into()))?;
    let report = ResponseCache::new(dir).gc()?;
    println!(
        "scanned {} entries, evicted {}",
        report.scanned, report.evicted
    );
    Ok(())
}

fn stats_cmd(data: &DataFlags) -> Result<()> {
    let ds = load_data(data)?;
    let s = stats(&ds);
    println!("samples: {}", s.samples);
    println!("classes: {}", s.classes);
    println!("domains: {}", s.domains);
    for (domain, count) in &s.per_domain {
        println!("  {domain}: {count}");
    }
    Ok(())
}
