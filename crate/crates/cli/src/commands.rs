use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use fsner::checkpoint::{load_json, save_json, ModelCheckpoint};
use fsner::corpus::synthetic::{generate_synthetic, GeneratorSpec};
use fsner::corpus::{load_corpus, save_corpus};
use fsner::eval::{self, DiagnosticTotals, EvalReport, SentenceEntities};
use fsner::fewshot::{self, FewShotSpec};
use fsner::linearize::{build_vocab, parse_linearized, ParseDiagnostics};
use fsner::selfval;
use fsner::trainer::{metrics_csv, steps_csv, Trainer};
use fsner::{Corpus, EntityList, Ontology, TrainConfig, Validator64, Vocab};

use crate::manifest::{beside, RunManifest};
use crate::{EvaluateArgs, GenCorpusArgs, ParseArgs, PretrainArgs, SampleArgs, TrainArgs};

pub fn load_config(path: Option<&Path>, seed: Option<u64>, epochs: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::from_toml(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A corpus JSONL, with the path attached to any error.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

/// An ontology JSON file, or the type statistics of a corpus JSONL.
pub fn load_ontology(path: &Path) -> Result<Ontology> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(read_corpus(path)?.ontology().clone())
    } else {
        Ontology::load(path).with_context(|| format!("loading ontology {}", path.display()))
    }
}

fn config_value(cfg: &TrainConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn jsonl<S: Serialize>(rows: &[S]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

fn write_jsonl<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    fs::write(path, jsonl(rows)?).with_context(|| format!("writing {}", path.display()))
}

fn write_pretty<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    let spec = GeneratorSpec {
        n_types: a.types,
        exponent: a.exponent,
        n_sentences: a.sentences,
        mean_entities: a.mean_entities,
        ..GeneratorSpec::default()
    };
    let (corpus, report) = generate_synthetic(&spec, a.seed)?;
    save_corpus(&corpus, &a.out)?;
    let spec_path = sidecar(&a.out, "spec.json");
    write_pretty(&spec_path, &report)?;
    let mut m = RunManifest::new("gen-corpus", a.seed, serde_json::to_value(&spec)?);
    m.output(&a.out);
    m.output(&spec_path);
    m.write(&beside(&a.out))?;
    println!("wrote {} sentences, {} mentions to {}", report.sentences, report.mentions, a.out.display());
    Ok(())
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

pub fn sample_fewshot(a: &SampleArgs) -> Result<()> {
    let (input, k, seed, out) = (&a.input, a.k, a.seed, &a.out);
    let pool = read_corpus(input)?;
    let (subset, rep) = fewshot::sample_fewshot(&pool, &FewShotSpec::new(k, seed))?;
    save_corpus(&subset, out)?;
    let report_path = a.report.clone().unwrap_or_else(|| sidecar(out, "report.json"));
    write_pretty(&report_path, &rep)?;
    let mut m = RunManifest::new("sample-fewshot", seed, json!({ "k": k }));
    m.input(input)?;
    m.output(out);
    m.output(&report_path);
    m.write(&beside(out))?;
    println!("sampled {} sentences (k={k}, seed={seed}) into {}", subset.len(), out.display());
    Ok(())
}

pub fn pretrain(train: &Corpus, val: Option<&Corpus>, vocab: &Vocab, cfg: &TrainConfig) -> Result<Validator64> {
    Ok(selfval::pretrain_validator::<f64>(
        train,
        val,
        vocab,
        cfg.model_config(vocab.len()),
        &cfg.pretrain_config(),
    )?)
}

pub fn pretrain_validator(a: &PretrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.seed, None)?;
    let train = read_corpus(&a.train)?;
    let val = a.val.as_deref().map(read_corpus).transpose()?;
    let vocab = build_vocab(&train);
    let v = pretrain(&train, val.as_ref(), &vocab, &cfg)?;
    save_json(&ModelCheckpoint::from_validator(&v, &vocab), &a.out)?;
    let mut m = RunManifest::new("pretrain-validator", cfg.seed, config_value(&cfg));
    m.input(&a.train)?;
    if let Some(p) = &a.val {
        m.input(p)?;
    }
    m.output(&a.out);
    m.write(&beside(&a.out))?;
    println!("wrote frozen validator to {}", a.out.display());
    Ok(())
}

/// `{id, output}`: raw linearized generation for one sentence.
#[derive(Debug, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub output: String,
}

/// `{id, entities, diagnostics}`: parsed entities for one sentence.
#[derive(Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub entities: EntityList,
    #[serde(default)]
    pub diagnostics: ParseDiagnostics,
}

/// Everything a finished run leaves behind.
pub struct RunOutcome {
    pub report: EvalReport,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
}

/// Trains on `train`, selects by F1 on `val`, scores the selected state on
/// `test` and writes the run directory.
pub fn run_training(
    train: &Corpus,
    val: &Corpus,
    test: &Corpus,
    cfg: &TrainConfig,
    vocab: Vocab,
    validator: Option<Validator64>,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<RunOutcome> {
    create_dir(dir)?;
    let validator = if cfg.alpha > 0.0 { validator } else { None };
    let mut trainer = Trainer::<f64>::new(cfg.clone(), vocab, validator)?;
    let log = trainer.train(train, val)?;
    let (best_epoch, selected) = match &log.best {
        Some((_, epoch, ck)) => (Some(*epoch), Trainer::<f64>::from_checkpoint(ck)?),
        None => (None, trainer),
    };
    let ontology = train.ontology();
    let mut generations = Vec::with_capacity(test.len());
    let mut predictions = Vec::with_capacity(test.len());
    let mut diag = DiagnosticTotals::default();
    for s in test.sentences() {
        let output = selected.generate_text(&s.text())?;
        let (entities, d) = parse_linearized(&output, ontology);
        diag.skipped_segments += d.skipped_count();
        diag.out_of_ontology += d.out_of_ontology.len();
        generations.push(Generation { id: s.id.clone(), output });
        predictions.push(Prediction {
            id: s.id.clone(),
            entities,
            diagnostics: d,
        });
    }
    let pred: Vec<SentenceEntities> = predictions
        .iter()
        .map(|p| SentenceEntities::new(p.id.clone(), p.entities.clone()))
        .collect();
    let report = eval::evaluate(&eval::gold_entities(test), &pred, ontology, diag)?;

    let write = |name: &str, text: String, m: &mut RunManifest| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        m.output(&p);
        Ok(())
    };
    write("metrics.csv", metrics_csv(&log.epochs), manifest)?;
    write("steps.csv", steps_csv(&log.steps), manifest)?;
    write("checkpoint.json", serde_json::to_string(&selected.checkpoint())?, manifest)?;
    write("report.json", serde_json::to_string_pretty(&report)?, manifest)?;
    write("summary.md", summary_md(&report, best_epoch, log.epochs.len()), manifest)?;
    write("predictions.jsonl", jsonl(&predictions)?, manifest)?;
    write("generations.jsonl", jsonl(&generations)?, manifest)?;
    Ok(RunOutcome {
        report,
        best_epoch,
        epochs_run: log.epochs.len(),
    })
}

fn summary_md(report: &EvalReport, best_epoch: Option<usize>, epochs_run: usize) -> String {
    let best = best_epoch.map_or("final".to_string(), |e| e.to_string());
    format!(
        "# Run summary\n\nEpochs run: {epochs_run}. Selected epoch: {best}.\n\n{}",
        report.to_table()
    )
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), a.seed, a.epochs)?;
    let train = read_corpus(&a.train)?;
    let val = match &a.val {
        Some(p) => read_corpus(p)?,
        None => train.clone(),
    };
    let mut manifest = RunManifest::new("train", cfg.seed, config_value(&cfg));
    manifest.input(&a.train)?;
    if let Some(p) = &a.val {
        manifest.input(p)?;
    }
    let (vocab, validator) = match &a.validator {
        Some(p) => {
            manifest.input(p)?;
            let ck: ModelCheckpoint = load_json(p).with_context(|| format!("loading validator {}", p.display()))?;
            let (v, vocab) = ck.to_validator::<f64>()?;
            if !v.frozen {
                bail!("{}: validator checkpoint is not frozen", p.display());
            }
            (vocab, Some(v))
        }
        None => {
            let vocab = build_vocab(&train);
            let v = if cfg.alpha > 0.0 {
                Some(pretrain(&train, None, &vocab, &cfg)?)
            } else {
                None
            };
            (vocab, v)
        }
    };
    create_dir(&a.out_dir)?;
    let out = run_training(&train, &val, &val, &cfg, vocab, validator, &a.out_dir, &mut manifest)?;
    manifest.write(&a.out_dir.join("manifest.json"))?;
    println!("{}", out.report.to_table());
    println!("wrote run to {}", a.out_dir.display());
    Ok(())
}

/// Reads one generation per line: `{"id", "output"}` objects, or raw text
/// with the line number as id.
fn read_generations(path: &Path) -> Result<Vec<Generation>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Generation>(line) {
            Ok(g) => out.push(g),
            Err(_) if !line.trim_start().starts_with('{') => out.push(Generation {
                id: (i + 1).to_string(),
                output: line.to_string(),
            }),
            Err(e) => bail!("{}: line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

pub fn parse(a: &ParseArgs) -> Result<()> {
    let ontology = load_ontology(&a.ontology)?;
    let gens = read_generations(&a.input)?;
    let mut rows = Vec::with_capacity(gens.len());
    let (mut skipped, mut ooo) = (0, 0);
    for g in gens {
        let (entities, diagnostics) = parse_linearized(&g.output, &ontology);
        skipped += diagnostics.skipped_count();
        ooo += diagnostics.out_of_ontology.len();
        rows.push(Prediction {
            id: g.id,
            entities,
            diagnostics,
        });
    }
    write_jsonl(&a.out, &rows)?;
    let mut m = RunManifest::new("parse", 0, json!({}));
    m.input(&a.ontology)?;
    m.input(&a.input)?;
    m.output(&a.out);
    m.write(&beside(&a.out))?;
    println!(
        "parsed {} lines: {skipped} skipped segments, {ooo} out-of-ontology types",
        rows.len()
    );
    Ok(())
}

fn read_predictions(path: &Path) -> Result<(Vec<SentenceEntities>, DiagnosticTotals)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    let mut diag = DiagnosticTotals::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction =
            serde_json::from_str(line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        diag.skipped_segments += p.diagnostics.skipped_count();
        diag.out_of_ontology += p.diagnostics.out_of_ontology.len();
        out.push(SentenceEntities::new(p.id, p.entities));
    }
    Ok((out, diag))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let gold = read_corpus(&a.gold)?;
    let ontology = load_ontology(&a.train_ontology)?;
    let (pred, diag) = read_predictions(&a.pred)?;
    let report = eval::evaluate(&eval::gold_entities(&gold), &pred, &ontology, diag)?;
    write_pretty(&a.out, &report)?;
    let mut m = RunManifest::new("evaluate", 0, json!({}));
    m.input(&a.gold)?;
    m.input(&a.pred)?;
    m.input(&a.train_ontology)?;
    m.output(&a.out);
    m.write(&beside(&a.out))?;
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{}", report.to_table())?;
    Ok(())
}
