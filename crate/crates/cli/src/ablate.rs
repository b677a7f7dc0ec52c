//! Base / +Valid / +Valid+CL grid over k and seeds.

use std::fs;

use anyhow::{Context, Result};
use serde_json::json;

use fsner::ablation::{cell_config, summarize, CellResult, GRID};
use fsner::corpus::save_corpus;
use fsner::fewshot::{sample_fewshot, FewShotSpec};
use fsner::linearize::build_vocab;
use fsner::TrainConfig;

use crate::commands::{load_config, pretrain, read_corpus, run_training};
use crate::manifest::RunManifest;
use crate::AblateArgs;

pub fn run(a: &AblateArgs) -> Result<()> {
    let base = load_config(a.config.as_deref(), None, a.epochs)?;
    let pool = read_corpus(&a.train)?;
    let test = read_corpus(&a.test)?;
    let val = a.val.as_deref().map(read_corpus).transpose()?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    // Built from the whole pool, like a fixed pretrained tokenizer.
    let vocab = build_vocab(&pool);
    let mut results = Vec::new();
    for &k in &a.k {
        for &seed in &a.seeds {
            let (train, rep) = sample_fewshot(&pool, &FewShotSpec::new(k, seed))?;
            let data_dir = a.out_dir.join("data").join(format!("k{k}")).join(format!("seed{seed}"));
            fs::create_dir_all(&data_dir).with_context(|| format!("creating {}", data_dir.display()))?;
            let train_path = data_dir.join("train.jsonl");
            save_corpus(&train, &train_path)?;
            fs::write(data_dir.join("sampling.json"), serde_json::to_string_pretty(&rep)?)?;
            // One validator per (k, seed), shared by the rows that use it.
            let validator = if base.alpha > 0.0 {
                Some(pretrain(&train, None, &vocab, &TrainConfig { seed, ..base.clone() })?)
            } else {
                None
            };
            let select = val.as_ref().unwrap_or(&train);
            for (name, use_val, use_cl) in GRID {
                let cfg = cell_config(&base, seed, use_val, use_cl);
                let dir = a.out_dir.join(name).join(format!("k{k}")).join(format!("seed{seed}"));
                let mut manifest = RunManifest::new("ablate", seed, serde_json::to_value(&cfg)?);
                manifest.input(&a.train)?;
                manifest.input(&a.test)?;
                if let Some(p) = &a.val {
                    manifest.input(p)?;
                }
                manifest.input(&train_path)?;
                let v = if use_val { validator.clone() } else { None };
                let out = run_training(&train, select, &test, &cfg, vocab.clone(), v, &dir, &mut manifest)?;
                manifest.write(&dir.join("manifest.json"))?;
                log::info!("{name} k={k} seed={seed}: F1 {:.4}", out.report.f1);
                results.push(CellResult {
                    train_sentences: train.len(),
                    best_epoch: out.best_epoch,
                    epochs_run: out.epochs_run,
                    ..CellResult::from_report(name, k, seed, &out.report)
                });
            }
        }
    }
    let summary = summarize(&results, &a.k);
    fs::write(a.out_dir.join("summary.md"), &summary)?;
    let json = json!({ "k": a.k, "seeds": a.seeds, "results": results });
    fs::write(a.out_dir.join("summary.json"), serde_json::to_string_pretty(&json)?)?;
    print!("{summary}");
    Ok(())
}
