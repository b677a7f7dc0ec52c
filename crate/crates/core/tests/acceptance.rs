//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! a gating criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fsner::ablation::{cell_config, cell_mean, summarize, CellResult, DEFAULT_KS, GRID};
use fsner::checkpoint::TensorDump;
use fsner::contrastive::loss_cl;
use fsner::corpus::long_tail_types;
use fsner::corpus::synthetic::{generate_synthetic, GeneratorSpec};
use fsner::eval::{entity_micro_f1, mention_micro_f1, SentenceEntities};
use fsner::fewshot::{sample_fewshot, FewShotSpec};
use fsner::fixtures;
use fsner::linearize::{build_vocab, linearize, parse_linearized};
use fsner::selfval::{gumbel_softmax, pretrain_validator};
use fsner::trainer::{prepare_examples, steps_csv, Trainer};
use fsner::{Corpus, Entity, EntityList, Matrix64, Ontology, TrainConfig, Validator64, Vocab};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(id: &str, gating: bool, elapsed: Duration, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let gate = if gating { "" } else { " (non-gating)" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id:>3}: {tag}{gate} [{:.1}s] {}", elapsed.as_secs_f64(), o.detail).unwrap();
}

fn c1_linearization() -> Outcome {
    let mut runner = TestRunner::new_with_rng(Config::default(), TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]));
    let strategy = common::strategies::entity_list();
    let mut failures = 0;
    for _ in 0..1000 {
        let list = strategy.new_tree(&mut runner).unwrap().current();
        let text = linearize(&list).unwrap();
        let onto = Ontology::from_counts(list.entries.iter().map(|e| (e.type_name.clone(), 1)));
        if parse_linearized(&text, &onto).0 != list {
            failures += 1;
        }
    }
    let example = linearize(&EntityList::from_sentence(&fixtures::running_example())).unwrap();
    let verbatim = example == fixtures::RUNNING_EXAMPLE_LINEARIZED;
    outcome(
        failures == 0 && verbatim,
        format!("1000 random lists, {failures} round-trip failures; running example verbatim: {verbatim}"),
    )
}

/// Multiset intersection size by sorting both sides and merging.
fn merge_matches<K: Ord + Clone>(mut a: Vec<K>, mut b: Vec<K>) -> usize {
    a.sort();
    b.sort();
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn c2_metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let surfaces = ["a", "b", "c d", "e"];
    let types = ["X", "Y", "Z"];
    let random_list = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(0..=5);
        EntityList::new(
            (0..n)
                .map(|_| Entity::new(surfaces[rng.gen_range(0..4)], types[rng.gen_range(0..3)]))
                .collect(),
        )
    };
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=10);
        let gold: Vec<SentenceEntities> = (0..n).map(|i| SentenceEntities::new(i.to_string(), random_list(&mut rng))).collect();
        let pred: Vec<SentenceEntities> = (0..n).map(|i| SentenceEntities::new(i.to_string(), random_list(&mut rng))).collect();
        let (mut tp, mut gn, mut pn, mut mtp) = (0, 0, 0, 0);
        for (g, p) in gold.iter().zip(&pred) {
            let key = |e: &Entity| (e.surface.clone(), e.type_name.clone());
            tp += merge_matches(g.entities.iter().map(key).collect(), p.entities.iter().map(key).collect());
            mtp += merge_matches(
                g.entities.iter().map(|e| e.surface.clone()).collect(),
                p.entities.iter().map(|e| e.surface.clone()).collect(),
            );
            gn += g.entities.len();
            pn += p.entities.len();
        }
        let (entity, _) = entity_micro_f1(&gold, &pred).unwrap();
        let mention = mention_micro_f1(&gold, &pred).unwrap();
        let ok = entity.counts.tp == tp
            && entity.counts.fp == pn - tp
            && entity.counts.fn_ == gn - tp
            && mention.counts.tp == mtp
            && mention.counts.fp == pn - mtp
            && mention.counts.fn_ == gn - mtp;
        if !ok {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("500 random corpora, {mismatches} count mismatches"))
}

fn c3_long_tail() -> Outcome {
    let check = |onto: Ontology, expected: &[&str]| {
        let got: BTreeSet<String> = long_tail_types(&onto).unwrap().into_iter().collect();
        let want: BTreeSet<String> = expected.iter().map(|s| s.to_string()).collect();
        (got == want, got.len())
    };
    let (chemet, n1) = check(fixtures::chemet_ontology(), fixtures::CHEMET_LONG_TAIL);
    let (plus, n2) = check(fixtures::chemner_plus_ontology(), fixtures::CHEMNER_PLUS_LONG_TAIL);
    outcome(
        chemet && plus && n1 == 14 && n2 == 26,
        format!("CHEMET {n1} types (exact: {chemet}); ChemNER+ {n2} types (exact: {plus})"),
    )
}

fn c4_gradients() -> Outcome {
    let gen_cfg = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ..common::tiny_config()
    };
    let (gen_err, n1) = common::gradient_check(gen_cfg, 120, 41);
    let (joint_err, n2) = common::gradient_check(common::tiny_config(), 120, 42);
    outcome(
        gen_err <= 1e-4 && joint_err <= 1e-3 && n1 >= 100 && n2 >= 100,
        format!("L_gen worst rel err {gen_err:.2e} over {n1} coords; joint {joint_err:.2e} over {n2} coords"),
    )
}

fn c5_gumbel() -> Outcome {
    let p = [0.1, 0.2, 0.3, 0.4];
    let draws = 20_000;
    let probs = Matrix64::from_fn(draws, 4, |_, c| p[c]);
    let sample = gumbel_softmax(&probs, 1.0, 5).unwrap();
    let mut counts = [0usize; 4];
    for r in 0..draws {
        let row = sample.row(r);
        let arg = (0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        counts[arg] += 1;
    }
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let worst = freqs.iter().zip(p).map(|(f, q)| (f - q).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 0.02,
        format!("argmax frequencies {freqs:.4?}, worst deviation {worst:.4}"),
    )
}

fn c6_infonce() -> (Outcome, Outcome) {
    let sym = loss_cl(0.3, &[0.3; 5], 1.0).unwrap();
    let sym_err = (sym - 6f64.ln()).abs();
    let asym = loss_cl(0.9, &[0.1, 0.2], 0.5).unwrap();
    // Scalar evaluation of the fixture's written expression.
    let written = -(1.8f64.exp() / (0.2f64.exp() + 0.4f64.exp() + 1.8f64.exp())).ln();
    let stated = 0.459856;
    (
        outcome(
            sym_err <= 1e-9 && (asym - written).abs() <= 1e-12,
            format!("symmetric {sym:.12} (|err| {sym_err:.1e}); asymmetric {asym:.6} equals its written expression {written:.6}"),
        ),
        outcome(
            (asym - stated).abs() <= 1e-5,
            format!("asymmetric {asym:.6} vs stated {stated}; the stated constant does not follow from its own expression"),
        ),
    )
}

struct Overfit {
    corpus: Corpus,
    vocab: Vocab,
    validator: Validator64,
}

fn overfit_setup() -> Overfit {
    let spec = GeneratorSpec {
        n_sentences: 32,
        ..GeneratorSpec::default()
    };
    let (corpus, _) = generate_synthetic(&spec, 1).unwrap();
    let vocab = build_vocab(&corpus);
    let cfg = TrainConfig::default();
    let validator =
        pretrain_validator(&corpus, None, &vocab, cfg.model_config(vocab.len()), &cfg.pretrain_config()).unwrap();
    Overfit { corpus, vocab, validator }
}

fn c7_freeze(o: &Overfit) -> Outcome {
    let mut t = Trainer::new(TrainConfig::default(), o.vocab.clone(), Some(o.validator.clone())).unwrap();
    let bytes = |t: &Trainer<f64>| serde_json::to_vec(&TensorDump::from_store(t.validator.as_ref().unwrap().model.params())).unwrap();
    let before = bytes(&t);
    let examples = prepare_examples(&o.corpus, &o.vocab);
    for _ in 0..50 {
        t.next_step(&examples).unwrap();
    }
    let same = before == bytes(&t);
    outcome(same, format!("validator dump of {} bytes identical after 50 joint steps: {same}", before.len()))
}

fn c8_overfit(o: &Overfit, pretrain_time: Duration) -> Outcome {
    let cfg = TrainConfig {
        target_f1: Some(0.95),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut t = Trainer::new(cfg, o.vocab.clone(), Some(o.validator.clone())).unwrap();
    let log = t.train(&o.corpus, &o.corpus).unwrap();
    let total = pretrain_time + start.elapsed();
    let (f1, epoch) = log.best.as_ref().map(|b| (b.0, b.1)).unwrap_or((0.0, 0));
    outcome(
        f1 >= 0.95 && log.epochs.len() <= 300 && total < Duration::from_secs(600),
        format!(
            "best F1 {f1:.4} at epoch {epoch} ({} epochs run); pipeline time {:.0}s",
            log.epochs.len(),
            total.as_secs_f64()
        ),
    )
}

fn c9_determinism(o: &Overfit) -> Outcome {
    let run = || {
        let mut t = Trainer::new(TrainConfig::default(), o.vocab.clone(), Some(o.validator.clone())).unwrap();
        let examples = prepare_examples(&o.corpus, &o.vocab);
        let steps: Vec<_> = (0..10).map(|_| t.next_step(&examples).unwrap().0).collect();
        steps_csv(&steps)
    };
    let (a, b) = (run(), run());
    outcome(a == b && a.lines().count() == 11, "first 10 step rows byte-identical across two runs")
}

/// Desk-scale grid: small model, greedy decoding and a fixed optimizer-step
/// budget per cell so all 75 cells fit on one core.
const ABLATION_STEPS: usize = 450;

fn ablation_config() -> TrainConfig {
    TrainConfig {
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        lr: 3e-3,
        t0: 100_000,
        batch_size: 4,
        beam: 1,
        max_gen_len: 48,
        validator_epochs: 100,
        ..TrainConfig::default()
    }
}

fn c10_trend() -> Outcome {
    let (pool, _) = generate_synthetic(&GeneratorSpec::default(), 10).unwrap();
    let test_spec = GeneratorSpec {
        n_sentences: 40,
        id_prefix: "test".into(),
        ..GeneratorSpec::default()
    };
    let (test, _) = generate_synthetic(&test_spec, 11).unwrap();
    let base = ablation_config();
    let vocab = build_vocab(&pool);
    let seeds = [1u64, 2, 3, 4, 5];
    let mut results = Vec::new();
    for k in DEFAULT_KS {
        for seed in seeds {
            let (train, _) = sample_fewshot(&pool, &FewShotSpec::new(k, seed)).unwrap();
            let per_epoch = train.len().div_ceil(base.batch_size);
            let epochs = ABLATION_STEPS.div_ceil(per_epoch);
            let validator: Validator64 = pretrain_validator(
                &train,
                None,
                &vocab,
                base.model_config(vocab.len()),
                &TrainConfig { seed, ..base.clone() }.pretrain_config(),
            )
            .unwrap();
            for (name, use_val, use_cl) in GRID {
                let cfg = TrainConfig {
                    epochs,
                    eval_every: epochs,
                    ..cell_config(&base, seed, use_val, use_cl)
                };
                let v = use_val.then(|| validator.clone());
                let mut t = Trainer::new(cfg, vocab.clone(), v).unwrap();
                t.train(&train, &train).unwrap();
                let report = t.evaluate(&test, train.ontology()).unwrap();
                results.push(CellResult::from_report(name, k, seed, &report));
            }
        }
    }
    let table = summarize(&results, &DEFAULT_KS);
    let mut out = std::io::stdout().lock();
    writeln!(out, "\nablation summary ({ABLATION_STEPS} steps per cell):\n{table}").unwrap();
    let len = |r: &CellResult| r.avg_mention_tokens;
    let [base_len, valid_len, cl_len] = ["base", "valid", "valid_cl"].map(|c| cell_mean(&results, c, 6, len));
    // An empty prediction set has mean length 0 and says nothing about the trend.
    let informative = results.iter().filter(|r| r.k == 6).all(|r| r.avg_mention_tokens > 0.0);
    let rows_present = GRID.iter().all(|g| table.contains(&format!("| {} |", g.0)));
    outcome(
        informative && rows_present && cl_len <= valid_len,
        format!(
            "k=6 mean mention tokens: +Valid+CL {cl_len:.3}, +Valid {valid_len:.3}, Base {base_len:.3}; \
             all cells predicted mentions: {informative}; table rows present: {rows_present}"
        ),
    )
}

fn main() -> ExitCode {
    let mut gating_failed = Vec::new();
    let mut run = |id: &str, gating: bool, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        report(id, gating, start.elapsed(), &o);
        if gating && !o.pass {
            gating_failed.push(id.to_string());
        }
    };
    run("1", true, &mut || {
        let start = Instant::now();
        let o = c1_linearization();
        let fast = start.elapsed() < Duration::from_secs(5);
        outcome(o.pass && fast, format!("{}; under 5s: {fast}", o.detail))
    });
    run("2", true, &mut || {
        let start = Instant::now();
        let o = c2_metric_oracle();
        let fast = start.elapsed() < Duration::from_secs(30);
        outcome(o.pass && fast, format!("{}; under 30s: {fast}", o.detail))
    });
    run("3", true, &mut c3_long_tail);
    run("4", true, &mut || {
        let start = Instant::now();
        let o = c4_gradients();
        let fast = start.elapsed() < Duration::from_secs(120);
        outcome(o.pass && fast, format!("{}; under 2 min: {fast}", o.detail))
    });
    run("5", true, &mut c5_gumbel);
    let (sym, stated) = c6_infonce();
    let mut sym = Some(sym);
    let mut stated = Some(stated);
    run("6a", true, &mut || sym.take().unwrap());
    run("6b", false, &mut || stated.take().unwrap());

    let start = Instant::now();
    let setup = overfit_setup();
    let pretrain_time = start.elapsed();
    run("7", true, &mut || c7_freeze(&setup));
    run("8", true, &mut || c8_overfit(&setup, pretrain_time));
    run("9", true, &mut || c9_determinism(&setup));
    run("10", false, &mut c10_trend);

    let mut out = std::io::stdout().lock();
    if gating_failed.is_empty() {
        writeln!(out, "acceptance: all gating criteria passed").unwrap();
        ExitCode::SUCCESS
    } else {
        writeln!(out, "acceptance: gating failures: {}", gating_failed.join(", ")).unwrap();
        ExitCode::FAILURE
    }
}
