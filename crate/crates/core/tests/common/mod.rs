#![allow(dead_code)]

use fsner::corpus::synthetic::{generate_synthetic, GeneratorSpec};
use fsner::linearize::build_vocab;
use fsner::nn::Seq2Seq;
use fsner::selfval::Validator;
use fsner::trainer::Trainer;
use fsner::{Corpus, TrainConfig, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Few types, few words: keeps the vocabulary well under 50.
pub fn tiny_corpus(n_sentences: usize, seed: u64) -> Corpus {
    let spec = GeneratorSpec {
        n_types: 3,
        n_sentences,
        mean_entities: 2.0,
        max_entities: 3,
        words_per_type: 2,
        ..GeneratorSpec::default()
    };
    generate_synthetic(&spec, seed).expect("feasible spec").0
}

pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_len: 64,
        batch_size: 4,
        beam: 2,
        max_gen_len: 24,
        epochs: 3,
        t0: 10,
        validator_epochs: 5,
        ..TrainConfig::default()
    }
}

/// Untrained but frozen validator; enough for gradient and plumbing tests.
pub fn random_validator(cfg: &TrainConfig, vocab: &Vocab, seed: u64) -> Validator<f64> {
    let mc = cfg.model_config(vocab.len());
    Validator {
        model: Seq2Seq::new(mc, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap(),
        frozen: true,
    }
}

pub fn tiny_trainer(cfg: TrainConfig, corpus: &Corpus) -> Trainer<f64> {
    let vocab = build_vocab(corpus);
    let v = (cfg.alpha > 0.0).then(|| random_validator(&cfg, &vocab, 99));
    Trainer::new(cfg, vocab, v).unwrap()
}

pub fn flat_params(t: &Trainer<f64>) -> Vec<f64> {
    t.extractor
        .params()
        .tensors()
        .iter()
        .chain(t.head.params().tensors())
        .flat_map(|m| m.data().iter().copied())
        .collect()
}

/// Worst relative error between the analytic gradient and central
/// differences at `n` random trainable coordinates, plus the coordinates
/// actually checked.
pub fn gradient_check(cfg: TrainConfig, n: usize, seed: u64) -> (f64, usize) {
    use fsner::trainer::{prepare_examples, Example};
    use rand::Rng;

    let corpus = tiny_corpus(4, seed);
    let mut t = tiny_trainer(cfg, &corpus);
    // Nonzero head so every contrastive path carries signal.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for m in t.head.params_mut().tensors_mut() {
        for x in m.data_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    let examples = prepare_examples(&corpus, &t.vocab);
    let batch: Vec<&Example> = examples.iter().collect();
    let (_, grads) = t.compute(&batch, 3).unwrap();
    let sizes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let mut flat = rng.gen_range(0..total);
        let mut tensor = 0;
        while flat >= sizes[tensor] {
            flat -= sizes[tensor];
            tensor += 1;
        }
        let analytic = grads[tensor].data()[flat];
        let mut eval = |delta: f64| {
            t.trainable_mut()[tensor].data_mut()[flat] += delta;
            let (bd, _) = t.compute(&batch, 3).unwrap();
            t.trainable_mut()[tensor].data_mut()[flat] -= delta;
            bd.total
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    (worst, n)
}

pub mod strategies {
    use fsner::{Entity, EntityList};
    use proptest::prelude::*;

    /// Surface words may carry internal commas and hyphens but never a
    /// comma followed by a space.
    pub fn surface() -> impl Strategy<Value = String> {
        prop::collection::vec("[A-Za-z0-9()\\-]{1,6}(,[A-Za-z0-9]{1,3})?", 1..4).prop_map(|w| w.join(" "))
    }

    pub fn type_name() -> impl Strategy<Value = String> {
        prop::collection::vec("[A-Z][a-z]{1,8}", 1..3).prop_map(|w| w.join(" "))
    }

    pub fn entity_list() -> impl Strategy<Value = EntityList> {
        prop::collection::vec((surface(), type_name()), 0..6)
            .prop_map(|v| EntityList::new(v.into_iter().map(|(s, t)| Entity::new(s, t)).collect()))
    }
}
