//! Deterministic generator of long-tailed synthetic NER corpora.
//!
//! Type frequencies follow a power law `w_i ∝ (i+1)^-exponent` over type
//! rank, apportioned exactly (largest remainder) over the mention slots so
//! the emitted tally is a deterministic function of the spec. Each type owns
//! a private pool of mention words, which keeps types learnable, and filler
//! words never occur inside mentions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Corpus, Mention};
use crate::error::{Error, Result};

const PREFIXES: &[&str] = &[
    "Alpha", "Beta", "Gamma", "Delta", "Epsilon", "Zeta", "Eta", "Theta", "Iota", "Kappa", "Lambda", "Mu", "Nu",
    "Xi", "Omicron", "Pi", "Rho", "Sigma", "Tau", "Upsilon", "Phi", "Chi", "Psi", "Omega",
];

const SUFFIXES: &[&str] = &[
    "compounds", "reactions", "ligands", "catalysts", "polymers", "acids", "halides", "complexes",
];

const ROOTS: &[&str] = &[
    "benz", "pyr", "meth", "eth", "prop", "but", "phen", "tol", "xyl", "naphth", "anthr", "ind", "quin", "thi",
    "fur", "imid", "ox", "az", "piper", "morph", "sil", "bor", "phosph", "sulf", "chlor", "brom", "iod", "fluor",
    "nitr", "cyan", "carb", "acet", "form", "glyc", "lact", "mal", "succ", "tart", "cinn", "vanill",
];

const ENDINGS: &[&str] = &["ane", "ene", "yne", "ol", "ide", "ate"];

const FILLERS: &[&str] = &[
    "we", "the", "using", "at", "of", "through", "describe", "with", "via", "under", "and", "in", "for", "by",
    "from", "reported", "observed", "yields", "was", "were", "is", "a", "an", "to", "as", "on", "after", "before",
    "then", "shows", "gave", "afforded", "product", "mixture", "conditions", "study", "examples", "first", "new",
    "high",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_types: usize,
    /// Power-law exponent over type rank; 0 gives uniform counts.
    pub exponent: f64,
    pub n_sentences: usize,
    /// Target mean mentions per sentence.
    pub mean_entities: f64,
    pub max_entities: usize,
    /// Distinct mention words per type.
    pub words_per_type: usize,
    /// Maximum filler words between consecutive mentions (at least one).
    pub max_gap: usize,
    /// Prefix for sentence ids.
    pub id_prefix: String,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_types: 10,
            exponent: 1.0,
            n_sentences: 200,
            mean_entities: 3.1,
            max_entities: 8,
            words_per_type: 6,
            max_gap: 2,
            id_prefix: "syn".into(),
        }
    }
}

/// Emitted per-type mention counts, written next to the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub spec: GeneratorSpec,
    pub seed: u64,
    pub tally: BTreeMap<String, usize>,
    pub sentences: usize,
    pub mentions: usize,
}

pub fn type_name(i: usize) -> String {
    format!(
        "{} {}",
        PREFIXES[i % PREFIXES.len()],
        SUFFIXES[(i / PREFIXES.len() + i) % SUFFIXES.len()]
    )
}

fn type_words(i: usize, n: usize) -> Vec<String> {
    let root = ROOTS[i % ROOTS.len()];
    let lap = i / ROOTS.len();
    (0..n)
        .map(|j| {
            let ending = ENDINGS[j % ENDINGS.len()];
            let rep = j / ENDINGS.len();
            match (lap, rep) {
                (0, 0) => format!("{root}{ending}"),
                (0, r) => format!("{root}{ending}{r}"),
                (l, 0) => format!("{root}{l}{ending}"),
                (l, r) => format!("{root}{l}{ending}{r}"),
            }
        })
        .collect()
}

/// Largest-remainder apportionment of `total` items over `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let l = (-lambda).exp();
    let mut k = 0;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
    }
}

pub fn generate_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<(Corpus, GeneratorReport)> {
    if spec.n_types == 0 || spec.n_sentences == 0 || spec.max_entities == 0 || spec.words_per_type == 0 {
        return Err(Error::Infeasible("counts must be positive".into()));
    }
    if !(spec.exponent.is_finite() && spec.exponent >= 0.0) {
        return Err(Error::Infeasible(format!("exponent {} must be finite and >= 0", spec.exponent)));
    }
    if !(spec.mean_entities >= 1.0 && spec.mean_entities <= spec.max_entities as f64) {
        return Err(Error::Infeasible(format!(
            "mean entities {} outside [1, {}]",
            spec.mean_entities, spec.max_entities
        )));
    }
    if spec.n_types > spec.n_sentences * spec.max_entities {
        return Err(Error::Infeasible(format!(
            "{} types cannot fit in {} sentences of at most {} mentions",
            spec.n_types, spec.n_sentences, spec.max_entities
        )));
    }
    if spec.n_types > PREFIXES.len() * SUFFIXES.len() {
        return Err(Error::Infeasible(format!("at most {} types supported", PREFIXES.len() * SUFFIXES.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_sentence: Vec<usize> = (0..spec.n_sentences)
        .map(|_| (1 + poisson(&mut rng, spec.mean_entities - 1.0)).min(spec.max_entities))
        .collect();
    let mut slots: usize = per_sentence.iter().sum();
    let mut i = 0;
    while slots < spec.n_types {
        if per_sentence[i] < spec.max_entities {
            per_sentence[i] += 1;
            slots += 1;
        }
        i = (i + 1) % spec.n_sentences;
    }

    // every type at least once, the rest by power law
    let weights: Vec<f64> = (0..spec.n_types).map(|r| ((r + 1) as f64).powf(-spec.exponent)).collect();
    let extra = apportion(slots - spec.n_types, &weights);
    let mut labels: Vec<usize> = Vec::with_capacity(slots);
    for (t, &c) in extra.iter().enumerate() {
        labels.extend(std::iter::repeat(t).take(c + 1));
    }
    labels.shuffle(&mut rng);

    let names: Vec<String> = (0..spec.n_types).map(type_name).collect();
    let pools: Vec<Vec<String>> = (0..spec.n_types).map(|t| type_words(t, spec.words_per_type)).collect();
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    let mut sentences = Vec::with_capacity(spec.n_sentences);
    let mut next = labels.into_iter();
    let width = spec.n_sentences.to_string().len().max(4);
    for (s, &count) in per_sentence.iter().enumerate() {
        let mut tokens: Vec<String> = Vec::new();
        let mut mentions = Vec::with_capacity(count);
        let lead = rng.gen_range(0..=spec.max_gap);
        push_fillers(&mut tokens, lead, &mut rng);
        for k in 0..count {
            if k > 0 {
                let gap = rng.gen_range(1..=spec.max_gap.max(1));
                push_fillers(&mut tokens, gap, &mut rng);
            }
            let t = next.next().expect("one label per slot");
            let len = if rng.gen_bool(0.4) { 2 } else { 1 };
            let start = tokens.len();
            for _ in 0..len {
                tokens.push(pools[t].choose(&mut rng).unwrap().clone());
            }
            mentions.push(Mention {
                start,
                end: tokens.len(),
                surface: tokens[start..].join(" "),
                type_name: names[t].clone(),
            });
            *tally.entry(names[t].clone()).or_default() += 1;
        }
        let tail = rng.gen_range(1..=spec.max_gap.max(1));
        push_fillers(&mut tokens, tail, &mut rng);
        sentences.push(AnnotatedSentence {
            id: format!("{}-{:0width$}", spec.id_prefix, s),
            tokens,
            mentions,
        });
    }
    let corpus = Corpus::new(sentences)?;
    let report = GeneratorReport {
        spec: spec.clone(),
        seed,
        sentences: corpus.len(),
        mentions: corpus.mention_count(),
        tally,
    };
    Ok((corpus, report))
}

fn push_fillers(tokens: &mut Vec<String>, n: usize, rng: &mut ChaCha8Rng) {
    for _ in 0..n {
        tokens.push(FILLERS.choose(rng).unwrap().to_string());
    }
}
