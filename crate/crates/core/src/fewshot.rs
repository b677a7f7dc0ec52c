//! Frequency-proportional k-shot subsampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Corpus, Ontology};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSpec {
    /// Mention budget of the most frequent type.
    pub k: usize,
    pub seed: u64,
}

impl FewShotSpec {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeTally {
    pub quota: usize,
    pub achieved: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub k: usize,
    pub seed: u64,
    pub sentences: usize,
    pub per_type: BTreeMap<String, TypeTally>,
    /// Types whose achieved count ended above quota.
    pub overshoot: Vec<String>,
    /// Sentences added only to cover a type the greedy pass missed.
    pub repaired: Vec<String>,
}

/// Per-type target `max(1, round_half_up(k * f / f_max))`.
pub fn quotas(ontology: &Ontology, k: usize) -> BTreeMap<String, usize> {
    let f_max = ontology.frequencies().values().copied().max().unwrap_or(0);
    ontology
        .frequencies()
        .iter()
        .filter(|(_, &f)| f > 0)
        .map(|(t, &f)| {
            // Integer round-half-up of k*f/f_max.
            let q = (2 * k * f + f_max) / (2 * f_max);
            (t.clone(), q.max(1))
        })
        .collect()
}

fn type_counts(s: &AnnotatedSentence) -> BTreeMap<&str, usize> {
    let mut c = BTreeMap::new();
    for m in &s.mentions {
        *c.entry(m.type_name.as_str()).or_insert(0) += 1;
    }
    c
}

/// Greedy seeded selection: visit sentences in shuffled order and keep one
/// when it moves some type toward its quota without pushing any type more
/// than one past it (the head types get no slack). Types left uncovered are
/// then repaired with the sentence that overshoots least.
pub fn sample_fewshot(corpus: &Corpus, spec: &FewShotSpec) -> Result<(Corpus, SamplingReport)> {
    if spec.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if corpus.is_empty() || corpus.mention_count() == 0 {
        return Err(Error::Empty("few-shot source corpus"));
    }
    let ontology = corpus.ontology();
    let quota = quotas(ontology, spec.k);
    let f_max = ontology.frequencies().values().copied().max().unwrap_or(0);
    let slack: BTreeMap<&str, usize> = ontology
        .frequencies()
        .iter()
        .map(|(t, &f)| (t.as_str(), usize::from(f < f_max)))
        .collect();

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let sentences = corpus.sentences();
    let mut achieved: BTreeMap<&str, usize> = quota.keys().map(|t| (t.as_str(), 0)).collect();
    let mut chosen = vec![false; corpus.len()];
    let mut picked = Vec::new();

    for &i in &order {
        let counts = type_counts(&sentences[i]);
        if counts.is_empty() {
            continue;
        }
        let helps = counts.keys().any(|t| achieved[t] < quota[*t]);
        let fits = counts.iter().all(|(t, &c)| achieved[t] + c <= quota[*t] + slack[t]);
        if helps && fits {
            for (t, c) in counts {
                *achieved.get_mut(t).unwrap() += c;
            }
            chosen[i] = true;
            picked.push(i);
        }
    }

    let mut repaired = Vec::new();
    let uncovered: Vec<&str> = achieved.iter().filter(|(_, &a)| a == 0).map(|(t, _)| *t).collect();
    for t in uncovered {
        if achieved[t] > 0 {
            continue;
        }
        let best = order
            .iter()
            .copied()
            .filter(|&i| !chosen[i])
            .filter_map(|i| {
                let counts = type_counts(&sentences[i]);
                counts.contains_key(t).then(|| {
                    let over: usize = counts
                        .iter()
                        .map(|(u, &c)| (achieved[u] + c).saturating_sub(quota[*u]))
                        .sum();
                    (over, i)
                })
            })
            .min_by_key(|&(over, _)| over);
        if let Some((_, i)) = best {
            for (u, c) in type_counts(&sentences[i]) {
                *achieved.get_mut(u).unwrap() += c;
            }
            chosen[i] = true;
            picked.push(i);
            repaired.push(sentences[i].id.clone());
        }
    }

    picked.sort_unstable();
    let out = corpus.subset(&picked);
    let per_type: BTreeMap<String, TypeTally> = quota
        .iter()
        .map(|(t, &q)| {
            (
                t.clone(),
                TypeTally {
                    quota: q,
                    achieved: achieved[t.as_str()],
                },
            )
        })
        .collect();
    let overshoot = per_type
        .iter()
        .filter(|(_, v)| v.achieved > v.quota)
        .map(|(t, _)| t.clone())
        .collect();
    let report = SamplingReport {
        k: spec.k,
        seed: spec.seed,
        sentences: out.len(),
        per_type,
        overshoot,
        repaired,
    };
    Ok((out, report))
}
