//! Exact-match scoring of predicted entity lists against gold.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{long_tail_types, Corpus, Ontology};
use crate::error::{Error, Result};
use crate::linearize::{Entity, EntityList};

/// Entities attached to a sentence id; also the prediction file record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceEntities {
    pub id: String,
    pub entities: Vec<Entity>,
}

impl SentenceEntities {
    pub fn new(id: impl Into<String>, entities: EntityList) -> Self {
        Self {
            id: id.into(),
            entities: entities.entries,
        }
    }
}

/// Gold entity lists of every sentence, in corpus order.
pub fn gold_entities(corpus: &Corpus) -> Vec<SentenceEntities> {
    corpus
        .sentences()
        .iter()
        .map(|s| SentenceEntities::new(s.id.clone(), EntityList::from_sentence(s)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl From<Counts> for Scores {
    fn from(c: Counts) -> Self {
        Self {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            counts: c,
        }
    }
}

/// Pairs each gold sentence with its prediction by id.
fn align<'a>(gold: &'a [SentenceEntities], pred: &'a [SentenceEntities]) -> Result<Vec<(&'a [Entity], &'a [Entity])>> {
    let by_id: HashMap<&str, &SentenceEntities> = pred.iter().map(|p| (p.id.as_str(), p)).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.id.as_str()).collect();
    if by_id.len() != pred.len() || gold_ids.len() != gold.len() {
        return Err(Error::MismatchedIds("duplicate sentence id".into()));
    }
    if let Some(extra) = by_id.keys().find(|k| !gold_ids.contains(*k)) {
        return Err(Error::MismatchedIds(format!("prediction for unknown sentence {extra}")));
    }
    gold.iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|p| (g.entities.as_slice(), p.entities.as_slice()))
                .ok_or_else(|| Error::MismatchedIds(format!("no prediction for sentence {}", g.id)))
        })
        .collect()
}

/// Walks gold in order, pairing each with the first unused equal
/// prediction. Returns which predictions were used and which gold matched.
fn greedy_match<K: PartialEq>(gold: &[Entity], pred: &[Entity], key: impl Fn(&Entity) -> K) -> (Vec<bool>, Vec<bool>) {
    let mut used = vec![false; pred.len()];
    let mut hit = vec![false; gold.len()];
    for (gi, g) in gold.iter().enumerate() {
        let k = key(g);
        if let Some(pi) = (0..pred.len()).find(|&pi| !used[pi] && key(&pred[pi]) == k) {
            used[pi] = true;
            hit[gi] = true;
        }
    }
    (used, hit)
}

/// Entity-level scores with per-type counts. A prediction is correct when
/// an unmatched gold pair in the same sentence has the same surface and type.
pub fn entity_micro_f1(gold: &[SentenceEntities], pred: &[SentenceEntities]) -> Result<(Scores, BTreeMap<String, Counts>)> {
    let mut total = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, p) in align(gold, pred)? {
        let (used, hit) = greedy_match(g, p, |e| (e.surface.clone(), e.type_name.clone()));
        for (e, h) in g.iter().zip(hit) {
            let c = per_type.entry(e.type_name.clone()).or_default();
            if h {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        }
        for (e, u) in p.iter().zip(used) {
            if !u {
                per_type.entry(e.type_name.clone()).or_default().fp += 1;
            }
        }
    }
    for c in per_type.values() {
        total.add(*c);
    }
    Ok((total.into(), per_type))
}

/// Same matching on surfaces alone.
pub fn mention_micro_f1(gold: &[SentenceEntities], pred: &[SentenceEntities]) -> Result<Scores> {
    let mut total = Counts::default();
    for (g, p) in align(gold, pred)? {
        let (used, hit) = greedy_match(g, p, |e| e.surface.clone());
        let tp = hit.iter().filter(|&&h| h).count();
        total.add(Counts {
            tp,
            fp: used.iter().filter(|&&u| !u).count(),
            fn_: g.len() - tp,
        });
    }
    Ok(total.into())
}

/// Keeps only entities whose type is in `types`.
pub fn restrict_types(data: &[SentenceEntities], types: &BTreeSet<String>) -> Vec<SentenceEntities> {
    data.iter()
        .map(|s| SentenceEntities {
            id: s.id.clone(),
            entities: s.entities.iter().filter(|e| types.contains(&e.type_name)).cloned().collect(),
        })
        .collect()
}

/// Entity micro-F1 restricted to the long-tail half of `train_ontology`.
pub fn longtail_f1(gold: &[SentenceEntities], pred: &[SentenceEntities], train_ontology: &Ontology) -> Result<Scores> {
    let tail: BTreeSet<String> = long_tail_types(train_ontology)?.into_iter().collect();
    if tail.is_empty() {
        return Err(Error::Empty("long-tail type set"));
    }
    Ok(entity_micro_f1(&restrict_types(gold, &tail), &restrict_types(pred, &tail))?.0)
}

/// Mean whitespace-token count of predicted mentions; 0 when there are none.
pub fn avg_mention_tokens(pred: &[SentenceEntities]) -> f64 {
    let (tokens, n) = pred
        .iter()
        .flat_map(|s| &s.entities)
        .fold((0usize, 0usize), |(t, n), e| (t + e.surface.split_whitespace().count(), n + 1));
    ratio(tokens, n)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticTotals {
    pub skipped_segments: usize,
    pub out_of_ontology: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mention: Scores,
    pub longtail: Scores,
    pub avg_mention_tokens: f64,
    pub per_type: BTreeMap<String, Counts>,
    pub diagnostics: DiagnosticTotals,
}

impl EvalReport {
    pub fn mention_f1(&self) -> f64 {
        self.mention.f1
    }

    pub fn longtail_f1(&self) -> f64 {
        self.longtail.f1
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        writeln!(s, "| metric | value |").unwrap();
        writeln!(s, "|---|---|").unwrap();
        for (k, v) in [
            ("entity precision", pct(self.precision)),
            ("entity recall", pct(self.recall)),
            ("entity F1", pct(self.f1)),
            ("mention F1", pct(self.mention.f1)),
            ("long-tail F1", pct(self.longtail.f1)),
            ("avg mention tokens", format!("{:.3}", self.avg_mention_tokens)),
            ("skipped segments", self.diagnostics.skipped_segments.to_string()),
            ("out-of-ontology types", self.diagnostics.out_of_ontology.to_string()),
        ] {
            writeln!(s, "| {k} | {v} |").unwrap();
        }
        writeln!(s).unwrap();
        writeln!(s, "| type | TP | FP | FN |").unwrap();
        writeln!(s, "|---|---|---|---|").unwrap();
        for (t, c) in &self.per_type {
            writeln!(s, "| {t} | {} | {} | {} |", c.tp, c.fp, c.fn_).unwrap();
        }
        s
    }
}

/// Full report. Long-tail scores are zero when the training ontology has
/// fewer than two types.
pub fn evaluate(
    gold: &[SentenceEntities],
    pred: &[SentenceEntities],
    train_ontology: &Ontology,
    diagnostics: DiagnosticTotals,
) -> Result<EvalReport> {
    let (entity, per_type) = entity_micro_f1(gold, pred)?;
    let mention = mention_micro_f1(gold, pred)?;
    let longtail = match longtail_f1(gold, pred, train_ontology) {
        Ok(s) => s,
        Err(Error::Empty(_)) | Err(Error::EmptyOntology) => Counts::default().into(),
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        precision: entity.precision,
        recall: entity.recall,
        f1: entity.f1,
        mention,
        longtail,
        avg_mention_tokens: avg_mention_tokens(pred),
        per_type,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sent(id: &str, es: &[(&str, &str)]) -> SentenceEntities {
        SentenceEntities {
            id: id.into(),
            entities: es.iter().map(|(s, t)| Entity::new(*s, *t)).collect(),
        }
    }

    #[test]
    fn identity_scores_one() {
        let g = vec![sent("a", &[("x", "T")]), sent("b", &[("y z", "U"), ("x", "T")])];
        let (s, _) = entity_micro_f1(&g, &g).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted_case() {
        let g = vec![sent("s", &[("a", "T1"), ("b", "T2")])];
        let p = vec![sent("s", &[("a", "T1"), ("b", "T3")])];
        let (s, per_type) = entity_micro_f1(&g, &p).unwrap();
        assert_eq!(s.counts, Counts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        assert_eq!(per_type["T3"], Counts { tp: 0, fp: 1, fn_: 0 });
        assert_eq!(mention_micro_f1(&g, &p).unwrap().f1, 1.0);
    }

    #[test]
    fn degenerate_and_partial_cases() {
        let g = vec![sent("s", &[("a", "T1")])];
        let empty = vec![sent("s", &[])];
        let (s, _) = entity_micro_f1(&g, &empty).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let wider = vec![sent("s", &[("a b", "T1")])];
        assert_eq!(mention_micro_f1(&g, &wider).unwrap().f1, 0.0);
        let wrong_types = vec![sent("s", &[("a", "T9")])];
        assert_eq!(mention_micro_f1(&g, &wrong_types).unwrap().f1, 1.0);
        assert_eq!(entity_micro_f1(&g, &wrong_types).unwrap().0.f1, 0.0);
        assert!(entity_micro_f1(&g, &[sent("t", &[])]).is_err());
    }

    #[test]
    fn duplicates_use_multiset_semantics() {
        let g = vec![sent("s", &[("a", "T"), ("a", "T")])];
        let p = vec![sent("s", &[("a", "T"), ("a", "T"), ("a", "T")])];
        assert_eq!(entity_micro_f1(&g, &p).unwrap().0.counts, Counts { tp: 2, fp: 1, fn_: 0 });
    }

    #[test]
    fn long_tail_restriction() {
        let onto = Ontology::from_counts([("H", 10), ("M", 5), ("L", 1), ("Z", 2)]);
        // Tail is the bottom two: Z(2), L(1).
        let g = vec![sent("s", &[("a", "H"), ("b", "L")])];
        let head_only = vec![sent("s", &[("a", "H")])];
        assert_eq!(longtail_f1(&g, &head_only, &onto).unwrap().recall, 0.0);
        let tail_only = vec![sent("s", &[("b", "L")])];
        assert_eq!(longtail_f1(&tail_only, &tail_only, &onto).unwrap().f1, 1.0);
    }

    #[test]
    fn mention_lengths() {
        assert_eq!(avg_mention_tokens(&[sent("s", &[("a", "T"), ("b c", "T")])]), 1.5);
        assert_eq!(avg_mention_tokens(&[sent("s", &[])]), 0.0);
    }

    #[test]
    fn report_table_lists_types() {
        let g = vec![sent("s", &[("a", "T1"), ("b", "T2")])];
        let onto = Ontology::from_counts([("T1", 3), ("T2", 1)]);
        let r = evaluate(&g, &g, &onto, DiagnosticTotals::default()).unwrap();
        assert_eq!(r.f1, 1.0);
        let t = r.to_table();
        assert!(t.contains("| T2 | 1 | 0 | 0 |"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    }

    fn arb_corpus() -> impl Strategy<Value = (Vec<SentenceEntities>, Vec<SentenceEntities>)> {
        let ent = (0usize..3, 0usize..3).prop_map(|(s, t)| Entity::new(["a", "b", "a b"][s], ["T1", "T2", "T3"][t]));
        let sents = proptest::collection::vec(
            (proptest::collection::vec(ent.clone(), 0..5), proptest::collection::vec(ent, 0..5)),
            1..6,
        );
        sents.prop_map(|v| {
            let g = v.iter().enumerate().map(|(i, (g, _))| SentenceEntities { id: i.to_string(), entities: g.clone() }).collect();
            let p = v.iter().enumerate().map(|(i, (_, p))| SentenceEntities { id: i.to_string(), entities: p.clone() }).collect();
            (g, p)
        })
    }

    fn multiset_tp<K: std::hash::Hash + Eq>(g: &[Entity], p: &[Entity], key: impl Fn(&Entity) -> K) -> usize {
        let mut bag: HashMap<K, usize> = HashMap::new();
        for e in g {
            *bag.entry(key(e)).or_default() += 1;
        }
        p.iter()
            .filter(|e| match bag.get_mut(&key(e)) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    true
                }
                _ => false,
            })
            .count()
    }

    proptest! {
        #[test]
        fn matches_multiset_counter((g, p) in arb_corpus()) {
            let tp: usize = g.iter().zip(&p).map(|(a, b)| multiset_tp(&a.entities, &b.entities, |e| e.clone())).sum();
            let ng: usize = g.iter().map(|s| s.entities.len()).sum();
            let np: usize = p.iter().map(|s| s.entities.len()).sum();
            let s = entity_micro_f1(&g, &p).unwrap().0;
            prop_assert_eq!(s.counts, Counts { tp, fp: np - tp, fn_: ng - tp });
            let mtp: usize = g.iter().zip(&p).map(|(a, b)| multiset_tp(&a.entities, &b.entities, |e| e.surface.clone())).sum();
            prop_assert_eq!(mention_micro_f1(&g, &p).unwrap().counts, Counts { tp: mtp, fp: np - mtp, fn_: ng - mtp });
        }

        #[test]
        fn swapping_swaps_precision_and_recall((g, p) in arb_corpus()) {
            let a = entity_micro_f1(&g, &p).unwrap().0;
            let b = entity_micro_f1(&p, &g).unwrap().0;
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
        }

        #[test]
        fn adding_predictions_is_monotone((g, p) in arb_corpus(), pick in 0usize..100) {
            let base = entity_micro_f1(&g, &p).unwrap().0;
            let i = pick % g.len();
            let mut wrong = p.clone();
            wrong[i].entities.push(Entity::new("zz", "T9"));
            prop_assert!(entity_micro_f1(&g, &wrong).unwrap().0.precision <= base.precision);
            if let Some(e) = g[i].entities.first() {
                let gold_n = g[i].entities.iter().filter(|x| *x == e).count();
                let pred_n = p[i].entities.iter().filter(|x| *x == e).count();
                if pred_n < gold_n {
                    let mut right = p.clone();
                    right[i].entities.push(e.clone());
                    prop_assert!(entity_micro_f1(&g, &right).unwrap().0.f1 >= base.f1);
                }
            }
        }

        #[test]
        fn longtail_equals_prefiltered((g, p) in arb_corpus()) {
            let onto = Ontology::from_counts([("T1", 9), ("T2", 4), ("T3", 1), ("T4", 2)]);
            let tail: BTreeSet<String> = ["T3", "T4"].iter().map(|s| s.to_string()).collect();
            let direct = longtail_f1(&g, &p, &onto).unwrap();
            let pre = entity_micro_f1(&restrict_types(&g, &tail), &restrict_types(&p, &tail)).unwrap().0;
            prop_assert_eq!(direct, pre);
        }
    }
}
