//! Boundary-contrastive decoding objective: negatives built by stretching a
//! gold mention into its neighbouring context, a pooled sigmoid scorer over
//! decoder states, and the InfoNCE loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::linearize::{encode_entities, EntityList, Vocab};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const DEFAULT_WINDOW: usize = 6;

const W_NAME: &str = "contrastive.w";
const B_NAME: &str = "contrastive.b";

/// Linear map `d_model -> 1` with bias, plus the InfoNCE temperature.
#[derive(Debug, Clone)]
pub struct ContrastiveHead<T> {
    params: ParamStore<T>,
    w: ParamId,
    b: ParamId,
    pub tau: f64,
}

impl<T: Scalar> ContrastiveHead<T> {
    /// Zero weights and bias, so every sequence initially scores 0.5.
    pub fn new(d_model: usize, tau: f64) -> Result<Self> {
        let mut params = ParamStore::new();
        params.add(W_NAME, Matrix::zeros(d_model, 1));
        params.add(B_NAME, Matrix::zeros(1, 1));
        Self::from_params(params, tau)
    }

    pub fn from_params(params: ParamStore<T>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("contrastive temperature must be positive, got {tau}")));
        }
        let (w, b) = match (params.id_of(W_NAME), params.id_of(B_NAME)) {
            (Some(w), Some(b)) if params.len() == 2 => (w, b),
            _ => return Err(Error::Checkpoint("unexpected contrastive head tensors".into())),
        };
        if params.get(w).cols() != 1 || params.get(b).shape() != (1, 1) {
            return Err(Error::Checkpoint("contrastive head tensors have wrong shapes".into()));
        }
        Ok(Self { params, w, b, tau })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn weight(&self) -> &Matrix<T> {
        self.params.get(self.w)
    }

    pub fn bias(&self) -> T {
        self.params.get(self.b).item()
    }

    /// `σ(mean_t(W·H̄_t) + b)` on the tape.
    pub fn score_graph(&self, g: &mut Graph<T>, bound: &Bound, hidden: Var) -> Var {
        let pooled = g.mean_rows(hidden);
        let z = g.matmul(pooled, bound.var(self.w));
        let z = g.add(z, bound.var(self.b));
        g.sigmoid(z)
    }

    /// Score of one decoder state sequence, `T x d_model`.
    pub fn score_sequence(&self, hidden: &Matrix<T>) -> Result<T> {
        if hidden.rows() == 0 {
            return Err(Error::Empty("decoder state sequence"));
        }
        if hidden.cols() != self.weight().rows() {
            return Err(Error::Dimension(format!(
                "states of width {} for a head of width {}",
                hidden.cols(),
                self.weight().rows()
            )));
        }
        let per_step = hidden.matmul(self.weight());
        let mean = per_step.sum() / T::of(hidden.rows() as f64) + self.bias();
        Ok(T::one() / (T::one() + (-mean).exp()))
    }
}

/// `-ln(exp(x⁺/τ) / (exp(x⁺/τ) + Σ exp(x⁻ᵢ/τ)))`, computed stably.
pub fn loss_cl(x_pos: f64, x_negs: &[f64], tau: f64) -> Result<f64> {
    if x_negs.is_empty() {
        return Err(Error::Empty("negative scores"));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("contrastive temperature must be positive, got {tau}")));
    }
    let zs: Vec<f64> = std::iter::once(x_pos).chain(x_negs.iter().copied()).map(|x| x / tau).collect();
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == zs[0] {
        return Ok(zs[1..].iter().map(|z| (z - m).exp()).sum::<f64>().ln_1p());
    }
    let lse = m + zs.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    Ok(lse - zs[0])
}

/// Tape version of [`loss_cl`] over `1 x 1` score nodes.
pub fn loss_cl_graph<T: Scalar>(g: &mut Graph<T>, x_pos: Var, x_negs: &[Var], tau: f64) -> Var {
    let mut parts = Vec::with_capacity(x_negs.len() + 1);
    parts.push(x_pos);
    parts.extend_from_slice(x_negs);
    let row = g.concat_cols(&parts);
    let row = g.scale(row, T::of(1.0 / tau));
    let lp = g.log_softmax(row);
    g.nll_mean(lp, &[Some(0)])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSample {
    /// Which gold entry was stretched.
    pub entity_index: usize,
    pub surface: String,
    /// The gold list with that one surface replaced.
    pub entities: EntityList,
}

impl NegativeSample {
    pub fn target_ids(&self, vocab: &Vocab) -> Vec<usize> {
        encode_entities(&self.entities, vocab)
    }
}

/// Draws `n_neg` negatives. Each picks a mention uniformly and glues 1 to
/// `window` neighbouring tokens to it: to its right, or to its left when it
/// ends the sentence. Mentions spanning the whole sentence are never picked;
/// if every mention does, the result is empty.
pub fn make_negatives(
    sentence: &AnnotatedSentence,
    gold: &EntityList,
    n_neg: usize,
    window: usize,
    seed: u64,
) -> Result<Vec<NegativeSample>> {
    if sentence.mentions.is_empty() {
        return Err(Error::Empty("sentence mentions"));
    }
    if gold.len() != sentence.mentions.len() {
        return Err(Error::Dimension(format!(
            "{} gold entries for {} mentions",
            gold.len(),
            sentence.mentions.len()
        )));
    }
    if n_neg == 0 || window == 0 {
        return Err(Error::Config("n_neg and window must be at least 1".into()));
    }
    let n_tok = sentence.tokens.len();
    let usable: Vec<usize> = (0..sentence.mentions.len())
        .filter(|&i| {
            let m = &sentence.mentions[i];
            m.start > 0 || m.end < n_tok
        })
        .collect();
    if usable.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_neg);
    for _ in 0..n_neg {
        let i = usable[rng.gen_range(0..usable.len())];
        let m = &sentence.mentions[i];
        let want = rng.gen_range(1..=window);
        let (start, end) = if m.end < n_tok {
            (m.start, (m.end + want).min(n_tok))
        } else {
            (m.start.saturating_sub(want), m.end)
        };
        let surface = sentence.tokens[start..end].join(" ");
        let mut entities = gold.clone();
        entities.entries[i].surface = surface.clone();
        out.push(NegativeSample {
            entity_index: i,
            surface,
            entities,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::running_example;
    use proptest::prelude::*;

    #[test]
    fn infonce_closed_forms() {
        let l = loss_cl(0.4, &[0.4; 5], 1.0).unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
        let l = loss_cl(0.9, &[0.1, 0.2], 0.5).unwrap();
        let oracle = -(1.8f64.exp() / (0.2f64.exp() + 0.4f64.exp() + 1.8f64.exp())).ln();
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 0.370524).abs() < 1e-6);
        // Limit value is ln(1 + 5e^-20), about 1.03e-8.
        let limit = loss_cl(1.0, &[0.0; 5], 0.05).unwrap();
        assert!((limit - (5.0 * (-20f64).exp()).ln_1p()).abs() < 1e-20);
        assert!(limit < 1.1e-8);
        assert!(loss_cl(1.0, &[0.0; 5], 0.04).unwrap() < 1e-8);
        assert!(loss_cl(0.5, &[], 1.0).is_err());
    }

    #[test]
    fn graph_infonce_matches_scalar() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Matrix::scalar(0.9));
        let n: Vec<Var> = [0.1, 0.2].iter().map(|&x| g.input(Matrix::scalar(x))).collect();
        let l = loss_cl_graph(&mut g, p, &n, 0.5);
        assert!((g.value(l).item() - loss_cl(0.9, &[0.1, 0.2], 0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn score_closed_forms() {
        let h = Matrix::from_vec(2, 2, vec![1.0f64, 0.0, 3.0, 0.0]);
        let mut head = ContrastiveHead::<f64>::new(2, 1.0).unwrap();
        assert_eq!(head.score_sequence(&h).unwrap(), 0.5);
        head.params_mut().tensors_mut()[0] = Matrix::from_vec(2, 1, vec![1.0, 5.0]);
        let x = head.score_sequence(&h).unwrap();
        assert!((x - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!((x - 0.88080).abs() < 1e-5);
        let mut prev = 0.0;
        for b in [-2.0, -1.0, 0.0, 1.5] {
            head.params_mut().tensors_mut()[1] = Matrix::scalar(b);
            let x = head.score_sequence(&h).unwrap();
            assert!(x > prev);
            prev = x;
        }
        assert!(head.score_sequence(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn negatives_extend_into_context() {
        let s = running_example();
        let gold = EntityList::from_sentence(&s);
        let negs = make_negatives(&s, &gold, 200, DEFAULT_WINDOW, 3).unwrap();
        let ligand: Vec<_> = negs.iter().filter(|n| n.entity_index == 0).collect();
        assert!(!ligand.is_empty());
        assert!(ligand.iter().all(|n| n.surface.starts_with("ligand screening,")));
        assert!(ligand.iter().any(|n| n.surface == "ligand screening, we describe the first examples"));
        assert_eq!(negs, make_negatives(&s, &gold, 200, DEFAULT_WINDOW, 3).unwrap());
    }

    #[test]
    fn final_mention_extends_leftward() {
        let s = AnnotatedSentence::from_spans("x", "a b c d", &[(2, 4, "T")]).unwrap();
        let gold = EntityList::from_sentence(&s);
        for n in make_negatives(&s, &gold, 20, 6, 1).unwrap() {
            assert!(n.surface.ends_with("c d") && n.surface.len() > 3);
        }
        let whole = AnnotatedSentence::from_spans("y", "a b", &[(0, 2, "T")]).unwrap();
        assert!(make_negatives(&whole, &EntityList::from_sentence(&whole), 3, 6, 1).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn infonce_monotone(xp in 0.01f64..0.99, xn in proptest::collection::vec(0.01f64..0.99, 1..6), tau in 0.1f64..2.0, d in 0.001f64..0.3) {
            let l = loss_cl(xp, &xn, tau).unwrap();
            prop_assert!(l > 0.0);
            let min_neg = xn.iter().cloned().fold(f64::INFINITY, f64::min);
            let bound = (1.0 + xn.len() as f64 * ((min_neg - xp) / tau).exp()).ln();
            prop_assert!(l >= bound - 1e-12);
            prop_assert!(loss_cl(xp + d, &xn, tau).unwrap() < l);
            let mut lower = xn.clone();
            lower[0] -= d;
            prop_assert!(loss_cl(xp, &lower, tau).unwrap() < l);
        }

        #[test]
        fn negatives_strictly_longer(seed in 0u64..1000) {
            use crate::corpus::synthetic::{generate_synthetic, GeneratorSpec};
            let (c, _) = generate_synthetic(&GeneratorSpec { n_sentences: 5, n_types: 4, ..GeneratorSpec::default() }, seed).unwrap();
            for s in c.sentences() {
                let gold = EntityList::from_sentence(s);
                for n in make_negatives(s, &gold, 5, DEFAULT_WINDOW, seed).unwrap() {
                    let m = &s.mentions[n.entity_index];
                    let orig = &m.surface;
                    prop_assert!(n.surface.split(' ').count() > m.token_len());
                    prop_assert!(n.surface.starts_with(orig.as_str()) || n.surface.ends_with(orig.as_str()));
                    prop_assert_eq!(&n.entities.entries[n.entity_index].type_name, &m.type_name);
                }
            }
        }
    }
}
