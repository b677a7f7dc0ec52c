//! Entity extractor: teacher-forced step distributions, generation loss and
//! beam-search decoding over the shared encoder-decoder.

use std::cmp::Ordering;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::linearize::{BOS, EOS, PAD};
use crate::nn::{Bound, DecoderState, EncodedSource, Seq2Seq, SourceInput};
use crate::scalar::Scalar;
use crate::tensor::{self, Matrix};

/// Decoder input for teacher forcing: `[BOS, y₁, ..., y_{T-1}]`.
pub fn shift_right(target: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(target.len());
    v.push(BOS);
    v.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    v
}

/// Handles for one teacher-forced pass on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub memory: Var,
    /// Final-layer decoder states, `T x d_model`.
    pub hidden: Var,
    /// `T x vocab`
    pub log_probs: Var,
}

pub fn forward_graph<T: Scalar>(
    model: &Seq2Seq<T>,
    g: &mut Graph<T>,
    b: &Bound,
    source: &[usize],
    target: &[usize],
) -> Result<ForwardVars> {
    if target.is_empty() {
        return Err(Error::Empty("target sequence"));
    }
    let memory = model.encode_graph(g, b, SourceInput::Ids(source))?;
    let hidden = model.decode_graph(g, b, memory, &shift_right(target))?;
    let logits = model.logits_graph(g, b, hidden);
    let log_probs = g.log_softmax(logits);
    Ok(ForwardVars {
        memory,
        hidden,
        log_probs,
    })
}

/// Graph node for the mean negative log-likelihood over non-PAD targets.
pub fn loss_gen_graph<T: Scalar>(g: &mut Graph<T>, log_probs: Var, target: &[usize]) -> Result<Var> {
    let mask: Vec<Option<usize>> = target.iter().map(|&t| (t != PAD).then_some(t)).collect();
    if mask.iter().all(Option::is_none) {
        return Err(Error::Empty("non-PAD target positions"));
    }
    Ok(g.nll_mean(log_probs, &mask))
}

/// Per-step distributions and decoder states of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// Row `t` is `p(y_t | S, y_<t)`.
    pub distributions: Matrix<T>,
    pub hidden: Matrix<T>,
}

pub fn forward<T: Scalar>(model: &Seq2Seq<T>, source: &[usize], target: &[usize]) -> Result<Forward<T>> {
    let mut g = Graph::new();
    let b = model.params().bind(&mut g, false);
    let f = forward_graph(model, &mut g, &b, source, target)?;
    let distributions = g.value(f.log_probs).map(|x| x.exp());
    let hidden = g.value(f.hidden).clone();
    if !distributions.all_finite() || !hidden.all_finite() {
        return Err(Error::NonFinite("extractor forward activations".into()));
    }
    Ok(Forward { distributions, hidden })
}

/// Mean of `-ln p(y_t)` over positions whose target is not `PAD`.
pub fn loss_gen<T: Scalar>(distributions: &Matrix<T>, target: &[usize]) -> Result<T> {
    if distributions.rows() != target.len() {
        return Err(Error::Dimension(format!(
            "{} distributions for {} targets",
            distributions.rows(),
            target.len()
        )));
    }
    let mut total = T::zero();
    let mut n = 0usize;
    for (t, &y) in target.iter().enumerate() {
        if y == PAD {
            continue;
        }
        total = total - distributions.get(t, y).ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("non-PAD target positions"));
    }
    Ok(total / T::of(n as f64))
}

/// Incremental scorer driven by beam search.
pub trait Decoder {
    type State: Clone;

    /// State after consuming BOS and the log-probabilities of the first token.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    /// Consumes `token` and returns log-probabilities of the next one.
    fn advance(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;
}

pub struct ModelDecoder<'a, T> {
    model: &'a Seq2Seq<T>,
    source: EncodedSource<T>,
}

impl<'a, T: Scalar> ModelDecoder<'a, T> {
    pub fn new(model: &'a Seq2Seq<T>, source: &[usize]) -> Result<Self> {
        Ok(Self {
            model,
            source: model.encode(source)?,
        })
    }

    fn log_probs(logits: Vec<T>) -> Vec<f64> {
        let mut lp: Vec<f64> = logits.into_iter().map(Scalar::as_f64).collect();
        tensor::log_softmax_in_place(&mut lp);
        lp
    }
}

impl<T: Scalar> Decoder for ModelDecoder<'_, T> {
    type State = DecoderState<T>;

    fn start(&self) -> Result<(Self::State, Vec<f64>)> {
        let mut state = self.model.start_state();
        let (_, logits) = self.model.step(&self.source, &mut state, BOS)?;
        Ok((state, Self::log_probs(logits)))
    }

    fn advance(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>> {
        let (_, logits) = self.model.step(&self.source, state, token)?;
        Ok(Self::log_probs(logits))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without BOS and without the closing EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Whether EOS was produced before the length limit.
    pub finished: bool,
}

// Higher score first; equal scores fall back to the lexicographically
// smaller token sequence.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Beam search emitting at most `max_len` tokens (EOS included). Returns the
/// best finished hypothesis, or the best partial one if none finished.
pub fn beam_search<D: Decoder>(decoder: &D, beam: usize, max_len: usize) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    let (state, first) = decoder.start()?;
    let mut live: Vec<(Vec<usize>, f64, D::State, Vec<f64>)> = vec![(Vec::new(), 0.0, state, first)];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for len in 1..=max_len {
        let mut cands: Vec<(usize, usize, f64, Vec<usize>)> = Vec::new();
        for (bi, (toks, score, _, lp)) in live.iter().enumerate() {
            for (tok, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut seq = toks.clone();
                seq.push(tok);
                cands.push((bi, tok, score + l, seq));
            }
        }
        cands.sort_by(|a, b| rank((a.2, &a.3), (b.2, &b.3)));
        cands.truncate(beam);

        let mut next = Vec::with_capacity(cands.len());
        for (bi, tok, score, mut seq) in cands {
            if tok == EOS {
                seq.pop();
                finished.push(Hypothesis {
                    tokens: seq,
                    log_prob: score,
                    finished: true,
                });
                continue;
            }
            if len == max_len {
                next.push((seq, score, live[bi].2.clone(), Vec::new()));
                continue;
            }
            let mut st = live[bi].2.clone();
            let lp = decoder.advance(&mut st, tok)?;
            next.push((seq, score, st, lp));
        }
        live = next;
        let best_live = live.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
        let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        // Scores only decrease as hypotheses grow.
        if live.is_empty() || best_done >= best_live {
            break;
        }
    }

    let pick = |hs: Vec<Hypothesis>| {
        hs.into_iter()
            .min_by(|a, b| rank((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)))
    };
    if let Some(h) = pick(finished) {
        return Ok(h);
    }
    let partial = live
        .into_iter()
        .map(|(tokens, log_prob, _, _)| Hypothesis {
            tokens,
            log_prob,
            finished: false,
        })
        .collect();
    Ok(pick(partial).unwrap_or(Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }))
}

/// Beam-search decoding of `source`; the result excludes BOS and EOS.
pub fn generate<T: Scalar>(model: &Seq2Seq<T>, source: &[usize], beam: usize, max_len: usize) -> Result<Vec<usize>> {
    let limit = max_len.min(model.config().max_len);
    let dec = ModelDecoder::new(model, source)?;
    Ok(beam_search(&dec, beam, limit)?.tokens)
}
