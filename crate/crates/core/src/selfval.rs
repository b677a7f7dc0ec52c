//! Reconstruction validator: a second encoder-decoder that reads a relaxed
//! sample of the extractor's step distributions and rebuilds the source
//! sentence.

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::extractor::{self, shift_right};
use crate::linearize::{encode_entities, encode_text, EntityList, Vocab, EOS};
use crate::nn::{Bound, ModelConfig, Seq2Seq, SourceInput};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tensor::{self, Matrix};

/// Floor applied to log-probabilities before perturbation.
pub const LOG_CLAMP: f64 = -27.631021115928547; // ln(1e-12)

/// Standard Gumbel draws `-ln(-ln u)`, `u ~ U(0,1)`.
pub fn gumbel_noise<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        T::of(-(-u.ln()).ln())
    })
}

/// `softmax((max(log p, ln 1e-12) + g) / τ_g)` row by row, on the tape.
pub fn gumbel_softmax_graph<T: Scalar>(g: &mut Graph<T>, log_probs: Var, noise: &Matrix<T>, tau_g: f64) -> Var {
    let clamped = g.clamp_min(log_probs, T::of(LOG_CLAMP));
    let n = g.constant(noise.clone());
    let perturbed = g.add(clamped, n);
    let scaled = g.scale(perturbed, T::of(1.0 / tau_g));
    g.softmax(scaled)
}

/// Relaxed one-hot samples, one row per step of `probs`.
pub fn gumbel_softmax<T: Scalar>(probs: &Matrix<T>, tau_g: f64, seed: u64) -> Result<Matrix<T>> {
    if !(tau_g > 0.0) {
        return Err(Error::Config(format!("gumbel temperature must be positive, got {tau_g}")));
    }
    for r in 0..probs.rows() {
        let row = probs.row(r);
        let s: f64 = row.iter().map(|p| p.as_f64()).sum();
        if row.iter().any(|p| p.as_f64() < 0.0) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::Dimension(format!("row {r} is not a probability distribution")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Matrix<T> = gumbel_noise(&mut rng, probs.rows(), probs.cols());
    let mut out = Matrix::from_fn(probs.rows(), probs.cols(), |r, c| {
        let lp = probs.get(r, c).as_f64().max(1e-300).ln().max(LOG_CLAMP);
        T::of((lp + noise.get(r, c).as_f64()) / tau_g)
    });
    for r in 0..out.rows() {
        tensor::softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

/// `H = sample · E_v`; each row is a convex combination of embedding rows.
pub fn soft_embed<T: Scalar>(sample: &Matrix<T>, embeddings: &Matrix<T>) -> Result<Matrix<T>> {
    if sample.cols() != embeddings.rows() {
        return Err(Error::Dimension(format!(
            "sample width {} against vocabulary of {}",
            sample.cols(),
            embeddings.rows()
        )));
    }
    Ok(sample.matmul(embeddings))
}

/// Encoder-decoder mapping linearized entities back to their sentence.
#[derive(Debug, Clone)]
pub struct Validator<T> {
    pub model: Seq2Seq<T>,
    pub frozen: bool,
}

impl<T: Scalar> Validator<T> {
    /// Places the parameters on the tape as constants.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        self.model.params().bind(g, !self.frozen)
    }

    /// Decoder input and targets for reconstructing `source`.
    pub fn reconstruction_targets(source: &[usize]) -> Vec<usize> {
        let mut t = source.to_vec();
        t.push(EOS);
        t
    }

    /// Cross-entropy of the source sentence given mixture weights over the
    /// vocabulary (one row per extractor step).
    pub fn loss_recon_graph(&self, g: &mut Graph<T>, b: &Bound, sample: Var, source: &[usize]) -> Result<Var> {
        let memory = self.model.encode_graph(g, b, SourceInput::Soft(sample))?;
        let target = Self::reconstruction_targets(source);
        let hidden = self.model.decode_graph(g, b, memory, &shift_right(&target))?;
        let logits = self.model.logits_graph(g, b, hidden);
        let lp = g.log_softmax(logits);
        extractor::loss_gen_graph(g, lp, &target)
    }

    /// Reconstruction loss without gradients.
    pub fn loss_recon(&self, sample: &Matrix<T>, source: &[usize]) -> Result<T> {
        let mut g = Graph::new();
        let b = self.model.params().bind(&mut g, false);
        let s = g.constant(sample.clone());
        let l = self.loss_recon_graph(&mut g, &b, s, source)?;
        let v = g.value(l).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("reconstruction loss".into()));
        }
        Ok(v)
    }

    /// Greedy reconstruction from discrete linearized ids.
    pub fn reconstruct(&self, linearized: &[usize], max_len: usize) -> Result<Vec<usize>> {
        extractor::generate(&self.model, linearized, 1, max_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub adamw: AdamWConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 8,
            lr: 3e-3,
            clip_norm: 1.0,
            seed: 0,
            adamw: AdamWConfig::default(),
        }
    }
}

/// `(linearized gold ids, sentence ids)` for every sentence.
pub fn reconstruction_pairs(corpus: &Corpus, vocab: &Vocab) -> Vec<(Vec<usize>, Vec<usize>)> {
    corpus
        .sentences()
        .iter()
        .map(|s| {
            let lin = encode_entities(&EntityList::from_sentence(s), vocab);
            (lin, encode_text(&s.text(), vocab))
        })
        .collect()
}

fn batch_loss<T: Scalar>(model: &Seq2Seq<T>, pairs: &[&(Vec<usize>, Vec<usize>)], trainable: bool) -> Result<(Graph<T>, Bound, Var)> {
    let mut g = Graph::new();
    let b = model.params().bind(&mut g, trainable);
    let mut terms = Vec::with_capacity(pairs.len());
    let w = T::of(1.0 / pairs.len() as f64);
    for (lin, src) in pairs {
        let target = Validator::<T>::reconstruction_targets(src);
        let f = extractor::forward_graph(model, &mut g, &b, lin, &target)?;
        terms.push((extractor::loss_gen_graph(&mut g, f.log_probs, &target)?, w));
    }
    let loss = g.weighted_sum(&terms);
    Ok((g, b, loss))
}

/// Mean reconstruction loss over `pairs` from discrete inputs.
pub fn validation_loss<T: Scalar>(model: &Seq2Seq<T>, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("validation pairs"));
    }
    let refs: Vec<_> = pairs.iter().collect();
    let (g, _, l) = batch_loss(model, &refs, false)?;
    Ok(g.value(l).item().as_f64())
}

/// Trains a validator on gold `(linearization -> sentence)` pairs with
/// teacher forcing and returns the epoch with the lowest loss on
/// `held_out` (the training pairs when none is given), frozen.
pub fn pretrain_validator<T: Scalar>(
    corpus: &Corpus,
    held_out: Option<&Corpus>,
    vocab: &Vocab,
    model_config: ModelConfig,
    config: &PretrainConfig,
) -> Result<Validator<T>> {
    if corpus.is_empty() {
        return Err(Error::Empty("validator training corpus"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let pairs = reconstruction_pairs(corpus, vocab);
    let val_pairs = match held_out {
        Some(c) if !c.is_empty() => reconstruction_pairs(c, vocab),
        _ => pairs.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x7661]));
    let mut model = Seq2Seq::<T>::new(model_config, &mut rng)?;
    let shapes: Vec<_> = model.params().tensors().iter().map(Matrix::shape).collect();
    let mut opt = AdamW::new(config.adamw, &shapes);

    let mut best = (validation_loss(&model, &val_pairs)?, model.clone());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x7661, epoch as u64])));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (g, b, loss) = batch_loss(&model, &batch, true)?;
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite(format!("validator loss at epoch {epoch}")));
            }
            let grads = g.backward(loss);
            let mut gs = b.grads(&g, &grads);
            clip_global_norm(&mut gs, config.clip_norm);
            opt.step(model.params_mut().tensors_mut().iter_mut(), &gs, config.lr);
        }
        let v = validation_loss(&model, &val_pairs)?;
        if v < best.0 {
            best = (v, model.clone());
        }
        info!("validator epoch {epoch}: selection loss {v:.5}");
    }
    Ok(Validator {
        model: best.1,
        frozen: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::nn::ModelConfig;

    #[test]
    fn gumbel_rows_are_distributions() {
        let p = Matrix::from_vec(2, 3, vec![0.2f64, 0.3, 0.5, 1.0, 0.0, 0.0]);
        let s = gumbel_softmax(&p, 1.0, 4).unwrap();
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.row(r).iter().all(|&x| x >= 0.0));
        }
        assert_eq!(s, gumbel_softmax(&p, 1.0, 4).unwrap());
        assert!(gumbel_softmax(&p, 0.0, 4).is_err());
    }

    #[test]
    fn uniform_pair_splits_evenly() {
        let p = Matrix::from_vec(1, 2, vec![0.5f64, 0.5]);
        let mut wins = 0;
        for seed in 0..20_000 {
            let s = gumbel_softmax(&p, 1.0, seed).unwrap();
            if s.get(0, 0) > s.get(0, 1) {
                wins += 1;
            }
        }
        assert!((wins as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn low_temperature_concentrates() {
        let sharp = |p: &Matrix<f64>| {
            (0..2000)
                .filter(|&s| gumbel_softmax(p, 0.01, s).unwrap().row(0).iter().cloned().fold(0.0, f64::max) >= 0.99)
                .count() as f64
                / 2000.0
        };
        assert!(sharp(&Matrix::from_vec(1, 2, vec![0.95, 0.05])) >= 0.99);
        // Four close classes leave a perturbed-logit gap below 0.046 about 3%
        // of the time.
        assert!(sharp(&Matrix::from_vec(1, 4, vec![0.1, 0.2, 0.3, 0.4])) >= 0.95);
    }

    #[test]
    fn soft_embedding_identities() {
        let e = Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.1 - 0.4);
        let onehot = Matrix::from_fn(1, 5, |_, c| if c == 2 { 1.0 } else { 0.0 });
        assert_eq!(soft_embed(&onehot, &e).unwrap().row(0), e.row(2));
        let uniform = Matrix::filled(1, 5, 0.2);
        let h = soft_embed(&uniform, &e).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..5).map(|r| e.get(r, c)).sum::<f64>() / 5.0;
            assert!((h.get(0, c) - mean).abs() < 1e-12);
        }
        assert!(soft_embed(&Matrix::filled(1, 4, 0.25), &e).is_err());
    }

    #[test]
    fn soft_embedding_gradient_matches_differences() {
        let e = Matrix::from_fn(4, 3, |r, c| ((r + 2 * c) as f64).sin());
        let s0 = Matrix::from_vec(1, 4, vec![0.1, 0.4, 0.3, 0.2]);
        let f = |s: &Matrix<f64>| soft_embed(s, &e).unwrap().sq_norm();
        let mut g = Graph::new();
        let sv = g.input(s0.clone());
        let ev = g.constant(e.clone());
        let h = g.matmul(sv, ev);
        let out = g.sum_squares(h);
        let grads = g.backward(out);
        let an = grads.get(sv).unwrap();
        for c in 0..4 {
            let (mut p, mut m) = (s0.clone(), s0.clone());
            p.set(0, c, p.get(0, c) + 1e-5);
            m.set(0, c, m.get(0, c) - 1e-5);
            let num = (f(&p) - f(&m)) / 2e-5;
            assert!((num - an.get(0, c)).abs() < 1e-6);
        }
    }

    #[test]
    fn frozen_validator_gets_no_gradient() {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            ..ModelConfig::new(12)
        };
        let v = Validator {
            model: Seq2Seq::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(),
            frozen: true,
        };
        let mut g = Graph::new();
        let b = v.bind(&mut g);
        let logits = g.input(Matrix::from_fn(3, 12, |r, c| ((r * 12 + c) as f64).cos()));
        let lp = g.log_softmax(logits);
        let noise = gumbel_noise(&mut ChaCha8Rng::seed_from_u64(2), 3, 12);
        let sample = gumbel_softmax_graph(&mut g, lp, &noise, 1.0);
        let l = v.loss_recon_graph(&mut g, &b, sample, &[7, 8, 9, 10]).unwrap();
        let grads = g.backward(l);
        assert!(b.vars().iter().all(|&p| grads.get(p).is_none()));
        assert!(grads.get(logits).unwrap().sq_norm() > 0.0);
    }
}
