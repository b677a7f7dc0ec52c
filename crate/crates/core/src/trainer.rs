//! Joint optimization of generation, reconstruction and contrastive terms.

use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::{content_hash, TensorDump, FORMAT_VERSION};
use crate::contrastive::{self, make_negatives, ContrastiveHead};
use crate::corpus::{AnnotatedSentence, Corpus, Ontology};
use crate::error::{Error, Result};
use crate::eval::{self, DiagnosticTotals, EvalReport, SentenceEntities};
use crate::extractor::{self, shift_right};
use crate::linearize::{decode_linearized, encode_entities, encode_text, parse_linearized, EntityList, Vocab};
use crate::nn::{Bound, ModelConfig, Seq2Seq};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig, CosineWarmRestarts};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::selfval::{gumbel_noise, gumbel_softmax_graph, PretrainConfig, Validator};
use crate::tensor::Matrix;

const TAG_INIT: u64 = 1;
const TAG_ORDER: u64 = 2;
const TAG_GUMBEL: u64 = 3;
const TAG_NEGATIVES: u64 = 4;

/// Every knob that defines a run. Keys map one-to-one onto a flat TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the reconstruction term.
    pub alpha: f64,
    /// Weight of the contrastive term.
    pub beta: f64,
    pub tau: f64,
    pub tau_g: f64,
    pub n_neg: usize,
    pub window: usize,
    pub lr: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beam: usize,
    pub max_gen_len: usize,
    pub seed: u64,
    /// `cosine_warm_restarts` or `constant`.
    pub schedule: String,
    /// First restart period, in optimizer steps.
    pub t0: u64,
    pub t_mult: u64,
    pub eta_min: f64,
    pub clip_norm: f64,
    pub eval_every: usize,
    /// Stop once validation F1 reaches this value.
    pub target_f1: Option<f64>,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub validator_epochs: usize,
    pub validator_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 0.2,
            tau: 1.0,
            tau_g: 1.0,
            n_neg: 5,
            window: contrastive::DEFAULT_WINDOW,
            lr: 1e-3,
            eps: 1e-6,
            weight_decay: 0.01,
            epochs: 300,
            batch_size: 8,
            beam: 5,
            max_gen_len: 64,
            seed: 0,
            schedule: "cosine_warm_restarts".into(),
            t0: 400,
            t_mult: 1,
            eta_min: 1e-5,
            clip_norm: 1.0,
            eval_every: 1,
            target_f1: None,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 128,
            validator_epochs: 150,
            validator_lr: 3e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad("alpha and beta must be non-negative");
        }
        if !(self.tau > 0.0) || !(self.tau_g > 0.0) {
            return bad("temperatures must be positive");
        }
        if self.n_neg == 0 || self.window == 0 || self.batch_size == 0 || self.beam == 0 || self.eval_every == 0 {
            return bad("n_neg, window, batch_size, beam and eval_every must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !matches!(self.schedule.as_str(), "cosine_warm_restarts" | "constant") {
            return Err(Error::Config(format!("unknown schedule {:?}", self.schedule)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.validator_epochs,
            batch_size: self.batch_size,
            lr: self.validator_lr,
            clip_norm: self.clip_norm,
            seed: self.seed,
            adamw: self.adamw(),
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            eps: self.eps,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        match self.schedule.as_str() {
            "constant" => self.lr,
            _ => CosineWarmRestarts {
                base_lr: self.lr,
                eta_min: self.eta_min,
                t0: self.t0,
                t_mult: self.t_mult,
            }
            .lr_at(step),
        }
    }

    pub fn hash(&self) -> String {
        content_hash(self)
    }
}

/// A training sentence with its id sequences.
#[derive(Debug, Clone)]
pub struct Example {
    pub index: usize,
    pub sentence: AnnotatedSentence,
    pub gold: EntityList,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

pub fn prepare_examples(corpus: &Corpus, vocab: &Vocab) -> Vec<Example> {
    corpus
        .sentences()
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let gold = EntityList::from_sentence(s);
            Example {
                index,
                source: encode_text(&s.text(), vocab),
                target: encode_entities(&gold, vocab),
                gold,
                sentence: s.clone(),
            }
        })
        .collect()
}

/// Batch means of the objective and its terms. Terms with zero weight are
/// not evaluated and read 0; sentences without mentions add 0 to `cl`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub gen: f64,
    pub recon: f64,
    pub cl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Optimizer steps completed at the end of the epoch.
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_f1: Option<f64>,
}

struct Objective {
    total: Var,
    breakdown: LossBreakdown,
}

/// Extractor, contrastive head and frozen validator plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub extractor: Seq2Seq<T>,
    pub head: ContrastiveHead<T>,
    pub validator: Option<Validator<T>>,
    pub optimizer: AdamW<T>,
    pub step: u64,
    pub epoch: usize,
    pub batch_in_epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh extractor and head. A frozen validator is required whenever
    /// `alpha > 0`.
    pub fn new(config: TrainConfig, vocab: Vocab, validator: Option<Validator<T>>) -> Result<Self> {
        config.validate()?;
        let mc = config.model_config(vocab.len());
        if config.alpha > 0.0 {
            match &validator {
                None => return Err(Error::Config("alpha > 0 needs a pretrained validator".into())),
                Some(v) if !v.frozen => return Err(Error::Config("validator must be frozen".into())),
                Some(v) if v.model.config().vocab_size != vocab.len() => {
                    return Err(Error::Dimension("validator vocabulary differs from extractor".into()))
                }
                _ => {}
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TAG_INIT]));
        let extractor = Seq2Seq::new(mc, &mut rng)?;
        let head = ContrastiveHead::new(mc.d_model, config.tau)?;
        let shapes: Vec<_> = extractor
            .params()
            .tensors()
            .iter()
            .chain(head.params().tensors())
            .map(Matrix::shape)
            .collect();
        let optimizer = AdamW::new(config.adamw(), &shapes);
        Ok(Self {
            config,
            vocab,
            extractor,
            head,
            validator,
            optimizer,
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
        })
    }

    /// Trainable tensors: extractor then head.
    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let (a, b) = (&mut self.extractor, &mut self.head);
        a.params_mut()
            .tensors_mut()
            .iter_mut()
            .chain(b.params_mut().tensors_mut().iter_mut())
            .collect()
    }

    fn sentence_objective(
        &self,
        g: &mut Graph<T>,
        bx: &Bound,
        bh: &Bound,
        bv: Option<&Bound>,
        ex: &Example,
        step: u64,
    ) -> Result<Objective> {
        let c = &self.config;
        let fwd = extractor::forward_graph(&self.extractor, g, bx, &ex.source, &ex.target)?;
        let gen = extractor::loss_gen_graph(g, fwd.log_probs, &ex.target)?;
        let mut terms = vec![(gen, T::one())];
        let mut bd = LossBreakdown {
            gen: g.value(gen).item().as_f64(),
            ..LossBreakdown::default()
        };

        if c.alpha > 0.0 {
            let (v, bv) = self.validator.as_ref().zip(bv).ok_or(Error::Config("validator missing".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(c.seed, &[TAG_GUMBEL, step, ex.index as u64]));
            let (rows, cols) = g.value(fwd.log_probs).shape();
            let noise: Matrix<T> = gumbel_noise(&mut rng, rows, cols);
            let sample = gumbel_softmax_graph(g, fwd.log_probs, &noise, c.tau_g);
            let recon = v.loss_recon_graph(g, bv, sample, &ex.source)?;
            bd.recon = g.value(recon).item().as_f64();
            terms.push((recon, T::of(c.alpha)));
        }

        if c.beta > 0.0 && !ex.gold.is_empty() {
            let seed = derive_seed(c.seed, &[TAG_NEGATIVES, step, ex.index as u64]);
            let negs = make_negatives(&ex.sentence, &ex.gold, c.n_neg, c.window, seed)?;
            if !negs.is_empty() {
                let x_pos = self.head.score_graph(g, bh, fwd.hidden);
                let mut x_negs = Vec::with_capacity(negs.len());
                for n in &negs {
                    let ids = encode_entities(&n.entities, &self.vocab);
                    let h = self.extractor.decode_graph(g, bx, fwd.memory, &shift_right(&ids))?;
                    x_negs.push(self.head.score_graph(g, bh, h));
                }
                let cl = contrastive::loss_cl_graph(g, x_pos, &x_negs, c.tau);
                bd.cl = g.value(cl).item().as_f64();
                terms.push((cl, T::of(c.beta)));
            }
        }

        let total = g.weighted_sum(&terms);
        bd.total = g.value(total).item().as_f64();
        Ok(Objective { total, breakdown: bd })
    }

    /// Batch-mean objective and its gradient with respect to the trainable
    /// tensors, with random streams keyed on `step`.
    pub fn compute(&self, batch: &[&Example], step: u64) -> Result<(LossBreakdown, Vec<Matrix<T>>)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let mut g = Graph::new();
        let bx = self.extractor.params().bind(&mut g, true);
        let bh = self.head.params().bind(&mut g, true);
        let bv = self.validator.as_ref().filter(|_| self.config.alpha > 0.0).map(|v| v.bind(&mut g));
        let w = T::of(1.0 / batch.len() as f64);
        let mut terms = Vec::with_capacity(batch.len());
        let mut sum = LossBreakdown::default();
        for ex in batch {
            let o = self.sentence_objective(&mut g, &bx, &bh, bv.as_ref(), ex, step)?;
            terms.push((o.total, w));
            sum.gen += o.breakdown.gen;
            sum.recon += o.breakdown.recon;
            sum.cl += o.breakdown.cl;
        }
        let loss = g.weighted_sum(&terms);
        let n = batch.len() as f64;
        let bd = LossBreakdown {
            total: g.value(loss).item().as_f64(),
            gen: sum.gen / n,
            recon: sum.recon / n,
            cl: sum.cl / n,
        };
        if ![bd.total, bd.gen, bd.recon, bd.cl].iter().all(|x| x.is_finite()) {
            let ids: Vec<&str> = batch.iter().map(|e| e.sentence.id.as_str()).collect();
            return Err(Error::NonFinite(format!("loss at step {step}, batch [{}]", ids.join(", "))));
        }
        let grads = g.backward(loss);
        let mut out = bx.grads(&g, &grads);
        out.extend(bh.grads(&g, &grads));
        Ok((bd, out))
    }

    /// One optimizer update on the extractor and head.
    pub fn train_step(&mut self, batch: &[&Example]) -> Result<StepRecord> {
        let (loss, mut grads) = self.compute(batch, self.step)?;
        let grad_norm = clip_global_norm(&mut grads, self.config.clip_norm);
        let lr = self.config.lr_at(self.step);
        let params = self
            .extractor
            .params_mut()
            .tensors_mut()
            .iter_mut()
            .chain(self.head.params_mut().tensors_mut().iter_mut());
        self.optimizer.step(params, &grads, lr);
        let rec = StepRecord {
            step: self.step,
            epoch: self.epoch,
            lr,
            grad_norm,
            loss,
        };
        self.step += 1;
        Ok(rec)
    }

    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[TAG_ORDER, self.epoch as u64],
        )));
        order
    }

    /// Runs the next batch of the current epoch. Returns the record and
    /// whether that batch closed the epoch.
    pub fn next_step(&mut self, examples: &[Example]) -> Result<(StepRecord, bool)> {
        if examples.is_empty() {
            return Err(Error::Empty("training examples"));
        }
        let order = self.epoch_order(examples.len());
        let bs = self.config.batch_size;
        let start = self.batch_in_epoch * bs;
        let batch: Vec<&Example> = order[start..(start + bs).min(order.len())].iter().map(|&i| &examples[i]).collect();
        let rec = self.train_step(&batch)?;
        self.batch_in_epoch += 1;
        let done = self.batch_in_epoch * bs >= order.len();
        if done {
            self.epoch += 1;
            self.batch_in_epoch = 0;
        }
        Ok((rec, done))
    }

    /// Beam-search output for one sentence, as linearized text.
    pub fn generate_text(&self, text: &str) -> Result<String> {
        let src = encode_text(text, &self.vocab);
        let ids = extractor::generate(&self.extractor, &src, self.config.beam, self.config.max_gen_len)?;
        decode_linearized(&ids, &self.vocab)
    }

    /// Beam-search predictions parsed against `ontology`.
    pub fn predict(&self, corpus: &Corpus, ontology: &Ontology) -> Result<(Vec<SentenceEntities>, DiagnosticTotals)> {
        let mut out = Vec::with_capacity(corpus.len());
        let mut diag = DiagnosticTotals::default();
        for s in corpus.sentences() {
            let text = self.generate_text(&s.text())?;
            let (list, d) = parse_linearized(&text, ontology);
            diag.skipped_segments += d.skipped_count();
            diag.out_of_ontology += d.out_of_ontology.len();
            out.push(SentenceEntities::new(s.id.clone(), list));
        }
        Ok((out, diag))
    }

    pub fn evaluate(&self, corpus: &Corpus, train_ontology: &Ontology) -> Result<EvalReport> {
        let (pred, diag) = self.predict(corpus, train_ontology)?;
        eval::evaluate(&eval::gold_entities(corpus), &pred, train_ontology, diag)
    }

    /// Epoch loop with periodic validation. Keeps the best-F1 state and
    /// stops early once `target_f1` is reached.
    pub fn train(&mut self, train: &Corpus, val: &Corpus) -> Result<TrainLog> {
        let examples = prepare_examples(train, &self.vocab);
        let mut log = TrainLog {
            steps: Vec::new(),
            epochs: Vec::new(),
            best: None,
        };
        while self.epoch < self.config.epochs {
            let mut acc = LossBreakdown::default();
            let mut n = 0.0;
            loop {
                let (rec, done) = self.next_step(&examples)?;
                acc.total += rec.loss.total;
                acc.gen += rec.loss.gen;
                acc.recon += rec.loss.recon;
                acc.cl += rec.loss.cl;
                n += 1.0;
                debug!("step {} loss {:.6}", rec.step, rec.loss.total);
                log.steps.push(rec);
                if done {
                    break;
                }
            }
            let loss = LossBreakdown {
                total: acc.total / n,
                gen: acc.gen / n,
                recon: acc.recon / n,
                cl: acc.cl / n,
            };
            let epoch = self.epoch - 1;
            let val_f1 = if self.epoch % self.config.eval_every == 0 || self.epoch == self.config.epochs {
                Some(self.evaluate(val, train.ontology())?.f1)
            } else {
                None
            };
            info!(
                "epoch {epoch}: L {:.4} gen {:.4} recon {:.4} cl {:.4} val_f1 {}",
                loss.total,
                loss.gen,
                loss.recon,
                loss.cl,
                val_f1.map_or("-".into(), |f| format!("{f:.4}"))
            );
            log.epochs.push(EpochRecord {
                step: self.step,
                epoch,
                loss,
                val_f1,
            });
            if let Some(f1) = val_f1 {
                if log.best.as_ref().map_or(true, |b| f1 > b.0) {
                    log.best = Some((f1, epoch, self.checkpoint()));
                }
                if self.config.target_f1.is_some_and(|t| f1 >= t) {
                    info!("target F1 reached at epoch {epoch}");
                    break;
                }
            }
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let names = self.extractor.params().names().iter().chain(self.head.params().names());
        let dump = |ts: &[Matrix<T>]| TensorDump::from_named(names.clone().map(String::as_str).zip(ts.iter()));
        Checkpoint {
            format: Checkpoint::FORMAT.into(),
            version: FORMAT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            extractor: TensorDump::from_store(self.extractor.params()),
            head: TensorDump::from_store(self.head.params()),
            validator: self.validator.as_ref().map(|v| FrozenDump {
                frozen: v.frozen,
                params: TensorDump::from_store(v.model.params()),
            }),
            optimizer: OptimizerDump {
                t: self.optimizer.t,
                m: dump(&self.optimizer.m),
                v: dump(&self.optimizer.v),
            },
            step: self.step,
            epoch: self.epoch,
            batch_in_epoch: self.batch_in_epoch,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != Checkpoint::FORMAT || ck.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        let vocab = Vocab::from_words(ck.vocab.iter().skip(7));
        if vocab.tokens() != ck.vocab.as_slice() {
            return Err(Error::Checkpoint("vocabulary does not start with the special tokens".into()));
        }
        let mc = ck.config.model_config(vocab.len());
        let validator = match &ck.validator {
            Some(d) => Some(Validator {
                model: Seq2Seq::from_params(mc, d.params.to_store()?)?,
                frozen: d.frozen,
            }),
            None => None,
        };
        let mut t = Self::new(ck.config.clone(), vocab, validator)?;
        t.extractor = Seq2Seq::from_params(mc, ck.extractor.to_store()?)?;
        t.head = ContrastiveHead::from_params(ck.head.to_store()?, ck.config.tau)?;
        let m: Vec<Matrix<T>> = ck.optimizer.m.to_matrices()?.into_iter().map(|x| x.1).collect();
        let v: Vec<Matrix<T>> = ck.optimizer.v.to_matrices()?.into_iter().map(|x| x.1).collect();
        if m.len() != t.optimizer.m.len() || v.len() != t.optimizer.v.len() {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        t.optimizer.m = m;
        t.optimizer.v = v;
        t.optimizer.t = ck.optimizer.t;
        t.step = ck.step;
        t.epoch = ck.epoch;
        t.batch_in_epoch = ck.batch_in_epoch;
        Ok(t)
    }
}

/// Per-step and per-epoch records plus the best-F1 state.
#[derive(Debug, Clone)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<(f64, usize, Checkpoint)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenDump {
    pub frozen: bool,
    pub params: TensorDump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerDump {
    pub t: u64,
    pub m: TensorDump,
    pub v: TensorDump,
}

/// Full training state. Random streams are pure functions of the seed and
/// the step/epoch counters, so no generator state is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub extractor: TensorDump,
    pub head: TensorDump,
    pub validator: Option<FrozenDump>,
    pub optimizer: OptimizerDump,
    pub step: u64,
    pub epoch: usize,
    pub batch_in_epoch: usize,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "fsner-trainer";
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

/// `step,epoch,L,L_gen,L_recon,L_cl,val_f1`, one row per epoch; `val_f1` is
/// empty for epochs that were not evaluated.
pub fn metrics_csv(epochs: &[EpochRecord]) -> String {
    let mut s = String::from("step,epoch,L,L_gen,L_recon,L_cl,val_f1\n");
    for e in epochs {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.step,
            e.epoch,
            fmt_f(e.loss.total),
            fmt_f(e.loss.gen),
            fmt_f(e.loss.recon),
            fmt_f(e.loss.cl),
            e.val_f1.map(fmt_f).unwrap_or_default()
        )
        .unwrap();
    }
    s
}

/// Same columns, one row per optimizer step, `val_f1` always empty.
pub fn steps_csv(steps: &[StepRecord]) -> String {
    let mut s = String::from("step,epoch,L,L_gen,L_recon,L_cl,val_f1\n");
    for r in steps {
        writeln!(
            s,
            "{},{},{},{},{},{},",
            r.step,
            r.epoch,
            fmt_f(r.loss.total),
            fmt_f(r.loss.gen),
            fmt_f(r.loss.recon),
            fmt_f(r.loss.cl)
        )
        .unwrap();
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
