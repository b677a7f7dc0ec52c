//! Pre-norm transformer encoder-decoder with tied input/output embeddings.
//!
//! The same [`Seq2Seq`] family backs both the extractor and the validator.
//! Training goes through the differentiable [`Graph`] path; decoding uses the
//! eager, cache-based path in [`Seq2Seq::encode`] / [`Seq2Seq::step`], which
//! must agree with the graph path to rounding error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Graph, Grads, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl ModelConfig {
    /// Defaults for the desk-scale models: 64 wide, 2 layers, 4 heads.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.max_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// Named, ordered collection of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Handle of the tensor registered under `name`.
    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::all_finite)
    }

    /// Places every tensor on the tape, as gradient inputs or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.input(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Zero tensors with this store's shapes.
    pub fn zeros_like(&self) -> Vec<Matrix<T>> {
        self.tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect()
    }
}

/// Tape handles for every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient per tensor, zero where the tape produced none.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>, grads: &Grads<T>) -> Vec<Matrix<T>> {
        self.vars
            .iter()
            .map(|&v| {
                grads.get(v).cloned().unwrap_or_else(|| {
                    let (r, c) = g.value(v).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    norm_attn: NormIds,
    attn: AttnIds,
    norm_ffn: NormIds,
    ffn: FfnIds,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    norm_self: NormIds,
    self_attn: AttnIds,
    norm_cross: NormIds,
    cross_attn: AttnIds,
    norm_ffn: NormIds,
    ffn: FfnIds,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: NormIds,
    decoder: Vec<DecoderLayer>,
    decoder_norm: NormIds,
}

/// Parameter initializer. Weight scale follows fan-in.
enum Init<'a, R> {
    Zero,
    Random(&'a mut R),
}

impl<R: Rng> Init<'_, R> {
    fn weight<T: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Matrix<T> {
        match self {
            Init::Zero => Matrix::zeros(rows, cols),
            Init::Random(rng) => {
                let a = std * 3f64.sqrt();
                Matrix::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-a..a)))
            }
        }
    }

    fn gain<T: Scalar>(&mut self, d: usize) -> Matrix<T> {
        match self {
            Init::Zero => Matrix::zeros(1, d),
            Init::Random(_) => Matrix::filled(1, d, T::one()),
        }
    }
}

impl Layout {
    fn build<T: Scalar, R: Rng>(cfg: &ModelConfig, store: &mut ParamStore<T>, mut init: Init<'_, R>) -> Self {
        let d = cfg.d_model;
        let v = cfg.vocab_size;
        let ff = cfg.d_ff;
        let w_std = 1.0 / (d as f64).sqrt();

        let embed = store.add("embed", init.weight(v, d, w_std));

        let norm = |store: &mut ParamStore<T>, init: &mut Init<'_, R>, name: &str| NormIds {
            gain: store.add(format!("{name}.gain"), init.gain(d)),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, d)),
        };
        fn attn<T: Scalar, R: Rng>(
            store: &mut ParamStore<T>,
            init: &mut Init<'_, R>,
            name: &str,
            d: usize,
            std: f64,
        ) -> AttnIds {
            AttnIds {
                wq: store.add(format!("{name}.wq"), init.weight(d, d, std)),
                bq: store.add(format!("{name}.bq"), Matrix::zeros(1, d)),
                wk: store.add(format!("{name}.wk"), init.weight(d, d, std)),
                bk: store.add(format!("{name}.bk"), Matrix::zeros(1, d)),
                wv: store.add(format!("{name}.wv"), init.weight(d, d, std)),
                bv: store.add(format!("{name}.bv"), Matrix::zeros(1, d)),
                wo: store.add(format!("{name}.wo"), init.weight(d, d, std)),
                bo: store.add(format!("{name}.bo"), Matrix::zeros(1, d)),
            }
        }
        fn ffn<T: Scalar, R: Rng>(
            store: &mut ParamStore<T>,
            init: &mut Init<'_, R>,
            name: &str,
            d: usize,
            ff: usize,
        ) -> FfnIds {
            FfnIds {
                w1: store.add(format!("{name}.w1"), init.weight(d, ff, 1.0 / (d as f64).sqrt())),
                b1: store.add(format!("{name}.b1"), Matrix::zeros(1, ff)),
                w2: store.add(format!("{name}.w2"), init.weight(ff, d, 1.0 / (ff as f64).sqrt())),
                b2: store.add(format!("{name}.b2"), Matrix::zeros(1, d)),
            }
        }

        let mut encoder = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("encoder.{l}");
            encoder.push(EncoderLayer {
                norm_attn: norm(store, &mut init, &format!("{p}.norm_attn")),
                attn: attn(store, &mut init, &format!("{p}.attn"), d, w_std),
                norm_ffn: norm(store, &mut init, &format!("{p}.norm_ffn")),
                ffn: ffn(store, &mut init, &format!("{p}.ffn"), d, ff),
            });
        }
        let encoder_norm = norm(store, &mut init, "encoder.norm");
        let mut decoder = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("decoder.{l}");
            decoder.push(DecoderLayer {
                norm_self: norm(store, &mut init, &format!("{p}.norm_self")),
                self_attn: attn(store, &mut init, &format!("{p}.self_attn"), d, w_std),
                norm_cross: norm(store, &mut init, &format!("{p}.norm_cross")),
                cross_attn: attn(store, &mut init, &format!("{p}.cross_attn"), d, w_std),
                norm_ffn: norm(store, &mut init, &format!("{p}.norm_ffn")),
                ffn: ffn(store, &mut init, &format!("{p}.ffn"), d, ff),
            });
        }
        let decoder_norm = norm(store, &mut init, "decoder.norm");
        Layout {
            embed,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
        }
    }
}

/// Encoder input: discrete token ids, or a `T x vocab` matrix of mixture
/// weights already on the tape (soft one-hot rows).
#[derive(Debug, Clone, Copy)]
pub enum SourceInput<'a> {
    Ids(&'a [usize]),
    Soft(Var),
}

/// Encoder-decoder transformer whose output projection is the transpose of
/// its token embedding matrix.
#[derive(Debug, Clone)]
pub struct Seq2Seq<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
    positions: Matrix<T>,
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, Init::Random(rng));
        Ok(Self::assemble(config, params, layout))
    }

    /// Every parameter, including layer-norm gains, set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build::<T, rand_chacha::ChaCha8Rng>(&config, &mut params, Init::Zero);
        Ok(Self::assemble(config, params, layout))
    }

    /// Rebuilds a model from stored tensors; names and shapes must match the
    /// layout implied by `config`.
    pub fn from_params(config: ModelConfig, stored: ParamStore<T>) -> Result<Self> {
        let template = Self::zeros(config)?;
        if template.params.len() != stored.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                template.params.len(),
                stored.len()
            )));
        }
        for ((tn, tt), (sn, st)) in template.params.iter().zip(stored.iter()) {
            if tn != sn || tt.shape() != st.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {sn} {:?} does not match expected {tn} {:?}",
                    st.shape(),
                    tt.shape()
                )));
            }
        }
        Ok(Self::assemble(config, stored, template.layout))
    }

    fn assemble(config: ModelConfig, params: ParamStore<T>, layout: Layout) -> Self {
        let positions = tensor::sinusoidal_positions(config.max_len, config.d_model);
        Self {
            config,
            params,
            layout,
            positions,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Token embedding matrix, `vocab x d_model`.
    pub fn embeddings(&self) -> &Matrix<T> {
        self.params.get(self.layout.embed)
    }

    pub fn embed_id(&self) -> ParamId {
        self.layout.embed
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::LengthOverflow {
                len,
                max: self.config.max_len,
            });
        }
        if len == 0 {
            return Err(Error::Empty("sequence"));
        }
        Ok(())
    }

    fn embed_scale(&self) -> T {
        T::of((self.config.d_model as f64).sqrt())
    }

    fn positions_slice(&self, len: usize) -> Matrix<T> {
        let d = self.config.d_model;
        Matrix::from_vec(len, d, self.positions.data()[..len * d].to_vec())
    }

    fn embed_graph(&self, g: &mut Graph<T>, b: &Bound, input: SourceInput<'_>) -> Result<Var> {
        let table = b.var(self.layout.embed);
        let raw = match input {
            SourceInput::Ids(ids) => {
                self.check_len(ids.len())?;
                for &id in ids {
                    if id >= self.config.vocab_size {
                        return Err(Error::TokenOutOfRange {
                            id,
                            size: self.config.vocab_size,
                        });
                    }
                }
                g.gather_rows(table, ids)
            }
            SourceInput::Soft(mix) => {
                let (len, width) = g.value(mix).shape();
                self.check_len(len)?;
                if width != self.config.vocab_size {
                    return Err(Error::Dimension(format!(
                        "soft input width {width} != vocab size {}",
                        self.config.vocab_size
                    )));
                }
                g.matmul(mix, table)
            }
        };
        let len = g.value(raw).rows();
        let scaled = g.scale(raw, self.embed_scale());
        let pos = g.constant(self.positions_slice(len));
        Ok(g.add(scaled, pos))
    }

    fn attention_graph(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        ids: &AttnIds,
        query: Var,
        kv: Var,
        causal: bool,
    ) -> Var {
        let q = g.matmul(query, b.var(ids.wq));
        let q = g.add_row(q, b.var(ids.bq));
        let k = g.matmul(kv, b.var(ids.wk));
        let k = g.add_row(k, b.var(ids.bk));
        let v = g.matmul(kv, b.var(ids.wv));
        let v = g.add_row(v, b.var(ids.bv));
        let h = self.config.n_heads;
        let dh = self.config.d_model / h;
        let scale = T::one() / T::of((dh as f64).sqrt());
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let (qh, kh, vh) = if h == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, i * dh, dh),
                    g.slice_cols(k, i * dh, dh),
                    g.slice_cols(v, i * dh, dh),
                )
            };
            let s = g.matmul_bt(qh, kh);
            let s = g.scale(s, scale);
            let p = if causal { g.causal_softmax(s) } else { g.softmax(s) };
            heads.push(g.matmul(p, vh));
        }
        let cat = if h == 1 { heads[0] } else { g.concat_cols(&heads) };
        let o = g.matmul(cat, b.var(ids.wo));
        g.add_row(o, b.var(ids.bo))
    }

    fn ffn_graph(&self, g: &mut Graph<T>, b: &Bound, ids: &FfnIds, x: Var) -> Var {
        let h = g.matmul(x, b.var(ids.w1));
        let h = g.add_row(h, b.var(ids.b1));
        let h = g.gelu(h);
        let o = g.matmul(h, b.var(ids.w2));
        g.add_row(o, b.var(ids.b2))
    }

    fn norm_graph(g: &mut Graph<T>, b: &Bound, ids: &NormIds, x: Var) -> Var {
        g.layer_norm(x, b.var(ids.gain), b.var(ids.bias))
    }

    /// Encoder memory, `src_len x d_model`.
    pub fn encode_graph(&self, g: &mut Graph<T>, b: &Bound, input: SourceInput<'_>) -> Result<Var> {
        let mut x = self.embed_graph(g, b, input)?;
        for layer in &self.layout.encoder {
            let n = Self::norm_graph(g, b, &layer.norm_attn, x);
            let a = self.attention_graph(g, b, &layer.attn, n, n, false);
            x = g.add(x, a);
            let n = Self::norm_graph(g, b, &layer.norm_ffn, x);
            let f = self.ffn_graph(g, b, &layer.ffn, n);
            x = g.add(x, f);
        }
        Ok(Self::norm_graph(g, b, &self.layout.encoder_norm, x))
    }

    /// Final-layer decoder hidden states, `dec_len x d_model`, for a
    /// teacher-forced decoder input (BOS-prefixed).
    pub fn decode_graph(&self, g: &mut Graph<T>, b: &Bound, memory: Var, decoder_input: &[usize]) -> Result<Var> {
        let mut x = self.embed_graph(g, b, SourceInput::Ids(decoder_input))?;
        for layer in &self.layout.decoder {
            let n = Self::norm_graph(g, b, &layer.norm_self, x);
            let a = self.attention_graph(g, b, &layer.self_attn, n, n, true);
            x = g.add(x, a);
            let n = Self::norm_graph(g, b, &layer.norm_cross, x);
            let c = self.attention_graph(g, b, &layer.cross_attn, n, memory, false);
            x = g.add(x, c);
            let n = Self::norm_graph(g, b, &layer.norm_ffn, x);
            let f = self.ffn_graph(g, b, &layer.ffn, n);
            x = g.add(x, f);
        }
        Ok(Self::norm_graph(g, b, &self.layout.decoder_norm, x))
    }

    /// Output logits through the tied embedding matrix.
    pub fn logits_graph(&self, g: &mut Graph<T>, b: &Bound, hidden: Var) -> Var {
        g.matmul_bt(hidden, b.var(self.layout.embed))
    }

    // ---- eager inference path ----

    fn p(&self, id: ParamId) -> &Matrix<T> {
        self.params.get(id)
    }

    fn linear(&self, x: &Matrix<T>, w: ParamId, bias: ParamId) -> Matrix<T> {
        let mut y = x.matmul(self.p(w));
        let b = self.p(bias).row(0);
        for r in 0..y.rows() {
            for (v, &bv) in y.row_mut(r).iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
        y
    }

    fn norm(&self, ids: &NormIds, x: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            autodiff::layer_norm_row(x.row(r), self.p(ids.gain).row(0), self.p(ids.bias).row(0), out.row_mut(r));
        }
        out
    }

    fn ffn(&self, ids: &FfnIds, x: &Matrix<T>) -> Matrix<T> {
        let h = self.linear(x, ids.w1, ids.b1).map(autodiff::gelu);
        self.linear(&h, ids.w2, ids.b2)
    }

    /// Multi-head attention of every `q` row over all key/value rows.
    fn attend(&self, q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>) -> Matrix<T> {
        let h = self.config.n_heads;
        let dh = self.config.d_model / h;
        let scale = T::one() / T::of((dh as f64).sqrt());
        let mut out = Matrix::zeros(q.rows(), self.config.d_model);
        let mut scores = vec![T::zero(); k.rows()];
        for r in 0..q.rows() {
            let visible = k.rows();
            for head in 0..h {
                let cols = head * dh..(head + 1) * dh;
                let qh = &q.row(r)[cols.clone()];
                for j in 0..visible {
                    scores[j] = tensor::dot(qh, &k.row(j)[cols.clone()]) * scale;
                }
                tensor::softmax_in_place(&mut scores[..visible]);
                let orow = &mut out.row_mut(r)[cols.clone()];
                for (j, &p) in scores[..visible].iter().enumerate() {
                    for (o, &vv) in orow.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o = *o + p * vv;
                    }
                }
            }
        }
        out
    }

    fn embed_rows(&self, ids: &[usize], start_pos: usize) -> Result<Matrix<T>> {
        let d = self.config.d_model;
        let scale = self.embed_scale();
        let mut x = Matrix::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            if id >= self.config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.config.vocab_size,
                });
            }
            let pos = self.positions.row(start_pos + r);
            for ((o, &e), &p) in x.row_mut(r).iter_mut().zip(self.embeddings().row(id)).zip(pos) {
                *o = e * scale + p;
            }
        }
        Ok(x)
    }

    /// Runs the encoder and precomputes cross-attention keys/values.
    pub fn encode(&self, src: &[usize]) -> Result<EncodedSource<T>> {
        self.check_len(src.len())?;
        let mut x = self.embed_rows(src, 0)?;
        for layer in &self.layout.encoder {
            let n = self.norm(&layer.norm_attn, &x);
            let q = self.linear(&n, layer.attn.wq, layer.attn.bq);
            let k = self.linear(&n, layer.attn.wk, layer.attn.bk);
            let v = self.linear(&n, layer.attn.wv, layer.attn.bv);
            let a = self.attend(&q, &k, &v);
            let a = self.linear(&a, layer.attn.wo, layer.attn.bo);
            x.add_assign(&a);
            let n = self.norm(&layer.norm_ffn, &x);
            x.add_assign(&self.ffn(&layer.ffn, &n));
        }
        let memory = self.norm(&self.layout.encoder_norm, &x);
        let mut cross_k = Vec::with_capacity(self.layout.decoder.len());
        let mut cross_v = Vec::with_capacity(self.layout.decoder.len());
        for layer in &self.layout.decoder {
            cross_k.push(self.linear(&memory, layer.cross_attn.wk, layer.cross_attn.bk));
            cross_v.push(self.linear(&memory, layer.cross_attn.wv, layer.cross_attn.bv));
        }
        Ok(EncodedSource { memory, cross_k, cross_v })
    }

    pub fn start_state(&self) -> DecoderState<T> {
        let d = self.config.d_model;
        let n = self.layout.decoder.len();
        DecoderState {
            self_k: vec![Matrix::zeros(0, d); n],
            self_v: vec![Matrix::zeros(0, d); n],
            len: 0,
        }
    }

    /// Feeds one decoder token, returning `(final hidden state, logits)` for
    /// the next position.
    pub fn step(&self, src: &EncodedSource<T>, state: &mut DecoderState<T>, token: usize) -> Result<(Vec<T>, Vec<T>)> {
        if state.len >= self.config.max_len {
            return Err(Error::LengthOverflow {
                len: state.len + 1,
                max: self.config.max_len,
            });
        }
        let mut x = self.embed_rows(&[token], state.len)?;
        for (l, layer) in self.layout.decoder.iter().enumerate() {
            let n = self.norm(&layer.norm_self, &x);
            let q = self.linear(&n, layer.self_attn.wq, layer.self_attn.bq);
            let k = self.linear(&n, layer.self_attn.wk, layer.self_attn.bk);
            let v = self.linear(&n, layer.self_attn.wv, layer.self_attn.bv);
            append_row(&mut state.self_k[l], k.row(0));
            append_row(&mut state.self_v[l], v.row(0));
            let a = self.attend(&q, &state.self_k[l], &state.self_v[l]);
            x.add_assign(&self.linear(&a, layer.self_attn.wo, layer.self_attn.bo));
            let n = self.norm(&layer.norm_cross, &x);
            let q = self.linear(&n, layer.cross_attn.wq, layer.cross_attn.bq);
            let c = self.attend(&q, &src.cross_k[l], &src.cross_v[l]);
            x.add_assign(&self.linear(&c, layer.cross_attn.wo, layer.cross_attn.bo));
            let n = self.norm(&layer.norm_ffn, &x);
            x.add_assign(&self.ffn(&layer.ffn, &n));
        }
        state.len += 1;
        let hidden = self.norm(&self.layout.decoder_norm, &x);
        let logits = hidden.matmul_bt(self.embeddings());
        Ok((hidden.into_vec(), logits.into_vec()))
    }

    /// Teacher-forced logits for a whole decoder input, via the cached path.
    pub fn logits_eager(&self, src: &[usize], decoder_input: &[usize]) -> Result<Matrix<T>> {
        self.check_len(decoder_input.len())?;
        let enc = self.encode(src)?;
        let mut state = self.start_state();
        let v = self.config.vocab_size;
        let mut out = Matrix::zeros(decoder_input.len(), v);
        for (t, &tok) in decoder_input.iter().enumerate() {
            let (_, logits) = self.step(&enc, &mut state, tok)?;
            out.row_mut(t).copy_from_slice(&logits);
        }
        Ok(out)
    }
}

fn append_row<T: Scalar>(m: &mut Matrix<T>, row: &[T]) {
    let cols = row.len();
    let mut data = std::mem::replace(m, Matrix::zeros(0, cols)).into_vec();
    data.extend_from_slice(row);
    *m = Matrix::from_vec(data.len() / cols, cols, data);
}

/// Encoder output plus per-layer cross-attention projections.
#[derive(Debug, Clone)]
pub struct EncodedSource<T> {
    pub memory: Matrix<T>,
    cross_k: Vec<Matrix<T>>,
    cross_v: Vec<Matrix<T>>,
}

/// Self-attention key/value cache for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecoderState<T> {
    self_k: Vec<Matrix<T>>,
    self_v: Vec<Matrix<T>>,
    len: usize,
}

impl<T> DecoderState<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_len: 16,
        }
    }

    #[test]
    fn graph_and_cached_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Seq2Seq::<f64>::new(tiny(12), &mut rng).unwrap();
        let src = [3, 4, 5, 6, 7];
        let dec = [1, 8, 9, 10];
        let mut g = Graph::new();
        let b = m.params().bind(&mut g, false);
        let mem = m.encode_graph(&mut g, &b, SourceInput::Ids(&src)).unwrap();
        let h = m.decode_graph(&mut g, &b, mem, &dec).unwrap();
        let logits = m.logits_graph(&mut g, &b, h);
        let eager = m.logits_eager(&src, &dec).unwrap();
        for (a, e) in g.value(logits).data().iter().zip(eager.data()) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn soft_one_hot_input_matches_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Seq2Seq::<f64>::new(tiny(10), &mut rng).unwrap();
        let src = [2, 7, 3];
        let mut g = Graph::new();
        let b = m.params().bind(&mut g, false);
        let a = m.encode_graph(&mut g, &b, SourceInput::Ids(&src)).unwrap();
        let onehot = g.constant(Matrix::from_fn(3, 10, |r, c| if src[r] == c { 1.0 } else { 0.0 }));
        let s = m.encode_graph(&mut g, &b, SourceInput::Soft(onehot)).unwrap();
        assert_eq!(g.value(a), g.value(s));
    }

    #[test]
    fn rejects_overlong_and_bad_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Seq2Seq::<f64>::new(tiny(6), &mut rng).unwrap();
        let long = vec![1usize; 17];
        assert!(matches!(m.encode(&long), Err(Error::LengthOverflow { len: 17, max: 16 })));
        let mut bad = tiny(6);
        bad.n_heads = 3;
        assert!(Seq2Seq::<f64>::new(bad, &mut rng).is_err());
    }

    #[test]
    fn from_params_roundtrip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Seq2Seq::<f32>::new(tiny(6), &mut rng).unwrap();
        let back = Seq2Seq::from_params(*m.config(), m.params().clone()).unwrap();
        assert_eq!(back.params(), m.params());
        assert!(Seq2Seq::from_params(tiny(7), m.params().clone()).is_err());
    }
}
