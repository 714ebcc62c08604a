//! A small post-LayerNorm bidirectional transformer trained with a masked
//! language modeling objective.
//!
//! Every intermediate representation and attention map is exposed through
//! [`ForwardTrace`], and forward passes accept [`InterventionSpec`]s that edit
//! the residual stream or the attention weights in flight.
//!
//! Hidden-state indexing: `hidden[0]` is the raw token embedding *before*
//! position embeddings are added; `hidden[l]` for `l >= 1` is the (post-LN)
//! output of transformer block `l - 1`. Attention layers are indexed
//! `0..n_layers` over blocks.

mod backprop;
mod checkpoint;
mod collect;
mod train;

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMaskSpec, MaskMode};
use crate::error::{Error, Result};

pub use backprop::MaskedSequence;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use collect::{collect_representations, collect_representations_with, mask_target};
pub use train::{encode_corpus, train_mlm, train_on_sequences, TrainReport, TrainSchedule, TrainSequence};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub mask_token_id: u32,
    pub seed: u64,
}

impl ModelConfig {
    /// Two-layer, 64-dimensional configuration used for the toy experiments.
    pub fn toy(vocab_size: usize, mask_token_id: u32) -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            hidden_dim: 64,
            ffn_dim: 128,
            vocab_size,
            max_seq_len: 32,
            mask_token_id,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.hidden_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.hidden_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        if self.mask_token_id as usize >= self.vocab_size {
            return Err(Error::Config(format!(
                "mask_token_id {} outside vocabulary of size {}",
                self.mask_token_id, self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}

/// A forward-pass edit.
#[derive(Debug, Clone)]
pub enum InterventionSpec {
    /// Replace `hidden[layer][p]` by `matrix · hidden[layer][p]` for each
    /// listed position before the next block (or the output head) reads it.
    ProjectRepresentation {
        layer: usize,
        positions: Vec<usize>,
        matrix: Arc<Array2<f64>>,
    },
    /// Multiply the post-softmax attention of every head in the spec's layer
    /// range by the spec's binary mask.
    MaskAttention {
        spec: AttentionMaskSpec,
        mode: MaskMode,
    },
}

/// All intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `n_layers + 1` matrices of shape `T × d`.
    pub hidden: Vec<Array2<f64>>,
    /// `attention[l][h]` is the `T × T` weight matrix actually used by head
    /// `h` of block `l` (after any mask).
    pub attention: Vec<Vec<Array2<f64>>>,
    /// `T × vocab_size`.
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockSlots {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

/// Parameter tensors in declared (checkpoint) order, all stored row-major in
/// one flat buffer.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub entries: Vec<ParamEntry>,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub emb_ln_g: usize,
    pub emb_ln_b: usize,
    pub blocks: Vec<BlockSlots>,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, rows: usize, cols: usize| {
            entries.push(ParamEntry {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
            entries.len() - 1
        };
        let d = c.hidden_dim;
        let tok_emb = add("tok_emb".into(), c.vocab_size, d);
        let pos_emb = add("pos_emb".into(), c.max_seq_len, d);
        let emb_ln_g = add("emb_ln.gamma".into(), 1, d);
        let emb_ln_b = add("emb_ln.beta".into(), 1, d);
        let mut blocks = Vec::new();
        for l in 0..c.n_layers {
            let mut p = |n: &str, r, k| add(format!("block{l}.{n}"), r, k);
            blocks.push(BlockSlots {
                wq: p("wq", d, d),
                bq: p("bq", 1, d),
                wk: p("wk", d, d),
                bk: p("bk", 1, d),
                wv: p("wv", d, d),
                bv: p("bv", 1, d),
                wo: p("wo", d, d),
                bo: p("bo", 1, d),
                ln1_g: p("ln1.gamma", 1, d),
                ln1_b: p("ln1.beta", 1, d),
                w1: p("w1", d, c.ffn_dim),
                b1: p("b1", 1, c.ffn_dim),
                w2: p("w2", c.ffn_dim, d),
                b2: p("b2", 1, d),
                ln2_g: p("ln2.gamma", 1, d),
                ln2_b: p("ln2.beta", 1, d),
            });
        }
        let out_w = add("out_w".into(), d, c.vocab_size);
        let out_b = add("out_b".into(), 1, c.vocab_size);
        Self {
            entries,
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            blocks,
            out_w,
            out_b,
            total: offset,
        }
    }

    pub fn range(&self, idx: usize) -> std::ops::Range<usize> {
        let e = &self.entries[idx];
        e.offset..e.offset + e.rows * e.cols
    }
}

/// A masked language model with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Model {
    /// Randomly initialised model; deterministic in `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for entry in &layout.entries {
            let range = entry.offset..entry.offset + entry.rows * entry.cols;
            let name = entry.name.as_str();
            if name.ends_with(".gamma") {
                params[range].fill(1.0);
            } else if entry.rows == 1 {
                // biases and LayerNorm shifts start at zero
            } else {
                let std = if name.ends_with("emb") {
                    0.1
                } else {
                    (1.0 / entry.rows as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                for p in &mut params[range] {
                    *p = normal.sample(&mut rng);
                }
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Flat parameter buffer in declared order.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(name, rows, cols)` of every parameter tensor in declared order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        self.layout
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.rows, e.cols))
            .collect()
    }

    pub(crate) fn mat(&self, idx: usize) -> ArrayView2<'_, f64> {
        let e = &self.layout.entries[idx];
        ArrayView2::from_shape((e.rows, e.cols), &self.params[self.layout.range(idx)])
            .expect("layout shapes are consistent")
    }

    pub(crate) fn vector(&self, idx: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.layout.range(idx)])
    }

    /// Raw (non-contextual) embedding of one token.
    pub fn token_embedding(&self, token: u32) -> ArrayView1<'_, f64> {
        let e = &self.layout.entries[self.layout.tok_emb];
        let start = e.offset + token as usize * e.cols;
        ArrayView1::from(&self.params[start..start + e.cols])
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} >= vocab_size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn check_interventions(&self, len: usize, interventions: &[InterventionSpec]) -> Result<()> {
        let d = self.config.hidden_dim;
        let n_layers = self.config.n_layers;
        for iv in interventions {
            match iv {
                InterventionSpec::ProjectRepresentation {
                    layer,
                    positions,
                    matrix,
                } => {
                    if *layer > n_layers {
                        return Err(Error::Intervention(format!(
                            "projection layer {layer} outside 0..={n_layers}"
                        )));
                    }
                    if let Some(p) = positions.iter().find(|&&p| p >= len) {
                        return Err(Error::Intervention(format!(
                            "projection position {p} outside sequence of length {len}"
                        )));
                    }
                    if matrix.dim() != (d, d) {
                        return Err(Error::Intervention(format!(
                            "projection matrix is {:?}, expected ({d}, {d})",
                            matrix.dim()
                        )));
                    }
                }
                InterventionSpec::MaskAttention { spec, .. } => {
                    spec.validate(n_layers, len)
                        .map_err(|e| Error::Intervention(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    /// Plain or intervened forward pass over one token sequence.
    pub fn forward(&self, tokens: &[u32], interventions: &[InterventionSpec]) -> Result<ForwardTrace> {
        self.check_tokens(tokens)?;
        self.check_interventions(tokens.len(), interventions)?;
        let emb = self.embed(tokens);
        Ok(self.run_single(emb, interventions))
    }

    /// Forward pass starting from explicit layer-0 vectors (one row per
    /// position) instead of token ids.
    pub fn forward_embeddings(
        &self,
        embeddings: ArrayView2<'_, f64>,
        interventions: &[InterventionSpec],
    ) -> Result<ForwardTrace> {
        let (len, d) = embeddings.dim();
        if d != self.config.hidden_dim {
            return Err(Error::Shape(format!(
                "embedding width {d} != hidden_dim {}",
                self.config.hidden_dim
            )));
        }
        if len == 0 || len > self.config.max_seq_len {
            return Err(Error::Input(format!("invalid sequence length {len}")));
        }
        self.check_interventions(len, interventions)?;
        Ok(self.run_single(embeddings.to_owned(), interventions))
    }

    pub(crate) fn embed(&self, tokens: &[u32]) -> Array2<f64> {
        let table = self.mat(self.layout.tok_emb);
        let mut out = Array2::zeros((tokens.len(), self.config.hidden_dim));
        for (mut row, &t) in out.rows_mut().into_iter().zip(tokens) {
            row.assign(&table.row(t as usize));
        }
        out
    }

    fn run_single(&self, emb: Array2<f64>, interventions: &[InterventionSpec]) -> ForwardTrace {
        let len = emb.nrows();
        let batch = Batch {
            spans: vec![(0, len)],
            interventions: vec![interventions],
        };
        let acts = self.run(emb, &batch, None, true);
        let logits = self.logits_rows(&acts.output, None);
        ForwardTrace {
            hidden: acts.hidden,
            attention: acts
                .blocks
                .into_iter()
                .map(|b| b.weights.into_iter().next().unwrap_or_default())
                .collect(),
            logits,
        }
    }

    pub(crate) fn logits_rows(&self, x: &Array2<f64>, rows: Option<&[usize]>) -> Array2<f64> {
        let w = self.mat(self.layout.out_w);
        let b = self.vector(self.layout.out_b);
        let mut out = match rows {
            None => x.dot(&w),
            Some(rows) => x.select(Axis(0), rows).dot(&w),
        };
        out += &b;
        out
    }

    /// Core packed forward. Sequences occupy consecutive row ranges of `emb`.
    pub(crate) fn run(
        &self,
        mut emb: Array2<f64>,
        batch: &Batch<'_>,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
        record: bool,
    ) -> Activations {
        let c = &self.config;
        let lay = &self.layout;
        let mut hidden = Vec::new();

        if record {
            hidden.push(emb.clone());
        }
        apply_projections(&mut emb, batch, 0);

        let pos = self.mat(lay.pos_emb);
        let mut u0 = emb.clone();
        for &(start, len) in &batch.spans {
            let mut rows = u0.slice_mut(s![start..start + len, ..]);
            rows += &pos.slice(s![..len, ..]);
        }
        let (x0, ln0) = layer_norm(&u0, self.vector(lay.emb_ln_g), self.vector(lay.emb_ln_b));

        let masks = batch.attention_masks(c.n_layers);
        let mut x = x0.clone();
        let mut blocks = Vec::with_capacity(c.n_layers);
        for (l, slots) in lay.blocks.iter().enumerate() {
            let (out, cache) = self.block(&x, slots, batch, &masks[l], dropout.as_mut().map(|(p, r)| (*p, &mut **r)));
            blocks.push(cache);
            x = out;
            if record {
                hidden.push(x.clone());
            }
            apply_projections(&mut x, batch, l + 1);
        }
        Activations {
            emb,
            ln0,
            blocks,
            output: x,
            hidden,
        }
    }

    fn block(
        &self,
        x: &Array2<f64>,
        sl: &BlockSlots,
        batch: &Batch<'_>,
        masks: &[Option<(Array2<f64>, MaskMode)>],
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> (Array2<f64>, BlockCache) {
        let c = &self.config;
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = affine(x, self.mat(sl.wq), self.vector(sl.bq));
        let k = affine(x, self.mat(sl.wk), self.vector(sl.bk));
        let v = affine(x, self.mat(sl.wv), self.vector(sl.bv));

        let mut ctx = Array2::zeros(x.dim());
        let mut probs = Vec::with_capacity(batch.spans.len());
        let mut weights = Vec::with_capacity(batch.spans.len());
        let mut factors = Vec::with_capacity(batch.spans.len());
        for (si, &(start, len)) in batch.spans.iter().enumerate() {
            let rows = start..start + len;
            let mut seq_probs = Vec::with_capacity(c.n_heads);
            let mut seq_weights = Vec::with_capacity(c.n_heads);
            let mut seq_factors = Vec::with_capacity(c.n_heads);
            for h in 0..c.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut scores = qh.dot(&kh.t());
                scores *= scale;
                let mask = &masks[si];
                if let Some((m, MaskMode::PreSoftmax)) = mask {
                    scores.zip_mut_with(m, |s, &keep| {
                        if keep == 0.0 {
                            *s = f64::NEG_INFINITY;
                        }
                    });
                }
                softmax_rows(&mut scores);
                let p = scores;
                let mut w = p.clone();
                match mask {
                    Some((m, MaskMode::PostSoftmax)) => w *= m,
                    Some((m, MaskMode::PostSoftmaxRenormalized)) => {
                        w *= m;
                        // only rows that lost an entry are rescaled, so an
                        // all-ones mask stays bit-identical
                        for (mut row, keep) in w.rows_mut().into_iter().zip(m.rows()) {
                            let z: f64 = row.sum();
                            if z > 0.0 && keep.iter().any(|&k| k == 0.0) {
                                row /= z;
                            }
                        }
                    }
                    _ => {}
                }
                let factor = dropout.as_mut().map(|(rate, rng)| {
                    let keep = 1.0 - *rate;
                    Array2::from_shape_fn((len, len), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                });
                if let Some(f) = &factor {
                    w *= f;
                }
                ctx.slice_mut(s![rows.clone(), cols]).assign(&w.dot(&vh));
                seq_probs.push(p);
                seq_weights.push(w);
                seq_factors.push(factor);
            }
            probs.push(seq_probs);
            weights.push(seq_weights);
            factors.push(seq_factors);
        }

        let attn_out = affine(&ctx, self.mat(sl.wo), self.vector(sl.bo));
        let u1 = x + &attn_out;
        let (y, ln1) = layer_norm(&u1, self.vector(sl.ln1_g), self.vector(sl.ln1_b));
        let h1 = affine(&y, self.mat(sl.w1), self.vector(sl.b1));
        let g = h1.mapv(gelu);
        let f = affine(&g, self.mat(sl.w2), self.vector(sl.b2));
        let u2 = &y + &f;
        let (out, ln2) = layer_norm(&u2, self.vector(sl.ln2_g), self.vector(sl.ln2_b));
        (
            out,
            BlockCache {
                x_in: x.clone(),
                q,
                k,
                v,
                probs,
                weights,
                factors,
                ctx,
                ln1,
                y,
                h1,
                g,
                ln2,
            },
        )
    }
}

/// A packed batch: each sequence occupies `spans[i] = (start, len)` rows.
pub(crate) struct Batch<'a> {
    pub spans: Vec<(usize, usize)>,
    pub interventions: Vec<&'a [InterventionSpec]>,
}

impl Batch<'_> {
    /// Per block, per sequence: the combined binary mask (product of every
    /// mask covering that block) and its mode.
    fn attention_masks(&self, n_layers: usize) -> Vec<Vec<Option<(Array2<f64>, MaskMode)>>> {
        let mut out = vec![vec![None; self.spans.len()]; n_layers];
        for (si, ivs) in self.interventions.iter().enumerate() {
            let len = self.spans[si].1;
            for iv in ivs.iter() {
                if let InterventionSpec::MaskAttention { spec, mode } = iv {
                    let m = crate::attention::build_mask_unchecked(spec, len);
                    for slot in out.iter_mut().take(spec.last_layer + 1).skip(spec.first_layer) {
                        match &mut slot[si] {
                            Some((existing, _)) => *existing *= &m,
                            empty => *empty = Some((m.clone(), *mode)),
                        }
                    }
                }
            }
        }
        out
    }
}

fn apply_projections(x: &mut Array2<f64>, batch: &Batch<'_>, layer: usize) {
    for (si, ivs) in batch.interventions.iter().enumerate() {
        let start = batch.spans[si].0;
        for iv in ivs.iter() {
            if let InterventionSpec::ProjectRepresentation {
                layer: l,
                positions,
                matrix,
            } = iv
            {
                if *l != layer {
                    continue;
                }
                for &p in positions {
                    let projected = matrix.dot(&x.row(start + p));
                    x.row_mut(start + p).assign(&projected);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    pub x_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Softmax output per sequence per head.
    pub probs: Vec<Vec<Array2<f64>>>,
    /// Weights actually applied to the values.
    pub weights: Vec<Vec<Array2<f64>>>,
    /// Dropout multipliers, when dropout was active.
    pub factors: Vec<Vec<Option<Array2<f64>>>>,
    pub ctx: Array2<f64>,
    pub ln1: LnCache,
    pub y: Array2<f64>,
    pub h1: Array2<f64>,
    pub g: Array2<f64>,
    pub ln2: LnCache,
}

#[derive(Debug, Clone)]
pub(crate) struct Activations {
    /// Layer-0 vectors after any layer-0 projection.
    #[allow(dead_code)]
    pub emb: Array2<f64>,
    pub ln0: LnCache,
    pub blocks: Vec<BlockCache>,
    pub output: Array2<f64>,
    /// Recorded hidden states (empty unless requested).
    pub hidden: Vec<Array2<f64>>,
}

pub(crate) fn affine(x: &Array2<f64>, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = x.dot(&w);
    out += &b;
    out
}

pub(crate) fn layer_norm(
    u: &Array2<f64>,
    gamma: ArrayView1<'_, f64>,
    beta: ArrayView1<'_, f64>,
) -> (Array2<f64>, LnCache) {
    let d = u.ncols() as f64;
    let mut xhat = u.clone();
    let mut inv_std = Array1::zeros(u.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let mut out = &xhat * &gamma;
    out += &beta;
    (out, LnCache { xhat, inv_std })
}

pub(crate) fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            // every key masked out
            row.fill(0.0);
            continue;
        }
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
