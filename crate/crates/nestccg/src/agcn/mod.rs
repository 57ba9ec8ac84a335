//! The tagging model: a pluggable encoder feeding stacked graph
//! convolution layers whose neighbor weights come either from the raw
//! adjacency matrix or from position-aware bilinear attention over it,
//! followed by a per-token projection onto the tag set and a softmax
//! decoder.

mod checkpoint;
mod train;

pub use checkpoint::{load_model, parse_model, render_model, save_model};
pub use train::{evaluate, train, DataSet, EpochStats, TrainConfig, TrainLog};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chunk_graph::{AdjacencyMatrix, EdgeTypes, GraphMode};
use crate::corpus::{EmbeddingTable, Sentence, TagSet};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Matrix, Parameter, Tape, TapeId};

/// Epsilon inside the layer-norm denominator.
pub const LN_EPS: f64 = 1e-5;

/// Per token, beam candidates as (tag index, log-probability).
pub type BeamCandidates = Vec<Vec<(usize, f64)>>;

/// Word-to-index map for the lookup encoder. Index 0 is the reserved
/// out-of-vocabulary row; known words occupy 1..=len.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i + 1).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Vocab { words, index })
    }

    pub const OOV: usize = 0;

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::OOV)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Rows of the embedding table: one per word plus the OOV row.
    pub fn table_rows(&self) -> usize {
        self.words.len() + 1
    }
}

/// Source of the initial hidden vectors h(0).
#[derive(Debug, Clone)]
pub enum Encoder {
    /// Trainable per-word embeddings with an OOV row.
    Lookup { vocab: Vocab, embedding: Parameter },
    /// Fixed vectors read from an embedding file.
    Precomputed { dim: usize },
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match self {
            Encoder::Lookup { embedding, .. } => embedding.value.cols(),
            Encoder::Precomputed { dim } => *dim,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Encoder::Lookup { .. } => "lookup",
            Encoder::Precomputed { .. } => "precomputed",
        }
    }
}

/// One graph-convolution layer: the shared linear map, the three
/// positional bilinear matrices for attention, and layer-norm affine
/// parameters. All matrices are d×d.
#[derive(Debug, Clone)]
pub struct AgcnLayer {
    pub w: Parameter,
    pub b: Parameter,
    pub w_left: Parameter,
    pub w_right: Parameter,
    pub w_self: Parameter,
    pub ln_gain: Parameter,
    pub ln_bias: Parameter,
}

impl AgcnLayer {
    pub fn zeros(dim: usize) -> Self {
        AgcnLayer {
            w: Parameter::new(Matrix::zeros(dim, dim)),
            b: Parameter::new(Matrix::zeros(1, dim)),
            w_left: Parameter::new(Matrix::zeros(dim, dim)),
            w_right: Parameter::new(Matrix::zeros(dim, dim)),
            w_self: Parameter::new(Matrix::zeros(dim, dim)),
            ln_gain: Parameter::new(Matrix::filled(1, dim, 1.0)),
            ln_bias: Parameter::new(Matrix::zeros(1, dim)),
        }
    }

    fn glorot(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        AgcnLayer {
            w: Parameter::new(Matrix::glorot_uniform(dim, dim, rng)),
            b: Parameter::new(Matrix::zeros(1, dim)),
            w_left: Parameter::new(Matrix::glorot_uniform(dim, dim, rng)),
            w_right: Parameter::new(Matrix::glorot_uniform(dim, dim, rng)),
            w_self: Parameter::new(Matrix::glorot_uniform(dim, dim, rng)),
            ln_gain: Parameter::new(Matrix::filled(1, dim, 1.0)),
            ln_bias: Parameter::new(Matrix::zeros(1, dim)),
        }
    }
}

/// Graph construction and attention switches (the ablation axes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelFlags {
    pub attention: bool,
    pub graph: GraphMode,
    pub edge_types: EdgeTypes,
}

impl Default for ModelFlags {
    fn default() -> Self {
        ModelFlags {
            attention: true,
            graph: GraphMode::Chunk,
            edge_types: EdgeTypes::default(),
        }
    }
}

/// Encoder choice for [`TaggerModel::new`].
#[derive(Debug, Clone)]
pub enum EncoderConfig {
    Lookup { vocabulary: Vec<String>, dim: usize },
    Precomputed { dim: usize },
}

/// The full tagger. With zero layers the encoder output feeds the output
/// projection directly (the no-graph baseline).
#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub encoder: Encoder,
    pub layers: Vec<AgcnLayer>,
    pub w_d: Parameter,
    pub tagset: TagSet,
    pub flags: ModelFlags,
    pub dropout: f64,
}

/// Per-sentence input to the encoder.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a> {
    Tokens(&'a Sentence),
    Block(&'a Matrix),
}

/// Output of [`TaggerModel::loss_and_gradients`].
#[derive(Debug, Clone)]
pub struct SentenceGradients {
    pub loss: f64,
    pub gradients: Vec<Matrix>,
    pub min_relu_input: f64,
}

impl TaggerModel {
    /// Deterministic initialization: matrices are Glorot-uniform draws in
    /// a fixed order from a ChaCha stream seeded by `seed`, biases zero,
    /// layer-norm gains one.
    pub fn new(
        encoder: EncoderConfig,
        num_layers: usize,
        tagset: TagSet,
        flags: ModelFlags,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Invalid(format!(
                "dropout rate {dropout} outside [0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (encoder, dim) = match encoder {
            EncoderConfig::Lookup { vocabulary, dim } => {
                let vocab = Vocab::new(vocabulary)?;
                let embedding =
                    Parameter::new(Matrix::glorot_uniform(vocab.table_rows(), dim, &mut rng));
                (Encoder::Lookup { vocab, embedding }, dim)
            }
            EncoderConfig::Precomputed { dim } => (Encoder::Precomputed { dim }, dim),
        };
        let layers: Vec<AgcnLayer> = (0..num_layers)
            .map(|_| AgcnLayer::glorot(dim, &mut rng))
            .collect();
        let w_d = Parameter::new(Matrix::glorot_uniform(tagset.len(), dim, &mut rng));
        Ok(TaggerModel {
            encoder,
            layers,
            w_d,
            tagset,
            flags,
            dropout,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Parameters in their canonical slot order.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = Vec::new();
        if let Encoder::Lookup { embedding, .. } = &self.encoder {
            out.push(embedding);
        }
        for layer in &self.layers {
            out.push(&layer.w);
            out.push(&layer.b);
            out.push(&layer.w_left);
            out.push(&layer.w_right);
            out.push(&layer.w_self);
            out.push(&layer.ln_gain);
            out.push(&layer.ln_bias);
        }
        out.push(&self.w_d);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::new();
        if let Encoder::Lookup { embedding, .. } = &mut self.encoder {
            out.push(embedding);
        }
        for layer in &mut self.layers {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
            out.push(&mut layer.w_left);
            out.push(&mut layer.w_right);
            out.push(&mut layer.w_self);
            out.push(&mut layer.ln_gain);
            out.push(&mut layer.ln_bias);
        }
        out.push(&mut self.w_d);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if matches!(self.encoder, Encoder::Lookup { .. }) {
            out.push("embedding".to_string());
        }
        for li in 0..self.layers.len() {
            for field in ["w", "b", "w_left", "w_right", "w_self", "ln_gain", "ln_bias"] {
                out.push(format!("layer{li}.{field}"));
            }
        }
        out.push("w_d".to_string());
        out
    }

    /// Builds the forward tape. Dropout masks (one n×d matrix per layer,
    /// entries 0 or 1/(1-rate)) are applied to each layer input; targets
    /// add a mean cross-entropy node.
    pub(crate) fn build_tape(
        &self,
        input: &EncoderInput,
        adj: &AdjacencyMatrix,
        dropout_masks: Option<&[Matrix]>,
        targets: Option<&[usize]>,
    ) -> Result<(Tape, TapeId, Option<TapeId>)> {
        let n = adj.n();
        let mut tape = Tape::new();
        let lookup = matches!(self.encoder, Encoder::Lookup { .. });
        let layer_slot = |li: usize, field: usize| if lookup { 1 } else { 0 } + li * 7 + field;
        let wd_slot = if lookup { 1 } else { 0 } + self.layers.len() * 7;

        let mut h = match (input, &self.encoder) {
            (EncoderInput::Tokens(sentence), Encoder::Lookup { vocab, embedding }) => {
                if sentence.len() != n {
                    return Err(Error::Shape(format!(
                        "sentence has {} tokens but the graph covers {n}",
                        sentence.len()
                    )));
                }
                let indices: Vec<usize> = sentence
                    .tokens()
                    .iter()
                    .map(|t| vocab.index_of(t))
                    .collect();
                let table = tape.param(0, &embedding.value);
                tape.select_rows(table, indices)
            }
            (EncoderInput::Block(block), Encoder::Precomputed { dim }) => {
                if block.cols() != *dim {
                    return Err(Error::Shape(format!(
                        "embedding block width {} does not match model dimension {dim}",
                        block.cols()
                    )));
                }
                if block.rows() != n {
                    return Err(Error::Shape(format!(
                        "embedding block has {} rows but the graph covers {n}",
                        block.rows()
                    )));
                }
                tape.input((*block).clone())
            }
            (EncoderInput::Tokens(_), Encoder::Precomputed { .. }) => {
                return Err(Error::Invalid(
                    "model uses precomputed embeddings: provide an embedding file".into(),
                ))
            }
            (EncoderInput::Block(_), Encoder::Lookup { .. }) => {
                return Err(Error::Invalid(
                    "model uses a lookup encoder: embedding blocks are not accepted".into(),
                ))
            }
        };

        if let Some(masks) = dropout_masks {
            if masks.len() != self.layers.len() {
                return Err(Error::Shape(format!(
                    "{} dropout masks for {} layers",
                    masks.len(),
                    self.layers.len()
                )));
            }
        }

        let adj_matrix = adj.to_matrix();
        for (li, layer) in self.layers.iter().enumerate() {
            if let Some(masks) = dropout_masks {
                h = tape.hadamard_const(h, masks[li].clone());
            }
            let ids = LayerIds {
                w: tape.param(layer_slot(li, 0), &layer.w.value),
                b: tape.param(layer_slot(li, 1), &layer.b.value),
                w_left: tape.param(layer_slot(li, 2), &layer.w_left.value),
                w_right: tape.param(layer_slot(li, 3), &layer.w_right.value),
                w_self: tape.param(layer_slot(li, 4), &layer.w_self.value),
                ln_gain: tape.param(layer_slot(li, 5), &layer.ln_gain.value),
                ln_bias: tape.param(layer_slot(li, 6), &layer.ln_bias.value),
            };
            h = append_layer(&mut tape, h, &adj_matrix, &ids, self.flags.attention);
        }

        let wd = tape.param(wd_slot, &self.w_d.value);
        let wdt = tape.transpose(wd);
        let logits = tape.matmul(h, wdt);

        let loss = match targets {
            Some(t) => {
                if t.len() != n {
                    return Err(Error::Shape(format!(
                        "{} targets for {n} tokens",
                        t.len()
                    )));
                }
                Some(tape.cross_entropy_mean_rows(logits, t.to_vec()))
            }
            None => None,
        };
        Ok((tape, logits, loss))
    }

    /// Per-token tag logits in evaluation mode (no dropout).
    pub fn logits(&self, input: &EncoderInput, adj: &AdjacencyMatrix) -> Result<Matrix> {
        let (tape, logits, _) = self.build_tape(input, adj, None, None)?;
        Ok(tape.value(logits).clone())
    }

    /// Mean per-token cross-entropy of one sentence in evaluation mode.
    pub fn loss(&self, input: &EncoderInput, adj: &AdjacencyMatrix, targets: &[usize]) -> Result<f64> {
        let (tape, _, loss) = self.build_tape(input, adj, None, Some(targets))?;
        Ok(tape.scalar(loss.expect("targets supplied")))
    }

    /// One backward pass: the loss, gradients aligned with [`Self::params`]
    /// order (zero for parameters the configuration leaves unused), and
    /// the smallest |x| seen at a ReLU input, for kink exclusion in
    /// finite-difference checks.
    pub fn loss_and_gradients(
        &self,
        input: &EncoderInput,
        adj: &AdjacencyMatrix,
        targets: &[usize],
    ) -> Result<SentenceGradients> {
        let (mut tape, _, loss) = self.build_tape(input, adj, None, Some(targets))?;
        let loss_id = loss.expect("targets supplied");
        let loss = tape.scalar(loss_id);
        let min_relu_input = tape.min_relu_input_magnitude();
        tape.backward(loss_id);
        let mut gradients: Vec<Matrix> = self
            .params()
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        for (slot, g) in tape.param_grads() {
            gradients[slot] = g;
        }
        Ok(SentenceGradients {
            loss,
            gradients,
            min_relu_input,
        })
    }

    /// Decoded 1-best tag indices plus the per-token distributions.
    pub fn tag(&self, input: &EncoderInput, adj: &AdjacencyMatrix) -> Result<(Vec<usize>, Matrix)> {
        Ok(decode(&self.logits(input, adj)?))
    }

    /// Per token, every tag whose probability is at least
    /// `beam_ratio * p_max`, as (tag index, log-probability) sorted by
    /// descending probability. The 1-best tag is always included.
    pub fn predict_kbest(
        &self,
        input: &EncoderInput,
        adj: &AdjacencyMatrix,
        beam_ratio: f64,
    ) -> Result<BeamCandidates> {
        if !(beam_ratio > 0.0 && beam_ratio <= 1.0) {
            return Err(Error::Invalid(format!(
                "beam ratio {beam_ratio} outside (0, 1]"
            )));
        }
        let logits = self.logits(input, adj)?;
        let mut out = Vec::with_capacity(logits.rows());
        for i in 0..logits.rows() {
            out.push(kbest_row(logits.row(i), beam_ratio));
        }
        Ok(out)
    }
}

struct LayerIds {
    w: TapeId,
    b: TapeId,
    w_left: TapeId,
    w_right: TapeId,
    w_self: TapeId,
    ln_gain: TapeId,
    ln_bias: TapeId,
}

/// Constant 0/1 selector matrices for the three positional regions.
fn position_masks(n: usize) -> (Matrix, Matrix, Matrix) {
    let mut lower = Matrix::zeros(n, n);
    let mut upper = Matrix::zeros(n, n);
    let mut diag = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if j < i {
                lower.set(i, j, 1.0);
            } else if j > i {
                upper.set(i, j, 1.0);
            } else {
                diag.set(i, j, 1.0);
            }
        }
    }
    (lower, upper, diag)
}

/// Bilinear attention logits with the positional matrix chosen by the
/// sign of j-i, masked-softmaxed over each row's graph neighborhood.
fn append_attention(tape: &mut Tape, h: TapeId, adj_matrix: &Matrix, ids: &LayerIds) -> TapeId {
    let n = adj_matrix.rows();
    let (lower, upper, diag) = position_masks(n);
    let ht = tape.transpose(h);
    let hl = tape.matmul(h, ids.w_left);
    let s_left = tape.matmul(hl, ht);
    let hr = tape.matmul(h, ids.w_right);
    let s_right = tape.matmul(hr, ht);
    let hs = tape.matmul(h, ids.w_self);
    let s_self = tape.matmul(hs, ht);
    let s_left = tape.hadamard_const(s_left, lower);
    let s_right = tape.hadamard_const(s_right, upper);
    let s_self = tape.hadamard_const(s_self, diag);
    let partial = tape.add(s_left, s_right);
    let logits = tape.add(partial, s_self);
    tape.masked_softmax_rows(logits, adj_matrix.clone())
}

/// One layer: hᵢ' = ReLU(LN(Σⱼ cᵢⱼ (W hⱼ + b))) where c is either the
/// 0/1 adjacency (plain GCN) or the attention weights.
fn append_layer(
    tape: &mut Tape,
    h: TapeId,
    adj_matrix: &Matrix,
    ids: &LayerIds,
    attention: bool,
) -> TapeId {
    let wt = tape.transpose(ids.w);
    let linear = tape.matmul(h, wt);
    let linear = tape.add_row_vec(linear, ids.b);
    let weights = if attention {
        append_attention(tape, h, adj_matrix, ids)
    } else {
        tape.input(adj_matrix.clone())
    };
    let agg = tape.matmul(weights, linear);
    let normed = tape.layer_norm_rows(agg, ids.ln_gain, ids.ln_bias, LN_EPS);
    tape.relu(normed)
}

fn layer_ids_as_inputs(tape: &mut Tape, layer: &AgcnLayer) -> LayerIds {
    LayerIds {
        w: tape.input(layer.w.value.clone()),
        b: tape.input(layer.b.value.clone()),
        w_left: tape.input(layer.w_left.value.clone()),
        w_right: tape.input(layer.w_right.value.clone()),
        w_self: tape.input(layer.w_self.value.clone()),
        ln_gain: tape.input(layer.ln_gain.value.clone()),
        ln_bias: tape.input(layer.ln_bias.value.clone()),
    }
}

/// Attention weights P for one layer: P[i][j] is the masked softmax over
/// row i of the bilinear logits, zero wherever a_ij = 0.
pub fn attention_scores(h: &Matrix, adj: &AdjacencyMatrix, layer: &AgcnLayer) -> Matrix {
    assert_eq!(h.rows(), adj.n(), "hidden state rows must match the graph");
    let mut tape = Tape::new();
    let hid = tape.input(h.clone());
    let ids = layer_ids_as_inputs(&mut tape, layer);
    let p = append_attention(&mut tape, hid, &adj.to_matrix(), &ids);
    tape.value(p).clone()
}

/// A single layer's output under either weighting scheme.
pub fn layer_forward(h: &Matrix, adj: &AdjacencyMatrix, layer: &AgcnLayer, attention: bool) -> Matrix {
    assert_eq!(h.rows(), adj.n(), "hidden state rows must match the graph");
    let mut tape = Tape::new();
    let hid = tape.input(h.clone());
    let ids = layer_ids_as_inputs(&mut tape, layer);
    let out = append_layer(&mut tape, hid, &adj.to_matrix(), &ids, attention);
    tape.value(out).clone()
}

/// A single layer's output with an explicit aggregation-weight matrix in
/// place of the adjacency/attention weights.
pub fn layer_forward_with_weights(h: &Matrix, weights: &Matrix, layer: &AgcnLayer) -> Matrix {
    assert_eq!(h.rows(), weights.rows());
    let mut tape = Tape::new();
    let hid = tape.input(h.clone());
    let ids = layer_ids_as_inputs(&mut tape, layer);
    let wt = tape.transpose(ids.w);
    let linear = tape.matmul(hid, wt);
    let linear = tape.add_row_vec(linear, ids.b);
    let wid = tape.input(weights.clone());
    let agg = tape.matmul(wid, linear);
    let normed = tape.layer_norm_rows(agg, ids.ln_gain, ids.ln_bias, LN_EPS);
    let out = tape.relu(normed);
    tape.value(out).clone()
}

/// Per-row softmax decode: returns (argmax indices with ties broken by
/// the lowest index, probability rows).
pub fn decode(logits: &Matrix) -> (Vec<usize>, Matrix) {
    let mut tags = Vec::with_capacity(logits.rows());
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let p = crate::tensor::softmax_row(row);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        tags.push(best);
        probs.row_mut(i).copy_from_slice(&p);
    }
    (tags, probs)
}

/// Beam cut over one logit row in log space: keeps tags with
/// log p >= log p_max + ln(beam_ratio), sorted by descending
/// probability, ties by index.
fn kbest_row(logits: &[f64], beam_ratio: f64) -> Vec<(usize, f64)> {
    let lse = crate::tensor::log_sum_exp(logits);
    let log_probs: Vec<f64> = logits.iter().map(|v| v - lse).collect();
    let max_lp = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = max_lp + beam_ratio.ln();
    let mut kept: Vec<(usize, f64)> = log_probs
        .into_iter()
        .enumerate()
        .filter(|(_, lp)| *lp >= cutoff)
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    kept
}

/// Tags a batch of sentences (in parallel when the `parallel` feature is
/// on); output order equals input order.
pub fn tag_sentences(
    model: &TaggerModel,
    sentences: &[Sentence],
    graphs: &[AdjacencyMatrix],
    embeddings: Option<&EmbeddingTable>,
) -> Result<Vec<Vec<usize>>> {
    assert_eq!(sentences.len(), graphs.len());
    let jobs: Vec<usize> = (0..sentences.len()).collect();
    let results = par::map(&jobs, |&i| {
        let input = encoder_input(model, &sentences[i], embeddings, i)?;
        let (tags, _) = model.tag(&input_ref(&input), &graphs[i])?;
        Ok(tags)
    });
    results.into_iter().collect()
}

/// Beam candidates for a batch of sentences; see
/// [`TaggerModel::predict_kbest`].
pub fn kbest_sentences(
    model: &TaggerModel,
    sentences: &[Sentence],
    graphs: &[AdjacencyMatrix],
    embeddings: Option<&EmbeddingTable>,
    beam_ratio: f64,
) -> Result<Vec<BeamCandidates>> {
    assert_eq!(sentences.len(), graphs.len());
    let jobs: Vec<usize> = (0..sentences.len()).collect();
    let results = par::map(&jobs, |&i| {
        let input = encoder_input(model, &sentences[i], embeddings, i)?;
        model.predict_kbest(&input_ref(&input), &graphs[i], beam_ratio)
    });
    results.into_iter().collect()
}

/// Owned encoder input resolved for sentence `i` of a batch.
pub(crate) enum OwnedInput<'a> {
    Tokens(&'a Sentence),
    Block(&'a Matrix),
}

pub(crate) fn encoder_input<'a>(
    model: &TaggerModel,
    sentence: &'a Sentence,
    embeddings: Option<&'a EmbeddingTable>,
    index: usize,
) -> Result<OwnedInput<'a>> {
    match &model.encoder {
        Encoder::Lookup { .. } => Ok(OwnedInput::Tokens(sentence)),
        Encoder::Precomputed { .. } => {
            let table = embeddings.ok_or_else(|| {
                Error::Invalid(
                    "model uses precomputed embeddings: provide an embedding file".into(),
                )
            })?;
            if index >= table.len() {
                return Err(Error::Shape(format!(
                    "embedding table has {} blocks, sentence {index} requested",
                    table.len()
                )));
            }
            Ok(OwnedInput::Block(table.block(index)))
        }
    }
}

pub(crate) fn input_ref<'a>(input: &'a OwnedInput<'a>) -> EncoderInput<'a> {
    match input {
        OwnedInput::Tokens(s) => EncoderInput::Tokens(s),
        OwnedInput::Block(b) => EncoderInput::Block(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TagSet;

    fn simple_tagset(n: usize) -> TagSet {
        let mut tags: Vec<String> = (0..n - 1).map(|i| format!("T{i}")).collect();
        tags.push(crate::corpus::OTHER_TAG.to_string());
        TagSet::from_ordered(tags).unwrap()
    }

    fn zero_attention_layer(dim: usize) -> AgcnLayer {
        AgcnLayer::zeros(dim)
    }

    #[test]
    fn attention_uniform_when_positional_matrices_vanish() {
        // all-zero W_pos: every unmasked logit is 0, so P[i][j] = a_ij/deg(i)
        let layer = zero_attention_layer(3);
        let h = Matrix::from_rows(&[
            vec![0.3, -1.0, 2.0],
            vec![1.0, 1.0, 1.0],
            vec![-0.5, 0.0, 0.25],
        ]);
        let mut adj = AdjacencyMatrix::identity(3);
        adj.connect(0, 1);
        let p = attention_scores(&h, &adj, &layer);
        for i in 0..3 {
            let deg = adj.degree(i) as f64;
            for j in 0..3 {
                let expect = if adj.get(i, j) { 1.0 / deg } else { 0.0 };
                assert_eq!(p.get(i, j), expect, "P[{i}][{j}]");
            }
        }
    }

    #[test]
    fn attention_single_token() {
        let layer = zero_attention_layer(2);
        let h = Matrix::row_vector(vec![1.0, -1.0]);
        let adj = AdjacencyMatrix::identity(1);
        let p = attention_scores(&h, &adj, &layer);
        assert_eq!(p.get(0, 0), 1.0);
    }

    #[test]
    fn attention_hand_computed_bilinear() {
        // n=2, full graph, h0=h1=[1,0], W_self=diag(ln2, 0), others zero:
        // row 0 logits are (self)=ln2, (right)=0 => P[0] = [2/3, 1/3].
        let mut layer = zero_attention_layer(2);
        layer.w_self.value.set(0, 0, 2.0_f64.ln());
        let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let adj = AdjacencyMatrix::full(2);
        let p = attention_scores(&h, &adj, &layer);
        assert!((p.get(0, 0) - 2.0 / 3.0).abs() <= 1e-12);
        assert!((p.get(0, 1) - 1.0 / 3.0).abs() <= 1e-12);
        // row 1: self=ln2 again by symmetry of the inputs
        assert!((p.get(1, 1) - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn attention_rows_are_distributions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(1..=6);
            let dim = 4;
            let mut h = Matrix::zeros(n, dim);
            for v in h.data_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let mut layer = AgcnLayer::zeros(dim);
            for m in [
                &mut layer.w_left.value,
                &mut layer.w_right.value,
                &mut layer.w_self.value,
            ] {
                for v in m.data_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let mut adj = AdjacencyMatrix::identity(n);
            for i in 0..n {
                for j in 0..i {
                    if rng.gen_bool(0.4) {
                        adj.connect(i, j);
                    }
                }
            }
            let p = attention_scores(&h, &adj, &layer);
            for i in 0..n {
                let sum: f64 = (0..n).map(|j| p.get(i, j)).sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                for j in 0..n {
                    if adj.get(i, j) {
                        assert!(p.get(i, j) > 0.0 && p.get(i, j) <= 1.0);
                    } else {
                        assert_eq!(p.get(i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn layer_forward_single_token_hand_value() {
        // W=I, b=0, gain=1, bias=0, h=[1,-1]: LN gives ~[1,-1], ReLU clips
        // the negative half.
        let mut layer = AgcnLayer::zeros(2);
        layer.w.value = Matrix::identity(2);
        let h = Matrix::row_vector(vec![1.0, -1.0]);
        let adj = AdjacencyMatrix::identity(1);
        for attention in [false, true] {
            let out = layer_forward(&h, &adj, &layer, attention);
            assert!((out.get(0, 0) - 1.0).abs() <= 1e-4);
            assert_eq!(out.get(0, 1), 0.0);
        }
    }

    #[test]
    fn attention_path_equals_degree_scaled_plain_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 4;
        let dim = 3;
        let mut h = Matrix::zeros(n, dim);
        for v in h.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut layer = AgcnLayer::zeros(dim);
        for v in layer.w.value.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut adj = AdjacencyMatrix::identity(n);
        adj.connect(0, 1);
        adj.connect(1, 2);
        adj.connect(2, 3);
        // zero positional matrices: attention is exactly a_ij/deg(i)
        let attn = layer_forward(&h, &adj, &layer, true);
        let mut scaled = adj.to_matrix();
        for i in 0..n {
            let deg = adj.degree(i) as f64;
            for j in 0..n {
                scaled.set(i, j, scaled.get(i, j) / deg);
            }
        }
        let plain = layer_forward_with_weights(&h, &scaled, &layer);
        assert_eq!(attn, plain);
    }

    #[test]
    fn diagonal_adjacency_isolates_tokens() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let dim = 3;
        let mut layer = AgcnLayer::zeros(dim);
        for v in layer.w.value.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut h = Matrix::zeros(3, dim);
        for v in h.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let adj = AdjacencyMatrix::identity(3);
        let out = layer_forward(&h, &adj, &layer, false);
        // permuting the other rows must not change row 0
        let swapped = Matrix::from_rows(&[h.row(0).to_vec(), h.row(2).to_vec(), h.row(1).to_vec()]);
        let out2 = layer_forward(&swapped, &adj, &layer, false);
        assert_eq!(out.row(0), out2.row(0));
    }

    #[test]
    fn decode_examples() {
        let (tags, probs) = decode(&Matrix::from_rows(&[vec![0.0, 10.0, 0.0]]));
        assert_eq!(tags, vec![1]);
        assert!((probs.get(0, 1) - 0.9999092083).abs() <= 1e-6);

        // all-equal row: tie breaks to index 0, uniform probabilities
        let (tags, probs) = decode(&Matrix::from_rows(&[vec![2.0, 2.0, 2.0, 2.0]]));
        assert_eq!(tags, vec![0]);
        for j in 0..4 {
            assert!((probs.get(0, j) - 0.25).abs() <= 1e-12);
        }
    }

    #[test]
    fn decode_rows_normalize() {
        let (_, probs) = decode(&Matrix::from_rows(&[
            vec![5.0, -3.0, 0.0],
            vec![-100.0, 100.0, 0.0],
        ]));
        for i in 0..2 {
            let sum: f64 = probs.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn decode_invariant_to_positive_scaling() {
        let row = vec![0.2, 1.4, -0.7, 1.4];
        let (tags, _) = decode(&Matrix::from_rows(std::slice::from_ref(&row)));
        let scaled: Vec<f64> = row.iter().map(|v| v * 37.5).collect();
        let (tags2, _) = decode(&Matrix::from_rows(&[scaled]));
        assert_eq!(tags, tags2);
    }

    #[test]
    fn kbest_beam_semantics() {
        // probabilities [0.6, 0.3, 0.1]
        let logits: Vec<f64> = [0.6_f64, 0.3, 0.1].iter().map(|p| p.ln()).collect();
        let kept = kbest_row(&logits, 0.4);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].0, 0);
        assert_eq!(kept[1].0, 1);

        // tightest beam keeps exactly the argmax
        let kept = kbest_row(&logits, 1.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].0, 0);

        // near-zero ratio keeps every tag
        let kept = kbest_row(&logits, 1e-300);
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn model_forward_baseline_is_projection() {
        // L=0: logits are W_d h0 per token.
        let tagset = simple_tagset(3);
        let model = TaggerModel::new(
            EncoderConfig::Lookup {
                vocabulary: vec!["a".into(), "b".into()],
                dim: 4,
            },
            0,
            tagset,
            ModelFlags {
                graph: GraphMode::None,
                ..ModelFlags::default()
            },
            0.0,
            42,
        )
        .unwrap();
        let s = Sentence::from_words(&["a", "b"]);
        let adj = AdjacencyMatrix::identity(2);
        let logits = model.logits(&EncoderInput::Tokens(&s), &adj).unwrap();
        let Encoder::Lookup { vocab, embedding } = &model.encoder else {
            unreachable!()
        };
        let mut h0 = Matrix::zeros(2, 4);
        for (i, t) in s.tokens().iter().enumerate() {
            h0.row_mut(i)
                .copy_from_slice(embedding.value.row(vocab.index_of(t)));
        }
        let expect = crate::tensor::matmul(&h0, &model.w_d.value.transpose());
        assert_eq!(logits, expect);
    }

    #[test]
    fn model_forward_deterministic_in_eval_mode() {
        let model = TaggerModel::new(
            EncoderConfig::Lookup {
                vocabulary: vec!["a".into(), "b".into(), "c".into()],
                dim: 8,
            },
            2,
            simple_tagset(4),
            ModelFlags::default(),
            0.2,
            7,
        )
        .unwrap();
        let s = Sentence::from_words(&["a", "c", "b"]);
        let adj = AdjacencyMatrix::full(3);
        let l1 = model.logits(&EncoderInput::Tokens(&s), &adj).unwrap();
        let l2 = model.logits(&EncoderInput::Tokens(&s), &adj).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn model_forward_zero_projection_gives_zero_logits() {
        let mut model = TaggerModel::new(
            EncoderConfig::Lookup {
                vocabulary: vec!["a".into()],
                dim: 4,
            },
            1,
            simple_tagset(3),
            ModelFlags::default(),
            0.0,
            1,
        )
        .unwrap();
        model.w_d.value.fill_zero();
        let s = Sentence::from_words(&["a"]);
        let adj = AdjacencyMatrix::identity(1);
        let logits = model.logits(&EncoderInput::Tokens(&s), &adj).unwrap();
        assert_eq!(logits, Matrix::zeros(1, 3));
    }

    #[test]
    fn message_passing_is_local() {
        // With L=2 and a path graph, changing a token more than two hops
        // away leaves a token's logits unchanged.
        let vocabulary: Vec<String> = ["a", "b", "c", "d", "e", "f", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let model = TaggerModel::new(
            EncoderConfig::Lookup {
                vocabulary,
                dim: 6,
            },
            2,
            simple_tagset(4),
            ModelFlags::default(),
            0.0,
            13,
        )
        .unwrap();
        // path graph over 6 tokens: 0-1-2-3-4-5
        let mut adj = AdjacencyMatrix::identity(6);
        for i in 0..5 {
            adj.connect(i, i + 1);
        }
        let s1 = Sentence::from_words(&["a", "b", "c", "d", "e", "f"]);
        let s2 = Sentence::from_words(&["a", "b", "c", "d", "e", "x"]); // token 5 swapped
        let l1 = model.logits(&EncoderInput::Tokens(&s1), &adj).unwrap();
        let l2 = model.logits(&EncoderInput::Tokens(&s2), &adj).unwrap();
        // token 5 is 3 hops from tokens 0..=2: rows 0..=2 identical
        for i in 0..3 {
            assert_eq!(l1.row(i), l2.row(i), "row {i} should be unaffected");
        }
        // ...but its neighborhood does change
        assert_ne!(l1.row(5), l2.row(5));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = TaggerModel::new(
            EncoderConfig::Precomputed { dim: 4 },
            1,
            simple_tagset(3),
            ModelFlags::default(),
            0.0,
            1,
        )
        .unwrap();
        let block = Matrix::zeros(2, 5); // wrong width
        let adj = AdjacencyMatrix::identity(2);
        assert!(model.logits(&EncoderInput::Block(&block), &adj).is_err());
    }
}
