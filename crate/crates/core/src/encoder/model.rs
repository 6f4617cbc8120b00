use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EncoderConfig, Head};
use super::vocab::{make_reference, TokenSeq, Vocab, CLS, EOS, PAD};
use super::EncoderError;
use crate::numerics::{dot, norm, NumericsError, Tape, Tensor, Var};

/// What a parameter tensor is, for initialization and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight,
    Bias,
    NormGain,
    NormBias,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Embedding | ParamKind::Weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

const BLOCK_PARAMS: usize = 16;

/// Names, shapes and kinds of every parameter in storage order.
pub fn param_specs(config: &EncoderConfig, vocab_len: usize) -> Vec<ParamSpec> {
    let d = config.model_dim;
    let f = config.ffn_dim;
    let spec = |name: String, shape: Vec<usize>, kind| ParamSpec { name, shape, kind };
    let mut specs = vec![
        spec(
            "token_embedding".into(),
            vec![vocab_len, d],
            ParamKind::Embedding,
        ),
        spec(
            "position_embedding".into(),
            vec![config.max_seq_len, d],
            ParamKind::Embedding,
        ),
    ];
    for l in 0..config.num_layers {
        let p = |s: &str| format!("blocks.{l}.{s}");
        specs.extend([
            spec(p("attn.query.weight"), vec![d, d], ParamKind::Weight),
            spec(p("attn.query.bias"), vec![d], ParamKind::Bias),
            spec(p("attn.key.weight"), vec![d, d], ParamKind::Weight),
            spec(p("attn.key.bias"), vec![d], ParamKind::Bias),
            spec(p("attn.value.weight"), vec![d, d], ParamKind::Weight),
            spec(p("attn.value.bias"), vec![d], ParamKind::Bias),
            spec(p("attn.out.weight"), vec![d, d], ParamKind::Weight),
            spec(p("attn.out.bias"), vec![d], ParamKind::Bias),
            spec(p("attn_norm.gain"), vec![d], ParamKind::NormGain),
            spec(p("attn_norm.bias"), vec![d], ParamKind::NormBias),
            spec(p("ffn.in.weight"), vec![d, f], ParamKind::Weight),
            spec(p("ffn.in.bias"), vec![f], ParamKind::Bias),
            spec(p("ffn.out.weight"), vec![f, d], ParamKind::Weight),
            spec(p("ffn.out.bias"), vec![d], ParamKind::Bias),
            spec(p("ffn_norm.gain"), vec![d], ParamKind::NormGain),
            spec(p("ffn_norm.bias"), vec![d], ParamKind::NormBias),
        ]);
    }
    if config.projection {
        specs.push(spec(
            "projection.weight".into(),
            vec![d, d],
            ParamKind::Weight,
        ));
        specs.push(spec("projection.bias".into(), vec![d], ParamKind::Bias));
    }
    specs
}

/// Token-level activations at one layer: index 0 is the embedding output,
/// index L the last block output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation {
    pub layer_index: usize,
    /// `T × d` representations.
    pub repr: Tensor,
    /// Token ids whose encoding the shifted model subtracts.
    pub reference_ids: Vec<u32>,
}

impl LayerActivation {
    /// Activation paired with the canonical `[CLS, PAD…, EOS]` reference of
    /// the same length.
    pub fn new(layer_index: usize, repr: Tensor) -> Self {
        let t = repr.shape().first().copied().unwrap_or(0);
        let mut reference_ids = vec![PAD; t];
        if t >= 1 {
            reference_ids[0] = CLS;
        }
        if t >= 2 {
            reference_ids[t - 1] = EOS;
        }
        Self {
            layer_index,
            repr,
            reference_ids,
        }
    }
}

/// Tape handles for every parameter of one model.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Transformer sentence encoder shared by both sides of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseEncoder {
    config: EncoderConfig,
    vocab: Vocab,
    params: Vec<Tensor>,
}

impl SiameseEncoder {
    /// Fresh model with weights drawn from `config.seed`.
    pub fn new(config: EncoderConfig, vocab: Vocab) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = param_specs(&config, vocab.len())
            .iter()
            .map(|spec| init_param(spec, &mut rng))
            .collect();
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    /// Model from explicit weights in [`param_specs`] order.
    pub fn from_params(
        config: EncoderConfig,
        vocab: Vocab,
        params: Vec<Tensor>,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        let specs = param_specs(&config, vocab.len());
        if specs.len() != params.len() {
            return Err(EncoderError::Config(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, p) in specs.iter().zip(&params) {
            if spec.shape != p.shape() {
                return Err(EncoderError::Config(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    p.shape(),
                    spec.shape
                )));
            }
            if !p.is_finite() {
                return Err(EncoderError::Config(format!("{} is not finite", spec.name)));
            }
        }
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        param_specs(&self.config, self.vocab.len())
    }

    /// Same weights under a different shift mode or head.
    pub fn with_config(&self, config: EncoderConfig) -> Result<Self, EncoderError> {
        Self::from_params(config, self.vocab.clone(), self.params.clone())
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        self.vocab.tokenize(text)
    }

    /// Puts every parameter on the tape, trainable or as constants.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|p| tape.param(p, trainable))
                .collect(),
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), EncoderError> {
        if ids.len() > self.config.max_seq_len {
            return Err(EncoderError::SequenceTooLong {
                len: ids.len(),
                max_seq_len: self.config.max_seq_len,
            });
        }
        if ids.is_empty() {
            return Err(EncoderError::Numerics(NumericsError::Empty {
                op: "encode",
            }));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.vocab.len()) {
            return Err(EncoderError::UnknownTokenId(id));
        }
        Ok(())
    }

    /// Token plus position embeddings, `T × d`.
    pub fn embed_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundParams,
        ids: &[u32],
    ) -> Result<Var, EncoderError> {
        self.check_ids(ids)?;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = tape.gather_rows(bound.vars[0], &idx)?;
        let pos = tape.gather_rows(bound.vars[1], &positions)?;
        Ok(tape.add(tok, pos)?)
    }

    /// One post-norm transformer block (0-based `layer`).
    pub fn block_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundParams,
        layer: usize,
        x: Var,
    ) -> Result<Var, EncoderError> {
        let w = &bound.vars[2 + layer * BLOCK_PARAMS..2 + (layer + 1) * BLOCK_PARAMS];
        let linear = |tape: &mut Tape<'_>, x: Var, wi: usize| -> Result<Var, NumericsError> {
            let y = tape.matmul(x, w[wi])?;
            tape.add_bias(y, w[wi + 1])
        };
        let q = linear(tape, x, 0)?;
        let k = linear(tape, x, 2)?;
        let v = linear(tape, x, 4)?;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let (s, e) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, s, e)?;
            let kh = tape.slice_cols(k, s, e)?;
            let vh = tape.slice_cols(v, s, e)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let attn = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let attn = linear(tape, attn, 6)?;
        let x = tape.add(x, attn)?;
        let x = tape.layer_norm(x, w[8], w[9])?;
        let hidden = linear(tape, x, 10)?;
        let hidden = tape.gelu(hidden);
        let ffn = linear(tape, hidden, 12)?;
        let x = tape.add(x, ffn)?;
        Ok(tape.layer_norm(x, w[14], w[15])?)
    }

    /// Mean pooling and the optional projection: the unshifted embedding.
    pub fn pool_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundParams,
        h: Var,
    ) -> Result<Var, EncoderError> {
        let pooled = tape.mean_rows(h)?;
        if !self.config.projection {
            return Ok(pooled);
        }
        let n = bound.vars.len();
        let row = tape.reshape(pooled, &[1, self.config.model_dim])?;
        let y = tape.matmul(row, bound.vars[n - 2])?;
        let y = tape.add_bias(y, bound.vars[n - 1])?;
        Ok(tape.reshape(y, &[self.config.model_dim])?)
    }

    /// Runs blocks `from..L` then pooling on layer-`from` representations.
    pub fn tail_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundParams,
        from: usize,
        repr: Var,
    ) -> Result<Var, EncoderError> {
        let mut h = repr;
        for layer in from..self.config.num_layers {
            h = self.block_on_tape(tape, bound, layer, h)?;
        }
        self.pool_on_tape(tape, bound, h)
    }

    /// Unshifted embedding `e'(ids)` recorded on `tape`; with `taps` the
    /// per-layer activations are collected as well.
    pub fn raw_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundParams,
        ids: &[u32],
        mut taps: Option<&mut Vec<Var>>,
    ) -> Result<Var, EncoderError> {
        let mut h = self.embed_on_tape(tape, bound, ids)?;
        if let Some(t) = taps.as_deref_mut() {
            t.push(h);
        }
        for layer in 0..self.config.num_layers {
            h = self.block_on_tape(tape, bound, layer, h)?;
            if let Some(t) = taps.as_deref_mut() {
                t.push(h);
            }
        }
        self.pool_on_tape(tape, bound, h)
    }

    /// Model embedding `e(ids)` on `tape`, shifted by the reference
    /// encoding when the model is shifted.
    pub fn embedding_on_tape(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundParams,
        tokens: &TokenSeq,
    ) -> Result<Var, EncoderError> {
        let e = self.raw_on_tape(tape, bound, &tokens.ids, None)?;
        if !self.config.is_shifted() {
            return Ok(e);
        }
        let r = make_reference(tokens);
        let er = self.raw_on_tape(tape, bound, &r.ids, None)?;
        Ok(tape.sub(e, er)?)
    }

    /// Unshifted embedding of raw ids.
    pub fn raw_embedding(&self, ids: &[u32]) -> Result<Tensor, EncoderError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let e = self.raw_on_tape(&mut tape, &bound, ids, None)?;
        Ok(tape.value(e).clone())
    }

    /// Sentence embedding and the `L + 1` layer activations.
    pub fn encode(
        &self,
        tokens: &TokenSeq,
    ) -> Result<(Tensor, Vec<LayerActivation>), EncoderError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let mut taps = Vec::with_capacity(self.config.num_layers + 1);
        let e = self.raw_on_tape(&mut tape, &bound, &tokens.ids, Some(&mut taps))?;
        let reference_ids = make_reference(tokens).ids;
        let mut emb = tape.value(e).clone();
        if self.config.is_shifted() {
            emb = emb.sub(&self.raw_embedding(&reference_ids)?)?;
        }
        let acts = taps
            .into_iter()
            .enumerate()
            .map(|(layer_index, v)| LayerActivation {
                layer_index,
                repr: tape.value(v).clone(),
                reference_ids: reference_ids.clone(),
            })
            .collect();
        Ok((emb, acts))
    }

    pub fn embedding(&self, tokens: &TokenSeq) -> Result<Tensor, EncoderError> {
        Ok(self.encode(tokens)?.0)
    }

    /// Activations of every layer without the embedding.
    pub fn activations(&self, tokens: &TokenSeq) -> Result<Vec<LayerActivation>, EncoderError> {
        Ok(self.encode(tokens)?.1)
    }

    /// Constant subtracted from tail outputs: `e'(reference)` when shifted.
    pub fn shift_for(&self, reference_ids: &[u32]) -> Result<Option<Tensor>, EncoderError> {
        if self.config.is_shifted() {
            Ok(Some(self.raw_embedding(reference_ids)?))
        } else {
            Ok(None)
        }
    }

    pub fn check_activation(&self, layer_index: usize, repr: &Tensor) -> Result<(), EncoderError> {
        if layer_index > self.config.num_layers {
            return Err(EncoderError::LayerOutOfRange {
                layer: layer_index,
                num_layers: self.config.num_layers,
            });
        }
        let ok = matches!(repr.dims2(), Some((t, d))
            if d == self.config.model_dim && t >= 1 && t <= self.config.max_seq_len);
        if !ok {
            return Err(EncoderError::ActivationShape {
                expected_dim: self.config.model_dim,
                shape: repr.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Sentence embedding from a layer activation: the remaining blocks,
    /// pooling, projection and shift.
    pub fn encode_tail(&self, activation: &LayerActivation) -> Result<Tensor, EncoderError> {
        self.check_activation(activation.layer_index, &activation.repr)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(activation.repr.clone());
        let e = self.tail_on_tape(&mut tape, &bound, activation.layer_index, x)?;
        let mut emb = tape.value(e).clone();
        if let Some(shift) = self.shift_for(&activation.reference_ids)? {
            emb = emb.sub(&shift)?;
        }
        Ok(emb)
    }

    /// Head applied to two embeddings.
    pub fn score(&self, ea: &Tensor, eb: &Tensor) -> f64 {
        match self.config.head {
            Head::Dot => dot(ea.data(), eb.data()),
            Head::Cosine => cosine(ea.data(), eb.data()),
        }
    }

    pub fn similarity(&self, a: &TokenSeq, b: &TokenSeq) -> Result<f64, EncoderError> {
        let ea = self.embedding(a)?;
        let eb = self.embedding(b)?;
        Ok(self.score(&ea, &eb))
    }

    pub fn similarity_text(&self, a: &str, b: &str) -> Result<f64, EncoderError> {
        self.similarity(&self.tokenize(a), &self.tokenize(b))
    }
}

/// Cosine similarity, defined as 0 when either vector is exactly zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

fn init_param(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = spec.shape.iter().product();
    let std = match spec.kind {
        ParamKind::Embedding if spec.name == "position_embedding" => 0.1,
        ParamKind::Embedding => 0.5,
        ParamKind::Weight => 1.0 / (spec.shape[0] as f64).sqrt(),
        ParamKind::NormGain => {
            return Tensor::new(spec.shape.clone(), vec![1.0; n]).expect("shape");
        }
        ParamKind::Bias | ParamKind::NormBias => return Tensor::zeros(&spec.shape),
    };
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(spec.shape.clone(), data).expect("shape")
}
