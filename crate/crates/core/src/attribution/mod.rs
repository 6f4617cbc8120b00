//! Integrated-Jacobian attributions for pairs of inputs.
//!
//! For inputs `a`, `b` tapped at layer `ℓ` with reference activations `r_a`,
//! `r_b`, the integrated Jacobian of each side is the right-endpoint Riemann
//! average of the tail Jacobian along the straight path from the reference
//! to the input (nodes `α_n = n/N`, `n = 1..N`). The feature-pair matrix
//!
//! ```text
//! A_ij = (a − r_a)_i · (J_aᵀ J_b)_ij · (b − r_b)_j
//! ```
//!
//! sums to `f(a,b) − f(a,r_b) − f(b,r_a) + f(r_a,r_b)` as `N → ∞`. On a
//! shifted model the three reference terms vanish and `ΣA → f(a,b)`.
//!
//! Which map is differentiated depends on the head:
//! - dot head: the embedding itself;
//! - cosine head, unshifted: the L2-normalized embedding;
//! - cosine head, shifted: the unnormalized shifted embedding, with `A`
//!   scaled by `1 / (‖e(a)‖·‖e(b)‖)`. The normalized shifted embedding has
//!   no limit at the reference, so differentiating through the
//!   normalization would integrate to `(ê(a) − u)·(ê(b) − v)` for some unit
//!   vectors `u`, `v` rather than to the cosine.

mod export;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{heatmap_svg, write_matrix_csv, AttributionRecord};

use crate::encoder::{make_reference, word_units, EncoderError, Head, SiameseEncoder, TokenSeq};
use crate::numerics::{jacobian_on_tape, norm, NumericsError, Tape, Tensor};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("exact mode needs a model with shift_mode = reference_shift")]
    ExactNeedsShift,
    #[error("steps must be at least 1")]
    ZeroSteps,
    #[error("non-finite Jacobian at alpha = {alpha} (output {row}, input {col})")]
    NonFinite { alpha: f64, row: usize, col: usize },
    #[error("{what}: {detail}")]
    Shape { what: &'static str, detail: String },
    #[error("invalid word spans: {0}")]
    Spans(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Shifted model; reference terms vanish.
    Exact,
    /// Unmodified model; reference terms are measured and reported.
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    Feature,
    Token,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionRequest {
    pub layer: usize,
    pub steps: usize,
    pub mode: Mode,
    pub reduce: Reduce,
}

impl AttributionRequest {
    pub const DEFAULT_STEPS: usize = 100;

    /// Defaults for `model`: output of the second-to-last block, 100 steps,
    /// exact mode iff the model is shifted, token-level matrix.
    pub fn for_model(model: &SiameseEncoder) -> Self {
        let config = model.config();
        Self {
            layer: config.num_layers.saturating_sub(1),
            steps: Self::DEFAULT_STEPS,
            mode: if config.is_shifted() {
                Mode::Exact
            } else {
                Mode::Approximate
            },
            reduce: Reduce::Token,
        }
    }

    pub fn validate(&self, model: &SiameseEncoder) -> Result<(), AttributionError> {
        if self.steps == 0 {
            return Err(AttributionError::ZeroSteps);
        }
        if self.mode == Mode::Exact && !model.config().is_shifted() {
            return Err(AttributionError::ExactNeedsShift);
        }
        let num_layers = model.config().num_layers;
        if self.layer > num_layers {
            return Err(EncoderError::LayerOutOfRange {
                layer: self.layer,
                num_layers,
            }
            .into());
        }
        Ok(())
    }
}

/// Path-averaged Jacobian of one input, `D × (T·d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedJacobian {
    pub values: Tensor,
    pub layer_index: usize,
    pub steps: usize,
}

/// Points `r + α_n (x − r)` for `α_n = n/N`, `n = 1..=N`.
pub fn interpolation_path(
    x: &Tensor,
    r: &Tensor,
    steps: usize,
) -> Result<Vec<Tensor>, AttributionError> {
    if steps == 0 {
        return Err(AttributionError::ZeroSteps);
    }
    (1..=steps)
        .map(|n| Ok(r.lerp(x, n as f64 / steps as f64)?))
        .collect()
}

/// The map whose Jacobian is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Embedding,
    Normalized,
}

fn target_for(model: &SiameseEncoder) -> Target {
    let config = model.config();
    if config.head == Head::Cosine && !config.is_shifted() {
        Target::Normalized
    } else {
        Target::Embedding
    }
}

fn jacobian_at(
    model: &SiameseEncoder,
    layer: usize,
    point: &Tensor,
    target: Target,
    alpha: f64,
) -> Result<Tensor, AttributionError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let x = tape.leaf(point.clone());
    let mut e = model.tail_on_tape(&mut tape, &bound, layer, x)?;
    if target == Target::Normalized {
        e = match tape.l2_normalize(e) {
            Ok(v) => v,
            Err(NumericsError::ZeroNorm) => {
                return Err(AttributionError::NonFinite {
                    alpha,
                    row: 0,
                    col: 0,
                })
            }
            Err(err) => return Err(err.into()),
        };
    }
    jacobian_on_tape(&mut tape, e, x).map_err(|err| match err {
        NumericsError::NonFinite { row, col } => AttributionError::NonFinite { alpha, row, col },
        other => other.into(),
    })
}

/// Integrated Jacobians for several step counts at once; nodes shared
/// between step counts are evaluated once. Each sum runs in increasing `α`.
fn integrated_jacobians(
    model: &SiameseEncoder,
    x: &Tensor,
    r: &Tensor,
    layer: usize,
    steps: &[usize],
    target: Target,
) -> Result<Vec<Tensor>, AttributionError> {
    if x.shape() != r.shape() {
        return Err(AttributionError::Shape {
            what: "input and reference",
            detail: format!("{:?} vs {:?}", x.shape(), r.shape()),
        });
    }
    if steps.contains(&0) || steps.is_empty() {
        return Err(AttributionError::ZeroSteps);
    }
    let mut nodes: Vec<(usize, usize)> = Vec::new();
    for &n_steps in steps {
        for n in 1..=n_steps {
            let g = gcd(n, n_steps);
            nodes.push((n / g, n_steps / g));
        }
    }
    nodes.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)));
    nodes.dedup();

    let mut sums: Vec<Option<Tensor>> = vec![None; steps.len()];
    for &(num, den) in &nodes {
        let alpha = num as f64 / den as f64;
        let point = r.lerp(x, alpha)?;
        let jac = jacobian_at(model, layer, &point, target, alpha)?;
        for (k, &n_steps) in steps.iter().enumerate() {
            if n_steps % den == 0 {
                sums[k] = Some(match sums[k].take() {
                    None => jac.clone(),
                    Some(acc) => acc.add(&jac)?,
                });
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(steps)
        .map(|(s, &n)| s.expect("node 1/1 is on every grid").scale(1.0 / n as f64))
        .collect())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Layer-`layer` activations of `tokens` and of its PAD reference.
fn layer_pair(
    model: &SiameseEncoder,
    tokens: &TokenSeq,
    layer: usize,
) -> Result<(Tensor, Tensor), AttributionError> {
    let acts = model.activations(tokens)?;
    let x = acts
        .get(layer)
        .ok_or(EncoderError::LayerOutOfRange {
            layer,
            num_layers: model.config().num_layers,
        })?
        .repr
        .clone();
    let r = model.activations(&make_reference(tokens))?[layer]
        .repr
        .clone();
    Ok((x, r))
}

/// Integrated Jacobian of the tail embedding map for one tokenized input.
pub fn integrated_jacobian(
    model: &SiameseEncoder,
    tokens: &TokenSeq,
    layer: usize,
    steps: usize,
) -> Result<IntegratedJacobian, AttributionError> {
    let (x, r) = layer_pair(model, tokens, layer)?;
    integrated_jacobian_between(model, &x, &r, layer, steps)
}

/// Integrated Jacobian of the tail embedding map between explicit
/// layer-`layer` representations.
pub fn integrated_jacobian_between(
    model: &SiameseEncoder,
    x: &Tensor,
    r: &Tensor,
    layer: usize,
    steps: usize,
) -> Result<IntegratedJacobian, AttributionError> {
    model.check_activation(layer, x)?;
    let values = integrated_jacobians(model, x, r, layer, &[steps], Target::Embedding)?
        .pop()
        .expect("one step count");
    Ok(IntegratedJacobian {
        values,
        layer_index: layer,
        steps,
    })
}

fn scale_columns(jac: &Tensor, delta: &[f64]) -> Result<Tensor, AttributionError> {
    let (rows, cols) = jac.dims2().ok_or_else(|| AttributionError::Shape {
        what: "Jacobian",
        detail: format!("expected a matrix, got {:?}", jac.shape()),
    })?;
    if cols != delta.len() {
        return Err(AttributionError::Shape {
            what: "Jacobian and input difference",
            detail: format!("{cols} columns vs {} features", delta.len()),
        });
    }
    let mut out = jac.clone();
    for row in out.data_mut().chunks_mut(cols.max(1)).take(rows) {
        for (v, d) in row.iter_mut().zip(delta) {
            *v *= d;
        }
    }
    Ok(out)
}

/// Feature-pair matrix `A_ij = Δa_i (J_aᵀ J_b)_ij Δb_j`, formed as
/// `(J_a·diag(Δa))ᵀ (J_b·diag(Δb))`.
pub fn attribution_matrix(
    ja: &Tensor,
    jb: &Tensor,
    delta_a: &[f64],
    delta_b: &[f64],
) -> Result<Tensor, AttributionError> {
    if ja.dims2().map(|d| d.0) != jb.dims2().map(|d| d.0) {
        return Err(AttributionError::Shape {
            what: "Jacobian output dimensions",
            detail: format!("{:?} vs {:?}", ja.shape(), jb.shape()),
        });
    }
    let ua = scale_columns(ja, delta_a)?;
    let ub = scale_columns(jb, delta_b)?;
    Ok(ua.matmul_tn(&ub)?)
}

fn block_sum_columns(m: &Tensor, dim: usize) -> Result<Tensor, AttributionError> {
    let (rows, cols) = m.dims2().expect("matrix");
    if dim == 0 || cols % dim != 0 {
        return Err(AttributionError::Shape {
            what: "token blocks",
            detail: format!("{cols} features not divisible into blocks of {dim}"),
        });
    }
    let tokens = cols / dim;
    let mut out = vec![0.0; rows * tokens];
    for r in 0..rows {
        let row = &m.data()[r * cols..(r + 1) * cols];
        for t in 0..tokens {
            out[r * tokens + t] = row[t * dim..(t + 1) * dim].iter().sum();
        }
    }
    Ok(Tensor::new(vec![rows, tokens], out)?)
}

/// Token–token matrix: each cell is the sum over its `dim × dim` block.
pub fn reduce_to_tokens(a: &Tensor, dim: usize) -> Result<Tensor, AttributionError> {
    let (rows, cols) = a.dims2().ok_or_else(|| AttributionError::Shape {
        what: "feature-pair matrix",
        detail: format!("expected a matrix, got {:?}", a.shape()),
    })?;
    if dim == 0 || rows % dim != 0 || cols % dim != 0 {
        return Err(AttributionError::Shape {
            what: "token blocks",
            detail: format!("{rows}×{cols} not divisible into {dim}×{dim} blocks"),
        });
    }
    let (ta, tb) = (rows / dim, cols / dim);
    let mut out = vec![0.0; ta * tb];
    for s in 0..ta {
        for t in 0..tb {
            let mut acc = 0.0;
            for i in s * dim..(s + 1) * dim {
                acc += a.data()[i * cols + t * dim..i * cols + (t + 1) * dim]
                    .iter()
                    .sum::<f64>();
            }
            out[s * tb + t] = acc;
        }
    }
    Ok(Tensor::new(vec![ta, tb], out)?)
}

/// Token–token matrix straight from the Jacobians, choosing the cheaper of
/// materializing `A` then block-summing versus contracting the per-token
/// column sums of `J·diag(Δ)` over the output dimension.
fn token_matrix(
    ja: &Tensor,
    jb: &Tensor,
    delta_a: &[f64],
    delta_b: &[f64],
    dim: usize,
) -> Result<Tensor, AttributionError> {
    let out_dim = ja.dims2().map_or(0, |d| d.0);
    let (na, nb) = (delta_a.len(), delta_b.len());
    let (ta, tb) = (na / dim.max(1), nb / dim.max(1));
    let full_cost = na * out_dim * nb + na * nb;
    let factored_cost = out_dim * (na + nb) + ta * out_dim * tb;
    if factored_cost < full_cost {
        let ua = block_sum_columns(&scale_columns(ja, delta_a)?, dim)?;
        let ub = block_sum_columns(&scale_columns(jb, delta_b)?, dim)?;
        Ok(ua.matmul_tn(&ub)?)
    } else {
        reduce_to_tokens(&attribution_matrix(ja, jb, delta_a, delta_b)?, dim)
    }
}

/// Word-level views of a token–token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WordMatrices {
    /// Mean over each word block.
    pub mean: Tensor,
    /// Sum over each word block; conserves the total.
    pub sum: Tensor,
    pub units_a: Vec<(usize, usize)>,
    pub units_b: Vec<(usize, usize)>,
}

fn check_spans(len: usize, spans: &[(usize, usize)]) -> Result<(), AttributionError> {
    let mut prev_end = 0;
    for &(s, e) in spans {
        if s >= e || e > len {
            return Err(AttributionError::Spans(format!(
                "span ({s}, {e}) invalid for {len} tokens"
            )));
        }
        if s < prev_end {
            return Err(AttributionError::Spans(format!(
                "span ({s}, {e}) overlaps or precedes the previous span"
            )));
        }
        prev_end = e;
    }
    Ok(())
}

/// Collapses token rows/columns into word units; tokens outside every span
/// (CLS, EOS) stay as units of their own.
pub fn tokens_to_words(
    m: &Tensor,
    spans_a: &[(usize, usize)],
    spans_b: &[(usize, usize)],
) -> Result<WordMatrices, AttributionError> {
    let (rows, cols) = m.dims2().ok_or_else(|| AttributionError::Shape {
        what: "token matrix",
        detail: format!("expected a matrix, got {:?}", m.shape()),
    })?;
    check_spans(rows, spans_a)?;
    check_spans(cols, spans_b)?;
    let units_a = word_units(rows, spans_a);
    let units_b = word_units(cols, spans_b);
    let mut mean = Vec::with_capacity(units_a.len() * units_b.len());
    let mut sum = Vec::with_capacity(mean.capacity());
    for &(sa, ea) in &units_a {
        for &(sb, eb) in &units_b {
            let mut acc = 0.0;
            for i in sa..ea {
                acc += m.data()[i * cols + sb..i * cols + eb].iter().sum::<f64>();
            }
            sum.push(acc);
            mean.push(acc / ((ea - sa) * (eb - sb)) as f64);
        }
    }
    let shape = vec![units_a.len(), units_b.len()];
    Ok(WordMatrices {
        mean: Tensor::new(shape.clone(), mean)?,
        sum: Tensor::new(shape, sum)?,
        units_a,
        units_b,
    })
}

/// Everything computed for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub mode: Mode,
    pub reduce: Reduce,
    pub layer: usize,
    pub steps: usize,
    /// Row labels: tokens, or word units for word-level matrices.
    pub tokens_a: Vec<String>,
    /// Column labels.
    pub tokens_b: Vec<String>,
    /// The requested reduction; word-level cells are block means.
    pub matrix: Tensor,
    /// Word-level block sums (word reduction only).
    pub sum_matrix: Option<Tensor>,
    /// Model prediction `f(a, b)`.
    pub score: f64,
    /// `f(a, r_b)`.
    pub ref_sim_a: f64,
    /// `f(b, r_a)`.
    pub ref_sim_b: f64,
    /// `f(r_a, r_b)`.
    pub ref_term: f64,
    pub attribution_error: f64,
    /// `ΣA − (s + 1)`, approximate mode only.
    pub approximate_check: Option<f64>,
}

impl AttributionResult {
    /// Matrix whose cells add up to the attribution total.
    pub fn conserving_matrix(&self) -> &Tensor {
        self.sum_matrix.as_ref().unwrap_or(&self.matrix)
    }

    /// `ΣA`.
    pub fn total(&self) -> f64 {
        self.conserving_matrix().sum()
    }

    /// `s − f(a,r_b) − f(b,r_a) + f(r_a,r_b)`, what `ΣA` should equal.
    pub fn target(&self) -> f64 {
        self.score - self.ref_sim_a - self.ref_sim_b + self.ref_term
    }

    pub fn recompute_error(&self) -> f64 {
        (self.total() - self.target()).abs()
    }
}

struct Side {
    tokens: TokenSeq,
    x: Tensor,
    r: Tensor,
    delta: Vec<f64>,
    embedding: Tensor,
}

fn prepare(
    model: &SiameseEncoder,
    tokens: &TokenSeq,
    layer: usize,
) -> Result<Side, AttributionError> {
    let (x, r) = layer_pair(model, tokens, layer)?;
    let delta = x.sub(&r)?.into_data();
    Ok(Side {
        tokens: tokens.clone(),
        x,
        r,
        delta,
        embedding: model.embedding(tokens)?,
    })
}

/// Attribution of `f(a, b)` at the requested layer, step count, mode and
/// reduction.
pub fn attribute_pair(
    model: &SiameseEncoder,
    a: &TokenSeq,
    b: &TokenSeq,
    request: &AttributionRequest,
) -> Result<AttributionResult, AttributionError> {
    Ok(
        attribute_pair_multi(model, a, b, request, &[request.steps])?
            .pop()
            .expect("one step count"),
    )
}

/// [`attribute_pair`] for several step counts, sharing every interpolation
/// node common to more than one of them. `request.steps` is ignored.
pub fn attribute_pair_multi(
    model: &SiameseEncoder,
    a: &TokenSeq,
    b: &TokenSeq,
    request: &AttributionRequest,
    steps: &[usize],
) -> Result<Vec<AttributionResult>, AttributionError> {
    for &n in steps {
        AttributionRequest {
            steps: n,
            ..*request
        }
        .validate(model)?;
    }
    let layer = request.layer;
    let sa = prepare(model, a, layer)?;
    let sb = prepare(model, b, layer)?;
    let target = target_for(model);
    let jas = integrated_jacobians(model, &sa.x, &sa.r, layer, steps, target)?;
    let jbs = integrated_jacobians(model, &sb.x, &sb.r, layer, steps, target)?;

    let config = model.config();
    let scale = if config.head == Head::Cosine && config.is_shifted() {
        let denom = norm(sa.embedding.data()) * norm(sb.embedding.data());
        if denom == 0.0 {
            0.0
        } else {
            1.0 / denom
        }
    } else {
        1.0
    };

    let ra = make_reference(a);
    let rb = make_reference(b);
    let score = model.score(&sa.embedding, &sb.embedding);
    let emb_ra = model.embedding(&ra)?;
    let emb_rb = model.embedding(&rb)?;
    let ref_sim_a = model.score(&sa.embedding, &emb_rb);
    let ref_sim_b = model.score(&sb.embedding, &emb_ra);
    let ref_term = model.score(&emb_ra, &emb_rb);

    let vocab = model.vocab();
    let dim = config.model_dim;
    let mut results = Vec::with_capacity(steps.len());
    for ((ja, jb), &n) in jas.iter().zip(&jbs).zip(steps) {
        let (matrix, sum_matrix, tokens_a, tokens_b) = match request.reduce {
            Reduce::Feature => (
                attribution_matrix(ja, jb, &sa.delta, &sb.delta)?.scale(scale),
                None,
                sa.tokens.surface(vocab),
                sb.tokens.surface(vocab),
            ),
            Reduce::Token => (
                token_matrix(ja, jb, &sa.delta, &sb.delta, dim)?.scale(scale),
                None,
                sa.tokens.surface(vocab),
                sb.tokens.surface(vocab),
            ),
            Reduce::Word => {
                let tm = token_matrix(ja, jb, &sa.delta, &sb.delta, dim)?.scale(scale);
                let words = tokens_to_words(&tm, &sa.tokens.word_spans, &sb.tokens.word_spans)?;
                (
                    words.mean,
                    Some(words.sum),
                    sa.tokens.word_units(vocab),
                    sb.tokens.word_units(vocab),
                )
            }
        };
        let mut result = AttributionResult {
            mode: request.mode,
            reduce: request.reduce,
            layer,
            steps: n,
            tokens_a,
            tokens_b,
            matrix,
            sum_matrix,
            score,
            ref_sim_a,
            ref_sim_b,
            ref_term,
            attribution_error: 0.0,
            approximate_check: None,
        };
        result.attribution_error = result.recompute_error();
        if request.mode == Mode::Approximate {
            result.approximate_check = Some(result.total() - (score + 1.0));
        }
        results.push(result);
    }
    Ok(results)
}

/// Tokenizes both texts with the model vocabulary and attributes the pair.
pub fn attribute_texts(
    model: &SiameseEncoder,
    a: &str,
    b: &str,
    request: &AttributionRequest,
) -> Result<AttributionResult, AttributionError> {
    attribute_pair(model, &model.tokenize(a), &model.tokenize(b), request)
}

#[cfg(test)]
mod tests;
