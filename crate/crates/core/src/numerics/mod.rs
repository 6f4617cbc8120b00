//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Supported primitives: matrix multiply, add/subtract, bias add, elementwise
//! multiply, scaling, tanh, GELU, row-wise softmax, layer normalization, mean
//! pooling over the token axis, L2 normalization, dot product, plus the
//! structural ops (transpose, column slice/concat, row gather) the encoder
//! needs. [`jacobian`] extracts full Jacobians; [`finite_diff_jacobian`] is
//! the central-difference oracle used to check it.

mod gemm;
pub mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{dot, norm, Tensor};

#[cfg(test)]
pub(crate) use tape::softmax_in_place;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("{op}: range {start}..{end} outside 0..{len}")]
    Range {
        op: &'static str,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("cannot normalize a zero-length vector")]
    ZeroNorm,
    #[error("tape already consumed by a reverse sweep")]
    TapeConsumed,
    #[error("non-finite Jacobian entry at output {row}, input {col}")]
    NonFinite { row: usize, col: usize },
    #[error("input was evaluated without differentiation")]
    NotDifferentiable,
    #[error("finite differences need eps > 0, got {0}")]
    BadStep(f64),
}

/// A recorded forward evaluation.
pub struct Evaluation {
    pub tape: Tape<'static>,
    pub inputs: Vec<Var>,
    pub output: Var,
}

impl Evaluation {
    pub fn value(&self) -> &Tensor {
        self.tape.value(self.output)
    }

    /// Gradient of one output component with respect to each input.
    pub fn backward(&mut self, component: usize) -> Result<Vec<Tensor>, NumericsError> {
        let grads = self.tape.backward(self.output, component)?;
        self.inputs
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .ok_or(NumericsError::NotDifferentiable)
            })
            .collect()
    }
}

/// Runs `graph` on the given inputs.
///
/// With `record` set the inputs are differentiable leaves; otherwise they
/// enter as constants and the tape only carries forward values.
pub fn evaluate<F>(inputs: &[Tensor], record: bool, graph: F) -> Result<Evaluation, NumericsError>
where
    F: FnOnce(&mut Tape<'static>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if record {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect();
    let output = graph(&mut tape, &vars)?;
    Ok(Evaluation {
        tape,
        inputs: vars,
        output,
    })
}

/// Jacobian `∂f(x)/∂x` as an `out_len × in_len` matrix, inputs and outputs
/// flattened row-major.
///
/// The forward values are recorded once; all output rows are swept back in
/// one pass with identity seeds.
pub fn jacobian<'a, F>(f: F, input: &Tensor) -> Result<Tensor, NumericsError>
where
    F: FnOnce(&mut Tape<'a>, Var) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = f(&mut tape, x)?;
    jacobian_on_tape(&mut tape, y, x)
}

/// Jacobian of an already-recorded output with respect to one leaf.
pub fn jacobian_on_tape(
    tape: &mut Tape<'_>,
    output: Var,
    wrt: Var,
) -> Result<Tensor, NumericsError> {
    let out_len = tape.value(output).len();
    let seeds = Tensor::identity(out_len);
    let jac = tape.vjp(output, &seeds, wrt)?;
    if let Some(pos) = jac.first_non_finite() {
        let cols = jac.shape()[1];
        return Err(NumericsError::NonFinite {
            row: pos / cols,
            col: pos % cols,
        });
    }
    Ok(jac)
}

/// Central-difference Jacobian: column `i` is
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)`.
pub fn finite_diff_jacobian<F, E>(f: F, input: &Tensor, eps: f64) -> Result<Tensor, E>
where
    F: Fn(&Tensor) -> Result<Tensor, E>,
    E: From<NumericsError>,
{
    if !(eps > 0.0) {
        return Err(NumericsError::BadStep(eps).into());
    }
    let n = input.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut out_len = 0;
    for i in 0..n {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        out_len = fp.len();
        cols.push(
            fp.data()
                .iter()
                .zip(fm.data())
                .map(|(a, b)| (a - b) / (2.0 * eps))
                .collect(),
        );
    }
    let mut data = vec![0.0; out_len * n];
    for (i, col) in cols.iter().enumerate() {
        for (k, v) in col.iter().enumerate() {
            data[k * n + i] = *v;
        }
    }
    Ok(Tensor::new(vec![out_len, n], data)?)
}

#[cfg(test)]
mod tests;
