//! Dense `f64` kernel with explicit backward rules.
//!
//! Every differentiable operation comes as a forward function plus a matching
//! `*_backward` function. [`Tape`] strings them together for the toy model and
//! runs reverse-mode accumulation over the recorded nodes. [`check_gradient`]
//! verifies any scalar map against central differences.

use crate::error::{Error, Result};

/// Row-major dense tensor of 64-bit floats.
///
/// Rank 1 tensors are treated as a single row wherever an operation expects a
/// matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry {} at index {i}",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of rows when viewed as a matrix.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub passed: bool,
}

/// `input · weight + bias`, with `input` of shape `[n, k]` (or `[k]`),
/// `weight` `[k, m]` and `bias` `[m]`.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weight.rank() != 2 || bias.rank() != 1 || input.rank() == 0 || input.rank() > 2 {
        return Err(Error::Dimension(format!(
            "affine expects input [n,k] or [k], weight [k,m], bias [m]; got {:?}, {:?}, {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let (k, m) = (weight.shape[0], weight.shape[1]);
    if input.cols() != k || bias.len() != m {
        return Err(Error::Dimension(format!(
            "affine: input {:?} vs weight {:?} vs bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let n = input.rows();
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let x = input.row(r);
        let o = &mut out[r * m..(r + 1) * m];
        o.copy_from_slice(&bias.data);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let w = &weight.data[i * m..(i + 1) * m];
            for (oj, wj) in o.iter_mut().zip(w) {
                *oj += xi * wj;
            }
        }
    }
    let shape = if input.rank() == 1 { vec![m] } else { vec![n, m] };
    Tensor::new(shape, out)
}

/// Gradients of [`affine`] with respect to its three arguments.
#[derive(Clone, Debug)]
pub struct AffineGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn affine_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<AffineGrads> {
    let (k, m) = (weight.shape[0], weight.shape[1]);
    let n = input.rows();
    if grad_out.len() != n * m || input.cols() != k {
        return Err(Error::Dimension(format!(
            "affine backward: input {:?}, weight {:?}, upstream {:?}",
            input.shape(),
            weight.shape(),
            grad_out.shape()
        )));
    }
    let mut d_input = vec![0.0; n * k];
    let mut d_weight = vec![0.0; k * m];
    let mut d_bias = vec![0.0; m];
    for r in 0..n {
        let x = input.row(r);
        let g = &grad_out.data[r * m..(r + 1) * m];
        for (bj, gj) in d_bias.iter_mut().zip(g) {
            *bj += gj;
        }
        let dx = &mut d_input[r * k..(r + 1) * k];
        for i in 0..k {
            let w = &weight.data[i * m..(i + 1) * m];
            dx[i] = w.iter().zip(g).map(|(a, b)| a * b).sum();
            let xi = x[i];
            if xi != 0.0 {
                let dw = &mut d_weight[i * m..(i + 1) * m];
                for (dwj, gj) in dw.iter_mut().zip(g) {
                    *dwj += xi * gj;
                }
            }
        }
    }
    Ok(AffineGrads {
        input: Tensor::new(input.shape.clone(), d_input)?,
        weight: Tensor::new(weight.shape.clone(), d_weight)?,
        bias: Tensor::new(vec![m], d_bias)?,
    })
}

/// Elementwise `max(0, x)`.
pub fn rectify(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Subgradient at exactly zero is zero.
pub fn rectify_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if !input.same_shape(grad_out) {
        return Err(Error::Dimension(format!(
            "rectify backward: {:?} vs {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    let data = input
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape.clone(), data)
}

/// Divides every row by its Euclidean norm. A zero row is a domain error.
pub fn l2_normalize(input: &Tensor) -> Result<Tensor> {
    let c = input.cols();
    let mut out = Vec::with_capacity(input.len());
    for r in 0..input.rows() {
        let row = input.row(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Domain(format!(
                "cannot normalize zero vector (row {r})"
            )));
        }
        out.extend(row.iter().map(|v| v / norm));
    }
    debug_assert_eq!(out.len(), input.rows() * c);
    Tensor::new(input.shape.clone(), out)
}

/// Applies the row-wise normalization Jacobian `(I - y yᵀ) / ‖x‖` to `grad_out`.
pub fn l2_normalize_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if !input.same_shape(grad_out) {
        return Err(Error::Dimension(format!(
            "l2_normalize backward: {:?} vs {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    let c = input.cols();
    let mut out = Vec::with_capacity(input.len());
    for r in 0..input.rows() {
        let x = input.row(r);
        let g = &grad_out.data[r * c..(r + 1) * c];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Domain(format!(
                "cannot normalize zero vector (row {r})"
            )));
        }
        let y_dot_g: f64 = x.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / norm;
        out.extend(
            x.iter()
                .zip(g)
                .map(|(xi, gi)| (gi - (xi / norm) * y_dot_g) / norm),
        );
    }
    Tensor::new(input.shape.clone(), out)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Node {
    Leaf,
    Affine { input: Var, weight: Var, bias: Var },
    Rectify { input: Var },
    L2Normalize { input: Var },
}

/// Append-only record of forward values for reverse-mode accumulation.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, node: Node) -> Var {
        self.values.push(value);
        self.nodes.push(node);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Node::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = affine(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            out,
            Node::Affine {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn rectify(&mut self, input: Var) -> Var {
        let out = rectify(self.value(input));
        self.push(out, Node::Rectify { input })
    }

    pub fn l2_normalize(&mut self, input: Var) -> Result<Var> {
        let out = l2_normalize(self.value(input))?;
        Ok(self.push(out, Node::L2Normalize { input }))
    }

    /// Propagates the seed gradients back to every recorded value.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        for (v, g) in seeds {
            if !self.values[v.0].same_shape(g) {
                return Err(Error::Dimension(format!(
                    "seed gradient {:?} for value {:?}",
                    g.shape(),
                    self.values[v.0].shape()
                )));
            }
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx] {
                Node::Leaf => {}
                Node::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    let g = affine_backward(self.value(*input), self.value(*weight), &upstream)?;
                    accumulate(&mut grads, *input, g.input);
                    accumulate(&mut grads, *weight, g.weight);
                    accumulate(&mut grads, *bias, g.bias);
                }
                Node::Rectify { input } => {
                    let g = rectify_backward(self.value(*input), &upstream)?;
                    accumulate(&mut grads, *input, g);
                }
                Node::L2Normalize { input } => {
                    let g = l2_normalize_backward(self.value(*input), &upstream)?;
                    accumulate(&mut grads, *input, g);
                }
            }
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the value does not influence any seed.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

/// Compares the analytic gradient returned by `function` with central
/// differences `(f(x + h e) - f(x - h e)) / 2h` at every coordinate.
///
/// The relative error of a coordinate uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn check_gradient<F>(function: F, point: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    compare_gradient(function, point, step, tolerance, false)
}

/// Like [`check_gradient`], but the numeric derivative is the Richardson
/// extrapolation `(4·D(h/2) − D(h)) / 3` of two central differences, which
/// cancels the `h²` truncation term. A larger step then keeps roundoff small
/// on coordinates whose true derivative is tiny.
pub fn check_gradient_extrapolated<F>(function: F, point: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    compare_gradient(function, point, step, tolerance, true)
}

fn compare_gradient<F>(function: F, point: &Tensor, step: f64, tolerance: f64, extrapolate: bool) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {step}")));
    }
    let (value, analytic) = function(point)?;
    if !value.is_finite() {
        return Err(Error::Evaluation(format!("function value {value} at the base point")));
    }
    if analytic.len() != point.len() {
        return Err(Error::Dimension(format!(
            "analytic gradient {:?} for point {:?}",
            analytic.shape(),
            point.shape()
        )));
    }
    let eval = |x: &Tensor, coordinate: usize| -> Result<f64> {
        let v = function(x)?.0;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!(
                "non-finite function value while perturbing coordinate {coordinate}"
            )))
        }
    };
    let mut probe = point.clone();
    let mut worst = (0.0_f64, 0_usize);
    for i in 0..point.len() {
        let x0 = point.data[i];
        let mut central = |h: f64| -> Result<f64> {
            probe.data[i] = x0 + h;
            let plus = eval(&probe, i)?;
            probe.data[i] = x0 - h;
            let minus = eval(&probe, i)?;
            probe.data[i] = x0;
            Ok((plus - minus) / (2.0 * h))
        };
        let numeric = if extrapolate {
            let coarse = central(step)?;
            (4.0 * central(step / 2.0)? - coarse) / 3.0
        } else {
            central(step)?
        };
        let a = analytic.data[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_coordinate: worst.1,
        passed: worst.0 <= tolerance,
    })
}
