use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::Label;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{combined_objective_raw, sigmoid, LossBundle, LossConfig};

/// Layer widths of [`ToyModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub feature: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
}

impl ModelDims {
    /// Encoder `3·size² → 96 → 64`, projection head `64 → 64 → 128`.
    pub fn for_image(size: usize) -> Self {
        Self {
            input: size * size * 3,
            hidden: 96,
            feature: 64,
            proj_hidden: 64,
            proj_dim: 128,
        }
    }

    fn blocks(&self) -> [(&'static str, Vec<usize>); 10] {
        [
            ("enc1.weight", vec![self.input, self.hidden]),
            ("enc1.bias", vec![self.hidden]),
            ("enc2.weight", vec![self.hidden, self.feature]),
            ("enc2.bias", vec![self.feature]),
            ("cls.weight", vec![self.feature, 1]),
            ("cls.bias", vec![1]),
            ("proj1.weight", vec![self.feature, self.proj_hidden]),
            ("proj1.bias", vec![self.proj_hidden]),
            ("proj2.weight", vec![self.proj_hidden, self.proj_dim]),
            ("proj2.bias", vec![self.proj_dim]),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Two affine+rectify encoder stages feeding a one-logit classification head
/// and a two-layer projection head whose output is L2-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    dims: ModelDims,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Tape and handles of one forward pass.
pub struct ForwardPass {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub logits: Var,
    pub projections: Var,
}

impl ToyModel {
    /// He-uniform weights, zero biases except the last projection bias, which
    /// is drawn small and nonzero so projections never start at the origin.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in dims.blocks() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("weight") {
                let bound = (6.0 / shape[0] as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            } else if name == "proj2.bias" {
                (0..n).map(|_| rng.random_range(-0.05..0.05)).collect()
            } else {
                vec![0.0; n]
            };
            names.push(name.to_string());
            params.push(Tensor::new(shape, data).expect("finite init"));
        }
        Self { dims, names, params }
    }

    /// Rebuilds a model from named blocks, checking them against `dims`.
    pub fn from_blocks(dims: ModelDims, blocks: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = dims.blocks();
        if blocks.len() != expected.len() {
            return Err(Error::Integrity(format!(
                "model needs {} parameter blocks, got {}",
                expected.len(),
                blocks.len()
            )));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for ((name, tensor), (want_name, want_shape)) in blocks.into_iter().zip(expected) {
            if name != want_name || tensor.shape() != want_shape.as_slice() {
                return Err(Error::Integrity(format!(
                    "parameter block {name} {:?} where {want_name} {want_shape:?} was expected",
                    tensor.shape()
                )));
            }
            names.push(name);
            params.push(tensor);
        }
        Ok(Self { dims, names, params })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// All parameters concatenated in block order.
    pub fn to_flat(&self) -> Tensor {
        let data: Vec<f64> = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        let n = data.len();
        Tensor::new(vec![n], data).expect("finite parameters")
    }

    pub fn with_flat(&self, flat: &Tensor) -> Result<Self> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Dimension(format!(
                "{} flat values for {} parameters",
                flat.len(),
                self.parameter_count()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for p in &mut out.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn forward(&self, inputs: &Tensor) -> Result<ForwardPass> {
        if inputs.rank() != 2 || inputs.cols() != self.dims.input {
            return Err(Error::Dimension(format!(
                "model expects inputs [n, {}], got {:?}",
                self.dims.input,
                inputs.shape()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(inputs.clone());
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let h1 = tape.affine(x, params[0], params[1])?;
        let h1 = tape.rectify(h1);
        let h2 = tape.affine(h1, params[2], params[3])?;
        let features = tape.rectify(h2);
        let logits = tape.affine(features, params[4], params[5])?;
        let p1 = tape.affine(features, params[6], params[7])?;
        let p1 = tape.rectify(p1);
        let p2 = tape.affine(p1, params[8], params[9])?;
        let projections = tape.l2_normalize(p2)?;
        Ok(ForwardPass {
            tape,
            params,
            logits,
            projections,
        })
    }

    /// Live probabilities for each input row.
    pub fn scores(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        let pass = self.forward(inputs)?;
        Ok(pass.tape.value(pass.logits).data().iter().map(|&x| sigmoid(x)).collect())
    }

    /// Combined objective on one batch and its gradient for every parameter
    /// block.
    pub fn objective(
        &self,
        inputs: &Tensor,
        focal_targets: &[f64],
        supcon_labels: &[Label],
        config: &LossConfig,
    ) -> Result<(LossBundle, Vec<Tensor>)> {
        let pass = self.forward(inputs)?;
        let out = combined_objective_raw(
            pass.tape.value(pass.logits),
            pass.tape.value(pass.projections),
            focal_targets,
            supcon_labels,
            config,
        )?;
        let mut grads = pass.tape.backward(&[
            (pass.logits, out.grad_logits),
            (pass.projections, out.grad_projections),
        ])?;
        let per_block = pass
            .params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect();
        Ok((out.bundle, per_block))
    }
}

/// Stacks flattened `[h, w, 3]` images into an `[n, h·w·3]` matrix.
pub fn stack_images<'a, I>(images: I) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a Tensor>,
{
    let mut data = Vec::new();
    let mut n = 0;
    let mut width = None;
    for img in images {
        match width {
            None => width = Some(img.len()),
            Some(w) if w != img.len() => {
                return Err(Error::Dimension(format!(
                    "images of {w} and {} values in one batch",
                    img.len()
                )))
            }
            _ => {}
        }
        data.extend_from_slice(img.data());
        n += 1;
    }
    Tensor::matrix(n, width.unwrap_or(0), data)
}
