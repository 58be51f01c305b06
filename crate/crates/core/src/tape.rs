//! A minimal reverse-mode tape.
//!
//! Every recorded node keeps its forward value, the nodes it was computed
//! from, and a closure mapping the output gradient to input gradients. The
//! closures are the per-operator backward passes from [`crate::ops`]; the
//! tape only orders and accumulates them. Nodes are appended in evaluation
//! order, so walking the list backwards is a valid topological order.

use crate::error::{Error, Result};
use crate::ops::{self, norm::BatchStats, ConvSpec, Mode, RunningStats, Switches};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Result<Vec<Option<Tensor>>>>;

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
}

pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, Var)>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            record: true,
        }
    }

    /// A tape that keeps values but records no backward closures.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None)
    }

    /// A leaf whose gradient is reported under parameter index `index`.
    pub fn param(&mut self, index: usize, value: Tensor) -> Var {
        let v = self.leaf(value);
        self.params.push((index, v));
        v
    }

    fn push(&mut self, value: Tensor, inputs: Vec<Var>, backward: Option<BackwardFn>) -> Var {
        let backward = if self.record { backward } else { None };
        self.nodes.push(Node {
            value,
            inputs,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = ops::conv3d(self.value(x), &spec, self.value(weight), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            inputs,
            Some(Box::new(move |g, inp, _| {
                let (gx, gw, gb) = ops::conv3d_backward(inp[0], &spec, inp[1], g)?;
                Ok(vec![Some(gx), Some(gw), gb])
            })),
        ))
    }

    pub fn transposed_conv3d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = ops::transposed_conv3d(self.value(x), &spec, self.value(weight), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            inputs,
            Some(Box::new(move |g, inp, _| {
                let (gx, gw, gb) = ops::transposed_conv3d_backward(inp[0], &spec, inp[1], g)?;
                Ok(vec![Some(gx), Some(gw), gb])
            })),
        ))
    }

    /// Batch norm; in train mode also returns the batch statistics for the
    /// caller to fold into its running stats.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (out, cache, stats) =
            ops::batchnorm_forward(self.value(x), self.value(gamma), self.value(beta), running, mode)?;
        let v = self.push(
            out,
            vec![x, gamma, beta],
            Some(Box::new(move |g, inp, _| {
                let (gx, gg, gb) = ops::batchnorm_backward(g, inp[1], &cache)?;
                Ok(vec![Some(gx), Some(gg), Some(gb)])
            })),
        );
        Ok((v, stats))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(|g, _, _| Ok(vec![Some(g.clone()), Some(g.clone())]))),
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(
            out,
            vec![x],
            Some(Box::new(|g, inp, _| Ok(vec![Some(ops::relu_backward(inp[0], g)?)]))),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(
            out,
            vec![x],
            Some(Box::new(|g, _, y| Ok(vec![Some(ops::sigmoid_backward(y, g)?)]))),
        )
    }

    pub fn maxpool(&mut self, x: Var, kernel: [usize; 3], stride: [usize; 3]) -> Result<(Var, Switches)> {
        let (out, switches) = ops::maxpool3d_with_switches(self.value(x), kernel, stride)?;
        let s = switches.clone();
        let v = self.push(
            out,
            vec![x],
            Some(Box::new(move |g, _, _| Ok(vec![Some(ops::maxpool3d_backward(g, &s)?)]))),
        );
        Ok((v, switches))
    }

    /// Unpooling with externally supplied switches; no gradient reaches the switches.
    pub fn maxunpool(&mut self, x: Var, switches: Switches, output_shape: [usize; 5]) -> Result<Var> {
        let out = ops::maxunpool3d(self.value(x), &switches, output_shape)?;
        Ok(self.push(
            out,
            vec![x],
            Some(Box::new(move |g, _, _| Ok(vec![Some(ops::maxunpool3d_backward(g, &switches)?)]))),
        ))
    }

    pub fn trilinear(&mut self, x: Var, scale: [usize; 3]) -> Result<Var> {
        let out = ops::trilinear_upsample(self.value(x), scale)?;
        Ok(self.push(
            out,
            vec![x],
            Some(Box::new(move |g, _, _| {
                Ok(vec![Some(ops::trilinear_upsample_backward(g, scale)?)])
            })),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(
            out,
            vec![x],
            Some(Box::new(|g, inp, _| Ok(vec![Some(g.reshape(inp[0].shape().to_vec())?)]))),
        ))
    }

    /// Backpropagates from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let value = self.value(root);
        if value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar root, got shape {:?}",
                value.shape()
            )));
        }
        self.backward_with(root, Tensor::ones(value.shape().to_vec()))
    }

    /// Backpropagates a given output gradient from `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if !self.record {
            return Err(Error::InvalidArgument("backward on a tape that records no gradients".into()));
        }
        self.value(root).check_same_shape("backward seed", &seed)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(backward) = &node.backward {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let input_grads = backward(&g, &inputs, &node.value)?;
                for (v, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    match &mut grads[v.0] {
                        Some(acc) => acc.add_assign(&ig)?,
                        slot => *slot = Some(ig),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// `(parameter index, gradient)` for every parameter leaf reached.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(i, v)| self.get(v).map(|g| (i, g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1, 1, 1, 1, 2], vec![-1.0, 2.0]).unwrap());
        let a = tape.relu(x);
        let b = tape.relu(x);
        let y = tape.add(a, b).unwrap();
        let grads = tape.backward_with(y, Tensor::ones(vec![1, 1, 1, 1, 2])).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), [0.0, 2.0]);
        assert_eq!(grads.get(a).unwrap().data(), [1.0, 1.0]);
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::scalar(1.0));
        assert!(tape.backward(x).is_err());
    }
}
