//! Reverse-mode differentiation over a linear record of primitive ops.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep just walks it in reverse.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Slope applied to negative inputs by the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Fully connected layer `y = W x + b`, with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::invalid("weight", "dense weight must be rank 2"));
        }
        let out = weight.shape()[0];
        if bias.len() != out {
            return Err(Error::ShapeMismatch {
                context: "dense bias",
                expected: vec![out],
                got: bias.shape().to_vec(),
            });
        }
        let bias = bias.reshape(vec![out])?;
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.in_dim();
        self.weight
            .data()
            .chunks_exact(cols)
            .zip(self.bias.data())
            .map(|(row, b)| b + super::tensor::dot(row, x))
            .collect()
    }

    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let cols = self.in_dim();
        let mut out = vec![0.0; cols];
        for (row, gi) in self.weight.data().chunks_exact(cols).zip(g) {
            if *gi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<'m> {
    Leaf,
    Dense(&'m Dense, Var),
    Add(Var, Var),
    SubConst(Var, &'m Tensor),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var),
    Sigmoid(Var),
    Reshape(Var, Vec<usize>),
    /// Maps each angle `t` to `(c t cos t, c t sin t)`.
    Polar(Var, f64),
    SumSquares(Var),
}

#[derive(Debug, Clone)]
struct Node<'m> {
    op: Op<'m>,
    value: Tensor,
}

/// Record of one evaluation. Layer parameters are borrowed, never copied.
#[derive(Debug, Default)]
pub struct Tape<'m> {
    nodes: Vec<Node<'m>>,
}

impl<'m> Tape<'m> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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
        self.push(Op::Leaf, value)
    }

    pub fn dense(&mut self, x: Var, layer: &'m Dense) -> Result<Var> {
        self.record(Op::Dense(layer, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub_const(&mut self, a: Var, c: &'m Tensor) -> Result<Var> {
        self.record(Op::SubConst(a, c))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::LeakyRelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sigmoid(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.record(Op::Reshape(x, shape))
    }

    pub fn polar(&mut self, x: Var, radial_gain: f64) -> Result<Var> {
        self.record(Op::Polar(x, radial_gain))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        self.record(Op::SumSquares(x))
    }

    fn push(&mut self, op: Op<'m>, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<'m>) -> Result<Var> {
        let value = eval_op(&op, |v| &self.nodes[v.0].value)?;
        Ok(self.push(op, value))
    }

    /// Re-evaluates every node with new leaf values (in leaf creation order)
    /// and returns the values of all nodes.
    pub fn replay(&self, leaves: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut next_leaf = leaves.iter();
        for node in &self.nodes {
            let value = match &node.op {
                Op::Leaf => {
                    let leaf = next_leaf
                        .next()
                        .ok_or_else(|| Error::invalid("leaves", "fewer leaves than recorded"))?;
                    leaf.ensure_shape(node.value.shape(), "tape replay")?;
                    leaf.clone()
                }
                op => eval_op(op, |v| &values[v.0])?,
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Propagates `seed` (the cotangent of `output`) back through the tape.
    /// Returns one adjoint slot per node; `None` means the node does not
    /// influence `output`.
    pub fn backward(&self, output: Var, seed: &[f64]) -> Result<Adjoints> {
        let out_len = self.nodes[output.0].value.len();
        if seed.len() != out_len {
            return Err(Error::ShapeMismatch {
                context: "backward seed",
                expected: self.nodes[output.0].value.shape().to_vec(),
                got: vec![seed.len()],
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed.to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::Dense(layer, x) => accumulate(&mut adj, *x, layer.apply_transpose(&g)),
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::SubConst(x, _) | Op::Reshape(x, _) => accumulate(&mut adj, *x, g),
                Op::Tanh(x) => {
                    let gx = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Relu(x) => {
                    let xs = self.nodes[x.0].value.data();
                    // subgradient at 0 is 0
                    let gx = g
                        .iter()
                        .zip(xs)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::LeakyRelu(x) => {
                    let xs = self.nodes[x.0].value.data();
                    let gx = g
                        .iter()
                        .zip(xs)
                        .map(|(g, x)| if *x > 0.0 { *g } else { LEAKY_SLOPE * g })
                        .collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Polar(x, c) => {
                    let thetas = self.nodes[x.0].value.data();
                    let gx = thetas
                        .iter()
                        .zip(g.chunks_exact(2))
                        .map(|(t, gp)| {
                            let (s, co) = t.sin_cos();
                            let dx = c * co - c * t * s;
                            let dy = c * s + c * t * co;
                            gp[0] * dx + gp[1] * dy
                        })
                        .collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::SumSquares(x) => {
                    let xs = self.nodes[x.0].value.data();
                    let gx = xs.iter().map(|x| 2.0 * g[0] * x).collect();
                    accumulate(&mut adj, *x, gx);
                }
            }
        }
        if adj.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backward pass"));
        }
        Ok(Adjoints(adj))
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Adjoints(Vec<Option<Vec<f64>>>);

impl Adjoints {
    /// Adjoint of `v`, or zeros of length `len` when `v` was not reached.
    pub fn get(&self, v: Var, len: usize) -> Vec<f64> {
        self.0
            .get(v.0)
            .and_then(|a| a.clone())
            .unwrap_or_else(|| vec![0.0; len])
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], target: Var, g: Vec<f64>) {
    match &mut adj[target.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, v)| *e += v),
        slot => *slot = Some(g),
    }
}

fn map_unary(x: &Tensor, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>) {
    (x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn eval_op<'a, 'm: 'a>(op: &Op<'m>, value: impl Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    let (shape, data) = match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::Dense(layer, x) => {
            let x = value(*x);
            if x.len() != layer.in_dim() {
                return Err(Error::ShapeMismatch {
                    context: "dense input",
                    expected: vec![layer.in_dim()],
                    got: x.shape().to_vec(),
                });
            }
            (vec![layer.out_dim()], layer.apply(x.data()))
        }
        Op::Add(a, b) => {
            let (a, b) = (value(*a), value(*b));
            a.ensure_shape(b.shape(), "add")?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            (a.shape().to_vec(), data)
        }
        Op::SubConst(a, c) => {
            let a = value(*a);
            a.ensure_shape(c.shape(), "subtract constant")?;
            (a.shape().to_vec(), a.sub(c)?.into_data())
        }
        Op::Tanh(x) => map_unary(value(*x), f64::tanh),
        Op::Relu(x) => map_unary(value(*x), |v| v.max(0.0)),
        Op::LeakyRelu(x) => map_unary(value(*x), |v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
        Op::Sigmoid(x) => map_unary(value(*x), sigmoid),
        Op::Reshape(x, shape) => (shape.clone(), value(*x).reshape(shape.clone())?.into_data()),
        Op::Polar(x, c) => {
            let x = value(*x);
            let data = x
                .data()
                .iter()
                .flat_map(|t| {
                    let r = c * t;
                    let (s, co) = t.sin_cos();
                    [r * co, r * s]
                })
                .collect();
            (vec![2 * x.len()], data)
        }
        Op::SumSquares(x) => (vec![1], vec![value(*x).squared_norm()]),
    };
    if data.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFinite("forward evaluation"));
    }
    Ok(Tensor::from_parts_unchecked(shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: &[f64], rows: usize, cols: usize, b: &[f64]) -> Dense {
        Dense::new(
            Tensor::new(vec![rows, cols], w.to_vec()).unwrap(),
            Tensor::vector(b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn dense_backward_is_transpose() {
        let l = layer(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2, &[0.0; 3]);
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![0.3, -0.7]).unwrap());
        let y = tape.dense(z, &l).unwrap();
        let adj = tape.backward(y, &[1.0, -1.0, 2.0]).unwrap();
        // W^T u = (1 - 3 + 10, 2 - 4 + 12)
        assert_eq!(adj.get(z, 2), vec![8.0, 10.0]);
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.5, -2.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let s = tape.sum_squares(y).unwrap();
        // s = 4 |x|^2, ds/dx = 8x
        let adj = tape.backward(s, &[1.0]).unwrap();
        assert_eq!(adj.get(x, 2), vec![12.0, -16.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let l = layer(&[0.1, -0.4, 0.25, 0.9], 2, 2, &[0.05, -0.3]);
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![0.5, -0.5]).unwrap());
        let h = tape.dense(z, &l).unwrap();
        let a = tape.tanh(h).unwrap();
        let s = tape.sigmoid(a).unwrap();
        let p = tape.polar(s, 0.35).unwrap();
        let values = tape
            .replay(&[Tensor::vector(vec![0.5, -0.5]).unwrap()])
            .unwrap();
        assert_eq!(values.len(), tape.len());
        assert_eq!(values.last().unwrap(), tape.value(p));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 1.0, -1.0]).unwrap());
        let y = tape.relu(x).unwrap();
        let adj = tape.backward(y, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(adj.get(x, 3), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let l = layer(&[1e300], 1, 1, &[0.0]);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1e10]).unwrap());
        assert!(matches!(tape.dense(x, &l), Err(Error::NonFinite(_))));
    }
}
