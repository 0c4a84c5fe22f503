//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`] holding the
//! computed value and the indices of its inputs. [`backprop`] walks the nodes
//! from the loss back to the first one, in exact reverse order of recording,
//! and accumulates vector-Jacobian products into each input.
//!
//! The operation set is limited to what the networks and losses in this crate
//! need.

use std::cell::RefCell;
use std::rc::Rc;

use crate::activation::{lip1, lip1_grad_from_output};
use crate::conv::{conv2d, conv2d_backward};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
    },
    Lip1(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    Concat(Vec<usize>),
    Channel {
        input: usize,
        channel: usize,
    },
    /// Scalar function of one input whose gradient was computed eagerly.
    ScalarFn {
        input: usize,
        grad: Rc<Tensor>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::Lip1(a) | Op::Scale(a, _) | Op::AddScalar(a) | Op::Abs(a) | Op::Sum(a) | Op::Mean(a) => vec![*a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Channel { input, .. } | Op::ScalarFn { input, .. } => vec![*input],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of the operations evaluated so far.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf (a parameter or an input we want gradients for).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Concatenate single-batch values along the channel axis.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::stack_channels(&refs)?;
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| p.id).collect())))
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn conv2d(self, kernel: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let b = bias.map(|b| b.value());
        let out = conv2d(&self.value(), &kernel.value(), b.as_deref())?;
        Ok(self.tape.push(
            out,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.map(|b| b.id),
            },
        ))
    }

    pub fn lip1(self) -> Var<'t> {
        let out = self.value().map(lip1);
        self.tape.push(out, Op::Lip1(self.id))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.tape.push(out, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.tape.push(out, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().zip_map(&other.value(), |a, b| a * b)?;
        Ok(self.tape.push(out, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let out = self.value().map(|v| v * s);
        self.tape.push(out, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let out = self.value().map(|v| v + s);
        self.tape.push(out, Op::AddScalar(self.id))
    }

    pub fn abs(self) -> Var<'t> {
        let out = self.value().map(f64::abs);
        self.tape.push(out, Op::Abs(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push(out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().mean());
        self.tape.push(out, Op::Mean(self.id))
    }

    pub fn channel(self, channel: usize) -> Result<Var<'t>> {
        let out = self.value().channel(channel)?;
        Ok(self.tape.push(out, Op::Channel { input: self.id, channel }))
    }

    /// Record a scalar function of `self` from its value and its gradient.
    pub fn scalar_fn(self, value: f64, grad: Tensor) -> Result<Var<'t>> {
        self.value().expect_same_shape(&grad, "scalar_fn")?;
        Ok(self.tape.push(
            Tensor::scalar(value),
            Op::ScalarFn {
                input: self.id,
                grad: Rc::new(grad),
            },
        ))
    }
}

/// Gradients of a scalar loss with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the value does not influence the loss (or is a constant).
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, n: usize, f: impl Fn(usize) -> f64) {
    match slot {
        Some(g) => g.iter_mut().enumerate().for_each(|(i, v)| *v += f(i)),
        None => *slot = Some((0..n).map(f).collect()),
    }
}

/// Reverse pass from a scalar `loss`.
pub fn backprop(tape: &Tape, loss: Var<'_>) -> Result<Gradients> {
    if !std::ptr::eq(tape, loss.tape) {
        return Err(Error::InvalidArgument("loss was recorded on a different tape".into()));
    }
    let nodes = tape.nodes.borrow();
    let n_loss = nodes[loss.id].value.len();
    if n_loss != 1 {
        return Err(Error::InvalidArgument(format!(
            "backprop needs a scalar loss, got {n_loss} elements"
        )));
    }
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    grads[loss.id] = Some(vec![1.0]);
    let needs = |i: usize| nodes[i].requires_grad;

    for id in (0..=loss.id).rev() {
        let node = &nodes[id];
        if !node.requires_grad {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        match &node.op {
            Op::Leaf => {
                grads[id] = Some(g);
                continue;
            }
            Op::Conv2d { input, kernel, bias } => {
                let x = &nodes[*input].value;
                let k = &nodes[*kernel].value;
                let dout = Tensor::new(node.value.shape(), g.clone())?;
                let cg = conv2d_backward(x, k, &dout, needs(*input))?;
                if let Some(dx) = cg.input {
                    accumulate(&mut grads[*input], dx.len(), |i| dx.data()[i]);
                }
                if needs(*kernel) {
                    accumulate(&mut grads[*kernel], cg.kernel.len(), |i| cg.kernel.data()[i]);
                }
                if let Some(b) = bias.filter(|&b| needs(b)) {
                    accumulate(&mut grads[b], cg.bias.len(), |i| cg.bias.data()[i]);
                }
            }
            Op::Lip1(a) => {
                let y = node.value.data();
                accumulate(&mut grads[*a], g.len(), |i| g[i] * lip1_grad_from_output(y[i]));
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[*a], g.len(), |i| g[i]);
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], g.len(), |i| g[i]);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[*a], g.len(), |i| g[i]);
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], g.len(), |i| -g[i]);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                if needs(*a) {
                    accumulate(&mut grads[*a], g.len(), |i| g[i] * vb[i]);
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], g.len(), |i| g[i] * va[i]);
                }
            }
            Op::Scale(a, s) => accumulate(&mut grads[*a], g.len(), |i| g[i] * s),
            Op::AddScalar(a) => accumulate(&mut grads[*a], g.len(), |i| g[i]),
            Op::Abs(a) => {
                let x = nodes[*a].value.data();
                accumulate(&mut grads[*a], g.len(), |i| {
                    if x[i] > 0.0 {
                        g[i]
                    } else if x[i] < 0.0 {
                        -g[i]
                    } else {
                        0.0
                    }
                });
            }
            Op::Sum(a) => {
                let n = nodes[*a].value.len();
                accumulate(&mut grads[*a], n, |_| g[0]);
            }
            Op::Mean(a) => {
                let n = nodes[*a].value.len();
                let s = g[0] / n as f64;
                accumulate(&mut grads[*a], n, |_| s);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p].value.len();
                    if needs(p) {
                        accumulate(&mut grads[p], n, |i| g[offset + i]);
                    }
                    offset += n;
                }
            }
            Op::Channel { input, channel } => {
                let n = nodes[*input].value.len();
                let plane = g.len();
                let start = channel * plane;
                accumulate(&mut grads[*input], n, |i| {
                    if (start..start + plane).contains(&i) {
                        g[i - start]
                    } else {
                        0.0
                    }
                });
            }
            Op::ScalarFn { input, grad } => {
                accumulate(&mut grads[*input], grad.len(), |i| g[0] * grad.data()[i]);
            }
        }
    }

    let grads = grads
        .into_iter()
        .zip(nodes.iter())
        .map(|(g, node)| g.map(|g| Tensor::new(node.value.shape(), g)).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok(Gradients { grads })
}

/// Central-difference gradient `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    out
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`: a relative error that is
/// not dominated by individual near-zero entries.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let scale = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
    a.max_abs_diff(b) / scale
}
