use crate::batchnorm::BnRecord;
use crate::conv::{ConvRecord, ConvTransposeRecord};
use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a tensor on a tape. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum UnaryOp<E> {
    /// x * mul + add, elementwise.
    Affine { mul: E, add: E },
    Exp,
    Abs,
    Sqr,
    Relu,
    LeakyRelu { slope: E },
    Tanh,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum ReduceOp {
    Sum,
    Mean,
}

pub(crate) enum Record<E: Element> {
    Unary {
        op: UnaryOp<E>,
        input: Var,
        output: Var,
    },
    Binary {
        op: BinaryOp,
        lhs: Var,
        rhs: Var,
        output: Var,
    },
    Reduce {
        op: ReduceOp,
        input: Var,
        output: Var,
    },
    Conv(ConvRecord),
    ConvTranspose(ConvTransposeRecord),
    BatchNorm(BnRecord<E>),
}

pub(crate) struct Node<E: Element> {
    pub value: Tensor<E>,
    pub grad: Option<Tensor<E>>,
    /// True for gradient-requiring leaves and anything computed from one.
    pub needs_grad: bool,
}

/// Ordered record of executed operations. Rebuilt for every forward pass;
/// [`Tape::backward`] replays it once, in reverse execution order.
pub struct Tape<E: Element> {
    pub(crate) nodes: Vec<Node<E>>,
    pub(crate) records: Vec<Record<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            records: Vec::new(),
        }
    }

    /// Places a tensor on the tape. `requires_grad` marks it as a
    /// differentiation leaf; backward() will populate its grad.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A tensor that never receives gradient.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    /// Copies a var's value into a fresh gradient-blocked leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<E>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn push_output(
        &mut self,
        op: &'static str,
        value: Tensor<E>,
        needs_grad: bool,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn binary(&mut self, op: BinaryOp, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        let out = self.push_output(name, value, needs)?;
        self.records.push(Record::Binary {
            op,
            lhs: a,
            rhs: b,
            output: out,
        });
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, "mul", a, b)
    }

    fn unary(&mut self, op: UnaryOp<E>, name: &'static str, x: Var) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        let data = vx
            .data()
            .iter()
            .map(|&v| match op {
                UnaryOp::Affine { mul, add } => v * mul + add,
                UnaryOp::Exp => v.exp(),
                UnaryOp::Abs => v.abs(),
                UnaryOp::Sqr => v * v,
                UnaryOp::Relu => {
                    if v > E::zero() {
                        v
                    } else {
                        E::zero()
                    }
                }
                UnaryOp::LeakyRelu { slope } => {
                    if v > E::zero() {
                        v
                    } else {
                        v * slope
                    }
                }
                UnaryOp::Tanh => v.tanh(),
            })
            .collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let needs = self.needs_grad(x);
        let out = self.push_output(name, value, needs)?;
        self.records.push(Record::Unary {
            op,
            input: x,
            output: out,
        });
        Ok(out)
    }

    /// x * mul + add, elementwise.
    pub fn affine(&mut self, x: Var, mul: E, add: E) -> Result<Var> {
        self.unary(UnaryOp::Affine { mul, add }, "affine", x)
    }

    pub fn scale(&mut self, x: Var, mul: E) -> Result<Var> {
        self.affine(x, mul, E::zero())
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, "exp", x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Abs, "abs", x)
    }

    pub fn sqr(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqr, "sqr", x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, "relu", x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: E) -> Result<Var> {
        self.unary(UnaryOp::LeakyRelu { slope }, "leaky_relu", x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, "tanh", x)
    }

    pub fn activation(&mut self, x: Var, kind: Activation, slope: E) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::LeakyRelu => self.leaky_relu(x, slope),
            Activation::Tanh => self.tanh(x),
        }
    }

    fn reduce(&mut self, op: ReduceOp, name: &'static str, x: Var) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        let mut acc = 0.0f64;
        for &v in vx.data() {
            acc += v.as_f64();
        }
        let total = match op {
            ReduceOp::Sum => acc,
            ReduceOp::Mean => acc / vx.numel() as f64,
        };
        let needs = self.needs_grad(x);
        let out = self.push_output(name, Tensor::scalar(E::from_f64(total)), needs)?;
        self.records.push(Record::Reduce {
            op,
            input: x,
            output: out,
        });
        Ok(out)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, "sum", x)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, "mean", x)
    }

    fn accumulate(&mut self, v: Var, contribution: &[E]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let node = &mut self.nodes[v.0];
        let grad = node
            .grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
        for (g, &c) in grad.data_mut().iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Reverse pass from a scalar root. Visits each recorded operation
    /// exactly once, in reverse execution order, accumulating gradients
    /// into every gradient-requiring node on the path.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(TensorError::NotScalar {
                got: self.nodes[root.0].value.shape().to_vec(),
            });
        }
        // Leaves that require grad always end up populated, even when the
        // root does not depend on them.
        for node in &mut self.nodes {
            if node.needs_grad && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        if !self.nodes[root.0].needs_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Tensor::full(
            self.nodes[root.0].value.shape().to_vec(),
            E::one(),
        ));

        for idx in (0..self.records.len()).rev() {
            // Records are taken out one at a time so kernels can borrow the
            // node storage mutably while reading the record's saved context.
            let record = std::mem::replace(
                &mut self.records[idx],
                Record::Reduce {
                    op: ReduceOp::Sum,
                    input: Var(0),
                    output: Var(0),
                },
            );
            self.step_backward(&record)?;
            self.records[idx] = record;
        }
        Ok(())
    }

    fn step_backward(&mut self, record: &Record<E>) -> Result<()> {
        match record {
            Record::Unary { op, input, output } => {
                let Some(gout) = self.nodes[output.0].grad.clone() else {
                    return Ok(());
                };
                if !self.needs_grad(*input) {
                    return Ok(());
                }
                let gout = gout.into_data();
                let contribution: Vec<E> = match op {
                    UnaryOp::Affine { mul, .. } => gout.iter().map(|&g| g * *mul).collect(),
                    UnaryOp::Exp | UnaryOp::Tanh => {
                        // Both derivatives are a function of the saved output:
                        // exp'(x) = exp(x), tanh'(x) = 1 - tanh(x)^2.
                        let out = self.nodes[output.0].value.data();
                        gout.iter()
                            .zip(out)
                            .map(|(&g, &y)| match op {
                                UnaryOp::Exp => g * y,
                                _ => g * (E::one() - y * y),
                            })
                            .collect()
                    }
                    UnaryOp::Abs => {
                        let inp = self.nodes[input.0].value.data();
                        gout.iter()
                            .zip(inp)
                            .map(|(&g, &x)| {
                                if x > E::zero() {
                                    g
                                } else if x < E::zero() {
                                    -g
                                } else {
                                    E::zero()
                                }
                            })
                            .collect()
                    }
                    UnaryOp::Sqr => {
                        let inp = self.nodes[input.0].value.data();
                        let two = E::from_f64(2.0);
                        gout.iter().zip(inp).map(|(&g, &x)| g * two * x).collect()
                    }
                    UnaryOp::Relu => {
                        let inp = self.nodes[input.0].value.data();
                        gout.iter()
                            .zip(inp)
                            .map(|(&g, &x)| if x > E::zero() { g } else { E::zero() })
                            .collect()
                    }
                    UnaryOp::LeakyRelu { slope } => {
                        let inp = self.nodes[input.0].value.data();
                        gout.iter()
                            .zip(inp)
                            .map(|(&g, &x)| if x > E::zero() { g } else { g * *slope })
                            .collect()
                    }
                };
                self.accumulate(*input, &contribution);
            }
            Record::Binary {
                op,
                lhs,
                rhs,
                output,
            } => {
                let Some(gout) = self.nodes[output.0].grad.clone() else {
                    return Ok(());
                };
                let gout = gout.into_data();
                match op {
                    BinaryOp::Add => {
                        self.accumulate(*lhs, &gout);
                        self.accumulate(*rhs, &gout);
                    }
                    BinaryOp::Sub => {
                        self.accumulate(*lhs, &gout);
                        let neg: Vec<E> = gout.iter().map(|&g| -g).collect();
                        self.accumulate(*rhs, &neg);
                    }
                    BinaryOp::Mul => {
                        if self.needs_grad(*lhs) {
                            let vb = self.nodes[rhs.0].value.data();
                            let ga: Vec<E> =
                                gout.iter().zip(vb).map(|(&g, &b)| g * b).collect();
                            self.accumulate(*lhs, &ga);
                        }
                        if self.needs_grad(*rhs) {
                            let va = self.nodes[lhs.0].value.data();
                            let gb: Vec<E> =
                                gout.iter().zip(va).map(|(&g, &a)| g * a).collect();
                            self.accumulate(*rhs, &gb);
                        }
                    }
                }
            }
            Record::Reduce { op, input, output } => {
                let Some(gout) = self.nodes[output.0].grad.as_ref() else {
                    return Ok(());
                };
                let g = gout.item();
                let n = self.nodes[input.0].value.numel();
                let per = match op {
                    ReduceOp::Sum => g,
                    ReduceOp::Mean => g / E::from_f64(n as f64),
                };
                let contribution = vec![per; n];
                self.accumulate(*input, &contribution);
            }
            Record::Conv(rec) => self.conv2d_backward(rec)?,
            Record::ConvTranspose(rec) => self.conv_transpose2d_backward(rec)?,
            Record::BatchNorm(rec) => self.batch_norm2d_backward(rec)?,
        }
        Ok(())
    }
}
