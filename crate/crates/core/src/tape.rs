//! A small reverse-mode recorder over the tensor kernels.
//!
//! Networks are written once against [`Tape`]. Inference runs the same code
//! and simply never calls [`Tape::backward`]; training seeds the loss
//! gradient and collects per-parameter gradients by name. Parameters used
//! more than once (the shared recursive unit) accumulate their gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops::{self, ConvParams, NormParams};
use crate::tensor::{Dims, Tensor};
use crate::weights::Params;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Node {
    Conv {
        x: Var,
        layer: String,
        stride: usize,
    },
    ConvT {
        x: Var,
        layer: String,
    },
    Norm {
        x: Var,
        layer: String,
    },
    Relu {
        x: Var,
    },
    Tanh {
        x: Var,
        y: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Resize {
        x: Var,
    },
    Input,
}

pub type ParamGrads = BTreeMap<String, Tensor<f32>>;

pub struct Tape<'p> {
    params: &'p dyn Params,
    values: Vec<Tensor<f32>>,
    nodes: Vec<Node>,
}

fn param_name(layer: &str, field: &str) -> String {
    format!("{layer}.{field}")
}

fn vec_of(t: &Tensor<f32>) -> Vec<f32> {
    t.data().to_vec()
}

fn as_row(v: Vec<f32>) -> Tensor<f32> {
    let n = v.len();
    Tensor::from_vec(Dims::new(1, 1, 1, n), v).expect("length matches dims")
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p dyn Params) -> Self {
        Tape {
            params,
            values: Vec::new(),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<f32>, node: Node) -> Var {
        self.values.push(value);
        self.nodes.push(node);
        Var(self.values.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<f32>) -> Var {
        self.push(value, Node::Input)
    }

    pub fn value(&self, v: Var) -> &Tensor<f32> {
        &self.values[v.0]
    }

    pub fn take(mut self, v: Var) -> Tensor<f32> {
        std::mem::replace(&mut self.values[v.0], Tensor::zeros(Dims::new(0, 0, 0, 0)))
    }

    fn conv_params(&self, layer: &str, stride: usize) -> Result<ConvParams<f32>> {
        let kernel = self.params.require(&param_name(layer, "weight"))?.clone();
        let bias = vec_of(self.params.require(&param_name(layer, "bias"))?);
        ConvParams::new(kernel, bias, stride)
    }

    fn norm_params(&self, layer: &str) -> Result<NormParams<f32>> {
        Ok(NormParams::new(
            vec_of(self.params.require(&param_name(layer, "gamma"))?),
            vec_of(self.params.require(&param_name(layer, "beta"))?),
        ))
    }

    pub fn conv(&mut self, x: Var, layer: &str, stride: usize) -> Result<Var> {
        let p = self.conv_params(layer, stride)?;
        let y = ops::conv2d(self.value(x), &p)?;
        Ok(self.push(
            y,
            Node::Conv {
                x,
                layer: layer.to_string(),
                stride,
            },
        ))
    }

    pub fn conv_transpose(&mut self, x: Var, layer: &str) -> Result<Var> {
        let p = self.conv_params(layer, 2)?;
        let y = ops::conv2d_transpose(self.value(x), &p)?;
        Ok(self.push(
            y,
            Node::ConvT {
                x,
                layer: layer.to_string(),
            },
        ))
    }

    pub fn norm(&mut self, x: Var, layer: &str) -> Result<Var> {
        let p = self.norm_params(layer)?;
        let y = ops::instance_norm(self.value(x), &p)?;
        Ok(self.push(
            y,
            Node::Norm {
                x,
                layer: layer.to_string(),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = ops::relu(self.value(x))?;
        Ok(self.push(y, Node::Relu { x }))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let y = ops::tanh_act(self.value(x))?;
        let id = Var(self.values.len());
        Ok(self.push(y, Node::Tanh { x, y: id }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b))?;
        let y = y.ensure_finite("add")?;
        Ok(self.push(y, Node::Add { a, b }))
    }

    /// Channel concatenation of two tensors with equal `n`, `h`, `w`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (da, db) = (ta.dims(), tb.dims());
        if da.n != db.n || da.h != db.h || da.w != db.w {
            return Err(Error::shape("concat", format!("{da} vs {db}")));
        }
        let dims = Dims::new(da.n, da.c + db.c, da.h, da.w);
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..da.n {
            for c in 0..da.c {
                data.extend_from_slice(ta.plane(n, c));
            }
            for c in 0..db.c {
                data.extend_from_slice(tb.plane(n, c));
            }
        }
        let y = Tensor::from_vec(dims, data)?;
        Ok(self.push(y, Node::Concat { a, b }))
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let y = ops::bilinear_resize(self.value(x), out_h, out_w)?;
        Ok(self.push(y, Node::Resize { x }))
    }

    /// Back-propagates the seeded output gradients through the whole tape.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<f32>)>) -> Result<ParamGrads> {
        let mut grads: Vec<Option<Tensor<f32>>> = vec![None; self.values.len()];
        for (v, g) in seeds {
            accumulate(&mut grads, v, g)?;
        }
        let mut params = ParamGrads::new();
        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[i].take() else {
                continue;
            };
            match &self.nodes[i] {
                Node::Input => {}
                Node::Conv { x, layer, stride } => {
                    let p = self.conv_params(layer, *stride)?;
                    let g = ops::conv2d_backward(self.value(*x), &p, &dy)?;
                    accumulate(&mut grads, *x, g.dx)?;
                    add_param(&mut params, param_name(layer, "weight"), g.dkernel)?;
                    add_param(&mut params, param_name(layer, "bias"), as_row(g.dbias))?;
                }
                Node::ConvT { x, layer } => {
                    let p = self.conv_params(layer, 2)?;
                    let g = ops::conv2d_transpose_backward(self.value(*x), &p, &dy)?;
                    accumulate(&mut grads, *x, g.dx)?;
                    add_param(&mut params, param_name(layer, "weight"), g.dkernel)?;
                    add_param(&mut params, param_name(layer, "bias"), as_row(g.dbias))?;
                }
                Node::Norm { x, layer } => {
                    let p = self.norm_params(layer)?;
                    let g = ops::instance_norm_backward(self.value(*x), &p, &dy)?;
                    accumulate(&mut grads, *x, g.dx)?;
                    add_param(&mut params, param_name(layer, "gamma"), as_row(g.dgamma))?;
                    add_param(&mut params, param_name(layer, "beta"), as_row(g.dbeta))?;
                }
                Node::Relu { x } => {
                    let dx = ops::relu_backward(self.value(*x), &dy)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Node::Tanh { x, y } => {
                    let dx = ops::tanh_backward(self.value(*y), &dy)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Node::Add { a, b } => {
                    accumulate(&mut grads, *a, dy.clone())?;
                    accumulate(&mut grads, *b, dy)?;
                }
                Node::Concat { a, b } => {
                    let (da, db) = (self.value(*a).dims(), self.value(*b).dims());
                    let mut ga = Vec::with_capacity(da.len());
                    let mut gb = Vec::with_capacity(db.len());
                    for n in 0..da.n {
                        for c in 0..da.c {
                            ga.extend_from_slice(dy.plane(n, c));
                        }
                        for c in 0..db.c {
                            gb.extend_from_slice(dy.plane(n, da.c + c));
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(da, ga)?)?;
                    accumulate(&mut grads, *b, Tensor::from_vec(db, gb)?)?;
                }
                Node::Resize { x } => {
                    let dx = ops::bilinear_resize_backward(self.value(*x).dims(), &dy)?;
                    accumulate(&mut grads, *x, dx)?;
                }
            }
        }
        Ok(params)
    }
}

fn accumulate(grads: &mut [Option<Tensor<f32>>], v: Var, g: Tensor<f32>) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn add_param(params: &mut ParamGrads, name: String, g: Tensor<f32>) -> Result<()> {
    match params.get_mut(&name) {
        Some(acc) => {
            let g = g.reshape(acc.dims())?;
            acc.add_assign(&g)
        }
        None => {
            params.insert(name, g);
            Ok(())
        }
    }
}
