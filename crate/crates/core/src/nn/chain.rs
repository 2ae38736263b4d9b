use super::ops;
use super::{Grads, ParamStore, Scalar, Tensor};

/// One layer of a sequential stack. `param` is the store index of the
/// layer's weight; its bias follows at `param + 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv {
        name: String,
        ci: usize,
        co: usize,
        kernel: usize,
        stride: usize,
        param: usize,
    },
    Linear {
        name: String,
        inp: usize,
        out: usize,
        param: usize,
    },
    Relu,
    MaxPool2,
    Gap,
}

impl Op {
    pub fn name(&self) -> String {
        match self {
            Op::Conv { name, .. } | Op::Linear { name, .. } => name.clone(),
            Op::Relu => "relu".into(),
            Op::MaxPool2 => "maxpool2".into(),
            Op::Gap => "gap".into(),
        }
    }

    /// Trainable parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        match self {
            Op::Conv {
                ci, co, kernel, ..
            } => co * ci * kernel * kernel + co,
            Op::Linear { inp, out, .. } => inp * out + out,
            _ => 0,
        }
    }

    /// Per-item output shape `(c, h, w)` for input `(c, h, w)`.
    pub fn out_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize), String> {
        match self {
            Op::Conv {
                name,
                ci,
                co,
                kernel,
                stride,
                ..
            } => {
                if c != *ci {
                    return Err(format!("{name} expects {ci} channels, got {c}"));
                }
                Ok((
                    *co,
                    ops::conv_out_size(h, *kernel, *stride),
                    ops::conv_out_size(w, *kernel, *stride),
                ))
            }
            Op::Linear { name, inp, out, .. } => {
                if c * h * w != *inp {
                    return Err(format!("{name} expects {inp} inputs, got {}", c * h * w));
                }
                Ok((*out, 1, 1))
            }
            Op::Relu => Ok((c, h, w)),
            Op::MaxPool2 => {
                if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
                    return Err(format!("max pooling needs even spatial size, got {h}x{w}"));
                }
                Ok((c, h / 2, w / 2))
            }
            Op::Gap => Ok((c, 1, 1)),
        }
    }
}

/// Sequential stack of [`Op`]s sharing a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chain {
    pub ops: Vec<Op>,
}

/// Activations recorded by [`Chain::forward`]: `acts[0]` is the input and
/// `acts[i + 1]` the output of op `i`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub acts: Vec<Tensor<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("non-empty trace")
    }
}

impl Chain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn conv<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        name: &str,
        ci: usize,
        co: usize,
        stride: usize,
    ) -> &mut Self {
        let kernel = 3;
        let param = store.push(format!("{name}.weight"), vec![co, ci, kernel, kernel]);
        store.push(format!("{name}.bias"), vec![co]);
        self.ops.push(Op::Conv {
            name: name.to_string(),
            ci,
            co,
            kernel,
            stride,
            param,
        });
        self
    }

    pub fn linear<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
    ) -> &mut Self {
        let param = store.push(format!("{name}.weight"), vec![out, inp]);
        store.push(format!("{name}.bias"), vec![out]);
        self.ops.push(Op::Linear {
            name: name.to_string(),
            inp,
            out,
            param,
        });
        self
    }

    pub fn relu(&mut self) -> &mut Self {
        self.ops.push(Op::Relu);
        self
    }

    pub fn pool(&mut self) -> &mut Self {
        self.ops.push(Op::MaxPool2);
        self
    }

    pub fn gap(&mut self) -> &mut Self {
        self.ops.push(Op::Gap);
        self
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: Tensor<T>) -> Trace<T> {
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        acts.push(x);
        for op in &self.ops {
            let x = acts.last().expect("input");
            let y = match op {
                Op::Conv {
                    co,
                    kernel,
                    stride,
                    param,
                    ..
                } => ops::conv2d_forward(
                    x,
                    store.data(*param),
                    store.data(*param + 1),
                    *co,
                    *kernel,
                    *stride,
                ),
                Op::Linear { out, param, .. } => {
                    ops::linear_forward(x, store.data(*param), store.data(*param + 1), *out)
                }
                Op::Relu => ops::relu_forward(x),
                Op::MaxPool2 => ops::maxpool2_forward(x),
                Op::Gap => ops::gap_forward(x),
            };
            acts.push(y);
        }
        Trace { acts }
    }

    /// Back-propagates `dy` (gradient at the chain output) down to
    /// `acts[stop]` and returns the gradient there. `tap(i, g)` observes the
    /// gradient at `acts[i]` for every visited point. With `stop == 0` and
    /// `need_input == false` the first layer's input gradient is skipped and
    /// an empty tensor is returned.
    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        trace: &Trace<T>,
        dy: Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        stop: usize,
        need_input: bool,
        tap: &mut dyn FnMut(usize, &Tensor<T>),
    ) -> Tensor<T> {
        let mut g = dy;
        tap(self.ops.len(), &g);
        for i in (stop..self.ops.len()).rev() {
            let x = &trace.acts[i];
            let need_dx = i > 0 || need_input;
            let next = match &self.ops[i] {
                Op::Conv {
                    kernel,
                    stride,
                    param,
                    ..
                } => {
                    let pg = grads.as_deref_mut().map(|gr| gr.pair_mut(*param));
                    ops::conv2d_backward(x, &g, store.data(*param), *kernel, *stride, pg, need_dx)
                }
                Op::Linear { param, .. } => {
                    let pg = grads.as_deref_mut().map(|gr| gr.pair_mut(*param));
                    ops::linear_backward(x, &g, store.data(*param), pg, need_dx)
                }
                Op::Relu => Some(ops::relu_backward(&trace.acts[i + 1], &g)),
                Op::MaxPool2 => Some(ops::maxpool2_backward(x, &g)),
                Op::Gap => Some(ops::gap_backward(x.shape, &g)),
            };
            match next {
                Some(t) => {
                    g = t;
                    tap(i, &g);
                }
                None => return Tensor::zeros([0, 0, 0, 0]),
            }
        }
        g
    }

    /// Shapes after each op for a per-item input shape.
    pub fn shapes(&self, input: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>, String> {
        let mut out = Vec::with_capacity(self.ops.len());
        let mut s = input;
        for op in &self.ops {
            s = op.out_shape(s)?;
            out.push(s);
        }
        Ok(out)
    }
}
