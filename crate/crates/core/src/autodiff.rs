//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node whose inputs already exist, so the node
//! order is a topological order and backward is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::ops::{self, Activation, ConvGeom, Padding, SeluParams};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
        cin: usize,
        cout: usize,
    },
    Depthwise {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
        c: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Act {
        x: Var,
        kind: Activation,
        params: SeluParams,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat {
        a: Var,
        b: Var,
        ca: usize,
        cb: usize,
    },
    FoldTime(Var),
    AvgPool(Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    SoftmaxXent {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Sum(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv",
            Op::Depthwise { .. } => "depthwise_conv",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Act { .. } => "activation",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Concat { .. } => "concat",
            Op::FoldTime(_) => "fold_time",
            Op::AvgPool(_) => "avg_pool",
            Op::Dense { .. } => "dense",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Sum(_) => "sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv { x, k, b, .. } | Op::Depthwise { x, k, b, .. } => vec![x, k, b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Act { x, .. } | Op::Scale(x, _) | Op::FoldTime(x) | Op::AvgPool(x) | Op::Sum(x) => vec![x],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Concat { a, b, .. } => vec![a, b],
            Op::Dense { x, w, b } => vec![x, w, b],
            Op::SoftmaxXent { logits, .. } => vec![logits],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a train-mode batch norm, for the running averages.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Records operations for one forward pass. Confined to a single thread.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input ids of every node, in tape order.
    pub fn node_inputs(&self) -> Vec<(&'static str, Vec<Var>)> {
        self.nodes.iter().map(|n| (n.op.name(), n.op.inputs())).collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as constant data.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(&mut self, x: Var, k: Var, b: Var, stride: [usize; 3], padding: Padding) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let geom = ops::conv3d_geom(xv, kv, bv, stride, padding)?;
        let (cin, cout) = (kv.shape()[3], kv.shape()[4]);
        let data = ops::conv3d_raw(xv.data(), kv.data(), bv.data(), &geom, cin, cout);
        let [ot, oh, ow] = geom.output;
        let y = Tensor::new(&[geom.batch, ot, oh, ow, cout], data)?;
        Ok(self.push(
            y,
            Op::Conv {
                x,
                k,
                b,
                geom,
                cin,
                cout,
            },
        ))
    }

    /// 2D convolution; `x [N,H,W,Cin]`, `k [kh,kw,Cin,Cout]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: [usize; 2], padding: Padding) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let geom = ops::conv2d_geom(xv, kv, bv, stride, padding)?;
        let (cin, cout) = (kv.shape()[2], kv.shape()[3]);
        let data = ops::conv3d_raw(xv.data(), kv.data(), bv.data(), &geom, cin, cout);
        let y = Tensor::new(&[geom.batch, geom.output[1], geom.output[2], cout], data)?;
        Ok(self.push(
            y,
            Op::Conv {
                x,
                k,
                b,
                geom,
                cin,
                cout,
            },
        ))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, b: Var, stride: [usize; 2], padding: Padding) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let geom = ops::depthwise_geom(xv, kv, bv, stride, padding)?;
        let c = xv.channels();
        let data = ops::depthwise_raw(xv.data(), kv.data(), bv.data(), &geom, c);
        let y = Tensor::new(&[geom.batch, geom.output[1], geom.output[2], c], data)?;
        Ok(self.push(y, Op::Depthwise { x, k, b, geom, c }))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let c = self.value(x).channels();
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "input {:?} with gamma {:?}, beta {:?}",
                    self.value(x).shape(),
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        Ok(c)
    }

    /// Train-mode batch norm. Returns the output and the batch statistics used.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let c = self.check_bn(x, gamma, beta)?;
        if self.value(x).numel() / c < 2 {
            return Err(Error::shape(
                "batch_norm",
                "train mode needs at least two values per channel",
            ));
        }
        let out = ops::bn_train_raw(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let y = Tensor::new(self.value(x).shape(), out.y)?;
        let v = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
                train: true,
            },
        );
        Ok((
            v,
            BatchStats {
                mean: out.mean,
                var: out.var,
            },
        ))
    }

    /// Eval-mode batch norm using fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let c = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::CorruptedState(format!(
                "running stats have {}/{} entries for {c} channels",
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::CorruptedState("running variance is negative or NaN".into()));
        }
        let (y, xhat, inv_std) = ops::bn_eval_raw(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            mean,
            var,
            eps,
        );
        let y = Tensor::new(self.value(x).shape(), y)?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: false,
            },
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation, params: SeluParams) -> Var {
        let y = ops::activation(self.value(x), kind, params);
        self.push(y, Op::Act { x, kind, params })
    }

    pub fn selu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Selu, SeluParams::STANDARD)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu, SeluParams::STANDARD)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let y = Tensor::new(av.shape(), data)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let y = self.value(x).map(|v| v * s);
        self.push(y, Op::Scale(x, s))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        let (ca, cb) = (self.value(a).channels(), self.value(b).channels());
        Ok(self.push(y, Op::Concat { a, b, ca, cb }))
    }

    pub fn fold_time(&mut self, x: Var) -> Result<Var> {
        let y = ops::fold_time(self.value(x))?;
        Ok(self.push(y, Op::FoldTime(x)))
    }

    /// Fold both streams' time axes into channels and concatenate.
    pub fn temporal_fuse(&mut self, spatial: Var, temporal: Var) -> Result<Var> {
        let (s, t) = (self.value(spatial).shape(), self.value(temporal).shape());
        if s.len() != 5 || t.len() != 5 || s[0] != t[0] || s[2..] != t[2..] {
            return Err(Error::shape(
                "temporal_fuse",
                format!("{s:?} vs {t:?}: N, H, W and C must agree"),
            ));
        }
        let fs = self.fold_time(spatial)?;
        let ft = self.fold_time(temporal)?;
        self.concat_channels(fs, ft)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::AvgPool(x)))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    /// Mean cross-entropy over the batch; a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let loss = ops::softmax_cross_entropy(lv, labels)?;
        let probs = ops::softmax_rows(lv)?.into_data();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("loss {loss:?} is not on this tape")));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let need = |v: Var| self.nodes[v.0].requires_grad;
            let mut contrib: Vec<(Var, Vec<T>)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Conv {
                    x,
                    k,
                    b,
                    geom,
                    cin,
                    cout,
                } => {
                    let gr = ops::conv3d_backward(
                        self.value(*x).data(),
                        self.value(*k).data(),
                        &g,
                        geom,
                        *cin,
                        *cout,
                        need(*x),
                    );
                    if let Some(dx) = gr.dx {
                        contrib.push((*x, dx));
                    }
                    contrib.push((*k, gr.dk));
                    contrib.push((*b, gr.db));
                }
                Op::Depthwise { x, k, b, geom, c } => {
                    let gr = ops::depthwise_backward(
                        self.value(*x).data(),
                        self.value(*k).data(),
                        &g,
                        geom,
                        *c,
                        need(*x),
                    );
                    if let Some(dx) = gr.dx {
                        contrib.push((*x, dx));
                    }
                    contrib.push((*k, gr.dk));
                    contrib.push((*b, gr.db));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let gv = self.value(*gamma).data();
                    let (dx, dg, db) = if *train {
                        ops::bn_train_backward(&g, xhat, gv, inv_std)
                    } else {
                        ops::bn_eval_backward(&g, xhat, gv, inv_std)
                    };
                    contrib.push((*x, dx));
                    contrib.push((*gamma, dg));
                    contrib.push((*beta, db));
                }
                Op::Act { x, kind, params } => {
                    let xv = self.value(*x).data();
                    let dx = match kind {
                        Activation::Selu => xv
                            .iter()
                            .zip(&g)
                            .map(|(&v, &gv)| gv * ops::selu_grad(v, *params))
                            .collect(),
                        Activation::Relu => xv
                            .iter()
                            .zip(&g)
                            .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                            .collect(),
                    };
                    contrib.push((*x, dx));
                }
                Op::Add(a, b) => {
                    contrib.push((*a, g.clone()));
                    contrib.push((*b, g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    contrib.push((*a, g.iter().zip(bv).map(|(&gv, &y)| gv * y).collect()));
                    contrib.push((*b, g.iter().zip(av).map(|(&gv, &y)| gv * y).collect()));
                }
                Op::Scale(x, s) => contrib.push((*x, g.iter().map(|&v| v * *s).collect())),
                Op::Concat { a, b, ca, cb } => {
                    let rows = g.len() / (ca + cb);
                    let mut ga = Vec::with_capacity(rows * ca);
                    let mut gb = Vec::with_capacity(rows * cb);
                    for row in g.chunks_exact(ca + cb) {
                        ga.extend_from_slice(&row[..*ca]);
                        gb.extend_from_slice(&row[*ca..]);
                    }
                    contrib.push((*a, ga));
                    contrib.push((*b, gb));
                }
                Op::FoldTime(x) => {
                    contrib.push((*x, ops::unfold_time(&g, self.value(*x).shape())));
                }
                Op::AvgPool(x) => {
                    let xs = self.value(*x);
                    let (n, c) = (xs.shape()[0], xs.channels());
                    let per = xs.numel() / (n * c);
                    let scale = T::one() / T::from_usize(per).unwrap();
                    let mut dx = Vec::with_capacity(xs.numel());
                    for ni in 0..n {
                        let gr = &g[ni * c..(ni + 1) * c];
                        for _ in 0..per {
                            dx.extend(gr.iter().map(|&v| v * scale));
                        }
                    }
                    contrib.push((*x, dx));
                }
                Op::Dense { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, d) = (xv.shape()[0], xv.shape()[1]);
                    let k = wv.shape()[1];
                    if need(*x) {
                        let mut dx = vec![T::zero(); n * d];
                        for r in 0..n {
                            let gr = &g[r * k..(r + 1) * k];
                            for i in 0..d {
                                let wrow = &wv.data()[i * k..(i + 1) * k];
                                dx[r * d + i] = wrow.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            }
                        }
                        contrib.push((*x, dx));
                    }
                    let mut dw = vec![T::zero(); d * k];
                    let mut db = vec![T::zero(); k];
                    for r in 0..n {
                        let gr = &g[r * k..(r + 1) * k];
                        for (acc, &gv) in db.iter_mut().zip(gr) {
                            *acc = *acc + gv;
                        }
                        for i in 0..d {
                            let xval = xv.data()[r * d + i];
                            for (acc, &gv) in dw[i * k..(i + 1) * k].iter_mut().zip(gr) {
                                *acc = *acc + xval * gv;
                            }
                        }
                    }
                    contrib.push((*w, dw));
                    contrib.push((*b, db));
                }
                Op::SoftmaxXent { logits, probs, labels } => {
                    let k = self.value(*logits).shape()[1];
                    let scale = g[0] / T::from_usize(labels.len()).unwrap();
                    let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        dl[r * k + l] = dl[r * k + l] - scale;
                    }
                    contrib.push((*logits, dl));
                }
                Op::Sum(x) => {
                    contrib.push((*x, vec![g[0]; self.value(*x).numel()]));
                }
            }
            for (v, d) in contrib {
                if !need(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(d),
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| matches!(n.op, Op::Leaf))
                    .map(|d| Tensor::new(n.value.shape(), d).expect("gradient matches value shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }
}
