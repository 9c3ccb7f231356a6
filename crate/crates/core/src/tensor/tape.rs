use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::kernels::{self, ConvDims};
use super::{resolve_axis, split_axis, ParameterSet, Tensor};
use crate::error::{invalid, shape_err, FavcError, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Elu,
    LeakyRelu(f64),
    Sigmoid,
    Abs,
    LogEps(f64),
    Scale(f64),
    AddScalar(f64),
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum ReduceKind {
    Sum,
    Mean,
    Max,
    Min,
    Std,
}

enum Op {
    Leaf,
    Param,
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        dims: ConvDims,
    },
    ConvT1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        dims: ConvDims,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        rows: usize,
        nin: usize,
        nout: usize,
    },
    Bmm {
        a: NodeId,
        b: NodeId,
        dims: [usize; 4],
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        layout: (usize, usize, usize),
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        train: bool,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        width: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Unary {
        x: NodeId,
        kind: UnaryKind,
    },
    Binary {
        a: NodeId,
        b: NodeId,
        kind: BinaryKind,
    },
    Softmax {
        x: NodeId,
        width: usize,
    },
    Reduce {
        x: NodeId,
        kind: ReduceKind,
        layout: (usize, usize, usize),
        arg: Vec<usize>,
    },
    Concat {
        inputs: Vec<NodeId>,
        outer: usize,
        sizes: Vec<usize>,
        inner: usize,
    },
    Reshape {
        x: NodeId,
    },
    Narrow {
        x: NodeId,
        layout: (usize, usize, usize),
        start: usize,
        count: usize,
    },
    IndexSelect {
        x: NodeId,
        layout: (usize, usize, usize),
        indices: Vec<usize>,
    },
    Frames {
        x: NodeId,
        rows: usize,
        len: usize,
        win: usize,
        hop: usize,
        count: usize,
    },
    RfftPower {
        x: NodeId,
        rows: usize,
        n: usize,
        spectrum: Vec<Complex64>,
    },
    SignedNormalize {
        x: NodeId,
        layout: (usize, usize, usize),
        sums: Vec<f64>,
    },
    BlockMix {
        w: NodeId,
        h: NodeId,
        dims: BlockMixDims,
    },
    ChannelAffine {
        x: NodeId,
        layout: (usize, usize, usize),
        scale: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug)]
struct BlockMixDims {
    batch: usize,
    targets: usize,
    sources: usize,
    blocks: usize,
    channels: usize,
    len: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
    planner: FftPlanner<f64>,
    plans: HashMap<usize, Arc<dyn Fft<f64>>>,
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
            param_nodes: HashMap::new(),
            planner: FftPlanner::new(),
            plans: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(FavcError::NonFinite(name.to_string()));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(id)
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Records a gradient-carrying leaf that is not part of a parameter set.
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId> {
        self.push("variable", value, Op::Leaf, true)
    }

    /// Registers parameter `name` from `params`; repeated calls return the same node.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<NodeId> {
        let id = params
            .id(name)
            .ok_or_else(|| invalid(format!("unknown parameter `{name}`")))?;
        if let Some(&node) = self.param_nodes.get(&id) {
            return Ok(node);
        }
        let trainable = params.kind(id).trainable();
        let node = self.push("param", params.value(id).clone(), Op::Param, trainable)?;
        self.param_nodes.insert(id, node);
        Ok(node)
    }

    fn fft(&mut self, n: usize) -> Arc<dyn Fft<f64>> {
        let planner = &mut self.planner;
        self.plans
            .entry(n)
            .or_insert_with(|| planner.plan_fft_forward(n))
            .clone()
    }

    // ---------------------------------------------------------------- convolution

    /// `x: [N, C_in, L]` (or `[C_in, L]`), `w: [C_out, C_in, K]` with odd `K`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let (n, cin, lin, squeeze) = conv_input(self.shape(x), "conv1d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != cin {
            return Err(shape_err("conv1d", format!("kernel {ws:?} does not accept {cin} input channels")));
        }
        let (cout, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(shape_err("conv1d", format!("kernel length {k} must be odd")));
        }
        if stride == 0 || lin + 2 * pad < k {
            return Err(shape_err("conv1d", format!("length {lin} with pad {pad} is shorter than kernel {k}")));
        }
        check_bias(self, b, cout, "conv1d")?;
        let lout = (lin + 2 * pad - k) / stride + 1;
        let dims = ConvDims {
            n,
            cin,
            cout,
            lin,
            lout,
            k,
            stride,
            pad,
        };
        let y = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
        );
        let shape = if squeeze { vec![cout, lout] } else { vec![n, cout, lout] };
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push("conv1d", Tensor::new(shape, y)?, Op::Conv1d { x, w, b, dims }, rg)
    }

    /// `x: [N, C_in, L]`, `w: [C_in, C_out, K]`. Natural output length is
    /// `(L-1)*stride - 2*pad + K`; `crop_to` keeps the leading samples.
    pub fn conv_transpose1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
        crop_to: Option<usize>,
    ) -> Result<NodeId> {
        let (n, cin, lin, squeeze) = conv_input(self.shape(x), "conv_transpose1d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[0] != cin {
            return Err(shape_err(
                "conv_transpose1d",
                format!("kernel {ws:?} does not accept {cin} input channels"),
            ));
        }
        let (cout, k) = (ws[1], ws[2]);
        if stride == 0 || lin == 0 || (lin - 1) * stride + k < 2 * pad + 1 {
            return Err(shape_err("conv_transpose1d", "empty output"));
        }
        let natural = (lin - 1) * stride + k - 2 * pad;
        let lout = match crop_to {
            Some(c) if c > natural => {
                return Err(shape_err(
                    "conv_transpose1d",
                    format!("crop length {c} exceeds natural length {natural}"),
                ))
            }
            Some(c) => c,
            None => natural,
        };
        check_bias(self, b, cout, "conv_transpose1d")?;
        let dims = ConvDims {
            n,
            cin,
            cout,
            lin,
            lout,
            k,
            stride,
            pad,
        };
        let y = kernels::conv_transpose1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
        );
        let shape = if squeeze { vec![cout, lout] } else { vec![n, cout, lout] };
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push("conv_transpose1d", Tensor::new(shape, y)?, Op::ConvT1d { x, w, b, dims }, rg)
    }

    // ---------------------------------------------------------------- dense

    /// `x: [.., n]`, `w: [m, n]`, `b: [m]` → `[.., m]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let nin = *xs.last().ok_or_else(|| shape_err("linear", "scalar input"))?;
        if ws.len() != 2 || ws[1] != nin {
            return Err(shape_err("linear", format!("weight {ws:?} cannot multiply input {xs:?}")));
        }
        let nout = ws[0];
        check_bias(self, b, nout, "linear")?;
        let rows = self.value(x).len() / nin.max(1);
        let y = kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            rows,
            nin,
            nout,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = nout;
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push(
            "linear",
            Tensor::new(shape, y)?,
            Op::Linear {
                x,
                w,
                b,
                rows,
                nin,
                nout,
            },
            rg,
        )
    }

    /// Batched matrix product `[P, m, k] x [P, k, n] -> [P, m, n]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] || as_[2] != bs[1] {
            return Err(shape_err("bmm", format!("{as_:?} x {bs:?}")));
        }
        let dims = [as_[0], as_[1], as_[2], bs[2]];
        let y = kernels::bmm_forward(
            self.value(a).data(),
            self.value(b).data(),
            dims[0],
            dims[1],
            dims[2],
            dims[3],
        );
        let rg = self.requires(a) || self.requires(b);
        self.push(
            "bmm",
            Tensor::new(vec![dims[0], dims[1], dims[3]], y)?,
            Op::Bmm { a, b, dims },
            rg,
        )
    }

    // ---------------------------------------------------------------- normalization

    /// Training-mode batch normalization of `[N, C]` or `[N, C, L]` over every axis but `C`.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let layout = bn_layout(self.shape(x))?;
        let (outer, c, inner) = layout;
        check_affine(self, gamma, beta, c, "batch_norm")?;
        let m = (outer * inner) as f64;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for o in 0..outer {
            for ch in 0..c {
                mean[ch] += xv[(o * c + ch) * inner..][..inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for o in 0..outer {
            for ch in 0..c {
                var[ch] += xv[(o * c + ch) * inner..][..inner]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.finish_bn(x, gamma, beta, layout, mean, var, inv_std, true)
    }

    /// Evaluation-mode batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let layout = bn_layout(self.shape(x))?;
        let c = layout.1;
        check_affine(self, gamma, beta, c, "batch_norm_eval")?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batch_norm_eval", "running statistics do not match channels"));
        }
        let inv_std = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.finish_bn(
            x,
            gamma,
            beta,
            layout,
            running_mean.to_vec(),
            running_var.to_vec(),
            inv_std,
            false,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_bn(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        layout: (usize, usize, usize),
        mean: Vec<f64>,
        var: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    ) -> Result<NodeId> {
        let (outer, c, inner) = layout;
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut y = vec![0.0; xv.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    y[i] = g[ch] * xhat[i] + bt[ch];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            "batch_norm",
            Tensor::new(shape, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                mean,
                var,
                train,
            },
            rg,
        )
    }

    /// Batch mean and unbiased batch variance recorded by a training-mode batch norm.
    pub fn batch_stats(&self, id: NodeId) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.nodes[id.0].op {
            Op::BatchNorm {
                mean,
                var,
                layout,
                train: true,
                ..
            } => {
                let m = (layout.0 * layout.2) as f64;
                let corr = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                Some((mean.clone(), var.iter().map(|v| v * corr).collect()))
            }
            _ => None,
        }
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
        check_affine(self, gamma, beta, width, "layer_norm")?;
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let rows = xv.len() / width;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut y = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * width..][..width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..width {
                let h = (row[i] - mean) * is;
                xhat[r * width + i] = h;
                y[r * width + i] = g[i] * h + bt[i];
            }
        }
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            "layer_norm",
            Tensor::new(shape, y)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                width,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    // ---------------------------------------------------------------- pointwise

    fn unary(&mut self, x: NodeId, kind: UnaryKind, name: &'static str) -> Result<NodeId> {
        let src = self.value(x);
        let data: Vec<f64> = src
            .data()
            .iter()
            .map(|&v| match kind {
                UnaryKind::Elu => {
                    if v > 0.0 {
                        v
                    } else {
                        v.exp_m1()
                    }
                }
                UnaryKind::LeakyRelu(s) => {
                    if v > 0.0 {
                        v
                    } else {
                        s * v
                    }
                }
                UnaryKind::Sigmoid => sigmoid(v),
                UnaryKind::Abs => v.abs(),
                UnaryKind::LogEps(e) => (v + e).ln(),
                UnaryKind::Scale(c) => c * v,
                UnaryKind::AddScalar(c) => v + c,
                UnaryKind::Square => v * v,
            })
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.requires(x);
        self.push(name, value, Op::Unary { x, kind }, rg)
    }

    pub fn elu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, UnaryKind::Elu, "elu")
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.unary(x, UnaryKind::LeakyRelu(slope), "leaky_relu")
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, UnaryKind::Sigmoid, "sigmoid")
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, UnaryKind::Abs, "abs")
    }

    /// `ln(x + eps)`.
    pub fn log_eps(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        self.unary(x, UnaryKind::LogEps(eps), "log")
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(x, UnaryKind::Scale(c), "scale")
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(x, UnaryKind::AddScalar(c), "add_scalar")
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, UnaryKind::Square, "square")
    }

    fn binary(&mut self, a: NodeId, b: NodeId, kind: BinaryKind, name: &'static str) -> Result<NodeId> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        let out = broadcast_shape(&as_, &bs).ok_or_else(|| shape_err(name, format!("{as_:?} vs {bs:?}")))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data: Vec<f64> = if as_ == bs {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ia = broadcast_index(&out, &as_);
            let ib = broadcast_index(&out, &bs);
            ia.iter().zip(&ib).map(|(&i, &j)| f(av[i], bv[j])).collect()
        };
        let rg = self.requires(a) || self.requires(b);
        self.push(name, Tensor::new(out, data)?, Op::Binary { a, b, kind }, rg)
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryKind::Add, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryKind::Sub, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryKind::Mul, "mul")
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, BinaryKind::Div, "div")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let width = shape.last().copied().unwrap_or(0);
        if width == 0 {
            return Err(shape_err("softmax", "empty axis"));
        }
        let xv = self.value(x).data();
        let mut y = vec![0.0; xv.len()];
        for (src, dst) in xv.chunks(width).zip(y.chunks_mut(width)) {
            let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - m).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        let rg = self.requires(x);
        self.push("softmax", Tensor::new(shape, y)?, Op::Softmax { x, width }, rg)
    }

    // ---------------------------------------------------------------- reductions

    fn reduce(&mut self, x: NodeId, axis: isize, kind: ReduceKind, name: &'static str) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis(name, shape.len(), axis)?;
        let layout = split_axis(&shape, axis);
        let (outer, len, inner) = layout;
        if len == 0 {
            return Err(shape_err(name, "empty axis"));
        }
        let xv = self.value(x).data();
        let mut y = vec![0.0; outer * inner];
        let mut arg = Vec::new();
        if matches!(kind, ReduceKind::Max | ReduceKind::Min) {
            arg = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| xv[(o * len + j) * inner + i];
                let out = o * inner + i;
                y[out] = match kind {
                    ReduceKind::Sum => (0..len).map(at).sum(),
                    ReduceKind::Mean => (0..len).map(at).sum::<f64>() / len as f64,
                    ReduceKind::Max | ReduceKind::Min => {
                        let mut best = 0;
                        for j in 1..len {
                            let better = match kind {
                                ReduceKind::Max => at(j) > at(best),
                                _ => at(j) < at(best),
                            };
                            if better {
                                best = j;
                            }
                        }
                        arg[out] = best;
                        at(best)
                    }
                    ReduceKind::Std => {
                        let m = (0..len).map(at).sum::<f64>() / len as f64;
                        ((0..len).map(|j| (at(j) - m).powi(2)).sum::<f64>() / len as f64).sqrt()
                    }
                };
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.requires(x);
        self.push(
            name,
            Tensor::new(out_shape, y)?,
            Op::Reduce {
                x,
                kind,
                layout,
                arg,
            },
            rg,
        )
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: isize) -> Result<NodeId> {
        self.reduce(x, axis, ReduceKind::Sum, "sum")
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: isize) -> Result<NodeId> {
        self.reduce(x, axis, ReduceKind::Mean, "mean")
    }

    pub fn max_axis(&mut self, x: NodeId, axis: isize) -> Result<NodeId> {
        self.reduce(x, axis, ReduceKind::Max, "max")
    }

    pub fn min_axis(&mut self, x: NodeId, axis: isize) -> Result<NodeId> {
        self.reduce(x, axis, ReduceKind::Min, "min")
    }

    /// Population standard deviation; a length-1 axis yields 0.
    pub fn std_axis(&mut self, x: NodeId, axis: isize) -> Result<NodeId> {
        self.reduce(x, axis, ReduceKind::Std, "std")
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.sum_axis(flat, 0)
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.mean_axis(flat, 0)
    }

    // ---------------------------------------------------------------- layout

    pub fn concat(&mut self, inputs: &[NodeId], axis: isize) -> Result<NodeId> {
        let first = inputs.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        let axis = resolve_axis("concat", base.len(), axis)?;
        let mut sizes = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(shape_err("concat", format!("{s:?} does not stack with {base:?}")));
            }
            sizes.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = sizes.iter().sum();
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&id, &sz) in inputs.iter().zip(&sizes) {
                y.extend_from_slice(&self.value(id).data()[o * sz * inner..][..sz * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&i| self.requires(i));
        self.push(
            "concat",
            Tensor::new(shape, y)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                sizes,
                inner,
            },
            rg,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.requires(x);
        self.push("reshape", value, Op::Reshape { x }, rg)
    }

    /// Slice `count` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: NodeId, axis: isize, start: usize, count: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis("narrow", shape.len(), axis)?;
        let layout = split_axis(&shape, axis);
        let (outer, len, inner) = layout;
        if start + count > len {
            return Err(shape_err("narrow", format!("[{start}, {}) exceeds axis length {len}", start + count)));
        }
        let xv = self.value(x).data();
        let mut y = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            y.extend_from_slice(&xv[(o * len + start) * inner..][..count * inner]);
        }
        let mut out = shape;
        out[axis] = count;
        let rg = self.requires(x);
        self.push(
            "narrow",
            Tensor::new(out, y)?,
            Op::Narrow {
                x,
                layout,
                start,
                count,
            },
            rg,
        )
    }

    /// Gathers `indices` along `axis`; repeated indices accumulate in the gradient.
    pub fn index_select(&mut self, x: NodeId, axis: isize, indices: &[usize]) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis("index_select", shape.len(), axis)?;
        let layout = split_axis(&shape, axis);
        let (outer, len, inner) = layout;
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(shape_err("index_select", format!("index {bad} out of range {len}")));
        }
        let xv = self.value(x).data();
        let mut y = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &j in indices {
                y.extend_from_slice(&xv[(o * len + j) * inner..][..inner]);
            }
        }
        let mut out = shape;
        out[axis] = indices.len();
        let rg = self.requires(x);
        self.push(
            "index_select",
            Tensor::new(out, y)?,
            Op::IndexSelect {
                x,
                layout,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    // ---------------------------------------------------------------- spectral

    /// Overlapping frames along the last axis: `[.., T] -> [.., F, win]`.
    pub fn frames(&mut self, x: NodeId, win: usize, hop: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().ok_or_else(|| shape_err("frames", "scalar input"))?;
        if win == 0 || hop == 0 || len < win {
            return Err(shape_err("frames", format!("signal of {len} samples cannot hold a {win}-sample frame")));
        }
        let count = (len - win) / hop + 1;
        let rows = self.value(x).len() / len;
        let xv = self.value(x).data();
        let mut y = Vec::with_capacity(rows * count * win);
        for r in 0..rows {
            for f in 0..count {
                y.extend_from_slice(&xv[r * len + f * hop..][..win]);
            }
        }
        let mut out = shape[..shape.len() - 1].to_vec();
        out.extend([count, win]);
        let rg = self.requires(x);
        self.push(
            "frames",
            Tensor::new(out, y)?,
            Op::Frames {
                x,
                rows,
                len,
                win,
                hop,
                count,
            },
            rg,
        )
    }

    /// Squared magnitude of the real-input DFT along the last axis:
    /// `[.., n] -> [.., n/2 + 1]`, `n` even.
    pub fn rfft_power(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| shape_err("rfft_power", "scalar input"))?;
        if n == 0 || n % 2 != 0 {
            return Err(shape_err("rfft_power", format!("frame length {n} must be even")));
        }
        let half = n / 2 + 1;
        let rows = self.value(x).len() / n;
        let fft = self.fft(n);
        let xv = self.value(x).data();
        let mut spectrum = Vec::with_capacity(rows * half);
        let mut power = Vec::with_capacity(rows * half);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for r in 0..rows {
            for (b, &v) in buf.iter_mut().zip(&xv[r * n..][..n]) {
                *b = Complex64::new(v, 0.0);
            }
            fft.process(&mut buf);
            for c in &buf[..half] {
                spectrum.push(*c);
                power.push(c.norm_sqr());
            }
        }
        let mut out = shape;
        *out.last_mut().unwrap() = half;
        let rg = self.requires(x);
        self.push(
            "rfft_power",
            Tensor::new(out, power)?,
            Op::RfftPower { x, rows, n, spectrum },
            rg,
        )
    }

    // ---------------------------------------------------------------- model-specific

    /// `y_i = x_i / (sum_j |x_j| + eps)` along `axis`; signs are preserved.
    pub fn signed_normalize(&mut self, x: NodeId, axis: isize, eps: f64) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis("signed_normalize", shape.len(), axis)?;
        let layout = split_axis(&shape, axis);
        let (outer, len, inner) = layout;
        let xv = self.value(x).data();
        let mut sums = vec![0.0; outer * inner];
        let mut y = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let s = (0..len).map(|j| xv[(o * len + j) * inner + i].abs()).sum::<f64>() + eps;
                sums[o * inner + i] = s;
                for j in 0..len {
                    let at = (o * len + j) * inner + i;
                    y[at] = xv[at] / s;
                }
            }
        }
        let rg = self.requires(x);
        self.push(
            "signed_normalize",
            Tensor::new(shape, y)?,
            Op::SignedNormalize { x, layout, sums },
            rg,
        )
    }

    /// Block-wise source mixing.
    ///
    /// `w: [N, T, S, B]`, `h: [N*S, C, L]` with `C % B == 0`; returns
    /// `[N*T, C, L]` where `out[n,t,k,:] = sum_i w[n,t,i,k/(C/B)] * h[n*S+i,k,:]`.
    pub fn block_mix(&mut self, w: NodeId, h: NodeId) -> Result<NodeId> {
        let ws = self.shape(w).to_vec();
        let hs = self.shape(h).to_vec();
        if ws.len() != 4 || hs.len() != 3 {
            return Err(shape_err("block_mix", format!("weights {ws:?}, features {hs:?}")));
        }
        let (batch, targets, sources, blocks) = (ws[0], ws[1], ws[2], ws[3]);
        let (channels, len) = (hs[1], hs[2]);
        if hs[0] != batch * sources || blocks == 0 || channels % blocks != 0 {
            return Err(shape_err("block_mix", format!("weights {ws:?} incompatible with features {hs:?}")));
        }
        let dims = BlockMixDims {
            batch,
            targets,
            sources,
            blocks,
            channels,
            len,
        };
        let per = channels / blocks;
        let wv = self.value(w).data();
        let hv = self.value(h).data();
        let mut y = vec![0.0; batch * targets * channels * len];
        for n in 0..batch {
            for t in 0..targets {
                for k in 0..channels {
                    let out = &mut y[((n * targets + t) * channels + k) * len..][..len];
                    for i in 0..sources {
                        let a = wv[((n * targets + t) * sources + i) * blocks + k / per];
                        if a == 0.0 {
                            continue;
                        }
                        let src = &hv[((n * sources + i) * channels + k) * len..][..len];
                        for (o, s) in out.iter_mut().zip(src) {
                            *o += a * s;
                        }
                    }
                }
            }
        }
        let rg = self.requires(w) || self.requires(h);
        self.push(
            "block_mix",
            Tensor::new(vec![batch * targets, channels, len], y)?,
            Op::BlockMix { w, h, dims },
            rg,
        )
    }

    /// Per-channel constant affine map along axis -2: `y[.., c, :] = scale[c] * x[.., c, :] + shift[c]`.
    pub fn channel_affine(&mut self, x: NodeId, scale: &[f64], shift: &[f64]) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(shape_err("channel_affine", "need at least two axes"));
        }
        let layout = split_axis(&shape, shape.len() - 2);
        let (outer, c, inner) = layout;
        if scale.len() != c || shift.len() != c {
            return Err(shape_err("channel_affine", format!("{c} channels, {} coefficients", scale.len())));
        }
        let xv = self.value(x).data();
        let mut y = vec![0.0; xv.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    y[i] = scale[ch] * xv[i] + shift[ch];
                }
            }
        }
        let rg = self.requires(x);
        self.push(
            "channel_affine",
            Tensor::new(shape, y)?,
            Op::ChannelAffine {
                x,
                layout,
                scale: scale.to_vec(),
            },
            rg,
        )
    }

    // ---------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, g, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            param_nodes: self.param_nodes.clone(),
        })
    }

    fn backward_node(&mut self, i: usize, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let y = &self.nodes[i].value;
        let mut out: Vec<(NodeId, Vec<f64>)> = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::Conv1d { x, w, b, dims } => {
                let (dx, dw, db) = kernels::conv1d_backward(self.value(*x).data(), self.value(*w).data(), &g, dims);
                out.push((*x, dx));
                out.push((*w, dw));
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::ConvT1d { x, w, b, dims } => {
                let (dx, dw, db) =
                    kernels::conv_transpose1d_backward(self.value(*x).data(), self.value(*w).data(), &g, dims);
                out.push((*x, dx));
                out.push((*w, dw));
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                nin,
                nout,
            } => {
                let (dx, dw, db) =
                    kernels::linear_backward(self.value(*x).data(), self.value(*w).data(), &g, *rows, *nin, *nout);
                out.push((*x, dx));
                out.push((*w, dw));
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::Bmm { a, b, dims } => {
                let (da, db) = kernels::bmm_backward(
                    self.value(*a).data(),
                    self.value(*b).data(),
                    &g,
                    dims[0],
                    dims[1],
                    dims[2],
                    dims[3],
                );
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                train,
                ..
            } => {
                let (outer, c, inner) = *layout;
                let gm = self.value(*gamma).data();
                let m = (outer * inner) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for j in base..base + inner {
                            dgamma[ch] += g[j] * xhat[j];
                            dbeta[ch] += g[j];
                        }
                    }
                }
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for j in base..base + inner {
                            dx[j] = if *train {
                                gm[ch] * inv_std[ch] * (g[j] - dbeta[ch] / m - xhat[j] * dgamma[ch] / m)
                            } else {
                                gm[ch] * inv_std[ch] * g[j]
                            };
                        }
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                width,
                xhat,
                inv_std,
            } => {
                let width = *width;
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![0.0; width];
                let mut dbeta = vec![0.0; width];
                let mut dx = vec![0.0; g.len()];
                for (r, &is) in inv_std.iter().enumerate() {
                    let gr = &g[r * width..][..width];
                    let hr = &xhat[r * width..][..width];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for k in 0..width {
                        let dh = gr[k] * gm[k];
                        s1 += dh;
                        s2 += dh * hr[k];
                        dgamma[k] += gr[k] * hr[k];
                        dbeta[k] += gr[k];
                    }
                    let nf = width as f64;
                    for k in 0..width {
                        let dh = gr[k] * gm[k];
                        dx[r * width + k] = is * (dh - s1 / nf - hr[k] * s2 / nf);
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Unary { x, kind } => {
                let xv = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(xv)
                    .zip(y.data())
                    .map(|((&gv, &xv), &yv)| match *kind {
                        UnaryKind::Elu => {
                            if xv > 0.0 {
                                gv
                            } else {
                                gv * (yv + 1.0)
                            }
                        }
                        UnaryKind::LeakyRelu(s) => {
                            if xv > 0.0 {
                                gv
                            } else {
                                gv * s
                            }
                        }
                        UnaryKind::Sigmoid => gv * yv * (1.0 - yv),
                        UnaryKind::Abs => gv * sign(xv),
                        UnaryKind::LogEps(e) => gv / (xv + e),
                        UnaryKind::Scale(c) => gv * c,
                        UnaryKind::AddScalar(_) => gv,
                        UnaryKind::Square => 2.0 * xv * gv,
                    })
                    .collect();
                out.push((*x, dx));
            }
            Op::Binary { a, b, kind } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                let same = av.shape() == bv.shape();
                let (ia, ib) = if same {
                    (Vec::new(), Vec::new())
                } else {
                    (
                        broadcast_index(y.shape(), av.shape()),
                        broadcast_index(y.shape(), bv.shape()),
                    )
                };
                for (k, &gv) in g.iter().enumerate() {
                    let (p, q) = if same { (k, k) } else { (ia[k], ib[k]) };
                    let (x1, x2) = (av.data()[p], bv.data()[q]);
                    let (ga, gb) = match kind {
                        BinaryKind::Add => (gv, gv),
                        BinaryKind::Sub => (gv, -gv),
                        BinaryKind::Mul => (gv * x2, gv * x1),
                        BinaryKind::Div => (gv / x2, -gv * x1 / (x2 * x2)),
                    };
                    da[p] += ga;
                    db[q] += gb;
                }
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Softmax { x, width } => {
                let mut dx = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(*width).zip(y.data().chunks(*width)).zip(dx.chunks_mut(*width)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for k in 0..*width {
                        dr[k] = yr[k] * (gr[k] - dot);
                    }
                }
                out.push((*x, dx));
            }
            Op::Reduce { x, kind, layout, arg } => {
                let (outer, len, inner) = *layout;
                let xv = self.value(*x).data();
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let gv = g[o * inner + i];
                        let at = |j: usize| (o * len + j) * inner + i;
                        match kind {
                            ReduceKind::Sum => (0..len).for_each(|j| dx[at(j)] = gv),
                            ReduceKind::Mean => (0..len).for_each(|j| dx[at(j)] = gv / len as f64),
                            ReduceKind::Max | ReduceKind::Min => dx[at(arg[o * inner + i])] = gv,
                            ReduceKind::Std => {
                                let s = y.data()[o * inner + i];
                                if s > 0.0 {
                                    let m = (0..len).map(|j| xv[at(j)]).sum::<f64>() / len as f64;
                                    for j in 0..len {
                                        dx[at(j)] = gv * (xv[at(j)] - m) / (len as f64 * s);
                                    }
                                }
                            }
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::Concat {
                inputs,
                outer,
                sizes,
                inner,
            } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&id, &sz) in inputs.iter().zip(sizes) {
                    let mut dx = Vec::with_capacity(outer * sz * inner);
                    for o in 0..*outer {
                        dx.extend_from_slice(&g[(o * total + offset) * inner..][..sz * inner]);
                    }
                    offset += sz;
                    out.push((id, dx));
                }
            }
            Op::Reshape { x } => out.push((*x, g)),
            Op::Narrow {
                x,
                layout,
                start,
                count,
            } => {
                let (outer, len, inner) = *layout;
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    dx[(o * len + start) * inner..][..count * inner]
                        .copy_from_slice(&g[o * count * inner..][..count * inner]);
                }
                out.push((*x, dx));
            }
            Op::IndexSelect { x, layout, indices } => {
                let (outer, len, inner) = *layout;
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for (k, &j) in indices.iter().enumerate() {
                        let src = &g[(o * indices.len() + k) * inner..][..inner];
                        let dst = &mut dx[(o * len + j) * inner..][..inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                out.push((*x, dx));
            }
            Op::Frames {
                x,
                rows,
                len,
                win,
                hop,
                count,
            } => {
                let mut dx = vec![0.0; rows * len];
                for r in 0..*rows {
                    for f in 0..*count {
                        let src = &g[(r * count + f) * win..][..*win];
                        let dst = &mut dx[r * len + f * hop..][..*win];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                out.push((*x, dx));
            }
            Op::RfftPower { x, rows, n, spectrum } => {
                let (x, rows, n) = (*x, *rows, *n);
                let half = n / 2 + 1;
                let spectrum = spectrum.clone();
                let fft = self.fft(n);
                let mut dx = vec![0.0; rows * n];
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for r in 0..rows {
                    buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
                    for k in 0..half {
                        buf[k] = spectrum[r * half + k].conj() * g[r * half + k];
                    }
                    fft.process(&mut buf);
                    for (d, c) in dx[r * n..][..n].iter_mut().zip(&buf) {
                        *d = 2.0 * c.re;
                    }
                }
                accumulate(grads, &self.nodes, x, dx);
                return Ok(());
            }
            Op::SignedNormalize { x, layout, sums } => {
                let (outer, len, inner) = *layout;
                let xv = self.value(*x).data();
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let s = sums[o * inner + i];
                        let at = |j: usize| (o * len + j) * inner + i;
                        let gx: f64 = (0..len).map(|j| g[at(j)] * xv[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = g[at(j)] / s - sign(xv[at(j)]) * gx / (s * s);
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::BlockMix { w, h, dims } => {
                let d = *dims;
                let per = d.channels / d.blocks;
                let wv = self.value(*w).data();
                let hv = self.value(*h).data();
                let mut dw = vec![0.0; wv.len()];
                let mut dh = vec![0.0; hv.len()];
                for n in 0..d.batch {
                    for t in 0..d.targets {
                        for k in 0..d.channels {
                            let gr = &g[((n * d.targets + t) * d.channels + k) * d.len..][..d.len];
                            for i in 0..d.sources {
                                let wi = ((n * d.targets + t) * d.sources + i) * d.blocks + k / per;
                                let hbase = ((n * d.sources + i) * d.channels + k) * d.len;
                                let hr = &hv[hbase..][..d.len];
                                dw[wi] += gr.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>();
                                let a = wv[wi];
                                dh[hbase..][..d.len].iter_mut().zip(gr).for_each(|(o, gv)| *o += a * gv);
                            }
                        }
                    }
                }
                out.push((*w, dw));
                out.push((*h, dh));
            }
            Op::ChannelAffine { x, layout, scale } => {
                let (outer, c, inner) = *layout;
                let mut dx = g;
                for o in 0..outer {
                    for (ch, s) in scale.iter().enumerate().take(c) {
                        dx[(o * c + ch) * inner..][..inner].iter_mut().for_each(|v| *v *= s);
                    }
                }
                out.push((*x, dx));
            }
        }
        for (id, d) in out {
            accumulate(grads, &self.nodes, id, d);
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    param_nodes: HashMap<usize, NodeId>,
}

impl Gradients {
    /// Gradient with respect to a leaf node (zeros if the root does not depend on it).
    pub fn wrt(&self, id: NodeId) -> Tensor {
        let shape = self.shapes[id.0].clone();
        match self.grads.get(id.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// One gradient per entry of `params`, in parameter-set order.
    pub fn params(&self, params: &ParameterSet) -> Vec<Tensor> {
        params
            .iter()
            .map(|(id, _, _, value)| match self.param_nodes.get(&id) {
                Some(&node) => self.wrt(node),
                None => Tensor::zeros(value.shape()),
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, d: Vec<f64>) {
    if !nodes[id.0].requires_grad {
        return;
    }
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        slot => *slot = Some(d),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn conv_input(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, bool)> {
    match *shape {
        [c, l] => Ok((1, c, l, true)),
        [n, c, l] => Ok((n, c, l, false)),
        _ => Err(shape_err(op, format!("expected [N, C, L] or [C, L], got {shape:?}"))),
    }
}

fn check_bias(tape: &Tape, b: Option<NodeId>, width: usize, op: &'static str) -> Result<()> {
    if let Some(b) = b {
        if tape.shape(b) != [width] {
            return Err(shape_err(op, format!("bias {:?} should be [{width}]", tape.shape(b))));
        }
    }
    Ok(())
}

fn check_affine(tape: &Tape, gamma: NodeId, beta: NodeId, width: usize, op: &'static str) -> Result<()> {
    if tape.shape(gamma) != [width] || tape.shape(beta) != [width] {
        return Err(shape_err(op, format!("affine parameters should be [{width}]")));
    }
    Ok(())
}

fn bn_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [n, c, l] => Ok((n, c, l)),
        _ => Err(shape_err("batch_norm", format!("expected [N, C] or [N, C, L], got {shape:?}"))),
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat source index for each flat output index under broadcasting.
fn broadcast_index(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for k in (0..src.len()).rev() {
        let ko = k + rank - src.len();
        strides[ko] = if src[k] == 1 { 0 } else { acc };
        acc *= src[k];
    }
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let mut res = Vec::with_capacity(total);
    let mut cur = 0usize;
    for _ in 0..total {
        res.push(cur);
        for k in (0..rank).rev() {
            idx[k] += 1;
            cur += strides[k];
            if idx[k] < out[k] {
                break;
            }
            cur -= strides[k] * out[k];
            idx[k] = 0;
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_index_suffix_and_prefix() {
        assert_eq!(broadcast_index(&[2, 3], &[3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_shape(&[4, 1, 5], &[3, 1]), Some(vec![4, 3, 5]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn sigmoid_saturates_to_exact_zero() {
        assert_eq!(sigmoid(-1e4), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
