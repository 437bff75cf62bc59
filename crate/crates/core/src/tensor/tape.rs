use std::sync::Arc;

use super::{gemm, Tensor};
use crate::error::{GnsError, Result};

/// LayerNorm variance stabilizer.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `x[n×d] + b[d]`, bias broadcast over rows.
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    ScatterSum {
        src: Var,
        index: Arc<[usize]>,
    },
    GatherRows {
        src: Var,
        index: Arc<[usize]>,
    },
    Concat(Vec<Var>),
    SliceRows {
        src: Var,
        start: usize,
    },
    Mean(Var),
    MseLoss {
        pred: Var,
        target: Tensor,
        mask: Option<Vec<bool>>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of executed primitives, in execution (hence topological) order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], contrib: Vec<f64>) {
    match slot {
        Some(t) => t
            .data_mut()
            .iter_mut()
            .zip(contrib)
            .for_each(|(a, b)| *a += b),
        None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data: contrib,
            })
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.as_matrix_dims();
        let (k2, n) = bv.as_matrix_dims();
        if k != k2 {
            return Err(GnsError::Dimension {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, 0.0);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (rows, cols) = xv.as_matrix_dims();
        if bv.len() != cols {
            return Err(GnsError::Dimension {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.data().to_vec();
        let bias = bv.data();
        for r in 0..rows {
            out[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(bias)
                .for_each(|(o, b)| *o += b);
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor { shape, data: out }, Op::AddBias(x, b)))
    }

    /// `x · w + b` as two recorded ops.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(GnsError::Dimension {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Relu(x))
    }

    /// Per-row normalization over the feature axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.as_matrix_dims();
        let (g, b) = (self.value(gain), self.value(bias));
        if g.len() != d || b.len() != d {
            return Err(GnsError::Dimension {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; rows * d];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, o) in out[r * d..(r + 1) * d].iter_mut().enumerate() {
                *o = (row[j] - mu) * rs * g.data()[j] + b.data()[j];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(
            Tensor { shape, data: out },
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            },
        ))
    }

    /// Sums rows of `src` into `n` output rows according to `index`.
    pub fn scatter_sum(&mut self, src: Var, index: Arc<[usize]>, n: usize) -> Result<Var> {
        let sv = self.value(src);
        let (e, d) = sv.as_matrix_dims();
        if index.len() != e {
            return Err(GnsError::Dimension {
                op: "scatter_sum",
                lhs: sv.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut out = vec![0.0; n * d];
        for (k, &i) in index.iter().enumerate() {
            if i >= n {
                return Err(GnsError::Index {
                    op: "scatter_sum",
                    index: i,
                    len: n,
                });
            }
            out[i * d..(i + 1) * d]
                .iter_mut()
                .zip(&sv.data()[k * d..(k + 1) * d])
                .for_each(|(o, s)| *o += s);
        }
        Ok(self.push(Tensor::matrix(n, d, out), Op::ScatterSum { src, index }))
    }

    /// Picks rows of `src`; the adjoint of [`Tape::scatter_sum`].
    pub fn gather_rows(&mut self, src: Var, index: Arc<[usize]>) -> Result<Var> {
        let sv = self.value(src);
        let (n, d) = sv.as_matrix_dims();
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index.iter() {
            if i >= n {
                return Err(GnsError::Index {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(&sv.data()[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Tensor::matrix(index.len(), d, out),
            Op::GatherRows { src, index },
        ))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).as_matrix_dims().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).as_matrix_dims();
            if r != rows {
                return Err(GnsError::Dimension {
                    op: "concat",
                    lhs: vec![rows],
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(Tensor::matrix(rows, total, out), Op::Concat(parts.to_vec())))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let sv = self.value(src);
        let (rows, cols) = sv.as_matrix_dims();
        if start + len > rows {
            return Err(GnsError::Index {
                op: "slice_rows",
                index: start + len,
                len: rows,
            });
        }
        let data = sv.data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(Tensor::matrix(len, cols, data), Op::SliceRows { src, start }))
    }

    /// Mean over all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = if xv.is_empty() {
            0.0
        } else {
            xv.data().iter().sum::<f64>() / xv.len() as f64
        };
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Squared error averaged over the selected rows and all their columns.
    /// Rows with `mask[i] == false` contribute nothing; an all-false mask
    /// yields a zero loss with zero gradient.
    pub fn mse_loss(&mut self, pred: Var, target: Tensor, mask: Option<Vec<bool>>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(GnsError::Dimension {
                op: "mse_loss",
                lhs: pv.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let (rows, cols) = pv.as_matrix_dims();
        if let Some(m) = &mask {
            if m.len() != rows {
                return Err(GnsError::Dimension {
                    op: "mse_loss mask",
                    lhs: vec![rows],
                    rhs: vec![m.len()],
                });
            }
        }
        let selected = |r: usize| mask.as_ref().is_none_or(|m| m[r]);
        let mut sum = 0.0;
        let mut count = 0;
        for r in 0..rows {
            if !selected(r) {
                continue;
            }
            count += 1;
            for c in 0..cols {
                let d = pv.data()[r * cols + c] - target.data()[r * cols + c];
                sum += d * d;
            }
        }
        let loss = if count == 0 {
            0.0
        } else {
            sum / (count * cols) as f64
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MseLoss {
                pred,
                target,
                mask,
                count,
            },
        ))
    }

    /// Reverse sweep from the scalar `output`. Each node is visited once, in
    /// reverse recording order; intermediate gradients are released once
    /// consumed, leaf gradients are kept.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let out_shape = self.nodes[output.0].value.shape().to_vec();
        let n_out = self.nodes[output.0].value.len();
        grads[output.0] = Some(Tensor {
            shape: out_shape,
            data: vec![1.0; n_out],
        });

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let g = g.data;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.as_matrix_dims();
                    let n = bv.cols();
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g, false, bv.data(), true, &mut da, 0.0);
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, &g, false, &mut db, 0.0);
                    accumulate(&mut grads[a.0], av.shape(), da);
                    accumulate(&mut grads[b.0], bv.shape(), db);
                }
                Op::AddBias(x, b) => {
                    let bv = self.value(*b);
                    let d = bv.len();
                    let mut db = vec![0.0; d];
                    for row in g.chunks_exact(d) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    accumulate(&mut grads[b.0], bv.shape(), db);
                    accumulate(&mut grads[x.0], node.value.shape(), g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], node.value.shape(), g.clone());
                    accumulate(&mut grads[b.0], node.value.shape(), g);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let dx = g
                        .iter()
                        .zip(xv.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], xv.shape(), dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    mean,
                    rstd,
                } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let (rows, d) = xv.as_matrix_dims();
                    let mut dx = vec![0.0; rows * d];
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    let mut xhat = vec![0.0; d];
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let row = &xv.data()[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..d {
                            xhat[j] = (row[j] - mean[r]) * rstd[r];
                            dxhat[j] = gr[j] * gv.data()[j];
                            dgain[j] += gr[j] * xhat[j];
                            dbias[j] += gr[j];
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xhat += dxhat[j] * xhat[j];
                        }
                        let inv_d = 1.0 / d as f64;
                        for j in 0..d {
                            dx[r * d + j] = rstd[r]
                                * (dxhat[j] - sum_dxhat * inv_d - xhat[j] * sum_dxhat_xhat * inv_d);
                        }
                    }
                    accumulate(&mut grads[x.0], xv.shape(), dx);
                    accumulate(&mut grads[gain.0], gv.shape(), dgain);
                    accumulate(&mut grads[bias.0], self.value(*bias).shape(), dbias);
                }
                Op::ScatterSum { src, index } => {
                    let sv = self.value(*src);
                    let d = sv.cols();
                    let mut ds = Vec::with_capacity(sv.len());
                    for &i in index.iter() {
                        ds.extend_from_slice(&g[i * d..(i + 1) * d]);
                    }
                    accumulate(&mut grads[src.0], sv.shape(), ds);
                }
                Op::GatherRows { src, index } => {
                    let sv = self.value(*src);
                    let d = sv.cols();
                    let mut ds = vec![0.0; sv.len()];
                    for (k, &i) in index.iter().enumerate() {
                        ds[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&g[k * d..(k + 1) * d])
                            .for_each(|(a, v)| *a += v);
                    }
                    accumulate(&mut grads[src.0], sv.shape(), ds);
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let w = pv.cols();
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads[p.0], pv.shape(), dp);
                    }
                }
                Op::SliceRows { src, start } => {
                    let sv = self.value(*src);
                    let cols = sv.cols();
                    let mut ds = vec![0.0; sv.len()];
                    ds[start * cols..start * cols + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads[src.0], sv.shape(), ds);
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let n = xv.len().max(1) as f64;
                    let dx = vec![g[0] / n; xv.len()];
                    accumulate(&mut grads[x.0], xv.shape(), dx);
                }
                Op::MseLoss {
                    pred,
                    target,
                    mask,
                    count,
                } => {
                    let pv = self.value(*pred);
                    let (rows, cols) = pv.as_matrix_dims();
                    let mut dp = vec![0.0; pv.len()];
                    if *count > 0 {
                        let scale = 2.0 * g[0] / (*count * cols) as f64;
                        for r in 0..rows {
                            if mask.as_ref().is_some_and(|m| !m[r]) {
                                continue;
                            }
                            for c in 0..cols {
                                let i = r * cols + c;
                                dp[i] = scale * (pv.data()[i] - target.data()[i]);
                            }
                        }
                    }
                    accumulate(&mut grads[pred.0], pv.shape(), dp);
                }
            }
        }
        Gradients { grads }
    }
}
