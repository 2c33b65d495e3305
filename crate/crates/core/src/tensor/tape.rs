use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul {
        a: Var,
        b: Var,
        layout: MatMulLayout,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat(Vec<Var>),
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    SliceLast {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Dropout {
        x: Var,
        keep: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
enum MatMulLayout {
    /// `b` is a plain matrix; `a`'s batch dims fold into its rows.
    Flat { rows: usize, q: usize, r: usize },
    /// Both operands carry the same batch dims.
    Batched {
        batch: usize,
        p: usize,
        q: usize,
        r: usize,
    },
    /// `a` is a plain matrix shared across `b`'s batch.
    SharedLhs {
        batch: usize,
        p: usize,
        q: usize,
        r: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations for reverse-mode differentiation.
///
/// Nodes are appended as they are computed, so inputs always precede the
/// operations that consume them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Writes `src` (of `shape`) into a new buffer laid out with axes reordered by `perm`.
fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gathered: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut index = vec![0usize; shape.len()];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for axis in (0..index.len()).rev() {
            index[axis] += 1;
            offset += gathered[axis];
            if index[axis] < out_shape[axis] {
                break;
            }
            offset -= gathered[axis] * out_shape[axis];
            index[axis] = 0;
        }
    }
    (out_shape, out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Records a leaf; it participates in differentiation iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf { param: None }, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut t = tensor;
        t.set_requires_grad(false);
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// Copies a parameter onto the tape so its gradient can be routed back
    /// to the set by [`Tape::backward_into`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let src = params.get(id);
        let mut t = Tensor::new(src.shape(), src.data().to_vec()).unwrap();
        let rg = src.requires_grad();
        t.set_requires_grad(rg);
        self.push(t, Op::Leaf { param: Some(id) }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (q2, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if q != q2 {
            return Err(err());
        }
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let (layout, out_shape) = if batch_b.is_empty() {
            let rows = sa[..sa.len() - 1].iter().product();
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(r);
            (MatMulLayout::Flat { rows, q, r }, shape)
        } else if batch_a.is_empty() {
            let batch = batch_b.iter().product();
            let mut shape = batch_b.to_vec();
            shape.extend([p, r]);
            (MatMulLayout::SharedLhs { batch, p, q, r }, shape)
        } else if batch_a == batch_b {
            let batch = batch_a.iter().product();
            let mut shape = batch_a.to_vec();
            shape.extend([p, r]);
            (MatMulLayout::Batched { batch, p, q, r }, shape)
        } else {
            return Err(err());
        };

        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; out_shape.iter().product()];
        match layout {
            MatMulLayout::Flat { rows, q, r } => gemm_nn(ad, bd, &mut out, rows, q, r),
            MatMulLayout::Batched { batch, p, q, r } => {
                for i in 0..batch {
                    gemm_nn(
                        &ad[i * p * q..(i + 1) * p * q],
                        &bd[i * q * r..(i + 1) * q * r],
                        &mut out[i * p * r..(i + 1) * p * r],
                        p,
                        q,
                        r,
                    );
                }
            }
            MatMulLayout::SharedLhs { batch, p, q, r } => {
                for i in 0..batch {
                    gemm_nn(
                        ad,
                        &bd[i * q * r..(i + 1) * q * r],
                        &mut out[i * p * r..(i + 1) * p * r],
                        p,
                        q,
                        r,
                    );
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::MatMul { a, b, layout },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = av.shape().to_vec();
        let rg = self.needs(&[a, b]);
        self.push(Tensor::new(&shape, data).unwrap(), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// `x[..., d] + bias[d]`
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(u, v)| u + v))
            .collect();
        let shape = xv.shape().to_vec();
        let rg = self.needs(&[x, bias]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let shape = xv.shape().to_vec();
        let rg = self.needs(&[x]);
        self.push(Tensor::new(&shape, data).unwrap(), Op::Scale(x, c), rg)
    }

    /// Softmax over the last axis; keys where `mask` is false get exactly 0.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        let k = xv.last_dim();
        if mask.len() != k {
            return Err(Error::Length {
                op: "masked_softmax",
                expected: k,
                actual: mask.len(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::NoValidKeys);
        }
        let mut out = vec![0.0; xv.len()];
        for (row, dst) in xv.data().chunks(k).zip(out.chunks_mut(k)) {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ((d, &v), &m) in dst.iter_mut().zip(row).zip(mask) {
                if m {
                    *d = (v - max).exp();
                    total += *d;
                }
            }
            let inv = 1.0 / total;
            for (d, &m) in dst.iter_mut().zip(mask) {
                if m {
                    *d *= inv;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MaskedSoftmax(x), rg))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len() / d;
        let mut normed = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![0.0; xv.len()];
        for (i, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let n = (row[j] - mean) * is;
                normed[i * d + j] = n;
                out[i * d + j] = n * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu(v)).collect();
        let shape = xv.shape().to_vec();
        let rg = self.needs(&[x]);
        self.push(Tensor::new(&shape, data).unwrap(), Op::Gelu(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n: usize = shape.iter().product();
        if n != xv.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: xv.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = xv.data().to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm
                .iter()
                .all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::Shape {
                op: "permute",
                lhs: shape,
                rhs: perm.to_vec(),
            });
        }
        let (out_shape, data) = permute_data(self.value(x).data(), &shape, perm);
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = self.needs(parts);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Selects rows of a `[R, d]` table.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: shape,
                rhs: vec![rows.len()],
            });
        }
        let (bound, d) = (shape[0], shape[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= bound) {
            return Err(Error::Index {
                op: "gather_rows",
                index: bad,
                bound,
            });
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&t[r * d..(r + 1) * d]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::new(&[rows.len(), d], out)?,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// `x[..., start..start+len]`
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if len == 0 || start + len > d {
            return Err(Error::Index {
                op: "slice_last",
                index: start + len,
                bound: d,
            });
        }
        let out: Vec<f64> = xv
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SliceLast { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Inverted dropout. A rate of zero records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let xv = self.value(x);
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let data = xv.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let shape = xv.shape().to_vec();
        let rg = self.needs(&[x]);
        self.push(
            Tensor::new(&shape, data).unwrap(),
            Op::Dropout { x, keep },
            rg,
        )
    }

    /// Reverse pass from a scalar `loss`. Gradients are added to every leaf
    /// that requires them, so repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        fn acc_with(
            grads: &mut [Option<Vec<f64>>],
            v: Var,
            len: usize,
            f: impl FnOnce(&mut [f64]),
        ) {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                }
                Op::MatMul { a, b, layout } => {
                    let (a, b) = (*a, *b);
                    let ad = self.nodes[a.0].value.data();
                    let bd = self.nodes[b.0].value.data();
                    let (la, lb) = (ad.len(), bd.len());
                    let (need_a, need_b) =
                        (self.nodes[a.0].requires_grad, self.nodes[b.0].requires_grad);
                    match *layout {
                        MatMulLayout::Flat { rows, q, r } => {
                            if need_a {
                                acc_with(&mut grads, a, la, |ga| gemm_nt(&g, bd, ga, rows, r, q));
                            }
                            if need_b {
                                acc_with(&mut grads, b, lb, |gb| gemm_tn(ad, &g, gb, rows, q, r));
                            }
                        }
                        MatMulLayout::Batched { batch, p, q, r } => {
                            if need_a {
                                acc_with(&mut grads, a, la, |ga| {
                                    for i in 0..batch {
                                        gemm_nt(
                                            &g[i * p * r..(i + 1) * p * r],
                                            &bd[i * q * r..(i + 1) * q * r],
                                            &mut ga[i * p * q..(i + 1) * p * q],
                                            p,
                                            r,
                                            q,
                                        );
                                    }
                                });
                            }
                            if need_b {
                                acc_with(&mut grads, b, lb, |gb| {
                                    for i in 0..batch {
                                        gemm_tn(
                                            &ad[i * p * q..(i + 1) * p * q],
                                            &g[i * p * r..(i + 1) * p * r],
                                            &mut gb[i * q * r..(i + 1) * q * r],
                                            p,
                                            q,
                                            r,
                                        );
                                    }
                                });
                            }
                        }
                        MatMulLayout::SharedLhs { batch, p, q, r } => {
                            if need_a {
                                acc_with(&mut grads, a, la, |ga| {
                                    for i in 0..batch {
                                        gemm_nt(
                                            &g[i * p * r..(i + 1) * p * r],
                                            &bd[i * q * r..(i + 1) * q * r],
                                            ga,
                                            p,
                                            r,
                                            q,
                                        );
                                    }
                                });
                            }
                            if need_b {
                                acc_with(&mut grads, b, lb, |gb| {
                                    for i in 0..batch {
                                        gemm_tn(
                                            ad,
                                            &g[i * p * r..(i + 1) * p * r],
                                            &mut gb[i * q * r..(i + 1) * q * r],
                                            p,
                                            q,
                                            r,
                                        );
                                    }
                                });
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[b.0].requires_grad {
                        acc(&mut grads, b, g.clone());
                    }
                    if self.nodes[a.0].requires_grad {
                        acc(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[b.0].requires_grad {
                        acc(&mut grads, b, g.iter().map(|v| -v).collect());
                    }
                    if self.nodes[a.0].requires_grad {
                        acc(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ad = self.nodes[a.0].value.data();
                    let bd = self.nodes[b.0].value.data();
                    if self.nodes[a.0].requires_grad {
                        acc(
                            &mut grads,
                            a,
                            g.iter().zip(bd).map(|(x, y)| x * y).collect(),
                        );
                    }
                    if self.nodes[b.0].requires_grad {
                        acc(
                            &mut grads,
                            b,
                            g.iter().zip(ad).map(|(x, y)| x * y).collect(),
                        );
                    }
                }
                Op::AddBias(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    if self.nodes[bias.0].requires_grad {
                        let d = self.nodes[bias.0].value.len();
                        let mut gb = vec![0.0; d];
                        for row in g.chunks(d) {
                            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        acc(&mut grads, bias, gb);
                    }
                    if self.nodes[x.0].requires_grad {
                        acc(&mut grads, x, g);
                    }
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    acc(&mut grads, x, g.iter().map(|v| v * c).collect());
                }
                Op::MaskedSoftmax(x) => {
                    let x = *x;
                    let y = node.value.data();
                    let k = node.value.last_dim();
                    let mut gx = vec![0.0; y.len()];
                    for ((yr, gr), dst) in y.chunks(k).zip(g.chunks(k)).zip(gx.chunks_mut(k)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let gv = self.nodes[gain.0].value.data();
                    let d = gv.len();
                    if self.nodes[gain.0].requires_grad {
                        let mut gg = vec![0.0; d];
                        for (gr, nr) in g.chunks(d).zip(normed.chunks(d)) {
                            for j in 0..d {
                                gg[j] += gr[j] * nr[j];
                            }
                        }
                        acc(&mut grads, gain, gg);
                    }
                    if self.nodes[bias.0].requires_grad {
                        let mut gb = vec![0.0; d];
                        for gr in g.chunks(d) {
                            gb.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                        }
                        acc(&mut grads, bias, gb);
                    }
                    if self.nodes[x.0].requires_grad {
                        let mut gx = vec![0.0; g.len()];
                        let mut dn = vec![0.0; d];
                        for (i, (gr, nr)) in g.chunks(d).zip(normed.chunks(d)).enumerate() {
                            for j in 0..d {
                                dn[j] = gr[j] * gv[j];
                            }
                            let mean_dn = dn.iter().sum::<f64>() / d as f64;
                            let mean_dn_n =
                                dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for j in 0..d {
                                gx[i * d + j] = inv_std[i] * (dn[j] - mean_dn - nr[j] * mean_dn_n);
                            }
                        }
                        acc(&mut grads, x, gx);
                    }
                }
                Op::Gelu(x) => {
                    let x = *x;
                    let xd = self.nodes[x.0].value.data();
                    acc(
                        &mut grads,
                        x,
                        g.iter()
                            .zip(xd)
                            .map(|(gv, &xv)| gv * gelu_grad(xv))
                            .collect(),
                    );
                }
                Op::Reshape(x) => {
                    acc(&mut grads, *x, g);
                }
                Op::Permute { x, perm } => {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let (_, gx) = permute_data(&g, node.value.shape(), &inverse);
                    acc(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let total = node.value.last_dim();
                    let rows = node.value.len() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.last_dim();
                        if self.nodes[p.0].requires_grad {
                            let mut gp = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                gp.extend_from_slice(
                                    &g[r * total + offset..r * total + offset + w],
                                );
                            }
                            acc(&mut grads, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::Gather { table, rows } => {
                    let table = *table;
                    let len = self.nodes[table.0].value.len();
                    let d = self.nodes[table.0].value.last_dim();
                    acc_with(&mut grads, table, len, |gt| {
                        for (i, &r) in rows.iter().enumerate() {
                            for j in 0..d {
                                gt[r * d + j] += g[i * d + j];
                            }
                        }
                    });
                }
                Op::SliceLast { x, start } => {
                    let (x, start) = (*x, *start);
                    let xv = &self.nodes[x.0].value;
                    let (len, d) = (xv.len(), xv.last_dim());
                    let w = node.value.last_dim();
                    acc_with(&mut grads, x, len, |gx| {
                        for (r, gr) in g.chunks(w).enumerate() {
                            for (j, v) in gr.iter().enumerate() {
                                gx[r * d + start + j] += v;
                            }
                        }
                    });
                }
                Op::Sum(x) => {
                    let x = *x;
                    let n = self.nodes[x.0].value.len();
                    acc(&mut grads, x, vec![g[0]; n]);
                }
                Op::Dropout { x, keep } => {
                    acc(
                        &mut grads,
                        *x,
                        g.iter().zip(keep).map(|(a, b)| a * b).collect(),
                    );
                }
            }
        }

        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[idx];
                if matches!(node.op, Op::Leaf { .. }) && node.requires_grad {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    /// Runs [`Tape::backward`] and adds parameter-leaf gradients into `params`.
    pub fn backward_into(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        self.backward(loss)?;
        for node in &mut self.nodes {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = node.value.grad.take() {
                    params.get_mut(id).accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }
}
