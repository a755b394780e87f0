use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Abs(Var),
    HingeShift {
        x: Var,
        sigma: f64,
    },
    SumAll(Var),
    MeanAll(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNT {
        a: Var,
        b: Var,
    },
    Transpose(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    AffineRows {
        x: Var,
        rot: [f64; 9],
    },
    RowNorm(Var),
    CrossEntropyMean {
        logits: Var,
        targets: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradient table produced by [`Tape::backward`]. Entries are `None` for nodes
/// the output does not depend on.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, materializing zeros for disconnected nodes.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Records a computation as it is built; single-owner during forward and
/// backward. `backward` may be called once per tape.
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(String, Var)>,
    backward_done: bool,
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
            bindings: Vec::new(),
            backward_done: false,
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record a leaf holding `value`. Leaves are the only nodes gradients stop
    /// at; whether one is a trainable parameter is the caller's concern (see
    /// [`Tape::param`]).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    /// Bind a named parameter from `store` as a leaf. Binding the same name
    /// twice returns the original node so gradient fan-in accumulates.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.bindings.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter '{name}'")))?
            .value
            .clone();
        let v = self.leaf(value);
        self.bindings.push((name.to_string(), v));
        Ok(v)
    }

    /// Gradients of all bound parameters (zeros when disconnected).
    pub fn named_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bindings
            .iter()
            .map(|(name, v)| (name.clone(), grads.get_or_zeros(*v, self.shape(*v))))
            .collect()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::from_vec(self.shape(a), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let value = Tensor::from_vec(self.shape(a), data).expect("same shape");
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x + c).collect();
        let value = Tensor::from_vec(self.shape(a), data).expect("same shape");
        self.push(value, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::from_vec(self.shape(a), data).expect("same shape");
        self.push(value, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.abs()).collect();
        let value = Tensor::from_vec(self.shape(a), data).expect("same shape");
        self.push(value, Op::Abs(a))
    }

    /// Elementwise `max(x − sigma, 0)`.
    pub fn hinge_shift(&mut self, x: Var, sigma: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| (v - sigma).max(0.0)).collect();
        let value = Tensor::from_vec(self.shape(x), data).expect("same shape");
        self.push(value, Op::HingeShift { x, sigma })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s / n as f64), Op::MeanAll(a))
    }

    /// `y = x·wᵀ + b` with `x: n×d_in`, `w: d_out×d_in`, `b: d_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || ws[0] != bs[0] {
            return Err(Error::Shape(format!("linear: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * dout];
        for i in 0..n {
            for o in 0..dout {
                let mut acc = bv[o];
                let xrow = &xv[i * din..(i + 1) * din];
                let wrow = &wv[o * din..(o + 1) * din];
                for k in 0..din {
                    acc += xrow[k] * wrow[k];
                }
                out[i * dout + o] = acc;
            }
        }
        let value = Tensor::from_vec(&[n, dout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// 2D cross-correlation with zero padding; `x: C_in×H×W`,
    /// `w: C_out×C_in×kh×kw`, `b: C_out`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 || xs[0] != ws[1] || ws[0] != bs[0] {
            return Err(Error::Shape(format!("conv2d: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        if stride == 0 {
            return Err(Error::Invalid("conv2d: stride must be ≥ 1".into()));
        }
        let (cin, h, wid) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * pad < kh || wid + 2 * pad < kw {
            return Err(Error::Shape("conv2d: kernel larger than padded input".into()));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wid + 2 * pad - kw) / stride + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                acc += xv[(ci * h + iy as usize) * wid + ix as usize]
                                    * wv[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let value = Tensor::from_vec(&[cout, oh, ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Normalize each feature over the batch (row) axis; training-mode
    /// statistics, biased variance. `x: n×d` with n ≥ 2.
    pub fn batchnorm1d(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(Error::Shape(format!("batchnorm1d: expected rank 2, got {xs:?}")));
        }
        let (n, d) = (xs[0], xs[1]);
        if n < 2 {
            return Err(Error::Invalid("batchnorm1d: batch of 1 is degenerate (zero variance)".into()));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape("batchnorm1d: gamma/beta must have shape [d]".into()));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; n * d];
        for j in 0..d {
            let mut mean = 0.0;
            for i in 0..n {
                mean += xv[i * d + j];
            }
            mean /= n as f64;
            let mut var = 0.0;
            for i in 0..n {
                let c = xv[i * d + j] - mean;
                var += c * c;
            }
            var /= n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..n {
                out[i * d + j] = gv[j] * (xv[i * d + j] - mean) * inv + bv[j];
            }
        }
        let value = Tensor::from_vec(&[n, d], out)?;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, eps }))
    }

    /// Normalize each row; `x: n×d`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(Error::Shape(format!("layernorm: expected rank 2, got {xs:?}")));
        }
        let (n, d) = (xs[0], xs[1]);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape("layernorm: gamma/beta must have shape [d]".into()));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                out[i * d + j] = gv[j] * (row[j] - mean) * inv + bv[j];
            }
        }
        let value = Tensor::from_vec(&[n, d], out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// `a: n×k` times `b: k×m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} × {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for l in 0..k {
                let x = av[i * k + l];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[l * m..(l + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    orow[j] += x * brow[j];
                }
            }
        }
        let value = Tensor::from_vec(&[n, m], out)?;
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    /// `a: n×k` times `bᵀ` for `b: m×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape(format!("matmul_nt: {sa:?} × {sb:?}ᵀ")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[0]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &bv[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for l in 0..k {
                    acc += arow[l] * brow[l];
                }
                out[i * m + j] = acc;
            }
        }
        let value = Tensor::from_vec(&[n, m], out)?;
        Ok(self.push(value, Op::MatMulNT { a, b }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(Error::Shape(format!("transpose: expected rank 2, got {sa:?}")));
        }
        let (n, m) = (sa[0], sa[1]);
        let av = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = av[i * m + j];
            }
        }
        let value = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(Error::Shape(format!("softmax_rows: expected rank 2, got {sa:?}")));
        }
        let (n, m) = (sa[0], sa[1]);
        let av = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &av[i * m..(i + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..m {
                let e = (row[j] - mx).exp();
                out[i * m + j] = e;
                z += e;
            }
            for j in 0..m {
                out[i * m + j] /= z;
            }
        }
        let value = Tensor::from_vec(&[n, m], out)?;
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || start + len > sx[1] {
            return Err(Error::Shape(format!("slice_cols: [{start}, {start}+{len}) of {sx:?}")));
        }
        let (n, m) = (sx[0], sx[1]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * len];
        for i in 0..n {
            out[i * len..(i + 1) * len].copy_from_slice(&xv[i * m + start..i * m + start + len]);
        }
        let value = Tensor::from_vec(&[n, len], out)?;
        Ok(self.push(value, Op::SliceCols { x, start, len }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_cols: no parts".into()));
        }
        let n = self.shape(parts[0])[0];
        let mut total = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != 2 || sp[0] != n {
                return Err(Error::Shape(format!("concat_cols: incompatible part {sp:?}")));
            }
            total += sp[1];
        }
        let mut out = vec![0.0; n * total];
        let mut off = 0;
        for &p in parts {
            let m = self.shape(p)[1];
            let pv = self.value(p).data();
            for i in 0..n {
                out[i * total + off..i * total + off + m].copy_from_slice(&pv[i * m..(i + 1) * m]);
            }
            off += m;
        }
        let value = Tensor::from_vec(&[n, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Select rows of `x` by index (duplicates allowed; backward scatter-adds).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(Error::Shape(format!("gather_rows: expected rank 2, got {sx:?}")));
        }
        let (n, m) = (sx[0], sx[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Invalid(format!("gather_rows: index {bad} out of {n} rows")));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; idx.len() * m];
        for (r, &i) in idx.iter().enumerate() {
            out[r * m..(r + 1) * m].copy_from_slice(&xv[i * m..(i + 1) * m]);
        }
        let value = Tensor::from_vec(&[idx.len(), m], out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Rigid map of row vectors: row i ↦ R·row_i + t, with R, t constants.
    pub fn affine_rows(&mut self, x: Var, rot: &[f64; 9], trans: &[f64; 3]) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || sx[1] != 3 {
            return Err(Error::Shape(format!("affine_rows: expected n×3, got {sx:?}")));
        }
        let n = sx[0];
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * 3];
        for i in 0..n {
            let p = &xv[i * 3..(i + 1) * 3];
            for r in 0..3 {
                out[i * 3 + r] = rot[r * 3] * p[0] + rot[r * 3 + 1] * p[1] + rot[r * 3 + 2] * p[2] + trans[r];
            }
        }
        let value = Tensor::from_vec(&[n, 3], out)?;
        Ok(self.push(value, Op::AffineRows { x, rot: *rot }))
    }

    /// Euclidean norm of each row; output shape `[n]`. The backward guard
    /// caps 1/norm at 1e12 so zero rows do not produce NaNs.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(Error::Shape(format!("row_norm: expected rank 2, got {sx:?}")));
        }
        let (n, m) = (sx[0], sx[1]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = xv[i * m..(i + 1) * m].iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        let value = Tensor::from_vec(&[n], out)?;
        Ok(self.push(value, Op::RowNorm(x)))
    }

    /// Mean over rows of −log softmax(logits)[target].
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let sl = self.shape(logits);
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(Error::Shape(format!(
                "cross_entropy_mean: logits {sl:?} vs {} targets",
                targets.len()
            )));
        }
        let (n, c) = (sl[0], sl[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Invalid(format!("cross_entropy_mean: target {bad} out of {c} classes")));
        }
        let lv = self.value(logits).data();
        let mut loss = 0.0;
        for i in 0..n {
            let row = &lv[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[targets[i]];
        }
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            value,
            Op::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar output. May be called once per tape;
    /// gradients for every node are accumulated across all fan-out paths.
    pub fn backward(&mut self, out: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Invalid("backward already ran on this tape; build a new tape to differentiate again".into()));
        }
        if self.value(out).len() != 1 {
            return Err(Error::Shape(format!(
                "backward: output must be scalar, got {:?}",
                self.shape(out)
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::full(self.shape(out), 1.0));

        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.accumulate_inputs(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_inputs(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                let neg = Tensor::from_vec(g.shape(), g.data().iter().map(|v| -v).collect()).unwrap();
                add_to(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga = Tensor::from_vec(g.shape(), g.data().iter().zip(bv).map(|(x, y)| x * y).collect()).unwrap();
                let gb = Tensor::from_vec(g.shape(), g.data().iter().zip(av).map(|(x, y)| x * y).collect()).unwrap();
                add_to(grads, *a, ga);
                add_to(grads, *b, gb);
            }
            Op::Scale(a, c) => {
                let ga = Tensor::from_vec(g.shape(), g.data().iter().map(|v| v * c).collect()).unwrap();
                add_to(grads, *a, ga);
            }
            Op::AddScalar(a) => add_to(grads, *a, g.clone()),
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                let ga = Tensor::from_vec(
                    g.shape(),
                    g.data().iter().zip(xv).map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 }).collect(),
                )
                .unwrap();
                add_to(grads, *a, ga);
            }
            Op::Abs(a) => {
                let xv = self.value(*a).data();
                let ga = Tensor::from_vec(
                    g.shape(),
                    g.data()
                        .iter()
                        .zip(xv)
                        .map(|(gv, x)| gv * if *x > 0.0 { 1.0 } else if *x < 0.0 { -1.0 } else { 0.0 })
                        .collect(),
                )
                .unwrap();
                add_to(grads, *a, ga);
            }
            Op::HingeShift { x, sigma } => {
                let xv = self.value(*x).data();
                let ga = Tensor::from_vec(
                    g.shape(),
                    g.data().iter().zip(xv).map(|(gv, v)| if *v > *sigma { *gv } else { 0.0 }).collect(),
                )
                .unwrap();
                add_to(grads, *x, ga);
            }
            Op::SumAll(a) => {
                let gs = g.item();
                add_to(grads, *a, Tensor::full(self.shape(*a), gs));
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len().max(1);
                add_to(grads, *a, Tensor::full(self.shape(*a), g.item() / n as f64));
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[0];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let gv = g.data();
                let mut gx = vec![0.0; n * din];
                let mut gw = vec![0.0; dout * din];
                let mut gb = vec![0.0; dout];
                for i in 0..n {
                    for o in 0..dout {
                        let go = gv[i * dout + o];
                        if go == 0.0 {
                            continue;
                        }
                        gb[o] += go;
                        let wrow = &wv[o * din..(o + 1) * din];
                        let xrow = &xv[i * din..(i + 1) * din];
                        let gxrow = &mut gx[i * din..(i + 1) * din];
                        for k in 0..din {
                            gxrow[k] += go * wrow[k];
                        }
                        let gwrow = &mut gw[o * din..(o + 1) * din];
                        for k in 0..din {
                            gwrow[k] += go * xrow[k];
                        }
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[n, din], gx).unwrap());
                add_to(grads, *w, Tensor::from_vec(&[dout, din], gw).unwrap());
                add_to(grads, *b, Tensor::from_vec(&[dout], gb).unwrap());
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (cin, h, wid) = {
                    let s = self.shape(*x);
                    (s[0], s[1], s[2])
                };
                let (cout, kh, kw) = {
                    let s = self.shape(*w);
                    (s[0], s[2], s[3])
                };
                let (oh, ow) = {
                    let s = g.shape();
                    (s[1], s[2])
                };
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let gv = g.data();
                let mut gx = vec![0.0; cin * h * wid];
                let mut gw = vec![0.0; cout * cin * kh * kw];
                let mut gb = vec![0.0; cout];
                for co in 0..cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = gv[(co * oh + oy) * ow + ox];
                            if go == 0.0 {
                                continue;
                            }
                            gb[co] += go;
                            for ci in 0..cin {
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - *pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - *pad as isize;
                                        if ix < 0 || ix >= wid as isize {
                                            continue;
                                        }
                                        let xi = (ci * h + iy as usize) * wid + ix as usize;
                                        let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                        gx[xi] += go * wv[wi];
                                        gw[wi] += go * xv[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[cin, h, wid], gx).unwrap());
                add_to(grads, *w, Tensor::from_vec(&[cout, cin, kh, kw], gw).unwrap());
                add_to(grads, *b, Tensor::from_vec(&[cout], gb).unwrap());
            }
            Op::BatchNorm { x, gamma, beta, eps } => {
                let (n, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let gy = g.data();
                let nf = n as f64;
                let mut gx = vec![0.0; n * d];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for j in 0..d {
                    let mut mean = 0.0;
                    for i in 0..n {
                        mean += xv[i * d + j];
                    }
                    mean /= nf;
                    let mut var = 0.0;
                    for i in 0..n {
                        let c = xv[i * d + j] - mean;
                        var += c * c;
                    }
                    var /= nf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for i in 0..n {
                        let xhat = (xv[i * d + j] - mean) * inv;
                        let go = gy[i * d + j];
                        gg[j] += go * xhat;
                        gb[j] += go;
                        sum_g += go;
                        sum_gx += go * xhat;
                    }
                    for i in 0..n {
                        let xhat = (xv[i * d + j] - mean) * inv;
                        gx[i * d + j] = gv[j] * inv * (gy[i * d + j] - sum_g / nf - xhat * sum_gx / nf);
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[n, d], gx).unwrap());
                add_to(grads, *gamma, Tensor::from_vec(&[d], gg).unwrap());
                add_to(grads, *beta, Tensor::from_vec(&[d], gb).unwrap());
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (n, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let gy = g.data();
                let df = d as f64;
                let mut gx = vec![0.0; n * d];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for i in 0..n {
                    let row = &xv[i * d..(i + 1) * d];
                    let mean = row.iter().sum::<f64>() / df;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let go = gy[i * d + j] * gv[j];
                        gg[j] += gy[i * d + j] * xhat;
                        gb[j] += gy[i * d + j];
                        sum_g += go;
                        sum_gx += go * xhat;
                    }
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let go = gy[i * d + j] * gv[j];
                        gx[i * d + j] = inv * (go - sum_g / df - xhat * sum_gx / df);
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[n, d], gx).unwrap());
                add_to(grads, *gamma, Tensor::from_vec(&[d], gg).unwrap());
                add_to(grads, *beta, Tensor::from_vec(&[d], gb).unwrap());
            }
            Op::MatMul { a, b } => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let gv = g.data();
                // dA = G·Bᵀ ; dB = Aᵀ·G
                let mut ga = vec![0.0; n * k];
                let mut gb_ = vec![0.0; k * m];
                for i in 0..n {
                    for j in 0..m {
                        let go = gv[i * m + j];
                        if go == 0.0 {
                            continue;
                        }
                        for l in 0..k {
                            ga[i * k + l] += go * bv[l * m + j];
                            gb_[l * m + j] += av[i * k + l] * go;
                        }
                    }
                }
                add_to(grads, *a, Tensor::from_vec(&[n, k], ga).unwrap());
                add_to(grads, *b, Tensor::from_vec(&[k, m], gb_).unwrap());
            }
            Op::MatMulNT { a, b } => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[0];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let gv = g.data();
                // C = A·Bᵀ ⇒ dA = G·B ; dB = Gᵀ·A
                let mut ga = vec![0.0; n * k];
                let mut gb_ = vec![0.0; m * k];
                for i in 0..n {
                    for j in 0..m {
                        let go = gv[i * m + j];
                        if go == 0.0 {
                            continue;
                        }
                        for l in 0..k {
                            ga[i * k + l] += go * bv[j * k + l];
                            gb_[j * k + l] += go * av[i * k + l];
                        }
                    }
                }
                add_to(grads, *a, Tensor::from_vec(&[n, k], ga).unwrap());
                add_to(grads, *b, Tensor::from_vec(&[m, k], gb_).unwrap());
            }
            Op::Transpose(a) => {
                let (n, m) = (self.shape(*a)[0], self.shape(*a)[1]);
                let gv = g.data();
                let mut ga = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        ga[i * m + j] = gv[j * n + i];
                    }
                }
                add_to(grads, *a, Tensor::from_vec(&[n, m], ga).unwrap());
            }
            Op::Reshape(a) => {
                let ga = g.clone().reshaped(self.shape(*a)).unwrap();
                add_to(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let (n, m) = (self.shape(*a)[0], self.shape(*a)[1]);
                let pv = self.value(Var(id)).data();
                let gv = g.data();
                let mut ga = vec![0.0; n * m];
                for i in 0..n {
                    let p = &pv[i * m..(i + 1) * m];
                    let gr = &gv[i * m..(i + 1) * m];
                    let dot: f64 = p.iter().zip(gr).map(|(pp, gg)| pp * gg).sum();
                    for j in 0..m {
                        ga[i * m + j] = p[j] * (gr[j] - dot);
                    }
                }
                add_to(grads, *a, Tensor::from_vec(&[n, m], ga).unwrap());
            }
            Op::SliceCols { x, start, len } => {
                let (n, m) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gv = g.data();
                let mut gx = vec![0.0; n * m];
                for i in 0..n {
                    gx[i * m + start..i * m + start + len].copy_from_slice(&gv[i * len..(i + 1) * len]);
                }
                add_to(grads, *x, Tensor::from_vec(&[n, m], gx).unwrap());
            }
            Op::ConcatCols(parts) => {
                let n = g.shape()[0];
                let total = g.shape()[1];
                let gv = g.data();
                let mut off = 0;
                for &p in parts {
                    let m = self.shape(p)[1];
                    let mut gp = vec![0.0; n * m];
                    for i in 0..n {
                        gp[i * m..(i + 1) * m].copy_from_slice(&gv[i * total + off..i * total + off + m]);
                    }
                    add_to(grads, p, Tensor::from_vec(&[n, m], gp).unwrap());
                    off += m;
                }
            }
            Op::GatherRows { x, idx } => {
                let (n, m) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gv = g.data();
                let mut gx = vec![0.0; n * m];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..m {
                        gx[i * m + j] += gv[r * m + j];
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[n, m], gx).unwrap());
            }
            Op::AffineRows { x, rot } => {
                let n = self.shape(*x)[0];
                let gv = g.data();
                let mut gx = vec![0.0; n * 3];
                for i in 0..n {
                    let gr = &gv[i * 3..(i + 1) * 3];
                    for c in 0..3 {
                        // (Rᵀ g)_c
                        gx[i * 3 + c] = rot[c] * gr[0] + rot[3 + c] * gr[1] + rot[6 + c] * gr[2];
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[n, 3], gx).unwrap());
            }
            Op::RowNorm(x) => {
                let (n, m) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = self.value(*x).data();
                let yv = self.value(Var(id)).data();
                let gv = g.data();
                let mut gx = vec![0.0; n * m];
                for i in 0..n {
                    let inv = 1.0 / yv[i].max(1e-12);
                    for j in 0..m {
                        gx[i * m + j] = gv[i] * xv[i * m + j] * inv;
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[n, m], gx).unwrap());
            }
            Op::CrossEntropyMean { logits, targets } => {
                let (n, c) = (self.shape(*logits)[0], self.shape(*logits)[1]);
                let lv = self.value(*logits).data();
                let gs = g.item() / n as f64;
                let mut gl = vec![0.0; n * c];
                for i in 0..n {
                    let row = &lv[i * c..(i + 1) * c];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    for j in 0..c {
                        let p = (row[j] - mx).exp() / z;
                        gl[i * c + j] = gs * (p - if j == targets[i] { 1.0 } else { 0.0 });
                    }
                }
                add_to(grads, *logits, Tensor::from_vec(&[n, c], gl).unwrap());
            }
        }
    }
}

/// Mean absolute difference between two same-shape tensors, as a tape op
/// composition.
pub fn l1_loss(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.mean_all(d))
}
