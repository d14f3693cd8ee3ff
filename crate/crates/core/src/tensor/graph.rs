use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::kernels::{gemm, View};
use super::{as_matrix, Scalar, Tensor, MASK_BIAS};
use crate::error::{EmpError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
        probs: Vec<T>,
    },
    Gather {
        x: Var,
        index: Vec<Option<usize>>,
    },
    ConcatRows(Var, Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    Huber {
        pred: Var,
        residual: Vec<T>,
        weights: Vec<T>,
        delta: T,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        weights: Vec<T>,
    },
}

struct Node<'a, T: Clone> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation graph. Nodes are appended in execution order,
/// so the node list is already topologically sorted.
///
/// Parameters are borrowed from their store for the lifetime of the graph;
/// a graph is built per forward pass and dropped afterwards.
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    params: HashMap<String, Var>,
    param_names: Vec<(Var, String)>,
    track_params: bool,
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_names: Vec::new(),
            track_params: true,
        }
    }

    /// Graph whose parameters do not require gradients.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Leaf that requires a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    /// Named parameter leaf. Registering the same name twice returns the
    /// existing node.
    pub fn param(&mut self, name: &str, t: &'a Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            requires_grad: self.track_params,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        self.param_names.push((v, name.to_string()));
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape is consistent")
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn mat(&self, v: Var) -> (usize, usize) {
        as_matrix(&self.nodes[v.0].shape)
    }

    /// `a[..×K] · b[K×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a);
        let bs = self.shape(b).to_vec();
        if bs.len() != 2 || bs[0] != k {
            return Err(EmpError::shape("matmul", self.shape(a), &bs));
        }
        let n = bs[1];
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            T::one(),
            View::rows(self.value(a), 0, k),
            View::rows(self.value(b), 0, n),
            T::zero(),
            &mut out,
            0,
            n,
        );
        let mut shape = self.shape(a).to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(EmpError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    /// Adds a `[C]` row vector to every row of `x[..×C]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.mat(x);
        if self.nodes[row.0].value.len() != c {
            return Err(EmpError::shape("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.value(row);
        let out = self
            .value(x)
            .chunks(c.max(1))
            .flat_map(|xs| xs.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), rg)
    }

    /// Exact GeLU, `x · Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Gelu(x), rg)
    }

    /// Row-wise normalization (population variance) followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, d) = self.mat(x);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(EmpError::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        if d == 0 {
            return Err(EmpError::Contract("layer_norm over empty rows".into()));
        }
        let eps = T::of(eps);
        let inv_d = T::one() / T::of(d as f64);
        let mut xhat = Vec::with_capacity(rows * d);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        let (g, b) = (self.value(gain), self.value(bias));
        for row in self.value(x).chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, c) = self.mat(x);
        if c == 0 {
            return Err(EmpError::Contract("softmax over an empty axis".into()));
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax(x), rg))
    }

    /// Batched multi-head scaled dot-product attention on already projected
    /// inputs.
    ///
    /// `q` has `groups · S_q` rows, `k` and `v` have `groups · S_k` rows, all
    /// with `D` columns split into `heads` contiguous slices. `key_mask[i]`
    /// is `true` for keys that may be attended to. Every group needs at least
    /// one valid key.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
        key_mask: &[bool],
    ) -> Result<Var> {
        let (qr, d) = self.mat(q);
        let (kr, dk) = self.mat(k);
        let (vr, dv) = self.mat(v);
        if dk != d || dv != d || kr != vr {
            return Err(EmpError::shape("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(EmpError::Contract(format!(
                "width {d} is not divisible by {heads} heads"
            )));
        }
        if groups == 0 || qr % groups != 0 || kr % groups != 0 {
            return Err(EmpError::shape("attention groups", &[qr, kr], &[groups]));
        }
        if key_mask.len() != kr {
            return Err(EmpError::shape("attention mask", &[kr], &[key_mask.len()]));
        }
        let sq = qr / groups;
        let sk = kr / groups;
        for (g, m) in key_mask.chunks(sk.max(1)).enumerate() {
            if sk == 0 || !m.iter().any(|&b| b) {
                return Err(EmpError::InvalidMask(format!(
                    "attention group {g} has no valid key"
                )));
            }
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let bias = T::of(MASK_BIAS);
        let mut probs = vec![T::zero(); groups * heads * sq * sk];
        let mut out = vec![T::zero(); qr * d];
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        for g in 0..groups {
            let mask = &key_mask[g * sk..(g + 1) * sk];
            for h in 0..heads {
                let p_off = (g * heads + h) * sq * sk;
                let p = &mut probs[p_off..p_off + sq * sk];
                gemm(
                    sq,
                    dh,
                    sk,
                    scale,
                    View::rows(qv, g * sq * d + h * dh, d),
                    View::rows(kv, g * sk * d + h * dh, d).t(),
                    T::zero(),
                    p,
                    0,
                    sk,
                );
                for row in p.chunks_mut(sk) {
                    for (x, &ok) in row.iter_mut().zip(mask) {
                        if !ok {
                            *x += bias;
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    sq,
                    sk,
                    dh,
                    T::one(),
                    View::rows(&probs[p_off..p_off + sq * sk], 0, sk),
                    View::rows(vv, g * sk * d + h * dh, d),
                    T::zero(),
                    &mut out,
                    g * sq * d + h * dh,
                    d,
                );
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            self.shape(q).to_vec(),
            out,
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Builds `[index.len() × C]` from rows of `x`; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let (rows, c) = self.mat(x);
        let xs = self.value(x);
        let mut out = Vec::with_capacity(index.len() * c);
        for i in &index {
            match *i {
                Some(r) if r < rows => out.extend_from_slice(&xs[r * c..(r + 1) * c]),
                Some(r) => {
                    return Err(EmpError::shape("gather_rows", self.shape(x), &[r]));
                }
                None => out.extend(std::iter::repeat_n(T::zero(), c)),
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![index.len(), c], out, Op::Gather { x, index }, rg))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.mat(a);
        let (rb, cb) = self.mat(b);
        if ca != cb {
            return Err(EmpError::shape("concat_rows", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![ra + rb, ca], out, Op::ConcatRows(a, b), rg))
    }

    /// Max over the valid rows of each of `groups` consecutive row blocks.
    pub fn masked_max_pool(&mut self, x: Var, groups: usize, mask: &[bool]) -> Result<Var> {
        let (rows, c) = self.mat(x);
        if groups == 0 || rows % groups != 0 || mask.len() != rows {
            return Err(EmpError::shape("masked_max_pool", self.shape(x), &[groups, mask.len()]));
        }
        let s = rows / groups;
        let xs = self.value(x);
        let mut out = Vec::with_capacity(groups * c);
        let mut argmax = Vec::with_capacity(groups * c);
        for g in 0..groups {
            let valid: Vec<usize> = (g * s..(g + 1) * s).filter(|&r| mask[r]).collect();
            if valid.is_empty() {
                return Err(EmpError::InvalidMask(format!(
                    "pooling group {g} has no valid row"
                )));
            }
            for j in 0..c {
                let mut best = valid[0];
                for &r in &valid[1..] {
                    if xs[r * c + j] > xs[best * c + j] {
                        best = r;
                    }
                }
                out.push(xs[best * c + j]);
                argmax.push(best);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![groups, c], out, Op::MaxPool { x, argmax }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(EmpError::shape("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    /// `Σ wᵢ · huber(predᵢ − targetᵢ)` with the quadratic zone `|r| ≤ delta`.
    pub fn huber(&mut self, pred: Var, target: &[T], weights: &[T], delta: T) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.len() != weights.len() {
            return Err(EmpError::shape(
                "huber",
                self.shape(pred),
                &[target.len(), weights.len()],
            ));
        }
        let residual: Vec<T> = p.iter().zip(target).map(|(&a, &b)| a - b).collect();
        let total = residual
            .iter()
            .zip(weights)
            .map(|(&r, &w)| w * huber(r, delta))
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            vec![],
            vec![total],
            Op::Huber {
                pred,
                residual,
                weights: weights.to_vec(),
                delta,
            },
            rg,
        ))
    }

    /// `Σ_r w_r · −log softmax(logits_r)[target_r]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let (rows, k) = self.mat(logits);
        if targets.len() != rows || weights.len() != rows {
            return Err(EmpError::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(EmpError::Contract(format!("class {t} out of range for {k} logits")));
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = T::zero();
        for (r, row) in probs.chunks_mut(k).enumerate() {
            let lse = log_sum_exp(row);
            total += weights[r] * (lse - row[targets[r]]);
            softmax_in_place(row);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            vec![],
            vec![total],
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(EmpError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, &dy, &mut grads);
        }
        let param_grads = self
            .param_names
            .iter()
            .filter(|(v, _)| self.rg(*v))
            .map(|(v, name)| {
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| vec![T::zero(); self.value(*v).len()]);
                (name.clone(), Tensor::new(self.shape(*v).to_vec(), g).unwrap())
            })
            .collect();
        Ok(Gradients {
            nodes: grads,
            params: param_grads,
        })
    }

    fn backprop_node(&self, node: &Node<'a, T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let y: &[T] = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.mat(*a);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let ga = acc(grads, *a, m * k);
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        View::rows(dy, 0, n),
                        View::rows(self.value(*b), 0, n).t(),
                        T::one(),
                        ga,
                        0,
                        k,
                    );
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, k * n);
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        View::rows(self.value(*a), 0, k).t(),
                        View::rows(dy, 0, n),
                        T::one(),
                        gb,
                        0,
                        n,
                    );
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_into(acc(grads, v, dy.len()), dy);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b);
                    let ga = acc(grads, *a, dy.len());
                    for ((g, &d), &o) in ga.iter_mut().zip(dy).zip(bv) {
                        *g += d * o;
                    }
                }
                if self.rg(*b) {
                    let av = self.value(*a);
                    let gb = acc(grads, *b, dy.len());
                    for ((g, &d), &o) in gb.iter_mut().zip(dy).zip(av) {
                        *g += d * o;
                    }
                }
            }
            Op::AddRow(x, row) => {
                if self.rg(*x) {
                    add_into(acc(grads, *x, dy.len()), dy);
                }
                if self.rg(*row) {
                    let c = self.value(*row).len();
                    let gr = acc(grads, *row, c);
                    for chunk in dy.chunks(c) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = acc(grads, *x, dy.len());
                for (g, &d) in gx.iter_mut().zip(dy) {
                    *g += d * *c;
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = acc(grads, *x, dy.len());
                for ((g, &d), &v) in gx.iter_mut().zip(dy).zip(xv) {
                    if v > T::zero() {
                        *g += d;
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let gx = acc(grads, *x, dy.len());
                for ((g, &d), &v) in gx.iter_mut().zip(dy).zip(xv) {
                    *g += d * gelu_grad(v);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.value(*gain).len();
                let gv = self.value(*gain);
                if self.rg(*gain) {
                    let gg = acc(grads, *gain, d);
                    for (dyr, hr) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += dyr[j] * hr[j];
                        }
                    }
                }
                if self.rg(*bias) {
                    let gb = acc(grads, *bias, d);
                    for dyr in dy.chunks(d) {
                        add_into(gb, dyr);
                    }
                }
                if self.rg(*x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let gx = acc(grads, *x, dy.len());
                    let mut dh = vec![T::zero(); d];
                    for (r, ((dyr, hr), gxr)) in dy
                        .chunks(d)
                        .zip(xhat.chunks(d))
                        .zip(gx.chunks_mut(d))
                        .enumerate()
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            dh[j] = dyr[j] * gv[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hr[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..d {
                            gxr[j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let c = self.mat(*x).1;
                let gx = acc(grads, *x, dy.len());
                for ((yr, dyr), gr) in y.chunks(c).zip(dy.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gr[j] += yr[j] * (dyr[j] - dot);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                groups,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *groups, *heads, probs, dy, grads),
            Op::Gather { x, index } => {
                let (rows, c) = self.mat(*x);
                let gx = acc(grads, *x, rows * c);
                for (i, r) in index.iter().enumerate() {
                    if let Some(r) = r {
                        add_into(&mut gx[r * c..(r + 1) * c], &dy[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).len();
                if self.rg(*a) {
                    add_into(acc(grads, *a, na), &dy[..na]);
                }
                if self.rg(*b) {
                    add_into(acc(grads, *b, dy.len() - na), &dy[na..]);
                }
            }
            Op::MaxPool { x, argmax } => {
                let (rows, c) = self.mat(*x);
                let gx = acc(grads, *x, rows * c);
                for (i, &r) in argmax.iter().enumerate() {
                    gx[r * c + i % c] += dy[i];
                }
            }
            Op::Reshape(x) => add_into(acc(grads, *x, dy.len()), dy),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let gx = acc(grads, *x, n);
                for g in gx.iter_mut() {
                    *g += dy[0];
                }
            }
            Op::Huber {
                pred,
                residual,
                weights,
                delta,
            } => {
                let gp = acc(grads, *pred, residual.len());
                for ((g, &r), &w) in gp.iter_mut().zip(residual).zip(weights) {
                    let d = if r.abs() <= *delta { r } else { *delta * r.signum() };
                    *g += dy[0] * w * d;
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                weights,
            } => {
                let k = self.mat(*logits).1;
                let gl = acc(grads, *logits, probs.len());
                for (r, (pr, gr)) in probs.chunks(k).zip(gl.chunks_mut(k)).enumerate() {
                    for j in 0..k {
                        let onehot = if j == targets[r] { T::one() } else { T::zero() };
                        gr[j] += dy[0] * weights[r] * (pr[j] - onehot);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        heads: usize,
        probs: &[T],
        dy: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (qr, d) = self.mat(q);
        let kr = self.mat(k).0;
        let sq = qr / groups;
        let sk = kr / groups;
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = self.rg(q).then(|| vec![T::zero(); qr * d]);
        let mut dk = self.rg(k).then(|| vec![T::zero(); kr * d]);
        let mut dv = self.rg(v).then(|| vec![T::zero(); kr * d]);
        let mut ds = vec![T::zero(); sq * sk];
        for g in 0..groups {
            for h in 0..heads {
                let p_off = (g * heads + h) * sq * sk;
                let p = &probs[p_off..p_off + sq * sk];
                let q_off = g * sq * d + h * dh;
                let kv_off = g * sk * d + h * dh;
                if let Some(dv) = dv.as_mut() {
                    gemm(
                        sk,
                        sq,
                        dh,
                        T::one(),
                        View::rows(p, 0, sk).t(),
                        View::rows(dy, q_off, d),
                        T::one(),
                        dv,
                        kv_off,
                        d,
                    );
                }
                if dq.is_none() && dk.is_none() {
                    continue;
                }
                // dP = dY · Vᵀ, then dS = P ⊙ (dP − rowsum(dP ⊙ P)) · scale
                gemm(
                    sq,
                    dh,
                    sk,
                    T::one(),
                    View::rows(dy, q_off, d),
                    View::rows(vv, kv_off, d).t(),
                    T::zero(),
                    &mut ds,
                    0,
                    sk,
                );
                for (dsr, pr) in ds.chunks_mut(sk).zip(p.chunks(sk)) {
                    let dot: T = dsr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    for (x, &pp) in dsr.iter_mut().zip(pr) {
                        *x = pp * (*x - dot) * scale;
                    }
                }
                if let Some(dq) = dq.as_mut() {
                    gemm(
                        sq,
                        sk,
                        dh,
                        T::one(),
                        View::rows(&ds, 0, sk),
                        View::rows(kv, kv_off, d),
                        T::one(),
                        dq,
                        q_off,
                        d,
                    );
                }
                if let Some(dk) = dk.as_mut() {
                    gemm(
                        sk,
                        sq,
                        dh,
                        T::one(),
                        View::rows(&ds, 0, sk).t(),
                        View::rows(qv, q_off, d),
                        T::one(),
                        dk,
                        kv_off,
                        d,
                    );
                }
            }
        }
        for (var, g) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(g) = g {
                add_into(acc(grads, var, g.len()), &g);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf created with [`Graph::input`] or [`Graph::param`].
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

pub(crate) fn huber<T: Scalar>(r: T, delta: T) -> T {
    let a = r.abs();
    let half = T::of(0.5);
    if a <= delta {
        half * r * r
    } else {
        delta * (a - half * delta)
    }
}

fn gelu<T: Scalar>(x: T) -> T {
    x * T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}
