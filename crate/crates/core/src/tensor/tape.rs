//! The recording tape: forward ops and their backward rules.
//!
//! Nodes are appended in execution order, which is already a topological
//! order, so the backward pass is a single reverse sweep. A tape is
//! single-use: after `backward` it refuses to run again until rebuilt.
//! With `debug_assertions` every op output is scanned for non-finite
//! values and trips a checked error.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a tape. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
    },
    Relu {
        x: Var,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<u32>,
    },
    Reshape {
        x: Var,
    },
    ConcatCols {
        a: Var,
        b: Var,
    },
    /// Elementwise max over the middle axis of [groups, m, d].
    ViewMax {
        x: Var,
        argmax: Vec<u32>,
    },
    /// Mean over the middle axis of [groups, m, d].
    ViewMean {
        x: Var,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    SoftmaxXent {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Dense { .. } => "dense",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu { .. } => "relu",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Reshape { .. } => "reshape",
            Op::ConcatCols { .. } => "concat_cols",
            Op::ViewMax { .. } => "view_max",
            Op::ViewMean { .. } => "view_mean",
            Op::SelectRows { .. } => "select_rows",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Mse { .. } => "mse",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    /// Present iff the node requires gradients; zero-initialized.
    grad: Option<Vec<T>>,
    op: Op<T>,
}

/// Recording tape for one forward/backward cycle.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Row-wise softmax of a [rows, k] slice, numerically stabilized by
/// max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    assert!(k > 0 && logits.len().is_multiple_of(k));
    let mut out = vec![T::zero(); logits.len()];
    for (row, out_row) in logits.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let max = row.iter().cloned().fold(row[0], T::max);
        let mut sum = T::zero();
        for (o, &l) in out_row.iter_mut().zip(row) {
            *o = (l - max).exp();
            sum = sum + *o;
        }
        for o in out_row.iter_mut() {
            *o = *o / sum;
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    fn push(&mut self, value: Tensor<T>, grad: bool, op: Op<T>) -> Result<Var> {
        if self.check_finite && !value.data().iter().all(|v| v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value produced by {}",
                op.name()
            )));
        }
        let node = Node {
            grad: grad.then(|| vec![T::zero(); value.len()]),
            value,
            op,
        };
        self.nodes.push(node);
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.node(v).grad.is_some()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Gradient of the last backward target with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<&[T]> {
        self.node(v)
            .grad
            .as_deref()
            .ok_or_else(|| Error::domain("gradient requested for a non-differentiable node"))
    }

    /// Records an input that does not require gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, false, Op::Leaf)
    }

    /// Records a trainable input.
    pub fn parameter(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, true, Op::Leaf)
    }

    /// y = x W + b for x [n, i], w [i, o], b [o].
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::domain(format!(
                "dense shape mismatch: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let (n, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); n * o];
        T::gemm(
            n,
            i,
            o,
            T::one(),
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            T::zero(),
            &mut out,
        );
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(o) {
            for (y, &bv) in row.iter_mut().zip(bias) {
                *y = *y + bv;
            }
        }
        let grad = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        self.push(Tensor::new(vec![n, o], out)?, grad, Op::Dense { x, w, b })
    }

    /// 3x3 cross-correlation, stride 1, zero padding 1:
    /// x [b, c, h, w], k [f, c, 3, 3] -> [b, f, h, w].
    pub fn conv2d(&mut self, x: Var, k: Var) -> Result<Var> {
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 4 || ks.len() != 4 || ks[2] != 3 || ks[3] != 3 || xs[1] != ks[1] {
            return Err(Error::domain(format!(
                "conv2d shape mismatch: x {xs:?}, k {ks:?} (kernels must be [f, c, 3, 3])"
            )));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let f = ks[0];
        let hw = h * w;
        let ckk = c * 9;
        let mut out = vec![T::zero(); b * f * hw];
        let mut col = vec![T::zero(); ckk * hw];
        let xdata = self.value(x).data();
        let kdata = self.value(k).data();
        for bi in 0..b {
            im2col(&xdata[bi * c * hw..(bi + 1) * c * hw], c, h, w, &mut col);
            T::gemm(
                f,
                ckk,
                hw,
                T::one(),
                kdata,
                false,
                &col,
                false,
                T::zero(),
                &mut out[bi * f * hw..(bi + 1) * f * hw],
            );
        }
        let grad = self.requires_grad(x) || self.requires_grad(k);
        self.push(Tensor::new(vec![b, f, h, w], out)?, grad, Op::Conv2d { x, k })
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x)
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect(),
        )?;
        let grad = self.requires_grad(x);
        self.push(value, grad, Op::Relu { x })
    }

    /// 2x2 max pooling with stride 2. Spatial dims must be even. Ties
    /// route the gradient to the first maximal element in row-major
    /// window order.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::domain(format!("maxpool2d expects rank 4, got {xs:?}")));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::domain(format!(
                "maxpool2d requires even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![T::zero(); b * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        let xdata = self.value(x).data();
        for bc in 0..b * c {
            let plane = &xdata[bc * h * w..(bc + 1) * h * w];
            let out_base = bc * oh * ow;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = (2 * i + di) * w + 2 * j + dj;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[out_base + i * ow + j] = best;
                    argmax[out_base + i * ow + j] = (bc * h * w + best_idx) as u32;
                }
            }
        }
        let grad = self.requires_grad(x);
        self.push(
            Tensor::new(vec![b, c, oh, ow], out)?,
            grad,
            Op::MaxPool2d { x, argmax },
        )
    }

    /// Reinterprets the data with a new shape of equal length.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let expect: usize = shape.iter().product();
        if expect != self.value(x).len() {
            return Err(Error::domain(format!(
                "reshape to {:?} (= {expect}) from length {}",
                shape,
                self.value(x).len()
            )));
        }
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        let grad = self.requires_grad(x);
        self.push(value, grad, Op::Reshape { x })
    }

    /// Concatenates two [n, *] matrices along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::domain(format!(
                "concat_cols shape mismatch: {sa:?} vs {sb:?}"
            )));
        }
        let (n, da, db) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); n * (da + db)];
        let adata = self.value(a).data();
        let bdata = self.value(b).data();
        for row in 0..n {
            out[row * (da + db)..row * (da + db) + da]
                .copy_from_slice(&adata[row * da..(row + 1) * da]);
            out[row * (da + db) + da..(row + 1) * (da + db)]
                .copy_from_slice(&bdata[row * db..(row + 1) * db]);
        }
        let grad = self.requires_grad(a) || self.requires_grad(b);
        self.push(
            Tensor::new(vec![n, da + db], out)?,
            grad,
            Op::ConcatCols { a, b },
        )
    }

    /// Elementwise max over the middle axis: [g, m, d] -> [g, d]. Ties
    /// route the gradient to the first maximal entry.
    pub fn view_max(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[1] == 0 {
            return Err(Error::domain(format!(
                "view_max expects [groups, m >= 1, d], got {xs:?}"
            )));
        }
        let (g, m, d) = (xs[0], xs[1], xs[2]);
        let xdata = self.value(x).data();
        let mut out = vec![T::zero(); g * d];
        let mut argmax = vec![0u32; g * d];
        for gi in 0..g {
            for di in 0..d {
                let mut best = xdata[gi * m * d + di];
                let mut best_view = 0usize;
                for vi in 1..m {
                    let v = xdata[(gi * m + vi) * d + di];
                    if v > best {
                        best = v;
                        best_view = vi;
                    }
                }
                out[gi * d + di] = best;
                argmax[gi * d + di] = best_view as u32;
            }
        }
        let grad = self.requires_grad(x);
        self.push(
            Tensor::new(vec![g, d], out)?,
            grad,
            Op::ViewMax { x, argmax },
        )
    }

    /// Mean over the middle axis: [g, m, d] -> [g, d].
    pub fn view_mean(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || xs[1] == 0 {
            return Err(Error::domain(format!(
                "view_mean expects [groups, m >= 1, d], got {xs:?}"
            )));
        }
        let (g, m, d) = (xs[0], xs[1], xs[2]);
        let inv = T::one() / T::from_f64(m as f64);
        let xdata = self.value(x).data();
        let mut out = vec![T::zero(); g * d];
        for gi in 0..g {
            for vi in 0..m {
                for di in 0..d {
                    out[gi * d + di] = out[gi * d + di] + xdata[(gi * m + vi) * d + di];
                }
            }
        }
        for v in &mut out {
            *v = *v * inv;
        }
        let grad = self.requires_grad(x);
        self.push(Tensor::new(vec![g, d], out)?, grad, Op::ViewMean { x })
    }

    /// Gathers rows of a [n, d] matrix.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(Error::domain(format!("select_rows expects rank 2, got {xs:?}")));
        }
        let (n, d) = (xs[0], xs[1]);
        if rows.is_empty() {
            return Err(Error::domain("select_rows needs at least one row"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::domain(format!("select_rows index {bad} out of {n}")));
        }
        let xdata = self.value(x).data();
        let mut out = vec![T::zero(); rows.len() * d];
        for (dst, &r) in out.chunks_exact_mut(d).zip(rows) {
            dst.copy_from_slice(&xdata[r * d..(r + 1) * d]);
        }
        let grad = self.requires_grad(x);
        self.push(
            Tensor::new(vec![rows.len(), d], out)?,
            grad,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Mean cross-entropy of softmax(logits) against integer labels:
    /// logits [n, k], labels in [0, k).
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::domain(format!(
                "softmax_xent: logits {ls:?} vs {} labels",
                labels.len()
            )));
        }
        let (n, k) = (ls[0], ls[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::domain(format!("label {bad} out of range [0, {k})")));
        }
        let probs = softmax_rows(self.value(logits).data(), k);
        let mut loss = T::zero();
        for (row, &label) in probs.chunks_exact(k).zip(labels) {
            loss = loss - row[label].ln();
        }
        loss = loss / T::from_f64(n as f64);
        let grad = self.requires_grad(logits);
        self.push(
            Tensor::scalar(loss),
            grad,
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        )
    }

    /// Mean over all elements of the squared difference.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::domain(format!(
                "mse shape mismatch: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let mut sum = T::zero();
        for (&pv, &tv) in p.iter().zip(t) {
            let d = pv - tv;
            sum = sum + d * d;
        }
        let loss = sum / T::from_f64(p.len() as f64);
        let grad = self.requires_grad(pred) || self.requires_grad(target);
        self.push(Tensor::scalar(loss), grad, Op::Mse { pred, target })
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::domain(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x + y)
                .collect(),
        )?;
        let grad = self.requires_grad(a) || self.requires_grad(b);
        self.push(value, grad, Op::Add { a, b })
    }

    /// y = factor * x.
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|&v| v * factor).collect(),
        )?;
        let grad = self.requires_grad(x);
        self.push(value, grad, Op::Scale { x, factor })
    }

    /// Reverse sweep from a scalar loss. Populates the gradient of every
    /// differentiable node reachable from `loss`, accumulating across
    /// multiple uses. Single-use: a second call without rebuilding the
    /// tape is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::domain(
                "tape already consumed by backward; rebuild the graph to differentiate again",
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::domain(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] = T::one();
        } else {
            return Ok(()); // nothing differentiable feeds the loss
        }
        for idx in (0..=loss.0).rev() {
            // Detach this node's grad to appease the borrow checker while
            // we mutate input grads.
            let grad = match self.nodes[idx].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &grad);
            self.nodes[idx].grad = Some(grad);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, contribution: impl FnOnce(&mut [T])) {
        if let Some(g) = self.nodes[v.0].grad.as_mut() {
            contribution(g);
        }
    }

    fn propagate(&mut self, idx: usize, dy: &[T]) {
        // Ops never reference later nodes, so the borrows below are safe.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::Dense { x, w, b } => {
                let (n, i) = (self.shape(x)[0], self.shape(x)[1]);
                let o = self.shape(w)[1];
                if self.requires_grad(x) {
                    let mut dx = vec![T::zero(); n * i];
                    T::gemm(
                        n,
                        o,
                        i,
                        T::one(),
                        dy,
                        false,
                        self.value(w).data(),
                        true,
                        T::zero(),
                        &mut dx,
                    );
                    self.add_grad(x, |g| axpy(g, &dx));
                }
                if self.requires_grad(w) {
                    let mut dw = vec![T::zero(); i * o];
                    T::gemm(
                        i,
                        n,
                        o,
                        T::one(),
                        self.value(x).data(),
                        true,
                        dy,
                        false,
                        T::zero(),
                        &mut dw,
                    );
                    self.add_grad(w, |g| axpy(g, &dw));
                }
                if self.requires_grad(b) {
                    self.add_grad(b, |g| {
                        for row in dy.chunks_exact(o) {
                            for (gb, &d) in g.iter_mut().zip(row) {
                                *gb = *gb + d;
                            }
                        }
                    });
                }
            }
            &Op::Conv2d { x, k } => {
                let (b, c, h, w) = {
                    let s = self.shape(x);
                    (s[0], s[1], s[2], s[3])
                };
                let f = self.shape(k)[0];
                let (hw, ckk) = (h * w, c * 9);
                let need_dk = self.requires_grad(k);
                let need_dx = self.requires_grad(x);
                let mut dk = vec![T::zero(); if need_dk { f * ckk } else { 0 }];
                let mut dx = vec![T::zero(); if need_dx { b * c * hw } else { 0 }];
                {
                    let mut col = vec![T::zero(); ckk * hw];
                    let xdata = self.value(x).data();
                    let kdata = self.value(k).data();
                    for bi in 0..b {
                        let dyb = &dy[bi * f * hw..(bi + 1) * f * hw];
                        if need_dk {
                            im2col(&xdata[bi * c * hw..(bi + 1) * c * hw], c, h, w, &mut col);
                            T::gemm(f, hw, ckk, T::one(), dyb, false, &col, true, T::one(), &mut dk);
                        }
                        if need_dx {
                            // Overwrites col, so the dk pass above must come first.
                            T::gemm(ckk, f, hw, T::one(), kdata, true, dyb, false, T::zero(), &mut col);
                            col2im_add(&col, c, h, w, &mut dx[bi * c * hw..(bi + 1) * c * hw]);
                        }
                    }
                }
                if need_dk {
                    self.add_grad(k, |g| axpy(g, &dk));
                }
                if need_dx {
                    self.add_grad(x, |g| axpy(g, &dx));
                }
            }
            &Op::Relu { x } => {
                if self.requires_grad(x) {
                    let mask: Vec<bool> = self
                        .value(x)
                        .data()
                        .iter()
                        .map(|&v| v > T::zero())
                        .collect();
                    self.add_grad(x, |g| {
                        for ((gv, &m), &d) in g.iter_mut().zip(&mask).zip(dy) {
                            if m {
                                *gv = *gv + d;
                            }
                        }
                    });
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let (x, argmax) = (*x, argmax.clone());
                self.add_grad(x, |g| {
                    for (&a, &d) in argmax.iter().zip(dy) {
                        g[a as usize] = g[a as usize] + d;
                    }
                });
            }
            &Op::Reshape { x } => {
                self.add_grad(x, |g| axpy(g, dy));
            }
            &Op::ConcatCols { a, b } => {
                let da = self.shape(a)[1];
                let db = self.shape(b)[1];
                self.add_grad(a, |g| {
                    for (row, drow) in g.chunks_exact_mut(da).zip(dy.chunks_exact(da + db)) {
                        axpy(row, &drow[..da]);
                    }
                });
                self.add_grad(b, |g| {
                    for (row, drow) in g.chunks_exact_mut(db).zip(dy.chunks_exact(da + db)) {
                        axpy(row, &drow[da..]);
                    }
                });
            }
            Op::ViewMax { x, argmax } => {
                let x = *x;
                let argmax = argmax.clone();
                let (m, d) = (self.shape(x)[1], self.shape(x)[2]);
                self.add_grad(x, |g| {
                    for (flat, (&view, &dv)) in argmax.iter().zip(dy).enumerate() {
                        let (gi, di) = (flat / d, flat % d);
                        let idx = (gi * m + view as usize) * d + di;
                        g[idx] = g[idx] + dv;
                    }
                });
            }
            &Op::ViewMean { x } => {
                let (m, d) = (self.shape(x)[1], self.shape(x)[2]);
                let inv = T::one() / T::from_f64(m as f64);
                self.add_grad(x, |g| {
                    for (flat, &dv) in dy.iter().enumerate() {
                        let (gi, di) = (flat / d, flat % d);
                        for vi in 0..m {
                            let idx = (gi * m + vi) * d + di;
                            g[idx] = g[idx] + dv * inv;
                        }
                    }
                });
            }
            Op::SelectRows { x, rows } => {
                let x = *x;
                let rows = rows.clone();
                let d = self.shape(x)[1];
                self.add_grad(x, |g| {
                    for (src, &r) in dy.chunks_exact(d).zip(&rows) {
                        axpy(&mut g[r * d..(r + 1) * d], src);
                    }
                });
            }
            Op::SoftmaxXent {
                logits,
                probs,
                labels,
            } => {
                let logits = *logits;
                let k = self.shape(logits)[1];
                let n = labels.len();
                let scale = dy[0] / T::from_f64(n as f64);
                let mut dl = probs.clone();
                for (row, &label) in dl.chunks_exact_mut(k).zip(labels) {
                    row[label] = row[label] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                self.add_grad(logits, |g| axpy(g, &dl));
            }
            &Op::Mse { pred, target } => {
                let count = T::from_f64(self.value(pred).len() as f64);
                let two = T::from_f64(2.0);
                let diffs: Vec<T> = self
                    .value(pred)
                    .data()
                    .iter()
                    .zip(self.value(target).data())
                    .map(|(&p, &t)| two * (p - t) * dy[0] / count)
                    .collect();
                self.add_grad(pred, |g| axpy(g, &diffs));
                self.add_grad(target, |g| {
                    for (gv, &d) in g.iter_mut().zip(&diffs) {
                        *gv = *gv - d;
                    }
                });
            }
            &Op::Add { a, b } => {
                self.add_grad(a, |g| axpy(g, dy));
                self.add_grad(b, |g| axpy(g, dy));
            }
            &Op::Scale { x, factor } => {
                self.add_grad(x, |g| {
                    for (gv, &d) in g.iter_mut().zip(dy) {
                        *gv = *gv + factor * d;
                    }
                });
            }
        }
    }
}

fn axpy<T: Scalar>(acc: &mut [T], delta: &[T]) {
    debug_assert_eq!(acc.len(), delta.len());
    for (a, &d) in acc.iter_mut().zip(delta) {
        *a = *a + d;
    }
}

/// Unrolls one image [c, h, w] into columns [(c, ki, kj), (i, j)] for a
/// 3x3 kernel with zero padding 1.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(col.len(), c * 9 * h * w);
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ki in 0..3 {
            for kj in 0..3 {
                let rows = &mut col[((ci * 3 + ki) * 3 + kj) * hw..][..hw];
                for i in 0..h {
                    let dst = &mut rows[i * w..(i + 1) * w];
                    let si = i as isize + ki as isize - 1;
                    if si < 0 || si >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    match kj {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back onto one image; the adjoint of [`im2col`].
fn col2im_add<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), c * h * w);
    debug_assert_eq!(col.len(), c * 9 * h * w);
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ki in 0..3 {
            for kj in 0..3 {
                let rows = &col[((ci * 3 + ki) * 3 + kj) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + ki as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    let seg = &rows[i * w..(i + 1) * w];
                    match kj {
                        0 => {
                            for j in 1..w {
                                dst[j - 1] = dst[j - 1] + seg[j];
                            }
                        }
                        1 => axpy(dst, seg),
                        _ => {
                            for j in 0..w - 1 {
                                dst[j + 1] = dst[j + 1] + seg[j];
                            }
                        }
                    }
                }
            }
        }
    }
}
