use std::collections::HashMap;

use super::gemm::gemm;
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Default negative slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Variance guard inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistics at each training step.
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch normalization behaviour.
#[derive(Debug, Clone)]
pub enum BnMode {
    /// Normalize with batch statistics; they are recorded under `name` so the
    /// caller can fold them into the running averages.
    Train { name: String },
    /// Normalize with stored running statistics.
    Eval { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    LeakyRelu(Var, f64),
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Concat(Vec<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    /// Scalar computed outside the tape, with its gradient precomputed.
    External { x: Var, grad: Vec<f64> },
}

/// Records a computation for reverse-mode differentiation.
///
/// Values are immutable once recorded; [`Tape::backward`] accumulates into
/// per-node gradient buffers so shared subgraphs receive every contribution.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
    overrides: HashMap<String, Var>,
    bn_stats: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Diagnostic(format!("{name} produced a non-finite value")));
        }
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Ok(Var(self.values.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient of the last `backward` call's output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Substitute `var` whenever `name` is requested via [`Tape::param`].
    pub fn override_param(&mut self, name: &str, var: Var) {
        self.overrides.insert(name.to_string(), var);
    }

    /// Binds a parameter from `store`. Tracked parameters receive gradients
    /// that [`ParamStore::accumulate_grads`] can collect after `backward`.
    pub fn param(&mut self, store: &ParamStore, name: &str, track: bool) -> Result<Var> {
        if let Some(&v) = self.overrides.get(name) {
            return Ok(v);
        }
        let p = store.get(name)?;
        let v = self.push(p.value.clone(), Op::Leaf, track, "param")?;
        if track {
            self.params.push((name.to_string(), v));
        }
        Ok(v)
    }

    pub(crate) fn tracked_params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Batch statistics recorded by training-mode batch normalization:
    /// `(name, mean, unbiased variance)`.
    pub fn bn_stats(&self) -> &[(String, Vec<f64>, Vec<f64>)] {
        &self.bn_stats
    }

    /// `x W^T + b` for `x: [R, I]`, `w: [O, I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, inp) = self.value(x).dims2()?;
        let (out, w_in) = self.value(w).dims2()?;
        if w_in != inp || self.value(b).len() != out {
            return Err(Error::InvalidShape(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let mut y = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            y.extend_from_slice(self.value(b).data());
        }
        gemm(rows, inp, out, 1.0, self.value(x).data(), (inp, 1), self.value(w).data(), (1, inp), 1.0, &mut y, out);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Tensor::matrix(rows, out, y)?, Op::Linear { x, w, b }, needs, "linear")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let y = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs, "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let y = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push(y, Op::LeakyRelu(x, slope), needs, "leaky_relu")
    }

    /// Per-channel normalization of `x: [R, F]` over all `R` rows (batch and
    /// point axes together), followed by the affine `gamma`, `beta`.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode) -> Result<Var> {
        let (rows, feats) = self.value(x).dims2()?;
        if self.value(gamma).len() != feats || self.value(beta).len() != feats {
            return Err(Error::InvalidShape(format!("batchnorm over {feats} channels with mismatched affine")));
        }
        let (mean, var, train_name) = match mode {
            BnMode::Train { name } => {
                if rows < 2 {
                    return Err(Error::InvalidInput("training-mode batchnorm needs more than one row".into()));
                }
                let xd = self.value(x).data();
                let mut mean = vec![0.0; feats];
                for r in 0..rows {
                    for (m, v) in mean.iter_mut().zip(&xd[r * feats..(r + 1) * feats]) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; feats];
                for r in 0..rows {
                    for f in 0..feats {
                        let d = xd[r * feats + f] - mean[f];
                        var[f] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (mean, var, Some(name))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != feats || var.len() != feats {
                    return Err(Error::InvalidShape("batchnorm running statistics have the wrong width".into()));
                }
                (mean, var, None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xd = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * feats];
        let mut y = vec![0.0; rows * feats];
        for r in 0..rows {
            for f in 0..feats {
                let i = r * feats + f;
                xhat[i] = (xd[i] - mean[f]) * inv_std[f];
                y[i] = g[f] * xhat[i] + b[f];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let op = match train_name {
            Some(name) => {
                let unbiased = var.iter().map(|v| v * rows as f64 / (rows - 1) as f64).collect();
                self.bn_stats.push((name, mean, unbiased));
                Op::BatchNormTrain { x, gamma, beta, xhat, inv_std }
            }
            None => Op::BatchNormEval { x, gamma, beta, xhat, inv_std },
        };
        self.push(Tensor::matrix(rows, feats, y)?, op, needs, "batchnorm")
    }

    /// Max over the point axis: `[B*M, F] -> [B, F]` with `M = points`.
    pub fn maxpool_points(&mut self, x: Var, points: usize) -> Result<Var> {
        let (rows, feats) = self.value(x).dims2()?;
        if points == 0 || rows % points != 0 {
            return Err(Error::InvalidShape(format!("{rows} rows do not split into clouds of {points} points")));
        }
        let batch = rows / points;
        let xd = self.value(x).data();
        let mut y = vec![f64::NEG_INFINITY; batch * feats];
        let mut argmax = vec![0usize; batch * feats];
        for b in 0..batch {
            for m in 0..points {
                let row = b * points + m;
                for f in 0..feats {
                    let v = xd[row * feats + f];
                    if v > y[b * feats + f] {
                        y[b * feats + f] = v;
                        argmax[b * feats + f] = row;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::matrix(batch, feats, y)?, Op::MaxPool { x, argmax }, needs, "maxpool")
    }

    /// Column-wise concatenation of `[B, F_i]` matrices.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let (rows, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let (r, c) = self.value(v).dims2()?;
            if r != rows {
                return Err(Error::InvalidShape(format!("concat batch mismatch: {r} vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in xs.iter().zip(&widths) {
                y.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        self.push(Tensor::matrix(rows, total, y)?, Op::Concat(xs.to_vec()), needs, "concat")
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::InvalidShape(format!(
                "{name}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let y = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(y, op, needs, name)
    }

    fn unary(&mut self, a: Var, name: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let y = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a);
        self.push(y, op, needs, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "scale", |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "add_scalar", |x| x + s, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "abs", f64::abs, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs, "mean")
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if len == 0 || start + len > cols {
            return Err(Error::InvalidShape(format!("column slice {start}..{} of {cols}", start + len)));
        }
        let xd = self.value(x).data();
        let mut y = Vec::with_capacity(rows * len);
        for r in 0..rows {
            y.extend_from_slice(&xd[r * cols + start..r * cols + start + len]);
        }
        let needs = self.needs(x);
        self.push(Tensor::matrix(rows, len, y)?, Op::SliceCols { x, start }, needs, "slice_cols")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let y = self.value(x).clone().reshaped(shape)?;
        let needs = self.needs(x);
        self.push(y, Op::Reshape(x), needs, "reshape")
    }

    /// Records a scalar `value` of `x` computed elsewhere, with `grad` its
    /// gradient with respect to `x`.
    pub fn external(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Result<Var> {
        if grad.len() != self.value(x).len() {
            return Err(Error::InvalidShape(format!(
                "external gradient has {} entries for a tensor of {}",
                grad.len(),
                self.value(x).len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diagnostic("external gradient is non-finite".into()));
        }
        let needs = self.needs(x);
        self.push(Tensor::scalar(value), Op::External { x, grad }, needs, "external")
    }

    /// Reverse pass from the scalar `out`. Gradients from earlier calls are
    /// discarded.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::InvalidShape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        self.grads = vec![None; self.values.len()];
        self.grads[out.0] = Some(vec![1.0]);
        for id in (0..=out.0).rev() {
            if !self.needs_grad[id] {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let Tape { values, ops, needs_grad, grads, .. } = self;
        let needs = |v: &Var| needs_grad[v.0];
        match &ops[id] {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (rows, inp) = values[x.0].dims2().expect("checked in forward");
                let out = values[w.0].shape()[0];
                if needs(x) {
                    let wd = values[w.0].data();
                    let dx = acc(grads, needs_grad, values, *x).expect("needs grad");
                    gemm(rows, out, inp, 1.0, g, (out, 1), wd, (inp, 1), 1.0, dx, inp);
                }
                if needs(w) {
                    let xd = values[x.0].data();
                    let dw = acc(grads, needs_grad, values, *w).expect("needs grad");
                    gemm(out, rows, inp, 1.0, g, (1, out), xd, (inp, 1), 1.0, dw, inp);
                }
                if let Some(db) = acc(grads, needs_grad, values, *b) {
                    for r in 0..rows {
                        for (d, gv) in db.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xd = values[x.0].data();
                if let Some(dx) = acc(grads, needs_grad, values, *x) {
                    for ((d, &xv), &gv) in dx.iter_mut().zip(xd).zip(g) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xd = values[x.0].data();
                if let Some(dx) = acc(grads, needs_grad, values, *x) {
                    for ((d, &xv), &gv) in dx.iter_mut().zip(xd).zip(g) {
                        *d += if xv > 0.0 { gv } else { slope * gv };
                    }
                }
            }
            Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
                let feats = inv_std.len();
                let rows = xhat.len() / feats;
                let mut sum_g = vec![0.0; feats];
                let mut sum_gx = vec![0.0; feats];
                for r in 0..rows {
                    for f in 0..feats {
                        let i = r * feats + f;
                        sum_g[f] += g[i];
                        sum_gx[f] += g[i] * xhat[i];
                    }
                }
                if let Some(db) = acc(grads, needs_grad, values, *beta) {
                    db.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += s);
                }
                if let Some(dg) = acc(grads, needs_grad, values, *gamma) {
                    dg.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += s);
                }
                if needs(x) {
                    let gam = values[gamma.0].data().to_vec();
                    let n = rows as f64;
                    let dx = acc(grads, needs_grad, values, *x).expect("needs grad");
                    for r in 0..rows {
                        for f in 0..feats {
                            let i = r * feats + f;
                            dx[i] += gam[f] * inv_std[f] / n * (n * g[i] - sum_g[f] - xhat[i] * sum_gx[f]);
                        }
                    }
                }
            }
            Op::BatchNormEval { x, gamma, beta, xhat, inv_std } => {
                let feats = inv_std.len();
                let rows = xhat.len() / feats;
                if let Some(db) = acc(grads, needs_grad, values, *beta) {
                    for r in 0..rows {
                        for f in 0..feats {
                            db[f] += g[r * feats + f];
                        }
                    }
                }
                if let Some(dg) = acc(grads, needs_grad, values, *gamma) {
                    for r in 0..rows {
                        for f in 0..feats {
                            dg[f] += g[r * feats + f] * xhat[r * feats + f];
                        }
                    }
                }
                if needs(x) {
                    let gam = values[gamma.0].data().to_vec();
                    let dx = acc(grads, needs_grad, values, *x).expect("needs grad");
                    for r in 0..rows {
                        for f in 0..feats {
                            dx[r * feats + f] += g[r * feats + f] * gam[f] * inv_std[f];
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let feats = values[x.0].shape()[1];
                if let Some(dx) = acc(grads, needs_grad, values, *x) {
                    for (i, &row) in argmax.iter().enumerate() {
                        dx[row * feats + i % feats] += g[i];
                    }
                }
            }
            Op::Concat(xs) => {
                let widths: Vec<usize> = xs.iter().map(|v| values[v.0].shape()[1]).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&v, &w) in xs.iter().zip(&widths) {
                    if let Some(dx) = acc(grads, needs_grad, values, v) {
                        for r in 0..rows {
                            for c in 0..w {
                                dx[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(d) = acc(grads, needs_grad, values, v) {
                        d.iter_mut().zip(g).for_each(|(d, gv)| *d += sign * gv);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(d) = acc(grads, needs_grad, values, v) {
                        d.iter_mut().zip(g).for_each(|(d, gv)| *d += sign * gv);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (values[a.0].data(), values[b.0].data());
                if let Some(da) = acc(grads, needs_grad, values, *a) {
                    for ((d, gv), bv) in da.iter_mut().zip(g).zip(bd) {
                        *d += gv * bv;
                    }
                }
                if let Some(db) = acc(grads, needs_grad, values, *b) {
                    for ((d, gv), av) in db.iter_mut().zip(g).zip(ad) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = acc(grads, needs_grad, values, *a) {
                    d.iter_mut().zip(g).for_each(|(d, gv)| *d += s * gv);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(d) = acc(grads, needs_grad, values, *a) {
                    d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                }
            }
            Op::Exp(a) => {
                let y = values[id].data();
                if let Some(d) = acc(grads, needs_grad, values, *a) {
                    for ((d, gv), yv) in d.iter_mut().zip(g).zip(y) {
                        *d += gv * yv;
                    }
                }
            }
            Op::Square(a) => {
                let x = values[a.0].data();
                if let Some(d) = acc(grads, needs_grad, values, *a) {
                    for ((d, gv), xv) in d.iter_mut().zip(g).zip(x) {
                        *d += 2.0 * xv * gv;
                    }
                }
            }
            Op::Abs(a) => {
                let x = values[a.0].data();
                if let Some(d) = acc(grads, needs_grad, values, *a) {
                    for ((d, gv), xv) in d.iter_mut().zip(g).zip(x) {
                        // subgradient 0 at the kink
                        if *xv > 0.0 {
                            *d += gv;
                        } else if *xv < 0.0 {
                            *d -= gv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = acc(grads, needs_grad, values, *a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(d) = acc(grads, needs_grad, values, *a) {
                    let s = g[0] / d.len() as f64;
                    d.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SliceCols { x, start } => {
                let cols = values[x.0].shape()[1];
                let len = values[id].shape()[1];
                if let Some(dx) = acc(grads, needs_grad, values, *x) {
                    let rows = g.len() / len;
                    for r in 0..rows {
                        for c in 0..len {
                            dx[r * cols + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::External { x, grad } => {
                if let Some(dx) = acc(grads, needs_grad, values, *x) {
                    dx.iter_mut().zip(grad).for_each(|(d, gv)| *d += g[0] * gv);
                }
            }
        }
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], needs_grad: &[bool], values: &[Tensor], v: Var) -> Option<&'a mut Vec<f64>> {
    if !needs_grad[v.0] {
        return None;
    }
    let n = values[v.0].len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_hand_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0])).unwrap();
        let w = tape.leaf(t(&[1, 2], &[1.0, 1.0])).unwrap();
        let b = tape.leaf(t(&[1], &[0.0])).unwrap();
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0]);

        let x = tape.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0])).unwrap();
        let eye = tape.leaf(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
        let zero = tape.leaf(Tensor::zeros(&[3])).unwrap();
        let y = tape.linear(x, eye, zero).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn linear_shape_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let w = tape.leaf(Tensor::zeros(&[4, 2])).unwrap();
        let b = tape.leaf(Tensor::zeros(&[4])).unwrap();
        assert!(matches!(tape.linear(x, w, b), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let l = tape.leaky_relu(x, LEAKY_SLOPE).unwrap();
        assert_eq!(tape.value(l).data(), &[-0.2, 0.0, 2.0]);
        // subgradients at zero: 0 for relu, slope for leaky
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
        let s = tape.sum(l).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.2, 0.2, 1.0]);
    }

    #[test]
    fn batchnorm_eval_identity_and_constant_train() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[0.3, -1.0, 2.0, 4.0])).unwrap();
        let g = tape.leaf(Tensor::filled(&[2], 1.0)).unwrap();
        let b = tape.leaf(Tensor::zeros(&[2])).unwrap();
        let y = tape.batchnorm(x, g, b, BnMode::Eval { mean: vec![0.0; 2], var: vec![1.0; 2] }).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            // identity up to the variance guard
            assert!((a - e / (1.0 + BN_EPS).sqrt()).abs() < 1e-15);
        }
        let c = tape.leaf(Tensor::filled(&[4, 2], 3.0)).unwrap();
        let y = tape.batchnorm(c, g, b, BnMode::Train { name: "bn".into() }).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let one = tape.leaf(Tensor::zeros(&[1, 2])).unwrap();
        assert!(matches!(
            tape.batchnorm(one, g, b, BnMode::Train { name: "bn".into() }),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn maxpool_routes_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3, 1], &[1.0, 5.0, 3.0])).unwrap();
        let y = tape.maxpool_points(x, 3).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0]);

        let single = tape.leaf(t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let y = tape.maxpool_points(single, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
        assert_eq!(tape.value(y).shape(), &[1, 3]);
    }

    #[test]
    fn concat_orders_and_checks_batch() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1, 2], &[1.0, 2.0])).unwrap();
        let b = tape.leaf(t(&[1, 3], &[3.0, 4.0, 5.0])).unwrap();
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let only = tape.concat(&[a]).unwrap();
        assert_eq!(tape.value(only), tape.value(a));
        let d = tape.leaf(Tensor::zeros(&[2, 1])).unwrap();
        assert!(matches!(tape.concat(&[a, d]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn non_finite_trips_diagnostic() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[1000.0])).unwrap();
        assert!(matches!(tape.exp(x), Err(Error::Diagnostic(_))));
    }

    #[test]
    fn shared_subgraph_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0])).unwrap();
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap();
        tape.backward(z).unwrap();
        // z = 2x^2
        assert_eq!(tape.grad(x).unwrap(), &[12.0]);
    }
}
