use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::losses;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag of a tape node, exposed for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool2d,
    Upsample,
    Relu,
    Sigmoid,
    Linear,
    Concat,
    GlobalAvgPool,
    Reshape,
    Pick,
    Axpby,
    Affine,
    Mul,
    Sum,
    Mse,
    Mae,
    Ssim,
    CrossEntropy,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Upsample { x: Var, factor: usize },
    Relu { x: Var },
    Sigmoid { x: Var },
    Linear { x: Var, w: Var, b: Var },
    Concat { a: Var, b: Var },
    GlobalAvgPool { x: Var },
    Reshape { x: Var },
    Pick { x: Var, index: usize },
    Axpby { a: Var, wa: T, b: Var, wb: T },
    Affine { x: Var, scale: T },
    Mul { a: Var, b: Var },
    Sum { x: Var },
    Mse { a: Var, b: Var },
    Mae { a: Var, b: Var },
    Ssim { a: Var, b: Var, ga: Vec<f64>, gb: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, parts: Vec<(Vec<f64>, bool)> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Linear { .. } => OpKind::Linear,
            Op::Concat { .. } => OpKind::Concat,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Pick { .. } => OpKind::Pick,
            Op::Axpby { .. } => OpKind::Axpby,
            Op::Affine { .. } => OpKind::Affine,
            Op::Mul { .. } => OpKind::Mul,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mse { .. } => OpKind::Mse,
            Op::Mae { .. } => OpKind::Mae,
            Op::Ssim { .. } => OpKind::Ssim,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records executed operations in order so gradients can be replayed in
/// reverse. Nodes are appended only after their inputs, so the node list is
/// already topologically sorted.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ops(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.nodes.iter().map(|n| n.op.kind())
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.ops().filter(|&k| k == kind).count()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by [`Tape::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Moves a value out of the tape, leaving an empty tensor behind.
    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [batch, cin, h, wd] = self.value(x).dims4(OP)?;
        let [cout, wcin, kh, kw] = self.value(w).dims4(OP)?;
        if wcin != cin {
            return Err(Error::Dimension {
                op: OP,
                axis: "input channels",
                expected: cin,
                got: wcin,
            });
        }
        if kh != kw {
            return Err(Error::Dimension {
                op: OP,
                axis: "kernel width",
                expected: kh,
                got: kw,
            });
        }
        if self.value(b).len() != cout {
            return Err(Error::Dimension {
                op: OP,
                axis: "bias length",
                expected: cout,
                got: self.value(b).len(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
        }
        if kh > h + 2 * padding {
            return Err(Error::Dimension {
                op: OP,
                axis: "height",
                expected: kh,
                got: h + 2 * padding,
            });
        }
        if kw > wd + 2 * padding {
            return Err(Error::Dimension {
                op: OP,
                axis: "width",
                expected: kw,
                got: wd + 2 * padding,
            });
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w: wd,
            cout,
            k: kh,
            stride,
            pad: padding,
            oh: kernels::conv_out_dim(h, kh, stride, padding),
            ow: kernels::conv_out_dim(wd, kw, stride, padding),
        };
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &geom);
        let value = Tensor::new(&[batch, cout, geom.oh, geom.ow], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        const OP: &str = "maxpool2d";
        let dims = self.value(x).dims4(OP)?;
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidArgument("maxpool2d: kernel and stride must be positive".into()));
        }
        if kernel > dims[2] {
            return Err(Error::Dimension {
                op: OP,
                axis: "height",
                expected: kernel,
                got: dims[2],
            });
        }
        if kernel > dims[3] {
            return Err(Error::Dimension {
                op: OP,
                axis: "width",
                expected: kernel,
                got: dims[3],
            });
        }
        let (out, argmax, oh, ow) = kernels::maxpool_forward(self.value(x).data(), dims, kernel, stride);
        let value = Tensor::new(&[dims[0], dims[1], oh, ow], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MaxPool2d { x, argmax }, rg))
    }

    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let dims = self.value(x).dims4("bilinear_upsample")?;
        if factor == 0 {
            return Err(Error::InvalidArgument("bilinear_upsample: factor must be >= 1".into()));
        }
        let out = kernels::upsample_forward(self.value(x).data(), dims, factor);
        let value = Tensor::new(&[dims[0], dims[1], dims[2] * factor, dims[3] * factor], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Upsample { x, factor }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid { x }, rg)
    }

    /// `x [B, F] · w [F, G] + b [G]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "linear";
        let (rows, f) = match self.value(x).shape() {
            &[r, f] => (r, f),
            s => {
                return Err(Error::Dimension {
                    op: OP,
                    axis: "input rank",
                    expected: 2,
                    got: s.len(),
                })
            }
        };
        let (wf, g) = match self.value(w).shape() {
            &[a, b] => (a, b),
            s => {
                return Err(Error::Dimension {
                    op: OP,
                    axis: "weight rank",
                    expected: 2,
                    got: s.len(),
                })
            }
        };
        if wf != f {
            return Err(Error::Dimension {
                op: OP,
                axis: "input features",
                expected: wf,
                got: f,
            });
        }
        if self.value(b).len() != g {
            return Err(Error::Dimension {
                op: OP,
                axis: "bias length",
                expected: g,
                got: self.value(b).len(),
            });
        }
        let bias = self.value(b).data();
        let mut out: Vec<T> = (0..rows).flat_map(|_| bias.iter().copied()).collect();
        T::gemm(
            rows,
            f,
            g,
            self.value(x).data(),
            (f as isize, 1),
            self.value(w).data(),
            (g as isize, 1),
            &mut out,
            true,
        );
        let value = Tensor::new(&[rows, g], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    /// Channel-wise concatenation: `a`'s channels first, then `b`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "concat_channels";
        let [ba, ca, ha, wa] = self.value(a).dims4(OP)?;
        let [bb, cb, hb, wb] = self.value(b).dims4(OP)?;
        for (axis, e, g) in [("batch", ba, bb), ("height", ha, hb), ("width", wa, wb)] {
            if e != g {
                return Err(Error::Dimension {
                    op: OP,
                    axis,
                    expected: e,
                    got: g,
                });
            }
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        for n in 0..ba {
            out.extend_from_slice(&self.value(a).data()[n * ca * plane..(n + 1) * ca * plane]);
            out.extend_from_slice(&self.value(b).data()[n * cb * plane..(n + 1) * cb * plane]);
        }
        let value = Tensor::new(&[ba, ca + cb, ha, wa], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Mean over the spatial axes: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::from_f64(1.0 / plane as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(&[b, c], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool { x }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Scalar taken from flat position `index` of `x`.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.value(x).len();
        if index >= n {
            return Err(Error::InvalidArgument(format!("pick: index {index} out of {n}")));
        }
        let value = Tensor::scalar(self.value(x).data()[index]);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Pick { x, index }, rg))
    }

    /// `wa * a + wb * b` for equally shaped operands.
    pub fn axpby(&mut self, a: Var, wa: f64, b: Var, wb: f64) -> Result<Var> {
        self.check_same("axpby", a, b)?;
        let (wa, wb) = (T::from_f64(wa), T::from_f64(wb));
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| wa * x + wb * y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Axpby { a, wa, b, wb }, rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, c) = (T::from_f64(scale), T::from_f64(shift));
        let value = self.value(x).map(|v| s * v + c);
        let rg = self.rg(&[x]);
        self.push(value, Op::Affine { x, scale: s }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum { x }, rg)
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = losses::mse(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(T::from_f64(v)), Op::Mse { a, b }, rg))
    }

    pub fn mae(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = losses::mae(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(T::from_f64(v)), Op::Mae { a, b }, rg))
    }

    /// Mean over the leading (sample) axis of per-sample global SSIM.
    pub fn ssim(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("ssim", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() == 0 || va.is_empty() {
            return Err(Error::contract("ssim", "expected a non-empty tensor with a sample axis"));
        }
        let samples = va.shape()[0];
        let per = va.len() / samples;
        let mut ga = vec![0.0; va.len()];
        let mut gb = vec![0.0; va.len()];
        let mut total = 0.0;
        for s in 0..samples {
            let r = s * per..(s + 1) * per;
            total += losses::ssim_slices(
                &va.data()[r.clone()],
                &vb.data()[r.clone()],
                Some((&mut ga[r.clone()], &mut gb[r])),
            );
        }
        let inv = 1.0 / samples as f64;
        ga.iter_mut().chain(gb.iter_mut()).for_each(|g| *g *= inv);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(T::from_f64(total * inv)), Op::Ssim { a, b, ga, gb }, rg))
    }

    /// `1 - ssim(a, b)`.
    pub fn ssim_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.ssim(a, b)?;
        Ok(self.affine(s, -1.0, 1.0))
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (v, parts) = losses::cross_entropy_parts(self.value(logits), targets)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(T::from_f64(v)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                parts,
            },
            rg,
        ))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::contract(
                op,
                format!(
                    "shape {:?} does not match {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn accumulate_data(&mut self, v: Var, data: Vec<T>) {
        let shape = self.nodes[v.0].value.shape().to_vec();
        self.accumulate(v, Tensor { shape, data });
    }

    /// Reverse-mode sweep from a scalar `loss`. Leaf gradients add onto
    /// whatever is already stored; call [`Tape::zero_grad`] to start fresh.
    /// Intermediate gradients are recomputed on every sweep.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        // only leaves keep gradients across sweeps
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        let seed = Tensor::full(self.value(loss).shape(), T::one());
        self.accumulate(loss, seed);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &Tensor<T>) {
        let gd = g.data();
        // Split borrows: the op and values are read while grads of earlier
        // nodes are written.
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                let need = |v: Var| self.nodes[v.0].requires_grad;
                let mut dx = need(x).then(|| vec![T::zero(); self.value(x).len()]);
                let mut dw = need(w).then(|| vec![T::zero(); self.value(w).len()]);
                let mut db = need(b).then(|| vec![T::zero(); self.value(b).len()]);
                kernels::conv2d_backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    gd,
                    &geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, d) in [(x, dx), (w, dw), (b, db)] {
                    if let Some(d) = d {
                        self.accumulate_data(v, d);
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dx[src] += gv;
                }
                let x = *x;
                self.accumulate_data(x, dx);
            }
            Op::Upsample { x, factor } => {
                let (x, factor) = (*x, *factor);
                let dims = self.value(x).dims4("bilinear_upsample").expect("validated");
                let mut dx = vec![T::zero(); self.value(x).len()];
                kernels::upsample_backward(gd, dims, factor, &mut dx);
                self.accumulate_data(x, dx);
            }
            Op::Relu { x } => {
                let x = *x;
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate_data(x, dx);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                self.accumulate_data(x, dx);
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let [rows, f] = [self.value(x).shape()[0], self.value(x).shape()[1]];
                let gcols = self.value(w).shape()[1];
                if self.requires_grad(x) {
                    let mut dx = vec![T::zero(); rows * f];
                    T::gemm(
                        rows,
                        gcols,
                        f,
                        gd,
                        (gcols as isize, 1),
                        self.value(w).data(),
                        (1, gcols as isize),
                        &mut dx,
                        false,
                    );
                    self.accumulate_data(x, dx);
                }
                if self.requires_grad(w) {
                    let mut dw = vec![T::zero(); f * gcols];
                    T::gemm(
                        f,
                        rows,
                        gcols,
                        self.value(x).data(),
                        (1, f as isize),
                        gd,
                        (gcols as isize, 1),
                        &mut dw,
                        false,
                    );
                    self.accumulate_data(w, dw);
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); gcols];
                    for row in gd.chunks(gcols) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate_data(b, db);
                }
            }
            Op::Concat { a, b } => {
                let (a, b) = (*a, *b);
                let [n, ca, h, w] = self.value(a).dims4("concat").expect("validated");
                let cb = self.value(b).shape()[1];
                let plane = h * w;
                let (mut da, mut db) = (Vec::with_capacity(n * ca * plane), Vec::with_capacity(n * cb * plane));
                for s in gd.chunks((ca + cb) * plane) {
                    da.extend_from_slice(&s[..ca * plane]);
                    db.extend_from_slice(&s[ca * plane..]);
                }
                self.accumulate_data(a, da);
                self.accumulate_data(b, db);
            }
            Op::GlobalAvgPool { x } => {
                let x = *x;
                let [_, _, h, w] = self.value(x).dims4("global_avg_pool").expect("validated");
                let inv = T::from_f64(1.0 / (h * w) as f64);
                let dx = gd.iter().flat_map(|&g| std::iter::repeat_n(g * inv, h * w)).collect();
                self.accumulate_data(x, dx);
            }
            Op::Reshape { x } => {
                let x = *x;
                self.accumulate_data(x, gd.to_vec());
            }
            Op::Pick { x, index } => {
                let (x, index) = (*x, *index);
                let mut dx = vec![T::zero(); self.value(x).len()];
                dx[index] = gd[0];
                self.accumulate_data(x, dx);
            }
            Op::Axpby { a, wa, b, wb } => {
                let (a, wa, b, wb) = (*a, *wa, *b, *wb);
                self.accumulate_data(a, gd.iter().map(|&g| g * wa).collect());
                self.accumulate_data(b, gd.iter().map(|&g| g * wb).collect());
            }
            Op::Affine { x, scale } => {
                let (x, scale) = (*x, *scale);
                self.accumulate_data(x, gd.iter().map(|&g| g * scale).collect());
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let da = self.value(b).data().iter().zip(gd).map(|(&y, &g)| g * y).collect();
                let db = self.value(a).data().iter().zip(gd).map(|(&x, &g)| g * x).collect();
                self.accumulate_data(a, da);
                self.accumulate_data(b, db);
            }
            Op::Sum { x } => {
                let x = *x;
                self.accumulate_data(x, vec![gd[0]; self.value(x).len()]);
            }
            Op::Mse { a, b } => {
                let (a, b) = (*a, *b);
                let n = self.value(a).len() as f64;
                let k = gd[0].as_f64() * 2.0 / n;
                let da: Vec<T> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(&x, &y)| T::from_f64(k * (x.as_f64() - y.as_f64())))
                    .collect();
                let db = da.iter().map(|&v| -v).collect();
                self.accumulate_data(a, da);
                self.accumulate_data(b, db);
            }
            Op::Mae { a, b } => {
                let (a, b) = (*a, *b);
                let n = self.value(a).len() as f64;
                let k = gd[0].as_f64() / n;
                let da: Vec<T> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(&x, &y)| {
                        let d = x.as_f64() - y.as_f64();
                        let s = if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        T::from_f64(k * s)
                    })
                    .collect();
                let db = da.iter().map(|&v| -v).collect();
                self.accumulate_data(a, da);
                self.accumulate_data(b, db);
            }
            Op::Ssim { a, b, ga, gb } => {
                let (a, b) = (*a, *b);
                let k = gd[0].as_f64();
                let da = ga.iter().map(|&v| T::from_f64(k * v)).collect();
                let db = gb.iter().map(|&v| T::from_f64(k * v)).collect();
                self.accumulate_data(a, da);
                self.accumulate_data(b, db);
            }
            Op::CrossEntropy { logits, targets, parts } => {
                let logits = *logits;
                let rows = targets.len();
                let k = gd[0].as_f64() / rows as f64;
                let mut d = Vec::with_capacity(self.value(logits).len());
                for ((probs, clamped), &t) in parts.iter().zip(targets) {
                    for (j, &p) in probs.iter().enumerate() {
                        let v = if *clamped {
                            0.0
                        } else {
                            p - if j == t { 1.0 } else { 0.0 }
                        };
                        d.push(T::from_f64(k * v));
                    }
                }
                self.accumulate_data(logits, d);
            }
        }
    }
}
