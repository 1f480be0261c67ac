//! Reverse-mode tape. Each op stores what its backward pass needs; parameters
//! are read from a [`ParamStore`] and their gradients returned by
//! [`Graph::backward`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tapsense_core::geometry::Vec3;
use tapsense_core::shape::ChamferVariant;
use tapsense_core::spatial::KdTree;
use tapsense_core::{Error, Result};

use crate::gemm::{gemm, Mat};
use crate::params::{Bid, ParamStore, Pid};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch-norm running-statistics refresh produced by a training pass.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub mean: Bid,
    pub var: Bid,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

enum Op {
    Input,
    Param(Pid),
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, k: usize, stride: usize },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, inner: usize, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Relu { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    Reshape { x: Var },
    SegmentMax { x: Var, argmax: Vec<usize> },
    TileConcat { x: Var, g: Var, segment: Vec<usize> },
    Concat { a: Var, b: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Chamfer { pred: Var, dpred: Vec<f64> },
    WeightedSum { x: Var, c: Vec<f64> },
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
    stat_updates: Vec<StatUpdate>,
}

/// Gradient of the loss with respect to every parameter, indexed like the store.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn get(&self, p: Pid) -> &[f64] {
        &self.0[p.0]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

fn shape_err(op: &str, msg: String) -> Error {
    Error::invalid(format!("{op}: {msg}"))
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, cols: &mut [f64]) {
    let (ho, wo) = ((h - k) / s + 1, (w - k) / s + 1);
    let p = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..ho {
                    let src = &x[(ci * h + oi * s + ki) * w..];
                    for oj in 0..wo {
                        dst[oi * wo + oj] = src[oj * s + kj];
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, dx: &mut [f64]) {
    let (ho, wo) = ((h - k) / s + 1, (w - k) / s + 1);
    let p = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..ho {
                    let base = (ci * h + oi * s + ki) * w + kj;
                    for oj in 0..wo {
                        dx[base + oj * s] += src[oi * wo + oj];
                    }
                }
            }
        }
    }
}

impl<'s> Graph<'s> {
    /// `training` enables dropout and batch statistics; `seed` drives dropout masks.
    pub fn new(store: &'s ParamStore, training: bool, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            store,
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stat_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(p) => self.store.value(p),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    /// Running-statistics refreshes to apply once the step is done.
    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, p: Pid) -> Var {
        self.push(Op::Param(p), Tensor::default())
    }

    /// `x [B, in]`, `w [out, in]`, `b [out]` → `[B, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(shape_err("linear", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let mut y = Vec::with_capacity(n * o);
        for _ in 0..n {
            y.extend_from_slice(&self.value(b).data);
        }
        gemm(1.0, Mat::row_major(&self.value(x).data, n, i), Mat::row_major(&self.value(w).data, o, i).t(), 1.0, &mut y);
        Ok(self.push(Op::Linear { x, w, b }, Tensor { shape: vec![n, o], data: y }))
    }

    /// Valid (unpadded) convolution: `x [B, C, H, W]`, `w [O, C, k, k]`, `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || self.shape(b) != [ws[0]] || stride == 0 {
            return Err(shape_err("conv2d", format!("x {xs:?}, w {ws:?}, stride {stride}")));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        if h < k || wd < k {
            return Err(shape_err("conv2d", format!("{h}x{wd} input smaller than kernel {k}")));
        }
        let (ho, wo) = ((h - k) / stride + 1, (wd - k) / stride + 1);
        let (p, kk) = (ho * wo, c * k * k);
        let mut cols = vec![0.0; kk * p];
        let mut y = vec![0.0; n * o * p];
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        let bv = &self.value(b).data;
        for bi in 0..n {
            im2col(&xv[bi * c * h * wd..(bi + 1) * c * h * wd], c, h, wd, k, stride, &mut cols);
            let yb = &mut y[bi * o * p..(bi + 1) * o * p];
            for (oi, row) in yb.chunks_mut(p).enumerate() {
                row.fill(bv[oi]);
            }
            gemm(1.0, Mat::row_major(wv, o, kk), Mat::row_major(&cols, kk, p), 1.0, yb);
        }
        Ok(self.push(Op::Conv2d { x, w, b, k, stride }, Tensor { shape: vec![n, o, ho, wo], data: y }))
    }

    /// 2x2 max-pool with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(shape_err("max_pool2", format!("x {xs:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = (h / 2, w / 2);
        let xv = &self.value(x).data;
        let mut y = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    y.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(Op::MaxPool2 { x, argmax }, Tensor { shape: vec![n, c, ho, wo], data: y }))
    }

    /// Per-channel normalization. Channel of flat index `i` is `(i / inner) % C`
    /// with `C = gamma.len()`; `inner` is `H*W` for images and 1 for `[P, C]`
    /// point features. Batch statistics are used in training mode when
    /// `batch > 1`, otherwise the running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, running: (Bid, Bid), inner: usize, batch: usize) -> Result<Var> {
        let c = self.shape(gamma).iter().product::<usize>();
        let len = self.value(x).len();
        if c == 0 || inner == 0 || len % (c * inner) != 0 || self.value(beta).len() != c {
            return Err(shape_err("batch_norm", format!("x {:?}, {c} channels, inner {inner}", self.shape(x))));
        }
        let count = len / c;
        let xv = &self.value(x).data;
        let batch_stats = self.training && batch > 1 && count > 1;
        let (mean, var) = if batch_stats {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for (i, v) in xv.iter().enumerate() {
                mean[(i / inner) % c] += v;
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for (i, v) in xv.iter().enumerate() {
                let ch = (i / inner) % c;
                var[ch] += (v - mean[ch]).powi(2);
            }
            var.iter_mut().for_each(|s| *s /= count as f64);
            (mean, var)
        } else {
            (self.store.buffer(running.0).to_vec(), self.store.buffer(running.1).to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = &self.value(gamma).data;
        let bt = &self.value(beta).data;
        let mut xhat = vec![0.0; len];
        let mut y = vec![0.0; len];
        for (i, v) in xv.iter().enumerate() {
            let ch = (i / inner) % c;
            xhat[i] = (v - mean[ch]) * inv_std[ch];
            y[i] = g[ch] * xhat[i] + bt[ch];
        }
        let shape = self.shape(x).to_vec();
        if batch_stats {
            let unbiased = count as f64 / (count - 1) as f64;
            self.stat_updates.push(StatUpdate {
                mean: running.0,
                var: running.1,
                batch_mean: mean,
                batch_var: var.iter().map(|v| v * unbiased).collect(),
            });
        }
        Ok(self.push(
            Op::BatchNorm { x, gamma, beta, inner, xhat, inv_std, batch_stats },
            Tensor { shape, data: y },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let y = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| v.max(0.0)).collect() };
        self.push(Op::Relu { x }, y)
    }

    /// Inverted dropout; the identity outside training or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let t = self.value(x);
        let y = Tensor { shape: t.shape.clone(), data: t.data.iter().zip(&mask).map(|(v, m)| v * m).collect() };
        Ok(self.push(Op::Dropout { x, mask }, y))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(shape_err("reshape", format!("{:?} to {shape:?}", t.shape)));
        }
        let y = Tensor { shape, data: t.data.clone() };
        Ok(self.push(Op::Reshape { x }, y))
    }

    /// Column-wise max of `x [P, C]` over each segment `offsets[i]..offsets[i+1]`.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check_offsets("segment_max", &xs, offsets)?;
        let c = xs[1];
        let xv = &self.value(x).data;
        let nseg = offsets.len() - 1;
        let mut y = vec![f64::NEG_INFINITY; nseg * c];
        let mut argmax = vec![0; nseg * c];
        for s in 0..nseg {
            for p in offsets[s]..offsets[s + 1] {
                for ch in 0..c {
                    let v = xv[p * c + ch];
                    if v > y[s * c + ch] {
                        y[s * c + ch] = v;
                        argmax[s * c + ch] = p * c + ch;
                    }
                }
            }
        }
        Ok(self.push(Op::SegmentMax { x, argmax }, Tensor { shape: vec![nseg, c], data: y }))
    }

    /// Appends each segment's row of `g [S, D]` to the rows of `x [P, C]`, giving `[P, C + D]`.
    pub fn tile_concat(&mut self, x: Var, g: Var, offsets: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let gs = self.shape(g).to_vec();
        check_offsets("tile_concat", &xs, offsets)?;
        if gs.len() != 2 || gs[0] != offsets.len() - 1 {
            return Err(shape_err("tile_concat", format!("g {gs:?} for {} segments", offsets.len() - 1)));
        }
        let (c, d) = (xs[1], gs[1]);
        let mut segment = Vec::with_capacity(xs[0]);
        let mut y = Vec::with_capacity(xs[0] * (c + d));
        let (xv, gv) = (&self.value(x).data, &self.value(g).data);
        for s in 0..offsets.len() - 1 {
            for p in offsets[s]..offsets[s + 1] {
                segment.push(s);
                y.extend_from_slice(&xv[p * c..(p + 1) * c]);
                y.extend_from_slice(&gv[s * d..(s + 1) * d]);
            }
        }
        Ok(self.push(Op::TileConcat { x, g, segment }, Tensor { shape: vec![xs[0], c + d], data: y }))
    }

    /// Row-wise concatenation of `a [B, m]` and `b [B, n]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if as_.len() != 2 || bs.len() != 2 || as_[0] != bs[0] {
            return Err(shape_err("concat", format!("{as_:?} and {bs:?}")));
        }
        let (n, m, k) = (as_[0], as_[1], bs[1]);
        let mut y = Vec::with_capacity(n * (m + k));
        let (av, bv) = (&self.value(a).data, &self.value(b).data);
        for i in 0..n {
            y.extend_from_slice(&av[i * m..(i + 1) * m]);
            y.extend_from_slice(&bv[i * k..(i + 1) * k]);
        }
        Ok(self.push(Op::Concat { a, b }, Tensor { shape: vec![n, m + k], data: y }))
    }

    /// Mean softmax cross-entropy of `logits [B, K]` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() || ls[0] == 0 {
            return Err(shape_err("cross_entropy", format!("logits {ls:?} for {} labels", labels.len())));
        }
        let k = ls[1];
        if let Some(l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {l} outside 0..{k}")));
        }
        let lv = &self.value(logits).data;
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = &lv[i * k..(i + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - mx).exp() / z;
            }
            loss += z.ln() + mx - row[l];
        }
        let n = labels.len() as f64;
        Ok(self.push(
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            Tensor { shape: vec![], data: vec![loss / n] },
        ))
    }

    /// Mean over the batch of the symmetric Chamfer distance between each row
    /// of `pred [B, 3N]` (read as N points) and the matching target cloud.
    pub fn chamfer(&mut self, pred: Var, targets: &[&[Vec3]], variant: ChamferVariant) -> Result<Var> {
        let ps = self.shape(pred).to_vec();
        if ps.len() != 2 || ps[0] != targets.len() || ps[1] % 3 != 0 || ps[1] == 0 || ps[0] == 0 {
            return Err(shape_err("chamfer", format!("pred {ps:?} for {} targets", targets.len())));
        }
        if targets.iter().any(|t| t.is_empty()) {
            return Err(Error::invalid("chamfer: empty target cloud"));
        }
        let (b, n) = (ps[0], ps[1] / 3);
        let pv = &self.value(pred).data;
        let mut dpred = vec![0.0; pv.len()];
        let mut total = 0.0;
        for (bi, target) in targets.iter().enumerate() {
            let row = &pv[bi * 3 * n..(bi + 1) * 3 * n];
            let pts: Vec<Vec3> = row.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let drow = &mut dpred[bi * 3 * n..(bi + 1) * 3 * n];
            let tt = KdTree::new(target);
            let tp = KdTree::new(&pts);
            let mut add = |pi: usize, q: &Vec3, d2: f64, w: f64| -> f64 {
                let diff = pts[pi] - q;
                let (cost, scale) = match variant {
                    ChamferVariant::L1 => {
                        let d = d2.sqrt();
                        (d, if d > 0.0 { 1.0 / d } else { 0.0 })
                    }
                    ChamferVariant::L2 => (d2, 2.0),
                };
                for a in 0..3 {
                    drow[pi * 3 + a] += w * scale * diff[a];
                }
                cost
            };
            let wp = 1.0 / (n as f64 * b as f64);
            let mut s1 = 0.0;
            for (pi, p) in pts.iter().enumerate() {
                let (ti, d2) = tt.nearest(p).expect("non-empty target");
                s1 += add(pi, &target[ti], d2, wp);
            }
            let wt = 1.0 / (target.len() as f64 * b as f64);
            let mut s2 = 0.0;
            for q in target.iter() {
                let (pi, d2) = tp.nearest(q).expect("non-empty prediction");
                s2 += add(pi, q, d2, wt);
            }
            total += s1 / n as f64 + s2 / target.len() as f64;
        }
        Ok(self.push(Op::Chamfer { pred, dpred }, Tensor { shape: vec![], data: vec![total / b as f64] }))
    }

    /// `sum(x * c)`; handy for probing gradients.
    pub fn weighted_sum(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if self.value(x).len() != c.len() {
            return Err(shape_err("weighted_sum", format!("{} weights for {} values", c.len(), self.value(x).len())));
        }
        let s = self.value(x).data.iter().zip(&c).map(|(a, b)| a * b).sum();
        Ok(self.push(Op::WeightedSum { x, c }, Tensor { shape: vec![], data: vec![s] }))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Grads(self.store.values().iter().map(|t| vec![0.0; t.len()]).collect());
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
                let len = self.value(v).len();
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                f(slot);
            };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    for (o, g) in out.0[p.0].iter_mut().zip(&gy) {
                        *o += g;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (n, o) = (node.value.shape[0], node.value.shape[1]);
                    let inn = self.shape(*x)[1];
                    let xv = &self.value(*x).data;
                    let wv = &self.value(*w).data;
                    acc(*x, &|dx| gemm(1.0, Mat::row_major(&gy, n, o), Mat::row_major(wv, o, inn), 1.0, dx));
                    acc(*w, &|dw| gemm(1.0, Mat::row_major(&gy, n, o).t(), Mat::row_major(xv, n, inn), 1.0, dw));
                    acc(*b, &|db| {
                        for row in gy.chunks(o) {
                            for (d, g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                    });
                }
                Op::Conv2d { x, w, b, k, stride } => {
                    let xs = self.shape(*x).to_vec();
                    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                    let o = node.value.shape[1];
                    let p = node.value.shape[2] * node.value.shape[3];
                    let kk = c * k * k;
                    let xv = &self.value(*x).data;
                    let wv = &self.value(*w).data;
                    let mut cols = vec![0.0; kk * p];
                    let mut dcols = vec![0.0; kk * p];
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    let mut db = vec![0.0; o];
                    for bi in 0..n {
                        let xb = &xv[bi * c * h * wd..(bi + 1) * c * h * wd];
                        let gb = &gy[bi * o * p..(bi + 1) * o * p];
                        im2col(xb, c, h, wd, *k, *stride, &mut cols);
                        gemm(1.0, Mat::row_major(gb, o, p), Mat::row_major(&cols, kk, p).t(), 1.0, &mut dw);
                        gemm(1.0, Mat::row_major(wv, o, kk).t(), Mat::row_major(gb, o, p), 0.0, &mut dcols);
                        col2im(&dcols, c, h, wd, *k, *stride, &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd]);
                        for (oi, row) in gb.chunks(p).enumerate() {
                            db[oi] += row.iter().sum::<f64>();
                        }
                    }
                    acc(*x, &|g| add_into(g, &dx));
                    acc(*w, &|g| add_into(g, &dw));
                    acc(*b, &|g| add_into(g, &db));
                }
                Op::MaxPool2 { x, argmax } => acc(*x, &|dx| {
                    for (g, &a) in gy.iter().zip(argmax) {
                        dx[a] += g;
                    }
                }),
                Op::BatchNorm { x, gamma, beta, inner, xhat, inv_std, batch_stats } => {
                    let c = inv_std.len();
                    let count = (xhat.len() / c) as f64;
                    let gv = &self.value(*gamma).data;
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for (idx, g) in gy.iter().enumerate() {
                        let ch = (idx / inner) % c;
                        dgamma[ch] += g * xhat[idx];
                        dbeta[ch] += g;
                    }
                    let inner = *inner;
                    if *batch_stats {
                        acc(*x, &|dx| {
                            for (idx, g) in gy.iter().enumerate() {
                                let ch = (idx / inner) % c;
                                dx[idx] += gv[ch] * inv_std[ch] / count
                                    * (count * g - dbeta[ch] - xhat[idx] * dgamma[ch]);
                            }
                        });
                    } else {
                        acc(*x, &|dx| {
                            for (idx, g) in gy.iter().enumerate() {
                                let ch = (idx / inner) % c;
                                dx[idx] += g * gv[ch] * inv_std[ch];
                            }
                        });
                    }
                    acc(*gamma, &|g| add_into(g, &dgamma));
                    acc(*beta, &|g| add_into(g, &dbeta));
                }
                Op::Relu { x } => acc(*x, &|dx| {
                    for ((d, g), y) in dx.iter_mut().zip(&gy).zip(&node.value.data) {
                        if *y > 0.0 {
                            *d += g;
                        }
                    }
                }),
                Op::Dropout { x, mask } => acc(*x, &|dx| {
                    for ((d, g), m) in dx.iter_mut().zip(&gy).zip(mask) {
                        *d += g * m;
                    }
                }),
                Op::Reshape { x } => acc(*x, &|dx| add_into(dx, &gy)),
                Op::SegmentMax { x, argmax } => acc(*x, &|dx| {
                    for (g, &a) in gy.iter().zip(argmax) {
                        dx[a] += g;
                    }
                }),
                Op::TileConcat { x, g, segment } => {
                    let c = self.shape(*x)[1];
                    let d = self.shape(*g)[1];
                    acc(*x, &|dx| {
                        for (p, row) in gy.chunks(c + d).enumerate() {
                            add_into(&mut dx[p * c..(p + 1) * c], &row[..c]);
                        }
                    });
                    acc(*g, &|dg| {
                        for (p, row) in gy.chunks(c + d).enumerate() {
                            let s = segment[p];
                            add_into(&mut dg[s * d..(s + 1) * d], &row[c..]);
                        }
                    });
                }
                Op::Concat { a, b } => {
                    let m = self.shape(*a)[1];
                    let k = self.shape(*b)[1];
                    acc(*a, &|da| {
                        for (r, row) in gy.chunks(m + k).enumerate() {
                            add_into(&mut da[r * m..(r + 1) * m], &row[..m]);
                        }
                    });
                    acc(*b, &|db| {
                        for (r, row) in gy.chunks(m + k).enumerate() {
                            add_into(&mut db[r * k..(r + 1) * k], &row[m..]);
                        }
                    });
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let k = probs.len() / labels.len();
                    let scale = gy[0] / labels.len() as f64;
                    acc(*logits, &|dl| {
                        for (i, &l) in labels.iter().enumerate() {
                            for j in 0..k {
                                let onehot = if j == l { 1.0 } else { 0.0 };
                                dl[i * k + j] += scale * (probs[i * k + j] - onehot);
                            }
                        }
                    });
                }
                Op::Chamfer { pred, dpred } => acc(*pred, &|dp| {
                    for (d, g) in dp.iter_mut().zip(dpred) {
                        *d += gy[0] * g;
                    }
                }),
                Op::WeightedSum { x, c } => acc(*x, &|dx| {
                    for (d, w) in dx.iter_mut().zip(c) {
                        *d += gy[0] * w;
                    }
                }),
            }
        }
        Ok(out)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn check_offsets(op: &str, xs: &[usize], offsets: &[usize]) -> Result<()> {
    if xs.len() != 2 {
        return Err(shape_err(op, format!("x {xs:?} is not [P, C]")));
    }
    if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != xs[0] || offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(shape_err(op, format!("offsets {offsets:?} do not cover {} rows with non-empty segments", xs[0])));
    }
    Ok(())
}

/// Moves running statistics towards the batch statistics.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) {
    for u in updates {
        let blend = |old: &[f64], new: &[f64]| -> Vec<f64> {
            old.iter().zip(new).map(|(o, n)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n).collect()
        };
        let m = blend(store.buffer(u.mean), &u.batch_mean);
        let v = blend(store.buffer(u.var), &u.batch_var);
        store.set_buffer(u.mean, m);
        store.set_buffer(u.var, v);
    }
}
