//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] walks the record in reverse and returns gradients for
//! the parameters that were registered with [`Graph::param`].

use super::conv::{conv2d_backward, conv2d_forward};
use super::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: usize,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Concat(Var, Var),
    Add(Var, Var),
    MulChannel {
        x: Var,
        gate: Var,
    },
    MulSpatial {
        x: Var,
        gate: Var,
    },
    GlobalAvg(Var),
    GlobalMax {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelMean(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A trainable tensor identified by `id` in the caller's parameter store.
    pub fn param(&mut self, id: usize, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Var {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), pad);
        self.push(out, Op::Conv2d { x, w, b, pad })
    }

    /// Per-sample, per-channel normalization with affine `gamma`, `beta`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let m = h * w;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xt.len()];
        let mut inv_std = vec![0.0; n * c];
        let mut out = vec![0.0; xt.len()];
        for (plane, (src, (xh, dst))) in xt
            .data()
            .chunks_exact(m)
            .zip(xhat.chunks_exact_mut(m).zip(out.chunks_exact_mut(m)))
            .enumerate()
        {
            let ch = plane % c;
            let mean = src.iter().sum::<f64>() / m as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[plane] = is;
            for ((s, xh), d) in src.iter().zip(xh.iter_mut()).zip(dst.iter_mut()) {
                *xh = (s - mean) * is;
                *d = g[ch] * *xh + b[ch];
            }
        }
        let value = Tensor::from_vec([n, c, h, w], out).expect("norm shape");
        self.push(
            value,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(out, Op::Sigmoid(x))
    }

    /// 2×2 max pooling, stride 2. Height and width must be even.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even sizes, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        let src = xt.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        let value = Tensor::from_vec([n, c, oh, ow], out).expect("pool shape");
        self.push(value, Op::MaxPool2 { x, argmax })
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[(plane * oh + oy) * ow + ox] = xt.data()[(plane * h + oy / 2) * w + ox / 2];
                }
            }
        }
        let value = Tensor::from_vec([n, c, oh, ow], out).expect("upsample shape");
        self.push(value, Op::Upsample2(x))
    }

    /// Channel-axis concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        let [n, ca, h, w] = at.shape();
        let [nb, cb, hb, wb] = bt.shape();
        assert_eq!((n, h, w), (nb, hb, wb), "concat spatial/batch mismatch");
        let mut out = Vec::with_capacity(at.len() + bt.len());
        for i in 0..n {
            out.extend_from_slice(at.item(i));
            out.extend_from_slice(bt.item(i));
        }
        let value = Tensor::from_vec([n, ca + cb, h, w], out).expect("concat shape");
        self.push(value, Op::Concat(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shape mismatch");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// `x[n,c,:,:] * gate[n,c]` with `gate` shaped `N×C×1×1`.
    pub fn mul_channel(&mut self, x: Var, gate: Var) -> Var {
        let xt = self.value(x);
        let gt = self.value(gate);
        let [n, c, h, w] = xt.shape();
        assert_eq!(gt.shape(), [n, c, 1, 1], "channel gate shape");
        let m = h * w;
        let mut out = xt.clone();
        for (plane, chunk) in out.data_mut().chunks_exact_mut(m).enumerate() {
            let g = gt.data()[plane];
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        self.push(out, Op::MulChannel { x, gate })
    }

    /// `x[n,c,y,x] * gate[n,y,x]` with `gate` shaped `N×1×H×W`.
    pub fn mul_spatial(&mut self, x: Var, gate: Var) -> Var {
        let xt = self.value(x);
        let gt = self.value(gate);
        let [n, c, h, w] = xt.shape();
        assert_eq!(gt.shape(), [n, 1, h, w], "spatial gate shape");
        let m = h * w;
        let mut out = xt.clone();
        for (plane, chunk) in out.data_mut().chunks_exact_mut(m).enumerate() {
            let g = &gt.data()[(plane / c) * m..(plane / c + 1) * m];
            chunk.iter_mut().zip(g).for_each(|(v, g)| *v *= g);
        }
        self.push(out, Op::MulSpatial { x, gate })
    }

    pub fn global_avg(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let m = (h * w) as f64;
        let out = xt.data().chunks_exact(h * w).map(|p| p.iter().sum::<f64>() / m).collect();
        let value = Tensor::from_vec([n, c, 1, 1], out).expect("pool shape");
        self.push(value, Op::GlobalAvg(x))
    }

    pub fn global_max(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let m = h * w;
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for (plane, p) in xt.data().chunks_exact(m).enumerate() {
            let mut best = 0;
            for (i, v) in p.iter().enumerate() {
                if *v > p[best] {
                    best = i;
                }
            }
            out.push(p[best]);
            argmax.push(plane * m + best);
        }
        let value = Tensor::from_vec([n, c, 1, 1], out).expect("pool shape");
        self.push(value, Op::GlobalMax { x, argmax })
    }

    /// Mean over channels, `N×1×H×W`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let m = h * w;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let dst = &mut out[i * m..(i + 1) * m];
            for p in xt.item(i).chunks_exact(m) {
                dst.iter_mut().zip(p).for_each(|(d, s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d /= c as f64);
        }
        let value = Tensor::from_vec([n, 1, h, w], out).expect("reduce shape");
        self.push(value, Op::ChannelMean(x))
    }

    /// Max over channels, `N×1×H×W`.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let m = h * w;
        let mut out = vec![f64::NEG_INFINITY; n * m];
        let mut argmax = vec![0usize; n * m];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * m;
                for p in 0..m {
                    let v = xt.data()[base + p];
                    if v > out[i * m + p] {
                        out[i * m + p] = v;
                        argmax[i * m + p] = base + p;
                    }
                }
            }
        }
        let value = Tensor::from_vec([n, 1, h, w], out).expect("reduce shape");
        self.push(value, Op::ChannelMax { x, argmax })
    }

    /// Back-propagates the given output gradients. The result is indexed by
    /// parameter id; parameters that were not reached stay `None`.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>, param_count: usize) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Tensor>> = (0..param_count).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.value(v).shape(), "seed gradient shape");
            accumulate(&mut grads[v.0], g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => accumulate(&mut params[*id], dy),
                Op::Conv2d { x, w, b, pad } => {
                    let (dx, dw, db) =
                        conv2d_backward(self.value(*x), self.value(*w), b.is_some(), *pad, &dy);
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[w.0], dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::InstanceNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let [n, c, h, w] = dy.shape();
                    let m = h * w;
                    let g = self.value(*gamma).data();
                    let mut dx = vec![0.0; dy.len()];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for plane in 0..n * c {
                        let ch = plane % c;
                        let r = plane * m..(plane + 1) * m;
                        let d = &dy.data()[r.clone()];
                        let xh = &xhat[r.clone()];
                        let sum_d: f64 = d.iter().sum();
                        let sum_dx: f64 = d.iter().zip(xh).map(|(a, b)| a * b).sum();
                        dgamma[ch] += sum_dx;
                        dbeta[ch] += sum_d;
                        let k = g[ch] * inv_std[plane] / m as f64;
                        for ((o, dv), xv) in dx[r].iter_mut().zip(d).zip(xh) {
                            *o = k * (m as f64 * dv - sum_d - xv * sum_dx);
                        }
                    }
                    let pshape = self.value(*gamma).shape();
                    accumulate(&mut grads[x.0], Tensor::from_vec([n, c, h, w], dx).unwrap());
                    accumulate(&mut grads[gamma.0], Tensor::from_vec(pshape, dgamma).unwrap());
                    accumulate(&mut grads[beta.0], Tensor::from_vec(pshape, dbeta).unwrap());
                }
                Op::Relu(x) => {
                    let mut dx = dy;
                    for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = dy;
                    for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    for (d, i) in dy.data().iter().zip(argmax) {
                        dx.data_mut()[*i] += d;
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Upsample2(x) => {
                    let [n, c, h, w] = self.value(*x).shape();
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut dx = Tensor::zeros([n, c, h, w]);
                    for plane in 0..n * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dx.data_mut()[(plane * h + oy / 2) * w + ox / 2] +=
                                    dy.data()[(plane * oh + oy) * ow + ox];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Concat(a, b) => {
                    let sa = self.value(*a).shape();
                    let sb = self.value(*b).shape();
                    let la = sa[1] * sa[2] * sa[3];
                    let lb = sb[1] * sb[2] * sb[3];
                    let mut da = Vec::with_capacity(sa[0] * la);
                    let mut db = Vec::with_capacity(sb[0] * lb);
                    for item in dy.data().chunks_exact(la + lb) {
                        da.extend_from_slice(&item[..la]);
                        db.extend_from_slice(&item[la..]);
                    }
                    accumulate(&mut grads[a.0], Tensor::from_vec(sa, da).unwrap());
                    accumulate(&mut grads[b.0], Tensor::from_vec(sb, db).unwrap());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], dy.clone());
                    accumulate(&mut grads[b.0], dy);
                }
                Op::MulChannel { x, gate } => {
                    let xt = self.value(*x);
                    let gt = self.value(*gate);
                    let m = xt.height() * xt.width();
                    let mut dx = dy.clone();
                    let mut dg = Tensor::zeros(gt.shape());
                    for (plane, (dxp, (dyp, xp))) in dx
                        .data_mut()
                        .chunks_exact_mut(m)
                        .zip(dy.data().chunks_exact(m).zip(xt.data().chunks_exact(m)))
                        .enumerate()
                    {
                        let g = gt.data()[plane];
                        dxp.iter_mut().for_each(|v| *v *= g);
                        dg.data_mut()[plane] = dyp.iter().zip(xp).map(|(a, b)| a * b).sum();
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[gate.0], dg);
                }
                Op::MulSpatial { x, gate } => {
                    let xt = self.value(*x);
                    let gt = self.value(*gate);
                    let c = xt.channels();
                    let m = xt.height() * xt.width();
                    let mut dx = dy.clone();
                    let mut dg = Tensor::zeros(gt.shape());
                    for plane in 0..xt.batch() * c {
                        let i = plane / c;
                        let g = &gt.data()[i * m..(i + 1) * m];
                        let r = plane * m..(plane + 1) * m;
                        for (p, idx) in r.enumerate() {
                            dx.data_mut()[idx] *= g[p];
                            dg.data_mut()[i * m + p] += dy.data()[idx] * xt.data()[idx];
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[gate.0], dg);
                }
                Op::GlobalAvg(x) => {
                    let shape = self.value(*x).shape();
                    let m = shape[2] * shape[3];
                    let mut dx = Tensor::zeros(shape);
                    for (plane, chunk) in dx.data_mut().chunks_exact_mut(m).enumerate() {
                        let d = dy.data()[plane] / m as f64;
                        chunk.fill(d);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::GlobalMax { x, argmax } | Op::ChannelMax { x, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    for (d, i) in dy.data().iter().zip(argmax) {
                        dx.data_mut()[*i] += d;
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ChannelMean(x) => {
                    let shape = self.value(*x).shape();
                    let [n, c, h, w] = shape;
                    let m = h * w;
                    let mut dx = Tensor::zeros(shape);
                    for i in 0..n {
                        let d = &dy.data()[i * m..(i + 1) * m];
                        for ch in 0..c {
                            let base = (i * c + ch) * m;
                            for p in 0..m {
                                dx.data_mut()[base + p] = d[p] / c as f64;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
        }
        params
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    /// Checks d<probe, f(p)>/dp against central differences for every entry
    /// of every parameter.
    fn check(params: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| g.param(i, p)).collect();
        let out = f(&mut g, &vars);
        let probe = rand_tensor(&mut rng, g.value(out).shape());
        let grads = g.backward(vec![(out, probe.clone())], params.len());
        let objective = |ps: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().enumerate().map(|(i, p)| g.param(i, p)).collect();
            let out = f(&mut g, &vars);
            g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            let grad = grads[pi].as_ref().expect("param reached");
            for e in 0..p.len() {
                let mut plus = params.clone();
                plus[pi].data_mut()[e] += h;
                let mut minus = params.clone();
                minus[pi].data_mut()[e] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = grad.data()[e];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {pi} entry {e}: analytic {an} vs numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn conv_norm_relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, [2, 2, 6, 6]);
        let w = rand_tensor(&mut rng, [3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, [3, 1, 1, 1]);
        let gamma = rand_tensor(&mut rng, [3, 1, 1, 1]);
        let beta = rand_tensor(&mut rng, [3, 1, 1, 1]);
        check(vec![x, w, b, gamma, beta], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1);
            let y = g.instance_norm(y, v[3], v[4]);
            g.sigmoid(y)
        });
    }

    #[test]
    fn pooling_and_resampling_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, [2, 3, 4, 4]);
        let y = rand_tensor(&mut rng, [2, 2, 4, 4]);
        check(vec![x, y], |g, v| {
            let p = g.max_pool2(v[0]);
            let u = g.upsample2(p);
            let c = g.concat(u, v[1]);
            let r = g.relu(c);
            let s = g.add(r, c);
            g.upsample2(s)
        });
    }

    #[test]
    fn attention_style_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, [2, 4, 4, 4]);
        let w = rand_tensor(&mut rng, [1, 2, 3, 3]);
        check(vec![x, w], |g, v| {
            let a = g.global_avg(v[0]);
            let m = g.global_max(v[0]);
            let s = g.add(a, m);
            let gate = g.sigmoid(s);
            let y = g.mul_channel(v[0], gate);
            let cm = g.channel_mean(y);
            let cx = g.channel_max(y);
            let maps = g.concat(cm, cx);
            let sp = g.conv2d(maps, v[1], None, 1);
            let sg = g.sigmoid(sp);
            g.mul_spatial(y, sg)
        });
    }

    #[test]
    fn unreached_params_have_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(0, &Tensor::full([1, 1, 2, 2], 1.0));
        let _unused = g.param(1, &Tensor::full([1, 1, 2, 2], 1.0));
        let y = g.relu(a);
        let grads = g.backward(vec![(y, Tensor::full([1, 1, 2, 2], 1.0))], 2);
        assert!(grads[0].is_some());
        assert!(grads[1].is_none());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
