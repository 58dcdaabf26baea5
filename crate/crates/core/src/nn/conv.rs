//! Stride-1 2-D convolution via tiled im2col + GEMM.
//!
//! Work is split over batch items with rayon. Weight gradients are summed in
//! batch order afterwards, so results do not depend on the thread count.

use rayon::prelude::*;

use super::tensor::Tensor;

/// Upper bound on im2col columns materialized at once.
const TILE_COLUMNS: usize = 4096;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: &Tensor, w: &Tensor, pad: usize) -> Self {
        let [_, cin, h, wd] = x.shape();
        let [cout, wcin, k, k2] = w.shape();
        assert_eq!(cin, wcin, "conv input channels");
        assert_eq!(k, k2, "square kernels only");
        let oh = h + 2 * pad + 1 - k;
        let ow = wd + 2 * pad + 1 - k;
        Self {
            cin,
            cout,
            k,
            pad,
            h,
            w: wd,
            oh,
            ow,
        }
    }

    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn rows_per_tile(&self) -> usize {
        (TILE_COLUMNS / self.ow).max(1)
    }

    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let step = self.rows_per_tile();
        (0..self.oh).step_by(step).map(move |y0| (y0, (y0 + step).min(self.oh)))
    }

    fn im2col(&self, x: &[f64], y0: usize, y1: usize, col: &mut Vec<f64>) {
        let t = (y1 - y0) * self.ow;
        col.clear();
        col.resize(self.kdim() * t, 0.0);
        let (k, pad) = (self.k as isize, self.pad as isize);
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c as isize * k + ky) * k + kx) as usize;
                    let dst = &mut col[row * t..(row + 1) * t];
                    for oy in y0..y1 {
                        let iy = oy as isize + ky - pad;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let base = (oy - y0) * self.ow;
                        for ox in 0..self.ow {
                            let ix = ox as isize + kx - pad;
                            if ix >= 0 && ix < self.w as isize {
                                dst[base + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], y0: usize, y1: usize, dx: &mut [f64]) {
        let t = (y1 - y0) * self.ow;
        let (k, pad) = (self.k as isize, self.pad as isize);
        for c in 0..self.cin {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c as isize * k + ky) * k + kx) as usize;
                    let src = &col[row * t..(row + 1) * t];
                    for oy in y0..y1 {
                        let iy = oy as isize + ky - pad;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let base = (oy - y0) * self.ow;
                        for ox in 0..self.ow {
                            let ix = ox as isize + kx - pad;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `C = alpha * A·B + beta * C` on strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa || k == 0);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the slices cover every index touched by the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, pad: usize) -> Tensor {
    let g = Geometry::new(x, w, pad);
    let n = x.batch();
    let p = g.oh * g.ow;
    let kd = g.kdim();
    let items: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.item(i);
            let mut out = vec![0.0; g.cout * p];
            if let Some(b) = b {
                for (co, chunk) in out.chunks_exact_mut(p).enumerate() {
                    chunk.fill(b.data()[co]);
                }
            }
            let mut col = Vec::new();
            for (y0, y1) in g.tiles() {
                g.im2col(xi, y0, y1, &mut col);
                let t = (y1 - y0) * g.ow;
                gemm(
                    g.cout,
                    kd,
                    t,
                    w.data(),
                    kd,
                    1,
                    &col,
                    t,
                    1,
                    1.0,
                    &mut out[y0 * g.ow..],
                    p,
                );
            }
            out
        })
        .collect();
    let data = items.concat();
    Tensor::from_vec([n, g.cout, g.oh, g.ow], data).expect("conv output size")
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    with_bias: bool,
    pad: usize,
    dy: &Tensor,
) -> (Tensor, Tensor, Option<Tensor>) {
    let g = Geometry::new(x, w, pad);
    let n = x.batch();
    let p = g.oh * g.ow;
    let kd = g.kdim();
    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.item(i);
            let dyi = dy.item(i);
            let mut dx = vec![0.0; x.item_len()];
            let mut dw = vec![0.0; w.len()];
            let db: Vec<f64> = if with_bias {
                dyi.chunks_exact(p).map(|c| c.iter().sum()).collect()
            } else {
                Vec::new()
            };
            let mut col = Vec::new();
            let mut dcol = Vec::new();
            for (y0, y1) in g.tiles() {
                let t = (y1 - y0) * g.ow;
                g.im2col(xi, y0, y1, &mut col);
                // dW[co, K] += dY[co, T] · col[K, T]^T
                gemm(
                    g.cout,
                    t,
                    kd,
                    &dyi[y0 * g.ow..],
                    p,
                    1,
                    &col,
                    1,
                    t,
                    1.0,
                    &mut dw,
                    kd,
                );
                // dcol[K, T] = W[co, K]^T · dY[co, T]
                dcol.clear();
                dcol.resize(kd * t, 0.0);
                gemm(
                    kd,
                    g.cout,
                    t,
                    w.data(),
                    1,
                    kd,
                    &dyi[y0 * g.ow..],
                    p,
                    1,
                    0.0,
                    &mut dcol,
                    t,
                );
                g.col2im(&dcol, y0, y1, &mut dx);
            }
            (dx, dw, db)
        })
        .collect();
    let mut dw = Tensor::zeros(w.shape());
    let mut db = if with_bias {
        Some(Tensor::zeros([g.cout, 1, 1, 1]))
    } else {
        None
    };
    let mut dx = Vec::with_capacity(x.len());
    for (dxi, dwi, dbi) in parts {
        dx.extend_from_slice(&dxi);
        for (a, b) in dw.data_mut().iter_mut().zip(&dwi) {
            *a += b;
        }
        if let Some(db) = db.as_mut() {
            for (a, b) in db.data_mut().iter_mut().zip(&dbi) {
                *a += b;
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).expect("conv dx size"),
        dw,
        db,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
    }

    /// Direct nested-loop convolution with zero padding.
    fn naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, pad: usize) -> Tensor {
        let [n, cin, h, wd] = x.shape();
        let [cout, _, k, _] = w.shape();
        let (oh, ow) = (h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        let mut idx = 0;
        for i in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b.data()[co]);
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as isize + ky as isize - pad as isize;
                                    let ix = ox as isize + kx as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at(i, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        out.data_mut()[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, pad) in [(1, 0), (3, 1), (7, 3), (3, 0)] {
            let x = rand_tensor(&mut rng, [2, 3, 9, 11]);
            let w = rand_tensor(&mut rng, [4, 3, k, k]);
            let b = rand_tensor(&mut rng, [4, 1, 1, 1]);
            let ours = conv2d_forward(&x, &w, Some(&b), pad);
            let reference = naive(&x, &w, Some(&b), pad);
            assert_eq!(ours.shape(), reference.shape());
            for (a, r) in ours.data().iter().zip(reference.data()) {
                assert!((a - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiling_does_not_change_results() {
        // Wide enough that one output row spans several tiles worth of columns.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, [1, 2, 70, 90]);
        let w = rand_tensor(&mut rng, [3, 2, 3, 3]);
        let ours = conv2d_forward(&x, &w, None, 1);
        let reference = naive(&x, &w, None, 1);
        for (a, r) in ours.data().iter().zip(reference.data()) {
            assert!((a - r).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dy, conv(x)> is bilinear: its gradients w.r.t. x and w are exact.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, [2, 3, 6, 5]);
        let w = rand_tensor(&mut rng, [4, 3, 3, 3]);
        let dy = rand_tensor(&mut rng, [2, 4, 6, 5]);
        let (dx, dw, db) = conv2d_backward(&x, &w, true, 1, &dy);
        let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        let y = conv2d_forward(&x, &w, None, 1);
        // <dy, conv(x, w)> = <dx, x> = <dw, w>
        let lhs = dot(&dy, &y);
        assert!((lhs - dot(&dx, &x)).abs() < 1e-9);
        assert!((lhs - dot(&dw, &w)).abs() < 1e-9);
        let dy_sum: f64 = dy.data().iter().take(30).sum();
        assert!((db.unwrap().data()[0] - dy_sum - dy.data()[120..150].iter().sum::<f64>()).abs() < 1e-12);
    }
}
