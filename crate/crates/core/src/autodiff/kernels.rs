//! Forward and backward kernels for every graph op. Shapes are validated by the caller.

use crate::tensor::{Element, Tensor};

pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Self {
        let (channels, height, width) = (x[1], x[2], x[3]);
        let kernel = w[2];
        let out_h = conv_out_extent(height, kernel, stride, padding).expect("validated extent");
        let out_w = conv_out_extent(width, kernel, stride, padding).expect("validated extent");
        ConvGeom {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h,
            out_w,
        }
    }

    fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn spatial(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits every (column row, column position, source offset) triple with an in-bounds source.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let k = self.kernel;
        let spatial = self.spatial();
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for oh in 0..self.out_h {
                        let ih = (oh * self.stride + ki) as isize - self.padding as isize;
                        if ih < 0 || ih as usize >= self.height {
                            continue;
                        }
                        let src_row = (c * self.height + ih as usize) * self.width;
                        for ow in 0..self.out_w {
                            let iw = (ow * self.stride + kj) as isize - self.padding as isize;
                            if iw < 0 || iw as usize >= self.width {
                                continue;
                            }
                            f(row * spatial + oh * self.out_w + ow, src_row + iw as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, sample: &[T], cols: &mut [T]) {
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|dst, src| cols[dst] = sample[src]);
    }

    fn col2im<T: Element>(&self, cols: &[T], sample_grad: &mut [T]) {
        self.for_each_tap(|col, dst| sample_grad[dst] += cols[col]);
    }
}

/// Cross-correlation of `x [N,C,H,W]` with `w [O,C,K,K]` plus bias `b [O]`.
pub fn conv2d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, padding: usize) -> Tensor<T> {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, padding);
    let (n, out_c) = (x.shape()[0], w.shape()[0]);
    let (patch, spatial) = (g.patch(), g.spatial());
    let in_size = g.channels * g.height * g.width;
    let mut out = Tensor::zeros(&[n, out_c, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); patch * spatial];
    for s in 0..n {
        g.im2col(&x.data()[s * in_size..(s + 1) * in_size], &mut cols);
        let y = &mut out.data_mut()[s * out_c * spatial..(s + 1) * out_c * spatial];
        for (o, row) in y.chunks_mut(spatial).enumerate() {
            row.iter_mut().for_each(|v| *v = b.data()[o]);
        }
        T::gemm(out_c, patch, spatial, w.data(), (patch as isize, 1), &cols, (spatial as isize, 1), T::one(), y, (spatial as isize, 1));
    }
    out
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, padding);
    let (n, out_c) = (x.shape()[0], w.shape()[0]);
    let (patch, spatial) = (g.patch(), g.spatial());
    let in_size = g.channels * g.height * g.width;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[out_c]);
    let mut cols = vec![T::zero(); patch * spatial];
    let mut dcols = vec![T::zero(); patch * spatial];
    for s in 0..n {
        let dy_s = &dy.data()[s * out_c * spatial..(s + 1) * out_c * spatial];
        for (o, row) in dy_s.chunks(spatial).enumerate() {
            db.data_mut()[o] += row.iter().copied().sum();
        }
        g.im2col(&x.data()[s * in_size..(s + 1) * in_size], &mut cols);
        // dW += dy_s · colsᵀ
        T::gemm(out_c, spatial, patch, dy_s, (spatial as isize, 1), &cols, (1, spatial as isize), T::one(), dw.data_mut(), (patch as isize, 1));
        // dcols = Wᵀ · dy_s
        T::gemm(patch, out_c, spatial, w.data(), (1, patch as isize), dy_s, (spatial as isize, 1), T::zero(), &mut dcols, (spatial as isize, 1));
        g.col2im(&dcols, &mut dx.data_mut()[s * in_size..(s + 1) * in_size]);
    }
    (dx, dw, db)
}

/// `x [N,F] · w [F,O] + b [O]`.
pub fn dense<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[1];
    let mut y = Tensor::from_fn(&[n, o], |i| b.data()[i % o]);
    T::gemm(n, f, o, x.data(), (f as isize, 1), w.data(), (o as isize, 1), T::one(), y.data_mut(), (o as isize, 1));
    y
}

pub fn dense_backward<T: Element>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[1];
    let mut dx = Tensor::zeros(&[n, f]);
    let mut dw = Tensor::zeros(&[f, o]);
    let mut db = Tensor::zeros(&[o]);
    T::gemm(n, o, f, dy.data(), (o as isize, 1), w.data(), (1, o as isize), T::zero(), dx.data_mut(), (f as isize, 1));
    T::gemm(f, n, o, x.data(), (1, f as isize), dy.data(), (o as isize, 1), T::zero(), dw.data_mut(), (o as isize, 1));
    for row in dy.data().chunks(o) {
        for (acc, &v) in db.data_mut().iter_mut().zip(row) {
            *acc += v;
        }
    }
    (dx, dw, db)
}

/// Minibatch discrimination.
///
/// Features `x [N,A]` are projected by `t [A, B·C]` into `B` kernels of dimension `C`. For each
/// sample and kernel, the appended statistic sums `exp(-‖m_i - m_j‖₁)` over all *other* rows `j`.
/// Returns `[N, A+B]` with the original features first.
pub fn minibatch_disc<T: Element>(x: &Tensor<T>, t: &Tensor<T>, kernels: usize, kernel_dim: usize) -> Tensor<T> {
    let (n, a) = (x.shape()[0], x.shape()[1]);
    let m = dense_nobias(x, t);
    let sim = mbd_similarities(&m, n, kernels, kernel_dim);
    let width = a + kernels;
    let mut out = Tensor::zeros(&[n, width]);
    for i in 0..n {
        let row = &mut out.data_mut()[i * width..(i + 1) * width];
        row[..a].copy_from_slice(&x.data()[i * a..(i + 1) * a]);
        for kb in 0..kernels {
            let mut acc = T::zero();
            for j in 0..n {
                if j != i {
                    acc += sim[(i * n + j) * kernels + kb];
                }
            }
            row[a + kb] = acc;
        }
    }
    out
}

pub fn minibatch_disc_backward<T: Element>(
    x: &Tensor<T>,
    t: &Tensor<T>,
    dy: &Tensor<T>,
    kernels: usize,
    kernel_dim: usize,
) -> (Tensor<T>, Tensor<T>) {
    let (n, a) = (x.shape()[0], x.shape()[1]);
    let bc = kernels * kernel_dim;
    let width = a + kernels;
    let m = dense_nobias(x, t);
    let sim = mbd_similarities(&m, n, kernels, kernel_dim);
    let g = |i: usize, kb: usize| dy.data()[i * width + a + kb];
    let mut dm = Tensor::<T>::zeros(&[n, bc]);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for kb in 0..kernels {
                let coeff = (g(i, kb) + g(j, kb)) * sim[(i * n + j) * kernels + kb];
                for c in 0..kernel_dim {
                    let idx = kb * kernel_dim + c;
                    let diff = m.data()[i * bc + idx] - m.data()[j * bc + idx];
                    let sign = if diff > T::zero() {
                        T::one()
                    } else if diff < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    dm.data_mut()[i * bc + idx] -= coeff * sign;
                }
            }
        }
    }
    let mut dx = Tensor::zeros(&[n, a]);
    for i in 0..n {
        dx.data_mut()[i * a..(i + 1) * a].copy_from_slice(&dy.data()[i * width..i * width + a]);
    }
    T::gemm(n, bc, a, dm.data(), (bc as isize, 1), t.data(), (1, bc as isize), T::one(), dx.data_mut(), (a as isize, 1));
    let mut dt = Tensor::zeros(&[a, bc]);
    T::gemm(a, n, bc, x.data(), (1, a as isize), dm.data(), (bc as isize, 1), T::zero(), dt.data_mut(), (bc as isize, 1));
    (dx, dt)
}

fn dense_nobias<T: Element>(x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[1];
    let mut y = Tensor::zeros(&[n, o]);
    T::gemm(n, f, o, x.data(), (f as isize, 1), w.data(), (o as isize, 1), T::zero(), y.data_mut(), (o as isize, 1));
    y
}

/// `sim[(i·N + j)·B + b] = exp(-Σ_c |m_ibc - m_jbc|)`.
fn mbd_similarities<T: Element>(m: &Tensor<T>, n: usize, kernels: usize, kernel_dim: usize) -> Vec<T> {
    let bc = kernels * kernel_dim;
    let mut sim = vec![T::zero(); n * n * kernels];
    for i in 0..n {
        for j in 0..n {
            for kb in 0..kernels {
                let mut l1 = T::zero();
                for c in 0..kernel_dim {
                    let idx = kb * kernel_dim + c;
                    l1 += (m.data()[i * bc + idx] - m.data()[j * bc + idx]).abs();
                }
                sim[(i * n + j) * kernels + kb] = (-l1).exp();
            }
        }
    }
    sim
}

/// Nearest-neighbour 2× upsampling of `[N,C,H,W]`.
pub fn upsample2<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[s[0], s[1], 2 * h, 2 * w]);
    let od = out.data_mut();
    for p in 0..planes {
        for i in 0..2 * h {
            for j in 0..2 * w {
                od[(p * 2 * h + i) * 2 * w + j] = x.data()[(p * h + i / 2) * w + j / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Element>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    let (planes, h, w) = (s[0] * s[1], s[2] / 2, s[3] / 2);
    let mut dx = Tensor::zeros(&[s[0], s[1], h, w]);
    let dd = dx.data_mut();
    for p in 0..planes {
        for i in 0..2 * h {
            for j in 0..2 * w {
                dd[(p * h + i / 2) * w + j / 2] += dy.data()[(p * 2 * h + i) * 2 * w + j];
            }
        }
    }
    dx
}

/// 2×2 average pooling, stride 2, of `[N,C,H,W]` with even extents.
pub fn avgpool2<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (planes, h, w) = (s[0] * s[1], s[2] / 2, s[3] / 2);
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(&[s[0], s[1], h, w]);
    let od = out.data_mut();
    for p in 0..planes {
        for i in 0..2 * h {
            for j in 0..2 * w {
                od[(p * h + i / 2) * w + j / 2] += quarter * x.data()[(p * 2 * h + i) * 2 * w + j];
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Element>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let quarter = T::of(0.25);
    let mut dx = Tensor::zeros(&[s[0], s[1], 2 * h, 2 * w]);
    let dd = dx.data_mut();
    for p in 0..planes {
        for i in 0..2 * h {
            for j in 0..2 * w {
                dd[(p * 2 * h + i) * 2 * w + j] = quarter * dy.data()[(p * h + i / 2) * w + j / 2];
            }
        }
    }
    dx
}

/// Mean over the spatial axes: `[N,C,H,W] → [N,C]`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let hw = s[2] * s[3];
    let inv = T::of(1.0 / hw as f64);
    Tensor::from_fn(&[s[0], s[1]], |p| x.data()[p * hw..(p + 1) * hw].iter().copied().sum::<T>() * inv)
}

pub fn global_avg_pool_backward<T: Element>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let hw = x_shape[2] * x_shape[3];
    let inv = T::of(1.0 / hw as f64);
    Tensor::from_fn(x_shape, |i| dy.data()[i / hw] * inv)
}

pub fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_extent_formula() {
        assert_eq!(conv_out_extent(28, 3, 2, 1), Some(14));
        assert_eq!(conv_out_extent(7, 3, 1, 1), Some(7));
        assert_eq!(conv_out_extent(2, 3, 1, 0), None);
    }

    #[test]
    fn pooling_inverts_upsampling() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 3, 3], |i| i as f64);
        assert_eq!(avgpool2(&upsample2(&x)), x);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f32), 0.0);
        assert_eq!(sigmoid(1000.0f32), 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
