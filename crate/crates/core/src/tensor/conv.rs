use super::gemm::matmul;
use super::{Elem, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Spatial output size of a cross-correlation.
pub fn conv2d_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding).saturating_sub(kernel) / stride + 1
}

/// Default spatial output size of the transposed convolution.
pub fn conv_transpose2d_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    ((size - 1) * stride + kernel).saturating_sub(2 * padding)
}

/// Range of output columns `ox` whose input column `ox·stride + kx − pad`
/// lies inside `0..w`.
fn valid_cols(g: &Geom, kx: usize) -> (usize, usize) {
    let lo = if g.pad > kx { (g.pad - kx).div_ceil(g.stride) } else { 0 };
    let hi = if g.w + g.pad > kx {
        ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds `img: [c, h, w]` into `col: [c·kh·kw, oh·ow]`.
fn im2col<T: Elem>(img: &[T], g: &Geom, col: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &img[(c * g.h + iy as usize) * g.w..][..g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let first = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, x) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = *x;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into `img`.
fn col2im<T: Elem>(col: &[T], g: &Geom, img: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(g, kx);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut img[(c * g.h + iy as usize) * g.w..][..g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(line) {
                        *d = *d + *v;
                    }
                }
            }
        }
    }
}

fn check_args<T: Elem>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, in_axis: usize) -> Result<()> {
    if input.rank() != 4 || kernel.rank() != 4 {
        return Err(Error::dim(format!(
            "convolution expects rank-4 input and kernel, got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::dim("stride must be at least 1"));
    }
    if input.shape()[1] != kernel.shape()[in_axis] {
        return Err(Error::dim(format!(
            "input has {} channels but kernel {:?} expects {}",
            input.shape()[1],
            kernel.shape(),
            kernel.shape()[in_axis]
        )));
    }
    Ok(())
}

impl<T: Elem> Tensor<T> {
    /// Cross-correlation of `self: [B, Cin, H, W]` with `kernel: [Cout, Cin, kh, kw]`.
    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        check_args(self, kernel, stride, 1)?;
        let [b, cin, h, w] = [self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]];
        let [cout, _, kh, kw] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::dim(format!(
                "kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        let g = Geom {
            c: cin,
            h,
            w,
            kh,
            kw,
            oh: conv2d_output_size(h, kh, stride, padding),
            ow: conv2d_output_size(w, kw, stride, padding),
            stride,
            pad: padding,
        };
        let (rows, cols) = (g.rows(), g.cols());
        let (tx, tk) = (self.is_tracked(), kernel.is_tracked());
        // unfolded inputs are kept for the kernel gradient
        let mut col = vec![T::zero(); if tk { b } else { 1 } * rows * cols];
        let mut out = vec![T::zero(); b * cout * cols];
        let x = self.data();
        let k = kernel.data();
        for bi in 0..b {
            let c = if tk { &mut col[bi * rows * cols..][..rows * cols] } else { &mut col[..] };
            im2col(&x[bi * cin * h * w..][..cin * h * w], &g, c);
            matmul(&mut out[bi * cout * cols..][..cout * cols], k, c, cout, rows, cols, false, false, false);
        }

        let ks = kernel.shared_data();
        Ok(Tensor::from_op(
            vec![b, cout, g.oh, g.ow],
            out,
            vec![self.clone(), kernel.clone()],
            move |grad| {
                let mut gcol = vec![T::zero(); if tx { rows * cols } else { 0 }];
                let mut gx = tx.then(|| vec![T::zero(); b * cin * h * w]);
                let mut gk = tk.then(|| vec![T::zero(); cout * rows]);
                for bi in 0..b {
                    let gb = &grad[bi * cout * cols..][..cout * cols];
                    if let Some(gk) = gk.as_mut() {
                        matmul(gk, gb, &col[bi * rows * cols..][..rows * cols], cout, cols, rows, false, true, true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        matmul(&mut gcol, &ks, gb, rows, cout, cols, true, false, false);
                        col2im(&gcol, &g, &mut gx[bi * cin * h * w..][..cin * h * w]);
                    }
                }
                vec![gx, gk]
            },
        ))
    }

    /// Transposed convolution: the adjoint of [`Tensor::conv2d`] with the same
    /// kernel `[Cout, Cin, kh, kw]`, mapping `[B, Cout, H, W]` to `[B, Cin, H', W']`.
    pub fn conv2d_transpose(&self, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        check_args(self, kernel, stride, 0)?;
        let (h, w) = (self.shape()[2], self.shape()[3]);
        let (kh, kw) = (kernel.shape()[2], kernel.shape()[3]);
        let oh = conv_transpose2d_output_size(h, kh, stride, padding);
        let ow = conv_transpose2d_output_size(w, kw, stride, padding);
        self.conv2d_transpose_to(kernel, stride, padding, (oh, ow))
    }

    /// Transposed convolution with an explicit output size, which must map
    /// back to the input size under `conv2d`.
    pub fn conv2d_transpose_to(
        &self,
        kernel: &Tensor<T>,
        stride: usize,
        padding: usize,
        out_hw: (usize, usize),
    ) -> Result<Tensor<T>> {
        check_args(self, kernel, stride, 0)?;
        let [b, cout, ih, iw] = [self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]];
        let [_, cin, kh, kw] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
        let (oh, ow) = out_hw;
        if oh + 2 * padding < kh
            || ow + 2 * padding < kw
            || conv2d_output_size(oh, kh, stride, padding) != ih
            || conv2d_output_size(ow, kw, stride, padding) != iw
        {
            return Err(Error::dim(format!(
                "output {oh}x{ow} is not a valid transpose target for input {ih}x{iw}"
            )));
        }
        let g = Geom {
            c: cin,
            h: oh,
            w: ow,
            kh,
            kw,
            oh: ih,
            ow: iw,
            stride,
            pad: padding,
        };
        let (rows, cols) = (g.rows(), g.cols());
        let plane = cin * oh * ow;
        let mut col = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); b * plane];
        let x = self.data();
        let k = kernel.data();
        for bi in 0..b {
            matmul(&mut col, k, &x[bi * cout * cols..][..cout * cols], rows, cout, cols, true, false, false);
            col2im(&col, &g, &mut out[bi * plane..][..plane]);
        }

        let xs = self.shared_data();
        let ks = kernel.shared_data();
        let (tx, tk) = (self.is_tracked(), kernel.is_tracked());
        Ok(Tensor::from_op(
            vec![b, cin, oh, ow],
            out,
            vec![self.clone(), kernel.clone()],
            move |grad| {
                let mut gcol = vec![T::zero(); rows * cols];
                let mut gx = tx.then(|| vec![T::zero(); b * cout * cols]);
                let mut gk = tk.then(|| vec![T::zero(); cout * rows]);
                for bi in 0..b {
                    im2col(&grad[bi * plane..][..plane], &g, &mut gcol);
                    if let Some(gx) = gx.as_mut() {
                        matmul(&mut gx[bi * cout * cols..][..cout * cols], &ks, &gcol, cout, rows, cols, false, false, false);
                    }
                    if let Some(gk) = gk.as_mut() {
                        matmul(gk, &xs[bi * cout * cols..][..cout * cols], &gcol, cout, cols, rows, false, true, true);
                    }
                }
                vec![gx, gk]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_sum_to_nine() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn identity_one_by_one_kernel() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let k = Tensor::<f32>::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(x.conv2d(&k, 1, 0).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let k = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(x.conv2d(&k, 1, 1), Err(Error::Dimension(_))));
        assert!(matches!(x.conv2d_transpose(&k, 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn output_size_formula() {
        let x = Tensor::<f32>::zeros(&[1, 1, 7, 6]);
        let k = Tensor::<f32>::zeros(&[2, 1, 3, 3]);
        let y = x.conv2d(&k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 3]);
    }

    #[test]
    fn transpose_zero_input_gives_zero() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let k = Tensor::<f32>::full(&[2, 1, 3, 3], 0.7);
        let y = x.conv2d_transpose(&k, 1, 1).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn invalid_transpose_target_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(x.conv2d_transpose_to(&k, 2, 0, (6, 6)).is_err());
        assert!(x.conv2d_transpose_to(&k, 2, 0, (5, 5)).is_ok());
        assert_eq!(x.conv2d_transpose(&k, 2, 0).unwrap().shape(), &[1, 1, 4, 4]);
    }
}
