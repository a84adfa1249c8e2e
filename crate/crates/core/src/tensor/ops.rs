use super::{check_finite, Elem, Tensor};
use crate::error::{Error, Result};

/// (outer, axis length, inner) split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape<T: Elem>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Elem> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a + *b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a - *b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -*v).collect())],
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| *a * *b).collect();
        let (a, b) = (self.shared_data(), other.shared_data());
        let (ta, tb) = (self.is_tracked(), other.is_tracked());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = ta.then(|| g.iter().zip(b.iter()).map(|(g, b)| *g * *b).collect());
                let gb = tb.then(|| g.iter().zip(a.iter()).map(|(g, a)| *g * *a).collect());
                vec![ga, gb]
            },
        ))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let data = self.data().iter().map(|v| *v * s).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|v| *v * s).collect())]
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|v| v.max(T::zero())).collect();
        let x = self.shared_data();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g| {
            let gx = g
                .iter()
                .zip(x.iter())
                .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                .collect();
            vec![Some(gx)]
        })
    }

    /// Logistic function, strictly inside (0,1) for finite input.
    pub fn sigmoid(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|v| T::one() / (T::one() + (-*v).exp()))
            .collect();
        let y = data.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g| {
            let gx = g
                .iter()
                .zip(&y)
                .map(|(g, y)| *g * *y * (T::one() - *y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.len();
        Tensor::from_op(vec![], vec![s], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from(self.len().max(1)).unwrap();
        self.sum().scale(T::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of an empty list"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::dim(format!("concat axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim(format!(
                    "concat: shape {:?} incompatible with {:?} on axis {axis}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let flags: Vec<bool> = parts.iter().map(|p| p.is_tracked()).collect();
        Ok(Tensor::from_op(shape, data, parts.to_vec(), move |g| {
            let mut grads: Vec<Option<Vec<T>>> = flags
                .iter()
                .zip(&widths)
                .map(|(f, w)| f.then(|| Vec::with_capacity(outer * w)))
                .collect();
            for o in 0..outer {
                let mut off = o * total;
                for (gp, w) in grads.iter_mut().zip(&widths) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[off..off + w]);
                    }
                    off += w;
                }
            }
            grads
        }))
    }

    /// `x · Wᵀ + bias` for `x: [N, in]`, `weight: [out, in]`, `bias: [out]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        if self.rank() != 2 || weight.rank() != 2 || self.shape()[1] != weight.shape()[1] {
            return Err(Error::dim(format!(
                "linear: input {:?} incompatible with weight {:?}",
                self.shape(),
                weight.shape()
            )));
        }
        let (n, din) = (self.shape()[0], self.shape()[1]);
        let dout = weight.shape()[0];
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return Err(Error::dim(format!(
                    "linear: bias {:?} does not match {dout} outputs",
                    b.shape()
                )));
            }
        }
        let mut out = vec![T::zero(); n * dout];
        if let Some(b) = bias {
            for row in out.chunks_mut(dout.max(1)) {
                row.copy_from_slice(b.data());
            }
        }
        super::gemm::matmul(&mut out, self.data(), weight.data(), n, din, dout, false, true, true);

        let x = self.shared_data();
        let w = weight.shared_data();
        let (tx, tw) = (self.is_tracked(), weight.is_tracked());
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(vec![n, dout], out, parents, move |g| {
            let gx = tx.then(|| {
                let mut gx = vec![T::zero(); n * din];
                super::gemm::matmul(&mut gx, g, &w, n, dout, din, false, false, false);
                gx
            });
            let gw = tw.then(|| {
                let mut gw = vec![T::zero(); dout * din];
                super::gemm::matmul(&mut gw, g, &x, dout, n, din, true, false, false);
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![T::zero(); dout];
                for row in g.chunks(dout.max(1)) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a = *a + *b);
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let probs = softmax_values(self, axis)?;
        let (outer, c, inner) = split_axis(self.shape(), axis);
        let y = probs.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            probs,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * c * inner + k * inner + i;
                        let dot: T = (0..c).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..c {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let probs = softmax_values(self, axis)?;
        let (outer, c, inner) = split_axis(self.shape(), axis);
        let mut out = vec![T::zero(); self.len()];
        let x = self.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * c * inner + k * inner + i;
                let m = (0..c).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
                let lse = m + (0..c).map(|k| (x[at(k)] - m).exp()).sum::<T>().ln();
                for k in 0..c {
                    out[at(k)] = x[at(k)] - lse;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * c * inner + k * inner + i;
                        let gs: T = (0..c).map(|k| g[at(k)]).sum();
                        for k in 0..c {
                            gx[at(k)] = g[at(k)] - probs[at(k)] * gs;
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Multiplies each row of `x: [N, C]` by the scalar `s[n]` (`s: [N]` or `[N,1]`).
    pub fn scale_rows(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || s.len() != self.shape()[0] {
            return Err(Error::dim(format!(
                "scale_rows: {:?} rows vs {:?} scales",
                self.shape(),
                s.shape()
            )));
        }
        let c = self.shape()[1];
        let mut out = self.to_vec();
        for (row, k) in out.chunks_mut(c.max(1)).zip(s.data()) {
            row.iter_mut().for_each(|v| *v = *v * *k);
        }
        let x = self.shared_data();
        let sv = s.shared_data();
        let (tx, ts) = (self.is_tracked(), s.is_tracked());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), s.clone()],
            move |g| {
                let gx = tx.then(|| {
                    let mut gx = g.to_vec();
                    for (row, k) in gx.chunks_mut(c.max(1)).zip(sv.iter()) {
                        row.iter_mut().for_each(|v| *v = *v * *k);
                    }
                    gx
                });
                let gs = ts.then(|| {
                    g.chunks(c.max(1))
                        .zip(x.chunks(c.max(1)))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| *a * *b).sum())
                        .collect()
                });
                vec![gx, gs]
            },
        ))
    }

    /// Row gather `out[i] = x[index[i]]` for `x: [M, C]`; gradient scatter-adds.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::dim("gather_rows expects a rank-2 tensor"));
        }
        let (m, c) = (self.shape()[0], self.shape()[1]);
        if let Some(bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::dim(format!("gather_rows: index {bad} out of {m} rows")));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        let index = index.to_vec();
        Ok(Tensor::from_op(
            vec![index.len(), c],
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); m * c];
                for (r, &i) in index.iter().enumerate() {
                    for k in 0..c {
                        gx[i * c + k] = gx[i * c + k] + g[r * c + k];
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Gathers channel vectors from a `[B, C, H, W]` map at `(batch, row, col)`
    /// locations, producing `[N, C]`.
    pub fn gather_pixels(&self, locs: &[(usize, usize, usize)]) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::dim("gather_pixels expects [B, C, H, W]"));
        }
        let [b, c, h, w] = [self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]];
        if let Some(bad) = locs.iter().find(|&&(bi, y, x)| bi >= b || y >= h || x >= w) {
            return Err(Error::dim(format!("gather_pixels: location {bad:?} outside map")));
        }
        let x = self.data();
        let hw = h * w;
        let mut out = Vec::with_capacity(locs.len() * c);
        for &(bi, y, xx) in locs {
            let base = bi * c * hw + y * w + xx;
            out.extend((0..c).map(|k| x[base + k * hw]));
        }
        let locs = locs.to_vec();
        let total = self.len();
        Ok(Tensor::from_op(
            vec![locs.len(), c],
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); total];
                for (r, &(bi, y, xx)) in locs.iter().enumerate() {
                    let base = bi * c * hw + y * w + xx;
                    for k in 0..c {
                        gx[base + k * hw] = gx[base + k * hw] + g[r * c + k];
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Adds a per-channel bias to `[B, C, ...]`.
    pub fn add_channel_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() < 2 || bias.shape() != [self.shape()[1]] {
            return Err(Error::dim(format!(
                "add_channel_bias: {:?} vs bias {:?}",
                self.shape(),
                bias.shape()
            )));
        }
        let (b, c) = (self.shape()[0], self.shape()[1]);
        let inner: usize = self.shape()[2..].iter().product();
        let mut out = self.to_vec();
        let bv = bias.data();
        for bi in 0..b {
            for k in 0..c {
                let s = (bi * c + k) * inner;
                out[s..s + inner].iter_mut().for_each(|v| *v = *v + bv[k]);
            }
        }
        let (tx, tb) = (self.is_tracked(), bias.is_tracked());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            move |g| {
                let gb = tb.then(|| {
                    let mut gb = vec![T::zero(); c];
                    for bi in 0..b {
                        for (k, acc) in gb.iter_mut().enumerate() {
                            let s = (bi * c + k) * inner;
                            *acc = *acc + g[s..s + inner].iter().copied().sum();
                        }
                    }
                    gb
                });
                vec![tx.then(|| g.to_vec()), gb]
            },
        ))
    }

    /// Picks `x[row, col]` for each pair, producing a rank-1 tensor.
    pub fn pick(&self, entries: &[(usize, usize)]) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::dim("pick expects a rank-2 tensor"));
        }
        let (m, c) = (self.shape()[0], self.shape()[1]);
        if let Some(bad) = entries.iter().find(|&&(r, k)| r >= m || k >= c) {
            return Err(Error::dim(format!("pick: entry {bad:?} outside {m}x{c}")));
        }
        let x = self.data();
        let out = entries.iter().map(|&(r, k)| x[r * c + k]).collect();
        let entries = entries.to_vec();
        Ok(Tensor::from_op(
            vec![entries.len()],
            out,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![T::zero(); m * c];
                for (gi, &(r, k)) in g.iter().zip(&entries) {
                    gx[r * c + k] = gx[r * c + k] + *gi;
                }
                vec![Some(gx)]
            },
        ))
    }
}

fn softmax_values<T: Elem>(x: &Tensor<T>, axis: usize) -> Result<Vec<T>> {
    if axis >= x.rank() {
        return Err(Error::dim(format!(
            "softmax axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    if x.shape()[axis] == 0 {
        return Err(Error::dim("softmax over an empty axis"));
    }
    check_finite(x.data(), "softmax input")?;
    let (outer, c, inner) = split_axis(x.shape(), axis);
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * c * inner + k * inner + i;
            let m = (0..c).map(|k| d[at(k)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..c {
                let e = (d[at(k)] - m).exp();
                out[at(k)] = e;
                z = z + e;
            }
            for k in 0..c {
                out[at(k)] = out[at(k)] / z;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::new(&[2], vec![-1.0, 2.5]).unwrap();
        assert_eq!(x.relu().to_vec(), vec![0.0, 2.5]);
    }

    #[test]
    fn linear_identity() {
        let x = Tensor::<f64>::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::new(&[3, 3], eye).unwrap();
        let b = Tensor::zeros(&[3]);
        assert_eq!(x.linear(&w, Some(&b)).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn linear_rejects_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matches!(x.linear(&w, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_cases() {
        let s = Tensor::<f64>::new(&[1, 2], vec![0.0, 0.0]).unwrap().softmax(1).unwrap();
        assert_eq!(s.to_vec(), vec![0.5, 0.5]);
        let s = Tensor::<f64>::new(&[1, 2], vec![1f64.ln(), 3f64.ln()])
            .unwrap()
            .softmax(1)
            .unwrap();
        assert_abs_diff_eq!(s.data()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s.data()[1], 0.75, epsilon = 1e-12);
        let s = Tensor::<f32>::new(&[1, 2], vec![1000.0, 0.0]).unwrap().softmax(1).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(s.data()[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s.data()[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn softmax_nan_is_numeric_error() {
        let x = Tensor::<f32>::new(&[1, 2], vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(x.softmax(1), Err(Error::Numeric(_))));
        assert!(matches!(x.log_softmax(1), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_on_middle_axis() {
        let x = Tensor::<f64>::new(&[1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = x.softmax(1).unwrap();
        assert_eq!(s.to_vec(), vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn concat_axis_errors() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[3, 3]);
        assert!(Tensor::concat(&[a.clone(), b.clone()], 0).is_ok());
        assert!(Tensor::concat(&[a.clone(), b], 1).is_err());
        assert!(Tensor::concat(&[a], 2).is_err());
    }

    #[test]
    fn concat_interleaves_on_inner_axis() {
        let a = Tensor::<f32>::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::new(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn add_mul_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2]);
        let b = Tensor::<f32>::zeros(&[3]);
        assert!(a.add(&b).is_err());
        assert!(a.mul(&b).is_err());
    }
}
