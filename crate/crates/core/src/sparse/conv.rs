use std::sync::Arc;

use super::rulebook::Rulebook;
use super::voxel::{SparseTensor, VoxelSet};
use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

fn gather<T: Elem>(src: &[T], width: usize, rows: impl Iterator<Item = usize>, dst: &mut Vec<T>) {
    dst.clear();
    for r in rows {
        dst.extend_from_slice(&src[r * width..(r + 1) * width]);
    }
}

fn scatter_add<T: Elem>(dst: &mut [T], width: usize, rows: impl Iterator<Item = usize>, src: &[T]) {
    for (k, r) in rows.enumerate() {
        let d = &mut dst[r * width..(r + 1) * width];
        d.iter_mut()
            .zip(&src[k * width..(k + 1) * width])
            .for_each(|(a, b)| *a = *a + *b);
    }
}

/// `out[o] = Σ_(i,o,d) W[d]ᵀ · in[i]` over the rulebook, for features
/// `[n_in, Cin]` and weights `[K, Cin, Cout]`. Differentiable in both.
///
/// Offsets are processed in rulebook order and pairs in list order, so the
/// accumulation order is fixed.
pub fn sparse_conv_features<T: Elem>(
    features: &Tensor<T>,
    weights: &Tensor<T>,
    rulebook: &Arc<Rulebook>,
) -> Result<Tensor<T>> {
    if features.rank() != 2 || weights.rank() != 3 {
        return Err(Error::dim(format!(
            "sparse_conv expects features [N, Cin] and weights [K, Cin, Cout], got {:?} and {:?}",
            features.shape(),
            weights.shape()
        )));
    }
    let (n_in, cin) = (features.shape()[0], features.shape()[1]);
    let (kvol, wcin, cout) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    if wcin != cin || kvol != rulebook.kernel_volume() {
        return Err(Error::dim(format!(
            "weights {:?} incompatible with {cin} input channels and kernel volume {}",
            weights.shape(),
            rulebook.kernel_volume()
        )));
    }
    if n_in != rulebook.n_in {
        return Err(Error::Consistency(format!(
            "rulebook built for {} input rows, features have {n_in}",
            rulebook.n_in
        )));
    }
    let stale = rulebook
        .pairs
        .iter()
        .flatten()
        .any(|&(i, o)| i as usize >= n_in || o as usize >= rulebook.n_out);
    if stale {
        return Err(Error::Consistency("rulebook references rows out of range".into()));
    }

    let n_out = rulebook.n_out;
    let x = features.data();
    let w = weights.data();
    let mut out = vec![T::zero(); n_out * cout];
    let mut a = Vec::new();
    let mut c = Vec::new();
    for (k, pairs) in rulebook.pairs.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let p = pairs.len();
        gather(x, cin, pairs.iter().map(|&(i, _)| i as usize), &mut a);
        c.clear();
        c.resize(p * cout, T::zero());
        crate::tensor::matmul(&mut c, &a, &w[k * cin * cout..(k + 1) * cin * cout], p, cin, cout, false, false, false);
        scatter_add(&mut out, cout, pairs.iter().map(|&(_, o)| o as usize), &c);
    }

    let xs = features.shared_data();
    let ws = weights.shared_data();
    let rb = Arc::clone(rulebook);
    let (tx, tw) = (features.is_tracked(), weights.is_tracked());
    Ok(Tensor::from_op(
        vec![n_out, cout],
        out,
        vec![features.clone(), weights.clone()],
        move |g| {
            let mut gx = tx.then(|| vec![T::zero(); n_in * cin]);
            let mut gw = tw.then(|| vec![T::zero(); kvol * cin * cout]);
            let mut a = Vec::new();
            let mut gout = Vec::new();
            let mut gin = Vec::new();
            for (k, pairs) in rb.pairs.iter().enumerate() {
                if pairs.is_empty() {
                    continue;
                }
                let p = pairs.len();
                gather(g, cout, pairs.iter().map(|&(_, o)| o as usize), &mut gout);
                if let Some(gw) = gw.as_mut() {
                    gather(&xs, cin, pairs.iter().map(|&(i, _)| i as usize), &mut a);
                    crate::tensor::matmul(
                        &mut gw[k * cin * cout..(k + 1) * cin * cout],
                        &a,
                        &gout,
                        cin,
                        p,
                        cout,
                        true,
                        false,
                        true,
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    gin.clear();
                    gin.resize(p * cin, T::zero());
                    crate::tensor::matmul(
                        &mut gin,
                        &gout,
                        &ws[k * cin * cout..(k + 1) * cin * cout],
                        p,
                        cout,
                        cin,
                        false,
                        true,
                        false,
                    );
                    scatter_add(gx, cin, pairs.iter().map(|&(i, _)| i as usize), &gin);
                }
            }
            vec![gx, gw]
        },
    ))
}

/// Sparse convolution producing features on the rulebook's output voxels.
pub fn sparse_conv<T: Elem>(
    input: &SparseTensor<T>,
    weights: &Tensor<T>,
    rulebook: &Arc<Rulebook>,
    output_voxels: &Arc<VoxelSet>,
) -> Result<SparseTensor<T>> {
    if input.voxels.len() != rulebook.n_in || output_voxels.len() != rulebook.n_out {
        return Err(Error::Consistency(
            "rulebook does not belong to this input/output voxel set".into(),
        ));
    }
    let f = sparse_conv_features(&input.features, weights, rulebook)?;
    SparseTensor::new(Arc::clone(output_voxels), f)
}

/// Transposed strided convolution back onto the retained finer voxel set.
///
/// `down` is the rulebook of the strided convolution that produced `input`
/// from `finer`; the output has exactly `finer`'s active set. `weights` are
/// `[K, C_coarse, C_fine]`.
pub fn sparse_upsample<T: Elem>(
    input: &SparseTensor<T>,
    finer: Option<&Arc<VoxelSet>>,
    down: &Rulebook,
    weights: &Tensor<T>,
) -> Result<SparseTensor<T>> {
    let finer = finer.ok_or_else(|| Error::usage("upsampling needs the retained finer voxel set"))?;
    if down.n_in != finer.len() || down.n_out != input.voxels.len() {
        return Err(Error::Consistency(
            "downsample rulebook does not match the finer set and coarse input".into(),
        ));
    }
    let up = Arc::new(down.transposed());
    let f = sparse_conv_features(&input.features, weights, &up)?;
    SparseTensor::new(Arc::clone(finer), f)
}

#[cfg(test)]
mod tests {
    use super::super::{build_rulebook, VoxelCoord};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single() -> Arc<VoxelSet> {
        Arc::new(VoxelSet::from_coords(vec![VoxelCoord::new(0, 5, 5, 5)]).unwrap())
    }

    #[test]
    fn center_identity_kernel_copies_features() {
        let vs = single();
        let (rb, out_set) = build_rulebook(&vs, 3, 1, true).unwrap();
        let rb = Arc::new(rb);
        let mut w = vec![0.0f64; 27 * 2 * 2];
        w[13 * 4] = 1.0;
        w[13 * 4 + 3] = 1.0;
        let w = Tensor::new(&[27, 2, 2], w).unwrap();
        let x = SparseTensor::new(vs, Tensor::new(&[1, 2], vec![0.3, -1.2]).unwrap()).unwrap();
        let y = sparse_conv(&x, &w, &rb, &out_set).unwrap();
        assert_eq!(y.features.to_vec(), vec![0.3, -1.2]);
    }

    #[test]
    fn isolated_voxel_uses_only_center_weights() {
        let vs = single();
        let (rb, out_set) = build_rulebook(&vs, 3, 1, true).unwrap();
        let rb = Arc::new(rb);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w: Vec<f64> = (0..27 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = SparseTensor::new(vs, Tensor::new(&[1, 1], vec![2.0]).unwrap()).unwrap();
        let y1 = sparse_conv(&x, &Tensor::new(&[27, 1, 3], w.clone()).unwrap(), &rb, &out_set).unwrap();
        for (k, v) in w.iter_mut().enumerate() {
            if k / 3 != 13 {
                *v = 99.0;
            }
        }
        let y2 = sparse_conv(&x, &Tensor::new(&[27, 1, 3], w).unwrap(), &rb, &out_set).unwrap();
        assert_eq!(y1.features.to_vec(), y2.features.to_vec());
    }

    #[test]
    fn stale_rulebook_is_consistency_error() {
        let vs = single();
        let (mut rb, _) = build_rulebook(&vs, 3, 1, true).unwrap();
        rb.pairs[0].push((5, 0));
        let w = Tensor::<f32>::zeros(&[27, 1, 1]);
        let f = Tensor::<f32>::zeros(&[1, 1]);
        assert!(matches!(
            sparse_conv_features(&f, &w, &Arc::new(rb)),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn upsample_without_skeleton_is_usage_error() {
        let vs = single();
        let (rb, coarse) = build_rulebook(&vs, 2, 2, false).unwrap();
        let x = SparseTensor::new(coarse, Tensor::<f32>::zeros(&[1, 1])).unwrap();
        let w = Tensor::<f32>::zeros(&[8, 1, 1]);
        assert!(matches!(sparse_upsample(&x, None, &rb, &w), Err(Error::Usage(_))));
        assert!(sparse_upsample(&x, Some(&vs), &rb, &w).is_ok());
    }
}
