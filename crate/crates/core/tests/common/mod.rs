#![allow(dead_code)]

use std::sync::Arc;

use mm2d3d::sparse::{build_rulebook, kernel_offsets, sparse_conv_features, VoxelCoord, VoxelSet};
use mm2d3d::train::{seg_loss, xm_loss_from_logits};
use mm2d3d::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;
pub const GRAD_SEEDS: u64 = 5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

type Scalar = dyn Fn(&[Tensor<f64>]) -> Tensor<f64>;

/// Largest per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the
/// tape gradient and central differences of `f` at `inputs`.
pub fn grad_error(f: &Scalar, inputs: &[(Vec<usize>, Vec<f64>)]) -> f64 {
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|(s, d)| Tensor::param(s, d.clone()).unwrap()).collect();
    f(&leaves).backward().unwrap();
    let mut worst = 0.0f64;
    for (k, (_, data)) in inputs.iter().enumerate() {
        let analytic = leaves[k].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        let eval = |j: usize, h: f64| {
            let args: Vec<Tensor<f64>> = inputs
                .iter()
                .enumerate()
                .map(|(i, (s, d))| {
                    let mut d = d.clone();
                    if i == k {
                        d[j] += h;
                    }
                    Tensor::new(s, d).unwrap()
                })
                .collect();
            f(&args).item()
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in 0..data.len() {
            let num = (eval(j, FD_STEP) - eval(j, -FD_STEP)) / (2.0 * FD_STEP);
            diff += (analytic[j] - num).powi(2);
            na += analytic[j].powi(2);
            nn += num.powi(2);
        }
        let scale = na.sqrt().max(nn.sqrt());
        if scale > 0.0 {
            worst = worst.max(diff.sqrt() / scale);
        }
    }
    worst
}

/// Contracts an output with a fixed random tensor, so every entry matters.
fn probe(y: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed ^ 0xABCD);
    let w = Tensor::new(y.shape(), randn(&mut r, y.len())).unwrap();
    y.mul(&w).unwrap().sum()
}

fn dense_block(n: i32) -> Arc<VoxelSet> {
    let mut coords = Vec::new();
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                coords.push(VoxelCoord::new(0, x, y, z));
            }
        }
    }
    Arc::new(VoxelSet::from_coords(coords).unwrap())
}

fn random_voxels(seed: u64, n: usize, extent: i32) -> Arc<VoxelSet> {
    let mut r = rng(seed);
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < n {
        seen.insert((r.random_range(0..extent), r.random_range(0..extent), r.random_range(0..extent)));
    }
    let mut coords: Vec<_> = seen.into_iter().map(|(x, y, z)| VoxelCoord::new(0, x, y, z)).collect();
    coords.sort_by_key(|c| (c.x.wrapping_mul(31) ^ c.z, c.y));
    Arc::new(VoxelSet::from_coords(coords).unwrap())
}

/// Named gradient checks, each returning the worst relative error over seeds.
pub fn gradcheck_suite() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut run = |name: &'static str, case: &dyn Fn(u64) -> f64| {
        let worst = (0..GRAD_SEEDS).map(case).fold(0.0, f64::max);
        out.push((name, worst));
    };

    run("conv2d stride 1", &|s| {
        let mut r = rng(s);
        let x = (vec![2, 2, 5, 5], randn(&mut r, 100));
        let k = (vec![3, 2, 3, 3], randn(&mut r, 54));
        grad_error(&move |t| probe(&t[0].conv2d(&t[1], 1, 1).unwrap(), s), &[x, k])
    });
    run("conv2d stride 2", &|s| {
        let mut r = rng(s + 100);
        let x = (vec![1, 2, 6, 6], randn(&mut r, 72));
        let k = (vec![2, 2, 3, 3], randn(&mut r, 36));
        grad_error(&move |t| probe(&t[0].conv2d(&t[1], 2, 1).unwrap(), s), &[x, k])
    });
    run("conv2d_transpose", &|s| {
        let mut r = rng(s + 200);
        let x = (vec![1, 3, 3, 3], randn(&mut r, 27));
        let k = (vec![3, 2, 3, 3], randn(&mut r, 54));
        grad_error(&move |t| probe(&t[0].conv2d_transpose_to(&t[1], 2, 1, (6, 6)).unwrap(), s), &[x, k])
    });
    run("sparse conv submanifold", &|s| {
        let vs = random_voxels(s, 40, 5);
        let rb = Arc::new(build_rulebook(&vs, 3, 1, true).unwrap().0);
        let mut r = rng(s + 300);
        let x = (vec![vs.len(), 2], randn(&mut r, vs.len() * 2));
        let w = (vec![27, 2, 3], randn(&mut r, 162));
        grad_error(&move |t| probe(&sparse_conv_features(&t[0], &t[1], &rb).unwrap(), s), &[x, w])
    });
    run("sparse conv strided + transposed", &|s| {
        let vs = random_voxels(s + 7, 30, 6);
        let (down, _) = build_rulebook(&vs, 2, 2, false).unwrap();
        let up = Arc::new(down.transposed());
        let down = Arc::new(down);
        let mut r = rng(s + 400);
        let x = (vec![vs.len(), 2], randn(&mut r, vs.len() * 2));
        let wd = (vec![8, 2, 3], randn(&mut r, 48));
        let wu = (vec![8, 3, 2], randn(&mut r, 48));
        grad_error(
            &move |t| {
                let y = sparse_conv_features(&t[0], &t[1], &down).unwrap();
                probe(&sparse_conv_features(&y, &t[2], &up).unwrap(), s)
            },
            &[x, wd, wu],
        )
    });
    run("gather_pixels", &|s| {
        let mut r = rng(s + 500);
        let x = (vec![2, 3, 4, 4], randn(&mut r, 96));
        let locs: Vec<(usize, usize, usize)> = (0..12)
            .map(|_| (r.random_range(0..2), r.random_range(0..4), r.random_range(0..4)))
            .collect();
        grad_error(&move |t| probe(&t[0].gather_pixels(&locs).unwrap(), s), &[x])
    });
    run("gather_rows + scale_rows", &|s| {
        let mut r = rng(s + 600);
        let x = (vec![6, 3], randn(&mut r, 18));
        let a = (vec![4, 1], randn(&mut r, 4));
        let idx = vec![5, 0, 2, 2];
        grad_error(
            &move |t| probe(&t[0].gather_rows(&idx).unwrap().scale_rows(&t[1].sigmoid()).unwrap(), s),
            &[x, a],
        )
    });
    run("seg_loss", &|s| {
        let mut r = rng(s + 700);
        let x = (vec![7, 4], randn(&mut r, 28));
        let labels: Vec<i32> = (0..7).map(|i| if i == 3 { -1 } else { r.random_range(0..4) }).collect();
        grad_error(&move |t| seg_loss(&t[0], &labels).unwrap(), &[x])
    });
    run("xm_loss", &|s| {
        let mut r = rng(s + 800);
        let p = (vec![5, 4], randn(&mut r, 20));
        let q = (vec![5, 4], randn(&mut r, 20));
        grad_error(&|t| xm_loss_from_logits(&t[0], &t[1], false).unwrap(), &[p, q])
    });
    run("xm_loss detached target", &|s| {
        let mut r = rng(s + 900);
        let p = (vec![5, 4], randn(&mut r, 20));
        let q = (vec![5, 4], randn(&mut r, 20));
        let p = Tensor::new(&p.0, p.1).unwrap();
        grad_error(&move |t| xm_loss_from_logits(&p, &t[0], true).unwrap(), &[q])
    });
    out
}

/// Max abs difference between submanifold sparse conv on a fully dense `n³`
/// block and a naive zero-padded dense 3D convolution.
pub fn sparse_dense_error(seed: u64, n: i32, cin: usize, cout: usize) -> f64 {
    let vs = dense_block(n);
    let rb = Arc::new(build_rulebook(&vs, 3, 1, true).unwrap().0);
    let mut r = rng(seed);
    let x = randn(&mut r, vs.len() * cin);
    let w = randn(&mut r, 27 * cin * cout);
    let sparse = sparse_conv_features(
        &Tensor::new(&[vs.len(), cin], x.clone()).unwrap(),
        &Tensor::new(&[27, cin, cout], w.clone()).unwrap(),
        &rb,
    )
    .unwrap();
    let offsets = kernel_offsets(3);
    let mut worst = 0.0f64;
    for (o, c) in vs.coords().iter().enumerate() {
        for co in 0..cout {
            let mut acc = 0.0;
            for (d, off) in offsets.iter().enumerate() {
                let (x_, y_, z_) = (c.x + off[0], c.y + off[1], c.z + off[2]);
                if !(0..n).contains(&x_) || !(0..n).contains(&y_) || !(0..n).contains(&z_) {
                    continue;
                }
                let i = ((x_ * n + y_) * n + z_) as usize;
                for ci in 0..cin {
                    acc += w[(d * cin + ci) * cout + co] * x[i * cin + ci];
                }
            }
            worst = worst.max((acc - sparse.data()[o * cout + co]).abs());
        }
    }
    worst
}
