use super::*;
use crate::geometry::make_sparse_depth;
use crate::scene::{generate, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        widths_2d: vec![4, 4, 8, 8],
        widths_3d: vec![4, 8],
        ..ModelConfig::default()
    }
}

fn small_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        width: 32,
        height: 32,
        lidar_lines: 16,
        azimuth_steps: 32,
        ..SceneSpec::day(seed)
    }
}

fn rows(t: &Tensor<f32>, r: usize) -> &[f32] {
    let c = t.shape()[1];
    &t.data()[r * c..(r + 1) * c]
}

#[test]
fn both_heads_emit_one_row_per_point() {
    let ds = generate(&small_spec(1), 2).unwrap();
    let model = Model::new(small_config(), 0).unwrap();
    let inputs: Vec<Input> = ds.samples.iter().map(|s| Input::from_sample(s).unwrap()).collect();
    let batch = Batch::new(&inputs, &model.config).unwrap();
    let out = model.infer(&batch).unwrap();
    let n: usize = ds.samples.iter().map(|s| s.num_points()).sum();
    for t in [&out.out2d.main_logits, &out.out2d.aux_logits, &out.out3d.main_logits, &out.out3d.aux_logits] {
        assert_eq!(t.shape(), [n, 4]);
        assert!(t.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn single_sample_entry_points_match_batched_forward() {
    let s = &generate(&small_spec(2), 1).unwrap().samples[0];
    let model = Model::new(small_config(), 3).unwrap();
    let batch = Batch::new(&[Input::from_sample(s).unwrap()], &model.config).unwrap();
    let out = model.infer(&batch).unwrap();
    let depth = make_sparse_depth(&s.cloud.positions, &s.intrinsics).unwrap();
    let o2 = model.forward_2d(&s.image, &depth, &s.cloud.positions, &s.intrinsics).unwrap();
    let o3 = model.forward_3d(&s.cloud.positions, s.colors()).unwrap();
    assert_eq!(o2.main_logits, out.out2d.main_logits);
    assert_eq!(o3.main_logits, out.out3d.main_logits);
}

#[test]
fn zero_depth_map_is_finite() {
    let s = &generate(&small_spec(3), 1).unwrap().samples[0];
    let model = Model::new(small_config(), 1).unwrap();
    let depth = Tensor::zeros(&[1, 32, 32]);
    let o = model.forward_2d(&s.image, &depth, &s.cloud.positions, &s.intrinsics).unwrap();
    assert!(o.main_logits.data().iter().all(|v| v.is_finite()));
}

#[test]
fn depth_size_mismatch_is_dimension_error() {
    let s = &generate(&small_spec(3), 1).unwrap().samples[0];
    let model = Model::new(small_config(), 1).unwrap();
    let depth = Tensor::zeros(&[1, 16, 32]);
    let r = model.forward_2d(&s.image, &depth, &s.cloud.positions, &s.intrinsics);
    assert!(matches!(r, Err(Error::Dimension(_))));
    let r = model.forward_3d(&s.cloud.positions, &s.colors()[1..]);
    assert!(matches!(r, Err(Error::Dimension(_))));
}

#[test]
fn points_sharing_a_voxel_share_logits() {
    let model = Model::new(small_config(), 4).unwrap();
    let pts = [[0.01, 0.02, 5.03], [0.05, 0.04, 5.07], [1.0, 0.0, 5.0]];
    let cols = [[0.2, 0.4, 0.6], [0.9, 0.1, 0.1], [0.5, 0.5, 0.5]];
    let o = model.forward_3d(&pts, &cols).unwrap();
    assert_eq!(rows(&o.main_logits, 0), rows(&o.main_logits, 1));
    assert_ne!(rows(&o.main_logits, 0), rows(&o.main_logits, 2));
}

#[test]
fn voxel_feature_is_alpha_times_color() {
    let model = Model::new(small_config(), 5).unwrap();
    let p = model.params.constants();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<[f32; 3]> = (0..200)
        .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..9.0)])
        .collect();
    let cols: Vec<[f32; 3]> = (0..200).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let geo = VoxelGeometry::build(&[&pts], 0.2, 2).unwrap();
    let ct = Tensor::new(&[200, 3], cols.iter().flatten().copied().collect()).unwrap();
    let x = voxel_features(&p, &ct, &geo).unwrap();
    let w = p.get("3d.alpha.w").unwrap().data().to_vec();
    let b = p.get("3d.alpha.b").unwrap().item();
    for (v, &pi) in geo.voxelization.winner.iter().enumerate() {
        let c = cols[pi];
        let z = c[0] * w[0] + c[1] * w[1] + c[2] * w[2] + b;
        let a = 1.0 / (1.0 + (-z).exp());
        assert!(a > 0.0 && a < 1.0);
        for k in 0..3 {
            assert!((x.data()[v * 3 + k] - a * c[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn black_colors_give_zero_voxel_features() {
    let model = Model::new(small_config(), 6).unwrap();
    let pts = [[0.0, 0.0, 4.0], [1.0, 0.5, 6.0]];
    let cols = [[0.0; 3]; 2];
    let geo = VoxelGeometry::build(&[&pts], 0.2, 2).unwrap();
    let ct = Tensor::new(&[2, 3], vec![0.0; 6]).unwrap();
    let x = voxel_features(&model.params.constants(), &ct, &geo).unwrap();
    assert!(x.data().iter().all(|v| *v == 0.0));
    let o = model.forward_3d(&pts, &cols).unwrap();
    assert!(o.main_logits.data().iter().all(|v| v.is_finite()));
}

#[test]
fn fuse_cases() {
    let p = Tensor::new(&[2, 2], vec![0.3f64, 0.7, 1.0, 0.0]).unwrap();
    assert_eq!(fuse(&p, &p).unwrap().to_vec(), p.to_vec());
    let a = Tensor::new(&[1, 2], vec![1.0f64, 0.0]).unwrap();
    let b = Tensor::new(&[1, 2], vec![0.0f64, 1.0]).unwrap();
    assert_eq!(fuse(&a, &b).unwrap().to_vec(), vec![0.5, 0.5]);
    let bad = Tensor::new(&[1, 2], vec![0.6f64, 0.6]).unwrap();
    assert!(matches!(fuse(&a, &bad), Err(Error::Contract(_))));
}

#[test]
fn fuse_matches_arithmetic_on_random_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut table = || -> Vec<f64> {
        (0..5)
            .flat_map(|_| {
                let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 0.01).collect();
                let s: f64 = v.iter().sum();
                v.into_iter().map(move |x| x / s)
            })
            .collect()
    };
    let (a, b) = (table(), table());
    let f = fuse(&Tensor::new(&[5, 4], a.clone()).unwrap(), &Tensor::new(&[5, 4], b.clone()).unwrap()).unwrap();
    for i in 0..20 {
        assert!((f.data()[i] - (a[i] + b[i]) / 2.0).abs() < 1e-7);
    }
}

#[test]
fn fusion_head_cases() {
    let f2 = Tensor::<f64>::zeros(&[3, 2]);
    let f3 = Tensor::<f64>::zeros(&[3, 4]);
    let w = Tensor::<f64>::zeros(&[4, 6]);
    let b = Tensor::new(&[4], vec![1.0, 2.0, 0.0, -1.0]).unwrap();
    let y = fusion_head(&f2, &f3, &w, &b).unwrap();
    assert_eq!(y.shape(), [3, 4]);
    assert_eq!(&y.data()[4..8], b.data());
    assert!(fusion_head(&f2, &f3, &Tensor::zeros(&[4, 5]), &b).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let (a2, a3, wv, bv) = (rand(6), rand(12), rand(24), rand(4));
    let y = fusion_head(
        &Tensor::new(&[3, 2], a2.clone()).unwrap(),
        &Tensor::new(&[3, 4], a3.clone()).unwrap(),
        &Tensor::new(&[4, 6], wv.clone()).unwrap(),
        &Tensor::new(&[4], bv.clone()).unwrap(),
    )
    .unwrap();
    for n in 0..3 {
        let x: Vec<f64> = a2[n * 2..n * 2 + 2].iter().chain(&a3[n * 4..n * 4 + 4]).copied().collect();
        for c in 0..4 {
            let want = bv[c] + (0..6).map(|k| wv[c * 6 + k] * x[k]).sum::<f64>();
            assert!((y.data()[n * 4 + c] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn checkpoint_restores_architecture_and_values() {
    let cfg = ModelConfig {
        depth_input: false,
        fusion_head: true,
        voxel_size: 0.35,
        ..small_config()
    };
    let model = Model::new(cfg, 11).unwrap();
    let bytes = model.to_bytes().unwrap();
    let back = Model::from_bytes(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_bytes().unwrap(), bytes);
}

#[test]
fn init_is_seeded() {
    let a = Model::new(small_config(), 1).unwrap();
    assert_eq!(a, Model::new(small_config(), 1).unwrap());
    assert_ne!(a, Model::new(small_config(), 2).unwrap());
}
