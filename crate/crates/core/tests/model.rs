mod common;

use common::{jitter, rng};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use sf_diffcore::{gradient_check, GradCheckConfig, ParamStore, Tensor};
use surfaceformer::descriptor::{normalize_patch, DescriptorParams, FaceGrids, LocalSurfaceDescriptor, TARGET_NORMAL};
use surfaceformer::mesh::primitives::icosphere;
use surfaceformer::model::{ModelConfig, ModelInput, SurfaceFormer};
use surfaceformer::patching::grow_patch;

fn toy_config() -> ModelConfig {
    ModelConfig {
        t_s: 2,
        p_s: 2,
        t_f: 6,
        conv_channels: 4,
        res_blocks: 2,
        ..ModelConfig::custom(16, 2, 2)
    }
}

fn patch_descriptor(cfg: &ModelConfig, n: usize, center: usize, seed: u64) -> LocalSurfaceDescriptor {
    let mesh = jitter(&icosphere(2), 0.02, seed);
    let d_a = mesh.average_adjacent_center_distance().unwrap();
    let patch = grow_patch(&mesh, center, n).unwrap();
    let mut grids = FaceGrids::new(&mesh, DescriptorParams { d_a, p_s: cfg.p_s, t_s: cfg.t_s });
    let lsd = grids.patch_lsd(&mesh, &patch).unwrap();
    normalize_patch(&lsd, &patch, &mesh, TARGET_NORMAL).unwrap().0
}

fn permute(lsd: &LocalSurfaceDescriptor, perm: &[usize]) -> LocalSurfaceDescriptor {
    let mut out = lsd.clone();
    let gl = lsd.grid_len();
    out.g.clear();
    out.s.clear();
    out.valid.clear();
    let ss = lsd.side * lsd.side;
    for &p in perm {
        out.g.extend_from_slice(lsd.grid(p));
        out.s.extend_from_slice(lsd.spatial(p));
        out.valid.extend_from_slice(&lsd.valid[p * ss..(p + 1) * ss]);
    }
    assert_eq!(out.g.len(), lsd.faces * gl);
    out
}

/// Moves freshly initialized parameters off exact ReLU kinks: zero biases on
/// all-zero feature rows put EdgeConv outputs exactly at the hinge.
fn perturb(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.1 * r.sample::<f64, _>(StandardNormal);
        }
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = toy_config();
    for seed in 0..10 {
        let model = SurfaceFormer::new(cfg.clone(), seed).unwrap();
        let mut store = model.store().clone();
        perturb(&mut store, 100 + seed);
        let input = ModelInput::from_descriptor(&patch_descriptor(&cfg, 6, 3 * seed as usize, seed)).unwrap();
        let mask = input.mask.clone();
        let report = gradient_check(
            &mut store,
            &[input.grid.clone(), input.planes.clone(), input.spatial.clone()],
            &GradCheckConfig {
                seed,
                ..Default::default()
            },
            |tape, v| {
                let (n, o) = model.record_vars(tape, v[0], v[1], v[2], &mask)?;
                tape.concat(&[n, o])
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {:?}", report.worst());
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let cfg = toy_config();
    let model = SurfaceFormer::new(cfg.clone(), 4).unwrap();
    let mut store = model.store().clone();
    perturb(&mut store, 9);
    let input = ModelInput::from_descriptor(&patch_descriptor(&cfg, 6, 40, 4)).unwrap();
    let mask = input.mask.clone();
    let mut r = rng(9);
    let target_n = Tensor::new(&[6, 3], (0..18).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let target_v = Tensor::new(&[6, 9], (0..54).map(|_| r.random_range(-0.1..0.1)).collect()).unwrap();
    let report = gradient_check(
        &mut store,
        &[input.grid.clone(), input.planes.clone(), input.spatial.clone()],
        &GradCheckConfig::default(),
        |tape, v| {
            let (n, o) = model.record_vars(tape, v[0], v[1], v[2], &mask)?;
            let a = tape.l1_loss(n, &target_n, &mask, 1.0)?;
            let b = tape.l1_loss(o, &target_v, &mask, 1.0)?;
            tape.add(a, b)
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{:?}", report.worst());
}

#[test]
fn output_is_exactly_permutation_equivariant() {
    let cfg = ModelConfig {
        t_f: 30,
        knn_k: 8,
        ..toy_config()
    };
    let model = SurfaceFormer::new(cfg.clone(), 7).unwrap();
    let lsd = patch_descriptor(&cfg, 30, 11, 1);
    let base = model.forward(&ModelInput::from_descriptor(&lsd).unwrap()).unwrap();
    let mut r = rng(5);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..lsd.faces).collect();
        perm.shuffle(&mut r);
        let out = model.forward(&ModelInput::from_descriptor(&permute(&lsd, &perm)).unwrap()).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(out.normals[i], base.normals[p]);
            assert_eq!(out.vertex_offsets[i], base.vertex_offsets[p]);
        }
    }
}

#[test]
fn shape_contract_and_unit_normals() {
    let cfg = toy_config();
    let model = SurfaceFormer::new(cfg.clone(), 2).unwrap();
    for n in 2..=12 {
        let input = ModelInput::from_descriptor(&patch_descriptor(&cfg, n, n, 0)).unwrap();
        let out = model.forward(&input).unwrap();
        assert_eq!(out.normals.len(), n);
        assert_eq!(out.vertex_offsets.len(), n);
        for v in &out.normals {
            assert!((v.norm() - 1.0).abs() < 1e-6);
            assert!((v.normalize() - v).norm() < 1e-12);
        }
    }
}

#[test]
fn masked_tokens_are_zeroed_and_ignored() {
    let cfg = toy_config();
    let model = SurfaceFormer::new(cfg.clone(), 3).unwrap();
    let lsd = patch_descriptor(&cfg, 8, 9, 2);
    let mut mask = vec![true; 8];
    mask[2] = false;
    mask[5] = false;
    let out = model.forward(&ModelInput::with_mask(&lsd, mask.clone()).unwrap()).unwrap();
    for i in [2, 5] {
        assert_eq!(out.normals[i].norm(), 0.0);
        assert!(out.vertex_offsets[i].iter().all(|v| v.norm() == 0.0));
    }
    // Changing a masked token's content leaves the others unchanged.
    let mut altered = lsd.clone();
    let w = altered.grid_len();
    altered.g[2 * w..3 * w].iter_mut().for_each(|x| *x = -*x);
    altered.s[5 * 15] += 0.3;
    let out2 = model.forward(&ModelInput::with_mask(&altered, mask.clone()).unwrap()).unwrap();
    for i in (0..8).filter(|&i| mask[i]) {
        assert_eq!(out.normals[i], out2.normals[i]);
    }
}

#[test]
fn duplicate_tokens_get_identical_outputs_and_runs_are_deterministic() {
    let cfg = toy_config();
    let a = SurfaceFormer::new(cfg.clone(), 11).unwrap();
    let b = SurfaceFormer::new(cfg.clone(), 11).unwrap();
    let lsd = patch_descriptor(&cfg, 6, 0, 3);
    let input = ModelInput::from_descriptor(&lsd).unwrap();
    assert_eq!(a.forward(&input).unwrap(), b.forward(&input).unwrap());

    let dup = permute(&lsd, &[0, 1, 2, 3, 4, 2]);
    let out = a.forward(&ModelInput::from_descriptor(&dup).unwrap()).unwrap();
    assert_eq!(out.normals[2], out.normals[5]);
    assert_eq!(out.vertex_offsets[2], out.vertex_offsets[5]);
}

#[test]
fn rejects_wrong_grid_side() {
    let cfg = toy_config();
    let model = SurfaceFormer::new(cfg.clone(), 0).unwrap();
    let other = ModelConfig { t_s: 3, ..cfg.clone() };
    let input = ModelInput::from_descriptor(&patch_descriptor(&other, 6, 0, 0)).unwrap();
    assert!(model.forward(&input).is_err());
}
