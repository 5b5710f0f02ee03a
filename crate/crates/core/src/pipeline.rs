//! End-to-end inference: tile, predict per patch, merge, refine.

use rayon::prelude::*;

use crate::descriptor::{normalize_patch_with, DescriptorParams, FaceGrids, NormalizeOptions};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::model::{ModelInput, SurfaceFormer};
use crate::patching::generate_patches;

pub const DEFAULT_ITERATIONS: usize = 60;

#[derive(Clone, Debug)]
pub struct DenoiseOptions {
    /// Inference patch size; defaults to the model's training patch size.
    pub t_f: Option<usize>,
    pub n_v: usize,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        Self {
            t_f: None,
            n_v: DEFAULT_ITERATIONS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenoiseResult {
    pub mesh: Mesh,
    pub per_face_normals: Vec<Vec3>,
    pub iterations_used: usize,
    /// Vertices after merging offset predictions, before refinement.
    pub merged_vertices: Vec<Vec3>,
}

/// Merged per-face normals and merged vertex positions predicted by the
/// model, before refinement.
pub fn predict(mesh: &Mesh, model: &SurfaceFormer, t_f: usize) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let cfg = model.config();
    if t_f > cfg.t_f {
        return Err(Error::IncompatibleCheckpoint(format!(
            "patch size {t_f} exceeds the trained patch size {}",
            cfg.t_f
        )));
    }
    let patches = generate_patches(mesh, t_f)?;
    let d_a = mesh.average_adjacent_center_distance()?;
    let params = DescriptorParams {
        d_a,
        p_s: cfg.p_s,
        t_s: cfg.t_s,
    };
    let grids = FaceGrids::compute_all(mesh, params)?;
    let opts = NormalizeOptions::default();
    let per_patch = patches
        .par_iter()
        .map(|patch| {
            // EdgeConv needs a neighbor; lone faces keep their noisy geometry.
            if patch.len() < 2 {
                return Ok(None);
            }
            let raw = grids.assemble(mesh, patch)?;
            let (lsd, ctx) = normalize_patch_with(&raw, patch, mesh, &opts)?;
            let pred = model.forward(&ModelInput::from_descriptor(&lsd)?)?;
            Ok(Some((pred, ctx)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut normal_sum = vec![Vec3::zeros(); mesh.face_count()];
    let mut offset_sum = vec![Vec3::zeros(); mesh.vertex_count()];
    let mut offset_count = vec![0usize; mesh.vertex_count()];
    for (patch, out) in patches.iter().zip(&per_patch) {
        let Some((pred, ctx)) = out else { continue };
        for (i, &f) in patch.faces.iter().enumerate() {
            normal_sum[f] += ctx.world_dir(&pred.normals[i]);
            for (k, &v) in mesh.faces()[f].iter().enumerate() {
                offset_sum[v] += ctx.world_offset(&pred.vertex_offsets[i][k]);
                offset_count[v] += 1;
            }
        }
    }

    let normals = normal_sum
        .iter()
        .enumerate()
        .map(|(f, s)| {
            if s.norm() < 1e-8 {
                mesh.face_normal_or_zero(f)
            } else {
                s.normalize()
            }
        })
        .collect();
    let vertices = mesh
        .vertices()
        .iter()
        .zip(offset_sum.iter().zip(&offset_count))
        .map(|(v, (s, &c))| if c == 0 { *v } else { v + s / c as f64 })
        .collect();
    Ok((normals, vertices))
}

pub fn denoise_mesh(mesh: &Mesh, model: &SurfaceFormer, opts: &DenoiseOptions) -> Result<DenoiseResult> {
    let t_f = opts.t_f.unwrap_or(model.config().t_f);
    let (normals, merged) = predict(mesh, model, t_f)?;
    let refined = vertex_refine(&merged, mesh.faces(), &normals, opts.n_v);
    Ok(DenoiseResult {
        mesh: mesh.with_vertices(refined)?,
        per_face_normals: normals,
        iterations_used: opts.n_v,
        merged_vertices: merged,
    })
}

/// Jacobi sweeps moving each vertex toward the planes through its incident
/// face centers with the given normals.
pub fn vertex_refine(vertices: &[Vec3], faces: &[[usize; 3]], normals: &[Vec3], n_v: usize) -> Vec<Vec3> {
    vertex_refine_traced(vertices, faces, normals, n_v, |_, _| {})
}

/// As [`vertex_refine`], calling `on_sweep(k, vertices)` after sweep `k`
/// (1-based).
pub fn vertex_refine_traced(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    normals: &[Vec3],
    n_v: usize,
    mut on_sweep: impl FnMut(usize, &[Vec3]),
) -> Vec<Vec3> {
    let mut degree = vec![0usize; vertices.len()];
    for f in faces {
        for &v in f {
            degree[v] += 1;
        }
    }
    let mut cur = vertices.to_vec();
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for sweep in 1..=n_v {
        acc.fill(Vec3::zeros());
        for (f, tri) in faces.iter().enumerate() {
            let c = (cur[tri[0]] + cur[tri[1]] + cur[tri[2]]) / 3.0;
            let n = normals[f];
            for &v in tri {
                acc[v] += n * n.dot(&(c - cur[v]));
            }
        }
        for (v, p) in cur.iter_mut().enumerate() {
            if degree[v] > 0 {
                *p += acc[v] / degree[v] as f64;
            }
        }
        on_sweep(sweep, &cur);
    }
    cur
}
