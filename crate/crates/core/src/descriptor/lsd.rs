use rayon::prelude::*;

use super::{build_polar_frame, trace_geodesic, DescriptorParams};
use crate::error::Result;
use crate::mesh::Mesh;
use crate::patching::Patch;

/// `[pole, axis, v1, v2, v3]`.
pub const SPATIAL_WIDTH: usize = 15;

/// Sampled normals of one face, `side * side * 3` values row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceGrid {
    pub normals: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FaceGrid {
    pub fn compute(mesh: &Mesh, f: usize, params: &DescriptorParams) -> Result<Self> {
        let frame = build_polar_frame(mesh, f)?;
        let side = params.side();
        let mut normals = Vec::with_capacity(side * side * 3);
        let mut valid = Vec::with_capacity(side * side);
        for row in 0..side {
            for col in 0..side {
                let (vx, vy) = params.cell_offset(row, col);
                let s = trace_geodesic(mesh, &frame, vx.hypot(vy), vy.atan2(vx));
                normals.extend_from_slice(s.normal.as_slice());
                valid.push(s.valid);
            }
        }
        Ok(Self { normals, valid })
    }
}

/// Per-face grids, computed once per mesh and shared by all patches that
/// contain the face.
#[derive(Clone, Debug)]
pub struct FaceGrids {
    params: DescriptorParams,
    grids: Vec<Option<FaceGrid>>,
}

impl FaceGrids {
    pub fn new(mesh: &Mesh, params: DescriptorParams) -> Self {
        Self {
            params,
            grids: vec![None; mesh.face_count()],
        }
    }

    /// Computes every face grid, in parallel across faces.
    pub fn compute_all(mesh: &Mesh, params: DescriptorParams) -> Result<Self> {
        let grids = (0..mesh.face_count())
            .into_par_iter()
            .map(|f| FaceGrid::compute(mesh, f, &params).map(Some))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, grids })
    }

    pub fn params(&self) -> &DescriptorParams {
        &self.params
    }

    pub fn ensure(&mut self, mesh: &Mesh, f: usize) -> Result<&FaceGrid> {
        if self.grids[f].is_none() {
            self.grids[f] = Some(FaceGrid::compute(mesh, f, &self.params)?);
        }
        Ok(self.grids[f].as_ref().expect("just computed"))
    }

    pub fn get(&self, f: usize) -> Option<&FaceGrid> {
        self.grids[f].as_ref()
    }

    /// Assembles the descriptor of `patch`, caching missing grids.
    pub fn patch_lsd(&mut self, mesh: &Mesh, patch: &Patch) -> Result<LocalSurfaceDescriptor> {
        for &f in &patch.faces {
            self.ensure(mesh, f)?;
        }
        self.assemble(mesh, patch)
    }

    /// Assembles the descriptor of `patch` without touching the cache;
    /// missing grids are computed and dropped.
    pub fn assemble(&self, mesh: &Mesh, patch: &Patch) -> Result<LocalSurfaceDescriptor> {
        let side = self.params.side();
        let n = patch.faces.len();
        let mut g = Vec::with_capacity(n * side * side * 3);
        let mut valid = Vec::with_capacity(n * side * side);
        let mut s = Vec::with_capacity(n * SPATIAL_WIDTH);
        for &f in &patch.faces {
            let owned;
            let grid = match self.get(f) {
                Some(grid) => grid,
                None => {
                    owned = FaceGrid::compute(mesh, f, &self.params)?;
                    &owned
                }
            };
            g.extend_from_slice(&grid.normals);
            valid.extend_from_slice(&grid.valid);
            let frame = build_polar_frame(mesh, f)?;
            s.extend_from_slice(frame.pole.as_slice());
            s.extend_from_slice(frame.axis.as_slice());
            for v in mesh.face_vertices(f) {
                s.extend_from_slice(v.as_slice());
            }
        }
        Ok(LocalSurfaceDescriptor {
            faces: n,
            side,
            g,
            s,
            valid,
        })
    }
}

/// Sampled normal grids `g` (`faces × side × side × 3`), spatial rows `s`
/// (`faces × 15`) and per-sample validity.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSurfaceDescriptor {
    pub faces: usize,
    pub side: usize,
    pub g: Vec<f64>,
    pub s: Vec<f64>,
    pub valid: Vec<bool>,
}

impl LocalSurfaceDescriptor {
    pub fn grid_len(&self) -> usize {
        self.side * self.side * 3
    }

    pub fn grid(&self, face: usize) -> &[f64] {
        let w = self.grid_len();
        &self.g[face * w..(face + 1) * w]
    }

    pub fn spatial(&self, face: usize) -> &[f64] {
        &self.s[face * SPATIAL_WIDTH..(face + 1) * SPATIAL_WIDTH]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.faces, self.side), (other.faces, other.side));
        self.g
            .iter()
            .zip(&other.g)
            .chain(self.s.iter().zip(&other.s))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn build_patch_lsd(mesh: &Mesh, patch: &Patch, params: DescriptorParams) -> Result<LocalSurfaceDescriptor> {
    FaceGrids::new(mesh, params).patch_lsd(mesh, patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, planar_grid};
    use crate::mesh::Vec3;
    use crate::patching::grow_patch;

    #[test]
    fn flat_patch_samples_plane_normal() {
        let m = planar_grid(12, 0.5);
        let d_a = m.average_adjacent_center_distance().unwrap();
        let patch = grow_patch(&m, 130, 24).unwrap();
        let lsd = build_patch_lsd(&m, &patch, DescriptorParams { d_a, p_s: 4, t_s: 5 }).unwrap();
        assert_eq!(lsd.g.len(), 24 * 10 * 10 * 3);
        assert_eq!(lsd.s.len(), 24 * SPATIAL_WIDTH);
        for c in lsd.g.chunks(3) {
            assert_eq!(c, &[0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn sphere_samples_are_outward_unit_normals() {
        let m = icosphere(2);
        let d_a = m.average_adjacent_center_distance().unwrap();
        let params = DescriptorParams { d_a, p_s: 8, t_s: 10 };
        let f = 17;
        let frame = build_polar_frame(&m, f).unwrap();
        let grid = FaceGrid::compute(&m, f, &params).unwrap();
        assert!(grid.valid.iter().all(|&v| v));
        let mut k = 0;
        for row in 0..params.side() {
            for col in 0..params.side() {
                let (vx, vy) = params.cell_offset(row, col);
                let s = trace_geodesic(&m, &frame, vx.hypot(vy), vy.atan2(vx));
                let n = Vec3::from_column_slice(&grid.normals[3 * k..3 * k + 3]);
                let host = m.face_vertices(s.host_face);
                let own = (host[1] - host[0]).cross(&(host[2] - host[0])).normalize();
                assert!((n.norm() - 1.0).abs() < 1e-12);
                assert!(n.dot(&m.face_center(s.host_face)) > 0.0);
                assert!((n - own).norm() < 1e-12);
                k += 1;
            }
        }
    }
}
