//! Local surface descriptors: geodesic sampling of face normals on a polar
//! grid around each face, plus the per-face spatial row.

mod dump;
mod geodesic;
mod lsd;
mod normalize;

pub use dump::{read_lsd_dump, write_lsd_dump, LsdDump};
pub use geodesic::{trace_from, trace_geodesic, trace_geodesic_path, SamplePoint};
pub use lsd::{build_patch_lsd, FaceGrid, FaceGrids, LocalSurfaceDescriptor, SPATIAL_WIDTH};
pub use normalize::{
    denormalize, normalize_patch, normalize_patch_with, rodrigues, NormalizationContext, NormalizeOptions,
};

use crate::error::Result;
use crate::mesh::{Mesh, Vec3};

/// Target direction for the average patch normal.
pub const TARGET_NORMAL: Vec3 = Vec3::new(1.0, 0.0, 0.0);

/// Polar coordinate system erected on one face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarFrame {
    pub face_id: usize,
    pub pole: Vec3,
    pub axis: Vec3,
    pub conormal: Vec3,
    pub normal: Vec3,
}

impl PolarFrame {
    /// In-plane unit direction at polar angle `phi`.
    pub fn direction(&self, phi: f64) -> Vec3 {
        self.axis * phi.cos() + self.conormal * phi.sin()
    }
}

/// Pole at the centroid; axis toward the midpoint of the edge joining the
/// face's first two stored vertices.
pub fn build_polar_frame(mesh: &Mesh, f: usize) -> Result<PolarFrame> {
    let frame = mesh.face_frame(f)?;
    let [a, b, _] = mesh.face_vertices(f);
    let to_mid = (a + b) * 0.5 - frame.center;
    // Strip any out-of-plane roundoff before normalizing.
    let in_plane = to_mid - frame.normal * frame.normal.dot(&to_mid);
    let axis = in_plane.normalize();
    Ok(PolarFrame {
        face_id: f,
        pole: frame.center,
        axis,
        conormal: frame.normal.cross(&axis),
        normal: frame.normal,
    })
}

/// Sampling resolution: grid spacing is `d_a / p_s` and the grid spans
/// indices `(-t_s, t_s]` on both axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescriptorParams {
    pub d_a: f64,
    pub p_s: usize,
    pub t_s: usize,
}

impl DescriptorParams {
    pub fn side(&self) -> usize {
        2 * self.t_s
    }

    /// Cartesian offset `(vx, vy)` of grid cell `(row, col)`, with row
    /// indexing `j` and col indexing `i`.
    pub fn cell_offset(&self, row: usize, col: usize) -> (f64, f64) {
        let t = self.t_s as f64;
        let i = col as f64 - t + 1.0;
        let j = row as f64 - t + 1.0;
        let step = self.d_a / self.p_s as f64;
        (step * i, step * j)
    }
}

/// One `(r, phi)` pair per grid cell, row-major over `j` then `i`, both
/// running from `-t_s + 1` to `t_s`.
pub fn virtual_polar_grid(d_a: f64, p_s: usize, t_s: usize) -> Vec<(f64, f64)> {
    let params = DescriptorParams { d_a, p_s, t_s };
    let side = params.side();
    let mut out = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let (vx, vy) = params.cell_offset(row, col);
            out.push((vx.hypot(vy), vy.atan2(vx)));
        }
    }
    out
}
