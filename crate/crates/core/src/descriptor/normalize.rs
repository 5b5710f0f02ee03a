use nalgebra::Matrix3;

use super::{LocalSurfaceDescriptor, SPATIAL_WIDTH, TARGET_NORMAL};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::patching::Patch;

const PARALLEL_TOL: f64 = 1e-8;

/// Maps world coordinates of one patch to its normalized frame and back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationContext {
    pub rotation: Matrix3<f64>,
    pub inverse_rotation: Matrix3<f64>,
    pub c0: Vec3,
    pub m_v: f64,
}

impl NormalizationContext {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            inverse_rotation: Matrix3::identity(),
            c0: Vec3::zeros(),
            m_v: 1.0,
        }
    }

    pub fn local_dir(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn local_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.c0) / self.m_v
    }

    pub fn world_dir(&self, d: &Vec3) -> Vec3 {
        self.inverse_rotation * d
    }

    pub fn world_point(&self, p: &Vec3) -> Vec3 {
        self.inverse_rotation * p * self.m_v + self.c0
    }

    /// A displacement in the normalized frame, expressed in world units.
    pub fn world_offset(&self, d: &Vec3) -> Vec3 {
        self.inverse_rotation * d * self.m_v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizeOptions {
    pub target: Vec3,
    /// Also spin about `target` so the center face's axis projects onto a
    /// fixed reference direction. Without this the frame keeps one free
    /// rotational degree of freedom and is not invariant to rigid motions.
    pub align_axis: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            target: TARGET_NORMAL,
            align_axis: true,
        }
    }
}

/// Rotation taking unit `from` onto unit `to`. The antipodal case turns by
/// π about whichever of y and z is least parallel to `from`.
pub fn rodrigues(from: &Vec3, to: &Vec3) -> Matrix3<f64> {
    let k = from.cross(to);
    let c = from.dot(to);
    if k.norm() < PARALLEL_TOL && c < 0.0 {
        let pick = if from.y.abs() <= from.z.abs() { Vec3::y() } else { Vec3::z() };
        let a = (pick - from * from.dot(&pick)).normalize();
        return a * a.transpose() * 2.0 - Matrix3::identity();
    }
    let kx = k.cross_matrix();
    Matrix3::identity() + kx + kx * kx / (1.0 + c)
}

fn spin_about(axis: &Vec3, cos: f64, sin: f64) -> Matrix3<f64> {
    let kx = axis.cross_matrix();
    Matrix3::identity() + kx * sin + kx * kx * (1.0 - cos)
}

fn reference_direction(target: &Vec3) -> Vec3 {
    let y = Vec3::y() - target * target.y;
    if y.norm() > 1e-6 {
        y.normalize()
    } else {
        (Vec3::z() - target * target.z).normalize()
    }
}

pub fn normalize_patch(
    lsd: &LocalSurfaceDescriptor,
    patch: &Patch,
    mesh: &Mesh,
    n_t: Vec3,
) -> Result<(LocalSurfaceDescriptor, NormalizationContext)> {
    normalize_patch_with(
        lsd,
        patch,
        mesh,
        &NormalizeOptions {
            target: n_t,
            ..Default::default()
        },
    )
}

/// Rotates the mean patch normal onto the target, recenters on the center
/// face's pole, and scales all positions into `[-1, 1]`.
pub fn normalize_patch_with(
    lsd: &LocalSurfaceDescriptor,
    patch: &Patch,
    mesh: &Mesh,
    opts: &NormalizeOptions,
) -> Result<(LocalSurfaceDescriptor, NormalizationContext)> {
    if patch.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if lsd.faces != patch.faces.len() {
        return Err(Error::TopologyMismatch(format!(
            "descriptor has {} faces, patch has {}",
            lsd.faces,
            patch.faces.len()
        )));
    }
    let mut mean = Vec3::zeros();
    for &f in &patch.faces {
        mean += mesh.face_normal(f)?;
    }
    if mean.norm() < 1e-8 {
        return Err(Error::DegenerateAverageNormal);
    }
    let n_bar = mean.normalize();
    let target = opts.target.normalize();
    let mut rotation = rodrigues(&n_bar, &target);

    if opts.align_axis {
        let row = lsd.spatial(0);
        let axis = rotation * Vec3::new(row[3], row[4], row[5]);
        let flat = axis - target * axis.dot(&target);
        if flat.norm() >= PARALLEL_TOL {
            let a = flat.normalize();
            let u = reference_direction(&target);
            rotation = spin_about(&target, a.dot(&u), a.cross(&u).dot(&target)) * rotation;
        }
    }

    let row0 = lsd.spatial(0);
    let c0 = Vec3::new(row0[0], row0[1], row0[2]);
    let mut s = Vec::with_capacity(lsd.s.len());
    let mut m_v = 0.0f64;
    for row in lsd.s.chunks(SPATIAL_WIDTH) {
        for (k, p) in row.chunks(3).enumerate() {
            let p = Vec3::new(p[0], p[1], p[2]);
            let q = if k == 1 { rotation * p } else { rotation * (p - c0) };
            if k != 1 {
                m_v = m_v.max(q.amax());
            }
            s.extend_from_slice(q.as_slice());
        }
    }
    if m_v <= 0.0 {
        return Err(Error::ZeroAreaFace(patch.center_face));
    }
    for row in s.chunks_mut(SPATIAL_WIDTH) {
        for (k, p) in row.chunks_mut(3).enumerate() {
            if k != 1 {
                p.iter_mut().for_each(|x| *x /= m_v);
            }
        }
    }

    let mut g = Vec::with_capacity(lsd.g.len());
    for n in lsd.g.chunks(3) {
        let q = rotation * Vec3::new(n[0], n[1], n[2]);
        g.extend_from_slice(q.as_slice());
    }

    let ctx = NormalizationContext {
        rotation,
        inverse_rotation: rotation.transpose(),
        c0,
        m_v,
    };
    Ok((
        LocalSurfaceDescriptor {
            faces: lsd.faces,
            side: lsd.side,
            g,
            s,
            valid: lsd.valid.clone(),
        },
        ctx,
    ))
}

/// Maps normalized per-face normals and vertex triples back to world space.
pub fn denormalize(
    normals: &[Vec3],
    vertices: &[[Vec3; 3]],
    ctx: &NormalizationContext,
) -> (Vec<Vec3>, Vec<[Vec3; 3]>) {
    let n = normals.iter().map(|n| ctx.world_dir(n)).collect();
    let v = vertices
        .iter()
        .map(|t| t.map(|p| ctx.world_point(&p)))
        .collect();
    (n, v)
}
