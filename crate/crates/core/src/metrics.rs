//! Mean angular normal error and normalized one-sided vertex distance.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};

/// Mean angle in degrees between corresponding unit vectors. Computed as
/// `atan2(|a × b|, a · b)`, which is exactly zero for identical vectors and
/// never leaves `[0, π]`.
pub fn mean_angle_deg(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::TopologyMismatch(format!("{} vs {} normals", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.cross(y).norm().atan2(x.dot(y)))
        .sum();
    Ok((total / a.len() as f64).to_degrees())
}

pub fn face_normals(mesh: &Mesh) -> Vec<Vec3> {
    (0..mesh.face_count()).map(|f| mesh.face_normal_or_zero(f)).collect()
}

/// E_a: mean angle between face normals matched by index.
pub fn metric_ea(denoised: &Mesh, gt: &Mesh) -> Result<f64> {
    if denoised.face_count() != gt.face_count() {
        return Err(Error::TopologyMismatch(format!(
            "{} vs {} faces",
            denoised.face_count(),
            gt.face_count()
        )));
    }
    mean_angle_deg(&face_normals(denoised), &face_normals(gt))
}

/// E_v: mean distance from each denoised vertex to its nearest ground-truth
/// vertex, divided by the ground truth's mean edge length.
pub fn metric_ev(denoised: &Mesh, gt: &Mesh) -> Result<f64> {
    let l_d = gt.average_edge_length()?;
    one_sided_mean_distance(denoised.vertices(), gt.vertices(), l_d)
}

/// `(1 / (|query| * scale)) Σ_q min_r |q − r|`, searched through a uniform
/// grid with cell size `scale`.
pub fn one_sided_mean_distance(query: &[Vec3], reference: &[Vec3], scale: f64) -> Result<f64> {
    if reference.is_empty() || query.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("distance scale {scale} must be positive")));
    }
    let grid = NearestGrid::new(reference, scale);
    let total: f64 = query.iter().map(|q| grid.nearest(q).1).sum();
    Ok(total / (query.len() as f64 * scale))
}

/// Uniform hash grid over a point set for exact nearest-neighbor queries.
pub struct NearestGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> NearestGrid<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let key = Self::key_of(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(key[a]);
                hi[a] = hi[a].max(key[a]);
            }
            cells.entry(key).or_default().push(i);
        }
        Self {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    fn key_of(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    fn visit(&self, key: [i64; 3], q: &Vec3, best: &mut (usize, f64)) {
        if let Some(ids) = self.cells.get(&key) {
            for &i in ids {
                let d = (q - self.points[i]).norm();
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
        }
    }

    /// Index and distance of the nearest point, lowest index on ties.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let c = Self::key_of(q, self.cell);
        // Beyond this Chebyshev radius every occupied cell has been seen.
        let reach = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best = (usize::MAX, f64::INFINITY);
        for r in 0..=reach {
            for dx in -r..=r {
                for dy in -r..=r {
                    let on_shell = dx.abs() == r || dy.abs() == r;
                    if on_shell {
                        for dz in -r..=r {
                            self.visit([c[0] + dx, c[1] + dy, c[2] + dz], q, &mut best);
                        }
                    } else {
                        self.visit([c[0] + dx, c[1] + dy, c[2] - r], q, &mut best);
                        if r > 0 {
                            self.visit([c[0] + dx, c[1] + dy, c[2] + r], q, &mut best);
                        }
                    }
                }
            }
            // Unvisited cells lie at least r cells away from q's cell.
            // Strict comparison keeps lowest-index tie-breaking exact.
            if best.1 < r as f64 * self.cell {
                break;
            }
        }
        best
    }
}
