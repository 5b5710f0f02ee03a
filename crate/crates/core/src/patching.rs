//! Overlapping fixed-size patches grown by k-rings around successive centers.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub center_face: usize,
    /// Center first, then ring by ring.
    pub faces: Vec<usize>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

/// Grows patches of at most `t_f` faces until every face is covered.
pub fn generate_patches(mesh: &Mesh, t_f: usize) -> Result<Vec<Patch>> {
    if mesh.face_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    if t_f == 0 {
        return Err(Error::InvalidArgument("patch size must be at least 1".into()));
    }
    let centers: Vec<Vec3> = (0..mesh.face_count()).map(|f| mesh.face_center(f)).collect();
    let mut grower = RingGrower::new(mesh.face_count());
    let mut visited = vec![false; mesh.face_count()];
    let mut remaining = mesh.face_count();
    let mut patches = Vec::new();
    let mut center = 0;
    loop {
        let faces = grower.grow(mesh, &centers, center, t_f);
        for &f in &faces {
            if !visited[f] {
                visited[f] = true;
                remaining -= 1;
            }
        }
        patches.push(Patch {
            center_face: center,
            faces,
        });
        if remaining == 0 {
            break;
        }
        let from = centers[center];
        center = (0..mesh.face_count())
            .filter(|&f| !visited[f])
            .min_by(|&a, &b| {
                let da = (centers[a] - from).norm_squared();
                let db = (centers[b] - from).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("an unvisited face remains");
    }
    Ok(patches)
}

/// The face list of a single patch centered on `center`.
pub fn grow_patch(mesh: &Mesh, center: usize, t_f: usize) -> Result<Patch> {
    if center >= mesh.face_count() {
        return Err(Error::InvalidArgument(format!(
            "face {center} out of range for {} faces",
            mesh.face_count()
        )));
    }
    let centers: Vec<Vec3> = (0..mesh.face_count()).map(|f| mesh.face_center(f)).collect();
    let faces = RingGrower::new(mesh.face_count()).grow(mesh, &centers, center, t_f.max(1));
    Ok(Patch {
        center_face: center,
        faces,
    })
}

/// Membership stamps, reused across patches to avoid clearing a set per patch.
struct RingGrower {
    stamp: Vec<u32>,
    current: u32,
}

impl RingGrower {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            current: 0,
        }
    }

    fn grow(&mut self, mesh: &Mesh, centers: &[Vec3], center: usize, t_f: usize) -> Vec<usize> {
        self.current += 1;
        let tag = self.current;
        let pole = centers[center];
        let mut faces = vec![center];
        self.stamp[center] = tag;
        let mut ring_start = 0;
        while faces.len() < t_f {
            let mut ring = Vec::new();
            for &f in &faces[ring_start..] {
                for &g in mesh.face_adjacency(f) {
                    if self.stamp[g] != tag {
                        self.stamp[g] = tag;
                        ring.push(g);
                    }
                }
            }
            if ring.is_empty() {
                break;
            }
            ring.sort_by(|&a, &b| {
                let da = (centers[a] - pole).norm_squared();
                let db = (centers[b] - pole).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            });
            ring.truncate(t_f - faces.len());
            ring_start = faces.len();
            faces.extend(ring);
        }
        faces
    }
}
