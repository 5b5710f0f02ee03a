#![allow(dead_code)]

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use surfaceformer::mesh::{Mesh, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    q.to_rotation_matrix().into_inner()
}

pub fn jitter(mesh: &Mesh, sigma: f64, seed: u64) -> Mesh {
    let mut r = rng(seed);
    let verts = mesh
        .vertices()
        .iter()
        .map(|v| v + Vector3::from_fn(|_, _| sigma * r.sample::<f64, _>(StandardNormal)))
        .collect();
    mesh.with_vertices(verts).unwrap()
}

pub fn transform(mesh: &Mesh, rot: &Matrix3<f64>, scale: f64, shift: &Vec3) -> Mesh {
    let verts = mesh.vertices().iter().map(|v| rot * v * scale + shift).collect();
    mesh.with_vertices(verts).unwrap()
}

/// Zig-zag strip: creases along x at each profile knot, width `w` along y.
pub fn folded_strip(profile: &[(f64, f64)], w: f64) -> Mesh {
    let mut verts = Vec::new();
    for &(x, z) in profile {
        verts.push(Vec3::new(x, 0.0, z));
        verts.push(Vec3::new(x, w, z));
    }
    let mut faces = Vec::new();
    for k in 0..profile.len() - 1 {
        let (a, b, c, d) = (2 * k, 2 * k + 2, 2 * k + 3, 2 * k + 1);
        faces.push([a, b, c]);
        faces.push([a, c, d]);
    }
    Mesh::new(verts, faces).unwrap()
}

/// Fine-step surface walker: advance by `h`, and when a step leaves the
/// current face, hop to whichever face shares the crossed edge, rotating the
/// heading by the minimal rotation between the two face normals.
pub fn brute_walk(mesh: &Mesh, face: usize, start: Vec3, dir: Vec3, r: f64, h: f64) -> Option<(Vec3, usize)> {
    let (mut f, mut p, mut d) = (face, start, dir.normalize());
    let mut travelled = 0.0;
    while travelled < r {
        let step = h.min(r - travelled);
        let q = p + d * step;
        let n = mesh.face_normal(f).unwrap();
        let tri = mesh.faces()[f];
        let pos = mesh.face_vertices(f);
        let crossed = (0..3).find(|&k| {
            let m = (pos[(k + 1) % 3] - pos[k]).cross(&n);
            (q - pos[k]).dot(&m) > 0.0
        });
        travelled += step;
        let Some(k) = crossed else {
            p = q;
            continue;
        };
        let (a, b) = (tri[k], tri[(k + 1) % 3]);
        let g = (0..mesh.face_count()).find(|&g| g != f && mesh.faces()[g].contains(&a) && mesh.faces()[g].contains(&b))?;
        // Rotate about the edge so that A's outward side lands on B's
        // interior; pick the sign of B's normal that makes this true, as the
        // two faces may be wound inconsistently.
        let ng = mesh.face_normal(g).unwrap();
        let out = (pos[(k + 1) % 3] - pos[k]).cross(&n);
        let opp = mesh.faces()[g].iter().copied().find(|&v| v != a && v != b).unwrap();
        let into_b = mesh.vertices()[opp] - pos[k];
        let rot = [ng, -ng]
            .iter()
            .map(|t| Rotation3::rotation_between(&n, t).unwrap_or_else(Rotation3::identity))
            .find(|rot| (rot * out).dot(&into_b) > 0.0)
            .unwrap();
        d = rot * d;
        d = (d - ng * d.dot(&ng)).normalize();
        p = q - ng * (q - pos[k]).dot(&ng);
        f = g;
    }
    Some((p, f))
}
