//! Procedural test meshes. All closed shapes are wound outward.

use std::collections::HashMap;

use super::{Mesh, Vec3};

pub fn icosahedron() -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&p| Vec3::from(p).normalize())
    .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::new(vertices, faces).expect("valid icosahedron")
}

/// Unit-radius sphere from `levels` rounds of 4-to-1 subdivision of the
/// icosahedron: `20 * 4^levels` faces.
pub fn icosphere(levels: u32) -> Mesh {
    let base = icosahedron();
    let mut vertices = base.vertices().to_vec();
    let mut faces = base.faces().to_vec();
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vs: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vs.push(((vs[a] + vs[b]) * 0.5).normalize());
                vs.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(vertices, faces).expect("valid icosphere")
}

/// `n × n` grid of squares with side `spacing` in the z = 0 plane, each
/// split along its (0,0)-(1,1) diagonal; normals point along +z.
pub fn planar_grid(n: usize, spacing: f64) -> Mesh {
    let stride = n + 1;
    let mut vertices = Vec::with_capacity(stride * stride);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let mut faces = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = j * stride + i;
            let (v10, v01, v11) = (v00 + 1, v00 + stride, v00 + stride + 1);
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    Mesh::new(vertices, faces).expect("valid grid")
}

/// Axis-aligned unit cube `[0,1]^3` with each side split into `n × n`
/// squares of two triangles; vertices on shared edges are welded.
pub fn cube_grid(n: usize) -> Mesh {
    let n = n.max(1);
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // (normal axis, side, u axis, v axis) with u × v pointing outward.
    let sides = [
        (0, 1, 1, 2),
        (0, 0, 2, 1),
        (1, 1, 2, 0),
        (1, 0, 0, 2),
        (2, 1, 0, 1),
        (2, 0, 1, 0),
    ];
    for &(axis, side, u, v) in &sides {
        let mut id = |i: usize, j: usize| {
            let mut key = [0i64; 3];
            key[axis] = side * n as i64;
            key[u] = i as i64;
            key[v] = j as i64;
            *index.entry(key).or_insert_with(|| {
                vertices.push(Vec3::new(key[0] as f64, key[1] as f64, key[2] as f64) / n as f64);
                vertices.len() - 1
            })
        };
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
    }
    Mesh::new(vertices, faces).expect("valid cube")
}

/// The 12-triangle unit cube.
pub fn cube() -> Mesh {
    cube_grid(1)
}

/// Regular tetrahedron with unit edges.
pub fn tetrahedron() -> Mesh {
    let s = 0.5 / 2f64.sqrt();
    let vertices = vec![
        Vec3::new(s, s, s),
        Vec3::new(s, -s, -s),
        Vec3::new(-s, s, -s),
        Vec3::new(-s, -s, s),
    ];
    Mesh::new(vertices, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]).expect("valid tetrahedron")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed_area_sum(m: &Mesh) -> (Vec3, f64) {
        let mut sum = Vec3::zeros();
        let mut total = 0.0;
        for f in 0..m.face_count() {
            let fr = m.face_frame(f).unwrap();
            sum += fr.normal * fr.area;
            total += fr.area;
        }
        (sum, total)
    }

    fn outward(m: &Mesh, center: Vec3) -> bool {
        (0..m.face_count()).all(|f| {
            let fr = m.face_frame(f).unwrap();
            fr.normal.dot(&(fr.center - center)) > 0.0
        })
    }

    #[test]
    fn closed_shapes_are_closed_and_outward() {
        for (m, c) in [
            (icosphere(2), Vec3::zeros()),
            (cube_grid(3), Vec3::repeat(0.5)),
            (tetrahedron(), Vec3::zeros()),
        ] {
            assert!((0..m.face_count()).all(|f| m.face_adjacency(f).len() == 3));
            let (sum, total) = signed_area_sum(&m);
            assert!(sum.norm() < 1e-9 * total);
            assert!(outward(&m, c));
        }
    }

    #[test]
    fn sizes() {
        assert_eq!(icosahedron().face_count(), 20);
        assert_eq!(icosphere(3).face_count(), 1280);
        assert_eq!(icosphere(3).vertex_count(), 642);
        assert_eq!(planar_grid(10, 1.0).face_count(), 200);
        assert_eq!(cube().vertex_count(), 8);
        assert_eq!(cube().face_count(), 12);
        assert_eq!(cube_grid(4).vertex_count(), 6 * 16 + 2);
    }

    #[test]
    fn tetrahedron_center_distances_agree() {
        let m = tetrahedron();
        let v = m.vertices();
        // Centroids of faces {0,1,2} and {0,3,1}.
        let c0 = (v[0] + v[1] + v[2]) / 3.0;
        let c1 = (v[0] + v[3] + v[1]) / 3.0;
        let expect = (c0 - c1).norm();
        for i in 0..4 {
            for &j in m.face_adjacency(i) {
                let d = (m.face_center(i) - m.face_center(j)).norm();
                assert!((d - expect).abs() < 1e-15);
            }
        }
        assert!((m.average_adjacent_center_distance().unwrap() - expect).abs() < 1e-15);
        assert!((m.average_edge_length().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cube_edge_length_by_enumeration() {
        let m = cube();
        let mut set = std::collections::BTreeSet::new();
        for f in m.faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        assert_eq!(set.len(), 18);
        let lens: Vec<f64> = set
            .iter()
            .map(|&(a, b)| (m.vertices()[a] - m.vertices()[b]).norm())
            .collect();
        assert_eq!(lens.iter().filter(|&&l| (l - 1.0).abs() < 1e-12).count(), 12);
        assert_eq!(lens.iter().filter(|&&l| (l - 2f64.sqrt()).abs() < 1e-12).count(), 6);
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        let expect = (12.0 + 6.0 * 2f64.sqrt()) / 18.0;
        assert!((mean - expect).abs() < 1e-15);
        assert!((m.average_edge_length().unwrap() - expect).abs() < 1e-15);
    }
}
