//! Indexed triangle meshes with edge-derived adjacency and per-face geometry.

mod io;
pub mod primitives;

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub use io::{load_mesh, parse_obj, parse_off, save_mesh, write_obj, write_off};

pub type Vec3 = Vector3<f64>;

/// Triangle mesh. Immutable once built; adjacency is derived on construction.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_adjacency: Vec<Vec<usize>>,
    vertex_faces: Vec<Vec<usize>>,
    /// Per face and local edge `k` (vertices `k`, `k+1`): the lowest-index
    /// other face sharing that edge.
    edge_neighbor: Vec<[Option<usize>; 3]>,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.faces == other.faces
    }
}

/// Center, unit normal and area of one face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceFrame {
    pub face_id: usize,
    pub center: Vec3,
    pub normal: Vec3,
    pub area: f64,
}

impl Mesh {
    /// Validates indices and builds adjacency. Edges shared by three or more
    /// faces are accepted; all faces on such an edge are mutually adjacent.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (f, tri) in faces.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::Index {
                    face: f,
                    index: bad as i64,
                    count: vertices.len(),
                });
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateFace { face: f });
            }
        }

        let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (f, tri) in faces.iter().enumerate() {
            for k in 0..3 {
                edges.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_default().push(f);
            }
        }

        let mut face_adjacency = vec![Vec::new(); faces.len()];
        for incident in edges.values() {
            for &a in incident {
                for &b in incident {
                    if a != b {
                        face_adjacency[a].push(b);
                    }
                }
            }
        }
        for adj in &mut face_adjacency {
            adj.sort_unstable();
            adj.dedup();
        }

        let edge_neighbor = faces
            .iter()
            .enumerate()
            .map(|(f, tri)| {
                let mut out = [None; 3];
                for (k, slot) in out.iter_mut().enumerate() {
                    let incident = &edges[&edge_key(tri[k], tri[(k + 1) % 3])];
                    *slot = incident.iter().copied().filter(|&g| g != f).min();
                }
                out
            })
            .collect();

        let mut vertex_faces = vec![Vec::new(); vertices.len()];
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                vertex_faces[v].push(f);
            }
        }

        Ok(Self {
            vertices,
            faces,
            face_adjacency,
            vertex_faces,
            edge_neighbor,
        })
    }

    /// Same topology, new positions. Adjacency is reused.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::TopologyMismatch(format!(
                "{} positions for {} vertices",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn face_adjacency(&self, f: usize) -> &[usize] {
        &self.face_adjacency[f]
    }

    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    /// The face across local edge `k` of face `f`, if any.
    pub fn edge_neighbor(&self, f: usize, k: usize) -> Option<usize> {
        self.edge_neighbor[f][k]
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_center(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        (a + b + c) / 3.0
    }

    pub fn face_frame(&self, f: usize) -> Result<FaceFrame> {
        let [a, b, c] = self.face_vertices(f);
        let cross = (b - a).cross(&(c - a));
        let longest = (b - a)
            .norm_squared()
            .max((c - b).norm_squared())
            .max((a - c).norm_squared());
        let norm = cross.norm();
        if norm <= 1e-12 * longest {
            return Err(Error::ZeroAreaFace(f));
        }
        Ok(FaceFrame {
            face_id: f,
            center: (a + b + c) / 3.0,
            normal: cross / norm,
            area: 0.5 * norm,
        })
    }

    pub fn face_normal(&self, f: usize) -> Result<Vec3> {
        self.face_frame(f).map(|fr| fr.normal)
    }

    /// Unit normal, or the zero vector for a zero-area face.
    pub fn face_normal_or_zero(&self, f: usize) -> Vec3 {
        self.face_normal(f).unwrap_or_else(|_| Vec3::zeros())
    }

    /// Unique undirected edges as sorted vertex pairs, in ascending order.
    pub fn unique_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|t| (0..3).map(move |k| edge_key(t[k], t[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Mean distance between the centers of edge-adjacent faces, over
    /// unordered pairs.
    pub fn average_adjacent_center_distance(&self) -> Result<f64> {
        let centers: Vec<Vec3> = (0..self.faces.len()).map(|f| self.face_center(f)).collect();
        let (mut total, mut count) = (0.0, 0usize);
        for (i, adj) in self.face_adjacency.iter().enumerate() {
            for &j in adj.iter().filter(|&&j| j > i) {
                total += (centers[i] - centers[j]).norm();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::NoAdjacency);
        }
        Ok(total / count as f64)
    }

    /// Mean length over unique undirected edges.
    pub fn average_edge_length(&self) -> Result<f64> {
        let edges = self.unique_edges();
        if edges.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum();
        Ok(total / edges.len() as f64)
    }

    /// Sum of the interior angles at `v`, and whether every edge around `v`
    /// has a face on both sides.
    pub fn vertex_angle_sum(&self, v: usize) -> (f64, bool) {
        let mut sum = 0.0;
        let mut edge_uses: BTreeMap<usize, usize> = BTreeMap::new();
        for &f in &self.vertex_faces[v] {
            let tri = self.faces[f];
            let k = tri.iter().position(|&x| x == v).expect("incident face");
            let (p, q) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let a = self.vertices[p] - self.vertices[v];
            let b = self.vertices[q] - self.vertices[v];
            sum += a.angle(&b);
            *edge_uses.entry(p).or_default() += 1;
            *edge_uses.entry(q).or_default() += 1;
        }
        let interior = !edge_uses.is_empty() && edge_uses.values().all(|&n| n >= 2);
        (sum, interior)
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}
