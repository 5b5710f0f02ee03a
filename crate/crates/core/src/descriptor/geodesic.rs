use std::f64::consts::TAU;

use super::PolarFrame;
use crate::mesh::{Mesh, Vec3};

/// Distance to a vertex, relative to the crossed edge's length, below which
/// an edge crossing counts as passing through the vertex.
const GRAZE_TOL: f64 = 1e-9;
const GRAZE_RETRIES: usize = 3;
const PHI_NUDGE: f64 = 1e-7;
const FLAT_TOL: f64 = 1e-12;
const MAX_CROSSINGS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    pub position: Vec3,
    pub host_face: usize,
    pub normal: Vec3,
    pub valid: bool,
}

enum Walk {
    Done(SamplePoint),
    /// Passed through a vertex whose star does not unfold flat.
    Grazed(SamplePoint),
}

/// Endpoint of the surface geodesic of length `r` leaving the pole at polar
/// angle `phi`.
pub fn trace_geodesic(mesh: &Mesh, frame: &PolarFrame, r: f64, phi: f64) -> SamplePoint {
    trace_impl(mesh, frame, r, phi, None)
}

/// As [`trace_geodesic`], also returning the polyline of the final attempt,
/// starting at the pole.
pub fn trace_geodesic_path(mesh: &Mesh, frame: &PolarFrame, r: f64, phi: f64) -> (SamplePoint, Vec<Vec3>) {
    let mut path = Vec::new();
    let s = trace_impl(mesh, frame, r, phi, Some(&mut path));
    (s, path)
}

fn trace_impl(mesh: &Mesh, frame: &PolarFrame, r: f64, phi: f64, mut path: Option<&mut Vec<Vec3>>) -> SamplePoint {
    let mut angle = phi;
    let mut last = None;
    for _ in 0..=GRAZE_RETRIES {
        if let Some(p) = path.as_deref_mut() {
            p.clear();
        }
        match walk(mesh, frame.face_id, frame.pole, frame.direction(angle), frame.normal, r, path.as_deref_mut()) {
            Walk::Done(s) => return s,
            Walk::Grazed(s) => last = Some(s),
        }
        angle += PHI_NUDGE;
    }
    SamplePoint {
        valid: false,
        ..last.expect("at least one attempt")
    }
}

/// Straightest walk of length `r` from `start` on face `face` along the
/// in-plane direction `dir`. Grazing a cone vertex yields an invalid sample.
pub fn trace_from(mesh: &Mesh, face: usize, start: Vec3, dir: Vec3, r: f64) -> SamplePoint {
    let normal = mesh.face_normal_or_zero(face);
    match walk(mesh, face, start, dir, normal, r, None) {
        Walk::Done(s) => s,
        Walk::Grazed(s) => SamplePoint { valid: false, ..s },
    }
}

fn walk(
    mesh: &Mesh,
    face: usize,
    start: Vec3,
    dir: Vec3,
    normal: Vec3,
    r: f64,
    mut path: Option<&mut Vec<Vec3>>,
) -> Walk {
    let mut f = face;
    let mut n = normal;
    let mut p = start;
    let mut d = dir.normalize();
    let mut rem = r;
    let mut entered: Option<usize> = None;
    if let Some(path) = path.as_deref_mut() {
        path.push(p);
    }
    let stop = |position: Vec3, host_face: usize, normal: Vec3, valid: bool| SamplePoint {
        position,
        host_face,
        normal,
        valid,
    };
    if rem <= 0.0 || n == Vec3::zeros() {
        return Walk::Done(stop(p, f, n, n != Vec3::zeros()));
    }

    for _ in 0..MAX_CROSSINGS {
        let tri = mesh.faces()[f];
        let pos = mesh.face_vertices(f);

        let mut exit: Option<(usize, f64, Vec3)> = None;
        for k in 0..3 {
            if entered == Some(k) {
                continue;
            }
            let (e0, e1) = (pos[k], pos[(k + 1) % 3]);
            let m = (e1 - e0).cross(&n);
            let m_len = m.norm();
            if m_len == 0.0 {
                continue;
            }
            let m = m / m_len;
            let den = d.dot(&m);
            if den <= 1e-15 {
                continue;
            }
            let t = ((e0 - p).dot(&m) / den).max(0.0);
            if exit.is_none_or(|(_, best, _)| t < best) {
                exit = Some((k, t, m));
            }
        }
        let Some((k, t, m_out)) = exit else {
            return Walk::Done(stop(p, f, n, false));
        };

        if rem <= t {
            let q = p + d * rem;
            if let Some(path) = path.as_deref_mut() {
                path.push(q);
            }
            return Walk::Done(stop(q, f, n, true));
        }

        let (e0, e1) = (pos[k], pos[(k + 1) % 3]);
        let edge = e1 - e0;
        let s = ((p + d * t - e0).dot(&edge) / edge.norm_squared()).clamp(0.0, 1.0);
        let q = e0 + edge * s;
        rem -= t;
        p = q;
        if let Some(path) = path.as_deref_mut() {
            path.push(q);
        }

        let graze = if s < GRAZE_TOL {
            Some(tri[k])
        } else if s > 1.0 - GRAZE_TOL {
            Some(tri[(k + 1) % 3])
        } else {
            None
        };
        if let Some(v) = graze {
            if !unfolds_flat(mesh, v) {
                return Walk::Grazed(stop(q, f, n, false));
            }
        }

        let Some(g) = mesh.edge_neighbor(f, k) else {
            return Walk::Done(stop(q, f, n, false));
        };
        let ng = mesh.face_normal_or_zero(g);
        if ng == Vec3::zeros() {
            return Walk::Done(stop(q, f, n, false));
        }
        let (a, b) = (tri[k], tri[(k + 1) % 3]);
        let gt = mesh.faces()[g];
        let kk = (0..3)
            .find(|&j| {
                let (x, y) = (gt[j], gt[(j + 1) % 3]);
                (x == a && y == b) || (x == b && y == a)
            })
            .expect("neighbor shares the edge");
        let opp = mesh.vertices()[gt[(kk + 2) % 3]];

        // Unfold: keep the along-edge component, carry the across-edge
        // component into the neighbor's plane.
        let e = edge / edge.norm();
        let mut m_in = opp - e0;
        m_in -= e * m_in.dot(&e);
        let m_in = m_in.normalize();
        d = (e * d.dot(&e) + m_in * d.dot(&m_out)).normalize();

        f = g;
        n = ng;
        entered = Some(kk);
    }
    Walk::Done(stop(p, f, n, false))
}

/// Interior vertices with zero angle defect, and all boundary vertices,
/// have an unambiguous straight continuation.
fn unfolds_flat(mesh: &Mesh, v: usize) -> bool {
    let (sum, interior) = mesh.vertex_angle_sum(v);
    !interior || (sum - TAU).abs() < FLAT_TOL
}
