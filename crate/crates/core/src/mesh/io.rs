use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

enum Format {
    Obj,
    Off,
}

fn format_of(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "obj" => Ok(Format::Obj),
        "off" => Ok(Format::Off),
        _ => Err(Error::UnsupportedFormat(ext)),
    }
}

/// Loads an `.obj` or `.off` file, keeping vertex and face order.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let format = format_of(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Obj => parse_obj(&text),
        Format::Off => parse_off(&text),
    }
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match format_of(path)? {
        Format::Obj => write_obj(mesh),
        Format::Off => write_off(mesh),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: "missing coordinate".into(),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid number `{tok}`"),
    })
}

fn parse_int(tok: &str, line: usize) -> Result<i64> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid index `{tok}`"),
    })
}

/// Parses `v` and `f` records. Face corners may use `i/t/n` syntax and
/// negative (relative) indices; everything else is ignored.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), line)?;
                let y = parse_f64(toks.next(), line)?;
                let z = parse_f64(toks.next(), line)?;
                vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let corners: Vec<&str> = toks.collect();
                if corners.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("face has {} corners, expected 3", corners.len()),
                    });
                }
                let face = faces.len();
                let mut tri = [0usize; 3];
                for (slot, c) in tri.iter_mut().zip(&corners) {
                    let idx = parse_int(c.split('/').next().unwrap_or(""), line)?;
                    let resolved = if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        idx - 1
                    };
                    if idx == 0 || resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(Error::Index {
                            face,
                            index: idx,
                            count: vertices.len(),
                        });
                    }
                    *slot = resolved as usize;
                }
                faces.push(tri);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let eof = |what: &str| Error::Parse {
        line: 0,
        msg: format!("unexpected end of file, expected {what}"),
    };

    let (hline, header) = lines.next().ok_or_else(|| eof("OFF header"))?;
    let mut counts_inline = None;
    if header != "OFF" {
        match header.strip_prefix("OFF") {
            Some(rest) if rest.starts_with(char::is_whitespace) => counts_inline = Some(rest.trim()),
            _ => {
                return Err(Error::Parse {
                    line: hline,
                    msg: "missing OFF header".into(),
                })
            }
        }
    }
    let (cline, counts) = match counts_inline {
        Some(c) => (hline, c),
        None => lines.next().ok_or_else(|| eof("counts line"))?,
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line: cline,
                msg: format!("invalid count `{t}`"),
            })
        })
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(Error::Parse {
            line: cline,
            msg: "counts line needs vertex and face counts".into(),
        });
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = lines.next().ok_or_else(|| eof("vertex line"))?;
        let mut t = l.split_whitespace();
        let x = parse_f64(t.next(), line)?;
        let y = parse_f64(t.next(), line)?;
        let z = parse_f64(t.next(), line)?;
        vertices.push(Vec3::new(x, y, z));
    }

    let mut faces = Vec::with_capacity(nf);
    for face in 0..nf {
        let (line, l) = lines.next().ok_or_else(|| eof("face line"))?;
        let toks: Vec<i64> = l
            .split_whitespace()
            .map(|t| parse_int(t, line))
            .collect::<Result<_>>()?;
        if toks.first() != Some(&3) || toks.len() < 4 {
            return Err(Error::Parse {
                line,
                msg: "only triangular faces are supported".into(),
            });
        }
        let mut tri = [0usize; 3];
        for (slot, &idx) in tri.iter_mut().zip(&toks[1..4]) {
            if idx < 0 || idx >= nv as i64 {
                return Err(Error::Index {
                    face,
                    index: idx,
                    count: nv,
                });
            }
            *slot = idx as usize;
        }
        faces.push(tri);
    }
    Mesh::new(vertices, faces)
}

// `{}` on f64 prints the shortest string that round-trips exactly.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write_off(mesh: &Mesh) -> String {
    let mut out = String::from("OFF\n");
    let _ = writeln!(out, "{} {} 0", mesh.vertex_count(), mesh.face_count());
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

    #[test]
    fn unit_cube_obj() {
        let m = parse_obj(CUBE).unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (8, 12));
        for f in 0..12 {
            assert_eq!(m.face_adjacency(f).len(), 3);
        }
    }

    #[test]
    fn repeated_index_is_degenerate() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n";
        assert!(matches!(parse_obj(text), Err(Error::DegenerateFace { face: 0 })));
    }

    #[test]
    fn single_triangle_off() {
        let m = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.face_count(), 1);
        assert!(m.face_adjacency(0).is_empty());
    }

    #[test]
    fn obj_ignores_attributes_and_accepts_slashes() {
        let text = "# comment\nmtllib a.mtl\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2//1 -1\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n"),
            Err(Error::Parse { line: 5, .. })
        ));
        assert!(matches!(parse_obj("v 0 zero 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_obj("v 0 0 0\nv 1 0 0\nf 1 2 3\n"),
            Err(Error::Index { index: 3, count: 2, .. })
        ));
        assert!(matches!(
            parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2 2\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n"),
            Err(Error::Index { index: 5, .. })
        ));
        assert!(matches!(parse_off("PLY\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let m = parse_obj(CUBE).unwrap();
        let moved: Vec<Vec3> = m
            .vertices()
            .iter()
            .map(|v| v * std::f64::consts::PI + Vec3::new(1e-7, -3.25e5, 0.1))
            .collect();
        let m = m.with_vertices(moved).unwrap();
        assert_eq!(parse_obj(&write_obj(&m)).unwrap(), m);
        assert_eq!(parse_off(&write_off(&m)).unwrap(), m);
    }

    #[test]
    fn unknown_extension() {
        assert!(matches!(
            load_mesh("mesh.ply"),
            Err(Error::UnsupportedFormat(e)) if e == "ply"
        ));
    }
}
