//! ASCII OBJ and PLY meshes with an integer material id per face.
//!
//! OBJ carries materials as `usemtl <id>` statements applying to the faces
//! that follow; PLY as an integer `material` property on the face element.
//! Polygons are fan-triangulated.

use std::fmt::Write as _;
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads an `.obj` or `.ply` mesh, returning per-face material ids.
pub fn read_mesh(path: &Path) -> Result<(TriMesh, Vec<u8>)> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(ext) if ext == "obj" => read_obj(path),
        Some(ext) if ext == "ply" => read_ply(path),
        _ => Err(Error::invalid(format!(
            "{}: unsupported mesh format (expected .obj or .ply)",
            path.display()
        ))),
    }
}

pub fn read_obj(path: &Path) -> Result<(TriMesh, Vec<u8>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(path, &text)
}

fn parse_obj(path: &Path, text: &str) -> Result<(TriMesh, Vec<u8>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut materials = Vec::new();
    let mut current = 0u8;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            None => {}
            Some("v") => {
                let xs: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(path, lineno, format!("bad vertex: {e}")))?;
                if xs.len() != 3 {
                    return Err(parse_err(path, lineno, "vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(xs[0], xs[1], xs[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let k: i64 = first
                            .parse()
                            .map_err(|_| parse_err(path, lineno, format!("bad face index {t:?}")))?;
                        let resolved = if k < 0 { vertices.len() as i64 + k } else { k - 1 };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(parse_err(path, lineno, format!("face index {k} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(path, lineno, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                    materials.push(current);
                }
            }
            Some("usemtl") => {
                let name = tok.next().unwrap_or("");
                current = name
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("material must be an integer id, got {name:?}")))?;
            }
            // normals, texture coordinates, groups and the like carry nothing we need
            Some(_) => {}
        }
    }
    Ok((TriMesh::new(vertices, faces)?, materials))
}

pub fn read_ply(path: &Path) -> Result<(TriMesh, Vec<u8>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &text)
}

fn parse_ply(path: &Path, text: &str) -> Result<(TriMesh, Vec<u8>)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut face_props: Vec<String> = Vec::new();
    let mut current: Option<&str> = None;
    for (i, line) in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(path, i + 1, "only ASCII PLY is supported"));
                }
            }
            Some("element") => {
                let name = tok.next().unwrap_or("");
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, i + 1, "bad element count"))?;
                match name {
                    "vertex" => {
                        n_vertices = count;
                        current = Some("vertex");
                    }
                    "face" => {
                        n_faces = count;
                        current = Some("face");
                    }
                    _ => return Err(parse_err(path, i + 1, format!("unsupported element {name:?}"))),
                }
            }
            Some("property") => {
                let rest: Vec<&str> = tok.collect();
                let name = rest.last().copied().unwrap_or("").to_string();
                match current {
                    Some("vertex") => vertex_props.push(name),
                    Some("face") => face_props.push(name),
                    _ => return Err(parse_err(path, i + 1, "property outside an element")),
                }
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let pos = |name: &str| vertex_props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (pos("x"), pos("y"), pos("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(path, 1, "vertex element lacks x/y/z")),
    };
    let list_pos = face_props
        .iter()
        .position(|p| p == "vertex_indices" || p == "vertex_index")
        .ok_or_else(|| parse_err(path, 1, "face element lacks vertex_indices"))?;
    let mat_pos = face_props.iter().position(|p| p == "material");

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (i, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "unexpected end of vertex data"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, i + 1, format!("bad vertex: {e}")))?;
        if vals.len() < vertex_props.len() {
            return Err(parse_err(path, i + 1, "too few vertex values"));
        }
        vertices.push(Vec3::new(vals[xi], vals[yi], vals[zi]));
    }
    let mut faces = Vec::with_capacity(n_faces);
    let mut materials = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (i, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "unexpected end of face data"))?;
        let lineno = i + 1;
        let vals: Vec<i64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, lineno, format!("bad face: {e}")))?;
        // scalar properties before the list occupy one slot each
        let mut cursor = 0usize;
        let mut idx = Vec::new();
        let mut material = 0u8;
        for (p, _) in face_props.iter().enumerate() {
            if p == list_pos {
                let n = *vals.get(cursor).ok_or_else(|| parse_err(path, lineno, "truncated face"))? as usize;
                let slice = vals
                    .get(cursor + 1..cursor + 1 + n)
                    .ok_or_else(|| parse_err(path, lineno, "truncated face index list"))?;
                idx = slice.iter().map(|&k| k as usize).collect();
                cursor += 1 + n;
            } else {
                let v = *vals.get(cursor).ok_or_else(|| parse_err(path, lineno, "truncated face"))?;
                if Some(p) == mat_pos {
                    material = u8::try_from(v)
                        .map_err(|_| parse_err(path, lineno, format!("material {v} out of range")))?;
                }
                cursor += 1;
            }
        }
        if idx.len() < 3 || idx.iter().any(|&k| k >= vertices.len()) {
            return Err(parse_err(path, lineno, "invalid face index list"));
        }
        for k in 1..idx.len() - 1 {
            faces.push([idx[0], idx[k], idx[k + 1]]);
            materials.push(material);
        }
    }
    Ok((TriMesh::new(vertices, faces)?, materials))
}

/// Writes an OBJ with `usemtl <id>` groups; `materials` must have one entry per face.
pub fn write_obj(path: &Path, mesh: &TriMesh, materials: &[u8]) -> Result<()> {
    if materials.len() != mesh.faces.len() {
        return Err(Error::invalid("one material id per face required"));
    }
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    let mut current: Option<u8> = None;
    for (f, m) in mesh.faces.iter().zip(materials) {
        if current != Some(*m) {
            let _ = writeln!(out, "usemtl {m}");
            current = Some(*m);
        }
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Primitive;

    #[test]
    fn obj_round_trip_with_materials() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("box.obj");
        let mesh = Primitive::Box {
            size: Vec3::new(0.1, 0.2, 0.3),
        }
        .mesh();
        let mats: Vec<u8> = (0..mesh.faces.len()).map(|f| (f / 4) as u8).collect();
        write_obj(&p, &mesh, &mats).unwrap();
        let (back, back_mats) = read_mesh(&p).unwrap();
        assert_eq!(back, mesh);
        assert_eq!(back_mats, mats);
    }

    #[test]
    fn obj_quads_are_triangulated() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nusemtl 3\nf 1/1 2/2 3/3 4/4\n";
        let (m, mats) = parse_obj(Path::new("q.obj"), text).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(mats, vec![3, 3]);
    }

    #[test]
    fn obj_errors_carry_line_numbers() {
        let err = parse_obj(Path::new("bad.obj"), "v 0 0 0\nv 1 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_obj(Path::new("bad.obj"), "v 0 0 0\nf 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn ply_with_material_property() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n\
                    element face 2\nproperty list uchar int vertex_indices\nproperty int material\nend_header\n\
                    0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2 4\n3 0 2 3 7\n";
        let (m, mats) = parse_ply(Path::new("t.ply"), text).unwrap();
        assert_eq!(m.faces.len(), 2);
        assert_eq!(mats, vec![4, 7]);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ply_rejects_binary() {
        let text = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(parse_ply(Path::new("b.ply"), text).is_err());
    }
}
