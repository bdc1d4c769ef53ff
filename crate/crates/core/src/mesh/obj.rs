//! Wavefront OBJ subset: `v x y z` and `f i j k ...` records.
//!
//! Texture and normal indices (`f 1/2/3`) are accepted and ignored, polygons are
//! fan-triangulated, and every other record type is skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_obj(BufReader::new(file), path)
}

/// Parses OBJ text. `origin` is only used in error messages.
pub fn parse_obj(reader: impl BufRead, origin: impl AsRef<Path>) -> Result<Mesh> {
    let origin = origin.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(lineno, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 || !coords.iter().all(|c| c.is_finite()) {
                    return Err(parse_err(lineno, "vertex needs three finite coordinates".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tokens {
                    let idx = t.split('/').next().unwrap_or("");
                    let raw: i64 = idx
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad face index {t:?}")))?;
                    let resolved = match raw {
                        0 => return Err(parse_err(lineno, "face index 0 is invalid".into())),
                        r if r > 0 => r - 1,
                        r => vertices.len() as i64 + r,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(parse_err(
                            lineno,
                            format!(
                                "face index {raw} out of range ({} vertices defined)",
                                vertices.len()
                            ),
                        ));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(parse_err(lineno, "face needs at least three vertices".into()));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err(Error::Invalid(format!(
            "{}: OBJ needs at least one vertex and one face",
            origin.display()
        )));
    }
    Mesh::new(vertices, faces)
}

/// Writes OBJ text with six decimal places.
pub fn write_obj(mesh: &Mesh, mut out: impl Write) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(out, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if mesh.vertices.is_empty() || mesh.faces.is_empty() {
        return Err(Error::Invalid("cannot save a mesh without vertices or faces".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_obj(mesh, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn parse(s: &str) -> Result<Mesh> {
        parse_obj(s.as_bytes(), "test.obj")
    }

    #[test]
    fn minimal_triangle() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3").unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn slashed_indices_and_comments() {
        let m = parse("# head\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2//1 3/1 # tri\n")
            .unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let err = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_vertex_reports_line() {
        let err = parse("v 0 0\nf 1 1 1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_obj("/nonexistent/nope.obj"), Err(Error::Io { .. })));
    }

    #[test]
    fn empty_mesh_cannot_be_saved() {
        let dir = tempfile::tempdir().unwrap();
        let empty = Mesh { vertices: vec![], faces: vec![] };
        assert!(save_obj(&empty, dir.path().join("e.obj")).is_err());
    }

    #[test]
    fn round_trip_random_mesh() {
        let mut rng = crate::seed::rng(3);
        let vertices: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let faces: Vec<[usize; 3]> = (0..1500)
            .map(|_| [rng.random_range(0..1000), rng.random_range(0..1000), rng.random_range(0..1000)])
            .collect();
        let mesh = Mesh::new(vertices, faces).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        save_obj(&mesh, &path).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(back.faces, mesh.faces);
        let max_err = back
            .vertices
            .iter()
            .zip(&mesh.vertices)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "max error {max_err}");
    }

    #[test]
    fn single_triangle_round_trip() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3").unwrap();
        let mut buf = Vec::new();
        write_obj(&m, &mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
