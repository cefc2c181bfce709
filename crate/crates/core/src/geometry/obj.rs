//! Minimal OBJ reader: vertex positions and triangular faces only.

use std::path::Path;

use nalgebra::Point3;

use super::{MeshError, TriMesh};

/// Loads a triangle mesh from an OBJ file.
///
/// Only `v` and `f` records are interpreted; normals, texture coordinates,
/// groups, and materials are ignored. Faces with more than three vertices are
/// rejected rather than triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh, MeshError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_obj(&text, path)
}

fn parse_obj(text: &str, path: &Path) -> Result<TriMesh, MeshError> {
    let err = |line: usize, message: String| MeshError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        match keyword {
            "v" => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() != 3 {
                    return Err(err(
                        line_no,
                        format!("vertex has {} coordinates, expected 3", coords.len()),
                    ));
                }
                let mut v = [0.0f64; 3];
                for (k, tok) in coords.iter().enumerate() {
                    v[k] = tok
                        .parse()
                        .map_err(|_| err(line_no, format!("invalid coordinate {tok:?}")))?;
                }
                vertices.push(Point3::new(v[0], v[1], v[2]));
            }
            "f" => {
                let corners: Vec<&str> = tokens.collect();
                if corners.len() != 3 {
                    return Err(err(
                        line_no,
                        format!(
                            "face has {} vertices; only triangles are supported",
                            corners.len()
                        ),
                    ));
                }
                let mut f = [0usize; 3];
                for (k, tok) in corners.iter().enumerate() {
                    let index_part = tok.split('/').next().unwrap_or("");
                    let idx: i64 = index_part
                        .parse()
                        .map_err(|_| err(line_no, format!("invalid face index {tok:?}")))?;
                    if idx < 1 {
                        return Err(err(
                            line_no,
                            format!("face index {idx} is not positive; indices are 1-based"),
                        ));
                    }
                    f[k] = (idx - 1) as usize;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn load_str(text: &str) -> Result<TriMesh, MeshError> {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(text.as_bytes()).unwrap();
        load_mesh(file.path())
    }

    fn fixture(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures/meshes")
            .join(name)
    }

    #[test]
    fn loads_unit_cube_fixture() {
        let mesh = load_mesh(fixture("unit_cube.obj")).unwrap();
        assert_eq!(mesh.vertices().len(), 8);
        assert_eq!(mesh.faces().len(), 12);
        assert!(mesh.is_watertight());
    }

    #[test]
    fn loads_all_shipped_fixtures_watertight() {
        for name in [
            "unit_cube.obj",
            "icosphere1.obj",
            "icosphere2.obj",
            "icosphere3.obj",
            "box_large.obj",
            "cylinder.obj",
        ] {
            let mesh = load_mesh(fixture(name)).unwrap();
            assert!(mesh.is_watertight(), "{name} should be watertight");
        }
    }

    #[test]
    fn face_index_out_of_range() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 99\n";
        match load_str(text).unwrap_err() {
            MeshError::IndexOutOfRange { index, .. } => assert_eq!(index, 98),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn quads_are_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        match load_str(text).unwrap_err() {
            MeshError::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("triangles"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn slash_forms_and_ignored_records_parse() {
        let text = "o tri\nvn 0 0 1\nvt 0 0\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n\
                    s off\nf 1/1 2/1 3/1\nf 1//1 2//1 4//1\nf 1/1/1 3/1/1 4/1/1\nf 2 3 4\n";
        let mesh = load_str(text).unwrap();
        assert_eq!(mesh.vertices().len(), 4);
        assert_eq!(mesh.faces().len(), 4);
    }

    #[test]
    fn malformed_coordinate_is_reported_with_line() {
        let text = "v 0 0 zero\n";
        match load_str(text).unwrap_err() {
            MeshError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_mesh("/nonexistent/mesh.obj"),
            Err(MeshError::Io { .. })
        ));
    }
}
