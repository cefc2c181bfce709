//! Triangle meshes and the geometric queries the synthesis pipeline needs.

pub mod hull;
pub mod obj;
pub mod sample;
pub mod sdf;

use std::collections::HashMap;
use std::path::PathBuf;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::transform::RigidTransform;

pub use hull::{convex_hull, hull_of_points};
pub use obj::load_mesh;
pub use sample::{sample_surface, SurfaceSample};
pub use sdf::{parity_inside_brute, unsigned_distance_brute, DistanceQuery, MeshSdf};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("vertex {vertex} has a non-finite coordinate")]
    NonFinite { vertex: usize },
    #[error("mesh has {} zero-area faces: {faces:?}", faces.len())]
    DegenerateFaces { faces: Vec<usize> },
    #[error("mesh has no {0}")]
    Empty(&'static str),
    #[error("mesh is not watertight; volume queries are undefined, use area_centroid instead")]
    NotWatertight,
    #[error("mesh encloses no volume")]
    ZeroVolume,
    #[error("hull input is degenerate: {0}")]
    DegenerateHull(String),
    #[error("sample count must be at least 1")]
    EmptySampleRequest,
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from((self.min.coords + self.max.coords) * 0.5)
    }

    pub fn longest_edge(&self) -> f64 {
        let e = self.extents();
        e.x.max(e.y).max(e.z)
    }

    pub fn diagonal(&self) -> f64 {
        self.extents().norm()
    }
}

/// An indexed triangle mesh with invariants established at construction.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    watertight: bool,
}

impl TriMesh {
    /// Validates indices, coordinates, and face areas, and computes the
    /// watertightness flag (every undirected edge shared by exactly two
    /// consistently wound faces).
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if vertices.is_empty() {
            return Err(MeshError::Empty("vertices"));
        }
        if faces.is_empty() {
            return Err(MeshError::Empty("faces"));
        }
        for (vi, v) in vertices.iter().enumerate() {
            if !v.coords.iter().all(|c| c.is_finite()) {
                return Err(MeshError::NonFinite { vertex: vi });
            }
        }
        for (fi, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: idx,
                        vertex_count: vertices.len(),
                    });
                }
            }
        }
        let mut degenerate = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            let a = vertices[f[0]];
            let b = vertices[f[1]];
            let c = vertices[f[2]];
            if (b - a).cross(&(c - a)).norm() <= 0.0 {
                degenerate.push(fi);
            }
        }
        if !degenerate.is_empty() {
            return Err(MeshError::DegenerateFaces { faces: degenerate });
        }
        let watertight = edges_closed(&faces);
        Ok(Self {
            vertices,
            faces,
            watertight,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn face_vertices(&self, face: usize) -> [Point3<f64>; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// Unit normal of a face, oriented by its winding.
    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_vertices(face);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_vertices(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn aabb(&self) -> Aabb {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        Aabb { min, max }
    }

    /// Radius of the smallest sphere about `center` containing every vertex.
    pub fn bounding_radius_about(&self, center: &Point3<f64>) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v - center).norm())
            .fold(0.0, f64::max)
    }

    /// The same mesh expressed in another frame.
    pub fn transformed(&self, pose: &RigidTransform) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| pose.transform_point(v))
                .collect(),
            faces: self.faces.clone(),
            watertight: self.watertight,
        }
    }

    /// Signed enclosed volume magnitude via the divergence theorem.
    pub fn volume(&self) -> Result<f64, MeshError> {
        if !self.watertight {
            return Err(MeshError::NotWatertight);
        }
        Ok(self.signed_volume_6().abs() / 6.0)
    }

    /// Uniform-density volume centroid via divergence-theorem integration.
    pub fn center_of_mass(&self) -> Result<Point3<f64>, MeshError> {
        if !self.watertight {
            return Err(MeshError::NotWatertight);
        }
        let vol6 = self.signed_volume_6();
        if vol6.abs() < 1e-30 {
            return Err(MeshError::ZeroVolume);
        }
        let mut acc = Vector3::zeros();
        for f in &self.faces {
            let a = self.vertices[f[0]].coords;
            let b = self.vertices[f[1]].coords;
            let c = self.vertices[f[2]].coords;
            let det = a.dot(&b.cross(&c));
            acc += det * (a + b + c);
        }
        Ok(Point3::from(acc / (4.0 * vol6)))
    }

    /// Area-weighted centroid of the surface, the documented fallback when the
    /// mesh is not watertight.
    pub fn area_centroid(&self) -> Point3<f64> {
        let mut acc = Vector3::zeros();
        let mut area = 0.0;
        for (fi, f) in self.faces.iter().enumerate() {
            let a = self.face_area(fi);
            let centroid = (self.vertices[f[0]].coords
                + self.vertices[f[1]].coords
                + self.vertices[f[2]].coords)
                / 3.0;
            acc += a * centroid;
            area += a;
        }
        Point3::from(acc / area)
    }

    fn signed_volume_6(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let a = self.vertices[f[0]].coords;
                let b = self.vertices[f[1]].coords;
                let c = self.vertices[f[2]].coords;
                a.dot(&b.cross(&c))
            })
            .sum()
    }
}

/// True when every undirected edge is shared by exactly two faces with
/// opposite winding directions.
fn edges_closed(faces: &[[usize; 3]]) -> bool {
    let mut edges: HashMap<(usize, usize), (u32, u32)> = HashMap::new();
    for f in faces {
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            if a == b {
                return false;
            }
            let key = (a.min(b), a.max(b));
            let entry = edges.entry(key).or_insert((0, 0));
            if a < b {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
    }
    edges.values().all(|&(fwd, bwd)| fwd == 1 && bwd == 1)
}

#[cfg(test)]
pub(crate) mod test_mesh {
    use super::*;

    /// Axis-aligned box as a 12-triangle mesh with outward winding.
    pub fn boxed(min: Point3<f64>, max: Point3<f64>) -> TriMesh {
        let (x0, y0, z0) = (min.x, min.y, min.z);
        let (x1, y1, z1) = (max.x, max.y, max.z);
        let vertices = vec![
            Point3::new(x0, y0, z0),
            Point3::new(x1, y0, z0),
            Point3::new(x1, y1, z0),
            Point3::new(x0, y1, z0),
            Point3::new(x0, y0, z1),
            Point3::new(x1, y0, z1),
            Point3::new(x1, y1, z1),
            Point3::new(x0, y1, z1),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriMesh::new(vertices, faces).unwrap()
    }

    pub fn unit_cube() -> TriMesh {
        boxed(Point3::origin(), Point3::new(1.0, 1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::test_mesh::{boxed, unit_cube};
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cube_is_watertight() {
        let m = unit_cube();
        assert!(m.is_watertight());
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.faces().len(), 12);
        assert_relative_eq!(m.surface_area(), 6.0, epsilon = 1e-12);
        assert_relative_eq!(m.volume().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let m = unit_cube();
        let mut faces = m.faces().to_vec();
        faces[0] = [0, 1, 98];
        let err = TriMesh::new(m.vertices().to_vec(), faces).unwrap_err();
        match err {
            MeshError::IndexOutOfRange {
                face,
                index,
                vertex_count,
            } => {
                assert_eq!(face, 0);
                assert_eq!(index, 98);
                assert_eq!(vertex_count, 8);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn cube_with_missing_face_is_open() {
        let m = unit_cube();
        let mut faces = m.faces().to_vec();
        faces.pop();
        let open = TriMesh::new(m.vertices().to_vec(), faces).unwrap();
        assert!(!open.is_watertight());
        assert!(matches!(
            open.center_of_mass(),
            Err(MeshError::NotWatertight)
        ));
    }

    #[test]
    fn degenerate_faces_are_reported() {
        let m = unit_cube();
        let mut faces = m.faces().to_vec();
        faces[3] = [0, 0, 1];
        faces[7] = [2, 2, 3];
        let err = TriMesh::new(m.vertices().to_vec(), faces).unwrap_err();
        match err {
            MeshError::DegenerateFaces { faces } => assert_eq!(faces, vec![3, 7]),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn cube_center_of_mass() {
        let com = unit_cube().center_of_mass().unwrap();
        assert_relative_eq!((com - Point3::new(0.5, 0.5, 0.5)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn center_of_mass_translates_with_the_mesh() {
        let shifted = unit_cube().transformed(&RigidTransform::from_translation(
            Vector3::new(2.0, 0.0, 0.0),
        ));
        let com = shifted.center_of_mass().unwrap();
        assert_relative_eq!((com - Point3::new(2.5, 0.5, 0.5)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn l_prism_matches_composite_body_centroid() {
        // L cross-section in xz extruded along y: a 2x1x1 slab with a unit
        // cube on top of its left half.
        let profile = [
            (0.0, 0.0),
            (2.0, 0.0),
            (2.0, 1.0),
            (1.0, 1.0),
            (1.0, 2.0),
            (0.0, 2.0),
        ];
        let mut vertices = Vec::new();
        for &(x, z) in &profile {
            vertices.push(Point3::new(x, 0.0, z));
        }
        for &(x, z) in &profile {
            vertices.push(Point3::new(x, 1.0, z));
        }
        let mut faces = Vec::new();
        // Caps, fanned from the corner vertex; the profile is star-shaped
        // from (0,0).
        for k in 1..5 {
            faces.push([0, k, k + 1]);
            faces.push([6, 6 + k + 1, 6 + k]);
        }
        for k in 0..6 {
            let a = k;
            let b = (k + 1) % 6;
            faces.push([a, 6 + a, 6 + b]);
            faces.push([a, 6 + b, b]);
        }
        let mesh = TriMesh::new(vertices, faces).unwrap();
        assert!(mesh.is_watertight());
        assert_relative_eq!(mesh.volume().unwrap(), 3.0, epsilon = 1e-12);
        // Slab [0,2]x[0,1]x[0,1] (volume 2) plus cube [0,1]x[0,1]x[1,2].
        let expected: Vector3<f64> =
            (2.0 * Vector3::new(1.0, 0.5, 0.5) + Vector3::new(0.5, 0.5, 1.5)) / 3.0;
        let com = mesh.center_of_mass().unwrap();
        assert_relative_eq!((com.coords - expected).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn center_of_mass_is_rigid_equivariant() {
        let pose = RigidTransform::from_xyz_rpy([0.3, -0.1, 0.7], [0.4, -0.9, 1.3]);
        let mesh = boxed(Point3::new(-0.2, 0.0, 0.1), Point3::new(0.4, 0.5, 0.3));
        let com = mesh.center_of_mass().unwrap();
        let moved = mesh.transformed(&pose).center_of_mass().unwrap();
        assert!((moved - pose.transform_point(&com)).norm() < 1e-9);
    }

    #[test]
    fn aabb_and_bounding_radius() {
        let m = boxed(Point3::new(-1.0, 0.0, 2.0), Point3::new(3.0, 1.0, 4.0));
        let bb = m.aabb();
        assert_eq!(bb.min, Point3::new(-1.0, 0.0, 2.0));
        assert_eq!(bb.max, Point3::new(3.0, 1.0, 4.0));
        assert_relative_eq!(bb.longest_edge(), 4.0);
        let r = m.bounding_radius_about(&bb.center());
        assert_relative_eq!(r, Vector3::new(2.0, 0.5, 1.0).norm(), epsilon = 1e-12);
    }
}
