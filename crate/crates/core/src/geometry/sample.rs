//! Area-weighted surface sampling with per-sample counter-based RNG streams.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MeshError, TriMesh};

/// A point on the mesh surface with the outward normal of its face.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub position: Point3<f64>,
    pub normal: Vector3<f64>,
    pub face: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// RNG for sample `index` of a stream; indexing by counter rather than
/// advancing one stream keeps batched callers deterministic regardless of
/// evaluation order.
pub(crate) fn counter_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)))
}

/// Draws `n` area-weighted uniform samples from the mesh surface.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>, MeshError> {
    if n == 0 {
        return Err(MeshError::EmptySampleRequest);
    }
    let n_faces = mesh.faces().len();
    let mut cumulative = Vec::with_capacity(n_faces);
    let mut total = 0.0;
    for f in 0..n_faces {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = counter_rng(seed, i as u64);
        let u = rng.random::<f64>() * total;
        let face = cumulative.partition_point(|&c| c <= u).min(n_faces - 1);
        let [a, b, c] = mesh.face_vertices(face);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        let position = Point3::from(wa * a.coords + wb * b.coords + wc * c.coords);
        out.push(SurfaceSample {
            position,
            normal: mesh.face_normal(face),
            face,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::test_mesh::unit_cube;
    use super::super::load_mesh;
    use super::*;

    fn fixture(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures/meshes")
            .join(name)
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mesh = load_mesh(fixture("icosphere1.obj")).unwrap();
        let s1 = sample_surface(&mesh, 64, 42).unwrap();
        let s2 = sample_surface(&mesh, 64, 42).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.normal, b.normal);
            assert_eq!(a.face, b.face);
        }
        let s3 = sample_surface(&mesh, 64, 43).unwrap();
        assert!(s1.iter().zip(&s3).any(|(a, b)| a.position != b.position));
    }

    #[test]
    fn cube_faces_are_covered_evenly() {
        let mesh = unit_cube();
        let n = 6000;
        let samples = sample_surface(&mesh, n, 17).unwrap();
        // Bucket by outward face direction; the cube has six equal sides.
        let mut counts = [0usize; 6];
        for s in &samples {
            let n = s.normal;
            let axis = if n.x.abs() > 0.5 {
                0
            } else if n.y.abs() > 0.5 {
                1
            } else {
                2
            };
            let side = if n[axis] > 0.0 { 0 } else { 1 };
            counts[axis * 2 + side] += 1;
        }
        let expected = n as f64 / 6.0;
        for c in counts {
            assert!(
                (c as f64 - expected).abs() < 0.05 * expected,
                "counts {counts:?}"
            );
        }
    }

    #[test]
    fn samples_lie_on_their_face_within_tolerance() {
        let mesh = load_mesh(fixture("icosphere1.obj")).unwrap();
        let samples = sample_surface(&mesh, 100, 5).unwrap();
        for s in &samples {
            let [a, _, _] = mesh.face_vertices(s.face);
            let plane_dist = s.normal.dot(&(s.position - a)).abs();
            assert!(plane_dist < 1e-9);
            assert!((s.normal.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_samples_stay_between_inradius_and_radius() {
        let mesh = load_mesh(fixture("icosphere1.obj")).unwrap();
        // Distance from the center to the nearest face plane bounds every
        // surface point from below.
        let min_plane = (0..mesh.faces().len())
            .map(|f| {
                mesh.face_normal(f)
                    .dot(&mesh.face_vertices(f)[0].coords)
                    .abs()
            })
            .fold(f64::INFINITY, f64::min);
        let samples = sample_surface(&mesh, 100, 5).unwrap();
        for s in &samples {
            let r = s.position.coords.norm();
            assert!(r <= 0.04 + 1e-9);
            assert!(r >= min_plane - 1e-9);
        }
    }

    #[test]
    fn normals_point_away_from_centroid() {
        for name in ["icosphere2.obj", "cylinder.obj"] {
            let mesh = load_mesh(fixture(name)).unwrap();
            let com = mesh.center_of_mass().unwrap();
            for s in sample_surface(&mesh, 200, 1).unwrap() {
                assert!(s.normal.dot(&(s.position - com)) > 0.0, "{name}");
            }
        }
    }

    #[test]
    fn zero_samples_is_an_error() {
        let mesh = unit_cube();
        assert!(matches!(
            sample_surface(&mesh, 0, 0),
            Err(MeshError::EmptySampleRequest)
        ));
    }
}
