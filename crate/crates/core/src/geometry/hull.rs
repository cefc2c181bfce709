//! Incremental convex hull with scale-aware tolerances.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::{MeshError, TriMesh};

/// Convex hull of a mesh's vertex set.
pub fn convex_hull(mesh: &TriMesh) -> Result<TriMesh, MeshError> {
    hull_of_points(mesh.vertices())
}

#[derive(Clone)]
struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    alive: bool,
}

impl Face {
    fn new(points: &[Point3<f64>], v: [usize; 3]) -> Option<Face> {
        let a = points[v[0]];
        let n = (points[v[1]] - a).cross(&(points[v[2]] - a));
        let len = n.norm();
        if len <= 0.0 {
            return None;
        }
        let normal = n / len;
        Some(Face {
            v,
            normal,
            offset: normal.dot(&a.coords),
            alive: true,
        })
    }

    fn height(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

/// Convex hull of a point set, as a watertight outward-wound triangle mesh
/// whose vertices are a subset of the input points.
pub fn hull_of_points(points: &[Point3<f64>]) -> Result<TriMesh, MeshError> {
    if points.len() < 4 {
        return Err(MeshError::DegenerateHull(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let eps = (hi - lo).norm() * 1e-10;
    if eps <= 0.0 {
        return Err(MeshError::DegenerateHull("all points coincide".into()));
    }

    let simplex = initial_simplex(points, eps)?;
    let mut faces: Vec<Face> = Vec::new();
    let [s0, s1, s2, s3] = simplex;
    for tri in [[s0, s1, s2], [s0, s3, s1], [s1, s3, s2], [s2, s3, s0]] {
        let mut face = Face::new(points, tri)
            .ok_or_else(|| MeshError::DegenerateHull("flat initial simplex".into()))?;
        // Orient outward: the remaining simplex vertex lies behind the face.
        let inside = simplex.iter().find(|s| !tri.contains(s)).unwrap();
        if face.height(&points[*inside]) > 0.0 {
            face.v.swap(1, 2);
            face = Face::new(points, face.v).unwrap();
        }
        faces.push(face);
    }

    for (pi, p) in points.iter().enumerate() {
        if simplex.contains(&pi) {
            continue;
        }
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive && f.height(p) > eps)
            .map(|(i, _)| i)
            .collect();
        if visible.is_empty() {
            continue;
        }
        let mut edge_owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            if !f.alive {
                continue;
            }
            for k in 0..3 {
                edge_owner.insert((f.v[k], f.v[(k + 1) % 3]), fi);
            }
        }
        let is_visible = |fi: usize, visible: &[usize]| visible.binary_search(&fi).is_ok();
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &fi in &visible {
            let f = &faces[fi];
            for k in 0..3 {
                let a = f.v[k];
                let b = f.v[(k + 1) % 3];
                match edge_owner.get(&(b, a)) {
                    Some(&nb) if is_visible(nb, &visible) => {}
                    Some(_) => horizon.push((a, b)),
                    None => {
                        return Err(MeshError::DegenerateHull(
                            "open edge during hull construction".into(),
                        ))
                    }
                }
            }
        }
        for &fi in &visible {
            faces[fi].alive = false;
        }
        for (a, b) in horizon {
            let face = Face::new(points, [a, b, pi]).ok_or_else(|| {
                MeshError::DegenerateHull(format!("point {pi} collinear with a horizon edge"))
            })?;
            faces.push(face);
        }
    }

    // Compact to the referenced vertex subset, keeping first-use order.
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut hull_vertices: Vec<Point3<f64>> = Vec::new();
    let mut hull_faces: Vec<[usize; 3]> = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        let mut tri = [0usize; 3];
        for (k, &vi) in f.v.iter().enumerate() {
            let next = hull_vertices.len();
            let id = *remap.entry(vi).or_insert_with(|| {
                hull_vertices.push(points[vi]);
                next
            });
            tri[k] = id;
        }
        hull_faces.push(tri);
    }
    TriMesh::new(hull_vertices, hull_faces)
}

fn initial_simplex(points: &[Point3<f64>], eps: f64) -> Result<[usize; 4], MeshError> {
    let p0 = (0..points.len())
        .min_by(|&a, &b| {
            let (pa, pb) = (points[a], points[b]);
            pa.x.total_cmp(&pb.x)
                .then(pa.y.total_cmp(&pb.y))
                .then(pa.z.total_cmp(&pb.z))
        })
        .unwrap();
    let p1 = argmax(points, |p| (p - points[p0]).norm_squared());
    if (points[p1] - points[p0]).norm() <= eps {
        return Err(MeshError::DegenerateHull("all points coincide".into()));
    }
    let axis = (points[p1] - points[p0]).normalize();
    let p2 = argmax(points, |p| {
        let d = p - points[p0];
        (d - axis * axis.dot(&d)).norm_squared()
    });
    let span = points[p2] - points[p0];
    if (span - axis * axis.dot(&span)).norm() <= eps {
        return Err(MeshError::DegenerateHull("all points collinear".into()));
    }
    let normal = (points[p1] - points[p0]).cross(&span).normalize();
    let p3 = argmax(points, |p| normal.dot(&(p - points[p0])).abs());
    if normal.dot(&(points[p3] - points[p0])).abs() <= eps {
        return Err(MeshError::DegenerateHull("all points coplanar".into()));
    }
    Ok([p0, p1, p2, p3])
}

fn argmax(points: &[Point3<f64>], score: impl Fn(&Point3<f64>) -> f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let s = score(p);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Largest signed height of `point` over any hull face plane; ≤ 0 means
/// inside.
pub fn hull_excess(hull: &TriMesh, point: &Point3<f64>) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for fi in 0..hull.faces().len() {
        let n = hull.face_normal(fi);
        let a = hull.face_vertices(fi)[0];
        worst = worst.max(n.dot(&(point - a)));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::super::test_mesh::unit_cube;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interior_point_is_eliminated() {
        let cube = unit_cube();
        let mut points = cube.vertices().to_vec();
        points.push(Point3::new(0.5, 0.5, 0.5));
        let hull = hull_of_points(&points).unwrap();
        assert_eq!(hull.vertices().len(), 8);
        assert!(hull.is_watertight());
        assert!((hull.volume().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tetrahedron_is_its_own_hull() {
        let points = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.5, 3.0f64.sqrt() / 2.0, 0.0),
            Point3::new(0.5, 3.0f64.sqrt() / 6.0, (2.0f64 / 3.0).sqrt()),
        ];
        let hull = hull_of_points(&points).unwrap();
        assert_eq!(hull.vertices().len(), 4);
        assert_eq!(hull.faces().len(), 4);
        assert!(hull.volume().unwrap() > 0.0);
    }

    #[test]
    fn random_ball_points_are_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut points = Vec::new();
        while points.len() < 100 {
            let p = Point3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            if p.coords.norm() <= 1.0 {
                points.push(p);
            }
        }
        let hull = hull_of_points(&points).unwrap();
        for p in &points {
            assert!(hull_excess(&hull, p) <= 1e-9);
        }
    }

    #[test]
    fn coplanar_input_is_rejected() {
        let points = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.3, 0.7, 0.0),
        ];
        assert!(matches!(
            hull_of_points(&points),
            Err(MeshError::DegenerateHull(_))
        ));
    }

    #[test]
    fn hull_is_idempotent_on_vertex_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<_> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.random::<f64>() - 0.5,
                    2.0 * rng.random::<f64>(),
                    rng.random::<f64>(),
                )
            })
            .collect();
        let h1 = hull_of_points(&points).unwrap();
        let h2 = convex_hull(&h1).unwrap();
        let mut set1: Vec<_> = h1.vertices().iter().map(|p| format!("{:?}", p)).collect();
        let mut set2: Vec<_> = h2.vertices().iter().map(|p| format!("{:?}", p)).collect();
        set1.sort();
        set2.sort();
        assert_eq!(set1, set2);
    }
}
