//! Incremental 3D quickhull.
//!
//! Each point lives in the outside set of at most one face. The farthest
//! outside point of a face becomes the next eye point; faces visible from it
//! are replaced by a cone of new faces over the horizon. Visibility uses a
//! distance tolerance proportional to the input extent, so points within that
//! tolerance of a face count as on the hull and near-coplanar input does not
//! create slivers.

use std::collections::{HashMap, VecDeque};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// A closed triangle mesh with outward normals.
#[derive(Clone, Debug)]
pub struct ConvexHull {
    pub vertices: Vec<Vector3<f64>>,
    /// Counter-clockwise when seen from outside.
    pub faces: Vec<[usize; 3]>,
    pub normals: Vec<Vector3<f64>>,
    /// Plane offsets: `normal · x = offset` on face `i`.
    pub offsets: Vec<f64>,
}

impl ConvexHull {
    /// Signed distance of `p` to the plane of face `i` (positive outside).
    pub fn face_distance(&self, i: usize, p: &Vector3<f64>) -> f64 {
        self.normals[i].dot(p) - self.offsets[i]
    }

    /// Largest face distance; `<= 0` means inside or on the hull.
    pub fn signed_distance_bound(&self, p: &Vector3<f64>) -> f64 {
        (0..self.faces.len())
            .map(|i| self.face_distance(i, p))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: &Vector3<f64>, tolerance: f64) -> bool {
        self.signed_distance_bound(p) <= tolerance
    }

    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        bounds(&self.vertices)
    }

    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    pub fn volume(&self) -> f64 {
        let c = self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64;
        self.faces
            .iter()
            .map(|f| {
                let (a, b, d) = (
                    self.vertices[f[0]] - c,
                    self.vertices[f[1]] - c,
                    self.vertices[f[2]] - c,
                );
                a.dot(&b.cross(&d)) / 6.0
            })
            .sum()
    }

    /// Number of undirected edges, counted from face boundaries.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// True when every directed edge has exactly one opposite twin.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for e in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *directed.entry(e).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }
}

/// Axis-aligned bounds (min, max) of `points`.
pub fn bounds(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    points.iter().fold(
        (
            Vector3::repeat(f64::INFINITY),
            Vector3::repeat(f64::NEG_INFINITY),
        ),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(points: &[Vector3<f64>], v: [usize; 3]) -> Self {
        let (a, b, c) = (points[v[0]], points[v[1]], points[v[2]]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        // Zero-area faces keep a zero normal: nothing is ever outside them.
        let normal = if len > 0.0 { n / len } else { Vector3::zeros() };
        Face {
            v,
            normal,
            offset: normal.dot(&a),
            outside: Vec::new(),
            alive: true,
        }
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Relative tolerance (times the bounding-box diagonal) below which a point is
/// considered on a face.
const REL_EPS: f64 = 1e-10;

/// Convex hull of `points`. Needs at least four non-coplanar points.
pub fn build_hull(points: &[Vector3<f64>]) -> Result<ConvexHull> {
    if points.len() < 4 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::InvalidInput(
            "hull input has non-finite coordinates".into(),
        ));
    }
    let (lo, hi) = bounds(points);
    let diag = (hi - lo).norm();
    let eps = REL_EPS * diag.max(f64::MIN_POSITIVE);

    let simplex = initial_simplex(points, eps)?;
    let mut faces: Vec<Face> = Vec::new();
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    let centroid = simplex.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / 4.0;
    for tri in [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]] {
        let mut v = tri.map(|k| simplex[k]);
        let face = Face::new(points, v);
        if face.distance(&centroid) > 0.0 {
            v.swap(1, 2);
        }
        add_face(&mut faces, &mut edges, Face::new(points, v));
    }

    let initial: Vec<usize> = (0..points.len()).filter(|i| !simplex.contains(i)).collect();
    let first_new: Vec<usize> = (0..faces.len()).collect();
    assign_outside(points, &mut faces, &first_new, initial, eps);

    let mut cursor = 0;
    loop {
        // Round-robin over faces keeps the work order deterministic.
        let Some(fi) = (0..faces.len())
            .map(|k| (cursor + k) % faces.len())
            .find(|&k| faces[k].alive && !faces[k].outside.is_empty())
        else {
            break;
        };
        cursor = fi;
        let eye = *faces[fi]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                faces[fi]
                    .distance(&points[a])
                    .total_cmp(&faces[fi].distance(&points[b]))
                    .then(b.cmp(&a))
            })
            .expect("outside set is nonempty");
        let eye_p = points[eye];

        // Flood the visible region from the seed face.
        let mut visible = vec![fi];
        let mut is_visible: HashMap<usize, bool> = HashMap::from([(fi, true)]);
        let mut queue = VecDeque::from([fi]);
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        while let Some(f) = queue.pop_front() {
            let v = faces[f].v;
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                let g = *edges.get(&(b, a)).expect("hull mesh is closed");
                let vis = *is_visible
                    .entry(g)
                    .or_insert_with(|| faces[g].distance(&eye_p) > eps);
                if vis {
                    if !visible.contains(&g) {
                        visible.push(g);
                        queue.push_back(g);
                    }
                } else {
                    horizon.push((a, b));
                }
            }
        }

        let mut orphans = Vec::new();
        for &f in &visible {
            let v = faces[f].v;
            for e in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                edges.remove(&e);
            }
            faces[f].alive = false;
            orphans.append(&mut faces[f].outside);
        }
        orphans.retain(|&p| p != eye);

        let mut new_faces = Vec::with_capacity(horizon.len());
        for (a, b) in horizon {
            new_faces.push(faces.len());
            add_face(&mut faces, &mut edges, Face::new(points, [a, b, eye]));
        }
        assign_outside(points, &mut faces, &new_faces, orphans, eps);
    }

    Ok(compact(points, &faces))
}

fn add_face(faces: &mut Vec<Face>, edges: &mut HashMap<(usize, usize), usize>, face: Face) {
    let id = faces.len();
    let v = face.v;
    for e in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
        edges.insert(e, id);
    }
    faces.push(face);
}

fn assign_outside(
    points: &[Vector3<f64>],
    faces: &mut [Face],
    candidates: &[usize],
    pts: Vec<usize>,
    eps: f64,
) {
    for p in pts {
        if let Some(&f) = candidates
            .iter()
            .find(|&&f| faces[f].distance(&points[p]) > eps)
        {
            faces[f].outside.push(p);
        }
    }
}

fn initial_simplex(points: &[Vector3<f64>], eps: f64) -> Result<[usize; 4]> {
    let argmax = |f: &dyn Fn(&Vector3<f64>) -> f64| {
        (0..points.len())
            .max_by(|&a, &b| f(&points[a]).total_cmp(&f(&points[b])).then(b.cmp(&a)))
            .expect("nonempty")
    };
    let (lo, hi) = bounds(points);
    let axis = (hi - lo).imax();
    let i0 = argmax(&|p| -p[axis]);
    let p0 = points[i0];
    let i1 = argmax(&|p| (p - p0).norm_squared());
    let dir = points[i1] - p0;
    if dir.norm() <= eps {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    let dir = dir.normalize();
    let i2 = argmax(&|p| {
        let d = p - p0;
        (d - dir * d.dot(&dir)).norm_squared()
    });
    let off = points[i2] - p0;
    if (off - dir * off.dot(&dir)).norm() <= eps {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }
    let n = dir.cross(&off).normalize();
    let i3 = argmax(&|p| (p - p0).dot(&n).abs());
    if (points[i3] - p0).dot(&n).abs() <= eps {
        return Err(Error::DegenerateGeometry("points are coplanar".into()));
    }
    Ok([i0, i1, i2, i3])
}

fn compact(points: &[Vector3<f64>], faces: &[Face]) -> ConvexHull {
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut hull = ConvexHull {
        vertices: Vec::new(),
        faces: Vec::new(),
        normals: Vec::new(),
        offsets: Vec::new(),
    };
    for f in faces.iter().filter(|f| f.alive) {
        let v = f.v.map(|i| {
            *remap.entry(i).or_insert_with(|| {
                hull.vertices.push(points[i]);
                hull.vertices.len() - 1
            })
        });
        hull.faces.push(v);
        hull.normals.push(f.normal);
        hull.offsets.push(f.offset);
    }
    hull
}
