//! Piecewise-flat triangulations of genus-0 surfaces.
//!
//! A [`SurfaceMesh`] is a closed, consistently oriented triangle mesh whose
//! vertices lie on a reference manifold. Each triangle carries an affine
//! chart: the chart coordinates (x1, x2) of a point are its barycentric
//! coordinates with respect to vertices 1 and 2, so every element is
//! identified with the reference triangle and all metric information lives in
//! the pulled-back tensors.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

static MESH_ID: AtomicU64 = AtomicU64::new(0);

/// Edge between two vertices, stored with ascending vertex indices. The
/// global edge direction is from `verts[0]` to `verts[1]`.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub verts: [usize; 2],
    pub tris: [usize; 2],
}

#[derive(Debug)]
pub struct SurfaceMesh {
    id: u64,
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// For each triangle, the edge indices of its local edges (v0,v1), (v1,v2),
    /// (v2,v0) together with `true` when the local traversal agrees with the
    /// global edge direction.
    pub tri_edges: Vec<[(usize, bool); 3]>,
}

impl SurfaceMesh {
    /// Build from raw vertices and triangles, deriving edges and validating
    /// the closed-surface invariants.
    pub fn from_raw(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut edge_map: HashMap<(usize, usize), Vec<(usize, bool)>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if a == b || a >= vertices.len() || b >= vertices.len() {
                    return Err(Error::InvalidMesh(format!("bad triangle {t}: {tri:?}")));
                }
                let key = (a.min(b), a.max(b));
                edge_map.entry(key).or_default().push((t, a < b));
            }
        }
        let mut keys: Vec<(usize, usize)> = edge_map.keys().copied().collect();
        keys.sort_unstable();
        let mut edges = Vec::with_capacity(keys.len());
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        for key in keys {
            let incident = &edge_map[&key];
            if incident.len() != 2 {
                return Err(Error::InvalidMesh(format!(
                    "edge {key:?} has {} incident triangles (surface not closed)",
                    incident.len()
                )));
            }
            // Consistent orientation: the edge must be traversed once in each
            // direction.
            if incident[0].1 == incident[1].1 {
                return Err(Error::InvalidMesh(format!(
                    "inconsistent triangle orientation across edge {key:?}"
                )));
            }
            edge_index.insert(key, edges.len());
            edges.push(Edge { verts: [key.0, key.1], tris: [incident[0].0, incident[1].0] });
        }
        let v = vertices.len() as i64;
        let e = edges.len() as i64;
        let f = triangles.len() as i64;
        if v - e + f != 2 {
            return Err(Error::InvalidMesh(format!("Euler characteristic {} != 2", v - e + f)));
        }
        let tri_edges = triangles
            .iter()
            .map(|tri| {
                std::array::from_fn(|k| {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    (edge_index[&key], a < b)
                })
            })
            .collect();
        Ok(SurfaceMesh {
            id: MESH_ID.fetch_add(1, Ordering::Relaxed),
            vertices,
            triangles,
            edges,
            tri_edges,
        })
    }

    /// Identity token used to detect mismatched mesh pairings.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Chart data of a triangle: origin vertex and the two spanning edge
    /// vectors. A chart point (x1, x2) maps to `origin + x1 e1 + x2 e2`.
    pub fn chart(&self, tri: usize) -> (Point3<f64>, Vector3<f64>, Vector3<f64>) {
        let [a, b, c] = self.triangles[tri];
        let p0 = self.vertices[a];
        (p0, self.vertices[b] - p0, self.vertices[c] - p0)
    }

    /// Ambient position of a barycentric point of a triangle.
    pub fn point(&self, tri: usize, bary: [f64; 3]) -> Point3<f64> {
        let [a, b, c] = self.triangles[tri];
        Point3::from(
            self.vertices[a].coords * bary[0]
                + self.vertices[b].coords * bary[1]
                + self.vertices[c].coords * bary[2],
        )
    }

    /// Flat (Euclidean) area of a triangle.
    pub fn flat_area(&self, tri: usize) -> f64 {
        let (_, e1, e2) = self.chart(tri);
        0.5 * e1.cross(&e2).norm()
    }

    /// Euclidean length of an edge.
    pub fn edge_length(&self, edge: usize) -> f64 {
        let e = &self.edges[edge];
        (self.vertices[e.verts[1]] - self.vertices[e.verts[0]]).norm()
    }

    /// Chart coordinates of the two endpoints of a global edge within one of
    /// its incident triangles, ordered along the global edge direction.
    pub fn edge_chart_endpoints(&self, edge: usize, tri: usize) -> ([f64; 2], [f64; 2]) {
        let e = &self.edges[edge];
        let local = |v: usize| -> [f64; 2] {
            let tri_verts = self.triangles[tri];
            if v == tri_verts[0] {
                [0.0, 0.0]
            } else if v == tri_verts[1] {
                [1.0, 0.0]
            } else {
                debug_assert_eq!(v, tri_verts[2]);
                [0.0, 1.0]
            }
        };
        (local(e.verts[0]), local(e.verts[1]))
    }

    /// Midpoint subdivision: each triangle splits into four. New vertices are
    /// edge midpoints (not projected; see `project_to_manifold`).
    pub fn refine(&self) -> Result<SurfaceMesh> {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let p = Point3::from((verts[a].coords + verts[b].coords) / 2.0);
                verts.push(p);
                verts.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(self.triangles.len() * 4);
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        SurfaceMesh::from_raw(vertices, triangles)
    }
}

/// Maximum Euclidean edge length.
pub fn mesh_size(mesh: &SurfaceMesh) -> f64 {
    (0..mesh.num_edges())
        .map(|e| mesh.edge_length(e))
        .fold(0.0, f64::max)
}

/// Regular icosahedron with unit circumradius, subdivided `level` times with
/// new vertices projected to the unit sphere.
pub fn build_icosphere(level: usize) -> Result<SurfaceMesh> {
    if level > 10 {
        return Err(Error::UnsupportedDegree { what: "icosphere level", got: level });
    }
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices: Vec<Point3<f64>> = raw
        .iter()
        .map(|v| {
            let p = Vector3::new(v[0], v[1], v[2]);
            Point3::from(p / p.norm())
        })
        .collect();
    let triangles = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let mut mesh = SurfaceMesh::from_raw(vertices, triangles)?;
    for _ in 0..level {
        let mut refined = mesh.refine()?;
        for v in &mut refined.vertices {
            let n = v.coords.norm();
            *v = Point3::from(v.coords / n);
        }
        mesh = refined;
    }
    Ok(mesh)
}
