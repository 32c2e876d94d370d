//! Indexed triangle meshes, 1-ring adjacency, uniform Laplacian coordinates
//! and vertex normals.

mod obj;

pub use obj::{load_obj, read_obj, save_obj, write_obj, ObjStats};

use crate::error::{Error, Result};
use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

/// Indexed triangle mesh with counter-clockwise winding.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    colors: Option<Vec<Vec3>>,
    tex_coords: Option<Vec<[f64; 2]>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (j, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {j} references a vertex out of range ({n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {j} repeats a vertex")));
            }
        }
        Ok(Self {
            vertices,
            faces,
            colors: None,
            tex_coords: None,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    /// Moving vertices never invalidates the topology invariants.
    pub fn vertices_mut(&mut self) -> &mut [Vec3] {
        &mut self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&[Vec3]> {
        self.colors.as_deref()
    }

    pub fn tex_coords(&self) -> Option<&[[f64; 2]]> {
        self.tex_coords.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn set_colors(&mut self, colors: Option<Vec<Vec3>>) -> Result<()> {
        if let Some(c) = &colors {
            check_len("colors", self.vertices.len(), c.len())?;
        }
        self.colors = colors;
        Ok(())
    }

    pub fn set_tex_coords(&mut self, uv: Option<Vec<[f64; 2]>>) -> Result<()> {
        if let Some(t) = &uv {
            check_len("tex_coords", self.vertices.len(), t.len())?;
        }
        self.tex_coords = uv;
        Ok(())
    }

    /// Same topology and attributes, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        check_len("vertices", self.vertices.len(), vertices.len())?;
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    pub fn same_topology(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    pub fn face_area(&self, j: usize) -> f64 {
        let [a, b, c] = self.faces[j];
        0.5 * (self.vertices[b] - self.vertices[a])
            .cross(&(self.vertices[c] - self.vertices[a]))
            .norm()
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))),
        )
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Sorted 1-ring neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMap {
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyMap {
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.neighbors.iter().map(Vec::as_slice)
    }
}

pub fn build_adjacency(mesh: &TriMesh) -> AdjacencyMap {
    let mut neighbors = vec![Vec::new(); mesh.vertex_count()];
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }
    AdjacencyMap { neighbors }
}

/// Uniform Laplacian coordinates `L(v_i) = v_i - mean(N(v_i))`.
pub fn laplacian_coords(mesh: &TriMesh, adj: &AdjacencyMap) -> Result<Vec<Vec3>> {
    laplacian_of(mesh.vertices(), adj)
}

pub(crate) fn laplacian_of(vertices: &[Vec3], adj: &AdjacencyMap) -> Result<Vec<Vec3>> {
    if adj.len() != vertices.len() {
        return Err(Error::DimensionMismatch {
            what: "adjacency",
            expected: vertices.len(),
            got: adj.len(),
        });
    }
    vertices
        .iter()
        .zip(adj.iter())
        .enumerate()
        .map(|(i, (v, nbrs))| {
            if nbrs.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            let sum: Vec3 = nbrs.iter().map(|&j| vertices[j]).sum();
            Ok(v - sum / nbrs.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    /// Vertices with no non-degenerate incident face; their normal is +z.
    pub fallback: Vec<usize>,
}

/// Area-weighted vertex normals. Zero-area faces do not contribute.
pub fn vertex_normals(mesh: &TriMesh) -> VertexNormals {
    let v = mesh.vertices();
    let mut acc = vec![Vec3::zeros(); v.len()];
    for f in mesh.faces() {
        // Cross product length is twice the area, so summing it weights by area.
        let n = (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]));
        if n.norm_squared() <= f64::MIN_POSITIVE {
            continue;
        }
        for &i in f {
            acc[i] += n;
        }
    }
    let mut fallback = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                n / len
            } else {
                fallback.push(i);
                Vec3::z()
            }
        })
        .collect();
    VertexNormals { normals, fallback }
}

/// Unit icosphere after `level` rounds of 4:1 subdivision
/// (`10 * 4^level + 2` vertices), outward CCW winding.
pub fn icosphere(level: u32) -> TriMesh {
    use std::collections::HashMap;

    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
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
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(verts, faces).expect("icosphere topology is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri() -> TriMesh {
        TriMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Vec3::zeros(); 3];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn adjacency_single_and_shared_edge() {
        let adj = build_adjacency(&tri());
        assert_eq!(adj.neighbors(0), &[1, 2]);
        assert_eq!(adj.neighbors(1), &[0, 2]);
        assert_eq!(adj.neighbors(2), &[0, 1]);

        let m = TriMesh::new(vec![Vec3::zeros(); 4], vec![[0, 1, 2], [1, 3, 2]]).unwrap();
        assert_eq!(build_adjacency(&m).neighbors(1), &[0, 2, 3]);
    }

    #[test]
    fn icosphere_valence_brute_force() {
        let m = icosphere(1);
        assert_eq!(m.vertex_count(), 42);
        // Brute-force: count distinct vertices sharing any face edge.
        for i in 0..m.vertex_count() {
            let mut nb = std::collections::BTreeSet::new();
            for f in m.faces() {
                for k in 0..3 {
                    if f[k] == i {
                        nb.insert(f[(k + 1) % 3]);
                        nb.insert(f[(k + 2) % 3]);
                    }
                }
            }
            assert!(nb.len() == 5 || nb.len() == 6);
            let adj = build_adjacency(&m);
            assert_eq!(
                adj.neighbors(i),
                nb.into_iter().collect::<Vec<_>>().as_slice()
            );
        }
    }

    #[test]
    fn laplacian_equilateral_triangle() {
        let v: Vec<Vec3> = (0..3)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let m = TriMesh::new(v.clone(), vec![[0, 1, 2]]).unwrap();
        let l = laplacian_coords(&m, &build_adjacency(&m)).unwrap();
        for i in 0..3 {
            assert!((l[i] - 1.5 * v[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn laplacian_of_coincident_vertices_is_zero() {
        let p = Vec3::new(0.3, -2.0, 5.0);
        let m = TriMesh::new(vec![p; 4], vec![[0, 1, 2], [1, 3, 2]]).unwrap();
        let l = laplacian_coords(&m, &build_adjacency(&m)).unwrap();
        assert!(l.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn laplacian_isolated_vertex() {
        let m = TriMesh::new(vec![Vec3::zeros(); 4], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(
            laplacian_coords(&m, &build_adjacency(&m)),
            Err(Error::IsolatedVertex(3))
        ));
    }

    fn random_mesh(seed: u64) -> TriMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = icosphere(2);
        for v in m.vertices_mut() {
            *v += Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1;
        }
        m
    }

    #[test]
    fn laplacian_matches_loop_oracle() {
        let m = random_mesh(7);
        assert!(m.vertex_count() >= 162);
        let l = laplacian_coords(&m, &build_adjacency(&m)).unwrap();
        // Oracle: recover neighbors from edges directly, no adjacency map.
        for i in 0..m.vertex_count() {
            let mut nb: Vec<usize> = m
                .faces()
                .iter()
                .filter(|f| f.contains(&i))
                .flat_map(|f| f.iter().copied().filter(|&j| j != i))
                .collect();
            nb.sort();
            nb.dedup();
            let mut acc = Vec3::zeros();
            for &j in &nb {
                acc += m.vertices()[i] - m.vertices()[j];
            }
            acc /= nb.len() as f64;
            assert!((acc - l[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn normals_planar_quad_and_flip() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let m = TriMesh::new(v.clone(), vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let n = vertex_normals(&m);
        assert!(n.fallback.is_empty());
        assert!(n.normals.iter().all(|n| (n - Vec3::z()).norm() < 1e-15));
        let flipped = TriMesh::new(v, vec![[0, 2, 1], [0, 3, 2]]).unwrap();
        assert!(vertex_normals(&flipped)
            .normals
            .iter()
            .all(|n| (n + Vec3::z()).norm() < 1e-15));
    }

    #[test]
    fn normals_icosphere_radial() {
        let m = icosphere(3);
        let n = vertex_normals(&m);
        for (v, n) in m.vertices().iter().zip(&n.normals) {
            assert!(v.normalize().dot(n).clamp(-1.0, 1.0).acos() < 0.05);
            assert!((n.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normals_fallback_for_unreferenced_and_degenerate() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::y()];
        let m = TriMesh::new(v, vec![[0, 1, 2]]).unwrap();
        let n = vertex_normals(&m);
        assert_eq!(n.fallback, vec![0, 1, 2, 3]);
        assert_eq!(n.normals[3], Vec3::z());
    }

    proptest! {
        #[test]
        fn adjacency_symmetric_and_order_independent(seed in 0u64..1000) {
            let m = random_mesh(seed);
            let adj = build_adjacency(&m);
            for i in 0..adj.len() {
                for &j in adj.neighbors(i) {
                    prop_assert!(adj.neighbors(j).contains(&i));
                }
            }
            let mut faces = m.faces().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for k in (1..faces.len()).rev() {
                faces.swap(k, rng.random_range(0..=k));
            }
            let shuffled = TriMesh::new(m.vertices().to_vec(), faces).unwrap();
            prop_assert_eq!(build_adjacency(&shuffled), adj);
        }

        #[test]
        fn laplacian_translation_and_scale(seed in 0u64..1000, c in prop::array::uniform3(-10.0f64..10.0), s in -5.0f64..5.0) {
            let m = random_mesh(seed);
            let adj = build_adjacency(&m);
            let base = laplacian_coords(&m, &adj).unwrap();
            let c = Vec3::from(c);
            let moved = m.with_vertices(m.vertices().iter().map(|v| v + c).collect()).unwrap();
            let scaled = m.with_vertices(m.vertices().iter().map(|v| v * s).collect()).unwrap();
            let lm = laplacian_coords(&moved, &adj).unwrap();
            let ls = laplacian_coords(&scaled, &adj).unwrap();
            for i in 0..base.len() {
                prop_assert!((lm[i] - base[i]).norm() < 1e-11);
                prop_assert!((ls[i] - base[i] * s).norm() < 1e-11);
            }
        }
    }
}
