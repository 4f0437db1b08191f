//! Triangle meshes, differential-geometry losses, and the preprocessing used
//! on per-frame prior meshes (smoothing, face-count resizing, rigid ICP).

mod icp;
mod losses;
mod normals;
pub mod primitives;
pub mod obj;
mod resize;
mod sampling;
mod smooth;

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use icp::{rigid_icp, rms_to_nearest, IcpReport};
pub use losses::{
    edge_length_loss, edge_length_loss_grad, laplacian_loss, laplacian_loss_grad,
    normal_consistency_loss, normal_consistency_loss_grad,
};
pub use normals::{face_area_normals, vertex_normals, vertex_normals_backward};
pub use resize::resize_to_face_count;
pub use sampling::farthest_point_sampling;
pub use smooth::taubin_smooth;

pub type Vec3 = Vector3<f64>;

/// Indexed triangle mesh with eagerly derived edge set and adjacency.
///
/// Manifoldness is not required; boundary and non-manifold edges are fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshData", into = "MeshData")]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    vertex_colors: Option<Vec<Vec3>>,
    edges: Vec<[usize; 2]>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct MeshData {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    colors: Option<Vec<[f64; 3]>>,
}

impl TryFrom<MeshData> for Mesh {
    type Error = Error;

    fn try_from(data: MeshData) -> Result<Self> {
        let vertices = data.vertices.iter().map(|v| Vec3::from(*v)).collect();
        let mut mesh = Mesh::new(vertices, data.faces)?;
        if let Some(colors) = data.colors {
            mesh = mesh.with_colors(colors.iter().map(|c| Vec3::from(*c)).collect())?;
        }
        Ok(mesh)
    }
}

impl From<Mesh> for MeshData {
    fn from(mesh: Mesh) -> Self {
        MeshData {
            vertices: mesh.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            faces: mesh.faces,
            colors: mesh
                .vertex_colors
                .map(|c| c.iter().map(|v| [v.x, v.y, v.z]).collect()),
        }
    }
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references a vertex outside 0..{n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex")));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        let (edges, neighbors) = build_adjacency(n, &faces);
        Ok(Mesh {
            vertices,
            faces,
            vertex_colors: None,
            edges,
            neighbors,
        })
    }

    pub fn with_colors(mut self, colors: Vec<Vec3>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::SizeMismatch {
                expected: self.vertices.len(),
                actual: colors.len(),
            });
        }
        self.vertex_colors = Some(colors);
        Ok(self)
    }

    pub fn without_colors(mut self) -> Self {
        self.vertex_colors = None;
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_colors(&self) -> Option<&[Vec3]> {
        self.vertex_colors.as_deref()
    }

    /// Unordered vertex pairs `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Sorted neighbor lists per vertex.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same topology, new positions.
    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self> {
        if positions.len() != self.vertices.len() {
            return Err(Error::SizeMismatch {
                expected: self.vertices.len(),
                actual: positions.len(),
            });
        }
        Ok(Mesh {
            vertices: positions,
            ..self.clone()
        })
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bounding_box(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Drops vertices not referenced by any face, remapping indices.
    pub fn compact(&self) -> Self {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = vertices.len();
                vertices.push(self.vertices[i]);
                if let Some(c) = &self.vertex_colors {
                    colors.push(c[i]);
                }
            }
        }
        let faces = self
            .faces
            .iter()
            .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
            .collect();
        let mesh = Mesh::new(vertices, faces).expect("compaction preserves validity");
        if self.vertex_colors.is_some() {
            mesh.with_colors(colors).expect("color count matches")
        } else {
            mesh
        }
    }

    pub fn transformed(&self, transform: &RigidTransform) -> Self {
        Mesh {
            vertices: self.vertices.iter().map(|v| transform.apply(v)).collect(),
            ..self.clone()
        }
    }
}

fn build_adjacency(n: usize, faces: &[[usize; 3]]) -> (Vec<[usize; 2]>, Vec<Vec<usize>>) {
    let mut set = BTreeSet::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            set.insert([a.min(b), a.max(b)]);
        }
    }
    let edges: Vec<[usize; 2]> = set.into_iter().collect();
    let mut neighbors = vec![Vec::new(); n];
    for e in &edges {
        neighbors[e[0]].push(e[1]);
        neighbors[e[1]].push(e[0]);
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    (edges, neighbors)
}

pub fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from +1.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let e = (r.transpose() * r - Matrix3::identity()).abs().max();
        e.max((r.determinant() - 1.0).abs())
    }
}
