//! Mesh, texture and corpus-level data types.
//!
//! Geometry and color vectors are stored interleaved (`x¹ y¹ z¹ x² …`, `r¹ g¹ b¹ …`), the
//! layout every statistical model in this crate works with.

mod obj;
mod spatial;
mod texture;

use std::collections::BTreeSet;

use nalgebra::Vector3;

use crate::error::{check_len, Error, Result};

pub use obj::{
    load_obj, load_scan, load_template, read_scan_landmarks, read_template_landmarks, save_obj,
    write_scan_landmarks, write_template_landmarks, ObjMesh,
};
pub use spatial::{closest_point_on_triangle, ClosestPoint, MeshIndex};
pub use texture::{
    rasterize_vertex_colors_to_texture, sample_texture_at_uv, vertex_colors_from_texture,
    TextureImage, BACKGROUND,
};

pub type Vec3 = Vector3<f64>;

/// Number of facial landmarks every scan and template carries.
pub const LANDMARK_COUNT: usize = 43;

/// Shared connectivity, UV layout and landmark vertices of the template face.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateTopology {
    vertex_count: usize,
    faces: Vec<[usize; 3]>,
    uv: Vec<[f64; 2]>,
    landmark_indices: Vec<usize>,
}

impl TemplateTopology {
    pub fn new(
        vertex_count: usize,
        faces: Vec<[usize; 3]>,
        uv: Vec<[f64; 2]>,
        landmark_indices: Vec<usize>,
    ) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::invalid("template has no vertices"));
        }
        check_len("template uv count", vertex_count, uv.len())?;
        for f in &faces {
            for &i in f {
                if i >= vertex_count {
                    return Err(Error::IndexOutOfRange {
                        index: i,
                        count: vertex_count,
                        context: "template face",
                    });
                }
            }
        }
        if let Some(p) = uv
            .iter()
            .position(|t| !(0.0..=1.0).contains(&t[0]) || !(0.0..=1.0).contains(&t[1]))
        {
            return Err(Error::invalid(format!(
                "uv of vertex {p} = {:?} outside the unit square",
                uv[p]
            )));
        }
        check_len("template landmark count", LANDMARK_COUNT, landmark_indices.len())?;
        let mut seen = BTreeSet::new();
        for &i in &landmark_indices {
            if i >= vertex_count {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    count: vertex_count,
                    context: "template landmark",
                });
            }
            if !seen.insert(i) {
                return Err(Error::invalid(format!("landmark vertex {i} listed twice")));
            }
        }
        Ok(Self {
            vertex_count,
            faces,
            uv,
            landmark_indices,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Length of geometry and color vectors on this topology.
    pub fn dim(&self) -> usize {
        3 * self.vertex_count
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn uv(&self) -> &[[f64; 2]] {
        &self.uv
    }

    pub fn landmark_indices(&self) -> &[usize] {
        &self.landmark_indices
    }

    /// Undirected edges, each once, as `(lo, hi)` in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertex_count];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Signed area of face `f` in UV space.
    pub fn uv_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (self.uv[a], self.uv[b], self.uv[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }
}

macro_rules! vertex_vector {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn into_values(self) -> Vec<f64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn vertex_count(&self) -> usize {
                self.0.len() / 3
            }

            pub fn vertex(&self, i: usize) -> Vec3 {
                Vec3::new(self.0[3 * i], self.0[3 * i + 1], self.0[3 * i + 2])
            }

            /// L2 distance between two vectors of equal length.
            pub fn distance(&self, other: &Self) -> f64 {
                self.0
                    .iter()
                    .zip(&other.0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    };
}

vertex_vector!(
    /// Interleaved vertex positions of one face.
    GeometryVector
);
vertex_vector!(
    /// Interleaved per-vertex RGB in `[0, 1]`.
    VertexColorVector
);

impl GeometryVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "geometry length {} is not a multiple of 3",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("geometry contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn from_points(points: &[Vec3]) -> Result<Self> {
        Self::new(points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn points(&self) -> Vec<Vec3> {
        (0..self.vertex_count()).map(|i| self.vertex(i)).collect()
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        let pts = self.points();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }
}

impl VertexColorVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "color length {} is not a multiple of 3",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("color value {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    /// Clamps every channel into `[0, 1]`; non-finite values become 0.
    pub fn clamped(values: Vec<f64>) -> Result<Self> {
        Self::new(
            values
                .into_iter()
                .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
                .collect(),
        )
    }

    pub fn from_rgb(rgb: &[[f64; 3]]) -> Result<Self> {
        Self::new(rgb.iter().flatten().copied().collect())
    }
}

/// Where a scan's surface color comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ColorSource {
    VertexColors(Vec<[f64; 3]>),
    Texture {
        image: TextureImage,
        uv: Vec<[f64; 2]>,
    },
}

/// A raw scan: triangle soup with landmarks and an optional color source.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub colors: Option<ColorSource>,
    pub landmarks: Vec<Vec3>,
}

impl ScanMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        colors: Option<ColorSource>,
        landmarks: Vec<Vec3>,
    ) -> Result<Self> {
        for f in &faces {
            for &i in f {
                if i >= vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        index: i,
                        count: vertices.len(),
                        context: "scan face",
                    });
                }
            }
        }
        check_len("scan landmark count", LANDMARK_COUNT, landmarks.len())?;
        match &colors {
            Some(ColorSource::VertexColors(c)) => check_len("scan vertex colors", vertices.len(), c.len())?,
            Some(ColorSource::Texture { uv, .. }) => check_len("scan uv", vertices.len(), uv.len())?,
            None => {}
        }
        Ok(Self {
            vertices,
            faces,
            colors,
            landmarks,
        })
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (pb - pa).cross(&(pc - pa))
    }

    /// Color at a surface point given by face index and barycentric weights.
    pub fn color_at(&self, face: usize, bary: [f64; 3]) -> Option<Result<[f64; 3]>> {
        let [a, b, c] = self.faces[face];
        match self.colors.as_ref()? {
            ColorSource::VertexColors(cols) => {
                let mut out = [0.0; 3];
                for (w, idx) in bary.iter().zip([a, b, c]) {
                    for ch in 0..3 {
                        out[ch] += w * cols[idx][ch];
                    }
                }
                Some(Ok(out))
            }
            ColorSource::Texture { image, uv } => {
                let mut p = [0.0; 2];
                for (w, idx) in bary.iter().zip([a, b, c]) {
                    p[0] += w * uv[idx][0];
                    p[1] += w * uv[idx][1];
                }
                // barycentric combinations of unit-square points can leave it by rounding
                let p = [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)];
                Some(sample_texture_at_uv(image, p))
            }
        }
    }
}

/// Area-weighted vertex normals (unnormalized faces summed, then normalized).
pub fn vertex_normals(points: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut normals = vec![Vec3::zeros(); points.len()];
    for &[a, b, c] in faces {
        let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
        normals[a] += n;
        normals[b] += n;
        normals[c] += n;
    }
    for n in &mut normals {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        }
    }
    normals
}
