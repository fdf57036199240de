//! Closest-point queries against triangle meshes.

use super::Vec3;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 4;
/// Below this face count queries scan every triangle.
const EXHAUSTIVE_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub face: usize,
    /// Weights of the face's three vertices, each in `[0, 1]`, summing to 1.
    pub bary: [f64; 3],
    pub distance_sq: f64,
}

impl ClosestPoint {
    pub fn distance(&self) -> f64 {
        self.distance_sq.sqrt()
    }
}

/// Closest point to `p` on triangle `(a, b, c)` with its barycentric weights.
///
/// Voronoi-region walk over vertices, edges and the interior.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = va + vb + vc;
    if denom.abs() < f64::MIN_POSITIVE {
        // zero-area triangle that slipped past the edge tests: fall back to its vertices
        let cands = [(a, [1.0, 0.0, 0.0]), (b, [0.0, 1.0, 0.0]), (c, [0.0, 0.0, 1.0])];
        return cands
            .into_iter()
            .min_by(|x, y| (x.0 - p).norm_squared().total_cmp(&(y.0 - p).norm_squared()))
            .unwrap();
    }
    let v = vb / denom;
    let w = vc / denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn distance_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Triangle mesh with a bounding-volume hierarchy, built once and read-only afterwards.
#[derive(Debug, Clone)]
pub struct MeshIndex {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl MeshIndex {
    pub fn new(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::invalid("closest-point query on an empty mesh"));
        }
        let mut index = Self {
            vertices: vertices.to_vec(),
            faces: faces.to_vec(),
            order: (0..faces.len()).collect(),
            nodes: Vec::new(),
        };
        if faces.len() >= EXHAUSTIVE_LIMIT {
            let centroids: Vec<Vec3> = faces
                .iter()
                .map(|f| (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0)
                .collect();
            let mut order = std::mem::take(&mut index.order);
            index.build(&mut order, 0, faces.len(), &centroids);
            index.order = order;
        }
        Ok(index)
    }

    fn face_bounds(&self, order: &[usize]) -> Aabb {
        let mut b = Aabb::empty();
        for &f in order {
            for &v in &self.faces[f] {
                b.grow(&self.vertices[v]);
            }
        }
        b
    }

    fn build(&mut self, order: &mut [usize], start: usize, end: usize, centroids: &[Vec3]) -> usize {
        let bounds = self.face_bounds(&order[start..end]);
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        self.nodes.push(Node::Leaf { bounds, start, end });
        let mut cb = Aabb::empty();
        for &f in &order[start..end] {
            cb.grow(&centroids[f]);
        }
        let extent = cb.hi - cb.lo;
        let axis = extent.imax();
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&x, &y| {
            centroids[x][axis].total_cmp(&centroids[y][axis]).then(x.cmp(&y))
        });
        let left = self.build(order, start, mid, centroids);
        let right = self.build(order, mid, end, centroids);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    fn test_face(&self, f: usize, p: &Vec3, best: &mut Option<ClosestPoint>) {
        let [a, b, c] = self.faces[f];
        let (q, bary) = closest_point_on_triangle(*p, self.vertices[a], self.vertices[b], self.vertices[c]);
        let d = (q - p).norm_squared();
        if best.is_none_or(|b| d < b.distance_sq) {
            *best = Some(ClosestPoint {
                point: q,
                face: f,
                bary,
                distance_sq: d,
            });
        }
    }

    /// Exhaustive scan over every triangle.
    pub fn closest_point_brute_force(&self, p: Vec3) -> ClosestPoint {
        let mut best = None;
        for f in 0..self.faces.len() {
            self.test_face(f, &p, &mut best);
        }
        best.expect("mesh has faces")
    }

    pub fn closest_point(&self, p: Vec3) -> ClosestPoint {
        if self.nodes.is_empty() {
            return self.closest_point_brute_force(p);
        }
        let mut best: Option<ClosestPoint> = None;
        let mut stack = vec![(0usize, self.nodes[0].bounds().distance_sq(&p))];
        while let Some((id, lower)) = stack.pop() {
            if best.is_some_and(|b| lower >= b.distance_sq) {
                continue;
            }
            match &self.nodes[id] {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[*start..*end] {
                        self.test_face(f, &p, &mut best);
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_sq(&p);
                    let dr = self.nodes[*right].bounds().distance_sq(&p);
                    // push the farther child first so the nearer one is explored first
                    if dl < dr {
                        stack.push((*right, dr));
                        stack.push((*left, dl));
                    } else {
                        stack.push((*left, dl));
                        stack.push((*right, dr));
                    }
                }
            }
        }
        best.expect("mesh has faces")
    }
}
