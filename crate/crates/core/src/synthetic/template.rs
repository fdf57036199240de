use crate::error::{Error, Result};
use crate::mesh::{GeometryVector, TemplateTopology, Vec3, LANDMARK_COUNT};

pub const DEFAULT_TEMPLATE_GRID: usize = 45;

/// Height of the face surface over `(x, y) ∈ [-1, 1]²`: a rounded dome with a nose,
/// brow ridge and eye sockets.
pub fn face_height(x: f64, y: f64) -> f64 {
    let bump = |cx: f64, cy: f64, sx: f64, sy: f64| (-((x - cx) / sx).powi(2) - ((y - cy) / sy).powi(2)).exp();
    0.5 * (1.0 - 0.35 * (x * x + 0.6 * y * y))
        + 0.22 * bump(0.0, -0.02, 0.1, 0.28)
        + 0.05 * bump(0.0, 0.42, 0.6, 0.08)
        - 0.06 * bump(-0.4, 0.25, 0.16, 0.08)
        - 0.06 * bump(0.4, 0.25, 0.16, 0.08)
        + 0.03 * bump(0.0, -0.5, 0.3, 0.08)
}

/// Nominal landmark positions in the `(x, y)` plane: brows, eyes, nose, mouth.
fn landmark_layout() -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    for s in [-1.0, 1.0] {
        for k in 0..5 {
            let x = s * (0.2 + 0.1 * k as f64);
            pts.push([x, 0.45 + 0.4 * (0.09 - (x.abs() - 0.4).powi(2))]);
        }
    }
    for s in [-1.0, 1.0] {
        for k in 0..6 {
            let a = std::f64::consts::PI * k as f64 / 3.0;
            pts.push([s * 0.4 + 0.15 * a.cos(), 0.25 + 0.06 * a.sin()]);
        }
    }
    for y in [0.2, 0.1, 0.0, -0.1] {
        pts.push([0.0, y]);
    }
    for k in -2..=2 {
        pts.push([0.1 * k as f64, -0.22]);
    }
    for k in 0..12 {
        let a = std::f64::consts::PI * k as f64 / 6.0;
        pts.push([0.3 * a.cos(), -0.5 + 0.1 * a.sin()]);
    }
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

/// Regular `grid x grid` height-field face patch over `[-1, 1]²`, two triangles per
/// cell, normals toward +z. UVs are inset to `[0.1, 0.9]²` with v pointing down, so the
/// texture has a background border. Landmarks are snapped greedily to the nearest
/// unused vertex.
pub fn procedural_template(grid: usize) -> Result<(TemplateTopology, GeometryVector)> {
    if grid < 16 {
        return Err(Error::invalid(format!("template grid {grid} too small (minimum 16)")));
    }
    let step = 2.0 / (grid - 1) as f64;
    let mut points = Vec::with_capacity(grid * grid);
    let mut uv = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        let y = 1.0 - i as f64 * step;
        for j in 0..grid {
            let x = -1.0 + j as f64 * step;
            points.push(Vec3::new(x, y, face_height(x, y)));
            uv.push([0.1 + 0.8 * j as f64 / (grid - 1) as f64, 0.1 + 0.8 * i as f64 / (grid - 1) as f64]);
        }
    }
    let mut faces = Vec::with_capacity(2 * (grid - 1) * (grid - 1));
    for i in 0..grid - 1 {
        for j in 0..grid - 1 {
            let a = i * grid + j;
            let (b, c, d) = (a + 1, a + grid, a + grid + 1);
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }
    let mut used = vec![false; points.len()];
    let mut landmarks = Vec::with_capacity(LANDMARK_COUNT);
    for [x, y] in landmark_layout() {
        let best = (0..points.len())
            .filter(|&v| !used[v])
            .min_by(|&a, &b| {
                let da = (points[a].x - x).powi(2) + (points[a].y - y).powi(2);
                let db = (points[b].x - x).powi(2) + (points[b].y - y).powi(2);
                da.total_cmp(&db)
            })
            .expect("grid has more vertices than landmarks");
        used[best] = true;
        landmarks.push(best);
    }
    let topo = TemplateTopology::new(points.len(), faces, uv, landmarks)?;
    Ok((topo, GeometryVector::from_points(&points)?))
}
