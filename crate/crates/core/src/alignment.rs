//! Landmark-guided non-rigid alignment of the template to a scan, and color transfer.
//!
//! The template vertices `v_i` move by a displacement field `d`. The energy is
//!
//! ```text
//! E(d) = w_lm  Σ_{i∈L}     ‖v_i + d_i − q_i‖²
//!      + w_fit Σ_j         ‖v_j + d_j − c_j‖²
//!      + w_reg Σ_{(i,j)∈E} ‖d_i − d_j‖²
//! ```
//!
//! with scan landmarks `q_i`, closest scan points `c_j` (frozen between refreshes) and the
//! undirected template edges `E`. Minimized by gradient descent with backtracking.

use crate::error::{check_len, Error, Result};
use crate::mesh::{vertex_normals, GeometryVector, MeshIndex, ScanMesh, TemplateTopology, Vec3, VertexColorVector};

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentParams {
    pub w_lm: f64,
    pub w_fit: f64,
    pub w_reg: f64,
    pub max_iters: usize,
    /// First trial step. Later iterations start from twice the last accepted step.
    pub step_init: f64,
    /// Stop when a refresh cycle lowers the energy by less than this fraction.
    pub energy_tol: f64,
    /// Iterations between closest-point recomputations.
    pub correspondence_refresh: usize,
    /// Spend the first half of the iterations with the fit weight scaled by 0.1 and the
    /// second half with the landmark weight scaled by 0.1.
    pub two_phase: bool,
}

impl Default for AlignmentParams {
    fn default() -> Self {
        Self {
            w_lm: 10.0,
            w_fit: 1.0,
            w_reg: 1.0,
            max_iters: 10000,
            step_init: 0.01,
            energy_tol: 1e-7,
            correspondence_refresh: 10,
            two_phase: false,
        }
    }
}

impl AlignmentParams {
    pub fn validate(&self) -> Result<()> {
        for (w, name) in [(self.w_lm, "w_lm"), (self.w_fit, "w_fit"), (self.w_reg, "w_reg")] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} = {w} must be a non-negative number")));
            }
        }
        if self.w_lm == 0.0 && self.w_fit == 0.0 {
            return Err(Error::invalid("one of w_lm, w_fit must be positive"));
        }
        if self.max_iters == 0 || self.correspondence_refresh == 0 {
            return Err(Error::invalid("max_iters and correspondence_refresh must be positive"));
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return Err(Error::invalid(format!("step_init = {} must be positive", self.step_init)));
        }
        if !(self.energy_tol > 0.0) {
            return Err(Error::invalid(format!("energy_tol = {} must be positive", self.energy_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub geometry: GeometryVector,
    pub displacement: Vec<f64>,
    pub final_energy: f64,
    /// Initial energy followed by the energy after every accepted step.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Energy<'a> {
    template: &'a [f64],
    landmarks: &'a [usize],
    targets: &'a [Vec3],
    edges: Vec<(usize, usize)>,
    w_lm: f64,
    w_fit: f64,
    w_reg: f64,
}

impl Energy<'_> {
    fn eval(&self, d: &[f64], corr: &[Vec3], mut grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut e_lm = 0.0;
        if self.w_lm > 0.0 {
            for (&i, q) in self.landmarks.iter().zip(self.targets) {
                for k in 0..3 {
                    let r = self.template[3 * i + k] + d[3 * i + k] - q[k];
                    e_lm += r * r;
                    if let Some(g) = grad.as_deref_mut() {
                        g[3 * i + k] += 2.0 * self.w_lm * r;
                    }
                }
            }
        }
        let mut e_fit = 0.0;
        if self.w_fit > 0.0 {
            for (j, c) in corr.iter().enumerate() {
                for k in 0..3 {
                    let r = self.template[3 * j + k] + d[3 * j + k] - c[k];
                    e_fit += r * r;
                    if let Some(g) = grad.as_deref_mut() {
                        g[3 * j + k] += 2.0 * self.w_fit * r;
                    }
                }
            }
        }
        let mut e_reg = 0.0;
        if self.w_reg > 0.0 {
            for &(a, b) in &self.edges {
                for k in 0..3 {
                    let r = d[3 * a + k] - d[3 * b + k];
                    e_reg += r * r;
                    if let Some(g) = grad.as_deref_mut() {
                        g[3 * a + k] += 2.0 * self.w_reg * r;
                        g[3 * b + k] -= 2.0 * self.w_reg * r;
                    }
                }
            }
        }
        self.w_lm * e_lm + self.w_fit * e_fit + self.w_reg * e_reg
    }
}

fn check_inputs(topo: &TemplateTopology, template: &GeometryVector, scan: &ScanMesh, d: &[f64]) -> Result<()> {
    check_len("template geometry", topo.dim(), template.len())?;
    check_len("displacement", topo.dim(), d.len())?;
    check_len("scan landmarks", topo.landmark_indices().len(), scan.landmarks.len())
}

/// Energy and its exact gradient with respect to `displacement` (flattened `3m`), for
/// fixed correspondences (one closest scan point per template vertex).
pub fn compute_energy(
    topo: &TemplateTopology,
    template: &GeometryVector,
    displacement: &[f64],
    scan: &ScanMesh,
    params: &AlignmentParams,
    correspondences: &[Vec3],
) -> Result<(f64, Vec<f64>)> {
    check_inputs(topo, template, scan, displacement)?;
    check_len("correspondences", topo.vertex_count(), correspondences.len())?;
    let energy = Energy {
        template: template.values(),
        landmarks: topo.landmark_indices(),
        targets: &scan.landmarks,
        edges: topo.edges(),
        w_lm: params.w_lm,
        w_fit: params.w_fit,
        w_reg: params.w_reg,
    };
    let mut grad = vec![0.0; displacement.len()];
    let e = energy.eval(displacement, correspondences, Some(&mut grad));
    Ok((e, grad))
}

/// Closest scan point for every deformed template vertex.
pub fn closest_points(index: &MeshIndex, template: &[f64], d: &[f64]) -> Vec<Vec3> {
    (0..template.len() / 3)
        .map(|j| {
            let p = Vec3::new(
                template[3 * j] + d[3 * j],
                template[3 * j + 1] + d[3 * j + 1],
                template[3 * j + 2] + d[3 * j + 2],
            );
            index.closest_point(p).point
        })
        .collect()
}

pub fn align_template(
    topo: &TemplateTopology,
    template: &GeometryVector,
    scan: &ScanMesh,
    params: &AlignmentParams,
) -> Result<AlignmentResult> {
    align_template_from(topo, template, scan, params, &vec![0.0; topo.dim()])
}

/// Like [`align_template`], starting from a given displacement.
pub fn align_template_from(
    topo: &TemplateTopology,
    template: &GeometryVector,
    scan: &ScanMesh,
    params: &AlignmentParams,
    initial: &[f64],
) -> Result<AlignmentResult> {
    params.validate()?;
    check_inputs(topo, template, scan, initial)?;
    if scan.vertices.iter().any(|v| !v.iter().all(|x| x.is_finite()))
        || scan.landmarks.iter().any(|v| !v.iter().all(|x| x.is_finite()))
    {
        return Err(Error::invalid("scan has non-finite coordinates"));
    }
    let area: f64 = (0..scan.faces.len()).map(|f| scan.face_normal(f).norm()).sum();
    if !(area > 0.0) {
        return Err(Error::invalid("scan has zero surface area"));
    }
    let index = MeshIndex::new(&scan.vertices, &scan.faces)?;

    let phases = if params.two_phase {
        let first = params.max_iters / 2;
        vec![
            (params.w_lm, 0.1 * params.w_fit, first),
            (0.1 * params.w_lm, params.w_fit, params.max_iters - first),
        ]
    } else {
        vec![(params.w_lm, params.w_fit, params.max_iters)]
    };

    let edges = topo.edges();
    let tv = template.values();
    let mut d = initial.to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut e = f64::NAN;
    let mut grad = vec![0.0; d.len()];
    let mut trial_d = vec![0.0; d.len()];

    for (w_lm, w_fit, budget) in phases {
        let energy = Energy {
            template: tv,
            landmarks: topo.landmark_indices(),
            targets: &scan.landmarks,
            edges: edges.clone(),
            w_lm,
            w_fit,
            w_reg: params.w_reg,
        };
        let mut step = params.step_init / 2.0;
        let mut used = 0;
        converged = false;
        while used < budget {
            let corr = closest_points(&index, tv, &d);
            e = energy.eval(&d, &corr, Some(&mut grad));
            if !e.is_finite() {
                return Err(Error::Numerical("alignment energy is not finite".into()));
            }
            if trace.is_empty() {
                trace.push(e);
            }
            let cycle_start = e;
            for _ in 0..params.correspondence_refresh {
                if used >= budget || grad.iter().all(|&g| g == 0.0) {
                    break;
                }
                let mut t = 2.0 * step;
                let mut accepted = false;
                for _ in 0..=MAX_HALVINGS {
                    for ((x, &d0), &g) in trial_d.iter_mut().zip(&d).zip(&grad) {
                        *x = d0 - t * g;
                    }
                    let e_new = energy.eval(&trial_d, &corr, None);
                    if e_new < e {
                        std::mem::swap(&mut d, &mut trial_d);
                        e = e_new;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
                step = t;
                e = energy.eval(&d, &corr, Some(&mut grad));
                trace.push(e);
                used += 1;
                iterations += 1;
            }
            if e == 0.0 || (cycle_start - e) < params.energy_tol * cycle_start {
                converged = true;
                break;
            }
        }
    }
    let geometry = GeometryVector::new(tv.iter().zip(&d).map(|(v, x)| v + x).collect())?;
    Ok(AlignmentResult {
        geometry,
        displacement: d,
        final_energy: e,
        energy_trace: trace,
        iterations,
        converged,
    })
}

/// Color for every vertex of the aligned template, taken at the closest scan point.
/// Vertices whose normal opposes the scan face normal are refilled from their
/// neighbors.
pub fn transfer_texture(aligned: &GeometryVector, topo: &TemplateTopology, scan: &ScanMesh) -> Result<VertexColorVector> {
    check_len("aligned geometry", topo.dim(), aligned.len())?;
    if scan.colors.is_none() {
        return Err(Error::invalid("scan has no color source"));
    }
    let index = MeshIndex::new(&scan.vertices, &scan.faces)?;
    let points = aligned.points();
    let normals = vertex_normals(&points, topo.faces());
    let mut colors = Vec::with_capacity(points.len());
    let mut marked = Vec::with_capacity(points.len());
    for (p, n) in points.iter().zip(&normals) {
        let cp = index.closest_point(*p);
        let c = scan.color_at(cp.face, cp.bary).expect("color source checked above")?;
        colors.push(c.map(|v| v.clamp(0.0, 1.0)));
        marked.push(n.dot(&scan.face_normal(cp.face)) < 0.0);
    }
    let neighbors = topo.neighbors();
    for _ in 0..points.len() {
        if !marked.iter().any(|&m| m) {
            break;
        }
        let mut filled = Vec::new();
        for v in (0..points.len()).filter(|&v| marked[v]) {
            let good: Vec<usize> = neighbors[v].iter().copied().filter(|&u| !marked[u]).collect();
            if !good.is_empty() {
                let mut c = [0.0; 3];
                for &u in &good {
                    for k in 0..3 {
                        c[k] += colors[u][k] / good.len() as f64;
                    }
                }
                filled.push((v, c));
            }
        }
        if filled.is_empty() {
            break;
        }
        for (v, c) in filled {
            colors[v] = c;
            marked[v] = false;
        }
    }
    VertexColorVector::from_rgb(&colors)
}
