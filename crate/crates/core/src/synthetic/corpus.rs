use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::template::procedural_template;
use crate::corpus::{AlignedCorpus, CorpusEntry, NEUTRAL};
use crate::error::{Error, Result};
use crate::mesh::{GeometryVector, Vec3, VertexColorVector};
use crate::rng::{self, Rng};

const EXPRESSION_NAMES: [&str; 5] = [NEUTRAL, "smile", "frown", "surprise", "squint"];
const SKIN: [f64; 3] = [0.72, 0.52, 0.42];

/// Parameters of a procedural corpus with a planted texture-geometry correlation.
///
/// Per identity `z ~ N(0, I_d)`; geometry is `template + Σ z_i B_i + expression offset`,
/// colors are `skin + Σ (M z)_i C_i + expression tint + η N(0, 1)`, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub identities: usize,
    /// Expressions per identity, the first one is always neutral.
    pub expressions: usize,
    pub latent_dim: usize,
    /// Row-major `d x d` mixing matrix; `None` means the identity.
    pub mixing: Option<Vec<Vec<f64>>>,
    pub noise: f64,
    pub seed: u64,
    pub template_grid: usize,
    /// RMS per-coordinate amplitude of the identity geometry variation.
    pub geometry_amplitude: f64,
    /// RMS per-channel amplitude of the identity color variation.
    pub texture_amplitude: f64,
    /// Peak displacement of the expression offsets.
    pub expression_amplitude: f64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            identities: 100,
            expressions: 5,
            latent_dim: 10,
            mixing: None,
            noise: 0.05,
            seed: 0,
            template_grid: 24,
            geometry_amplitude: 0.05,
            texture_amplitude: 0.08,
            expression_amplitude: 0.1,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 || self.expressions == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("identities, expressions and latent_dim must be positive"));
        }
        for (v, name) in [
            (self.noise, "noise"),
            (self.geometry_amplitude, "geometry_amplitude"),
            (self.texture_amplitude, "texture_amplitude"),
            (self.expression_amplitude, "expression_amplitude"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be non-negative")));
            }
        }
        if let Some(m) = &self.mixing {
            let d = self.latent_dim;
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return Err(Error::invalid(format!("mixing matrix must be {d} x {d}")));
            }
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid("mixing matrix has non-finite entries"));
            }
        }
        Ok(())
    }

    pub fn mixing_matrix(&self) -> DMatrix<f64> {
        let d = self.latent_dim;
        match &self.mixing {
            Some(rows) => DMatrix::from_fn(d, d, |i, j| rows[i][j]),
            None => DMatrix::identity(d, d),
        }
    }

    pub fn expression_names(&self) -> Vec<String> {
        (0..self.expressions)
            .map(|e| match EXPRESSION_NAMES.get(e) {
                Some(name) => name.to_string(),
                None => format!("expression{e}"),
            })
            .collect()
    }
}

/// Identity latent vectors of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub identities: Vec<String>,
    /// `d x identities`.
    pub values: DMatrix<f64>,
}

impl Latents {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (j, id) in self.identities.iter().enumerate() {
            out.push_str(id);
            for v in self.values.column(j).iter() {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Sum of a few random plane waves over `(x, y)`, scaled to unit RMS over `points`.
fn smooth_field(rng: &mut Rng, points: &[Vec3], waves: usize) -> Vec<f64> {
    let mut f = vec![0.0; points.len()];
    for _ in 0..waves {
        let (fx, fy): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let phase = rng.random_range(0.0..2.0 * PI);
        let w: f64 = rng.random_range(0.5..1.0);
        for (v, p) in f.iter_mut().zip(points) {
            *v += w * (0.5 * PI * (fx * p.x + fy * p.y) + phase).sin();
        }
    }
    let rms = (f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).sqrt();
    f.iter().map(|v| v / rms.max(1e-12)).collect()
}

/// Interleaved 3-channel field with unit RMS per channel.
fn smooth_vector_field(rng: &mut Rng, points: &[Vec3]) -> Vec<f64> {
    let channels: Vec<Vec<f64>> = (0..3).map(|_| smooth_field(rng, points, 3)).collect();
    (0..points.len()).flat_map(|i| [channels[0][i], channels[1][i], channels[2][i]]).collect()
}

/// Localized smooth bump displacement.
fn expression_field(rng: &mut Rng, points: &[Vec3], amplitude: f64) -> Vec<f64> {
    let (cx, cy) = (rng.random_range(-0.5..0.5), rng.random_range(-0.6..0.4));
    let radius = rng.random_range(0.3..0.5);
    let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
    points
        .iter()
        .flat_map(|p| {
            let w = amplitude * (-((p.x - cx).powi(2) + (p.y - cy).powi(2)) / (radius * radius)).exp();
            [w * dir.x, w * dir.y, w * dir.z]
        })
        .collect()
}

pub fn gen_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<(AlignedCorpus, Latents)> {
    spec.validate()?;
    let (topo, template) = procedural_template(spec.template_grid)?;
    let points = template.points();
    let d = spec.latent_dim;
    let dim = topo.dim();

    let mut basis_rng = rng::rng_for(spec.seed, &[1]);
    let scale_g = spec.geometry_amplitude / (d as f64).sqrt();
    let scale_t = spec.texture_amplitude / (d as f64).sqrt();
    let geometry_basis: Vec<Vec<f64>> = (0..d)
        .map(|_| smooth_vector_field(&mut basis_rng, &points).into_iter().map(|v| v * scale_g).collect())
        .collect();
    let texture_basis: Vec<Vec<f64>> = (0..d)
        .map(|_| smooth_vector_field(&mut basis_rng, &points).into_iter().map(|v| v * scale_t).collect())
        .collect();
    let skin_variation = smooth_vector_field(&mut basis_rng, &points);
    let mut expr_geometry = vec![vec![0.0; dim]];
    let mut expr_tint = vec![vec![0.0; dim]];
    for _ in 1..spec.expressions {
        expr_geometry.push(expression_field(&mut basis_rng, &points, spec.expression_amplitude));
        expr_tint.push(expression_field(&mut basis_rng, &points, 0.5 * spec.texture_amplitude));
    }

    let mut latent_rng = rng::rng_for(spec.seed, &[0]);
    let z = DMatrix::from_fn(d, spec.identities, |_, _| StandardNormal.sample(&mut latent_rng));
    let mz = spec.mixing_matrix() * &z;
    let names = spec.expression_names();
    let ids: Vec<String> = (0..spec.identities).map(|i| format!("id{i:04}")).collect();

    let mut entries = Vec::with_capacity(spec.identities * spec.expressions);
    for (j, id) in ids.iter().enumerate() {
        let mut identity_g = template.values().to_vec();
        let mut identity_t: Vec<f64> = (0..dim).map(|i| SKIN[i % 3] + 0.03 * skin_variation[i]).collect();
        for k in 0..d {
            for i in 0..dim {
                identity_g[i] += z[(k, j)] * geometry_basis[k][i];
                identity_t[i] += mz[(k, j)] * texture_basis[k][i];
            }
        }
        for (e, name) in names.iter().enumerate() {
            let mut noise_rng = rng::rng_for(spec.seed, &[2, j as u64, e as u64]);
            let g: Vec<f64> = identity_g.iter().zip(&expr_geometry[e]).map(|(a, b)| a + b).collect();
            let t: Vec<f64> = identity_t
                .iter()
                .zip(&expr_tint[e])
                .map(|(a, b)| {
                    let n: f64 = StandardNormal.sample(&mut noise_rng);
                    a + b + spec.noise * n
                })
                .collect();
            entries.push(CorpusEntry {
                identity: id.clone(),
                expression: name.clone(),
                geometry: GeometryVector::new(g)?,
                colors: VertexColorVector::clamped(t)?,
            });
        }
    }
    let corpus = AlignedCorpus::new(topo, template, entries)?;
    Ok((corpus, Latents { identities: ids, values: z }))
}

