//! Texture-to-geometry coupling: given a face texture, pick a plausible geometry.
//!
//! Four estimators share one interface:
//!
//! - [`Variant::Random`] ignores the texture and draws geometry coefficients from the
//!   Gaussian prior `N(0, δ_i² / n)`.
//! - [`Variant::NearestNeighbor`] returns the geometry of the training face whose texture
//!   coefficients are closest in L2.
//! - [`Variant::LeastSquares`] regresses geometry coefficients on texture coefficients,
//!   `α_g = Wᵀ α_t` with `W = (A_t A_tᵀ + εI)⁻¹ A_t A_gᵀ`.
//! - [`Variant::MaxLikelihood`] uses a joint geometry+texture PCA and the MAP estimate of
//!   the joint coefficients under Gaussian noise `λI` and a diagonal Gaussian prior.

mod io;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::AlignedCorpus;
use crate::error::{check_len, Error, Result};
use crate::mesh::{vertex_colors_from_texture, GeometryVector, TemplateTopology, TextureImage, VertexColorVector};
use crate::morphable::{build_joint_model, CoefficientVector, JointModel, MorphableModel, Space};
use crate::rng;

pub use io::{load_coupling, save_coupling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "nn")]
    NearestNeighbor,
    #[serde(rename = "ml")]
    MaxLikelihood,
    #[serde(rename = "ls")]
    LeastSquares,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Random,
        Variant::NearestNeighbor,
        Variant::MaxLikelihood,
        Variant::LeastSquares,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Random => "random",
            Variant::NearestNeighbor => "nn",
            Variant::MaxLikelihood => "ml",
            Variant::LeastSquares => "ls",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Variant::Random => 0,
            Variant::NearestNeighbor => 1,
            Variant::MaxLikelihood => 2,
            Variant::LeastSquares => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown coupling variant tag {tag}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Variant::Random),
            "nn" => Ok(Variant::NearestNeighbor),
            "ml" => Ok(Variant::MaxLikelihood),
            "ls" => Ok(Variant::LeastSquares),
            other => Err(Error::invalid(format!("unknown method {other:?} (random|nn|ml|ls)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOptions {
    /// Geometry rank; defaults to the model's `k_g`.
    pub k_g: Option<usize>,
    /// Texture rank; defaults to the model's `k_t`.
    pub k_t: Option<usize>,
    /// Ridge `ε` for least squares; `None` means `1e-8 · trace(A_t A_tᵀ) / k_t`.
    pub ridge: Option<f64>,
    /// Noise variance `λ` of the texture given the joint coefficients.
    pub lambda: f64,
    /// Joint-model rank for maximum likelihood; defaults to `k_g`.
    pub k_joint: Option<usize>,
    /// Scale of the prior standard deviation for random geometries.
    pub temperature: f64,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            k_g: None,
            k_t: None,
            ridge: None,
            lambda: 1.0,
            k_joint: None,
            temperature: 1.0,
        }
    }
}

/// Coefficient vectors of a training set, one column per face.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub values: DMatrix<f64>,
    pub space: Space,
}

impl CoefficientMatrix {
    pub fn from_model(model: &MorphableModel, corpus: &AlignedCorpus, space: Space, k: usize) -> Result<Self> {
        let basis = model.basis(space)?;
        let data = match space {
            Space::Geometry => corpus.geometry_matrix(),
            _ => corpus.color_matrix(),
        };
        Ok(Self {
            values: basis.project_columns(&data, k)?,
            space,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlCoupling {
    pub joint: JointModel,
    /// Empirical variances of the training joint coefficients (diagonal `Σ_β`).
    pub prior_variances: DVector<f64>,
    pub lambda: f64,
    /// `(U_tᵀU_t/λ + Σ_β⁻¹)⁻¹ U_tᵀ / λ`, so that `β* = E t̂`.
    estimator: DMatrix<f64>,
}

impl MlCoupling {
    pub fn new(joint: JointModel, prior_variances: DVector<f64>, lambda: f64) -> Result<Self> {
        let estimator = ml_estimator(&joint, &prior_variances, lambda)?;
        Ok(Self {
            joint,
            prior_variances,
            lambda,
            estimator,
        })
    }

    /// Maximum-likelihood joint coefficients of a texture.
    pub fn estimate(&self, texture: &[f64]) -> Result<DVector<f64>> {
        let beta = &self.estimator * self.joint.standardize_texture(texture)?;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite joint coefficients".into()));
        }
        Ok(beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingPayload {
    Random {
        variances: DVector<f64>,
        temperature: f64,
    },
    NearestNeighbor {
        texture: CoefficientMatrix,
        geometry: CoefficientMatrix,
    },
    MaxLikelihood(MlCoupling),
    LeastSquares {
        /// `k_t x k_g`.
        w: DMatrix<f64>,
        ridge: f64,
    },
}

/// A fitted estimator together with the reference model and topology it works against.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    pub model: MorphableModel,
    pub topology: TemplateTopology,
    pub k_g: usize,
    pub k_t: usize,
    pub payload: CouplingPayload,
}

/// Texture input for synthesis.
#[derive(Debug, Clone, Copy)]
pub enum TextureInput<'a> {
    Image(&'a TextureImage),
    Colors(&'a VertexColorVector),
}

/// Replaces every geometry by the neutral geometry of the same identity (first neutral
/// entry if there are several). Colors and entry order are unchanged.
pub fn neutralize_corpus(corpus: &AlignedCorpus) -> Result<AlignedCorpus> {
    corpus.check_neutral()?;
    let neutral = corpus.neutral_index();
    let mut out = corpus.clone();
    for e in &mut out.entries {
        e.geometry = corpus.entries[neutral[e.identity.as_str()]].geometry.clone();
    }
    Ok(out)
}

/// `W = (A_t A_tᵀ + εI)⁻¹ A_t A_gᵀ`, the minimizer of `‖Wᵀ A_t − A_g‖_F² + ε‖W‖_F²`.
pub fn least_squares_weights(a_t: &DMatrix<f64>, a_g: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    check_len("least-squares sample count", a_t.ncols(), a_g.ncols())?;
    if !(ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge {ridge} must be >= 0")));
    }
    let mut normal = a_t * a_t.transpose();
    for i in 0..normal.nrows() {
        normal[(i, i)] += ridge;
    }
    let rhs = a_t * a_g.transpose();
    let chol = normal.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "texture coefficient Gram matrix is singular (k_t = {}, n = {}); use a ridge",
            a_t.nrows(),
            a_t.ncols()
        ))
    })?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite least-squares weights".into()));
    }
    Ok(w)
}

/// Default ridge `1e-8 · trace(A_t A_tᵀ) / k_t`.
pub fn default_ridge(a_t: &DMatrix<f64>) -> f64 {
    1e-8 * a_t.norm_squared() / a_t.nrows() as f64
}

fn ml_rank(joint: &JointModel, requested: usize) -> usize {
    let n = joint.samples as f64;
    let top = joint.singular_values.iter().copied().fold(0.0, f64::max).powi(2) / n;
    joint
        .singular_values
        .iter()
        .take(requested.min(joint.rank()))
        .take_while(|s| top > 0.0 && s.powi(2) / n > 1e-12 * top)
        .count()
}

pub fn fit_coupling(
    corpus: &AlignedCorpus,
    model: &MorphableModel,
    variant: Variant,
    options: &CouplingOptions,
) -> Result<CouplingModel> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot fit a coupling on an empty corpus"));
    }
    check_len("corpus vs model dimension", model.geometry.dim(), corpus.dim())?;
    let k_g = options.k_g.unwrap_or(model.k_g);
    let k_t = options.k_t.unwrap_or(model.k_t);
    for (k, name) in [(k_g, "k_g"), (k_t, "k_t")] {
        if k == 0 || k > model.rank() {
            return Err(Error::invalid(format!("{name} = {k} outside 1..={}", model.rank())));
        }
    }
    let payload = match variant {
        Variant::Random => CouplingPayload::Random {
            variances: model.geometry.variances(k_g),
            temperature: options.temperature,
        },
        Variant::NearestNeighbor => CouplingPayload::NearestNeighbor {
            texture: CoefficientMatrix::from_model(model, corpus, Space::Texture, k_t)?,
            geometry: CoefficientMatrix::from_model(model, corpus, Space::Geometry, k_g)?,
        },
        Variant::LeastSquares => {
            let a_t = CoefficientMatrix::from_model(model, corpus, Space::Texture, k_t)?;
            let a_g = CoefficientMatrix::from_model(model, corpus, Space::Geometry, k_g)?;
            let ridge = options.ridge.unwrap_or_else(|| default_ridge(&a_t.values));
            let w = least_squares_weights(&a_t.values, &a_g.values, ridge)?;
            CouplingPayload::LeastSquares { w, ridge }
        }
        Variant::MaxLikelihood => {
            if !(options.lambda > 0.0 && options.lambda.is_finite()) {
                return Err(Error::invalid(format!("lambda {} must be positive", options.lambda)));
            }
            let joint = build_joint_model(corpus)?;
            let k = ml_rank(&joint, options.k_joint.unwrap_or(k_g));
            if k == 0 {
                return Err(Error::Numerical("joint model has no variance".into()));
            }
            // training joint coefficients are the centered data in the basis, so their
            // mean square along component i is δ_i² / n
            let prior_variances = joint.singular_values.rows(0, k).map(|s| s * s / joint.samples as f64);
            CouplingPayload::MaxLikelihood(MlCoupling::new(joint, prior_variances, options.lambda)?)
        }
    };
    Ok(CouplingModel {
        model: model.clone(),
        topology: corpus.topology.clone(),
        k_g,
        k_t,
        payload,
    })
}

/// `‖t̂ − U_t β‖² / λ + Σ β_i² / σ_i²`, where `t̂` is the block-standardized texture and
/// `β` uses the first `β.len()` joint components.
pub fn ml_objective(
    joint: &JointModel,
    prior_variances: &DVector<f64>,
    lambda: f64,
    texture: &[f64],
    beta: &DVector<f64>,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda {lambda} must be positive")));
    }
    check_len("prior variance count", beta.len(), prior_variances.len())?;
    let t_hat = joint.standardize_texture(texture)?;
    let residual = t_hat - joint.texture_block().columns(0, beta.len()) * beta;
    let prior: f64 = beta.iter().zip(prior_variances.iter()).map(|(b, v)| b * b / v).sum();
    Ok(residual.norm_squared() / lambda + prior)
}

fn ml_estimator(joint: &JointModel, prior_variances: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda {lambda} must be positive")));
    }
    let k = prior_variances.len();
    if k > joint.rank() {
        return Err(Error::invalid(format!("{k} joint components for a rank-{} model", joint.rank())));
    }
    let u_t = joint.texture_block().columns(0, k).into_owned();
    let u_t_tr = u_t.transpose();
    let mut system = &u_t_tr * &u_t / lambda;
    for i in 0..k {
        system[(i, i)] += 1.0 / prior_variances[i];
    }
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::Numerical("maximum-likelihood system is singular".into()))?;
    Ok(chol.solve(&(u_t_tr / lambda)))
}

/// Minimizer of [`ml_objective`]: `β* = (U_tᵀU_t/λ + Σ_β⁻¹)⁻¹ U_tᵀ t̂ / λ`.
pub fn ml_estimate(
    joint: &JointModel,
    prior_variances: &DVector<f64>,
    lambda: f64,
    texture: &[f64],
) -> Result<DVector<f64>> {
    MlCoupling::new(joint.clone(), prior_variances.clone(), lambda)?.estimate(texture)
}

impl CouplingModel {
    pub fn variant(&self) -> Variant {
        match self.payload {
            CouplingPayload::Random { .. } => Variant::Random,
            CouplingPayload::NearestNeighbor { .. } => Variant::NearestNeighbor,
            CouplingPayload::MaxLikelihood(_) => Variant::MaxLikelihood,
            CouplingPayload::LeastSquares { .. } => Variant::LeastSquares,
        }
    }

    pub fn colors_for(&self, texture: TextureInput<'_>) -> Result<VertexColorVector> {
        match texture {
            TextureInput::Image(img) => vertex_colors_from_texture(&self.topology, img),
            TextureInput::Colors(c) => {
                check_len("texture input", self.topology.dim(), c.len())?;
                Ok(c.clone())
            }
        }
    }

    /// Geometry coefficients for coefficient-space variants; `None` for maximum likelihood.
    pub fn geometry_coefficients(&self, colors: &VertexColorVector, seed: u64) -> Result<Option<DVector<f64>>> {
        let alpha_t = || self.model.texture.project(colors.values(), self.k_t);
        Ok(match &self.payload {
            CouplingPayload::Random { variances, temperature } => {
                let mut rng = rng::rng(seed);
                Some(variances.map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    temperature * v.sqrt() * z
                }))
            }
            CouplingPayload::NearestNeighbor { texture, geometry } => {
                let query = alpha_t()?;
                let mut best = (f64::INFINITY, 0usize);
                for (j, col) in texture.values.column_iter().enumerate() {
                    let d = (col - &query).norm_squared();
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                Some(geometry.values.column(best.1).into_owned())
            }
            CouplingPayload::LeastSquares { w, .. } => Some(w.tr_mul(&alpha_t()?)),
            CouplingPayload::MaxLikelihood(_) => None,
        })
    }

    /// Geometry for `texture`. `seed` only affects [`Variant::Random`].
    pub fn synthesize_geometry(&self, texture: TextureInput<'_>, seed: u64) -> Result<GeometryVector> {
        let colors = self.colors_for(texture)?;
        let values = match self.geometry_coefficients(&colors, seed)? {
            Some(alpha_g) => self.model.geometry.reconstruct(&alpha_g)?,
            None => {
                let CouplingPayload::MaxLikelihood(ml) = &self.payload else { unreachable!() };
                let beta = ml.estimate(colors.values())?;
                let k = beta.len();
                ml.joint.geometry_mean() + ml.joint.geometry_block().columns(0, k) * beta * ml.joint.geometry_scale
            }
        };
        GeometryVector::new(values.as_slice().to_vec())
    }

    /// The geometry coefficients this coupling would produce, as a tagged vector.
    pub fn coefficient_vector(&self, colors: &VertexColorVector, seed: u64) -> Result<Option<CoefficientVector>> {
        Ok(self
            .geometry_coefficients(colors, seed)?
            .map(|v| CoefficientVector::new(v, Space::Geometry)))
    }
}
