//! PCA morphable model of face geometry and color, and the joint geometry+color model.
//!
//! A face is `mean + basis * coefficients` in each space. Bases come from the thin SVD
//! of the centered data matrix, so the coefficient prior of component `i` has variance
//! `singular_value_i² / n`.

pub(crate) mod io;
mod pca;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::AlignedCorpus;
use crate::error::{check_len, Error, Result};
use crate::mesh::{GeometryVector, VertexColorVector};
use crate::rng;

pub use io::{load_joint_model, load_model, read_model, save_joint_model, save_model, write_model};
pub use pca::{orthonormality_error, thin_svd};

/// Truncation used when none is requested.
pub const DEFAULT_RANK: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Geometry,
    Texture,
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    pub values: DVector<f64>,
    pub space: Space,
}

impl CoefficientVector {
    pub fn new(values: DVector<f64>, space: Space) -> Self {
        Self { values, space }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean, orthonormal basis and singular values of one data space.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// Number of training samples.
    pub samples: usize,
}

impl PcaBasis {
    /// Fits the basis to the columns of `data`.
    pub fn fit(data: &DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite corpus data".into()));
        }
        let mean = data.column_mean();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let (basis, singular_values) = thin_svd(&centered);
        Ok(Self {
            mean,
            basis,
            singular_values,
            samples: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    fn check_rank(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.rank() {
            Err(Error::invalid(format!("rank {k} outside 1..={}", self.rank())))
        } else {
            Ok(())
        }
    }

    /// First `k` entries of `Vᵀ(x − μ)`.
    pub fn project(&self, x: &[f64], k: usize) -> Result<DVector<f64>> {
        check_len("projected vector", self.dim(), x.len())?;
        self.check_rank(k)?;
        let centered = DVector::from_column_slice(x) - &self.mean;
        Ok(self.basis.columns(0, k).tr_mul(&centered))
    }

    /// [`Self::project`] applied to every column of `data`.
    pub fn project_columns(&self, data: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
        check_len("projected vector", self.dim(), data.nrows())?;
        self.check_rank(k)?;
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        Ok(self.basis.columns(0, k).transpose() * centered)
    }

    /// `μ + V[:, ..len] α`.
    pub fn reconstruct(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        if alpha.len() > self.rank() {
            return Err(Error::invalid(format!(
                "{} coefficients for a rank-{} basis",
                alpha.len(),
                self.rank()
            )));
        }
        Ok(&self.mean + self.basis.columns(0, alpha.len()) * alpha)
    }

    /// Prior variances `δ_i² / n` of the first `k` coefficients.
    pub fn variances(&self, k: usize) -> DVector<f64> {
        let n = self.samples as f64;
        self.singular_values.rows(0, k).map(|d| d * d / n)
    }

    /// Independent `N(0, temperature² δ_i² / n)` draws.
    pub fn sample(&self, k: usize, seed: u64, temperature: f64) -> Result<DVector<f64>> {
        self.check_rank(k)?;
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature {temperature} must be finite and >= 0")));
        }
        let mut rng = rng::rng(seed);
        let var = self.variances(k);
        Ok(DVector::from_iterator(
            k,
            var.iter().map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                temperature * v.sqrt() * z
            }),
        ))
    }
}

/// Separate geometry and color PCA models on a shared topology.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    pub geometry: PcaBasis,
    pub texture: PcaBasis,
    pub k_g: usize,
    pub k_t: usize,
}

impl MorphableModel {
    /// Fits both spaces to `3m x n` data matrices with one face per column.
    pub fn from_matrices(geometry: &DMatrix<f64>, texture: &DMatrix<f64>, k_g: usize, k_t: usize) -> Result<Self> {
        check_len("texture sample count", geometry.ncols(), texture.ncols())?;
        check_len("texture dimension", geometry.nrows(), texture.nrows())?;
        let geometry = PcaBasis::fit(geometry)?;
        let texture = PcaBasis::fit(texture)?;
        geometry.check_rank(k_g)?;
        texture.check_rank(k_t)?;
        Ok(Self {
            geometry,
            texture,
            k_g,
            k_t,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.geometry.dim() / 3
    }

    pub fn samples(&self) -> usize {
        self.geometry.samples
    }

    pub fn rank(&self) -> usize {
        self.geometry.rank()
    }

    pub fn basis(&self, space: Space) -> Result<&PcaBasis> {
        match space {
            Space::Geometry => Ok(&self.geometry),
            Space::Texture => Ok(&self.texture),
            Space::Joint => Err(Error::invalid("a morphable model has no joint space")),
        }
    }

    pub fn project(&self, space: Space, x: &[f64], k: usize) -> Result<CoefficientVector> {
        Ok(CoefficientVector::new(self.basis(space)?.project(x, k)?, space))
    }

    pub fn project_geometry(&self, g: &GeometryVector, k: usize) -> Result<CoefficientVector> {
        self.project(Space::Geometry, g.values(), k)
    }

    pub fn project_texture(&self, t: &VertexColorVector, k: usize) -> Result<CoefficientVector> {
        self.project(Space::Texture, t.values(), k)
    }

    pub fn reconstruct(&self, alpha: &CoefficientVector) -> Result<DVector<f64>> {
        self.basis(alpha.space)?.reconstruct(&alpha.values)
    }

    pub fn reconstruct_geometry(&self, alpha: &CoefficientVector) -> Result<GeometryVector> {
        if alpha.space != Space::Geometry {
            return Err(Error::invalid(format!("expected geometry coefficients, got {:?}", alpha.space)));
        }
        GeometryVector::new(self.geometry.reconstruct(&alpha.values)?.as_slice().to_vec())
    }

    /// Color reconstruction clamped into `[0, 1]`.
    pub fn reconstruct_texture(&self, alpha: &CoefficientVector) -> Result<VertexColorVector> {
        if alpha.space != Space::Texture {
            return Err(Error::invalid(format!("expected texture coefficients, got {:?}", alpha.space)));
        }
        VertexColorVector::clamped(self.texture.reconstruct(&alpha.values)?.as_slice().to_vec())
    }

    pub fn sample_coefficients(&self, space: Space, k: usize, seed: u64, temperature: f64) -> Result<CoefficientVector> {
        Ok(CoefficientVector::new(self.basis(space)?.sample(k, seed, temperature)?, space))
    }
}

pub fn build_model(corpus: &AlignedCorpus, k_g: usize, k_t: usize) -> Result<MorphableModel> {
    MorphableModel::from_matrices(&corpus.geometry_matrix(), &corpus.color_matrix(), k_g, k_t)
}

/// PCA of geometry stacked over color, each centered block divided by its Frobenius norm.
///
/// `U_g` and `U_t` (the top and bottom halves of the basis) are not orthogonal on their own.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    /// Vertically stacked raw means `[μ_g; μ_t]`.
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub geometry_scale: f64,
    pub texture_scale: f64,
    pub samples: usize,
}

impl JointModel {
    /// Length of one block (`3m`).
    pub fn block_dim(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn geometry_block(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.basis.rows(0, self.block_dim())
    }

    pub fn texture_block(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.basis.rows(self.block_dim(), self.block_dim())
    }

    pub fn geometry_mean(&self) -> nalgebra::DVectorView<'_, f64> {
        self.mean.rows(0, self.block_dim())
    }

    pub fn texture_mean(&self) -> nalgebra::DVectorView<'_, f64> {
        self.mean.rows(self.block_dim(), self.block_dim())
    }

    /// `(t − μ_t) / s_t`.
    pub fn standardize_texture(&self, t: &[f64]) -> Result<DVector<f64>> {
        check_len("joint texture", self.block_dim(), t.len())?;
        Ok((DVector::from_column_slice(t) - self.texture_mean()) / self.texture_scale)
    }

    pub fn project(&self, g: &[f64], t: &[f64]) -> Result<CoefficientVector> {
        check_len("joint geometry", self.block_dim(), g.len())?;
        let gs = (DVector::from_column_slice(g) - self.geometry_mean()) / self.geometry_scale;
        let ts = self.standardize_texture(t)?;
        let stacked = DVector::from_iterator(2 * self.block_dim(), gs.iter().chain(ts.iter()).copied());
        Ok(CoefficientVector::new(self.basis.tr_mul(&stacked), Space::Joint))
    }

    /// Un-standardized `(g, t)` for the given joint coefficients.
    pub fn reconstruct(&self, beta: &CoefficientVector) -> Result<(DVector<f64>, DVector<f64>)> {
        if beta.space != Space::Joint || beta.len() > self.rank() {
            return Err(Error::invalid("joint reconstruction needs at most rank joint coefficients"));
        }
        let k = beta.len();
        let g = self.geometry_mean() + self.geometry_block().columns(0, k) * &beta.values * self.geometry_scale;
        let t = self.texture_mean() + self.texture_block().columns(0, k) * &beta.values * self.texture_scale;
        Ok((g, t))
    }
}

fn frobenius_scale(centered: &DMatrix<f64>) -> f64 {
    let s = centered.norm();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

pub fn build_joint_model(corpus: &AlignedCorpus) -> Result<JointModel> {
    joint_model_from_matrices(corpus.geometry_matrix(), corpus.color_matrix())
}

pub fn joint_model_from_matrices(g: DMatrix<f64>, t: DMatrix<f64>) -> Result<JointModel> {
    let n = g.ncols();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    check_len("joint texture sample count", n, t.ncols())?;
    check_len("joint texture dimension", g.nrows(), t.nrows())?;
    let (mu_g, mu_t) = (g.column_mean(), t.column_mean());
    let center = |mut x: DMatrix<f64>, mu: &DVector<f64>| {
        for mut col in x.column_iter_mut() {
            col -= mu;
        }
        x
    };
    let dg = center(g, &mu_g);
    let dt = center(t, &mu_t);
    let (s_g, s_t) = (frobenius_scale(&dg), frobenius_scale(&dt));
    let dim = dg.nrows();
    let mut stacked = DMatrix::zeros(2 * dim, n);
    stacked.rows_mut(0, dim).copy_from(&(dg / s_g));
    stacked.rows_mut(dim, dim).copy_from(&(dt / s_t));
    if stacked.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite corpus data".into()));
    }
    let (basis, singular_values) = thin_svd(&stacked);
    let mean = DVector::from_iterator(2 * dim, mu_g.iter().chain(mu_t.iter()).copied());
    Ok(JointModel {
        mean,
        basis,
        singular_values,
        geometry_scale: s_g,
        texture_scale: s_t,
        samples: n,
    })
}
