//! Binary model containers.
//!
//! ```text
//! "MM3D" | version u32 | m n r k_g k_t (u64) |
//!   μ_g[3m] μ_t[3m] δ_g[r] δ_t[r] V_g[3m·r] V_t[3m·r]       (f64, matrices column-major)
//! "MMJT" | version u32 | m n r (u64) | s_g s_t (f64) |
//!   μ_M[6m] δ_M[r] U[6m·r]
//! ```

use std::fs;
use std::path::Path;

use super::{JointModel, MorphableModel, PcaBasis};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"MM3D";
const JOINT_MAGIC: &[u8; 4] = b"MMJT";

pub fn write_model(w: &mut Writer, model: &MorphableModel) {
    let (g, t) = (&model.geometry, &model.texture);
    w.magic(MODEL_MAGIC);
    w.u64(model.vertex_count());
    w.u64(g.samples);
    w.u64(g.rank());
    w.u64(model.k_g);
    w.u64(model.k_t);
    w.f64s(g.mean.as_slice());
    w.f64s(t.mean.as_slice());
    w.f64s(g.singular_values.as_slice());
    w.f64s(t.singular_values.as_slice());
    w.matrix(&g.basis);
    w.matrix(&t.basis);
}

pub fn read_model(r: &mut Reader<'_>) -> Result<MorphableModel> {
    r.expect_magic(MODEL_MAGIC)?;
    let (m, n, rank, k_g, k_t) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    if rank != n.min(3 * m) || k_g == 0 || k_g > rank || k_t == 0 || k_t > rank {
        return Err(Error::Format(format!(
            "inconsistent model dims m={m} n={n} r={rank} k_g={k_g} k_t={k_t}"
        )));
    }
    let dim = 3 * m;
    let mu_g = r.vector(dim)?;
    let mu_t = r.vector(dim)?;
    let sv_g = r.vector(rank)?;
    let sv_t = r.vector(rank)?;
    let v_g = r.matrix(dim, rank)?;
    let v_t = r.matrix(dim, rank)?;
    Ok(MorphableModel {
        geometry: PcaBasis {
            mean: mu_g,
            basis: v_g,
            singular_values: sv_g,
            samples: n,
        },
        texture: PcaBasis {
            mean: mu_t,
            basis: v_t,
            singular_values: sv_t,
            samples: n,
        },
        k_g,
        k_t,
    })
}

pub fn save_model(path: &Path, model: &MorphableModel) -> Result<()> {
    let mut w = Writer::new();
    write_model(&mut w, model);
    fs::write(path, w.into_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a complete file; partial or trailing data is an error.
pub fn load_model(path: &Path) -> Result<MorphableModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes);
    let model = read_model(&mut r)?;
    r.finish()?;
    Ok(model)
}

pub(crate) fn write_joint(w: &mut Writer, jm: &JointModel) {
    w.magic(JOINT_MAGIC);
    w.u64(jm.block_dim() / 3);
    w.u64(jm.samples);
    w.u64(jm.rank());
    w.f64(jm.geometry_scale);
    w.f64(jm.texture_scale);
    w.f64s(jm.mean.as_slice());
    w.f64s(jm.singular_values.as_slice());
    w.matrix(&jm.basis);
}

pub(crate) fn read_joint(r: &mut Reader<'_>) -> Result<JointModel> {
    r.expect_magic(JOINT_MAGIC)?;
    let (m, n, rank) = (r.u64()?, r.u64()?, r.u64()?);
    if rank != n.min(6 * m) {
        return Err(Error::Format(format!("inconsistent joint dims m={m} n={n} r={rank}")));
    }
    let (s_g, s_t) = (r.f64()?, r.f64()?);
    if !(s_g > 0.0 && s_t > 0.0) {
        return Err(Error::Format(format!("block scales must be positive, got {s_g}, {s_t}")));
    }
    let mean = r.vector(6 * m)?;
    let singular_values = r.vector(rank)?;
    let basis = r.matrix(6 * m, rank)?;
    Ok(JointModel {
        mean,
        basis,
        singular_values,
        geometry_scale: s_g,
        texture_scale: s_t,
        samples: n,
    })
}

pub fn save_joint_model(path: &Path, jm: &JointModel) -> Result<()> {
    let mut w = Writer::new();
    write_joint(&mut w, jm);
    fs::write(path, w.into_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_joint_model(path: &Path) -> Result<JointModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes);
    let jm = read_joint(&mut r)?;
    r.finish()?;
    Ok(jm)
}
