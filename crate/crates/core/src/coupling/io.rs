//! Coupling container.
//!
//! ```text
//! "MMCP" | version u32 | variant u8 | k_g k_t (u64) | embedded MM3D model | topology |
//!   payload
//! topology: m u64 | faces u64 | faces × 3 u64 | uv[2m] f64 | landmarks u64 | indices u64…
//! payload:
//!   random: variances[k_g] | temperature f64
//!   nn:     n u64 | A_t[k_t·n] | A_g[k_g·n]
//!   ml:     k u64 | λ f64 | Σ_β[k] | embedded MMJT model
//!   ls:     ε f64 | W[k_t·k_g]
//! ```

use std::fs;
use std::path::Path;

use super::{CoefficientMatrix, CouplingModel, CouplingPayload, MlCoupling, Variant};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::mesh::TemplateTopology;
use crate::morphable::io::{read_joint, write_joint};
use crate::morphable::{read_model, write_model, Space};

const MAGIC: &[u8; 4] = b"MMCP";

fn write_topology(w: &mut Writer, topo: &TemplateTopology) {
    w.u64(topo.vertex_count());
    w.u64(topo.faces().len());
    for f in topo.faces() {
        for &i in f {
            w.u64(i);
        }
    }
    for uv in topo.uv() {
        w.f64s(uv);
    }
    w.u64(topo.landmark_indices().len());
    for &i in topo.landmark_indices() {
        w.u64(i);
    }
}

fn read_topology(r: &mut Reader<'_>) -> Result<TemplateTopology> {
    let m = r.u64()?;
    let nf = r.u64()?;
    let mut faces = Vec::with_capacity(nf.min(1 << 24));
    for _ in 0..nf {
        faces.push([r.u64()?, r.u64()?, r.u64()?]);
    }
    let uv_flat = r.f64s(2 * m)?;
    let uv = uv_flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let nl = r.u64()?;
    let mut lms = Vec::with_capacity(nl.min(1 << 16));
    for _ in 0..nl {
        lms.push(r.u64()?);
    }
    TemplateTopology::new(m, faces, uv, lms).map_err(|e| Error::Format(format!("embedded topology: {e}")))
}

pub fn save_coupling(path: &Path, cm: &CouplingModel) -> Result<()> {
    let mut w = Writer::new();
    w.magic(MAGIC);
    w.u8(cm.variant().tag());
    w.u64(cm.k_g);
    w.u64(cm.k_t);
    write_model(&mut w, &cm.model);
    write_topology(&mut w, &cm.topology);
    match &cm.payload {
        CouplingPayload::Random { variances, temperature } => {
            w.f64s(variances.as_slice());
            w.f64(*temperature);
        }
        CouplingPayload::NearestNeighbor { texture, geometry } => {
            w.u64(texture.values.ncols());
            w.matrix(&texture.values);
            w.matrix(&geometry.values);
        }
        CouplingPayload::MaxLikelihood(ml) => {
            w.u64(ml.prior_variances.len());
            w.f64(ml.lambda);
            w.f64s(ml.prior_variances.as_slice());
            write_joint(&mut w, &ml.joint);
        }
        CouplingPayload::LeastSquares { w: weights, ridge } => {
            w.f64(*ridge);
            w.matrix(weights);
        }
    }
    fs::write(path, w.into_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_coupling(path: &Path) -> Result<CouplingModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes);
    r.expect_magic(MAGIC)?;
    let variant = Variant::from_tag(r.u8()?)?;
    let (k_g, k_t) = (r.u64()?, r.u64()?);
    let model = read_model(&mut r)?;
    if k_g == 0 || k_g > model.rank() || k_t == 0 || k_t > model.rank() {
        return Err(Error::Format(format!("coupling ranks k_g={k_g} k_t={k_t} exceed the model")));
    }
    let topology = read_topology(&mut r)?;
    if topology.dim() != model.geometry.dim() {
        return Err(Error::Format("embedded topology does not match the model".into()));
    }
    let payload = match variant {
        Variant::Random => CouplingPayload::Random {
            variances: r.vector(k_g)?,
            temperature: r.f64()?,
        },
        Variant::NearestNeighbor => {
            let n = r.u64()?;
            CouplingPayload::NearestNeighbor {
                texture: CoefficientMatrix {
                    values: r.matrix(k_t, n)?,
                    space: Space::Texture,
                },
                geometry: CoefficientMatrix {
                    values: r.matrix(k_g, n)?,
                    space: Space::Geometry,
                },
            }
        }
        Variant::MaxLikelihood => {
            let k = r.u64()?;
            let lambda = r.f64()?;
            let prior_variances = r.vector(k)?;
            let joint = read_joint(&mut r)?;
            if k > joint.rank() || joint.block_dim() != model.geometry.dim() {
                return Err(Error::Format("joint payload does not match the model".into()));
            }
            CouplingPayload::MaxLikelihood(MlCoupling::new(joint, prior_variances, lambda)?)
        }
        Variant::LeastSquares => {
            let ridge = r.f64()?;
            CouplingPayload::LeastSquares {
                w: r.matrix(k_t, k_g)?,
                ridge,
            }
        }
    };
    r.finish()?;
    Ok(CouplingModel {
        model,
        topology,
        k_g,
        k_t,
        payload,
    })
}
