use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::mesh::{GeometryVector, VertexColorVector};
use crate::morphable::{MorphableModel, PcaBasis, Space};

pub const DEFAULT_DESCRIPTOR_RANK: usize = 50;

/// A face to describe: full geometry and colors, or colors alone (e.g. a generated
/// texture without geometry), which uses only the texture block.
#[derive(Debug, Clone, Copy)]
pub enum DescriptorInput<'a> {
    Face(&'a GeometryVector, &'a VertexColorVector),
    Texture(&'a VertexColorVector),
}

fn standardized(basis: &PcaBasis, x: &[f64], k: usize) -> Result<DVector<f64>> {
    let alpha = basis.project(x, k)?;
    let var = basis.variances(k);
    let top = var.max();
    // directions without training variance carry no identity information
    Ok(DVector::from_fn(k, |i, _| if var[i] > 1e-12 * top { alpha[i] / var[i].sqrt() } else { 0.0 }))
}

/// Unit-norm stand-in identity descriptor: the first `k_id` texture and geometry
/// coefficients, each divided by its training standard deviation.
pub fn identity_descriptor(input: DescriptorInput<'_>, model: &MorphableModel, k_id: usize) -> Result<DVector<f64>> {
    if k_id == 0 || k_id > model.rank() {
        return Err(Error::invalid(format!("k_id = {k_id} outside 1..={}", model.rank())));
    }
    let parts = match input {
        DescriptorInput::Face(g, t) => vec![
            standardized(model.basis(Space::Texture)?, t.values(), k_id)?,
            standardized(model.basis(Space::Geometry)?, g.values(), k_id)?,
        ],
        DescriptorInput::Texture(t) => vec![standardized(model.basis(Space::Texture)?, t.values(), k_id)?],
    };
    let v = DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()));
    let norm = v.norm();
    if !(norm > 0.0) {
        return Err(Error::Numerical("zero identity descriptor (face at the model mean)".into()));
    }
    Ok(v / norm)
}

/// Descriptors with ids, in input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorSet {
    pub ids: Vec<String>,
    pub vectors: Vec<DVector<f64>>,
}

impl DescriptorSet {
    pub fn new(ids: Vec<String>, vectors: Vec<DVector<f64>>) -> Result<Self> {
        check_len("descriptor ids", vectors.len(), ids.len())?;
        if let Some(first) = vectors.first() {
            for v in &vectors {
                check_len("descriptor length", first.len(), v.len())?;
            }
        }
        Ok(Self { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Reads `id v1 v2 … vd` lines; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            let mut fields = line.split_whitespace();
            let id = fields.next().expect("non-empty line").to_string();
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if values.is_empty() {
                return Err(parse_err("descriptor has no values".into()));
            }
            if let Some(first) = vectors.first() {
                let first: &DVector<f64> = first;
                if first.len() != values.len() {
                    return Err(parse_err(format!("expected {} values, got {}", first.len(), values.len())));
                }
            }
            ids.push(id);
            vectors.push(DVector::from_vec(values));
        }
        Self::new(ids, vectors)
    }

    /// Writes shortest round-trip decimal values, so loading gives identical bits.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            out.push_str(id);
            for x in v.iter() {
                out.push_str(&format!(" {x}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Descriptors for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let vectors = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.vectors[i].clone())
                    .ok_or_else(|| Error::MissingDescriptor(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids.to_vec(), vectors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceCurve {
    pub label: String,
    /// Nearest-reference distance of every query, ascending.
    pub distances: Vec<f64>,
    /// `i / (n − 1)`, or `[0]` for a single query.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DistanceCurves {
    pub curves: Vec<DistanceCurve>,
}

impl DistanceCurves {
    pub fn get(&self, label: &str) -> Option<&DistanceCurve> {
        self.curves.iter().find(|c| c.label == label)
    }
}

/// For every query, the L2 distance to its nearest reference, skipping references with
/// the query's id when `exclude_self` is set.
pub fn nn_distances(queries: &DescriptorSet, references: &DescriptorSet, exclude_self: bool) -> Result<Vec<f64>> {
    if queries.is_empty() || references.is_empty() {
        return Err(Error::invalid("descriptor sets must be non-empty"));
    }
    check_len("descriptor length", references.vectors[0].len(), queries.vectors[0].len())?;
    queries
        .ids
        .iter()
        .zip(&queries.vectors)
        .map(|(id, q)| {
            references
                .ids
                .iter()
                .zip(&references.vectors)
                .filter(|(rid, _)| !(exclude_self && *rid == id))
                .map(|(_, r)| (q - r).norm())
                .min_by(f64::total_cmp)
                .ok_or_else(|| Error::invalid(format!("no reference left for {id} after excluding itself")))
        })
        .collect()
}

pub fn nn_distance_curve(label: &str, queries: &DescriptorSet, references: &DescriptorSet, exclude_self: bool) -> Result<DistanceCurve> {
    let mut distances = nn_distances(queries, references, exclude_self)?;
    distances.sort_by(f64::total_cmp);
    let n = distances.len();
    let x = (0..n).map(|i| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 }).collect();
    Ok(DistanceCurve {
        label: label.to_string(),
        distances,
        x,
    })
}
