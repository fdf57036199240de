//! Aligned corpus: faces in dense correspondence with the template, and its on-disk container.
//!
//! A corpus directory holds `topology.obj` (template positions, UVs and faces),
//! `topology.lmk` (landmark vertex indices) and `entries.bin`:
//!
//! ```text
//! "MMCR" | version u32 | m u64 | count u64 |
//!   count × ( identity str | expression str | geometry 3m f64 | colors 3m f64 )
//! ```
//!
//! Strings are a u64 byte length followed by UTF-8; all numbers little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::binio::{Reader, Writer};
use crate::error::{check_len, Error, Result};
use crate::mesh::{self, GeometryVector, TemplateTopology, VertexColorVector};

pub const NEUTRAL: &str = "neutral";
const MAGIC: &[u8; 4] = b"MMCR";

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub identity: String,
    pub expression: String,
    pub geometry: GeometryVector,
    pub colors: VertexColorVector,
}

impl CorpusEntry {
    pub fn is_neutral(&self) -> bool {
        self.expression == NEUTRAL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCorpus {
    pub topology: TemplateTopology,
    /// Template positions the entries were aligned from.
    pub reference: GeometryVector,
    pub entries: Vec<CorpusEntry>,
}

impl AlignedCorpus {
    pub fn new(topology: TemplateTopology, reference: GeometryVector, entries: Vec<CorpusEntry>) -> Result<Self> {
        let dim = topology.dim();
        check_len("corpus reference geometry", dim, reference.len())?;
        for e in &entries {
            check_len("corpus entry geometry", dim, e.geometry.len())?;
            check_len("corpus entry colors", dim, e.colors.len())?;
        }
        Ok(Self {
            topology,
            reference,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.topology.dim()
    }

    /// Distinct identities in order of first appearance.
    pub fn identities(&self) -> Vec<String> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for e in &self.entries {
            if seen.insert(e.identity.as_str(), ()).is_none() {
                out.push(e.identity.clone());
            }
        }
        out
    }

    /// Index of the first neutral entry of each identity.
    pub fn neutral_index(&self) -> HashMap<&str, usize> {
        let mut out = HashMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.is_neutral() {
                out.entry(e.identity.as_str()).or_insert(i);
            }
        }
        out
    }

    /// Fails with the first identity (in order of appearance) lacking a neutral entry.
    pub fn check_neutral(&self) -> Result<()> {
        let neutral = self.neutral_index();
        match self.identities().into_iter().find(|id| !neutral.contains_key(id.as_str())) {
            Some(id) => Err(Error::MissingNeutral(id)),
            None => Ok(()),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            topology: self.topology.clone(),
            reference: self.reference.clone(),
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    /// `3m x n` matrix with one geometry per column.
    pub fn geometry_matrix(&self) -> DMatrix<f64> {
        let dim = self.dim();
        DMatrix::from_fn(dim, self.len(), |r, c| self.entries[c].geometry.values()[r])
    }

    pub fn color_matrix(&self) -> DMatrix<f64> {
        let dim = self.dim();
        DMatrix::from_fn(dim, self.len(), |r, c| self.entries[c].colors.values()[r])
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        mesh::save_obj(
            &dir.join("topology.obj"),
            &self.reference.points(),
            self.topology.faces(),
            Some(self.topology.uv()),
            None,
            None,
        )?;
        mesh::write_template_landmarks(&dir.join("topology.lmk"), self.topology.landmark_indices())?;
        let path = dir.join("entries.bin");
        fs::write(&path, self.entries_bytes()).map_err(|e| Error::io(&path, e))
    }

    fn entries_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC);
        w.u64(self.topology.vertex_count());
        w.u64(self.len());
        for e in &self.entries {
            w.str(&e.identity);
            w.str(&e.expression);
            w.f64s(e.geometry.values());
            w.f64s(e.colors.values());
        }
        w.into_bytes()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (topology, reference) = mesh::load_template(&dir.join("topology.obj"), &dir.join("topology.lmk"))?;
        let path = dir.join("entries.bin");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut r = Reader::new(&bytes);
        r.expect_magic(MAGIC)?;
        let m = r.u64()?;
        check_len("corpus vertex count", topology.vertex_count(), m)?;
        let count = r.u64()?;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let identity = r.str()?;
            let expression = r.str()?;
            let geometry = GeometryVector::new(r.f64s(3 * m)?)?;
            let colors = VertexColorVector::new(r.f64s(3 * m)?)?;
            entries.push(CorpusEntry {
                identity,
                expression,
                geometry,
                colors,
            });
        }
        r.finish()?;
        Self::new(topology, reference, entries)
    }
}
