#![allow(dead_code)]

use facemorph::corpus::{AlignedCorpus, CorpusEntry};
use facemorph::mesh::{GeometryVector, TemplateTopology, VertexColorVector, LANDMARK_COUNT};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

/// Topology without faces, just enough vertices for the landmark set.
pub fn bare_topology(m: usize) -> TemplateTopology {
    assert!(m >= LANDMARK_COUNT);
    TemplateTopology::new(m, vec![], vec![[0.5, 0.5]; m], (0..LANDMARK_COUNT).collect()).unwrap()
}

/// Corpus from `3m x n` geometry and color columns; entry `i` gets identity `ids[i]`.
pub fn corpus_from(g: &DMatrix<f64>, t: &DMatrix<f64>, ids: &[&str], expressions: &[&str]) -> AlignedCorpus {
    let m = g.nrows() / 3;
    let entries = (0..g.ncols())
        .map(|i| CorpusEntry {
            identity: ids[i].to_string(),
            expression: expressions[i].to_string(),
            geometry: GeometryVector::new(g.column(i).iter().copied().collect()).unwrap(),
            colors: VertexColorVector::new(t.column(i).iter().copied().collect()).unwrap(),
        })
        .collect();
    AlignedCorpus::new(bare_topology(m), GeometryVector::new(vec![0.0; 3 * m]).unwrap(), entries).unwrap()
}

/// Random corpus of `n` neutral faces with distinct identities.
pub fn random_corpus(m: usize, n: usize, seed: u64) -> AlignedCorpus {
    let g = random_matrix(3 * m, n, -1.0, 1.0, seed);
    let t = random_matrix(3 * m, n, 0.0, 1.0, seed + 1);
    let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    corpus_from(&g, &t, &ids, &vec!["neutral"; n])
}
