use rand::seq::SliceRandom;
use serde::Serialize;

use crate::corpus::AlignedCorpus;
use crate::coupling::{fit_coupling, CouplingOptions, TextureInput, Variant};
use crate::error::{Error, Result};
use crate::morphable::{build_model, DEFAULT_RANK};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    /// Ranks of each fold's model, clamped to the fold's training rank.
    pub k_g: usize,
    pub k_t: usize,
    pub coupling: CouplingOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            k_g: DEFAULT_RANK,
            k_t: DEFAULT_RANK,
            coupling: CouplingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub method: String,
    pub folds: usize,
    pub seed: u64,
    /// Mean error of the held-out faces of each fold.
    pub fold_errors: Vec<f64>,
    /// `‖g_r − g_t‖₂` for every corpus entry, in corpus order.
    pub face_errors: Vec<f64>,
    /// Average of `face_errors`.
    pub mean_error: f64,
    pub fold_identities: Vec<Vec<String>>,
}

/// Identities shuffled by `seed` and dealt round-robin into `folds` groups.
pub fn assign_folds(corpus: &AlignedCorpus, folds: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    let mut ids = corpus.identities();
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if ids.len() < folds {
        return Err(Error::invalid(format!("{} identities for {folds} folds", ids.len())));
    }
    ids.shuffle(&mut rng::rng_for(seed, &[0]));
    let mut out = vec![Vec::new(); folds];
    for (i, id) in ids.into_iter().enumerate() {
        out[i % folds].push(id);
    }
    Ok(out)
}

/// Cross-validated geometry error of one coupling variant.
pub fn cross_validate(corpus: &AlignedCorpus, variant: Variant, options: &CvOptions) -> Result<CvReport> {
    Ok(cross_validate_methods(corpus, &[variant], options)?.remove(0))
}

/// Cross-validated errors of several variants; each fold's model is built once and shared.
pub fn cross_validate_methods(corpus: &AlignedCorpus, variants: &[Variant], options: &CvOptions) -> Result<Vec<CvReport>> {
    let folds = assign_folds(corpus, options.folds, options.seed)?;
    let n = corpus.len();
    let mut face_errors = vec![vec![f64::NAN; n]; variants.len()];
    let mut fold_errors = vec![Vec::with_capacity(folds.len()); variants.len()];
    for fold in &folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold.contains(&corpus.entries[i].identity));
        let train_corpus = corpus.subset(&train);
        let rank = train.len().min(corpus.dim());
        let model = build_model(&train_corpus, options.k_g.min(rank), options.k_t.min(rank))?;
        for (v, &variant) in variants.iter().enumerate() {
            let coupling = fit_coupling(&train_corpus, &model, variant, &options.coupling)?;
            let mut sum = 0.0;
            for &i in &test {
                let entry = &corpus.entries[i];
                let seed = rng::split(options.seed, i as u64 + 1);
                let g = coupling.synthesize_geometry(TextureInput::Colors(&entry.colors), seed)?;
                let err = g.distance(&entry.geometry);
                face_errors[v][i] = err;
                sum += err;
            }
            fold_errors[v].push(sum / test.len() as f64);
        }
    }
    Ok(variants
        .iter()
        .zip(face_errors)
        .zip(fold_errors)
        .map(|((variant, face_errors), fold_errors)| CvReport {
            method: variant.short_name().to_string(),
            folds: options.folds,
            seed: options.seed,
            mean_error: face_errors.iter().sum::<f64>() / n as f64,
            fold_errors,
            face_errors,
            fold_identities: folds.clone(),
        })
        .collect())
}
