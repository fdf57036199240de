mod common;

use facemorph::corpus::AlignedCorpus;
use facemorph::coupling::neutralize_corpus;
use facemorph::morphable::build_model;
use facemorph::synthetic::{gen_synthetic_corpus, SyntheticCorpusSpec};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn one_latent_without_noise_plants_a_perfect_correlation() {
    let spec = SyntheticCorpusSpec {
        identities: 60,
        expressions: 1,
        latent_dim: 1,
        noise: 0.0,
        template_grid: 16,
        seed: 4,
        ..Default::default()
    };
    let (corpus, latents) = gen_synthetic_corpus(&spec).unwrap();
    assert_eq!(latents.values.ncols(), 60);
    let model = build_model(&corpus, 1, 1).unwrap();
    let mut a_g = Vec::new();
    let mut a_t = Vec::new();
    for e in &corpus.entries {
        a_g.push(model.project_geometry(&e.geometry, 1).unwrap().values[0]);
        a_t.push(model.project_texture(&e.colors, 1).unwrap().values[0]);
    }
    let r = pearson(&a_g, &a_t);
    assert!(r.abs() > 0.99, "r = {r}");
    let z: Vec<f64> = latents.values.row(0).iter().copied().collect();
    assert!(pearson(&z, &a_g).abs() > 0.99);
}

#[test]
fn same_seed_gives_identical_corpus_files() {
    let spec = SyntheticCorpusSpec { identities: 6, expressions: 3, template_grid: 16, seed: 9, ..Default::default() };
    let (a, la) = gen_synthetic_corpus(&spec).unwrap();
    let (b, lb) = gen_synthetic_corpus(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(la.values, lb.values);

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a"), dir.path().join("b"));
    a.save(&pa).unwrap();
    b.save(&pb).unwrap();
    for f in ["topology.obj", "topology.lmk", "entries.bin"] {
        assert_eq!(std::fs::read(pa.join(f)).unwrap(), std::fs::read(pb.join(f)).unwrap(), "{f}");
    }
    let back = AlignedCorpus::load(&pa).unwrap();
    assert_eq!(back.entries, a.entries);
    assert_eq!(back.topology.faces(), a.topology.faces());
    assert_eq!(back.topology.landmark_indices(), a.topology.landmark_indices());
    for (p, q) in back.topology.uv().iter().zip(a.topology.uv()) {
        assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9, "{p:?} {q:?}");
    }

    let other = SyntheticCorpusSpec { seed: 10, ..spec };
    assert!(gen_synthetic_corpus(&other).unwrap().0.entries != a.entries);
}

#[test]
fn expression_layout_and_neutral_only_corpus() {
    let spec = SyntheticCorpusSpec { identities: 4, expressions: 5, template_grid: 16, ..Default::default() };
    let (corpus, _) = gen_synthetic_corpus(&spec).unwrap();
    assert_eq!(corpus.len(), 20);
    assert_eq!(corpus.identities().len(), 4);
    corpus.check_neutral().unwrap();
    let exprs: Vec<&str> = corpus.entries[..5].iter().map(|e| e.expression.as_str()).collect();
    assert_eq!(exprs, ["neutral", "smile", "frown", "surprise", "squint"]);
    assert!(corpus.entries.iter().all(|e| e.colors.values().iter().all(|c| (0.0..=1.0).contains(c))));

    let single = SyntheticCorpusSpec { expressions: 1, ..spec };
    let (corpus, _) = gen_synthetic_corpus(&single).unwrap();
    assert!(corpus.entries.iter().all(|e| e.is_neutral()));
    assert_eq!(neutralize_corpus(&corpus).unwrap(), corpus);
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SyntheticCorpusSpec { latent_dim: 0, ..Default::default() },
        SyntheticCorpusSpec { noise: -0.1, ..Default::default() },
        SyntheticCorpusSpec { mixing: Some(vec![vec![f64::NAN; 10]; 10]), ..Default::default() },
        SyntheticCorpusSpec { mixing: Some(vec![vec![1.0; 3]; 2]), ..Default::default() },
    ];
    for spec in bad {
        assert!(gen_synthetic_corpus(&spec).is_err(), "{spec:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("spec.json");
    std::fs::write(&p, r#"{"identities": 7, "noise": 0.0}"#).unwrap();
    let spec = SyntheticCorpusSpec::load(&p).unwrap();
    assert_eq!((spec.identities, spec.noise, spec.expressions), (7, 0.0, 5));
    std::fs::write(&p, r#"{"identity": 7}"#).unwrap();
    assert!(SyntheticCorpusSpec::load(&p).is_err());
}
