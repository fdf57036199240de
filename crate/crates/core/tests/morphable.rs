mod common;

use common::{corpus_from, random_corpus, random_matrix, rng};
use facemorph::binio::Writer;
use facemorph::morphable::{
    self, build_joint_model, build_model, joint_model_from_matrices, orthonormality_error, CoefficientVector,
    MorphableModel, PcaBasis, Space,
};
use facemorph::Error;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mu = x.column_mean();
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        col -= &mu;
    }
    c
}

/// Eigenpairs of the `3m x 3m` scatter matrix, descending, sign-normalized like the model.
fn scatter_oracle(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = centered(x);
    let eig = SymmetricEigen::new(&d * d.transpose());
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(d.nrows(), idx.len());
    for (c, &i) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        vecs.set_column(c, &v);
    }
    (vals, vecs)
}

#[test]
fn identical_faces_have_zero_variance() {
    let col = random_matrix(12, 1, 0.0, 1.0, 5);
    let x = DMatrix::from_fn(12, 2, |r, _| col[r]);
    let basis = PcaBasis::fit(&x).unwrap();
    assert!(basis.singular_values.iter().all(|&s| s == 0.0));
    assert!((&basis.mean - col.column(0)).amax() < 1e-15);
    assert!(orthonormality_error(&basis.basis) < 1e-12);
}

#[test]
fn three_sample_basis_matches_scatter_eigendecomposition() {
    // m = 2 vertices, n = 3 samples: 6x6 scatter oracle
    let x = random_matrix(6, 3, -1.0, 1.0, 11);
    let basis = PcaBasis::fit(&x).unwrap();
    let (vals, vecs) = scatter_oracle(&x);
    assert_eq!(basis.rank(), 3);
    // centered rank is 2; the third direction is null
    for i in 0..2 {
        assert!((basis.singular_values[i].powi(2) - vals[i]).abs() < 1e-9);
        assert!((basis.basis.column(i) - vecs.column(i)).amax() < 1e-9);
    }
    assert!(basis.singular_values[2].abs() < 1e-9);
    assert!(orthonormality_error(&basis.basis) < 1e-8);
}

#[test]
fn energy_identity() {
    for seed in 0..5 {
        let x = random_matrix(30, 9, -2.0, 2.0, seed);
        let basis = PcaBasis::fit(&x).unwrap();
        let energy: f64 = basis.singular_values.iter().map(|s| s * s).sum();
        let frob = centered(&x).norm_squared();
        assert!(((energy - frob) / frob).abs() < 1e-6);
        let s = basis.singular_values.as_slice();
        assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn build_errors() {
    let corpus = random_corpus(50, 1, 0);
    assert!(matches!(build_model(&corpus, 1, 1), Err(Error::InvalidInput(_))));
    let corpus = random_corpus(50, 4, 0);
    assert!(build_model(&corpus, 5, 1).is_err());
    assert!(build_model(&corpus, 0, 1).is_err());
    let mut g = random_matrix(6, 3, 0.0, 1.0, 1);
    g[(0, 0)] = f64::NAN;
    assert!(matches!(PcaBasis::fit(&g), Err(Error::Numerical(_))));
}

fn toy_model(seed: u64) -> MorphableModel {
    let g = random_matrix(12, 6, -1.0, 1.0, seed);
    let t = random_matrix(12, 6, 0.0, 1.0, seed + 100);
    MorphableModel::from_matrices(&g, &t, 6, 6).unwrap()
}

#[test]
fn projection_basics() {
    let model = toy_model(1);
    let mu = model.geometry.mean.as_slice().to_vec();
    let zero = model.project(Space::Geometry, &mu, 6).unwrap();
    assert!(zero.values.amax() < 1e-14);
    let c = 0.37;
    let shifted: Vec<f64> = (&model.geometry.mean + model.geometry.basis.column(0) * c).as_slice().to_vec();
    let alpha = model.project(Space::Geometry, &shifted, 4).unwrap();
    assert!((alpha.values[0] - c).abs() < 1e-12);
    assert!(alpha.values.rows(1, 3).amax() < 1e-12);
    assert!(model.project(Space::Geometry, &mu, 7).is_err());
    assert!(model.project(Space::Geometry, &mu[..6], 2).is_err());
}

#[test]
fn full_rank_round_trip() {
    let g = random_matrix(12, 6, -1.0, 1.0, 3);
    let model = MorphableModel::from_matrices(&g, &g.map(|v| 0.5 + 0.4 * v), 6, 6).unwrap();
    for j in 0..6 {
        let x = g.column(j).into_owned();
        let alpha = model.project(Space::Geometry, x.as_slice(), 6).unwrap();
        let recon = model.reconstruct(&alpha).unwrap();
        assert!((&recon - &x).norm() / x.norm() < 1e-8);
    }
}

#[test]
fn reconstruct_is_affine_and_checks_space() {
    let model = toy_model(4);
    let mu = &model.texture.mean;
    let zero = CoefficientVector::new(DVector::zeros(3), Space::Texture);
    assert_eq!(&model.reconstruct(&zero).unwrap(), mu);
    let a = CoefficientVector::new(DVector::from_vec(vec![0.3, -0.1, 0.2]), Space::Texture);
    let b = CoefficientVector::new(DVector::from_vec(vec![-0.5, 0.4, 0.05]), Space::Texture);
    let ab = CoefficientVector::new(&a.values + &b.values, Space::Texture);
    let lhs = model.reconstruct(&a).unwrap() + model.reconstruct(&b).unwrap() - mu;
    assert!((lhs - model.reconstruct(&ab).unwrap()).amax() < 1e-10);
    assert!(model.reconstruct_geometry(&a).is_err());
    let joint = CoefficientVector::new(DVector::zeros(2), Space::Joint);
    assert!(model.reconstruct(&joint).is_err());
}

#[test]
fn held_out_error_is_monotone_in_rank() {
    let train = random_matrix(60, 20, -1.0, 1.0, 8);
    let model = MorphableModel::from_matrices(&train, &train.map(|v| v.abs()), 20, 20).unwrap();
    for seed in 0..5 {
        let x = random_matrix(60, 1, -1.0, 1.0, 1000 + seed);
        let mut prev = f64::INFINITY;
        for k in 1..=20 {
            let alpha = model.project(Space::Geometry, x.as_slice(), k).unwrap();
            let err = (model.reconstruct(&alpha).unwrap() - x.column(0)).norm();
            assert!(err <= prev + 1e-12, "k={k}: {err} > {prev}");
            prev = err;
        }
    }
}

#[test]
fn projection_is_least_squares_optimal() {
    let train = random_matrix(45, 12, -1.0, 1.0, 21);
    let model = MorphableModel::from_matrices(&train, &train.map(|v| v.abs()), 12, 12).unwrap();
    let mut r = rng(22);
    for trial in 0..20 {
        let x = random_matrix(45, 1, -1.0, 1.0, 300 + trial);
        let k = r.random_range(1..=12);
        let alpha = model.project(Space::Geometry, x.as_slice(), k).unwrap();
        let best = (model.reconstruct(&alpha).unwrap() - x.column(0)).norm();
        for _ in 0..20 {
            let delta = DVector::from_fn(k, |_, _| r.random_range(-0.1..0.1));
            let perturbed = CoefficientVector::new(&alpha.values + delta, Space::Geometry);
            let err = (model.reconstruct(&perturbed).unwrap() - x.column(0)).norm();
            assert!(err >= best);
        }
    }
}

#[test]
fn coefficient_sampling() {
    let model = toy_model(9);
    let z = model.sample_coefficients(Space::Geometry, 5, 3, 0.0).unwrap();
    assert!(z.values.iter().all(|&v| v == 0.0));
    let a = model.sample_coefficients(Space::Texture, 5, 42, 1.0).unwrap();
    let b = model.sample_coefficients(Space::Texture, 5, 42, 1.0).unwrap();
    assert_eq!(a, b);
    assert!(model.sample_coefficients(Space::Texture, 7, 42, 1.0).is_err());
    assert!(model.sample_coefficients(Space::Joint, 2, 42, 1.0).is_err());
    assert!(model.sample_coefficients(Space::Texture, 2, 42, -1.0).is_err());
}

#[test]
fn build_is_deterministic_and_orthonormal() {
    let corpus = random_corpus(60, 15, 2);
    let a = build_model(&corpus, 10, 10).unwrap();
    let b = build_model(&corpus, 10, 10).unwrap();
    assert_eq!(a, b);
    assert!(orthonormality_error(&a.geometry.basis) < 1e-8);
    assert!(orthonormality_error(&a.texture.basis) < 1e-8);
}

#[test]
fn joint_model_round_trip_and_energy() {
    let g = random_matrix(12, 6, -1.0, 1.0, 31);
    let t = random_matrix(12, 6, 0.0, 1.0, 32);
    let jm = joint_model_from_matrices(g.clone(), t.clone()).unwrap();
    assert!(orthonormality_error(&jm.basis) < 1e-8);
    let energy: f64 = jm.singular_values.iter().map(|s| s * s).sum();
    assert!((energy - 2.0).abs() < 1e-6);
    for j in 0..6 {
        let beta = jm.project(g.column(j).as_slice(), t.column(j).as_slice()).unwrap();
        let (rg, rt) = jm.reconstruct(&beta).unwrap();
        assert!((&rg - g.column(j)).norm() / g.column(j).norm() < 1e-8);
        assert!((&rt - t.column(j)).norm() / t.column(j).norm() < 1e-8);
    }
    // stacking reproduces U
    let dim = jm.block_dim();
    assert_eq!(jm.geometry_block().nrows() + jm.texture_block().nrows(), 2 * dim);
    assert_eq!(jm.texture_block().row(0), jm.basis.row(dim));
}

#[test]
fn joint_model_symmetric_blocks() {
    let g = random_matrix(12, 5, 0.0, 1.0, 41);
    let jm = joint_model_from_matrices(g.clone(), g).unwrap();
    assert_eq!(jm.geometry_scale, jm.texture_scale);
    // only the directions the data spans are determined
    let rank = 4;
    let diff = jm.geometry_block().columns(0, rank) - jm.texture_block().columns(0, rank);
    assert!(diff.amax() < 1e-8);
}

#[test]
fn joint_model_needs_two_samples() {
    let corpus = random_corpus(50, 1, 3);
    assert!(build_joint_model(&corpus).is_err());
}

#[test]
fn container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = random_corpus(50, 8, 4);
    let model = build_model(&corpus, 5, 3).unwrap();
    let path = dir.path().join("m.mm3d");
    morphable::save_model(&path, &model).unwrap();
    assert_eq!(morphable::load_model(&path).unwrap(), model);

    let jm = build_joint_model(&corpus).unwrap();
    let jpath = dir.path().join("m.mmjt");
    morphable::save_joint_model(&jpath, &jm).unwrap();
    assert_eq!(morphable::load_joint_model(&jpath).unwrap(), jm);
    // a joint file is not a morphable model
    assert!(matches!(morphable::load_model(&jpath), Err(Error::Format(_))));
}

#[test]
fn corrupt_magic_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = random_corpus(50, 6, 5);
    let model = build_model(&corpus, 3, 3).unwrap();
    let mut w = Writer::new();
    morphable::write_model(&mut w, &model);
    let bytes = w.into_bytes();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    let path = dir.path().join("bad.mm3d");
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(morphable::load_model(&path), Err(Error::Format(_))));

    let mut r = rng(6);
    for _ in 0..50 {
        let cut = r.random_range(0..bytes.len());
        std::fs::write(&path, &bytes[..cut]).unwrap();
        match morphable::load_model(&path) {
            Err(Error::Truncated { .. }) => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
}

#[test]
fn grouped_corpus_helpers() {
    let g = random_matrix(150, 3, -1.0, 1.0, 7);
    let t = random_matrix(150, 3, 0.0, 1.0, 8);
    let corpus = corpus_from(&g, &t, &["a", "b", "a"], &["smile", "neutral", "neutral"]);
    assert_eq!(corpus.identities(), vec!["a", "b"]);
    assert_eq!(corpus.neutral_index()["a"], 2);
}
