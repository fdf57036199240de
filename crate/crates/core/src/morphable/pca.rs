//! Thin SVD of a tall centered data matrix through its `n x n` Gram matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix, in no particular order.
fn symmetric_eigen(a: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let f = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    match f.self_adjoint_eigen(faer::Side::Lower) {
        Ok(evd) => {
            let (u, s) = (evd.U(), evd.S().column_vector());
            (DVector::from_fn(n, |i, _| s[i]), DMatrix::from_fn(n, n, |i, j| u[(i, j)]))
        }
        Err(_) => {
            let eig = SymmetricEigen::new(a);
            (eig.eigenvalues, eig.eigenvectors)
        }
    }
}

/// Relative eigenvalue floor below which a Gram eigenpair is treated as a null direction.
const NULL_RATIO: f64 = 1e-12;

/// Left singular vectors (`rows x min(rows, cols)`) and singular values, descending.
///
/// Directions the data does not span are completed with an orthonormal basis of the
/// complement and get singular value 0. Each column's largest-magnitude entry is positive.
pub fn thin_svd(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (rows, cols) = x.shape();
    let rank = rows.min(cols);
    let gram = x.transpose() * x;
    let (eigenvalues, eigenvectors) = symmetric_eigen(gram);
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));

    let top = eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .take(rank)
        .take_while(|&i| top > 0.0 && eigenvalues[i] > top * NULL_RATIO)
        .collect();

    let mut singular = DVector::zeros(rank);
    let mut basis = DMatrix::zeros(rows, rank);
    if !kept.is_empty() {
        let mut w = DMatrix::zeros(cols, kept.len());
        for (c, &i) in kept.iter().enumerate() {
            let s = eigenvalues[i].sqrt();
            singular[c] = s;
            w.set_column(c, &(eigenvectors.column(i) / s));
        }
        let mut v = x * w;
        // the Gram route loses orthogonality ~ eps * (s_max / s_i)^2; Cholesky-QR restores it,
        // a second pass only when the first started far from orthogonal
        let (q, departure) = cholesky_orthonormalize(v);
        v = q;
        if departure > 1e-4 {
            v = cholesky_orthonormalize(v).0;
        }
        basis.columns_mut(0, kept.len()).copy_from(&v);
    }
    if kept.len() < rank {
        let complement = orthonormal_complement(&basis.columns(0, kept.len()).into_owned(), rank - kept.len());
        basis.columns_mut(kept.len(), rank - kept.len()).copy_from(&complement);
    }
    fix_signs(&mut basis);
    (basis, singular)
}

/// `V (L^T)^{-1}` where `V^T V = L L^T`; mixes each column only with earlier ones.
/// Also returns `max |VᵀV − I|` before the correction.
fn cholesky_orthonormalize(v: DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let c = v.transpose() * &v;
    let departure = (&c - DMatrix::<f64>::identity(c.nrows(), c.ncols())).amax();
    let Some(chol) = c.cholesky() else { return (v, f64::INFINITY) };
    let lt = chol.l().transpose();
    let eye = DMatrix::identity(lt.nrows(), lt.ncols());
    match lt.solve_upper_triangular(&eye) {
        Some(inv) => (v * inv, departure),
        None => (v, f64::INFINITY),
    }
}

/// `count` orthonormal columns orthogonal to the (orthonormal) columns of `v`, built from
/// the coordinate axes least covered by `v`.
fn orthonormal_complement(v: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let rows = v.nrows();
    let coverage: Vec<f64> = (0..rows).map(|i| v.row(i).norm_squared()).collect();
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| coverage[a].total_cmp(&coverage[b]).then(a.cmp(&b)));
    block_complement(v, &order[..count]).unwrap_or_else(|| sequential_complement(v, &order, count))
}

/// Projects the selected axes off `v` in one block and orthonormalizes them; `None` when
/// the projected axes are too close to dependent.
fn block_complement(v: &DMatrix<f64>, axes: &[usize]) -> Option<DMatrix<f64>> {
    let (rows, k) = v.shape();
    let mut y = DMatrix::zeros(rows, axes.len());
    for (c, &i) in axes.iter().enumerate() {
        y[(i, c)] = 1.0;
    }
    let picked = DMatrix::from_fn(axes.len(), k, |r, j| v[(axes[r], j)]);
    y -= v * picked.transpose();
    let vt = v.transpose();
    for _ in 0..2 {
        let along = &vt * &y;
        y -= v * along;
        let chol = (y.transpose() * &y).cholesky()?;
        if chol.l().diagonal().min() < 0.1 {
            return None;
        }
        let eye = DMatrix::identity(axes.len(), axes.len());
        y *= chol.l().transpose().solve_upper_triangular(&eye)?;
    }
    Some(y)
}

/// Axis by axis, with `v` and earlier picks projected out twice.
fn sequential_complement(v: &DMatrix<f64>, order: &[usize], count: usize) -> DMatrix<f64> {
    let rows = v.nrows();
    let mut out = DMatrix::zeros(rows, count);
    let mut found = 0;
    for &i in order {
        if found == count {
            break;
        }
        let mut y = DVector::zeros(rows);
        y[i] = 1.0;
        for _ in 0..2 {
            let along_v = v.tr_mul(&y);
            y -= v * along_v;
            let prev = out.columns(0, found);
            let along_prev = prev.tr_mul(&y);
            y -= prev * along_prev;
        }
        let norm = y.norm();
        if norm > 0.1 {
            out.set_column(found, &(y / norm));
            found += 1;
        }
    }
    assert_eq!(found, count, "complement dimension exceeds the ambient space");
    out
}

/// Makes each column's largest-magnitude entry (first one on ties) positive.
pub fn fix_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let mut best = 0usize;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// `max |V^T V - I|`.
pub fn orthonormality_error(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}
