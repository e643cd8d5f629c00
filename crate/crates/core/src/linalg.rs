//! Dense linear-algebra helpers shared by the simulation and the reductions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin SVD with a deterministic convention: singular values descending,
/// and each left singular vector flipped so that its largest-magnitude entry
/// is positive (the matching right vector is flipped with it).
#[derive(Debug, Clone)]
pub struct Svd {
    /// m × k left singular vectors.
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    /// n × k right singular vectors (columns, not transposed).
    pub v: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(rows, 0),
            s: Vec::new(),
            v: DMatrix::zeros(cols, 0),
        };
    }
    let dec = m.clone().svd(true, true);
    let u_raw = dec.u.expect("svd requested u");
    let vt_raw = dec.v_t.expect("svd requested v_t");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        dec.singular_values[b]
            .partial_cmp(&dec.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u = DMatrix::zeros(rows, k);
    let mut v = DMatrix::zeros(cols, k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = u_raw.column(src).into_owned();
        let mut vcol = vt_raw.row(src).transpose();
        let pivot = ucol
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1 + 1e-12 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if ucol[pivot] < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
        s.push(dec.singular_values[src]);
    }
    Svd { u, s, v }
}

/// Singular values only, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `n × k` matrix with orthonormal columns (k ≤ n), Haar-distributed via QR
/// of a Gaussian matrix with the R-diagonal sign correction.
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    assert!(k <= n, "cannot draw {k} orthonormal columns in dimension {n}");
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    let g = gaussian_matrix(rng, n, k);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn diag_matrix(rows: usize, cols: usize, diag: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for (i, d) in diag.iter().enumerate().take(rows.min(cols)) {
        m[(i, i)] = *d;
    }
    m
}

/// Largest deviation of `QᵀQ` from the identity.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    max_abs(&(g - DMatrix::identity(q.ncols(), q.ncols())))
}

pub fn argmax(v: &DVector<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}
