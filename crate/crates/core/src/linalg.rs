//! Dense numerical kernels shared by every solver in the crate: symmetric
//! eigendecomposition, Cholesky with jitter, Cholesky orthogonalization,
//! Gaussian-kernel similarities and graph Laplacians.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIG_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Smallest,
    Largest,
}

/// `k` eigenpairs of a symmetric matrix. Values ascend; column `i` of
/// `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Eigenpairs for the `k` smallest or largest eigenvalues of `a`.
///
/// `a` is symmetrized as `(a + aᵀ)/2` first. Each eigenvector is signed so
/// that its first component with magnitude above 1e-12 is positive.
pub fn sym_eig(a: ArrayView2<f64>, k: usize, which: Which) -> Result<Eigen> {
    let (n, n2) = a.dim();
    if n != n2 {
        return Err(Error::ShapeMismatch(format!("eigendecomposition of a {n}x{n2} matrix")));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidClusterCount(format!("k = {k} for an {n}x{n} matrix")));
    }
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIG_MAX_ITER)
        .ok_or(Error::ConvergenceFailure(EIG_MAX_ITER))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .total_cmp(&eig.eigenvalues[j])
            .then(i.cmp(&j))
    });
    let chosen = match which {
        Which::Smallest => &order[..k],
        Which::Largest => &order[n - k..],
    };

    let mut values = Array1::zeros(k);
    let mut vectors = Array2::zeros((n, k));
    for (col, &src) in chosen.iter().enumerate() {
        values[col] = eig.eigenvalues[src];
        let v = eig.eigenvectors.column(src);
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |&x| x.signum());
        for i in 0..n {
            vectors[[i, col]] = sign * v[i];
        }
    }
    Ok(Eigen { values, vectors })
}

/// Lower-triangular Cholesky factor together with the diagonal jitter that
/// was needed to obtain it (zero when the plain factorization succeeded).
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub l: Array2<f64>,
    pub jitter: f64,
}

fn try_cholesky(g: ArrayView2<f64>, shift: f64) -> Option<Array2<f64>> {
    let k = g.nrows();
    let max_diag = g.diag().iter().fold(0.0_f64, |m, &x| m.max(x.abs())) + shift;
    let floor = 1e-14 * max_diag;
    let mut l = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        let mut diag = g[[j, j]] + shift;
        for p in 0..j {
            diag -= l[[j, p]] * l[[j, p]];
        }
        if !diag.is_finite() || diag <= floor {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..k {
            let mut s = 0.5 * (g[[i, j]] + g[[j, i]]);
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

/// Cholesky factorization `g = L·Lᵀ`.
///
/// When `g` is numerically singular, `ε·I` is added with `ε` starting at
/// `1e-10·tr(g)/k` and growing tenfold up to `1e-4·tr(g)/k`.
pub fn cholesky(g: ArrayView2<f64>) -> Result<CholeskyFactor> {
    let (k, k2) = g.dim();
    if k != k2 || k == 0 {
        return Err(Error::ShapeMismatch(format!("cholesky of a {k}x{k2} matrix")));
    }
    if let Some(l) = try_cholesky(g, 0.0) {
        return Ok(CholeskyFactor { l, jitter: 0.0 });
    }
    let scale = g.diag().sum() / k as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    let mut eps = 1e-10 * scale;
    let cap = 1e-4 * scale * (1.0 + 1e-9);
    while eps <= cap {
        if let Some(l) = try_cholesky(g, eps) {
            return Ok(CholeskyFactor { l, jitter: eps });
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: eps / 10.0 })
}

/// Inverse of a lower-triangular matrix with nonzero diagonal.
pub fn lower_triangular_inverse(l: ArrayView2<f64>) -> Array2<f64> {
    let k = l.nrows();
    let mut inv = Array2::<f64>::zeros((k, k));
    for col in 0..k {
        inv[[col, col]] = 1.0 / l[[col, col]];
        for i in col + 1..k {
            let mut s = 0.0;
            for p in col..i {
                s += l[[i, p]] * inv[[p, col]];
            }
            inv[[i, col]] = -s / l[[i, i]];
        }
    }
    inv
}

#[derive(Debug, Clone)]
pub struct Orthogonalized {
    /// `c_tilde · h_inv_t`, orthonormal columns.
    pub c: Array2<f64>,
    /// The frozen `k x k` map, `(H⁻¹)ᵀ` for `c_tildeᵀ·c_tilde = H·Hᵀ`.
    pub h_inv_t: Array2<f64>,
    /// Largest jitter used by the Cholesky factorizations.
    pub jitter: f64,
}

fn gram_residual(c: ArrayView2<f64>) -> f64 {
    let gram = c.t().dot(&c);
    let k = gram.nrows();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            s += (gram[[i, j]] - target).powi(2);
        }
    }
    s.sqrt()
}

/// `‖CᵀC − I‖_F`.
pub fn orthogonality_residual(c: ArrayView2<f64>) -> f64 {
    gram_residual(c)
}

/// Largest accepted `‖CᵀC − I‖_F` after orthogonalization.
pub const ORTHO_TOL: f64 = 1e-6;

/// Orthonormalizes the columns of `c_tilde` through the Cholesky factor of
/// its `k x k` Gram matrix.
///
/// An ill-conditioned Gram leaves a residual after one pass; up to two more
/// passes are folded into the same frozen map in that case.
pub fn orthogonalize(c_tilde: ArrayView2<f64>) -> Result<Orthogonalized> {
    let (n, k) = c_tilde.dim();
    if n < k {
        return Err(Error::ShapeMismatch(format!(
            "cannot orthogonalize {k} columns with {n} rows"
        )));
    }
    let mut map = Array2::<f64>::eye(k);
    let mut c = c_tilde.to_owned();
    let mut jitter = 0.0_f64;
    for pass in 0..3 {
        let gram = c.t().dot(&c);
        let chol = cholesky(gram.view())?;
        jitter = jitter.max(chol.jitter);
        let step = lower_triangular_inverse(chol.l.view()).reversed_axes();
        c = c.dot(&step);
        map = if pass == 0 { step } else { map.dot(&step) };
        if gram_residual(c.view()) <= 1e-12 {
            break;
        }
    }
    // jitter can make the factorization succeed without making `c`
    // orthonormal; that is still a rank failure
    if gram_residual(c.view()) > ORTHO_TOL {
        return Err(Error::NotPositiveDefinite { jitter });
    }
    Ok(Orthogonalized {
        c,
        h_inv_t: map,
        jitter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    /// Median of the strictly positive pairwise distances.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub s: Array2<f64>,
    pub sigma: f64,
}

fn pairwise_sq_dists(p: ArrayView2<f64>) -> Array2<f64> {
    let n = p.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let pi = p.row(i);
        for j in i + 1..n {
            let pj = p.row(j);
            let s: f64 = pi.iter().zip(pj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    Some(if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    })
}

/// `S_ij = exp(−‖p_i − p_j‖² / 2σ²)` over the rows of `p`.
pub fn gaussian_similarity(p: ArrayView2<f64>, sigma: Sigma) -> Result<SimilarityMatrix> {
    let n = p.nrows();
    if n < 2 {
        return Err(Error::ShapeMismatch(format!("similarity needs at least 2 rows, got {n}")));
    }
    let d2 = pairwise_sq_dists(p);
    let sigma = match sigma {
        Sigma::Fixed(s) if s > 0.0 && s.is_finite() => s,
        Sigma::Fixed(s) => return Err(Error::Config(format!("kernel scale must be positive, got {s}"))),
        Sigma::Auto => {
            let mut dists = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    if d2[[i, j]] > 0.0 {
                        dists.push(d2[[i, j]].sqrt());
                    }
                }
            }
            median(dists).ok_or(Error::DegenerateScale)?
        }
    };
    let denom = 2.0 * sigma * sigma;
    let s = d2.mapv(|x| (-x / denom).exp().max(f64::MIN_POSITIVE));
    Ok(SimilarityMatrix { s, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// `L = D − S`.
    #[default]
    Unnormalized,
    /// `L = I − D^{-1/2} S D^{-1/2}`.
    Symmetric,
}

#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub l: Array2<f64>,
    pub d: Array1<f64>,
}

/// `L = diag(d) − S` with `d_i = Σ_j S_ij`.
pub fn laplacian(s: &SimilarityMatrix) -> LaplacianPair {
    laplacian_of(s.s.view(), LaplacianKind::Unnormalized)
}

pub fn laplacian_of(s: ArrayView2<f64>, kind: LaplacianKind) -> LaplacianPair {
    let d = s.sum_axis(Axis(1));
    let n = d.len();
    let l = match kind {
        LaplacianKind::Unnormalized => {
            let mut l = s.mapv(|x| -x);
            for i in 0..n {
                l[[i, i]] += d[i];
            }
            l
        }
        LaplacianKind::Symmetric => {
            let inv_sqrt = d.mapv(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 });
            let mut l = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    l[[i, j]] = -inv_sqrt[i] * s[[i, j]] * inv_sqrt[j];
                }
                l[[i, i]] += 1.0;
            }
            l
        }
    };
    LaplacianPair { l, d }
}

/// `Tr(Cᵀ A C)`.
pub fn trace_form(c: ArrayView2<f64>, a: ArrayView2<f64>) -> f64 {
    let ac = a.dot(&c);
    c.iter().zip(ac.iter()).map(|(x, y)| x * y).sum()
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
