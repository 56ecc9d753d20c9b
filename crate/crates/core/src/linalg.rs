//! Dense symmetric kernels: generalized eigendecomposition of a symmetric
//! pencil and Ledoit-Wolf shrinkage.

use faer::prelude::Solve;
use faer::{Mat, MatRef, Side};
use thiserror::Error;

/// Relative asymmetry tolerated by [`SymPencil::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Smallest accepted ratio `L_ii^2 / m_ii` of a Cholesky factor. Smaller
/// pivots mean the matrix is numerically singular and the factor is useless
/// for a congruence transform.
const PIVOT_RATIO_TOL: f64 = 1e-10;

/// Jitter ladder, in units of `trace(B) / N`.
const JITTER_LADDER: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Reciprocal eigenvalues below this fraction of the largest one are treated
/// as the null space of `B` (infinite generalized eigenvalues).
const RANK_TOL: f64 = 1e-10;

/// Default upper bound on the Ledoit-Wolf loading, relative to `trace / M`.
pub const DEFAULT_MU_CAP_RATIO: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("pencil matrices differ in size: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("matrix `{which}` is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { which: &'static str, asymmetry: f64 },
    #[error("requested {requested} eigenpairs from a pencil of dimension {dim}")]
    TooManyComponents { requested: usize, dim: usize },
    #[error("requested zero eigenpairs")]
    ZeroComponents,
    #[error("right-hand matrix is numerically indefinite (factorization failed up to jitter {jitter:e})")]
    Indefinite { jitter: f64 },
    #[error("pencil has only {rank} finite eigenvalues but {requested} were requested")]
    RankDeficient { rank: usize, requested: usize },
    #[error("symmetric eigensolver did not converge")]
    NoConvergence,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },
}

/// A pair `(A, B)` of real symmetric matrices with `B` positive
/// (semi)definite.
#[derive(Debug, Clone)]
pub struct SymPencil {
    a: Mat<f64>,
    b: Mat<f64>,
}

impl SymPencil {
    pub fn new(a: Mat<f64>, b: Mat<f64>) -> Result<Self, LinalgError> {
        check_square(a.as_ref())?;
        check_square(b.as_ref())?;
        if a.nrows() != b.nrows() {
            return Err(LinalgError::DimensionMismatch {
                a: a.nrows(),
                b: b.nrows(),
            });
        }
        for (which, m) in [("a", &a), ("b", &b)] {
            if !all_finite(m.as_ref()) {
                return Err(LinalgError::NonFinite);
            }
            let asymmetry = relative_asymmetry(m.as_ref());
            if asymmetry > SYMMETRY_TOL {
                return Err(LinalgError::NotSymmetric { which, asymmetry });
            }
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> MatRef<'_, f64> {
        self.a.as_ref()
    }

    pub fn b(&self) -> MatRef<'_, f64> {
        self.b.as_ref()
    }
}

/// The `q` smallest generalized eigenpairs of a [`SymPencil`].
#[derive(Debug, Clone)]
pub struct GevdResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `N x q`, column `i` pairs with `eigenvalues[i]`, normalized to
    /// `v' B v = 1` with its largest-magnitude entry positive.
    pub eigenvectors: Mat<f64>,
    /// Diagonal loading that had to be added to `B`, in absolute units.
    pub jitter: f64,
}

/// Returns the `q` smallest generalized eigenvalues of `A v = lambda B v`
/// together with their eigenvectors.
///
/// When `A` is definite the reciprocal pencil `B v = theta A v` is reduced
/// through the Cholesky factor of `A`, so the wanted eigenvalues are the
/// largest `theta` and keep full relative accuracy even when `B` spans many
/// orders of magnitude (large stimulus weights). Null directions of `B` map
/// to infinite `lambda` and never enter the smallest `q`. Otherwise the
/// pencil is reduced through the Cholesky factor of `B`, and only if that
/// fails too is `B` loaded with escalating jitter.
pub fn sym_gevd_smallest(pencil: &SymPencil, q: usize) -> Result<GevdResult, LinalgError> {
    let n = pencil.dim();
    if q == 0 {
        return Err(LinalgError::ZeroComponents);
    }
    if q > n {
        return Err(LinalgError::TooManyComponents { requested: q, dim: n });
    }
    let (a, b) = (pencil.a(), pencil.b());

    let mut result = if let Some(l) = checked_cholesky(a, PIVOT_RATIO_TOL) {
        reduce_by_left(b, l.as_ref(), q)?
    } else if let Some(l) = checked_cholesky(b, PIVOT_RATIO_TOL) {
        reduce_by_right(a, l.as_ref(), q, 0.0)?
    } else {
        let scale = trace(b) / n as f64;
        let mut solved = None;
        for eps in JITTER_LADDER {
            let jitter = eps * scale;
            let mut bj = b.to_owned();
            for i in 0..n {
                bj[(i, i)] += jitter;
            }
            if let Some(l) = jittered_cholesky(bj.as_ref(), jitter) {
                solved = Some(reduce_by_right(a, l.as_ref(), q, jitter)?);
                break;
            }
        }
        match solved {
            Some(r) => r,
            None => {
                return Err(LinalgError::Indefinite {
                    jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
                })
            }
        }
    };
    canonicalize_signs(&mut result.eigenvectors);
    Ok(result)
}

fn reduce_by_right(
    a: MatRef<'_, f64>,
    l: MatRef<'_, f64>,
    q: usize,
    jitter: f64,
) -> Result<GevdResult, LinalgError> {
    let c = congruence(a, l);
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| LinalgError::NoConvergence)?;
    let s = evd.S().column_vector();
    let eigenvalues: Vec<f64> = (0..q).map(|i| s[i]).collect();
    let mut vectors = evd.U().subcols(0, q).to_owned();
    l.transpose().solve_upper_triangular_in_place(&mut vectors);
    Ok(GevdResult {
        eigenvalues,
        eigenvectors: vectors,
        jitter,
    })
}

/// Solves `B v = theta A v` through the Cholesky factor of `A`; the largest
/// `theta` are the reciprocals of the smallest `lambda`.
fn reduce_by_left(
    b: MatRef<'_, f64>,
    l: MatRef<'_, f64>,
    q: usize,
) -> Result<GevdResult, LinalgError> {
    let n = b.nrows();
    let c = congruence(b, l);
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| LinalgError::NoConvergence)?;
    let s = evd.S().column_vector();
    let theta_max = s[n - 1].max(0.0);
    let rank = (0..n).filter(|&i| s[i] > RANK_TOL * theta_max).count();
    if rank < q || theta_max <= 0.0 {
        return Err(LinalgError::RankDeficient { rank, requested: q });
    }
    let mut vectors = Mat::<f64>::zeros(n, q);
    let mut eigenvalues = Vec::with_capacity(q);
    for j in 0..q {
        let src = n - 1 - j;
        eigenvalues.push(1.0 / s[src]);
        vectors.col_mut(j).copy_from(evd.U().col(src));
    }
    l.transpose().solve_upper_triangular_in_place(&mut vectors);
    // v'Av = 1 and v'Bv = theta; rescale to unit B-norm
    for j in 0..q {
        let f = eigenvalues[j].sqrt();
        for i in 0..n {
            vectors[(i, j)] *= f;
        }
    }
    Ok(GevdResult {
        eigenvalues,
        eigenvectors: vectors,
        jitter: 0.0,
    })
}

/// `L^-1 M L^-T`, symmetrized.
fn congruence(m: MatRef<'_, f64>, l: MatRef<'_, f64>) -> Mat<f64> {
    let mut y = m.to_owned();
    l.solve_lower_triangular_in_place(&mut y);
    let mut c = y.transpose().to_owned();
    l.solve_lower_triangular_in_place(&mut c);
    symmetrize(&mut c);
    c
}

fn checked_cholesky(m: MatRef<'_, f64>, ratio_tol: f64) -> Option<Mat<f64>> {
    let llt = m.llt(Side::Lower).ok()?;
    let l = llt.L();
    for i in 0..m.nrows() {
        let d = m[(i, i)];
        let p = l[(i, i)] * l[(i, i)];
        if !(d > 0.0) || !(p >= ratio_tol * d) {
            return None;
        }
    }
    Some(l.to_owned())
}

fn jittered_cholesky(m: MatRef<'_, f64>, jitter: f64) -> Option<Mat<f64>> {
    let llt = m.llt(Side::Lower).ok()?;
    let l = llt.L();
    for i in 0..m.nrows() {
        if !(l[(i, i)] * l[(i, i)] >= 0.5 * jitter) {
            return None;
        }
    }
    Some(l.to_owned())
}

/// Flips each column so that its largest-magnitude entry (first one on ties)
/// is positive.
pub fn canonicalize_signs(v: &mut Mat<f64>) {
    for j in 0..v.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..v.nrows() {
            let x = v[(i, j)].abs();
            if x > best_abs {
                best_abs = x;
                best = i;
            }
        }
        if v.nrows() > 0 && v[(best, j)] < 0.0 {
            for i in 0..v.nrows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
}

/// Below this dimension [`sym_leading_eigenpair`] goes straight to the
/// dense route.
const LANCZOS_MIN_DIM: usize = 128;

/// Krylov steps before [`sym_leading_eigenpair`] gives up on Lanczos.
const LANCZOS_MAX_STEPS: usize = 160;

/// Residual `||C x - theta x||` accepted by Lanczos, relative to `theta`.
const LANCZOS_TOL: f64 = 1e-11;

/// Largest eigenvalue of a symmetric positive semidefinite matrix and a unit
/// eigenvector for it.
///
/// Lanczos with full reorthogonalization is tried first; it converges in a
/// few dozen steps whenever the top eigenvalue (or a cluster containing it)
/// stands apart from the rest of the spectrum. Without such a gap it stops
/// after [`LANCZOS_MAX_STEPS`] and the dense route takes over: a
/// values-only decomposition followed by inverse iteration on the positive
/// definite `sigma I - C`, with `sigma` nudged just above the eigenvalue.
pub fn sym_leading_eigenpair(c: MatRef<'_, f64>) -> Result<(f64, Mat<f64>), LinalgError> {
    check_square(c)?;
    let n = c.nrows();
    if n == 0 {
        return Err(LinalgError::ZeroComponents);
    }
    if !all_finite(c) {
        return Err(LinalgError::NonFinite);
    }
    if n >= LANCZOS_MIN_DIM {
        if let Some(pair) = lanczos_leading(c)? {
            return Ok(pair);
        }
    }
    dense_leading(c)
}

fn start_vector(n: usize) -> Mat<f64> {
    let x = Mat::from_fn(n, 1, |i, _| 1.0 + i as f64 / n as f64);
    (1.0 / x.norm_l2()) * &x
}

fn lanczos_leading(c: MatRef<'_, f64>) -> Result<Option<(f64, Mat<f64>)>, LinalgError> {
    let n = c.nrows();
    let steps = LANCZOS_MAX_STEPS.min(n);
    let mut basis = Mat::<f64>::zeros(n, steps);
    basis.col_mut(0).copy_from(start_vector(n).col(0));
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    for j in 0..steps {
        let mut w = c * basis.as_ref().subcols(j, 1);
        alpha.push(basis.col(j).transpose() * w.col(0));
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            let v = basis.as_ref().subcols(0, j + 1);
            let h = v.transpose() * &w;
            w -= v * &h;
        }
        let b = w.norm_l2();
        let last = j + 1 == steps;
        let exhausted = !(b > f64::EPSILON * alpha[0].abs().max(alpha[j].abs()));
        if exhausted || last || (j + 1) % 8 == 0 {
            let t = Mat::from_fn(j + 1, j + 1, |r, s| {
                if r == s {
                    alpha[r]
                } else if r == s + 1 {
                    beta[s]
                } else if s == r + 1 {
                    beta[r]
                } else {
                    0.0
                }
            });
            let evd = t
                .self_adjoint_eigen(Side::Lower)
                .map_err(|_| LinalgError::NoConvergence)?;
            let theta = evd.S().column_vector()[j];
            let y = evd.U().col(j);
            let residual = if exhausted { 0.0 } else { b * y[j].abs() };
            if residual <= LANCZOS_TOL * theta.abs() {
                let mut x = basis.as_ref().subcols(0, j + 1) * y.as_mat();
                let norm = x.norm_l2();
                x = (1.0 / norm) * &x;
                return Ok(Some((theta, x)));
            }
            if exhausted || last {
                return Ok(None);
            }
        }
        beta.push(b);
        let next = (1.0 / b) * &w;
        basis.col_mut(j + 1).copy_from(next.col(0));
    }
    Ok(None)
}

fn dense_leading(c: MatRef<'_, f64>) -> Result<(f64, Mat<f64>), LinalgError> {
    let n = c.nrows();
    let values = c
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| LinalgError::NoConvergence)?;
    let theta = values[n - 1];
    let scale = values[0].abs().max(theta.abs()).max(f64::MIN_POSITIVE);
    for rel in [1e-10, 1e-8, 1e-6] {
        let sigma = theta + rel * scale;
        let mut shifted = -c.to_owned();
        for i in 0..n {
            shifted[(i, i)] += sigma;
        }
        let Ok(llt) = shifted.llt(Side::Lower) else {
            continue;
        };
        let mut x = start_vector(n);
        for _ in 0..3 {
            x = llt.solve(&x);
            let norm = x.norm_l2();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(LinalgError::NoConvergence);
            }
            x = (1.0 / norm) * &x;
        }
        return Ok((theta, x));
    }
    Err(LinalgError::NoConvergence)
}

/// Result of [`ledoit_wolf_intensity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shrinkage {
    /// Weight of the scaled-identity target, in `[0, 1]`.
    pub intensity: f64,
    /// Equivalent diagonal loading of `X'X`.
    pub mu: f64,
}

/// Ledoit-Wolf shrinkage toward `trace(S)/M * I` for zero-mean data `x`
/// (`T x M`, one sample per row), with the loading capped at
/// [`DEFAULT_MU_CAP_RATIO`]` * trace(X'X) / M`.
pub fn ledoit_wolf_intensity(x: MatRef<'_, f64>) -> Result<Shrinkage, LinalgError> {
    ledoit_wolf_with_cap(x, DEFAULT_MU_CAP_RATIO)
}

/// [`ledoit_wolf_intensity`] with an explicit loading cap.
///
/// `(1 - rho) S + rho nu I` is proportional to `S + rho / (1 - rho) nu I`, so
/// the shrinkage becomes the diagonal loading `mu = rho / (1 - rho) *
/// trace(X'X) / M` of the unnormalized correlation matrix. A pencil is
/// invariant to the global factor, hence only `mu` matters downstream.
pub fn ledoit_wolf_with_cap(x: MatRef<'_, f64>, cap_ratio: f64) -> Result<Shrinkage, LinalgError> {
    let (t, m) = (x.nrows(), x.ncols());
    if t < 2 {
        return Err(LinalgError::TooFewSamples { required: 2, got: t });
    }
    if !all_finite(x) {
        return Err(LinalgError::NonFinite);
    }
    if m == 0 {
        return Ok(Shrinkage { intensity: 0.0, mu: 0.0 });
    }
    let tf = t as f64;
    let r = gram(x);
    let tr_r = trace(r.as_ref());
    let s_frob2 = frobenius2(r.as_ref()) / (tf * tf);
    let nu = tr_r / tf / m as f64;
    let d2 = (s_frob2 - m as f64 * nu * nu).max(0.0);

    let mut fourth = 0.0;
    for i in 0..t {
        let mut row2 = 0.0;
        for j in 0..m {
            row2 += x[(i, j)] * x[(i, j)];
        }
        fourth += row2 * row2;
    }
    let b2_bar = ((fourth / tf - s_frob2) / tf).max(0.0);
    let b2 = b2_bar.min(d2);
    let intensity = if d2 > 0.0 { (b2 / d2).clamp(0.0, 1.0) } else { 0.0 };

    let scale = tr_r / m as f64;
    let cap = cap_ratio * scale;
    let mu = if intensity >= 1.0 {
        cap
    } else {
        (intensity / (1.0 - intensity) * scale).min(cap)
    };
    Ok(Shrinkage { intensity, mu })
}

/// `X'X` with an exactly symmetric result.
pub fn gram(x: MatRef<'_, f64>) -> Mat<f64> {
    let mut g = x.transpose() * x;
    symmetrize(&mut g);
    g
}

/// Replaces `m` by `(m + m') / 2`.
pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn trace(m: MatRef<'_, f64>) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

pub fn frobenius2(m: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s
}

pub(crate) fn all_finite(m: MatRef<'_, f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].is_finite()))
}

fn check_square(m: MatRef<'_, f64>) -> Result<(), LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn relative_asymmetry(m: MatRef<'_, f64>) -> f64 {
    let n = m.nrows();
    let mut scale = 0.0f64;
    let mut diff = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(m[(i, j)].abs());
            diff = diff.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
