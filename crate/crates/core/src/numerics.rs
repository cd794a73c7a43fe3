//! Dense complex linear algebra shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Subspaces are represented by
//! orthonormal frames (matrices with orthonormal columns); equality of
//! subspaces is decided through [`subspace_gap`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Thresholds threaded through every tolerance-based decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Residual bound for identities such as `M^T J M = J`.
    pub eq_tol: f64,
    /// Slack for semidefiniteness checks (smallest/largest eigenvalue).
    pub psd_tol: f64,
    /// Relative singular-value cutoff for rank decisions.
    pub rank_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eq_tol: 1e-10,
            psd_tol: 1e-9,
            rank_tol: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eq_tol", self.eq_tol),
            ("psd_tol", self.psd_tol),
            ("rank_tol", self.rank_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    op: "Tolerances",
                    name,
                    reason: format!("must be a positive finite number, got {v}"),
                });
            }
        }
        Ok(())
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn ensure_square(m: &CMat, op: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            op,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: &CMat, op: &'static str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

pub fn ensure_shape(m: &CMat, rows: usize, cols: usize, op: &'static str) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch {
            op,
            expected: rows,
            found: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            op,
            expected: cols,
            found: m.ncols(),
        });
    }
    Ok(())
}

/// Largest absolute column sum.
pub fn norm1(m: &CMat) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm_fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Ascending eigenvalues of the Hermitian part of `m`.
pub fn hermitian_eigvals(m: &CMat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(hermitian_part(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn block_diag(blocks: &[&CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r, c0), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn from_real_diag(d: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(d.len(), d.iter().map(|&x| c(x, 0.0))))
}

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: &CMat, b: &CMat, op: &'static str) -> Result<CMat> {
    a.clone().lu().solve(b).ok_or(Error::Singular { op })
}

pub fn inverse(a: &CMat, op: &'static str) -> Result<CMat> {
    ensure_square(a, op)?;
    a.clone().try_inverse().ok_or(Error::Singular { op })
}

// ---------------------------------------------------------------------------
// Matrix exponential: scaling and squaring with diagonal Pade approximants.

const PADE_ORDERS: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
    (13, 5.371920351148152),
];

fn pade_coefficients(order: usize) -> Vec<f64> {
    // b_j = (2m - j)! m! / ((2m)! j! (m - j)!), built by the ratio b_{j+1}/b_j.
    let m = order as f64;
    let mut b = vec![1.0; order + 1];
    for j in 0..order {
        let jf = j as f64;
        b[j + 1] = b[j] * (m - jf) / ((2.0 * m - jf) * (jf + 1.0));
    }
    b
}

fn pade(x: &CMat, order: usize) -> Result<CMat> {
    let n = x.nrows();
    let b = pade_coefficients(order);
    let x2 = x * x;
    let mut even = CMat::identity(n, n) * c(b[0], 0.0);
    let mut odd = CMat::identity(n, n) * c(b[1], 0.0);
    let mut power = CMat::identity(n, n);
    for k in 1..=order / 2 {
        power = &power * &x2;
        even += &power * c(b[2 * k], 0.0);
        if 2 * k < order {
            odd += &power * c(b[2 * k + 1], 0.0);
        }
    }
    let u = x * odd;
    solve(&(&even - &u), &(&even + &u), "expm")
}

/// `e^X` by scaling and squaring.
pub fn expm(x: &CMat) -> Result<CMat> {
    let n = ensure_square(x, "expm")?;
    ensure_finite(x, "expm")?;
    if n == 0 {
        return Ok(x.clone());
    }
    let nrm = norm1(x);
    for &(order, theta) in &PADE_ORDERS[..4] {
        if nrm <= theta {
            return pade(x, order);
        }
    }
    let theta13 = PADE_ORDERS[4].1;
    let squarings = if nrm > theta13 {
        (nrm / theta13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = x * c(0.5f64.powi(squarings), 0.0);
    let mut r = pade(&scaled, 13)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    ensure_finite(&r, "expm")?;
    Ok(r)
}

// ---------------------------------------------------------------------------
// Principal logarithm: complex Schur form, inverse scaling and squaring,
// Gauss-Legendre quadrature of log(I + X) = int_0^1 X (I + tX)^{-1} dt.

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Principal square root of an upper-triangular matrix.
fn sqrt_upper(t: &CMat) -> CMat {
    let n = t.nrows();
    let mut r = CMat::zeros(n, n);
    for j in 0..n {
        r[(j, j)] = t[(j, j)].sqrt();
        for i in (0..j).rev() {
            let mut s = t[(i, j)];
            for k in i + 1..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = s / (r[(i, i)] + r[(j, j)]);
        }
    }
    r
}

fn upper_triangular_schur(m: &CMat) -> Result<(CMat, CMat)> {
    let (q, mut t) = m.clone().schur().unpack();
    let n = t.nrows();
    let scale = max_abs(&t).max(1.0);
    for j in 0..n {
        for i in j + 1..n {
            if t[(i, j)].norm() > 1e-13 * scale {
                return Err(Error::InvalidParameter {
                    op: "logm_principal",
                    name: "M",
                    reason: "Schur form did not converge to triangular".into(),
                });
            }
            t[(i, j)] = ZERO;
        }
    }
    Ok((q, t))
}

/// Principal matrix logarithm (eigenvalues with imaginary part in (-pi, pi)).
pub fn logm_principal(m: &CMat, tol: &Tolerances) -> Result<CMat> {
    let n = ensure_square(m, "logm_principal")?;
    ensure_finite(m, "logm_principal")?;
    if n == 0 {
        return Ok(m.clone());
    }
    let (q, mut t) = upper_triangular_schur(m)?;
    for k in 0..n {
        let lam = t[(k, k)];
        let dist = if lam.re > 0.0 {
            lam.norm()
        } else {
            lam.im.abs()
        };
        if dist <= tol.rank_tol {
            return Err(Error::BranchCut {
                re: lam.re,
                im: lam.im,
            });
        }
    }
    let ident = CMat::identity(n, n);
    let mut roots = 0;
    while norm1(&(&t - &ident)) > 0.25 && roots < 64 {
        t = sqrt_upper(&t);
        roots += 1;
    }
    let x = &t - &ident;
    let mut log = CMat::zeros(n, n);
    for (node, weight) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
        let s = 0.5 * (node + 1.0);
        let shifted = &ident + &x * c(s, 0.0);
        let term = shifted.solve_upper_triangular(&x).ok_or(Error::Singular {
            op: "logm_principal",
        })?;
        log += term * c(0.5 * weight, 0.0);
    }
    log *= c(2f64.powi(roots), 0.0);
    Ok(&q * log * q.adjoint())
}

// ---------------------------------------------------------------------------
// Frames and subspaces.

fn rank_threshold(sv: &[f64], tol: &Tolerances) -> f64 {
    tol.rank_tol * sv.iter().copied().fold(1.0, f64::max)
}

/// Orthonormal frame of a full-column-rank matrix. The frame equals the Q of
/// a QR factorization with positive real diagonal in R, so `[[2],[0]]` maps
/// to `[[1],[0]]`.
pub fn orthonormal_frame(cols: &CMat, tol: &Tolerances) -> Result<CMat> {
    ensure_finite(cols, "orthonormal_frame")?;
    let k = cols.ncols();
    if k == 0 {
        return Ok(cols.clone());
    }
    if cols.nrows() < k {
        return Err(Error::RankDeficient {
            op: "orthonormal_frame",
            rank: cols.nrows(),
            required: k,
        });
    }
    let sv: Vec<f64> = cols.clone().singular_values().iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smax == 0.0 || smin <= tol.rank_tol * smax {
        let rank = sv.iter().filter(|&&s| s > tol.rank_tol * smax).count();
        return Err(Error::RankDeficient {
            op: "orthonormal_frame",
            rank,
            required: k,
        });
    }
    Ok(qr_frame(cols))
}

/// Householder QR frame with the phases of `R`'s diagonal folded into `Q`.
/// No rank test: intended for matrices known to have full column rank, such
/// as `[I; T]`.
pub fn qr_frame(cols: &CMat) -> CMat {
    let k = cols.ncols();
    let qr = cols.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            let mut col = q.column_mut(j);
            col *= phase;
        }
    }
    q
}

/// Orthonormal basis of the column span, with rank decided by `rank_tol`
/// relative to `max(1, sigma_max)`. May return zero columns.
pub fn span_frame(cols: &CMat, tol: &Tolerances) -> CMat {
    let rows = cols.nrows();
    if cols.ncols() == 0 || rows == 0 {
        return CMat::zeros(rows, 0);
    }
    let svd = cols.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let thr = rank_threshold(&sv, tol);
    let mut keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > thr).collect();
    if keep.is_empty() {
        return CMat::zeros(rows, 0);
    }
    keep.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    CMat::from_columns(
        &keep
            .iter()
            .map(|&i| u.column(i).into_owned())
            .collect::<Vec<_>>(),
    )
}

/// Orthonormal basis of `{x : M x = 0}` (may have zero columns).
pub fn nullspace(m: &CMat, tol: &Tolerances) -> CMat {
    let cols = m.ncols();
    if cols == 0 {
        return CMat::zeros(0, 0);
    }
    // Pad with zero rows so the thin SVD returns a full set of right vectors.
    let padded = if m.nrows() < cols {
        m.clone().resize_vertically(cols, ZERO)
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let thr = rank_threshold(&sv, tol);
    let null: Vec<CVec> = (0..sv.len())
        .filter(|&i| sv[i] <= thr)
        .map(|i| vt.row(i).adjoint())
        .collect();
    if null.is_empty() {
        CMat::zeros(cols, 0)
    } else {
        CMat::from_columns(&null)
    }
}

/// Orthogonal projector onto the span of an orthonormal frame.
pub fn projector(frame: &CMat) -> CMat {
    frame * frame.adjoint()
}

/// Spectral norm of the difference of the orthogonal projectors onto the
/// spans of two orthonormal frames.
pub fn subspace_gap(p: &CMat, q: &CMat) -> Result<f64> {
    if p.nrows() != q.nrows() {
        return Err(Error::DimensionMismatch {
            op: "subspace_gap",
            expected: p.nrows(),
            found: q.nrows(),
        });
    }
    // Both orientations, so the result is exactly symmetric in (p, q).
    let spread = |d: CMat| {
        hermitian_eigvals(&d)
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max)
    };
    let (pp, qq) = (projector(p), projector(q));
    Ok(spread(&pp - &qq).max(spread(&qq - &pp)))
}

/// Dense matrix of standard normal complex entries (unit variance per part).
pub fn gaussian_matrix<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    use rand_distr::{Distribution, StandardNormal};
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im)
    })
}
