//! Linear relations `P ⊂ C^{2n} ⊕ C^{2n}` as points of the Grassmannian of
//! `2n`-planes in `C^{4n}`, their product, the Potapov transform, and limits
//! of `graph(exp(A - nu*N_b))` as `nu -> inf`.
//!
//! Coordinates of `C^{4n}` are `(v, w)` with `v, w ∈ C^{2n}`, and each half
//! splits as `(x_-, x_+)` along the eigenspaces `-1`, `+1` of `Ical`.
//!
//! Composition order: `compose(A, B) = {x ⊕ y : x ⊕ w ∈ A, w ⊕ y ∈ B}`, so
//! `compose(graph(S), graph(T)) = graph(T S)`. With this order
//! [`potapov_product`] applied to `(Π(A), Π(B))` equals `Π(compose(A, B))`.
//!
//! The Potapov matrix of `P` is the matrix `r` with
//! `(v_-, w_+) = r (v_+, w_-)` for all `(v_-, v_+, w_-, w_+) ∈ P`. For graphs
//! of `g = [[a, b], [c, d]]` this is `[[-a⁻¹b, a⁻¹], [d - c a⁻¹ b, c a⁻¹]]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    ensure_shape, ensure_square, expm, from_real_diag, hermitian_eigvals, inverse, max_abs,
    norm_fro, nullspace, op_norm, qr_frame, solve, span_frame, CMat, Tolerances, ONE,
};
use crate::symplectic::{make_structural, require, SetKind, StructuralMatrices};

/// A `2n`-dimensional subspace of `C^{2n} ⊕ C^{2n}`, stored as an
/// orthonormal `4n x 2n` frame.
#[derive(Clone, Debug)]
pub struct LinearRelation {
    pub n: usize,
    pub frame: CMat,
}

impl LinearRelation {
    /// Span of `cols`; fails unless the span has dimension exactly `2n`.
    pub fn from_span(n: usize, cols: &CMat, tol: &Tolerances) -> Result<Self> {
        if cols.nrows() != 4 * n {
            return Err(Error::DimensionMismatch {
                op: "LinearRelation",
                expected: 4 * n,
                found: cols.nrows(),
            });
        }
        let frame = span_frame(cols, tol);
        if frame.ncols() != 2 * n {
            return Err(Error::DegenerateRelation {
                expected: 2 * n,
                found: frame.ncols(),
            });
        }
        Ok(Self { n, frame })
    }

    /// Top half `v` of the frame.
    pub fn inputs(&self) -> CMat {
        self.frame.rows(0, 2 * self.n).into_owned()
    }

    /// Bottom half `w` of the frame.
    pub fn outputs(&self) -> CMat {
        self.frame.rows(2 * self.n, 2 * self.n).into_owned()
    }

    pub fn gap(&self, other: &LinearRelation) -> Result<f64> {
        crate::numerics::subspace_gap(&self.frame, &other.frame)
    }
}

/// `{v ⊕ T v}`.
pub fn graph_of(t: &CMat) -> Result<LinearRelation> {
    let dim = ensure_square(t, "graph_of")?;
    if dim % 2 != 0 || dim == 0 {
        return Err(Error::InvalidParameter {
            op: "graph_of",
            name: "T",
            reason: format!("size {dim} is not a positive even number"),
        });
    }
    let mut cols = CMat::identity(2 * dim, dim);
    cols.rows_mut(dim, dim).copy_from(t);
    Ok(LinearRelation {
        n: dim / 2,
        frame: qr_frame(&cols),
    })
}

/// Relation product `{x ⊕ y : ∃w, x ⊕ w ∈ A, w ⊕ y ∈ B}`.
///
/// Compatible pairs of frame coefficients `(α, β)` solve `A_w α = B_w β`; the
/// product is the span of `(A_x α) ⊕ (B_y β)` over that nullspace.
pub fn compose(a: &LinearRelation, b: &LinearRelation, tol: &Tolerances) -> Result<LinearRelation> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch {
            op: "compose",
            expected: a.n,
            found: b.n,
        });
    }
    let d = 2 * a.n;
    let ka = a.frame.ncols();
    let kb = b.frame.ncols();
    let mut system = CMat::zeros(d, ka + kb);
    system.columns_mut(0, ka).copy_from(&a.outputs());
    system.columns_mut(ka, kb).copy_from(&(-b.inputs()));
    let coeffs = nullspace(&system, tol);
    let mut pairs = CMat::zeros(2 * d, coeffs.ncols());
    pairs
        .rows_mut(0, d)
        .copy_from(&(a.inputs() * coeffs.rows(0, ka)));
    pairs
        .rows_mut(d, d)
        .copy_from(&(b.outputs() * coeffs.rows(ka, kb)));
    LinearRelation::from_span(a.n, &pairs, tol)
}

/// `(ker P, indef P)` with `ker P = {x : x ⊕ 0 ∈ P}` and
/// `indef P = {y : 0 ⊕ y ∈ P}`, as orthonormal frames (possibly empty).
pub fn ker_indef(p: &LinearRelation, tol: &Tolerances) -> (CMat, CMat) {
    let ker = span_frame(&(p.inputs() * nullspace(&p.outputs(), tol)), tol);
    let indef = span_frame(&(p.outputs() * nullspace(&p.inputs(), tol)), tol);
    (ker, indef)
}

#[derive(Clone, Debug, Serialize)]
pub struct UnnReport {
    pub holds: bool,
    /// Smallest eigenvalue of `V* Ical V - W* Ical W` on the frame (must be >= 0).
    pub contraction_min: f64,
    /// Largest eigenvalue of the form on `indef P` (must be < 0); `-inf` if empty.
    pub indef_max: f64,
    /// Smallest eigenvalue of the form on `ker P` (must be > 0); `+inf` if empty.
    pub ker_min: f64,
}

/// Membership in the semigroup of Ical-contractive relations.
pub fn is_unn(p: &LinearRelation, s: &StructuralMatrices, tol: &Tolerances) -> Result<UnnReport> {
    ensure_shape(&p.frame, 4 * s.n, p.frame.ncols(), "is_unn")?;
    let (v, w) = (p.inputs(), p.outputs());
    let form = v.adjoint() * &s.ical * &v - w.adjoint() * &s.ical * &w;
    let contraction_min = hermitian_eigvals(&form)[0];
    let (ker, indef) = ker_indef(p, tol);
    let indef_max = hermitian_eigvals(&(indef.adjoint() * &s.ical * &indef))
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY);
    let ker_min = hermitian_eigvals(&(ker.adjoint() * &s.ical * &ker))
        .first()
        .copied()
        .unwrap_or(f64::INFINITY);
    let holds =
        contraction_min >= -tol.psd_tol && indef_max < -tol.psd_tol && ker_min > tol.psd_tol;
    Ok(UnnReport {
        holds,
        contraction_min,
        indef_max,
        ker_min,
    })
}

/// `v^T J v' = w^T J w'` on all frame pairs. Returns `(holds, residual)`.
pub fn is_symplectic_rel(
    p: &LinearRelation,
    s: &StructuralMatrices,
    tol: &Tolerances,
) -> Result<(bool, f64)> {
    ensure_shape(&p.frame, 4 * s.n, p.frame.ncols(), "is_symplectic_rel")?;
    let (v, w) = (p.inputs(), p.outputs());
    let residual = norm_fro(&(v.transpose() * &s.j * &v - w.transpose() * &s.j * &w));
    Ok((residual <= tol.eq_tol, residual))
}

// ---------------------------------------------------------------------------
// Potapov transform.

/// `r = [[α, β], [γ, δ]]` with `n x n` blocks.
#[derive(Clone, Debug)]
pub struct PotapovMatrix {
    pub n: usize,
    pub r: CMat,
}

impl PotapovMatrix {
    pub fn new(r: CMat) -> Result<Self> {
        let dim = ensure_square(&r, "PotapovMatrix")?;
        if dim % 2 != 0 || dim == 0 {
            return Err(Error::InvalidParameter {
                op: "PotapovMatrix",
                name: "r",
                reason: format!("size {dim} is not a positive even number"),
            });
        }
        Ok(Self { n: dim / 2, r })
    }

    fn block(&self, i: usize, j: usize) -> CMat {
        self.r
            .view((i * self.n, j * self.n), (self.n, self.n))
            .into_owned()
    }

    pub fn alpha(&self) -> CMat {
        self.block(0, 0)
    }

    pub fn beta(&self) -> CMat {
        self.block(0, 1)
    }

    pub fn gamma(&self) -> CMat {
        self.block(1, 0)
    }

    pub fn delta(&self) -> CMat {
        self.block(1, 1)
    }

    pub fn from_blocks(alpha: &CMat, beta: &CMat, gamma: &CMat, delta: &CMat) -> Self {
        let n = alpha.nrows();
        let mut r = CMat::zeros(2 * n, 2 * n);
        r.view_mut((0, 0), (n, n)).copy_from(alpha);
        r.view_mut((0, n), (n, n)).copy_from(beta);
        r.view_mut((n, 0), (n, n)).copy_from(gamma);
        r.view_mut((n, n), (n, n)).copy_from(delta);
        Self { n, r }
    }

    pub fn norm(&self) -> f64 {
        op_norm(&self.r)
    }
}

/// Closed-form Potapov matrix of `graph(g)`; needs an invertible upper-left block.
pub fn potapov_matrix(g: &CMat, tol: &Tolerances) -> Result<PotapovMatrix> {
    let dim = ensure_square(g, "potapov_matrix")?;
    let n = dim / 2;
    let blk = |i: usize, j: usize| g.view((i * n, j * n), (n, n)).into_owned();
    let (a, b, cc, d) = (blk(0, 0), blk(0, 1), blk(1, 0), blk(1, 1));
    let sv = a.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin <= tol.rank_tol * smax.max(1.0) {
        return Err(Error::Singular {
            op: "potapov_matrix",
        });
    }
    let a_inv = inverse(&a, "potapov_matrix")?;
    let ainv_b = &a_inv * &b;
    Ok(PotapovMatrix::from_blocks(
        &(-&ainv_b),
        &a_inv,
        &(&d - &cc * &ainv_b),
        &(&cc * &a_inv),
    ))
}

fn in_rows(n: usize) -> [std::ops::Range<usize>; 2] {
    // (v_+, w_-)
    [n..2 * n, 2 * n..3 * n]
}

fn out_rows(n: usize) -> [std::ops::Range<usize>; 2] {
    // (v_-, w_+)
    [0..n, 3 * n..4 * n]
}

fn gather(frame: &CMat, ranges: &[std::ops::Range<usize>; 2]) -> CMat {
    let k = frame.ncols();
    let mut out = CMat::zeros(ranges[0].len() + ranges[1].len(), k);
    let mut row = 0;
    for r in ranges {
        out.rows_mut(row, r.len())
            .copy_from(&frame.rows(r.start, r.len()));
        row += r.len();
    }
    out
}

/// Potapov matrix of an arbitrary relation; fails when the permuted subspace is
/// not a graph (which happens exactly outside the contractive semigroup).
pub fn potapov_relation(p: &LinearRelation, tol: &Tolerances) -> Result<PotapovMatrix> {
    let n = p.n;
    let x = gather(&p.frame, &in_rows(n));
    let y = gather(&p.frame, &out_rows(n));
    let sv = x.clone().singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin <= tol.rank_tol {
        return Err(Error::Singular {
            op: "potapov_relation",
        });
    }
    // r X = Y  =>  X^T r^T = Y^T
    let rt = solve(&x.transpose(), &y.transpose(), "potapov_relation")?;
    PotapovMatrix::new(rt.transpose())
}

/// Inverse of [`potapov_relation`].
pub fn relation_from_potapov(r: &PotapovMatrix) -> LinearRelation {
    let n = r.n;
    let mut cols = CMat::zeros(4 * n, 2 * n);
    let ident = CMat::identity(2 * n, 2 * n);
    for (src, ranges) in [(&ident, in_rows(n)), (&r.r, out_rows(n))] {
        let mut row = 0;
        for rg in ranges {
            cols.rows_mut(rg.start, rg.len())
                .copy_from(&src.rows(row, rg.len()));
            row += rg.len();
        }
    }
    LinearRelation {
        n,
        frame: qr_frame(&cols),
    }
}

/// Potapov matrix of the product `compose(P1, P2)` from those of the factors:
/// with `r1 = [[α, β], [γ, δ]]`, `r2 = [[φ, ψ], [θ, κ]]`,
/// `[[α + β(1-φδ)⁻¹φγ, β(1-φδ)⁻¹ψ], [θ(1-δφ)⁻¹γ, κ + θδ(1-φδ)⁻¹ψ]]`.
pub fn potapov_product(
    r1: &PotapovMatrix,
    r2: &PotapovMatrix,
    tol: &Tolerances,
) -> Result<PotapovMatrix> {
    if r1.n != r2.n {
        return Err(Error::DimensionMismatch {
            op: "potapov_product",
            expected: r1.n,
            found: r2.n,
        });
    }
    let n = r1.n;
    let (al, be, ga, de) = (r1.alpha(), r1.beta(), r1.gamma(), r1.delta());
    let (ph, ps, th, ka) = (r2.alpha(), r2.beta(), r2.gamma(), r2.delta());
    let id = CMat::identity(n, n);
    let left = &id - &ph * &de;
    let right = &id - &de * &ph;
    let sv = left.clone().singular_values();
    if sv.iter().copied().fold(f64::INFINITY, f64::min) <= tol.rank_tol {
        return Err(Error::Singular {
            op: "potapov_product",
        });
    }
    let left_inv = inverse(&left, "potapov_product")?;
    let right_inv = inverse(&right, "potapov_product")?;
    Ok(PotapovMatrix::from_blocks(
        &(&al + &be * &left_inv * &ph * &ga),
        &(&be * &left_inv * &ps),
        &(&th * right_inv * &ga),
        &(&ka + &th * &de * &left_inv * &ps),
    ))
}

// ---------------------------------------------------------------------------
// Graph limits.

/// `N_b = diag(0_m, -I_m, 0_m, I_m)` on `C^{4m}`.
///
/// With this sign `-N_b` is Ical-dissipative, `exp(A - nu N_b)` lies in the
/// contraction semigroup for every `A` in the `sp_c` pattern, and the quadratic
/// quantization of `-N_b` is `-(b* b + m/2)`.
pub fn make_nb(m: usize) -> CMat {
    let mut d = vec![0.0; 4 * m];
    for k in 0..m {
        d[m + k] = -1.0;
        d[3 * m + k] = 1.0;
    }
    from_real_diag(&d)
}

/// `I - N_b^2`, the projector onto the kernel of `N_b` (blocks 1 and 3).
pub fn nb_kernel_projector(m: usize) -> CMat {
    let mut d = vec![0.0; 4 * m];
    for k in 0..m {
        d[k] = 1.0;
        d[2 * m + k] = 1.0;
    }
    from_real_diag(&d)
}

fn check_generator(a: &CMat, m: usize, op: &'static str) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParameter {
            op,
            name: "m",
            reason: "must be at least 1".into(),
        });
    }
    ensure_shape(a, 4 * m, 4 * m, op)
}

/// `(I - N_b²) A (I - N_b²)`.
pub fn a0_generator(a: &CMat, m: usize) -> Result<CMat> {
    check_generator(a, m, "a0_generator")?;
    let p0 = nb_kernel_projector(m);
    Ok(&p0 * a * &p0)
}

/// `N_b A (I - N_b²) + (I - N_b²) A N_b`, the derivative at `ε = 0` of the
/// spectral projector of `ε A - N_b` for the eigenvalue cluster at 0.
pub fn projection_derivative(a: &CMat, m: usize) -> Result<CMat> {
    check_generator(a, m, "projection_derivative")?;
    let nb = make_nb(m);
    let p0 = nb_kernel_projector(m);
    Ok(&nb * a * &p0 + &p0 * a * &nb)
}

/// Limit of `graph(exp(A - nu N_b))` as `nu -> inf`:
/// the span of `v ⊕ 0` for `v` in the `+1` eigenspace of `N_b`, `0 ⊕ v` for
/// `v` in the `-1` eigenspace, and `v ⊕ exp(A_0) v` for `v` in the kernel.
pub fn limit_graph(a: &CMat, m: usize, tol: &Tolerances) -> Result<LinearRelation> {
    check_generator(a, m, "limit_graph")?;
    let s = make_structural(2 * m)?;
    require(a, SetKind::SpcLie, &s, tol, "limit_graph")?;
    let e0 = expm(&a0_generator(a, m)?)?;
    let d = 4 * m;
    let mut cols = CMat::zeros(2 * d, d);
    let mut col = 0;
    for k in 0..m {
        // ker: +1 eigenspace (block 4)
        cols[(3 * m + k, col)] = ONE;
        col += 1;
        // indef: -1 eigenspace (block 2)
        cols[(d + m + k, col)] = ONE;
        col += 1;
    }
    for idx in (0..m).chain(2 * m..3 * m) {
        cols[(idx, col)] = ONE;
        for r in 0..d {
            cols[(d + r, col)] = e0[(r, idx)];
        }
        col += 1;
    }
    Ok(LinearRelation {
        n: 2 * m,
        frame: qr_frame(&cols),
    })
}

/// `(nu, gap(graph(exp(A - nu N_b)), limit))` for each `nu`.
pub fn graph_limit_gaps(a: &CMat, m: usize, nus: &[f64], tol: &Tolerances) -> Result<Vec<f64>> {
    let limit = limit_graph(a, m, tol)?;
    let nb = make_nb(m);
    crate::par::map_slice(nus, |&nu| {
        let g = expm(&(a - &nb * crate::numerics::c(nu, 0.0)))?;
        graph_of(&g)?.gap(&limit)
    })
    .into_iter()
    .collect()
}

/// Largest block deviation between two Potapov matrices.
pub fn potapov_deviation(a: &PotapovMatrix, b: &PotapovMatrix) -> f64 {
    max_abs(&(&a.r - &b.r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{c, gaussian_matrix, subspace_gap, C64, ZERO};
    use crate::symplectic::sample;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn frame_of(cols: &[&[C64]], rows: usize) -> CMat {
        let mut m = CMat::zeros(rows, cols.len());
        for (j, col) in cols.iter().enumerate() {
            for (i, &z) in col.iter().enumerate() {
                m[(i, j)] = z;
            }
        }
        crate::numerics::orthonormal_frame(&m, &tol()).unwrap()
    }

    #[test]
    fn graph_examples() {
        let g0 = graph_of(&CMat::zeros(2, 2)).unwrap();
        let want = frame_of(&[&[ONE, ZERO, ZERO, ZERO], &[ZERO, ONE, ZERO, ZERO]], 4);
        assert!(subspace_gap(&g0.frame, &want).unwrap() < 1e-15);
        let gi = graph_of(&CMat::identity(2, 2)).unwrap();
        let want = frame_of(&[&[ONE, ZERO, ONE, ZERO], &[ZERO, ONE, ZERO, ONE]], 4);
        assert!(subspace_gap(&gi.frame, &want).unwrap() < 1e-15);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let t = gaussian_matrix(&mut r, 4, 4);
        let t2 = gaussian_matrix(&mut r, 4, 4);
        assert!(graph_of(&t).unwrap().gap(&graph_of(&t).unwrap()).unwrap() < 1e-14);
        assert!(graph_of(&t).unwrap().gap(&graph_of(&t2).unwrap()).unwrap() > 1e-2);
        assert!(graph_of(&CMat::zeros(2, 3)).is_err());
    }

    // Brute force: for each basis vector x, w = S x and y = T w.
    #[test]
    fn compose_of_graphs_is_graph_of_reversed_product() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let s = gaussian_matrix(&mut r, 4, 4);
            let t = gaussian_matrix(&mut r, 4, 4);
            let mut pairs = CMat::zeros(8, 4);
            for j in 0..4 {
                let x = CMat::identity(4, 4).column(j).into_owned();
                let w = &s * &x;
                let y = &t * &w;
                pairs.view_mut((0, j), (4, 1)).copy_from(&x);
                pairs.view_mut((4, j), (4, 1)).copy_from(&y);
            }
            let brute = LinearRelation::from_span(2, &pairs, &tol()).unwrap();
            let p = compose(&graph_of(&s).unwrap(), &graph_of(&t).unwrap(), &tol()).unwrap();
            assert!(p.gap(&brute).unwrap() < 1e-10);
        }
    }

    #[test]
    fn compose_with_identity() {
        let g = sample(SetKind::GammaU, 2, 1.0, 3).unwrap();
        let p = graph_of(&g).unwrap();
        let q = compose(&p, &graph_of(&CMat::identity(4, 4)).unwrap(), &tol()).unwrap();
        assert!(p.gap(&q).unwrap() < 1e-12);
        let lim = limit_graph(&sample(SetKind::SpcLie, 2, 1.0, 4).unwrap(), 1, &tol()).unwrap();
        let q = compose(&graph_of(&CMat::identity(4, 4)).unwrap(), &lim, &tol()).unwrap();
        assert!(lim.gap(&q).unwrap() < 1e-12);
    }

    #[test]
    fn compose_reports_degeneracy() {
        // A = {0 ⊕ w}, B = {x ⊕ 0}: both ends vanish, so the product is {0}.
        let mut a_cols = CMat::zeros(8, 4);
        let mut b_cols = CMat::zeros(8, 4);
        for k in 0..4 {
            a_cols[(4 + k, k)] = ONE;
            b_cols[(k, k)] = ONE;
        }
        let a = LinearRelation::from_span(2, &a_cols, &tol()).unwrap();
        let b = LinearRelation::from_span(2, &b_cols, &tol()).unwrap();
        match compose(&a, &b, &tol()) {
            Err(Error::DegenerateRelation { found: 0, .. }) => {}
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn ker_indef_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let t = gaussian_matrix(&mut r, 4, 4);
        let (k, i) = ker_indef(&graph_of(&t).unwrap(), &tol());
        assert_eq!((k.ncols(), i.ncols()), (0, 0));
        let lim = limit_graph(&CMat::zeros(4, 4), 1, &tol()).unwrap();
        let (k, i) = ker_indef(&lim, &tol());
        assert_eq!((k.ncols(), i.ncols()), (1, 1));
        assert!((k[(3, 0)].norm() - 1.0).abs() < 1e-14);
        assert!((i[(1, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unn_and_symplectic_examples() {
        let s = make_structural(2).unwrap();
        for seed in 0..10 {
            let g = sample(SetKind::GammaSpc, 2, 1.0, seed).unwrap();
            let p = graph_of(&g).unwrap();
            assert!(is_unn(&p, &s, &tol()).unwrap().holds);
            assert!(is_symplectic_rel(&p, &s, &tol()).unwrap().0);
        }
        let p = graph_of(&(CMat::identity(4, 4) * c(2.0, 0.0))).unwrap();
        assert!(!is_unn(&p, &s, &tol()).unwrap().holds);
        assert!(!is_symplectic_rel(&p, &s, &tol()).unwrap().0);
    }

    #[test]
    fn potapov_examples() {
        let t = tol();
        let r = potapov_matrix(&CMat::identity(2, 2), &t).unwrap();
        assert_eq!(r.r, CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]));
        let r = potapov_relation(&graph_of(&CMat::identity(2, 2)).unwrap(), &t).unwrap();
        assert!(max_abs(&(r.r - CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]))) < 1e-15);
        let tt = 1.0f64;
        let g = from_real_diag(&[tt.exp(), (-tt).exp()]);
        let r = potapov_matrix(&g, &t).unwrap();
        let e = c((-tt).exp(), 0.0);
        assert!(max_abs(&(r.r - CMat::from_row_slice(2, 2, &[ZERO, e, e, ZERO]))) < 1e-15);
        assert!(potapov_matrix(&from_real_diag(&[0.0, 1.0]), &t).is_err());
    }

    #[test]
    fn potapov_symplectic_lower_left_block() {
        let t = tol();
        for seed in 0..10 {
            let g = sample(SetKind::GammaSpc, 2, 1.0, seed).unwrap();
            let r = potapov_matrix(&g, &t).unwrap();
            let a = g.view((0, 0), (2, 2)).into_owned();
            let want = inverse(&a.transpose(), "test").unwrap();
            assert!(max_abs(&(r.gamma() - want)) < 1e-10);
        }
    }

    #[test]
    fn potapov_two_routes_agree() {
        let t = tol();
        for seed in 0..50 {
            let n = 1 + (seed % 2) as usize;
            let g = sample(SetKind::GammaU, n, 1.5, seed).unwrap();
            let r1 = potapov_matrix(&g, &t).unwrap();
            let r2 = potapov_relation(&graph_of(&g).unwrap(), &t).unwrap();
            assert!(potapov_deviation(&r1, &r2) < 1e-10);
            assert!(r1.norm() <= 1.0 + 1e-10);
            let back = relation_from_potapov(&r2);
            assert!(back.gap(&graph_of(&g).unwrap()).unwrap() < 1e-10);
        }
    }

    #[test]
    fn contraction_conditions_agree() {
        // Ical-contractivity of g, membership of graph(g), and ‖Π(g)‖ ≤ 1 hold
        // or fail together; inverses of strict contractions fail all three.
        let t = tol();
        for seed in 0..40 {
            let n = 1 + (seed % 2) as usize;
            let s = make_structural(n).unwrap();
            let g = sample(SetKind::GammaU, n, 1.0, seed).unwrap();
            let inv = inverse(&g, "test").unwrap();
            for (m, expect) in [(&g, true), (&inv, false)] {
                let form = &s.ical - m.adjoint() * &s.ical * m;
                let contractive = hermitian_eigvals(&form)[0] >= -t.psd_tol;
                let in_semigroup = is_unn(&graph_of(m).unwrap(), &s, &t).unwrap().holds;
                let pi_contraction = potapov_matrix(m, &t).is_ok_and(|r| r.norm() <= 1.0 + 1e-10);
                assert_eq!((contractive, in_semigroup, pi_contraction), (expect, expect, expect), "seed {seed}");
            }
        }
    }

    #[test]
    fn potapov_product_identity_and_associativity() {
        let t = tol();
        let id = potapov_relation(&graph_of(&CMat::identity(4, 4)).unwrap(), &t).unwrap();
        let rs: Vec<PotapovMatrix> = (0..3)
            .map(|k| potapov_matrix(&sample(SetKind::GammaU, 2, 1.0, 40 + k).unwrap(), &t).unwrap())
            .collect();
        let same = potapov_product(&rs[0], &id, &t).unwrap();
        assert!(potapov_deviation(&same, &rs[0]) < 1e-14);
        let left =
            potapov_product(&potapov_product(&rs[0], &rs[1], &t).unwrap(), &rs[2], &t).unwrap();
        let right =
            potapov_product(&rs[0], &potapov_product(&rs[1], &rs[2], &t).unwrap(), &t).unwrap();
        assert!(potapov_deviation(&left, &right) < 1e-8);
    }

    #[test]
    fn potapov_product_matches_composition() {
        let t = tol();
        for seed in 0..30 {
            let g1 = sample(SetKind::GammaU, 2, 1.2, 2 * seed).unwrap();
            let g2 = sample(SetKind::GammaU, 2, 1.2, 2 * seed + 1).unwrap();
            let (p1, p2) = (graph_of(&g1).unwrap(), graph_of(&g2).unwrap());
            let via_formula = potapov_product(
                &potapov_relation(&p1, &t).unwrap(),
                &potapov_relation(&p2, &t).unwrap(),
                &t,
            )
            .unwrap();
            let via_compose = potapov_relation(&compose(&p1, &p2, &t).unwrap(), &t).unwrap();
            assert!(potapov_deviation(&via_formula, &via_compose) < 1e-9);
        }
    }

    #[test]
    fn nb_properties() {
        let nb = make_nb(1);
        assert_eq!(nb, from_real_diag(&[0.0, -1.0, 0.0, 1.0]));
        let s = make_structural(2).unwrap();
        let rep = crate::symplectic::classify(&(-&nb), &s, &tol()).unwrap();
        assert!(rep.sdiss_spc.holds);
        let sq = &nb * &nb;
        assert_eq!(&sq * &sq, sq);
        assert_eq!(&sq + nb_kernel_projector(1), CMat::identity(4, 4));
    }

    #[test]
    fn limit_graph_of_zero() {
        let lim = limit_graph(&CMat::zeros(4, 4), 1, &tol()).unwrap();
        let e = |k: usize| {
            let mut v = vec![ZERO; 8];
            v[k] = ONE;
            v
        };
        let (e4_0, e1_e1, e3_e3, o_e2) = (
            e(3),
            {
                let mut v = e(0);
                v[4] = ONE;
                v
            },
            {
                let mut v = e(2);
                v[6] = ONE;
                v
            },
            e(5),
        );
        let want = frame_of(&[&e4_0, &e1_e1, &e3_e3, &o_e2], 8);
        assert!(lim.gap(&LinearRelation { n: 2, frame: want }).unwrap() < 1e-15);
    }

    #[test]
    fn limit_graph_is_contractive_and_symplectic() {
        let s = make_structural(2).unwrap();
        for seed in 0..20 {
            let a = sample(SetKind::SpcLie, 2, 1.0, seed).unwrap();
            let lim = limit_graph(&a, 1, &tol()).unwrap();
            assert!(is_unn(&lim, &s, &tol()).unwrap().holds);
            assert!(is_symplectic_rel(&lim, &s, &tol()).unwrap().0);
            let (k, i) = ker_indef(&lim, &tol());
            let e4 = frame_of(&[&[ZERO, ZERO, ZERO, ONE]], 4);
            let e2 = frame_of(&[&[ZERO, ONE, ZERO, ZERO]], 4);
            assert!(subspace_gap(&k, &e4).unwrap() < 1e-12);
            assert!(subspace_gap(&i, &e2).unwrap() < 1e-12);
        }
        assert!(limit_graph(&CMat::identity(4, 4), 1, &tol()).is_err());
    }

    #[test]
    fn limit_graph_middle_block_is_exp_of_a0() {
        let a = sample(SetKind::SpcLie, 2, 1.0, 8).unwrap();
        let lim = limit_graph(&a, 1, &tol()).unwrap();
        let e0 = expm(&a0_generator(&a, 1).unwrap()).unwrap();
        for idx in [0usize, 2] {
            let mut v = CMat::zeros(8, 1);
            v[(idx, 0)] = ONE;
            for r in 0..4 {
                v[(4 + r, 0)] = e0[(r, idx)];
            }
            // v lies in the span of the frame
            let resid = &v - &lim.frame * (lim.frame.adjoint() * &v);
            assert!(max_abs(&resid) < 1e-13);
        }
    }

    #[test]
    fn graph_limit_gap_decreases() {
        let a = sample(SetKind::SpcLie, 2, 1.0, 12).unwrap();
        let gaps = graph_limit_gaps(&a, 1, &[4.0, 8.0, 16.0], &tol()).unwrap();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn a0_and_derivative_examples() {
        let z = CMat::zeros(4, 4);
        assert_eq!(a0_generator(&z, 1).unwrap(), z);
        assert_eq!(projection_derivative(&z, 1).unwrap(), z);
        let d = from_real_diag(&[0.3, -1.2, 2.0, 0.7]);
        assert_eq!(projection_derivative(&d, 1).unwrap(), z);
        let a = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(3), 8, 8);
        let once = a0_generator(&a, 2).unwrap();
        assert_eq!(a0_generator(&once, 2).unwrap(), once);
        assert!(a0_generator(&a, 1).is_err());
    }

    // Riesz projector (1/2πi)∮(z - M)^{-1} dz over |z| = 1/2, trapezoidal rule.
    fn cluster_projector(m: &CMat) -> CMat {
        let n = m.nrows();
        let pts = 256;
        let mut acc = CMat::zeros(n, n);
        for k in 0..pts {
            let th = 2.0 * std::f64::consts::PI * k as f64 / pts as f64;
            let z = C64::from_polar(0.5, th);
            let res = (CMat::identity(n, n) * z - m).try_inverse().unwrap();
            // dz = i z dθ, so (1/2πi) dz = z dθ / 2π
            acc += res * (z / pts as f64);
        }
        acc
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let nb = make_nb(1);
        for seed in 0..5 {
            let a = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(seed), 4, 4);
            let eps = 1e-5;
            let plus = cluster_projector(&(&a * c(eps, 0.0) - &nb));
            let minus = cluster_projector(&(&a * c(-eps, 0.0) - &nb));
            let fd = (plus - minus) * c(0.5 / eps, 0.0);
            let exact = projection_derivative(&a, 1).unwrap();
            assert!(norm_fro(&(&fd - &exact)) / norm_fro(&exact) < 1e-3);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn semigroup_closure(seed in 0u64..100_000) {
            let s = make_structural(2).unwrap();
            let t = tol();
            let g1 = sample(SetKind::GammaSpc, 2, 1.0, seed).unwrap();
            let a = sample(SetKind::SpcLie, 2, 0.8, seed + 7).unwrap();
            let lim = limit_graph(&a, 1, &t).unwrap();
            let p = compose(&graph_of(&g1).unwrap(), &lim, &t).unwrap();
            prop_assert!(is_unn(&p, &s, &t).unwrap().holds);
            prop_assert!(is_symplectic_rel(&p, &s, &t).unwrap().0);
            let q = compose(&lim, &graph_of(&g1).unwrap(), &t).unwrap();
            prop_assert!(is_unn(&q, &s, &t).unwrap().holds);
        }

        #[test]
        fn potapov_roundtrip_on_limits(seed in 0u64..100_000) {
            let t = tol();
            let a = sample(SetKind::SpcLie, 2, 1.0, seed).unwrap();
            let lim = limit_graph(&a, 1, &t).unwrap();
            let r = potapov_relation(&lim, &t).unwrap();
            prop_assert!(r.norm() <= 1.0 + 1e-10);
            prop_assert!(relation_from_potapov(&r).gap(&lim).unwrap() < 1e-10);
        }

        #[test]
        fn potapov_product_is_continuous(seed in 0u64..100_000) {
            let t = tol();
            let r1 = potapov_matrix(&sample(SetKind::GammaU, 2, 1.0, seed).unwrap(), &t).unwrap();
            let r2 = potapov_matrix(&sample(SetKind::GammaU, 2, 1.0, seed + 1).unwrap(), &t).unwrap();
            let bump = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(seed), 4, 4) * c(1e-8, 0.0);
            let r1b = PotapovMatrix::new(&r1.r + bump).unwrap();
            let base = potapov_product(&r1, &r2, &t).unwrap();
            let moved = potapov_product(&r1b, &r2, &t).unwrap();
            prop_assert!(potapov_deviation(&base, &moved) < 1e-6);
        }
    }
}
