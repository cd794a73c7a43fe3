//! Structural matrices of the complexified symplectic group, membership tests
//! for its subgroups, Lie algebras and dissipative cones, quadratic
//! Hamiltonians, and the factorization `g = h * exp(X)` of contraction-semigroup
//! elements into a pseudo-unitary part and a dissipative part.
//!
//! Conventions, with `n` the half dimension:
//!
//! * `J = [[0, I], [-I, 0]]`, `W = [[I, iI], [I, -iI]] / sqrt(2)`.
//! * `Ical = -i W J W^{-1} = diag(-I, I)`, the indefinite form `<u|v> = u* Ical v`.
//! * The block pattern of the Cayley-transformed real symplectic algebra is
//!   `[[A, B], [conj(B), conj(A)]]` with `A* = -A` and `B^T = B`.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    c, ensure_shape, ensure_square, expm, gaussian_matrix, hermitian_eigvals, hermitian_part,
    logm_principal, norm_fro, op_norm, CMat, CVec, Tolerances, C64, I, ONE, ZERO,
};

#[derive(Clone, Debug)]
pub struct StructuralMatrices {
    pub n: usize,
    pub j: CMat,
    pub w: CMat,
    pub w_inv: CMat,
    pub ical: CMat,
}

pub fn make_structural(n: usize) -> Result<StructuralMatrices> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            op: "make_structural",
            name: "n",
            reason: "must be at least 1".into(),
        });
    }
    let dim = 2 * n;
    let mut j = CMat::zeros(dim, dim);
    let mut w = CMat::zeros(dim, dim);
    let mut ical = CMat::zeros(dim, dim);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..n {
        j[(k, n + k)] = ONE;
        j[(n + k, k)] = -ONE;
        w[(k, k)] = c(r, 0.0);
        w[(k, n + k)] = c(0.0, r);
        w[(n + k, k)] = c(r, 0.0);
        w[(n + k, n + k)] = c(0.0, -r);
        ical[(k, k)] = -ONE;
        ical[(n + k, n + k)] = ONE;
    }
    // W is unitary, so its inverse is the adjoint.
    let w_inv = w.adjoint();
    Ok(StructuralMatrices {
        n,
        j,
        w,
        w_inv,
        ical,
    })
}

impl StructuralMatrices {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    fn check(&self, m: &CMat, op: &'static str) -> Result<()> {
        ensure_shape(m, self.dim(), self.dim(), op)
    }

    /// `Ical M* Ical`, the adjoint for the indefinite form.
    pub fn ical_adjoint(&self, m: &CMat) -> CMat {
        &self.ical * m.adjoint() * &self.ical
    }
}

/// `W A W^{-1}`.
pub fn cayley(a: &CMat, s: &StructuralMatrices) -> Result<CMat> {
    s.check(a, "cayley")?;
    Ok(&s.w * a * &s.w_inv)
}

/// `u* Ical v`.
pub fn herm_form(u: &CVec, v: &CVec, s: &StructuralMatrices) -> Result<C64> {
    for x in [u, v] {
        if x.len() != s.dim() {
            return Err(Error::DimensionMismatch {
                op: "herm_form",
                expected: s.dim(),
                found: x.len(),
            });
        }
    }
    Ok((u.adjoint() * &s.ical * v)[(0, 0)])
}

// ---------------------------------------------------------------------------
// Membership.

/// Sets that [`classify`] decides and [`sample`] draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    /// Sp(2n, R)
    SpReal,
    /// Sp(2n, C)
    SpComplex,
    /// sp(2n, R)
    SpLieReal,
    /// sp(2n, C)
    SpLieComplex,
    /// Cayley image of sp(2n, R)
    SpcLie,
    /// Cayley image of Sp(2n, R), equal to U(n,n) meet Sp(2n, C)
    SpcGroup,
    /// U(n,n)
    Unn,
    /// u(n,n)
    UnnLie,
    /// Invertible Ical-contractions
    GammaU,
    /// Sp(2n, C) meet GammaU
    GammaSpc,
    /// Ical-dissipative matrices
    Diss,
    /// Ical-self-adjoint dissipative matrices
    Sdiss,
    /// sp(2n, C) meet Diss
    DissSpc,
    /// i * SpcLie meet Sdiss
    SdissSpc,
}

impl SetKind {
    pub const ALL: [SetKind; 14] = [
        SetKind::SpReal,
        SetKind::SpComplex,
        SetKind::SpLieReal,
        SetKind::SpLieComplex,
        SetKind::SpcLie,
        SetKind::SpcGroup,
        SetKind::Unn,
        SetKind::UnnLie,
        SetKind::GammaU,
        SetKind::GammaSpc,
        SetKind::Diss,
        SetKind::Sdiss,
        SetKind::DissSpc,
        SetKind::SdissSpc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SetKind::SpReal => "sp_real",
            SetKind::SpComplex => "sp_complex",
            SetKind::SpLieReal => "sp_lie_real",
            SetKind::SpLieComplex => "sp_lie_complex",
            SetKind::SpcLie => "spc_lie",
            SetKind::SpcGroup => "spc_group",
            SetKind::Unn => "unn",
            SetKind::UnnLie => "unn_lie",
            SetKind::GammaU => "gamma_u",
            SetKind::GammaSpc => "gamma_spc",
            SetKind::Diss => "diss",
            SetKind::Sdiss => "sdiss",
            SetKind::DissSpc => "diss_spc",
            SetKind::SdissSpc => "sdiss_spc",
        }
    }

    pub fn parse(tag: &str) -> Result<SetKind> {
        SetKind::ALL
            .into_iter()
            .find(|k| k.name() == tag)
            .ok_or_else(|| Error::UnknownTag(tag.to_string()))
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One membership decision. `holds` is exactly `residual <= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Check {
    pub holds: bool,
    pub residual: f64,
    pub threshold: f64,
}

impl Check {
    fn new(residual: f64, threshold: f64) -> Check {
        Check {
            holds: residual <= threshold,
            residual,
            threshold,
        }
    }

    /// Conjunction: reports the component that is relatively worst.
    fn and(self, other: Check) -> Check {
        if other.residual / other.threshold > self.residual / self.threshold {
            other
        } else {
            self
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MembershipReport {
    pub sp_real: Check,
    pub sp_complex: Check,
    pub sp_lie_real: Check,
    pub sp_lie_complex: Check,
    pub spc_lie: Check,
    pub spc_group: Check,
    pub unn: Check,
    pub unn_lie: Check,
    pub gamma_u: Check,
    pub gamma_spc: Check,
    pub diss: Check,
    pub sdiss: Check,
    pub diss_spc: Check,
    pub sdiss_spc: Check,
}

impl MembershipReport {
    pub fn get(&self, kind: SetKind) -> Check {
        match kind {
            SetKind::SpReal => self.sp_real,
            SetKind::SpComplex => self.sp_complex,
            SetKind::SpLieReal => self.sp_lie_real,
            SetKind::SpLieComplex => self.sp_lie_complex,
            SetKind::SpcLie => self.spc_lie,
            SetKind::SpcGroup => self.spc_group,
            SetKind::Unn => self.unn,
            SetKind::UnnLie => self.unn_lie,
            SetKind::GammaU => self.gamma_u,
            SetKind::GammaSpc => self.gamma_spc,
            SetKind::Diss => self.diss,
            SetKind::Sdiss => self.sdiss,
            SetKind::DissSpc => self.diss_spc,
            SetKind::SdissSpc => self.sdiss_spc,
        }
    }

    pub fn entries(&self) -> Vec<(SetKind, Check)> {
        SetKind::ALL.iter().map(|&k| (k, self.get(k))).collect()
    }
}

fn scale1(m: &CMat) -> f64 {
    norm_fro(m).max(1.0)
}

fn scale2(m: &CMat) -> f64 {
    norm_fro(m).powi(2).max(1.0)
}

/// Residual of the `sp_c` block pattern `[[A, B], [conj B, conj A]]`,
/// `A* = -A`, `B^T = B`, relative to `max(1, |M|_F)`.
fn spc_pattern_residual(m: &CMat, n: usize) -> f64 {
    let a = m.view((0, 0), (n, n));
    let b = m.view((0, n), (n, n));
    let cc = m.view((n, 0), (n, n));
    let d = m.view((n, n), (n, n));
    let parts = [
        norm_fro(&(a + a.adjoint())),
        norm_fro(&(b - b.transpose())),
        norm_fro(&(cc - b.map(|z| z.conj()))),
        norm_fro(&(d - a.map(|z| z.conj()))),
    ];
    parts.iter().copied().fold(0.0, f64::max) / scale1(m)
}

/// Evaluates every predicate with its residual.
pub fn classify(m: &CMat, s: &StructuralMatrices, tol: &Tolerances) -> Result<MembershipReport> {
    s.check(m, "classify")?;
    let (eq, psd) = (tol.eq_tol, tol.psd_tol);
    let n = s.n;
    let j = &s.j;
    let ical = &s.ical;

    let realness = Check::new(norm_fro(&m.map(|z| c(0.0, z.im))) / scale1(m), eq);

    let sp_complex = Check::new(norm_fro(&(m.transpose() * j * m - j)) / scale2(m), eq);
    let sp_lie_complex = Check::new(norm_fro(&(j * m + m.transpose() * j)) / scale1(m), eq);
    let unn = Check::new(norm_fro(&(m.adjoint() * ical * m - ical)) / scale2(m), eq);
    let im = ical * m;
    let unn_lie = Check::new(norm_fro(&(&im + im.adjoint())) / scale1(m), eq);
    let spc_lie = Check::new(spc_pattern_residual(m, n), eq);
    // -iM in sp_c, i.e. M = iY with Y in the sp_c pattern.
    let spc_lie_of_minus_i = Check::new(spc_pattern_residual(&(m * -I), n), eq);
    let ical_m_hermitian = Check::new(norm_fro(&(&im - im.adjoint())) / scale1(m), eq);

    let contraction = {
        let sv = m.clone().singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smax == 0.0 || smin <= tol.rank_tol * smax {
            Check::new(1.0, psd)
        } else {
            let defect = ical - m.adjoint() * ical * m;
            let lo = hermitian_eigvals(&defect)[0];
            Check::new((-lo).max(0.0) / scale2(m), psd)
        }
    };
    let diss_form = {
        let hi = *hermitian_eigvals(&(&im + im.adjoint())).last().unwrap();
        Check::new(hi.max(0.0) / scale1(m), psd)
    };
    let nonpositive = {
        let hi = *hermitian_eigvals(&im).last().unwrap();
        Check::new(hi.max(0.0) / scale1(m), psd)
    };

    Ok(MembershipReport {
        sp_real: sp_complex.and(realness),
        sp_complex,
        sp_lie_real: sp_lie_complex.and(realness),
        sp_lie_complex,
        spc_lie,
        spc_group: unn.and(sp_complex),
        unn,
        unn_lie,
        gamma_u: contraction,
        gamma_spc: sp_complex.and(contraction),
        diss: diss_form,
        sdiss: ical_m_hermitian.and(nonpositive),
        diss_spc: sp_lie_complex.and(diss_form),
        sdiss_spc: spc_lie_of_minus_i.and(nonpositive),
    })
}

pub fn require(
    m: &CMat,
    kind: SetKind,
    s: &StructuralMatrices,
    tol: &Tolerances,
    op: &'static str,
) -> Result<()> {
    let chk = classify(m, s, tol)?.get(kind);
    if chk.holds {
        Ok(())
    } else {
        Err(Error::Membership {
            op,
            set: kind.name(),
            residual: chk.residual,
        })
    }
}

/// Splits a dissipative matrix into its `u(n,n)` part and its
/// Ical-self-adjoint part.
pub fn split_diss(x: &CMat, s: &StructuralMatrices, tol: &Tolerances) -> Result<(CMat, CMat)> {
    require(x, SetKind::Diss, s, tol, "split_diss")?;
    let adj = s.ical_adjoint(x);
    let half = c(0.5, 0.0);
    Ok(((x - &adj) * half, (x + &adj) * half))
}

#[derive(Clone, Debug)]
pub struct PoDecomposition {
    /// Pseudo-unitary symplectic factor.
    pub h: CMat,
    /// Ical-self-adjoint dissipative generator.
    pub x: CMat,
    /// `|h exp(X) - g|_F / |g|_F`.
    pub reconstruction: f64,
}

/// Factorizes `g` in the contraction semigroup as `h * exp(X)`.
///
/// With `g# = Ical g* Ical` one has `g# g = exp(2X)`, so `X` is half the
/// principal logarithm of `g# g` and `h = g exp(-X)`.
pub fn po_decompose(g: &CMat, s: &StructuralMatrices, tol: &Tolerances) -> Result<PoDecomposition> {
    require(g, SetKind::GammaSpc, s, tol, "po_decompose")?;
    let m = s.ical_adjoint(g) * g;
    let x = logm_principal(&m, tol)? * c(0.5, 0.0);
    let h = g * expm(&(-&x))?;
    let reconstruction = norm_fro(&(&h * expm(&x)? - g)) / norm_fro(g);
    Ok(PoDecomposition {
        h,
        x,
        reconstruction,
    })
}

// ---------------------------------------------------------------------------
// Quadratic Hamiltonians.

/// A quadratic Hamiltonian `h_A` on `C^m`, given by `A` in the `sp_c`
/// pattern of size `2m`.
#[derive(Clone, Debug)]
pub struct HamiltonianSymbol {
    pub m: usize,
    pub a: CMat,
}

impl HamiltonianSymbol {
    pub fn new(a: CMat, tol: &Tolerances) -> Result<Self> {
        let dim = ensure_square(&a, "HamiltonianSymbol")?;
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::InvalidParameter {
                op: "HamiltonianSymbol",
                name: "A",
                reason: format!("size {dim} is not a positive even number"),
            });
        }
        let s = make_structural(dim / 2)?;
        require(&a, SetKind::SpcLie, &s, tol, "HamiltonianSymbol")?;
        Ok(Self { m: dim / 2, a })
    }

    /// `A = [[i r, w], [conj w, -i r]]`, for which `i h_A(z) = r |z|^2 + Im(w z^2)`.
    pub fn single_mode(r: f64, w: C64) -> Self {
        let a = CMat::from_row_slice(2, 2, &[c(0.0, r), w, w.conj(), c(0.0, -r)]);
        Self { m: 1, a }
    }

    pub fn zero(m: usize) -> Self {
        Self {
            m,
            a: CMat::zeros(2 * m, 2 * m),
        }
    }

    pub fn random(m: usize, norm: f64, seed: u64) -> Result<Self> {
        let a = sample(SetKind::SpcLie, m, norm, seed)?;
        Ok(Self { m, a })
    }

    /// Block `A` in `[[A, B], [conj B, conj A]]`.
    pub fn block_a(&self) -> CMat {
        self.a.view((0, 0), (self.m, self.m)).into_owned()
    }

    /// Block `B` in `[[A, B], [conj B, conj A]]`.
    pub fn block_b(&self) -> CMat {
        self.a.view((0, self.m), (self.m, self.m)).into_owned()
    }

    /// Hermitian matrix `Ical A`; `h_A(z) = 1/2 zz* (Ical A) zz`.
    pub fn form(&self) -> CMat {
        let s = make_structural(self.m).expect("m >= 1");
        &s.ical * &self.a
    }
}

/// `h_A(z) = 1/2 zz* Ical A zz` with `zz = (conj z, z)`; purely imaginary.
pub fn h_a_eval(sym: &HamiltonianSymbol, z: &[C64]) -> Result<C64> {
    if z.len() != sym.m {
        return Err(Error::DimensionMismatch {
            op: "h_a_eval",
            expected: sym.m,
            found: z.len(),
        });
    }
    Ok(quadratic_value(&sym.form(), z))
}

/// `1/2 zz* F zz` for a precomputed `F = Ical A`.
pub fn quadratic_value(form: &CMat, z: &[C64]) -> C64 {
    let m = z.len();
    let col = |k: usize| if k < m { z[k].conj() } else { z[k - m] };
    let mut acc = ZERO;
    for i in 0..2 * m {
        let left = col(i).conj();
        for j in 0..2 * m {
            acc += left * form[(i, j)] * col(j);
        }
    }
    acc * 0.5
}

/// The `4m x 4m` matrix whose quadratic quantization equals `h_A(Z)`.
pub fn lift_hat(sym: &HamiltonianSymbol) -> Result<CMat> {
    let tol = Tolerances::default();
    let s = make_structural(sym.m)?;
    require(&sym.a, SetKind::SpcLie, &s, &tol, "lift_hat")?;
    let m = sym.m;
    let a = sym.block_a();
    let b = sym.block_b();
    let ab = a.map(|z| z.conj());
    let bb = b.map(|z| z.conj());
    let rows: [[CMat; 4]; 4] = [
        [-&ab, -&bb, -&bb, -&ab],
        [b.clone(), a.clone(), a.clone(), b.clone()],
        [-&b, -&a, -&a, -&b],
        [ab.clone(), bb.clone(), bb.clone(), ab.clone()],
    ];
    let mut out = CMat::zeros(4 * m, 4 * m);
    for (bi, row) in rows.iter().enumerate() {
        for (bj, blk) in row.iter().enumerate() {
            out.view_mut((bi * m, bj * m), (m, m)).copy_from(blk);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sampling.

fn real_gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    gaussian_matrix(rng, rows, cols).map(|z| c(z.re, 0.0))
}

fn symmetric(m: &CMat) -> CMat {
    (m + m.transpose()) * c(0.5, 0.0)
}

fn skew_hermitian(m: &CMat) -> CMat {
    (m - m.adjoint()) * c(0.5, 0.0)
}

fn blocks(a: &CMat, b: &CMat, cc: &CMat, d: &CMat) -> CMat {
    let n = a.nrows();
    let mut out = CMat::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, n)).copy_from(b);
    out.view_mut((n, 0), (n, n)).copy_from(cc);
    out.view_mut((n, n), (n, n)).copy_from(d);
    out
}

fn normalized(m: CMat, norm: f64) -> CMat {
    let cur = op_norm(&m);
    if cur == 0.0 {
        m
    } else {
        m * c(norm / cur, 0.0)
    }
}

fn draw_sp_lie(rng: &mut ChaCha8Rng, n: usize, real: bool) -> CMat {
    let g = |rng: &mut ChaCha8Rng| {
        if real {
            real_gaussian(rng, n, n)
        } else {
            gaussian_matrix(rng, n, n)
        }
    };
    let a = g(rng);
    let b = symmetric(&g(rng));
    let cc = symmetric(&g(rng));
    blocks(&a, &b, &cc, &(-a.transpose()))
}

fn draw_spc_lie(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let a = skew_hermitian(&gaussian_matrix(rng, n, n));
    let b = symmetric(&gaussian_matrix(rng, n, n));
    let conj = |m: &CMat| m.map(|z| z.conj());
    blocks(&a, &b, &conj(&b), &conj(&a))
}

/// `X = Y - c * Ical` with `Ical X <= -margin`, where `Ical Y` is Hermitian.
fn shift_negative(y: CMat, s: &StructuralMatrices) -> CMat {
    let hi = *hermitian_eigvals(&(&s.ical * &y)).last().unwrap();
    let margin = 0.1 * op_norm(&y).max(1.0);
    y - &s.ical * c(hi.max(0.0) + margin, 0.0)
}

fn draw_sdiss_spc(rng: &mut ChaCha8Rng, s: &StructuralMatrices) -> CMat {
    shift_negative(draw_spc_lie(rng, s.n) * I, s)
}

fn draw_sdiss(rng: &mut ChaCha8Rng, s: &StructuralMatrices) -> CMat {
    let h = hermitian_part(&gaussian_matrix(rng, s.dim(), s.dim()));
    shift_negative(&s.ical * h, s)
}

fn draw_unn_lie(rng: &mut ChaCha8Rng, s: &StructuralMatrices) -> CMat {
    &s.ical * skew_hermitian(&gaussian_matrix(rng, s.dim(), s.dim()))
}

/// Random element of the requested set, with generator of operator norm
/// `scale`. Group elements are exponentials of algebra or cone samples.
/// Deterministic in `(kind, n, scale, seed)`.
pub fn sample(kind: SetKind, n: usize, scale: f64, seed: u64) -> Result<CMat> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter {
            op: "sample",
            name: "scale",
            reason: format!("must be positive, got {scale}"),
        });
    }
    let s = make_structural(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let out = match kind {
        SetKind::SpLieReal => normalized(draw_sp_lie(r, n, true), scale),
        SetKind::SpLieComplex => normalized(draw_sp_lie(r, n, false), scale),
        SetKind::SpReal => expm(&normalized(draw_sp_lie(r, n, true), scale))?,
        SetKind::SpComplex => expm(&normalized(draw_sp_lie(r, n, false), scale))?,
        SetKind::SpcLie => normalized(draw_spc_lie(r, n), scale),
        SetKind::SpcGroup => expm(&normalized(draw_spc_lie(r, n), scale))?,
        SetKind::UnnLie => normalized(draw_unn_lie(r, &s), scale),
        SetKind::Unn => expm(&normalized(draw_unn_lie(r, &s), scale))?,
        SetKind::Sdiss => normalized(draw_sdiss(r, &s), scale),
        SetKind::SdissSpc => normalized(draw_sdiss_spc(r, &s), scale),
        SetKind::Diss => normalized(draw_unn_lie(r, &s) + draw_sdiss(r, &s), scale),
        SetKind::DissSpc => normalized(draw_spc_lie(r, n) + draw_sdiss_spc(r, &s), scale),
        SetKind::GammaU => {
            let x = normalized(draw_unn_lie(r, &s) + draw_sdiss(r, &s), scale);
            expm(&x)?
        }
        SetKind::GammaSpc => {
            let h = expm(&normalized(draw_spc_lie(r, n), scale))?;
            let x = normalized(draw_sdiss_spc(r, &s), scale);
            h * expm(&x)?
        }
    };
    Ok(out)
}

/// Generator pair `(h0, X0)` used to build a semigroup sample `h0 exp(X0)`.
pub fn sample_po_pair(n: usize, scale: f64, seed: u64) -> Result<(CMat, CMat)> {
    let h = sample(SetKind::SpcGroup, n, scale, seed)?;
    let x = sample(SetKind::SdissSpc, n, scale, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok((h, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{from_real_diag, max_abs};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn nb(m: usize) -> CMat {
        let mut d = vec![0.0; 4 * m];
        for k in 0..m {
            d[m + k] = -1.0;
            d[3 * m + k] = 1.0;
        }
        from_real_diag(&d)
    }

    #[test]
    fn structural_identities() {
        for n in 1..=3 {
            let s = make_structural(n).unwrap();
            let id = CMat::identity(2 * n, 2 * n);
            assert!(max_abs(&(s.j.transpose() + &s.j)) == 0.0);
            assert!(max_abs(&(&s.j * &s.j + &id)) == 0.0);
            assert!(max_abs(&(s.w.adjoint() * &s.w - &id)) < 1e-15);
            let jc = cayley(&s.j, &s).unwrap();
            let mut want = CMat::zeros(2 * n, 2 * n);
            for k in 0..n {
                want[(k, k)] = -I;
                want[(n + k, n + k)] = I;
            }
            assert!(max_abs(&(&jc - &want)) < 1e-15);
            assert!(max_abs(&(&jc * -I - &s.ical)) < 1e-15);
            assert!(max_abs(&(&s.ical * &s.ical - &id)) == 0.0);
        }
        assert!(make_structural(0).is_err());
        let s = make_structural(1).unwrap();
        assert_eq!(s.j, CMat::from_row_slice(2, 2, &[ZERO, ONE, -ONE, ZERO]));
        assert_eq!(s.ical, from_real_diag(&[-1.0, 1.0]));
    }

    #[test]
    fn cayley_is_multiplicative() {
        let s = make_structural(2).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = gaussian_matrix(&mut r, 4, 4);
            let b = gaussian_matrix(&mut r, 4, 4);
            let lhs = cayley(&(&a * &b), &s).unwrap();
            let rhs = cayley(&a, &s).unwrap() * cayley(&b, &s).unwrap();
            assert!(max_abs(&(lhs - rhs)) < 1e-12);
        }
        assert_eq!(
            cayley(&CMat::identity(4, 4), &s)
                .unwrap()
                .map(|z| z.re.round()),
            DMatrix::<f64>::identity(4, 4)
        );
        assert!(cayley(&CMat::zeros(3, 3), &s).is_err());
    }

    #[test]
    fn herm_form_examples() {
        let s = make_structural(1).unwrap();
        let e1 = CVec::from_vec(vec![ONE, ZERO]);
        let e2 = CVec::from_vec(vec![ZERO, ONE]);
        assert_eq!(herm_form(&e1, &e1, &s).unwrap(), -ONE);
        assert_eq!(herm_form(&e2, &e2, &s).unwrap(), ONE);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let u = gaussian_matrix(&mut r, 2, 1).column(0).into_owned();
        let v = gaussian_matrix(&mut r, 2, 1).column(0).into_owned();
        let uv = herm_form(&u, &v, &s).unwrap();
        let vu = herm_form(&v, &u, &s).unwrap();
        assert!((uv - vu.conj()).norm() < 1e-15);
        assert!(herm_form(&u, &u, &s).unwrap().im.abs() < 1e-15);
        assert!(herm_form(&CVec::zeros(3), &v, &s).is_err());
    }

    #[test]
    fn classify_examples() {
        let s = make_structural(1).unwrap();
        let rep = classify(&s.j, &s, &tol()).unwrap();
        assert!(rep.sp_real.holds);
        let m = HamiltonianSymbol::single_mode(0.7, c(0.3, -1.1)).a;
        assert!(classify(&m, &s, &tol()).unwrap().spc_lie.holds);
        let x = from_real_diag(&[1.0, -1.0]);
        for t in [0.1, 1.0, 5.0] {
            let g = expm(&(&x * c(t, 0.0))).unwrap();
            assert!(classify(&g, &s, &tol()).unwrap().gamma_spc.holds);
        }
        let s2 = make_structural(2).unwrap();
        let rep = classify(&(-nb(1)), &s2, &tol()).unwrap();
        assert!(rep.sdiss_spc.holds);
        assert!(!classify(&nb(1), &s2, &tol()).unwrap().sdiss_spc.holds);
        assert!(classify(&CMat::zeros(3, 3), &s, &tol()).is_err());
    }

    #[test]
    fn report_residuals_match_flags() {
        let s = make_structural(2).unwrap();
        for (i, kind) in SetKind::ALL.iter().enumerate() {
            let m = sample(*kind, 2, 0.8, 100 + i as u64).unwrap();
            let rep = classify(&m, &s, &tol()).unwrap();
            assert!(
                rep.get(*kind).holds,
                "{kind} sample fails: {:?}",
                rep.get(*kind)
            );
            for (_, chk) in rep.entries() {
                assert_eq!(chk.holds, chk.residual <= chk.threshold);
            }
        }
    }

    #[test]
    fn pseudo_unitary_symplectic_has_both_flags() {
        let s = make_structural(3).unwrap();
        for seed in 0..20 {
            let g = sample(SetKind::SpcGroup, 3, 1.5, seed).unwrap();
            let rep = classify(&g, &s, &tol()).unwrap();
            assert!(rep.unn.holds && rep.sp_complex.holds && rep.spc_group.holds);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample(SetKind::GammaSpc, 2, 1.0, 7).unwrap();
        let b = sample(SetKind::GammaSpc, 2, 1.0, 7).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        assert!(SetKind::parse("nope").is_err());
        assert!(sample(SetKind::Diss, 1, 0.0, 1).is_err());
        let s1 = make_structural(1).unwrap();
        assert!(
            classify(&sample(SetKind::SpcLie, 1, 1.0, 7).unwrap(), &s1, &tol())
                .unwrap()
                .spc_lie
                .holds
        );
    }

    #[test]
    fn split_diss_examples() {
        let s = make_structural(2).unwrap();
        let u = sample(SetKind::UnnLie, 2, 1.0, 3).unwrap();
        let (xu, xs) = split_diss(&u, &s, &tol()).unwrap();
        assert!(max_abs(&xs) < 1e-15 && max_abs(&(xu - &u)) < 1e-15);
        let (xu, xs) = split_diss(&(-nb(1)), &s, &tol()).unwrap();
        assert!(max_abs(&xu) == 0.0 && max_abs(&(xs + nb(1))) == 0.0);
        for seed in 0..20 {
            let x = sample(SetKind::Diss, 2, 2.0, seed).unwrap();
            let (xu, xs) = split_diss(&x, &s, &tol()).unwrap();
            assert!(max_abs(&(&xu + &xs - &x)) < 1e-12);
            assert!(classify(&xu, &s, &tol()).unwrap().unn_lie.holds);
            assert!(classify(&xs, &s, &tol()).unwrap().sdiss.holds);
            assert!(max_abs(&(s.ical_adjoint(&xs) - &xs)) < 1e-12);
        }
        assert!(split_diss(&nb(1), &s, &tol()).is_err());
    }

    #[test]
    fn po_decompose_examples() {
        let s = make_structural(2).unwrap();
        let g = sample(SetKind::SpcGroup, 2, 1.0, 5).unwrap();
        let d = po_decompose(&g, &s, &tol()).unwrap();
        assert!(max_abs(&d.x) < 1e-12 && max_abs(&(d.h - &g)) < 1e-12);
        let g = expm(&(-nb(1))).unwrap();
        let d = po_decompose(&g, &s, &tol()).unwrap();
        assert!(max_abs(&(d.h - CMat::identity(4, 4))) < 1e-9);
        assert!(max_abs(&(d.x + nb(1))) < 1e-9);
        assert!(po_decompose(&(CMat::identity(4, 4) * c(2.0, 0.0)), &s, &tol()).is_err());
    }

    #[test]
    fn po_decompose_recovers_generators() {
        let s = make_structural(2).unwrap();
        for seed in 0..20 {
            let (h0, x0) = sample_po_pair(2, 0.9, seed).unwrap();
            let g = &h0 * expm(&x0).unwrap();
            let d = po_decompose(&g, &s, &tol()).unwrap();
            assert!(d.reconstruction < 1e-9);
            assert!(max_abs(&(&d.x - &x0)) < 1e-7);
            assert!(max_abs(&(&d.h - &h0)) < 1e-7);
            let again = po_decompose(&g, &s, &tol()).unwrap();
            assert!(max_abs(&(again.x - &d.x)) < 1e-9);
        }
    }

    #[test]
    fn po_decompose_is_continuous() {
        let s = make_structural(1).unwrap();
        let (h0, x0) = sample_po_pair(1, 0.7, 4).unwrap();
        let g = &h0 * expm(&x0).unwrap();
        let d0 = po_decompose(&g, &s, &tol()).unwrap();
        // Perturb along the group: g exp(eps Y), Y in sp_c.
        let y = sample(SetKind::SpcLie, 1, 1.0, 9).unwrap();
        let g1 = &g * expm(&(y * c(1e-6, 0.0))).unwrap();
        let d1 = po_decompose(&g1, &s, &tol()).unwrap();
        assert!(max_abs(&(d1.x - d0.x)) < 1e-5);
        assert!(max_abs(&(d1.h - d0.h)) < 1e-5);
    }

    #[test]
    fn h_a_examples() {
        let z1 = [c(1.0, 0.0)];
        assert_eq!(h_a_eval(&HamiltonianSymbol::zero(1), &z1).unwrap(), ZERO);
        let sym = HamiltonianSymbol::new(from_diag_i(), &tol()).unwrap();
        // 1/2 (1, 1) diag(-1, 1) diag(i, -i) (1, 1)^T = 1/2 (-i - i) = -i
        let v = h_a_eval(&sym, &z1).unwrap();
        assert!((v - c(0.0, -1.0)).norm() < 1e-15);
        assert!(h_a_eval(&sym, &[ONE, ONE]).is_err());
    }

    fn from_diag_i() -> CMat {
        CMat::from_row_slice(2, 2, &[I, ZERO, ZERO, -I])
    }

    #[test]
    fn h_a_single_mode_closed_form() {
        let sym = HamiltonianSymbol::single_mode(0.4, c(0.2, -0.5));
        let z = c(0.8, 1.3);
        let v = h_a_eval(&sym, &[z]).unwrap();
        let want = -(0.4 * z.norm_sqr() + (c(0.2, -0.5) * z * z).im);
        assert!((v - c(0.0, want)).norm() < 1e-14);
    }

    #[test]
    fn lift_hat_lands_in_spc() {
        let s = make_structural(2).unwrap();
        assert!(max_abs(&lift_hat(&HamiltonianSymbol::zero(1)).unwrap()) == 0.0);
        for seed in 0..100 {
            let sym = HamiltonianSymbol::random(1, 1.0, seed).unwrap();
            let hat = lift_hat(&sym).unwrap();
            assert!(classify(&hat, &s, &tol()).unwrap().spc_lie.holds);
        }
        let bad = HamiltonianSymbol {
            m: 1,
            a: from_real_diag(&[1.0, 1.0]),
        };
        assert!(lift_hat(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn h_a_is_imaginary_and_additive(seed in 0u64..100_000, zr in -3.0f64..3.0, zi in -3.0f64..3.0) {
            let a = HamiltonianSymbol::random(2, 1.3, seed).unwrap();
            let b = HamiltonianSymbol::random(2, 0.6, seed + 1).unwrap();
            let sum = HamiltonianSymbol { m: 2, a: &a.a + &b.a };
            let z = [c(zr, zi), c(zi * 0.5, -zr)];
            let (va, vb) = (h_a_eval(&a, &z).unwrap(), h_a_eval(&b, &z).unwrap());
            prop_assert!(va.re.abs() < 1e-12 * (1.0 + va.norm()));
            prop_assert!((h_a_eval(&sum, &z).unwrap() - va - vb).norm() < 1e-12);
            // real quadratic form: h(t z) = t^2 h(z) for real t
            let tz = [z[0] * 1.7, z[1] * 1.7];
            prop_assert!((h_a_eval(&a, &tz).unwrap() - va * 1.7 * 1.7).norm() < 1e-11);
        }

        #[test]
        fn dissipativity_matches_contraction(seed in 0u64..100_000, violate in proptest::bool::ANY) {
            let s = make_structural(2).unwrap();
            let t = tol();
            let mut x = sample(SetKind::Diss, 2, 1.0, seed).unwrap();
            if violate {
                // push one direction of the form positive
                x += &s.ical * from_real_diag(&[0.0, 0.0, 0.0, 1.5]);
            }
            let cone = classify(&x, &s, &t).unwrap().diss.holds;
            let contr = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0].iter().all(|&tt| {
                let g = expm(&(&x * c(tt, 0.0))).unwrap();
                classify(&g, &s, &t).unwrap().gamma_u.holds
            });
            prop_assert_eq!(cone, contr);
        }
    }

    #[test]
    fn sdiss_chain_is_consistent() {
        // The two descriptions of the self-adjoint dissipative cone agree:
        // Ical X Hermitian and <= 0 iff <v|Xv> real and <= 0 for all v.
        let s = make_structural(2).unwrap();
        for seed in 0..30 {
            let x = sample(SetKind::Sdiss, 2, 1.0, seed).unwrap();
            let rep = classify(&x, &s, &tol()).unwrap();
            assert!(rep.sdiss.holds && rep.diss.holds);
            let xu = sample(SetKind::UnnLie, 2, 0.5, seed).unwrap();
            let y = &x + &xu;
            let rep = classify(&y, &s, &tol()).unwrap();
            assert!(rep.diss.holds && !rep.sdiss.holds);
        }
    }
}
