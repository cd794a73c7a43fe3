//! Truncated bosonic Fock space over `n = 2m` modes with per-mode cutoff `D`.
//!
//! Modes `0..m` are the `a` modes and `m..2m` the `b` modes (`b_k = a_{m+k}`).
//! Basis states are occupation tuples, indexed in mixed radix `D` with mode 0
//! most significant. Ladder matrices are the truncated shifts, so the
//! canonical commutation relations hold exactly away from the top level, and
//! quadratic expressions are exact on the "safe band" of occupations `<= D - 3`.
//!
//! Conventions worth knowing:
//!
//! * `dρ(A) = 1/2 aa* (Ical A) aa` with `aa = (a_1*, .., a_n*, a_1, .., a_n)^T`
//!   and the row `aa* = (a_1, .., a_n, a_1*, .., a_n*)`.
//! * `Z_k = a_k* + b_k`; the compression by the b-vacuum projector satisfies
//!   `E_b Z^p Z*^q E_b = a^q a*^p E_b`, and the coherent-state integral obeys
//!   `Q(z^p conj(z)^q) = a^p a*^q E_b`. Hence `E_b f(Z) E_b = Q(f ∘ conj)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{c, expm, max_abs, op_norm, CMat, CVec, Tolerances, C64, ZERO};
use crate::symplectic::{make_structural, require, HamiltonianSymbol, SetKind};

/// Largest Hilbert-space dimension we are willing to densify.
pub const MAX_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FockSpace {
    pub m: usize,
    pub cutoff: usize,
}

impl FockSpace {
    pub fn new(m: usize, cutoff: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter {
                op: "FockSpace",
                name: "m",
                reason: "must be at least 1".into(),
            });
        }
        if cutoff < 2 {
            return Err(Error::InvalidParameter {
                op: "FockSpace",
                name: "D",
                reason: format!("cutoff must be at least 2, got {cutoff}"),
            });
        }
        let dim = (cutoff as f64).powi(2 * m as i32);
        if dim > MAX_DIM as f64 {
            return Err(Error::InvalidParameter {
                op: "FockSpace",
                name: "D",
                reason: format!("dimension {dim} exceeds {MAX_DIM}"),
            });
        }
        Ok(Self { m, cutoff })
    }

    pub fn modes(&self) -> usize {
        2 * self.m
    }

    pub fn dim(&self) -> usize {
        self.cutoff.pow(self.modes() as u32)
    }

    pub fn occupations(&self, mut idx: usize) -> Vec<usize> {
        let mut occ = vec![0; self.modes()];
        for k in (0..self.modes()).rev() {
            occ[k] = idx % self.cutoff;
            idx /= self.cutoff;
        }
        occ
    }

    pub fn index(&self, occ: &[usize]) -> usize {
        occ.iter().fold(0, |acc, &o| acc * self.cutoff + o)
    }

    /// Index of `|j_1 .. j_m; 0 .. 0>`.
    pub fn a_index(&self, a_occ: &[usize]) -> usize {
        let mut occ = a_occ.to_vec();
        occ.resize(self.modes(), 0);
        self.index(&occ)
    }

    fn check_mode(&self, k: usize, op: &'static str) -> Result<()> {
        if k >= self.modes() {
            return Err(Error::InvalidParameter {
                op,
                name: "k",
                reason: format!("mode {k} out of range 0..{}", self.modes()),
            });
        }
        Ok(())
    }

    fn diagonal(&self, f: impl Fn(&[usize]) -> f64) -> CMat {
        let dim = self.dim();
        let mut out = CMat::zeros(dim, dim);
        for idx in 0..dim {
            out[(idx, idx)] = c(f(&self.occupations(idx)), 0.0);
        }
        out
    }

    /// Projector onto states with every occupation `<= max_occ`.
    pub fn band(&self, max_occ: usize) -> CMat {
        self.diagonal(|occ| {
            if occ.iter().all(|&o| o <= max_occ) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Projector onto occupations `<= D - 3`.
    pub fn safe_band(&self) -> CMat {
        self.band(self.cutoff.saturating_sub(3))
    }

    pub fn vacuum(&self) -> CVec {
        let mut v = CVec::zeros(self.dim());
        v[0] = c(1.0, 0.0);
        v
    }
}

#[derive(Clone, Debug)]
pub struct FockOperator {
    pub space: FockSpace,
    pub mat: CMat,
}

impl FockOperator {
    pub fn new(space: FockSpace, mat: CMat) -> Result<Self> {
        crate::numerics::ensure_shape(&mat, space.dim(), space.dim(), "FockOperator")?;
        Ok(Self { space, mat })
    }

    pub fn identity(space: FockSpace) -> Self {
        Self {
            space,
            mat: CMat::identity(space.dim(), space.dim()),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space,
            mat: self.mat.adjoint(),
        }
    }

    pub fn compose(&self, other: &FockOperator) -> Self {
        Self {
            space: self.space,
            mat: &self.mat * &other.mat,
        }
    }

    pub fn commutator(&self, other: &FockOperator) -> Self {
        Self {
            space: self.space,
            mat: &self.mat * &other.mat - &other.mat * &self.mat,
        }
    }

    /// `|X P|` with `P` the projector onto occupations `<= max_occ`.
    pub fn norm_on_band(&self, max_occ: usize) -> f64 {
        op_norm(&(&self.mat * self.space.band(max_occ)))
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            space: self.space,
            mat: &self.mat * s,
        }
    }
}

// ---------------------------------------------------------------------------
// Ladder algebra. A quadratic expression sum c * L1 L2 is assembled column
// by column; truncation matches the product of truncated matrices.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ladder {
    Up(usize),
    Down(usize),
}

fn apply_ladder(space: &FockSpace, occ: &mut [usize], op: Ladder) -> Option<f64> {
    match op {
        Ladder::Down(k) => {
            if occ[k] == 0 {
                None
            } else {
                let amp = (occ[k] as f64).sqrt();
                occ[k] -= 1;
                Some(amp)
            }
        }
        Ladder::Up(k) => {
            if occ[k] + 1 >= space.cutoff {
                None
            } else {
                occ[k] += 1;
                Some((occ[k] as f64).sqrt())
            }
        }
    }
}

/// `sum_t coef_t * left_t * right_t` (right factor applied first).
fn quadratic(space: &FockSpace, terms: &[(C64, Ladder, Ladder)]) -> CMat {
    let dim = space.dim();
    let mut out = CMat::zeros(dim, dim);
    let mut occ = vec![0; space.modes()];
    for col in 0..dim {
        let base = space.occupations(col);
        for &(coef, left, right) in terms {
            if coef == ZERO {
                continue;
            }
            occ.copy_from_slice(&base);
            let Some(a1) = apply_ladder(space, &mut occ, right) else {
                continue;
            };
            let Some(a2) = apply_ladder(space, &mut occ, left) else {
                continue;
            };
            out[(space.index(&occ), col)] += coef * (a1 * a2);
        }
    }
    out
}

fn ladder_matrix(space: &FockSpace, op: Ladder) -> CMat {
    let dim = space.dim();
    let mut out = CMat::zeros(dim, dim);
    let mut occ = vec![0; space.modes()];
    for col in 0..dim {
        occ.copy_from_slice(&space.occupations(col));
        if let Some(amp) = apply_ladder(space, &mut occ, op) {
            out[(space.index(&occ), col)] = c(amp, 0.0);
        }
    }
    out
}

pub fn annihilator(space: &FockSpace, k: usize) -> Result<FockOperator> {
    space.check_mode(k, "annihilator")?;
    FockOperator::new(*space, ladder_matrix(space, Ladder::Down(k)))
}

pub fn creator(space: &FockSpace, k: usize) -> Result<FockOperator> {
    space.check_mode(k, "creator")?;
    FockOperator::new(*space, ladder_matrix(space, Ladder::Up(k)))
}

/// Quadratic quantization `dρ(A)` of `A` in the `sp_c` pattern of size `2n`.
pub fn drho(space: &FockSpace, a: &CMat, tol: &Tolerances) -> Result<FockOperator> {
    let n = space.modes();
    let s = make_structural(n)?;
    // Accept the complexified algebra so that dissipative generators such as
    // -N_b can be quantized too.
    require(a, SetKind::SpLieComplex, &s, tol, "drho")?;
    let form = &s.ical * a;
    let row = |i: usize| {
        if i < n {
            Ladder::Down(i)
        } else {
            Ladder::Up(i - n)
        }
    };
    let col = |j: usize| {
        if j < n {
            Ladder::Up(j)
        } else {
            Ladder::Down(j - n)
        }
    };
    let mut terms = Vec::with_capacity(4 * n * n);
    for i in 0..2 * n {
        for j in 0..2 * n {
            terms.push((form[(i, j)] * 0.5, row(i), col(j)));
        }
    }
    FockOperator::new(*space, quadratic(space, &terms))
}

pub struct NumberOps {
    pub n_a: FockOperator,
    pub n_b: FockOperator,
    pub e_b: FockOperator,
}

pub fn number_ops(space: &FockSpace) -> NumberOps {
    let m = space.m;
    let mk = |f: &dyn Fn(&[usize]) -> f64| FockOperator {
        space: *space,
        mat: space.diagonal(f),
    };
    NumberOps {
        n_a: mk(&|occ| occ[..m].iter().sum::<usize>() as f64),
        n_b: mk(&|occ| occ[m..].iter().sum::<usize>() as f64),
        e_b: mk(&|occ| {
            if occ[m..].iter().all(|&o| o == 0) {
                1.0
            } else {
                0.0
            }
        }),
    }
}

/// `Z_k = a_k* + b_k` for `k = 0..m`.
pub fn z_ops(space: &FockSpace) -> Result<Vec<FockOperator>> {
    if space.cutoff < 3 {
        return Err(Error::InvalidParameter {
            op: "z_ops",
            name: "D",
            reason: "cutoff must be at least 3".into(),
        });
    }
    let m = space.m;
    (0..m)
        .map(|k| {
            let up = ladder_matrix(space, Ladder::Up(k));
            let down = ladder_matrix(space, Ladder::Down(m + k));
            FockOperator::new(*space, up + down)
        })
        .collect()
}

/// `E_b X E_b`.
pub fn antinormal_quantize(x: &FockOperator) -> FockOperator {
    let e_b = number_ops(&x.space).e_b.mat;
    FockOperator {
        space: x.space,
        mat: &e_b * &x.mat * &e_b,
    }
}

/// `h_A(Z) = 1/2 ZZ* (Ical A) ZZ` with `ZZ = (Z_1*, .., Z_m*, Z_1, .., Z_m)^T`.
pub fn h_a_operator(space: &FockSpace, sym: &HamiltonianSymbol) -> Result<FockOperator> {
    if sym.m != space.m {
        return Err(Error::DimensionMismatch {
            op: "h_a_operator",
            expected: space.m,
            found: sym.m,
        });
    }
    let tol = Tolerances::default();
    let m = space.m;
    require(
        &sym.a,
        SetKind::SpcLie,
        &make_structural(m)?,
        &tol,
        "h_a_operator",
    )?;
    let form = sym.form();
    // Row entries (Z_1..Z_m, Z_1*..Z_m*) and column entries (Z_1*..Z_m*, Z_1..Z_m).
    let z = |k: usize| [Ladder::Up(k), Ladder::Down(m + k)];
    let z_star = |k: usize| [Ladder::Down(k), Ladder::Up(m + k)];
    let row = |i: usize| if i < m { z(i) } else { z_star(i - m) };
    let col = |j: usize| if j < m { z_star(j) } else { z(j - m) };
    let mut terms = Vec::new();
    for i in 0..2 * m {
        for j in 0..2 * m {
            for l in row(i) {
                for r in col(j) {
                    terms.push((form[(i, j)] * 0.5, l, r));
                }
            }
        }
    }
    FockOperator::new(*space, quadratic(space, &terms))
}

// ---------------------------------------------------------------------------
// Strong limit exp(h_A(Z) - nu N_b) -> exp(E_b h_A(Z) E_b) E_b.

#[derive(Clone, Debug, Serialize)]
pub struct StrongLimitTable {
    pub nus: Vec<f64>,
    /// `residuals[v][i]` for test vector `v` at `nus[i]`.
    pub residuals: Vec<Vec<f64>>,
    /// Same after normalizing both operators by their vacuum matrix element.
    pub ray_residuals: Vec<Vec<f64>>,
}

impl StrongLimitTable {
    /// Residuals are non-increasing (up to `slack`) over `nu >= burn_in`.
    pub fn monotone_after(&self, burn_in: f64, slack: f64) -> bool {
        self.residuals.iter().all(|row| {
            let tail: Vec<f64> = self
                .nus
                .iter()
                .zip(row)
                .filter(|(nu, _)| **nu >= burn_in)
                .map(|(_, r)| *r)
                .collect();
            tail.windows(2).all(|w| w[1] <= w[0] + slack)
        })
    }

    pub fn final_max(&self) -> f64 {
        self.residuals
            .iter()
            .filter_map(|row| row.last().copied())
            .fold(0.0, f64::max)
    }
}

/// Checks that `psi` is in `ran E_b`, has mean occupation `<= D/3`, and puts
/// at most `1e-12` of its weight on the two highest levels of any mode.
pub fn check_safe_vector(space: &FockSpace, psi: &CVec) -> Result<()> {
    let nrm2 = psi.norm_squared();
    let mut outside_eb = 0.0;
    let mut top = 0.0;
    let mut mean_occ = 0.0;
    for (idx, z) in psi.iter().enumerate() {
        let occ = space.occupations(idx);
        let p = z.norm_sqr();
        if occ[space.m..].iter().any(|&o| o > 0) {
            outside_eb += p;
        }
        if occ.iter().any(|&o| o + 2 >= space.cutoff) {
            top += p;
        }
        mean_occ += p * occ.iter().sum::<usize>() as f64;
    }
    let mean_occ = mean_occ / nrm2;
    if outside_eb > 1e-24 * nrm2 || top > 1e-12 * nrm2 || mean_occ > space.cutoff as f64 / 3.0 {
        return Err(Error::InvalidParameter {
            op: "strong_limit_run",
            name: "test vector",
            reason: format!(
                "not truncation-safe (b-weight {outside_eb:e}, top-level weight {top:e}, mean occupation {mean_occ})"
            ),
        });
    }
    Ok(())
}

fn ray_normalized(t: &CMat, space: &FockSpace) -> CMat {
    let v = t[(0, 0)];
    let scale = if v.norm() > 1e-300 {
        v
    } else {
        // largest-modulus entry
        t.iter()
            .copied()
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .unwrap_or(c(1.0, 0.0))
    };
    let _ = space;
    t / scale
}

pub fn strong_limit_run(
    space: &FockSpace,
    sym: &HamiltonianSymbol,
    nus: &[f64],
    vectors: &[CVec],
) -> Result<StrongLimitTable> {
    for v in vectors {
        crate::numerics::ensure_shape(
            &CMat::from_column_slice(v.len(), 1, v.as_slice()),
            space.dim(),
            1,
            "strong_limit_run",
        )?;
        check_safe_vector(space, v)?;
    }
    let h = h_a_operator(space, sym)?.mat;
    let ops = number_ops(space);
    let e_b = &ops.e_b.mat;
    let target = expm(&(e_b * &h * e_b))? * e_b;
    let target_ray = ray_normalized(&target, space);
    let per_nu: Vec<Result<(Vec<f64>, Vec<f64>)>> = crate::par::map_slice(nus, |&nu| {
        let t = expm(&(&h - &ops.n_b.mat * c(nu, 0.0)))?;
        let t_ray = ray_normalized(&t, space);
        let plain = vectors
            .iter()
            .map(|v| (&t * v - &target * v).norm())
            .collect();
        let ray = vectors
            .iter()
            .map(|v| (&t_ray * v - &target_ray * v).norm())
            .collect();
        Ok((plain, ray))
    });
    let mut residuals = vec![Vec::with_capacity(nus.len()); vectors.len()];
    let mut ray_residuals = residuals.clone();
    for row in per_nu {
        let (plain, ray) = row?;
        for (k, (p, r)) in plain.into_iter().zip(ray).enumerate() {
            residuals[k].push(p);
            ray_residuals[k].push(r);
        }
    }
    Ok(StrongLimitTable {
        nus: nus.to_vec(),
        residuals,
        ray_residuals,
    })
}

// ---------------------------------------------------------------------------
// Coherent states and the coherent-state integral.

#[derive(Clone, Debug)]
pub struct CoherentState {
    pub z: Vec<C64>,
    pub vec: CVec,
    /// Probability mass lost to the cutoff (before renormalization).
    pub leaked: f64,
}

/// `e^{-|z|^2/2} z^j / sqrt(j!)` for `j = 0..count`.
pub fn coherent_coefficients(z: C64, count: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(count);
    let mut cur = c((-0.5 * z.norm_sqr()).exp(), 0.0);
    for j in 0..count {
        out.push(cur);
        cur = cur * z / ((j + 1) as f64).sqrt();
    }
    out
}

/// Normalized truncated coherent state `Ω_z` (b modes in the vacuum).
/// Fails if more than `1e-6` of the probability lies beyond the cutoff.
pub fn coherent(space: &FockSpace, z: &[C64]) -> Result<CoherentState> {
    if z.len() != space.m {
        return Err(Error::DimensionMismatch {
            op: "coherent",
            expected: space.m,
            found: z.len(),
        });
    }
    let d = space.cutoff;
    let coeffs: Vec<Vec<C64>> = z.iter().map(|&zk| coherent_coefficients(zk, d)).collect();
    let leaked: f64 = coeffs
        .iter()
        .map(|cs| (1.0 - cs.iter().map(|x| x.norm_sqr()).sum::<f64>()).max(0.0))
        .sum();
    if leaked > 1e-6 {
        return Err(Error::Truncation {
            op: "coherent",
            bound: leaked,
            limit: 1e-6,
        });
    }
    let mut vec = CVec::zeros(space.dim());
    let mut occ = vec![0usize; space.m];
    loop {
        let amp = occ
            .iter()
            .zip(&coeffs)
            .fold(c(1.0, 0.0), |acc, (&o, cs)| acc * cs[o]);
        vec[space.a_index(&occ)] = amp;
        // odometer over a-mode occupations
        let mut k = space.m;
        loop {
            if k == 0 {
                let nrm = vec.norm();
                vec /= c(nrm, 0.0);
                return Ok(CoherentState {
                    z: z.to_vec(),
                    vec,
                    leaked,
                });
            }
            k -= 1;
            occ[k] += 1;
            if occ[k] < d {
                break;
            }
            occ[k] = 0;
        }
    }
}

/// `|z|^D / sqrt((D-1)!)` per mode, summed: bounds `|a_k Ω_z - z_k Ω_z|`.
pub fn coherent_eigen_bound(space: &FockSpace, z: &[C64]) -> f64 {
    let d = space.cutoff;
    z.iter()
        .map(|zk| {
            let log = d as f64 * zk.norm().ln() - 0.5 * ln_factorial(d - 1);
            log.exp()
        })
        .sum()
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

/// Midpoint quadrature on the disc `|z| <= radius` with a `grid x grid`
/// lattice of cells over the bounding square. Returns the `(j, k)` entries of
/// `∫ f(z) c_j(z) conj(c_k(z)) dx dy / π` for `j, k < levels`.
fn coherent_integral(
    f: &(dyn Fn(C64) -> C64 + Sync),
    levels: usize,
    radius: f64,
    grid: usize,
) -> CMat {
    let h = 2.0 * radius / grid as f64;
    let weight = h * h / std::f64::consts::PI;
    let rows = crate::par::map_range(grid, |ix| {
        let x = -radius + (ix as f64 + 0.5) * h;
        let mut acc = CMat::zeros(levels, levels);
        for iy in 0..grid {
            let y = -radius + (iy as f64 + 0.5) * h;
            if x * x + y * y > radius * radius {
                continue;
            }
            let z = c(x, y);
            let fz = f(z) * weight;
            if fz == ZERO {
                continue;
            }
            let cs = coherent_coefficients(z, levels);
            for j in 0..levels {
                let fj = fz * cs[j];
                for k in 0..levels {
                    acc[(j, k)] += fj * cs[k].conj();
                }
            }
        }
        acc
    });
    rows.into_iter()
        .fold(CMat::zeros(levels, levels), |acc, r| acc + r)
}

fn embed_a_block(space: &FockSpace, block: &CMat) -> CMat {
    let dim = space.dim();
    let mut out = CMat::zeros(dim, dim);
    for j in 0..block.nrows() {
        for k in 0..block.ncols() {
            out[(space.a_index(&[j]), space.a_index(&[k]))] = block[(j, k)];
        }
    }
    out
}

fn require_single_mode(space: &FockSpace, op: &'static str) -> Result<()> {
    if space.m != 1 {
        return Err(Error::InvalidParameter {
            op,
            name: "m",
            reason: "only m = 1 is supported".into(),
        });
    }
    Ok(())
}

/// Operator-norm distance between `∫ p_z dμ` and the identity on a-mode
/// occupations `<= 3` (b modes in the vacuum).
pub fn resolution_check(space: &FockSpace, radius: f64, grid: usize) -> Result<f64> {
    require_single_mode(space, "resolution_check")?;
    let levels = 4.min(space.cutoff);
    let block = coherent_integral(&|_| c(1.0, 0.0), levels, radius, grid);
    Ok(op_norm(&(block - CMat::identity(levels, levels))))
}

/// `Q(f) = ∫ f(z) p_z dμ(z)` compressed to the truncated space.
pub fn quantize_integral(
    space: &FockSpace,
    f: &(dyn Fn(C64) -> C64 + Sync),
    radius: f64,
    grid: usize,
) -> Result<FockOperator> {
    require_single_mode(space, "quantize_integral")?;
    let block = coherent_integral(f, space.cutoff, radius, grid);
    FockOperator::new(*space, embed_a_block(space, &block))
}

// ---------------------------------------------------------------------------
// Vacuum expectations.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct CutoffQuadrature {
    pub tau: f64,
    pub radius: f64,
    pub grid: usize,
}

/// `<Ω_0| exp(X) Ω_0>` with `X = E_b h_A(Z) E_b`, or with `X` the
/// coherent-state quantization of the clipped Hamiltonian (composed with
/// complex conjugation, so that the `tau -> inf` limit is `E_b h_A(Z) E_b`).
pub fn vacuum_expectation_at(
    space: &FockSpace,
    sym: &HamiltonianSymbol,
    cutoff: Option<CutoffQuadrature>,
) -> Result<C64> {
    let x = match cutoff {
        None => antinormal_quantize(&h_a_operator(space, sym)?).mat,
        Some(q) => {
            require_single_mode(space, "vacuum_expectation")?;
            let form = sym.form();
            let tau = q.tau;
            let f = move |z: C64| {
                let v = crate::symplectic::quadratic_value(&form, &[z.conj()]);
                // v = -i * (i v); clip the real part i v to [-tau, tau]
                let iv = (c(0.0, 1.0) * v).re;
                c(0.0, -iv.clamp(-tau, tau))
            };
            quantize_integral(space, &f, q.radius, q.grid)?.mat
        }
    };
    let e = expm(&x)?;
    let omega = space.vacuum();
    Ok((omega.adjoint() * e * omega)[(0, 0)])
}

/// [`vacuum_expectation_at`] with the cutoff guard: the value at `D` and
/// `D + 2` must agree within `1e-4`.
pub fn vacuum_expectation(
    space: &FockSpace,
    sym: &HamiltonianSymbol,
    cutoff: Option<CutoffQuadrature>,
) -> Result<C64> {
    let here = vacuum_expectation_at(space, sym, cutoff)?;
    let bigger = FockSpace::new(space.m, space.cutoff + 2)?;
    let there = vacuum_expectation_at(&bigger, sym, cutoff)?;
    let delta = (here - there).norm();
    if delta >= 1e-4 {
        return Err(Error::CutoffNotConverged { delta });
    }
    Ok(here)
}

/// Largest entry of `(X - Y) P` with `P` the band projector.
pub fn band_deviation(x: &CMat, y: &CMat, band: &CMat) -> f64 {
    max_abs(&((x - y) * band))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{from_real_diag, I, ONE};
    use crate::relation::make_nb;
    use crate::symplectic::lift_hat;
    use proptest::prelude::*;

    fn sp(m: usize, d: usize) -> FockSpace {
        FockSpace::new(m, d).unwrap()
    }

    fn dense(space: &FockSpace, k: usize, up: bool) -> CMat {
        if up {
            creator(space, k).unwrap().mat
        } else {
            annihilator(space, k).unwrap().mat
        }
    }

    #[test]
    fn qubit_truncation() {
        let s = FockSpace::new(1, 2).unwrap();
        // two modes, D = 2: a_0 acts on the most significant digit
        let a = annihilator(&s, 0).unwrap().mat;
        let single = CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        let want = single.kronecker(&CMat::identity(2, 2));
        assert_eq!(a, want);
        assert!(annihilator(&s, 2).is_err());
        assert!(FockSpace::new(1, 1).is_err());
    }

    #[test]
    fn ccr_on_the_band() {
        let s = sp(1, 6);
        let band = s.band(s.cutoff - 2);
        for k in 0..2 {
            for l in 0..2 {
                let ak = dense(&s, k, false);
                let al = dense(&s, l, false);
                let alt = dense(&s, l, true);
                assert!(max_abs(&(&ak * &al - &al * &ak)) < 1e-14);
                let comm = &ak * &alt - &alt * &ak;
                let want = if k == l {
                    CMat::identity(36, 36)
                } else {
                    CMat::zeros(36, 36)
                };
                assert!(max_abs(&((comm - want) * &band)) < 1e-14);
            }
        }
    }

    // Dense-matrix oracle for dρ.
    fn drho_dense(s: &FockSpace, a: &CMat) -> CMat {
        let n = s.modes();
        let st = make_structural(n).unwrap();
        let form = &st.ical * a;
        let col: Vec<CMat> = (0..2 * n)
            .map(|j| {
                if j < n {
                    dense(s, j, true)
                } else {
                    dense(s, j - n, false)
                }
            })
            .collect();
        let row: Vec<CMat> = (0..2 * n)
            .map(|i| {
                if i < n {
                    dense(s, i, false)
                } else {
                    dense(s, i - n, true)
                }
            })
            .collect();
        let mut out = CMat::zeros(s.dim(), s.dim());
        for i in 0..2 * n {
            for j in 0..2 * n {
                out += &row[i] * &col[j] * (form[(i, j)] * 0.5);
            }
        }
        out
    }

    fn spc(n_half: usize, seed: u64) -> CMat {
        crate::symplectic::sample(SetKind::SpcLie, n_half, 1.0, seed).unwrap()
    }

    #[test]
    fn drho_matches_dense_products() {
        let s = sp(1, 5);
        let a = spc(2, 3);
        let fast = drho(&s, &a, &Tolerances::default()).unwrap().mat;
        assert!(max_abs(&(fast - drho_dense(&s, &a))) < 1e-13);
    }

    #[test]
    fn drho_of_diag_i_single_mode() {
        // One-mode check embedded in two modes: A = diag(i, 0, -i, 0) in the
        // 2n = 4 pattern acts on mode 0 only.
        let s = sp(1, 6);
        let a = CMat::from_diagonal(&CVec::from_vec(vec![I, ZERO, -I, ZERO]));
        let op = drho(&s, &a, &Tolerances::default()).unwrap().mat;
        let n0 = number_ops(&s).n_a.mat;
        // literal formula: 1/2 (a, a*) diag(-1, 1) diag(i, -i) (a*, a)^T = -i (a a* + a* a)/2
        let want = (&n0 + CMat::identity(36, 36) * c(0.5, 0.0)) * c(0.0, -1.0);
        let band = s.safe_band();
        assert!(max_abs(&((op - want) * band)) < 1e-14);
    }

    #[test]
    fn drho_general_single_mode_formula() {
        // A = [[i r, z], [conj z, -i r]] on mode 0 (zero on mode 1).
        let s = sp(1, 8);
        let (r, z) = (0.7, c(0.3, -0.4));
        let mut a = CMat::zeros(4, 4);
        a[(0, 0)] = c(0.0, r);
        a[(0, 2)] = z;
        a[(2, 0)] = z.conj();
        a[(2, 2)] = c(0.0, -r);
        let op = drho(&s, &a, &Tolerances::default()).unwrap().mat;
        let (aa, ad) = (dense(&s, 0, false), dense(&s, 0, true));
        // literal expansion of 1/2 (a, a*) Ical A (a*, a)^T
        let want = ((&aa * &ad + &ad * &aa) * c(0.0, -r)
            + (&aa * &aa * z - &ad * &ad * z.conj()) * c(-1.0, 0.0))
            * c(0.5, 0.0);
        let band = s.band(s.cutoff - 3);
        assert!(max_abs(&((op - want) * band)) < 1e-13);
    }

    #[test]
    fn drho_is_linear_and_skew() {
        let s = sp(1, 7);
        let t = Tolerances::default();
        let (a, b) = (spc(2, 1), spc(2, 2));
        let sum = drho(&s, &(&a + &b), &t).unwrap().mat;
        let parts = drho(&s, &a, &t).unwrap().mat + drho(&s, &b, &t).unwrap().mat;
        assert!(max_abs(&(sum - parts)) < 1e-14);
        let d = drho(&s, &a, &t).unwrap().mat;
        let band = s.safe_band();
        assert!(max_abs(&(&band * (&d + d.adjoint()) * &band)) < 1e-13);
        assert!(drho(&s, &CMat::identity(4, 4), &t).is_err());
    }

    #[test]
    fn drho_is_a_lie_homomorphism() {
        let s = sp(1, 12);
        let t = Tolerances::default();
        for seed in 0..3 {
            let (a, b) = (spc(2, 10 + seed), spc(2, 20 + seed));
            let (da, db) = (drho(&s, &a, &t).unwrap(), drho(&s, &b, &t).unwrap());
            let lhs = da.commutator(&db).mat;
            let rhs = drho(&s, &(&a * &b - &b * &a), &t).unwrap().mat;
            let band = s.band(s.cutoff - 4);
            assert!(op_norm(&((lhs - rhs) * band)) < 1e-9);
        }
    }

    #[test]
    fn number_operator_identities() {
        let s = sp(1, 6);
        let ops = number_ops(&s);
        let e = &ops.e_b.mat;
        assert_eq!(e * e, *e);
        let dist = op_norm(&(expm(&(&ops.n_b.mat * c(-10.0, 0.0))).unwrap() - e));
        assert!(dist <= (-10f64).exp() + 1e-12);
        let dist = op_norm(&(expm(&(&ops.n_b.mat * c(-30.0, 0.0))).unwrap() - e));
        assert!(dist < 1e-13);
        let d = drho(&s, &(-make_nb(1)), &Tolerances::default())
            .unwrap()
            .mat;
        let want = -(&ops.n_b.mat + CMat::identity(36, 36) * c(0.5, 0.0));
        assert!(max_abs(&((d - want) * s.safe_band())) < 1e-14);
    }

    #[test]
    fn z_operators_commute_on_band() {
        let s = sp(1, 8);
        let z = &z_ops(&s).unwrap()[0];
        let band = s.band(s.cutoff - 3);
        assert!(z.commutator(&z.adjoint()).norm_on_band(s.cutoff - 3) < 1e-12);
        let zz = &z.mat * &z.mat;
        let _ = zz;
        assert!(op_norm(&((&z.mat * z.mat.adjoint() - z.mat.adjoint() * &z.mat) * &band)) < 1e-12);
        // Z on the joint vacuum is a single a-excitation
        let v = &z.mat * s.vacuum();
        assert!((v[s.a_index(&[1])] - ONE).norm() < 1e-15 && (v.norm() - 1.0).abs() < 1e-15);
        assert!(z_ops(&sp(1, 2)).is_err());
    }

    fn power(m: &CMat, k: usize) -> CMat {
        (0..k).fold(CMat::identity(m.nrows(), m.ncols()), |acc, _| acc * m)
    }

    #[test]
    fn compressed_z_words_reverse_the_exponents() {
        // E_b Z^p Z*^q E_b = a^q a*^p E_b on the safe band.
        let s = sp(1, 9);
        let z = &z_ops(&s).unwrap()[0].mat;
        let e = number_ops(&s).e_b.mat;
        let (a, ad) = (dense(&s, 0, false), dense(&s, 0, true));
        let band = s.safe_band();
        for p in 0..=3 {
            for q in 0..=(3 - p) {
                let lhs = &e * power(z, p) * power(&z.adjoint(), q) * &e;
                let rhs = power(&a, q) * power(&ad, p) * &e;
                assert!(band_deviation(&lhs, &rhs, &band) < 1e-12, "p={p} q={q}");
            }
        }
    }

    #[test]
    fn antinormal_examples() {
        let s = sp(1, 6);
        let e = number_ops(&s).e_b;
        let id = antinormal_quantize(&FockOperator::identity(s));
        assert_eq!(id.mat, e.mat);
        let z = &z_ops(&s).unwrap()[0];
        let q = antinormal_quantize(&z.compose(&z.adjoint()));
        let (a, ad) = (dense(&s, 0, false), dense(&s, 0, true));
        assert!(band_deviation(&q.mat, &(&a * &ad * &e.mat), &s.safe_band()) < 1e-13);
        let x = drho(&s, &spc(2, 5), &Tolerances::default()).unwrap();
        let once = antinormal_quantize(&x);
        assert_eq!(antinormal_quantize(&once).mat, once.mat);
    }

    // Dense oracle for h_A(Z) straight from the Z matrices.
    fn h_dense(s: &FockSpace, sym: &HamiltonianSymbol) -> CMat {
        let z = &z_ops(s).unwrap()[0].mat;
        let zs = z.adjoint();
        let form = sym.form();
        let col = [zs.clone(), z.clone()];
        let row = [z.clone(), zs];
        let mut out = CMat::zeros(s.dim(), s.dim());
        for i in 0..2 {
            for j in 0..2 {
                out += &row[i] * &col[j] * (form[(i, j)] * 0.5);
            }
        }
        out
    }

    #[test]
    fn h_a_equals_drho_of_lift() {
        let s = sp(1, 10);
        let band = s.band(7);
        let t = Tolerances::default();
        for seed in 0..5 {
            let sym = HamiltonianSymbol::random(1, 1.0, seed).unwrap();
            let h = h_a_operator(&s, &sym).unwrap().mat;
            assert!(band_deviation(&h, &h_dense(&s, &sym), &band) < 1e-13);
            let d = drho(&s, &lift_hat(&sym).unwrap(), &t).unwrap().mat;
            assert!(op_norm(&((&h - &d) * &band)) < 1e-10);
            assert!(max_abs(&(&band * (&h + h.adjoint()) * &band)) < 1e-12);
        }
        assert_eq!(
            max_abs(&h_a_operator(&s, &HamiltonianSymbol::zero(1)).unwrap().mat),
            0.0
        );
    }

    #[test]
    fn strong_limit_trivial_generator() {
        let s = sp(1, 8);
        let table =
            strong_limit_run(&s, &HamiltonianSymbol::zero(1), &[1.0, 4.0], &[s.vacuum()]).unwrap();
        assert!(table.residuals[0].iter().all(|&r| r < 1e-14));
        let bad = CVec::from_fn(s.dim(), |i, _| if i == 1 { ONE } else { ZERO });
        assert!(strong_limit_run(&s, &HamiltonianSymbol::zero(1), &[1.0], &[bad]).is_err());
    }

    #[test]
    fn strong_limit_decreases() {
        let s = sp(1, 10);
        let sym = HamiltonianSymbol::random(1, 0.5, 3).unwrap();
        let nus = [4.0, 6.0, 8.0, 12.0];
        let table = strong_limit_run(&s, &sym, &nus, &[s.vacuum()]).unwrap();
        assert!(table.monotone_after(4.0, 1e-12), "{:?}", table.residuals);
    }

    #[test]
    fn coherent_examples() {
        let s = sp(1, 20);
        let v0 = coherent(&s, &[ZERO]).unwrap();
        assert!((v0.vec.clone() - s.vacuum()).norm() < 1e-15);
        let z = c(0.8, -0.6);
        let st = coherent(&s, &[z]).unwrap();
        assert!((st.vec.norm() - 1.0).abs() < 1e-12);
        let a = dense(&s, 0, false);
        let resid = (&a * &st.vec - &st.vec * z).norm();
        assert!(resid <= coherent_eigen_bound(&s, &[z]));
        assert!(coherent(&s, &[c(5.0, 0.0)]).is_err());
        assert!(coherent(&s, &[ZERO, ZERO]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn coherent_overlap_closed_form(r1 in 0.0f64..2.0, t1 in 0.0f64..6.3, r2 in 0.0f64..2.0, t2 in 0.0f64..6.3) {
            let s = sp(1, 20);
            let (z, w) = (C64::from_polar(r1, t1), C64::from_polar(r2, t2));
            let (oz, ow) = (coherent(&s, &[z]).unwrap(), coherent(&s, &[w]).unwrap());
            let got = (oz.vec.adjoint() * &ow.vec)[(0, 0)];
            let want = (-0.5 * z.norm_sqr() - 0.5 * w.norm_sqr() + z.conj() * w).exp();
            prop_assert!((got - want).norm() < 1e-8);
        }
    }

    #[test]
    fn resolution_of_identity() {
        let s = sp(1, 12);
        let r = resolution_check(&s, 6.0, 200).unwrap();
        assert!(r < 1e-3, "{r}");
        let q = quantize_integral(&s, &|_| ONE, 6.0, 200).unwrap();
        let e = number_ops(&s).e_b.mat;
        let band = s.band(3);
        assert!(op_norm(&(&band * (q.mat - e) * &band)) < 1e-3);
        // trace of the rank-one projector p_z
        for z in [c(0.3, 0.1), c(-0.6, 0.5)] {
            let st = coherent(&s, &[z]).unwrap();
            assert!((st.vec.norm_squared() - 1.0).abs() < 1e-12);
        }
        assert!(resolution_check(&sp(2, 3), 6.0, 100).is_err());
    }

    #[test]
    fn quadrature_of_monomials() {
        // Q(z^p conj(z)^q) = a^p a*^q E_b
        let s = sp(1, 12);
        let e = number_ops(&s).e_b.mat;
        let (a, ad) = (dense(&s, 0, false), dense(&s, 0, true));
        let band = s.band(3);
        for (p, q) in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)] {
            let f = move |z: C64| z.powu(p) * z.conj().powu(q);
            let got = quantize_integral(&s, &f, 7.0, 240).unwrap().mat;
            let want = power(&a, p as usize) * power(&ad, q as usize) * &e;
            assert!(
                op_norm(&(&band * (got - want) * &band)) < 1e-3,
                "p={p} q={q}"
            );
        }
        let re = quantize_integral(&s, &|z: C64| c(z.re, 0.0), 6.0, 120)
            .unwrap()
            .mat;
        assert!(max_abs(&(&re - re.adjoint())) < 1e-12);
    }

    #[test]
    fn vacuum_expectation_examples() {
        let s = sp(1, 14);
        let v = vacuum_expectation(&s, &HamiltonianSymbol::zero(1), None).unwrap();
        assert_eq!(v, ONE);
        let sym = HamiltonianSymbol::random(1, 0.5, 4).unwrap();
        let v14 = vacuum_expectation(&s, &sym, None).unwrap();
        let v18 = vacuum_expectation_at(&sp(1, 18), &sym, None).unwrap();
        assert!((v14 - v18).norm() < 1e-4);
        assert!(v14.norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn single_mode_symbol_vacuum_phase() {
        // Pure rotation: A = diag(i r, -i r) gives E_b h(Z) E_b = -i r (a a*) E_b
        // so the vacuum picks up exp(-i r).
        let s = sp(1, 6);
        let sym = HamiltonianSymbol::single_mode(0.3, ZERO);
        let v = vacuum_expectation_at(&s, &sym, None).unwrap();
        assert!((v - c(0.0, -0.3).exp()).norm() < 1e-13);
        let _ = from_real_diag(&[0.0]);
    }
}
