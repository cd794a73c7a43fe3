//! Finite-difference magnetic Laplacian in the plane (one mode).
//!
//! The potential is `α = (y, -x)`, a uniform field of strength 2, so the
//! Landau levels of `¼Δ^α - ½` sit at `0, 1, 2, ...`. Links carry Peierls
//! phases `exp(i ∫ α)`, which keeps the discretization exactly gauge
//! covariant. The boundary is Dirichlet.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{antinormal_quantize, h_a_operator, FockSpace};
use crate::numerics::{c, expm, CMat, CVec, C64, ZERO};
use crate::symplectic::{h_a_eval, HamiltonianSymbol};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid2D {
    pub half_width: f64,
    pub spacing: f64,
}

impl Grid2D {
    pub fn new(half_width: f64, spacing: f64) -> Result<Self> {
        let bad = |reason: String| Error::InvalidParameter {
            op: "Grid2D",
            name: "h",
            reason,
        };
        if !(spacing > 0.0 && half_width.is_finite() && spacing.is_finite()) {
            return Err(bad(format!(
                "need finite L and h > 0, got L = {half_width}, h = {spacing}"
            )));
        }
        if half_width / spacing < 16.0 - 1e-12 {
            return Err(bad(format!("L/h = {} is below 16", half_width / spacing)));
        }
        Ok(Self {
            half_width,
            spacing,
        })
    }

    /// Points per side, `2 floor(L/h) + 1`.
    pub fn side(&self) -> usize {
        2 * (self.half_width / self.spacing + 1e-9).floor() as usize + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        let half = (self.side() / 2) as f64;
        (i as f64 - half) * self.spacing
    }

    /// Row-major index: `ix` along x, `iy` along y.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.side() + ix
    }

    pub fn point(&self, idx: usize) -> (f64, f64) {
        let n = self.side();
        (self.coord(idx % n), self.coord(idx / n))
    }

    /// Area of the square `[-L, L]^2` times the field over `2π`.
    pub fn flux_count(&self) -> f64 {
        let width = (self.side() - 1) as f64 * self.spacing;
        2.0 * width * width / (2.0 * std::f64::consts::PI)
    }

    /// L²-normalized samples of `exp(-|z|^2 / 2)`.
    pub fn gaussian_ground_state(&self) -> CVec {
        let mut v = CVec::from_fn(self.len(), |idx, _| {
            let (x, y) = self.point(idx);
            c((-0.5 * (x * x + y * y)).exp(), 0.0)
        });
        let nrm = self.l2_norm(&v);
        v /= c(nrm, 0.0);
        v
    }

    pub fn l2_norm(&self, v: &CVec) -> f64 {
        v.norm() * self.spacing
    }

    pub fn l2_dot(&self, u: &CVec, v: &CVec) -> C64 {
        u.dotc(v) * (self.spacing * self.spacing)
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct GridOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl GridOperator {
    fn from_rows(rows: Vec<Vec<(usize, C64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn apply(&self, v: &CVec) -> CVec {
        let out = crate::par::map_range(self.n, |i| {
            self.row(i).fold(ZERO, |acc, (j, a)| acc + a * v[j])
        });
        CVec::from_vec(out)
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.row(i).find(|&(k, _)| k == j).map_or(ZERO, |(_, v)| v)
    }

    /// `max |A_ij - conj(A_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.entry(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Bound on the operator norm by the largest absolute row sum.
    pub fn row_sum_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> CMat {
        let mut out = CMat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[(i, j)] += v;
            }
        }
        out
    }
}

fn assemble(g: &Grid2D, field: bool, gauge: Option<&dyn Fn(f64, f64) -> f64>) -> GridOperator {
    let n = g.side();
    let h = g.spacing;
    let inv_h2 = 1.0 / (h * h);
    let chi = |x: f64, y: f64| gauge.map_or(0.0, |f| f(x, y));
    let rows = (0..g.len())
        .map(|idx| {
            let (ix, iy) = (idx % n, idx / n);
            let (x, y) = g.point(idx);
            let mut row = vec![(idx, c(4.0 * inv_h2, 0.0))];
            let mut link = |jx: usize, jy: usize| {
                let (qx, qy) = (g.coord(jx), g.coord(jy));
                // ∫ α · dl along the straight link, α = (y, -x)
                let mut theta = if field {
                    0.5 * (y + qy) * (qx - x) - 0.5 * (x + qx) * (qy - y)
                } else {
                    0.0
                };
                theta += chi(qx, qy) - chi(x, y);
                row.push((g.index(jx, jy), C64::from_polar(-inv_h2, theta)));
            };
            if ix > 0 {
                link(ix - 1, iy);
            }
            if ix + 1 < n {
                link(ix + 1, iy);
            }
            if iy > 0 {
                link(ix, iy - 1);
            }
            if iy + 1 < n {
                link(ix, iy + 1);
            }
            row.sort_by_key(|&(j, _)| j);
            row
        })
        .collect();
    GridOperator::from_rows(rows)
}

/// `Δ^α` with Peierls phases.
pub fn magnetic_laplacian(g: &Grid2D) -> GridOperator {
    assemble(g, true, None)
}

/// The 5-point Laplacian (`α = 0`).
pub fn free_laplacian(g: &Grid2D) -> GridOperator {
    assemble(g, false, None)
}

/// `Δ^α` with `α` shifted by the discrete gradient of `chi`.
pub fn gauge_shifted_laplacian(g: &Grid2D, chi: &dyn Fn(f64, f64) -> f64) -> GridOperator {
    assemble(g, true, Some(chi))
}

/// `¼Δ^α - ½`, the grid stand-in for `N_b`.
pub fn landau_operator(g: &Grid2D) -> GridOperator {
    let mut op = magnetic_laplacian(g);
    for i in 0..op.n {
        for k in op.row_ptr[i]..op.row_ptr[i + 1] {
            op.vals[k] *= 0.25;
            if op.cols[k] == i {
                op.vals[k] -= c(0.5, 0.0);
            }
        }
    }
    op
}

// ---------------------------------------------------------------------------
// Lanczos.

#[derive(Clone, Debug)]
pub struct RitzPairs {
    pub values: Vec<f64>,
    /// Weight of each Ritz value in the spectral measure of the start vector.
    pub weights: Vec<f64>,
}

/// Lanczos with full reorthogonalization on a Hermitian operator.
pub fn lanczos(op: &GridOperator, start: &CVec, steps: usize) -> Result<RitzPairs> {
    let nrm = start.norm();
    if nrm == 0.0 || !nrm.is_finite() {
        return Err(Error::NonFinite { op: "lanczos" });
    }
    let steps = steps.min(op.dim()).max(1);
    let mut basis: Vec<CVec> = vec![start / c(nrm, 0.0)];
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut w = op.apply(&basis[k]);
        alpha.push(basis[k].dotc(&w).re);
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dotc(&w);
                w.axpy(-proj, q, c(1.0, 0.0));
            }
        }
        let b = w.norm();
        if k + 1 == steps || b < 1e-12 * (alpha[k].abs() + 1.0) {
            break;
        }
        beta.push(b);
        basis.push(w / c(b, 0.0));
    }
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(RitzPairs {
        values: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LandauSpectrum {
    pub lowest: f64,
    /// Spectral-measure centroid of `¼Δ^α - ½` in `(0.5, 1.5)`.
    pub next_cluster: f64,
    pub next_cluster_weight: f64,
    pub lanczos_steps: usize,
}

/// Random start vector supported in the disc of radius `L/2`.
pub fn central_random_vector(g: &Grid2D, seed: u64) -> CVec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r2 = (0.5 * g.half_width).powi(2);
    CVec::from_fn(g.len(), |idx, _| {
        let (x, y) = g.point(idx);
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        if x * x + y * y <= r2 {
            c(re, im)
        } else {
            ZERO
        }
    })
}

pub fn landau_levels(g: &Grid2D, steps: usize, seed: u64) -> Result<LandauSpectrum> {
    let op = landau_operator(g);
    let start = central_random_vector(g, seed);
    let ritz = lanczos(&op, &start, steps)?;
    let lowest = ritz.values[0];
    let (mut acc, mut weight) = (0.0, 0.0);
    for (&v, &w) in ritz.values.iter().zip(&ritz.weights) {
        if v > 0.5 && v < 1.5 {
            acc += v * w;
            weight += w;
        }
    }
    if weight == 0.0 {
        return Err(Error::InvalidParameter {
            op: "landau_levels",
            name: "steps",
            reason: "no Ritz weight in (0.5, 1.5)".into(),
        });
    }
    Ok(LandauSpectrum {
        lowest,
        next_cluster: acc / weight,
        next_cluster_weight: weight,
        lanczos_steps: ritz.values.len(),
    })
}

// ---------------------------------------------------------------------------
// Grid version of exp(h_A - ν N_b) Ω_0.

const MAX_TAYLOR_STEPS: usize = 200_000;

/// `exp(t G) v` by scaled Taylor steps, `G v = apply(v)` with `|G| <= norm`.
pub fn expm_taylor_apply(
    apply: &(dyn Fn(&CVec) -> CVec + Sync),
    norm: f64,
    t: f64,
    v: &CVec,
) -> Result<CVec> {
    let steps = ((norm * t.abs()) / 2.0).ceil().max(1.0);
    if !steps.is_finite() || steps as usize > MAX_TAYLOR_STEPS {
        return Err(Error::InvalidParameter {
            op: "expm_taylor_apply",
            name: "nu",
            reason: format!(
                "|tG| = {} needs more than {MAX_TAYLOR_STEPS} steps",
                norm * t.abs()
            ),
        });
    }
    let steps = steps as usize;
    let dt = t / steps as f64;
    let mut out = v.clone();
    for _ in 0..steps {
        let mut term = out.clone();
        let mut sum = out.clone();
        let mut quiet = 0;
        for k in 1..80 {
            term = apply(&term) * c(dt / k as f64, 0.0);
            sum += &term;
            if term.norm() <= 1e-17 * sum.norm() {
                quiet += 1;
                if quiet == 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        out = sum;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct GridLimitRow {
    pub nu: f64,
    /// `<Ω_0, ψ_ν>` in L².
    pub vacuum_overlap: C64,
    pub norm: f64,
    /// `|<Ω_0, ψ_ν>/|ψ_ν| - <Ω_0, φ>/|φ||` with `φ` the Fock-side limit.
    pub deviation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridLimitTable {
    pub predicted_overlap: C64,
    pub predicted_norm: f64,
    pub rows: Vec<GridLimitRow>,
}

impl GridLimitTable {
    pub fn deviation_at(&self, nu: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.nu == nu).map(|r| r.deviation)
    }
}

/// Fock-side values of `<Ω_0, e^X Ω_0>` and `|e^X Ω_0|` with
/// `X = t E_b h_A(Z) E_b`.
pub fn fock_prediction(sym: &HamiltonianSymbol, t: f64, cutoff: usize) -> Result<(C64, f64)> {
    let space = FockSpace::new(1, cutoff)?;
    let x = antinormal_quantize(&h_a_operator(&space, sym)?).mat * c(t, 0.0);
    let psi = expm(&x)? * space.vacuum();
    Ok((psi[0], psi.norm()))
}

/// Evolves the discretized `Ω_0` under `t (h_A - ν(¼Δ^α - ½))` with `h_A`
/// acting by multiplication at `z = x + i y`.
pub fn grid_strong_limit(
    g: &Grid2D,
    sym: &HamiltonianSymbol,
    nus: &[f64],
    t: f64,
) -> Result<GridLimitTable> {
    if sym.m != 1 {
        return Err(Error::InvalidParameter {
            op: "grid_strong_limit",
            name: "m",
            reason: "only m = 1 is supported".into(),
        });
    }
    let landau = landau_operator(g);
    let hmul: Vec<C64> = (0..g.len())
        .map(|idx| {
            let (x, y) = g.point(idx);
            h_a_eval(sym, &[c(x, y)])
        })
        .collect::<Result<_>>()?;
    let hmax = hmul.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let omega = g.gaussian_ground_state();
    let (predicted_overlap, predicted_norm) = fock_prediction(sym, t, 24)?;
    let mut rows = Vec::with_capacity(nus.len());
    for &nu in nus {
        let apply = |v: &CVec| {
            let lv = landau.apply(v);
            CVec::from_fn(v.len(), |i, _| hmul[i] * v[i] - lv[i] * nu)
        };
        let norm = hmax + nu.abs() * landau.row_sum_bound();
        let psi = expm_taylor_apply(&apply, norm, t, &omega)?;
        let overlap = g.l2_dot(&omega, &psi);
        let nrm = g.l2_norm(&psi);
        rows.push(GridLimitRow {
            nu,
            vacuum_overlap: overlap,
            norm: nrm,
            deviation: (overlap / nrm - predicted_overlap / predicted_norm).norm(),
        });
    }
    Ok(GridLimitTable {
        predicted_overlap,
        predicted_norm,
        rows,
    })
}
