//! Pinned Brownian loops, their stochastic action and a Gaussian reference.
//!
//! A loop has `K` steps on the unit time interval, `2m` real coordinates
//! `(x_1..x_m, y_1..y_m)` and both endpoints at the origin. The line
//! integral of `α^♭ = Σ (y_k dx_k - x_k dy_k)` uses step midpoints, and so
//! does the time quadrature of the potential. Points map to `C^m` through
//! `z_k = x_k + i y_k`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{c, C64, ZERO};
use crate::symplectic::{quadratic_value, HamiltonianSymbol};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceRule {
    /// `σ² = ν`, the time-rescaled standard bridge.
    Nu,
    HalfNu,
    TwoNu,
    NuPlusLog,
}

impl VarianceRule {
    pub const ALL: [VarianceRule; 4] = [Self::Nu, Self::HalfNu, Self::TwoNu, Self::NuPlusLog];

    pub fn variance(self, nu: f64) -> f64 {
        match self {
            Self::Nu => nu,
            Self::HalfNu => 0.5 * nu,
            Self::TwoNu => 2.0 * nu,
            Self::NuPlusLog => nu + (2.0 * nu).ln(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Nu => "nu",
            Self::HalfNu => "half_nu",
            Self::TwoNu => "two_nu",
            Self::NuPlusLog => "nu_plus_log",
        }
    }
}

fn default_modes() -> usize {
    1
}

fn default_rule() -> VarianceRule {
    VarianceRule::Nu
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub nu: f64,
    #[serde(default = "default_rule")]
    pub variance_rule: VarianceRule,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_modes")]
    pub modes: usize,
}

impl MeasureSpec {
    pub fn new(nu: f64, variance_rule: VarianceRule, steps: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            nu,
            variance_rule,
            steps,
            seed,
            modes: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Error::InvalidParameter {
            op: "MeasureSpec",
            name,
            reason,
        };
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(bad("nu", format!("must be positive, got {}", self.nu)));
        }
        if self.steps < 16 {
            return Err(bad("K", format!("must be at least 16, got {}", self.steps)));
        }
        if self.modes == 0 {
            return Err(bad("m", "must be at least 1".into()));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.variance_rule.variance(self.nu)
    }

    fn dims(&self) -> usize {
        2 * self.modes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopPath {
    pub steps: usize,
    pub dims: usize,
    /// Row-major `(K + 1) x 2m`.
    pub points: Vec<f64>,
}

impl LoopPath {
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dims = points.first().map_or(0, Vec::len);
        if points.len() < 2
            || dims == 0
            || !dims.is_multiple_of(2)
            || points.iter().any(|p| p.len() != dims)
        {
            return Err(Error::InvalidParameter {
                op: "LoopPath",
                name: "points",
                reason: "need at least two points of a common even dimension".into(),
            });
        }
        let (first, last) = (&points[0], &points[points.len() - 1]);
        if first.iter().chain(last).any(|&v| v != 0.0) {
            return Err(Error::InvalidParameter {
                op: "LoopPath",
                name: "points",
                reason: "endpoints must be the origin".into(),
            });
        }
        Ok(Self {
            steps: points.len() - 1,
            dims,
            points: points.concat(),
        })
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dims..(j + 1) * self.dims]
    }

    pub fn reversed(&self) -> Self {
        let points = (0..=self.steps)
            .rev()
            .flat_map(|j| self.point(j).to_vec())
            .collect();
        Self {
            steps: self.steps,
            dims: self.dims,
            points,
        }
    }
}

/// Discrete bridge `B_{t_j} - t_j B_1` with per-coordinate covariance
/// `σ² (min(s, t) - s t)`. Stream `index` of the seeded generator.
pub fn sample_loop(spec: &MeasureSpec, index: u64) -> LoopPath {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let k = spec.steps;
    let dims = spec.dims();
    let step = Normal::new(0.0, (spec.variance() / k as f64).sqrt()).expect("finite variance");
    let mut points = vec![0.0; (k + 1) * dims];
    let mut walk = vec![0.0; k + 1];
    for d in 0..dims {
        for j in 1..=k {
            walk[j] = walk[j - 1] + step.sample(&mut rng);
        }
        let end = walk[k];
        for j in 1..k {
            points[j * dims + d] = walk[j] - (j as f64 / k as f64) * end;
        }
    }
    LoopPath {
        steps: k,
        dims,
        points,
    }
}

/// Midpoint rule for `∫ α^♭`; per step this is `y_j x_{j+1} - x_j y_{j+1}`.
pub fn line_integral_alpha(path: &LoopPath) -> f64 {
    let m = path.dims / 2;
    let mut acc = 0.0;
    for j in 0..path.steps {
        let (p, q) = (path.point(j), path.point(j + 1));
        for k in 0..m {
            let (xb, yb) = (0.5 * (p[k] + q[k]), 0.5 * (p[m + k] + q[m + k]));
            acc += yb * (q[k] - p[k]) - xb * (q[m + k] - p[m + k]);
        }
    }
    acc
}

/// Real potential on `R^{2m}` entering the action.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    Constant {
        value: f64,
    },
    /// Uncut `i h_A`.
    Quadratic {
        a: Vec<Vec<[f64; 2]>>,
    },
    /// `i h_A` clipped to `[-tau, tau]`.
    Cutoff {
        a: Vec<Vec<[f64; 2]>>,
        tau: f64,
    },
}

/// Real quadratic form `M` with `i h_A(x + i y) = u^T M u`, `u = (x, y)`.
pub fn real_quadratic_form(sym: &HamiltonianSymbol) -> DMatrix<f64> {
    let m = sym.m;
    let form = sym.form();
    let eval = |u: &[f64]| -> f64 {
        let z: Vec<C64> = (0..m).map(|k| c(u[k], u[m + k])).collect();
        (c(0.0, 1.0) * quadratic_value(&form, &z)).re
    };
    let n = 2 * m;
    let mut out = DMatrix::zeros(n, n);
    let unit = |a: usize, b: usize| {
        let mut u = vec![0.0; n];
        u[a] += 1.0;
        u[b] += 1.0;
        u
    };
    for a in 0..n {
        out[(a, a)] = eval(&unit(a, a)) / 4.0;
    }
    for a in 0..n {
        for b in 0..a {
            let v = 0.5 * (eval(&unit(a, b)) - out[(a, a)] - out[(b, b)]);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// `h_A^{(τ)}`: the real clip of `i h_A` to `[-τ, τ]`, divided by `i`.
#[derive(Clone, Debug)]
pub struct CutoffHamiltonian {
    form: DMatrix<f64>,
    pub tau: f64,
}

impl CutoffHamiltonian {
    /// `i h_A^{(τ)}(u)`.
    pub fn real_clip(&self, u: &[f64]) -> f64 {
        quad(&self.form, u).clamp(-self.tau, self.tau)
    }

    pub fn value(&self, u: &[f64]) -> C64 {
        c(0.0, -self.real_clip(u))
    }
}

pub fn cutoff_h(sym: &HamiltonianSymbol, tau: f64) -> Result<CutoffHamiltonian> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter {
            op: "cutoff_h",
            name: "tau",
            reason: format!("must be positive, got {tau}"),
        });
    }
    Ok(CutoffHamiltonian {
        form: real_quadratic_form(sym),
        tau,
    })
}

fn quad(m: &DMatrix<f64>, u: &[f64]) -> f64 {
    let n = u.len();
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            acc += u[a] * m[(a, b)] * u[b];
        }
    }
    acc
}

pub(crate) fn matrix_to_rows(a: &crate::numerics::CMat) -> Vec<Vec<[f64; 2]>> {
    (0..a.nrows())
        .map(|i| {
            (0..a.ncols())
                .map(|j| [a[(i, j)].re, a[(i, j)].im])
                .collect()
        })
        .collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<[f64; 2]>]) -> Result<crate::numerics::CMat> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Schema("matrix rows must form a square array".into()));
    }
    Ok(crate::numerics::CMat::from_fn(n, n, |i, j| {
        c(rows[i][j][0], rows[i][j][1])
    }))
}

impl Potential {
    pub fn quadratic(sym: &HamiltonianSymbol) -> Self {
        Self::Quadratic {
            a: matrix_to_rows(&sym.a),
        }
    }

    pub fn cutoff(sym: &HamiltonianSymbol, tau: f64) -> Self {
        Self::Cutoff {
            a: matrix_to_rows(&sym.a),
            tau,
        }
    }

    fn symbol(a: &[Vec<[f64; 2]>]) -> Result<HamiltonianSymbol> {
        HamiltonianSymbol::new(rows_to_matrix(a)?, &Default::default())
    }

    fn compile(&self) -> Result<CompiledPotential> {
        Ok(match self {
            Self::Zero => CompiledPotential::Constant(0.0),
            Self::Constant { value } => CompiledPotential::Constant(*value),
            Self::Quadratic { a } => {
                CompiledPotential::Form(real_quadratic_form(&Self::symbol(a)?))
            }
            Self::Cutoff { a, tau } => CompiledPotential::Clip(cutoff_h(&Self::symbol(a)?, *tau)?),
        })
    }
}

enum CompiledPotential {
    Constant(f64),
    Form(DMatrix<f64>),
    Clip(CutoffHamiltonian),
}

impl CompiledPotential {
    fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Form(m) => quad(m, u),
            Self::Clip(h) => h.real_clip(u),
        }
    }
}

fn action_compiled(path: &LoopPath, pot: &CompiledPotential) -> f64 {
    let mut time = 0.0;
    let mut mid = vec![0.0; path.dims];
    for j in 0..path.steps {
        let (p, q) = (path.point(j), path.point(j + 1));
        for d in 0..path.dims {
            mid[d] = 0.5 * (p[d] + q[d]);
        }
        time += pot.eval(&mid);
    }
    line_integral_alpha(path) + time / path.steps as f64
}

/// `S_H(φ) = ∫ α^♭ + ∫_0^1 H(φ(t)) dt` with midpoint quadrature.
pub fn action(path: &LoopPath, potential: &Potential) -> Result<f64> {
    Ok(action_compiled(path, &potential.compile()?))
}

// ---------------------------------------------------------------------------
// Estimator.

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    /// `e^{νm}` times the sample mean of `e^{iS}`.
    pub mean: C64,
    pub stderr: f64,
    /// Sample mean of `e^{iS}` without the `e^{νm}` factor.
    pub raw_mean: C64,
    pub raw_stderr: f64,
    pub samples: usize,
    pub spec: MeasureSpec,
    pub potential: Potential,
}

pub const CHUNK: usize = 4096;

/// Monte Carlo estimate over loop indices `first_index .. first_index + samples`.
pub fn estimate_range(
    spec: &MeasureSpec,
    potential: &Potential,
    first_index: u64,
    samples: usize,
) -> Result<EstimateReport> {
    spec.validate()?;
    if samples < 2 {
        return Err(Error::InvalidParameter {
            op: "estimate",
            name: "S",
            reason: format!("need at least 2 samples, got {samples}"),
        });
    }
    let pot = potential.compile()?;
    let chunks = samples.div_ceil(CHUNK);
    let partial = crate::par::map_range(chunks, |ch| {
        let lo = ch * CHUNK;
        let hi = (lo + CHUNK).min(samples);
        let mut sum = ZERO;
        let mut sq = 0.0;
        for i in lo..hi {
            let path = sample_loop(spec, first_index + i as u64);
            let w = C64::from_polar(1.0, action_compiled(&path, &pot));
            sum += w;
            sq += w.norm_sqr();
        }
        (sum, sq)
    });
    let (sum, sq) = partial
        .into_iter()
        .fold((ZERO, 0.0), |(s, q), (ps, pq)| (s + ps, q + pq));
    let n = samples as f64;
    let raw_mean = sum / n;
    let var = ((sq - n * raw_mean.norm_sqr()) / (n - 1.0)).max(0.0);
    let raw_stderr = (var / n).sqrt();
    let factor = (spec.nu * spec.modes as f64).exp();
    Ok(EstimateReport {
        mean: raw_mean * factor,
        stderr: raw_stderr * factor,
        raw_mean,
        raw_stderr,
        samples,
        spec: *spec,
        potential: potential.clone(),
    })
}

pub fn estimate(
    spec: &MeasureSpec,
    potential: &Potential,
    samples: usize,
) -> Result<EstimateReport> {
    if samples < 1000 {
        return Err(Error::InvalidParameter {
            op: "estimate",
            name: "S",
            reason: format!("need at least 1000 samples, got {samples}"),
        });
    }
    estimate_range(spec, potential, 0, samples)
}

// ---------------------------------------------------------------------------
// Gaussian reference: E[exp(i x^T Q x)] over the free bridge coordinates.

/// Symmetric band matrix stored by rows, `half` entries either side.
#[derive(Clone, Debug)]
struct Band {
    n: usize,
    half: usize,
    data: Vec<C64>,
}

impl Band {
    fn zeros(n: usize, half: usize) -> Self {
        Self {
            n,
            half,
            data: vec![ZERO; n * (2 * half + 1)],
        }
    }

    fn at(&mut self, i: usize, j: usize) -> &mut C64 {
        &mut self.data[i * (2 * self.half + 1) + (j + self.half - i)]
    }

    fn get(&self, i: usize, j: usize) -> C64 {
        if i.abs_diff(j) > self.half {
            return ZERO;
        }
        self.data[i * (2 * self.half + 1) + (j + self.half - i)]
    }

    /// Adds `v x_i x_j` to the quadratic form (symmetrically).
    fn add_term(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            *self.at(i, i) += v;
        } else {
            *self.at(i, j) += 0.5 * v;
            *self.at(j, i) += 0.5 * v;
        }
    }

    /// Principal logs of the pivots of LU without pivoting.
    fn log_pivots(&self) -> Result<Vec<C64>> {
        let mut a = self.clone();
        let (n, b) = (self.n, self.half);
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let piv = a.get(k, k);
            if piv.norm() < 1e-300 || !piv.is_finite() {
                return Err(Error::Caustic { strength: f64::NAN });
            }
            out.push(piv.ln());
            for i in k + 1..(k + b + 1).min(n) {
                let f = a.get(i, k) / piv;
                if f == ZERO {
                    continue;
                }
                for j in k..(k + b + 1).min(n) {
                    let v = a.get(k, j);
                    *a.at(i, j) -= f * v;
                }
            }
        }
        Ok(out)
    }
}

/// The quadratic action on the `(K - 1) 2m` interior coordinates, ordered
/// time-major (`index = (j - 1) 2m + d`).
#[derive(Clone, Debug)]
pub struct QuadraticAction {
    steps: usize,
    dims: usize,
    q: Band,
}

impl QuadraticAction {
    pub fn new(steps: usize, modes: usize, potential: &Potential) -> Result<Self> {
        let dims = 2 * modes;
        let form = match potential {
            Potential::Zero => DMatrix::zeros(dims, dims),
            Potential::Quadratic { a } => {
                let f = real_quadratic_form(&Potential::symbol(a)?);
                if f.nrows() != dims {
                    return Err(Error::DimensionMismatch {
                        op: "QuadraticAction",
                        expected: dims,
                        found: f.nrows(),
                    });
                }
                f
            }
            _ => {
                return Err(Error::InvalidParameter {
                    op: "gaussian_oracle",
                    name: "potential",
                    reason: "the action must be an exact quadratic form".into(),
                })
            }
        };
        let n = (steps - 1) * dims;
        let mut q = Band::zeros(n, 2 * dims - 1);
        let idx = |j: usize, d: usize| (j >= 1 && j < steps).then(|| (j - 1) * dims + d);
        let m = modes;
        for j in 0..steps {
            // line integral: y_j x_{j+1} - x_j y_{j+1}
            for k in 0..m {
                if let (Some(y0), Some(x1)) = (idx(j, m + k), idx(j + 1, k)) {
                    q.add_term(y0, x1, 1.0);
                }
                if let (Some(x0), Some(y1)) = (idx(j, k), idx(j + 1, m + k)) {
                    q.add_term(x0, y1, -1.0);
                }
            }
            // (1/K) H((u_j + u_{j+1}) / 2)
            let w = 0.25 / steps as f64;
            for a in 0..dims {
                for b in 0..dims {
                    let f = form[(a, b)] * w;
                    if f == 0.0 {
                        continue;
                    }
                    for (ja, jb) in [(j, j), (j, j + 1), (j + 1, j), (j + 1, j + 1)] {
                        if let (Some(p), Some(r)) = (idx(ja, a), idx(jb, b)) {
                            q.add_term(p, r, f);
                        }
                    }
                }
            }
        }
        Ok(Self { steps, dims, q })
    }

    pub fn dim(&self) -> usize {
        self.q.n
    }

    /// Dense symmetric `Q`.
    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.q.n, self.q.n, |i, j| self.q.get(i, j).re)
    }

    /// `x^T Q x` for a path.
    pub fn evaluate(&self, path: &LoopPath) -> f64 {
        let x: Vec<f64> = (1..self.steps)
            .flat_map(|j| path.point(j).to_vec())
            .collect();
        let n = x.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in i.saturating_sub(self.q.half)..(i + self.q.half + 1).min(n) {
                acc += x[i] * self.q.get(i, j).re * x[j];
            }
        }
        acc
    }
}

pub const HOMOTOPY_POINTS: usize = 32;

/// Precision matrix of the discrete bridge plus `-2 i s Q`.
fn shifted_precision(spec: &MeasureSpec, action: &QuadraticAction, s: f64) -> Band {
    let mut out = action.q.clone();
    for v in out.data.iter_mut() {
        *v *= c(0.0, -2.0 * s);
    }
    let k = spec.steps as f64;
    let p = k / spec.variance();
    let (dims, n) = (action.dims, action.q.n);
    for i in 0..n {
        *out.at(i, i) += 2.0 * p;
        if i + dims < n {
            *out.at(i, i + dims) -= p;
            *out.at(i + dims, i) -= p;
        }
    }
    out
}

/// `E[exp(i x^T Q x)] = det(I - 2i Σ Q)^{-1/2}`. The log-determinant is
/// followed along `s Q`, `s = 0, 1/32, .., 1`, and each step must move the
/// phase by less than `π/2`.
pub fn gaussian_oracle(spec: &MeasureSpec, potential: &Potential) -> Result<C64> {
    spec.validate()?;
    let action = QuadraticAction::new(spec.steps, spec.modes, potential)?;
    gaussian_oracle_for(spec, &action)
}

pub fn gaussian_oracle_for(spec: &MeasureSpec, action: &QuadraticAction) -> Result<C64> {
    let logdet = |s: f64| -> Result<C64> {
        let logs = shifted_precision(spec, action, s).log_pivots()?;
        Ok(logs.iter().sum())
    };
    let base = logdet(0.0)?;
    let mut prev = base;
    let mut min_modulus = f64::INFINITY;
    for step in 1..=HOMOTOPY_POINTS {
        let s = step as f64 / HOMOTOPY_POINTS as f64;
        let mut cur = logdet(s)?;
        // stay on the branch continuous with the previous point
        let turns = ((cur.im - prev.im) / std::f64::consts::TAU).round();
        cur.im -= turns * std::f64::consts::TAU;
        if (cur.im - prev.im).abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::Caustic { strength: s });
        }
        min_modulus = min_modulus.min((cur.re - base.re).exp());
        prev = cur;
    }
    if min_modulus < 1e-12 {
        return Err(Error::Caustic { strength: 1.0 });
    }
    Ok(((base - prev) * 0.5).exp())
}

/// `Π_k (1 - 2i λ_k)^{-1/2}` with `λ_k` the eigenvalues of `L^T Q L`,
/// `Σ = L L^T`, from a dense eigensolve.
pub fn gaussian_closed_form(spec: &MeasureSpec, action: &QuadraticAction) -> Result<C64> {
    let n = action.dim();
    let dims = action.dims;
    let k = spec.steps as f64;
    let var = spec.variance();
    let sigma = DMatrix::from_fn(n, n, |a, b| {
        if a % dims != b % dims {
            return 0.0;
        }
        let (s, t) = ((a / dims + 1) as f64 / k, (b / dims + 1) as f64 / k);
        var * (s.min(t) - s * t)
    });
    let chol = sigma.cholesky().ok_or(Error::Singular {
        op: "gaussian_closed_form",
    })?;
    let l = chol.l();
    let m = l.transpose() * action.dense() * &l;
    let eig = SymmetricEigen::new(0.5 * (&m + m.transpose()));
    Ok(eig
        .eigenvalues
        .iter()
        .fold(c(1.0, 0.0), |acc, &lam| acc / c(1.0, -2.0 * lam).sqrt()))
}

/// `σ² / sinh σ²`: the continuum value of `E[e^{i ∫ α^♭}]` for one mode.
pub fn continuum_area_value(variance: f64) -> f64 {
    if variance == 0.0 {
        1.0
    } else {
        variance / variance.sinh()
    }
}

// ---------------------------------------------------------------------------
// Calibration of the loop normalization.

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationRow {
    pub rule: VarianceRule,
    pub nu: f64,
    pub variance: f64,
    /// `e^{ν} E[e^{i S_0}]` from the banded determinant.
    pub value: f64,
    pub value_imag: f64,
    /// `e^{ν} σ² / sinh σ²`.
    pub continuum: f64,
    /// Dense closed-form determinant minus the banded value (rule `nu` only).
    pub closed_form_gap: Option<f64>,
    pub mc_mean: C64,
    pub mc_stderr: f64,
    pub mc_within_3_stderr: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationTable {
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub rows: Vec<CalibrationRow>,
    /// Rule closest to 1 at the largest `ν`.
    pub best_rule: VarianceRule,
    pub best_distance: f64,
    pub any_rule_within_0_1: bool,
}

pub fn calibrate(
    nus: &[f64],
    rules: &[VarianceRule],
    steps: usize,
    samples: usize,
    seed: u64,
) -> Result<CalibrationTable> {
    if nus.is_empty() || rules.is_empty() {
        return Err(Error::InvalidParameter {
            op: "calibrate",
            name: "nu_list",
            reason: "need at least one nu and one rule".into(),
        });
    }
    let mut rows = Vec::new();
    for &rule in rules {
        for &nu in nus {
            let spec = MeasureSpec::new(nu, rule, steps, seed)?;
            let action = QuadraticAction::new(steps, 1, &Potential::Zero)?;
            let oracle = gaussian_oracle_for(&spec, &action)?;
            let closed_form_gap = if rule == VarianceRule::Nu {
                Some((gaussian_closed_form(&spec, &action)? - oracle).norm())
            } else {
                None
            };
            let mc = estimate(&spec, &Potential::Zero, samples)?;
            let factor = nu.exp();
            rows.push(CalibrationRow {
                rule,
                nu,
                variance: spec.variance(),
                value: (oracle * factor).re,
                value_imag: (oracle * factor).im,
                continuum: factor * continuum_area_value(spec.variance()),
                closed_form_gap,
                mc_within_3_stderr: (mc.mean - oracle * factor).norm() <= 3.0 * mc.stderr,
                mc_mean: mc.mean,
                mc_stderr: mc.stderr,
            });
        }
    }
    let top = nus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (best_rule, best_distance) = rows
        .iter()
        .filter(|r| r.nu == top)
        .map(|r| (r.rule, (c(r.value, r.value_imag) - c(1.0, 0.0)).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty table");
    Ok(CalibrationTable {
        steps,
        samples,
        seed,
        rows,
        best_rule,
        best_distance,
        any_rule_within_0_1: best_distance < 0.1,
    })
}
