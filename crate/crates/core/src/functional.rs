//! The steady residual `F(b, g, r) = (F₁, F₂)` on the collocation grid.
//!
//! With `R = 1 + r` and `φ = θ − η`, the pair kernels are
//!
//! ```text
//! D  = R(θ)² + R(η)² − 2R(θ)R(η)cos φ                      (|z(θ) − z(η)|²)
//! K₁ = [(R'(θ)cos φ − R(θ)sin φ)R(η) − R(θ)R'(θ)] / D
//! Q  = [R(θ)² − (R'(θ)sin φ + R(θ)cos φ)R(η)] / D
//! ```
//!
//! `F₁(θ) = ⨍ γ(η)(K₁ + ½cot(φ/2)) dη − ½H(γ)(θ) + Ω R R'` and
//! `F̃₂(θ) = γ(θ)/(R² + R'²) · (⨍ γ(η) Q dη − Ω R²)`, `F₂ = (I − P₀)F̃₂`.
//!
//! `K₁ + ½cot(φ/2)` and `Q` are both bounded at `η = θ`; the periodic trapezoid
//! rule uses the closed-form limits at the diagonal node.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FourierSeries, Grid, Parity};

/// Pairs closer than this in squared distance are treated as self-intersection.
pub const GEOMETRY_GUARD: f64 = 1e-10;

/// Candidate rotating sheet: strength `γ = b + g`, boundary `(1 + r)(cos θ, sin θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetState {
    pub b: f64,
    pub g: FourierSeries,
    pub r: FourierSeries,
    pub omega: f64,
}

/// One scalar unknown of a [`SheetState`]. `Gamma(0)` is `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coefficient {
    Gamma(usize),
    Radius(usize),
}

impl Coefficient {
    /// Index `n` of the `cos(2nθ)` mode.
    pub fn mode(self) -> usize {
        match self {
            Coefficient::Gamma(n) | Coefficient::Radius(n) => n,
        }
    }
}

impl std::fmt::Display for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Gamma(n) => write!(f, "gamma_{n}"),
            Coefficient::Radius(n) => write!(f, "r_{n}"),
        }
    }
}

/// Fourier component of the residual: `sin(2nθ)` of `F₁` or `cos(2nθ)` of `F₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualMode {
    F1Sine(usize),
    F2Cosine(usize),
}

impl ResidualMode {
    pub fn mode(self) -> usize {
        match self {
            ResidualMode::F1Sine(n) | ResidualMode::F2Cosine(n) => n,
        }
    }
}

impl SheetState {
    pub fn new(b: f64, g: FourierSeries, r: FourierSeries) -> Result<Self> {
        let state = Self {
            b,
            g,
            r,
            omega: 1.0,
        };
        state.check_class()?;
        Ok(state)
    }

    /// The circle `(b, 0, 0)` with `n_modes` coefficient slots.
    pub fn trivial(b: f64, n_modes: usize) -> Self {
        Self {
            b,
            g: FourierSeries::zero(Parity::Cosine, n_modes),
            r: FourierSeries::zero(Parity::Cosine, n_modes),
            omega: 1.0,
        }
    }

    /// `g` and `r` must be mean-free cosine series.
    pub fn check_class(&self) -> Result<()> {
        for s in [&self.g, &self.r] {
            if s.parity() != Parity::Cosine {
                return Err(Error::ParityMismatch {
                    expected: Parity::Cosine,
                    found: s.parity(),
                });
            }
            if s.constant() != 0.0 {
                return Err(Error::InvalidArgument(
                    "perturbations g and r must have zero mean".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.g.n_modes().max(self.r.n_modes())
    }

    /// Same state with both series padded or truncated to `n_modes`.
    pub fn resized(&self, n_modes: usize) -> Self {
        Self {
            b: self.b,
            g: self.g.clone().resized(n_modes),
            r: self.r.clone().resized(n_modes),
            omega: self.omega,
        }
    }

    /// `γ = b + g` as a cosine series.
    pub fn gamma(&self) -> FourierSeries {
        self.g.clone().with_constant(self.b)
    }

    pub fn r1(&self) -> f64 {
        self.r.coeff(1)
    }

    pub fn coefficient(&self, c: Coefficient) -> f64 {
        match c {
            Coefficient::Gamma(0) => self.b,
            Coefficient::Gamma(n) => self.g.coeff(n),
            Coefficient::Radius(n) => self.r.coeff(n),
        }
    }

    pub fn set_coefficient(&mut self, c: Coefficient, value: f64) {
        match c {
            Coefficient::Gamma(0) => self.b = value,
            Coefficient::Gamma(n) => self.g.set_coeff(n, value),
            Coefficient::Radius(0) => {}
            Coefficient::Radius(n) => self.r.set_coeff(n, value),
        }
    }

    /// `self + t·(db, dg, dr)`.
    pub fn perturbed(&self, t: f64, dir: &Perturbation) -> Result<Self> {
        Ok(Self {
            b: self.b + t * dir.db,
            g: self.g.axpy(t, &dir.g)?,
            r: self.r.axpy(t, &dir.r)?,
            omega: self.omega,
        })
    }
}

/// A direction in `(b, g, r)` space.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub db: f64,
    pub g: FourierSeries,
    pub r: FourierSeries,
}

impl Perturbation {
    /// Pure `(g, r)` direction.
    pub fn new(g: FourierSeries, r: FourierSeries) -> Self {
        Self { db: 0.0, g, r }
    }

    /// `(g, r) = (Σ gₙ cos 2nθ, Σ rₙ cos 2nθ)` from mode lists.
    pub fn from_modes(g: &[(usize, f64)], r: &[(usize, f64)]) -> Self {
        let n = g.iter().chain(r).map(|m| m.0).max().unwrap_or(0);
        Self::new(
            FourierSeries::from_modes(Parity::Cosine, n, g),
            FourierSeries::from_modes(Parity::Cosine, n, r),
        )
    }

    /// Unit step in `b` only.
    pub fn along_b() -> Self {
        Self {
            db: 1.0,
            g: FourierSeries::zero(Parity::Cosine, 0),
            r: FourierSeries::zero(Parity::Cosine, 0),
        }
    }
}

/// Sampled residual: `f1` holds `F₁`, `f2` holds `(I − P₀)F̃₂` (grid mean removed).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub sup_norm: f64,
    /// Root-mean-square over both components and all nodes.
    pub l2_norm: f64,
}

/// Fourier coefficients of a residual: `F₁` on `sin(2nθ)`, `F₂` on `cos(2nθ)`, `n = 1..`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedResidual {
    pub f1_sine: Vec<f64>,
    pub f2_cosine: Vec<f64>,
}

impl ProjectedResidual {
    pub fn n_modes(&self) -> usize {
        self.f1_sine.len()
    }

    pub fn get(&self, mode: ResidualMode) -> f64 {
        match mode {
            ResidualMode::F1Sine(n) => self.f1_sine.get(n - 1).copied().unwrap_or(0.0),
            ResidualMode::F2Cosine(n) => self.f2_cosine.get(n - 1).copied().unwrap_or(0.0),
        }
    }

    /// `[F₁ sine 1..N, F₂ cosine 1..N]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.f1_sine
            .iter()
            .chain(&self.f2_cosine)
            .copied()
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.f1_sine
            .iter()
            .chain(&self.f2_cosine)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&self, factor: f64, other: &Self) -> Self {
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + factor * y).collect();
        Self {
            f1_sine: zip(&self.f1_sine, &other.f1_sine),
            f2_cosine: zip(&self.f2_cosine, &other.f2_cosine),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            f1_sine: self.f1_sine.iter().map(|v| v * factor).collect(),
            f2_cosine: self.f2_cosine.iter().map(|v| v * factor).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Diagonal limits

/// `η → θ` limit of `γ(η)(K₁ + ½cot(φ/2))` from local values of `γ, R, R', R''`.
#[inline]
pub fn f1_limit(gamma: f64, radius: f64, d1: f64, d2: f64) -> f64 {
    let a = radius * radius + d1 * d1;
    -gamma * d1 * (radius + d2) / (2.0 * a)
}

/// `η → θ` limit of `Q = A₆/D` from local values of `R, R', R''`.
#[inline]
pub fn f2_limit(radius: f64, d1: f64, d2: f64) -> f64 {
    let a = radius * radius + d1 * d1;
    (d1 * d1 + 0.5 * (radius * radius - radius * d2)) / a
}

/// Partials of [`f1_limit`] with respect to `(γ, R, R', R'')`.
#[inline]
fn f1_limit_grad(gamma: f64, radius: f64, d1: f64, d2: f64) -> [f64; 4] {
    let a = radius * radius + d1 * d1;
    let s = radius + d2;
    [
        -d1 * s / (2.0 * a),
        -gamma * d1 / (2.0 * a) + gamma * d1 * s * radius / (a * a),
        -gamma * s / (2.0 * a) + gamma * d1 * d1 * s / (a * a),
        -gamma * d1 / (2.0 * a),
    ]
}

/// Partials of [`f2_limit`] with respect to `(R, R', R'')`.
#[inline]
fn f2_limit_grad(radius: f64, d1: f64, d2: f64) -> [f64; 3] {
    let a = radius * radius + d1 * d1;
    let l = f2_limit(radius, d1, d2);
    [
        (radius - 0.5 * d2 - 2.0 * radius * l) / a,
        (2.0 * d1 - 2.0 * d1 * l) / a,
        -0.5 * radius / a,
    ]
}

struct Local {
    radius: f64,
    d1: f64,
    d2: f64,
    gamma: f64,
}

fn local_at(state: &SheetState, theta: f64) -> Local {
    let dr = crate::spectral::differentiate(&state.r);
    let ddr = crate::spectral::differentiate(&dr);
    Local {
        radius: 1.0 + state.r.eval_at(theta),
        d1: dr.eval_at(theta),
        d2: ddr.eval_at(theta),
        gamma: state.b + state.g.eval_at(theta),
    }
}

/// Diagonal value of the desingularized `F₁` integrand at any angle `θ`.
pub fn f1_diagonal_limit(state: &SheetState, theta: f64) -> f64 {
    let l = local_at(state, theta);
    f1_limit(l.gamma, l.radius, l.d1, l.d2)
}

/// Diagonal value of the `F̃₂` kernel `A₆·A₃` at any angle `θ`.
pub fn f2_diagonal_limit(state: &SheetState, theta: f64) -> f64 {
    let l = local_at(state, theta);
    f2_limit(l.radius, l.d1, l.d2)
}

/// Desingularized `F₁` integrand `γ(η)(K₁ + ½cot((θ−η)/2))` off the diagonal.
pub fn f1_integrand(state: &SheetState, theta: f64, eta: f64) -> f64 {
    let lt = local_at(state, theta);
    let s = 1.0 + state.r.eval_at(eta);
    let gamma = state.b + state.g.eval_at(eta);
    let phi = theta - eta;
    let hav = (0.5 * phi).sin().powi(2);
    let d = pair_distance_sq(lt.radius, s, hav);
    let n1 = pair_n1(lt.radius, lt.d1, s, phi.sin(), hav);
    gamma * (n1 / d + 0.5 / (0.5 * phi).tan())
}

/// `F̃₂` kernel `A₆·A₃` off the diagonal.
pub fn f2_kernel(state: &SheetState, theta: f64, eta: f64) -> f64 {
    let lt = local_at(state, theta);
    let s = 1.0 + state.r.eval_at(eta);
    let phi = theta - eta;
    let hav = (0.5 * phi).sin().powi(2);
    pair_a6(lt.radius, lt.d1, s, phi.sin(), hav) / pair_distance_sq(lt.radius, s, hav)
}

// The pair kernels are written in terms of `R(θ) − R(η)` and `hav = sin²(φ/2)`
// so that quantities of size O(φ) or O(φ²) are not formed by cancellation.

/// `|z(θ) − z(η)|² = (R − S)² + 4RS sin²(φ/2)`.
#[inline]
fn pair_distance_sq(rt: f64, s: f64, hav: f64) -> f64 {
    let diff = rt - s;
    diff * diff + 4.0 * rt * s * hav
}

/// `(R' cos φ − R sin φ)S − RR'`.
#[inline]
fn pair_n1(rt: f64, dt: f64, s: f64, sin: f64, hav: f64) -> f64 {
    dt * ((s - rt) - 2.0 * s * hav) - rt * s * sin
}

/// `R² − (R' sin φ + R cos φ)S`.
#[inline]
fn pair_a6(rt: f64, dt: f64, s: f64, sin: f64, hav: f64) -> f64 {
    rt * (rt - s) + 2.0 * rt * s * hav - dt * s * sin
}

// ---------------------------------------------------------------------------
// Grid evaluation

/// A state sampled on the full period `η_k = (k+1)π/N_θ`, `k = 0..2N_θ`.
struct Sheet<'a> {
    grid: &'a Grid,
    omega: f64,
    radius: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    gamma: Vec<f64>,
    hilbert_gamma: Vec<f64>,
    /// `½cot(mπ/(2N_θ))`, `m = 1..2N_θ`; entry 0 unused.
    half_cot: Vec<f64>,
    /// `sin²(mπ/(2N_θ))`.
    hav: Vec<f64>,
}

impl<'a> Sheet<'a> {
    fn new(state: &SheetState, grid: &'a Grid) -> Result<Self> {
        state.check_class()?;
        let base = Grid::half(grid.n_theta())?;
        let dr = crate::spectral::differentiate(&state.r);
        let ddr = crate::spectral::differentiate(&dr);
        let gamma = state.gamma();
        let h_gamma = crate::spectral::hilbert(&gamma)?;
        let extend = |v: Vec<f64>| {
            let mut full = v.clone();
            full.extend_from_slice(&v);
            full
        };
        let radius: Vec<f64> = crate::spectral::eval(&state.r, &base)
            .into_iter()
            .map(|x| 1.0 + x)
            .collect();
        if let Some((node, &radius)) = radius
            .iter()
            .enumerate()
            .find(|(_, &x)| !(x > 0.0))
        {
            return Err(Error::NonPositiveRadius { node, radius });
        }
        let period = 2 * grid.n_theta();
        let half_cot = (0..period)
            .map(|m| {
                if m == 0 {
                    0.0
                } else {
                    let half = 0.5 * m as f64 * grid.spacing();
                    0.5 * half.cos() / half.sin()
                }
            })
            .collect();
        let hav = (0..period)
            .map(|m| (0.5 * m as f64 * grid.spacing()).sin().powi(2))
            .collect();
        Ok(Self {
            grid,
            omega: state.omega,
            radius: extend(radius),
            d1: extend(crate::spectral::eval(&dr, &base)),
            d2: extend(crate::spectral::eval(&ddr, &base)),
            gamma: extend(crate::spectral::eval(&gamma, &base)),
            hilbert_gamma: extend(crate::spectral::eval(&h_gamma, &base)),
            half_cot,
            hav,
        })
    }

    fn period(&self) -> usize {
        2 * self.grid.n_theta()
    }

    #[inline]
    fn geometry_check(&self, j: usize, k: usize, d: f64) -> Result<()> {
        if d > GEOMETRY_GUARD {
            Ok(())
        } else {
            Err(Error::Geometry {
                node: j,
                eta_node: k,
                distance_sq: d,
            })
        }
    }

    /// `(F₁, F̃₂)` at collocation node `j`.
    fn node(&self, j: usize) -> Result<(f64, f64)> {
        let period = self.period();
        let (rt, dt, gt) = (self.radius[j], self.d1[j], self.gamma[j]);
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for k in 0..period {
            if k == j {
                continue;
            }
            let m = self.grid.wrap(j as i64 - k as i64);
            let s = self.grid.sin_at(m as i64);
            let hav = self.hav[m];
            let sk = self.radius[k];
            let gk = self.gamma[k];
            let d = pair_distance_sq(rt, sk, hav);
            self.geometry_check(j, k, d)?;
            let inv = 1.0 / d;
            s1 += gk * (pair_n1(rt, dt, sk, s, hav) * inv + self.half_cot[m]);
            s2 += gk * pair_a6(rt, dt, sk, s, hav) * inv;
        }
        s1 += f1_limit(gt, rt, dt, self.d2[j]);
        s2 += gt * f2_limit(rt, dt, self.d2[j]);
        let w = 1.0 / period as f64;
        let f1 = s1 * w - 0.5 * self.hilbert_gamma[j] + self.omega * rt * dt;
        let a7 = 1.0 / (rt * rt + dt * dt);
        let f2 = gt * a7 * (s2 * w - self.omega * rt * rt);
        Ok((f1, f2))
    }
}

/// Index of the grid node at `theta`, if `theta` is one.
fn node_index(grid: &Grid, theta: f64) -> Result<usize> {
    let x = theta / grid.spacing();
    let i = x.round();
    if (x - i).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("θ = {theta} is not a grid node")));
    }
    let period = 2 * grid.n_theta() as i64;
    Ok(((i as i64 - 1).rem_euclid(period)) as usize)
}

/// `F₁(θ)` at a grid node.
pub fn f1_at(state: &SheetState, theta: f64, grid: &Grid) -> Result<f64> {
    let j = node_index(grid, theta)?;
    Sheet::new(state, grid)?.node(j).map(|v| v.0)
}

/// `F̃₂(θ)` (before the mean projection) at a grid node.
pub fn f2_at(state: &SheetState, theta: f64, grid: &Grid) -> Result<f64> {
    let j = node_index(grid, theta)?;
    Sheet::new(state, grid)?.node(j).map(|v| v.1)
}

/// Samples `(F₁, (I − P₀)F̃₂)` at every node of `grid`.
pub fn assemble_residual(state: &SheetState, grid: &Grid) -> Result<ResidualField> {
    let sheet = Sheet::new(state, grid)?;
    let n = grid.len();
    let mut f1 = Vec::with_capacity(n);
    let mut f2 = Vec::with_capacity(n);
    for j in 0..n {
        let (a, b) = sheet.node(j)?;
        f1.push(a);
        f2.push(b);
    }
    let mean = f2.iter().sum::<f64>() / n as f64;
    f2.iter_mut().for_each(|v| *v -= mean);
    let sup_norm = f1.iter().chain(&f2).fold(0.0f64, |m, v| m.max(v.abs()));
    let l2_norm = (f1.iter().chain(&f2).map(|v| v * v).sum::<f64>() / (2 * n) as f64).sqrt();
    Ok(ResidualField {
        f1,
        f2,
        sup_norm,
        l2_norm,
    })
}

/// Fourier coefficients `n = 1..n_modes` of a sampled residual.
pub fn project_residual(field: &ResidualField, grid: &Grid, n_modes: usize) -> ProjectedResidual {
    let scale = 2.0 / grid.len() as f64;
    let project = |values: &[f64], parity: Parity| -> Vec<f64> {
        (1..=n_modes)
            .map(|n| {
                scale
                    * values
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * grid.mode_at(parity, n, i))
                        .sum::<f64>()
            })
            .collect()
    };
    ProjectedResidual {
        f1_sine: project(&field.f1, Parity::Sine),
        f2_cosine: project(&field.f2, Parity::Cosine),
    }
}

/// Convenience: assemble and project in one call.
pub fn projected_residual(
    state: &SheetState,
    grid: &Grid,
    n_modes: usize,
) -> Result<ProjectedResidual> {
    Ok(project_residual(&assemble_residual(state, grid)?, grid, n_modes))
}

// ---------------------------------------------------------------------------
// Exact Jacobian of the discrete residual

/// Derivatives of the sampled residual with respect to every coefficient.
///
/// Columns are ordered `γ₀..γ_N, r₁..r_N` (see [`NodeJacobian::columns`]).
/// `f2` differentiates `F̃₂`; the mean projection is linear and applied by
/// consumers that need node values.
#[derive(Debug, Clone)]
pub struct NodeJacobian {
    pub n_modes: usize,
    pub f1: DMatrix<f64>,
    pub f2: DMatrix<f64>,
}

impl NodeJacobian {
    pub fn columns(&self) -> Vec<Coefficient> {
        (0..=self.n_modes)
            .map(Coefficient::Gamma)
            .chain((1..=self.n_modes).map(Coefficient::Radius))
            .collect()
    }

    pub fn column_index(&self, c: Coefficient) -> Option<usize> {
        match c {
            Coefficient::Gamma(n) if n <= self.n_modes => Some(n),
            Coefficient::Radius(n) if (1..=self.n_modes).contains(&n) => Some(self.n_modes + n),
            _ => None,
        }
    }

    /// Rows `F₁ sin(2nθ)` then `F₂ cos(2nθ)`, `n = 1..n_proj`.
    pub fn project(&self, grid: &Grid, n_proj: usize) -> DMatrix<f64> {
        let rows = grid.len();
        let scale = 2.0 / rows as f64;
        let sine = DMatrix::from_fn(n_proj, rows, |n, i| {
            scale * grid.mode_at(Parity::Sine, n + 1, i)
        });
        let cosine = DMatrix::from_fn(n_proj, rows, |n, i| {
            scale * grid.mode_at(Parity::Cosine, n + 1, i)
        });
        let top = &sine * &self.f1;
        let bottom = &cosine * &self.f2;
        let mut out = DMatrix::zeros(2 * n_proj, self.f1.ncols());
        out.rows_mut(0, n_proj).copy_from(&top);
        out.rows_mut(n_proj, n_proj).copy_from(&bottom);
        out
    }

    /// Node-valued rows `[F₁(θ_j); F₂(θ_j)]` with the grid mean removed from `F₂`.
    pub fn nodes(&self) -> DMatrix<f64> {
        let rows = self.f1.nrows();
        let mut f2 = self.f2.clone();
        for mut col in f2.column_iter_mut() {
            let mean = col.sum() / rows as f64;
            col.add_scalar_mut(-mean);
        }
        let mut out = DMatrix::zeros(2 * rows, self.f1.ncols());
        out.rows_mut(0, rows).copy_from(&self.f1);
        out.rows_mut(rows, rows).copy_from(&f2);
        out
    }
}

/// Exact derivative of the sampled `(F₁, F̃₂)` by the chain rule through every
/// pair kernel and diagonal limit.
pub fn node_jacobian(state: &SheetState, grid: &Grid) -> Result<NodeJacobian> {
    let n_modes = state.n_modes();
    let state = state.resized(n_modes);
    let sheet = Sheet::new(&state, grid)?;
    let nn = grid.n_theta();
    let period = 2 * nn;
    let rows = grid.len();
    let w = 1.0 / period as f64;
    let omega = sheet.omega;

    // Row-major accumulators, folded onto the N_θ distinct field nodes.
    let mut wg1 = vec![0.0; rows * nn];
    let mut ws1 = vec![0.0; rows * nn];
    let mut wg2 = vec![0.0; rows * nn];
    let mut ws2 = vec![0.0; rows * nn];
    // Per-row coefficients of the local fields (R, R', R'', γ) at θ_j.
    let mut local1 = vec![[0.0; 4]; rows];
    let mut local2 = vec![[0.0; 4]; rows];

    for j in 0..rows {
        let (rt, dt, ddt, gt) = (sheet.radius[j], sheet.d1[j], sheet.d2[j], sheet.gamma[j]);
        let (mut sr1, mut sp1, mut sr2, mut sp2, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let row = j * nn;
        for k in 0..period {
            if k == j {
                continue;
            }
            let m = grid.wrap(j as i64 - k as i64);
            let c = grid.cos_at(m as i64);
            let s = grid.sin_at(m as i64);
            let sk = sheet.radius[k];
            let gk = sheet.gamma[k];
            let hav = sheet.hav[m];
            let d = pair_distance_sq(rt, sk, hav);
            sheet.geometry_check(j, k, d)?;
            let inv = 1.0 / d;
            let dd_r = 2.0 * (rt - sk) + 4.0 * sk * hav;
            let dd_s = 2.0 * (sk - rt) + 4.0 * rt * hav;

            let k1 = pair_n1(rt, dt, sk, s, hav) * inv;
            let k1_r = (-s * sk - dt - k1 * dd_r) * inv;
            let k1_p = (c * sk - rt) * inv;
            let k1_s = (dt * c - rt * s - k1 * dd_s) * inv;

            let q = pair_a6(rt, dt, sk, s, hav) * inv;
            let q_r = (2.0 * rt - c * sk - q * dd_r) * inv;
            let q_p = (-s * sk) * inv;
            let q_s = (-(dt * s + rt * c) - q * dd_s) * inv;

            let f = row + k % nn;
            wg1[f] += k1 + sheet.half_cot[m];
            ws1[f] += gk * k1_s;
            wg2[f] += q;
            ws2[f] += gk * q_s;
            sr1 += gk * k1_r;
            sp1 += gk * k1_p;
            sr2 += gk * q_r;
            sp2 += gk * q_p;
            t2 += gk * q;
        }
        let l1 = f1_limit_grad(gt, rt, dt, ddt);
        let l2v = f2_limit(rt, dt, ddt);
        let l2 = f2_limit_grad(rt, dt, ddt);
        t2 = (t2 + gt * l2v) * w;

        local1[j] = [
            (sr1 + l1[1]) * w + omega * dt,
            (sp1 + l1[2]) * w + omega * rt,
            l1[3] * w,
            l1[0] * w,
        ];

        let a7 = 1.0 / (rt * rt + dt * dt);
        let pref = gt * a7;
        let bracket = t2 - omega * rt * rt;
        local2[j] = [
            pref * ((sr2 + gt * l2[0]) * w - 2.0 * omega * rt) - 2.0 * rt * a7 * pref * bracket,
            pref * (sp2 + gt * l2[1]) * w - 2.0 * dt * a7 * pref * bracket,
            pref * gt * l2[2] * w,
            pref * l2v * w + a7 * bracket,
        ];
        // η-side weights of F̃₂ carry the prefactor γ(θ)A₇/(2N_θ)
        let scale = pref * w;
        for v in &mut wg2[row..row + nn] {
            *v *= scale;
        }
        for v in &mut ws2[row..row + nn] {
            *v *= scale;
        }
        for v in &mut wg1[row..row + nn] {
            *v *= w;
        }
        for v in &mut ws1[row..row + nn] {
            *v *= w;
        }
    }

    let basis = DMatrix::from_fn(nn, n_modes + 1, |i, n| {
        grid.mode_at(Parity::Cosine, n, i)
    });
    let to_matrix = |v: Vec<f64>| DMatrix::from_row_slice(rows, nn, &v);
    let g1 = to_matrix(wg1) * &basis;
    let s1 = to_matrix(ws1) * &basis;
    let g2 = to_matrix(wg2) * &basis;
    let s2 = to_matrix(ws2) * &basis;

    let cols = 2 * n_modes + 1;
    let mut f1 = DMatrix::zeros(rows, cols);
    let mut f2 = DMatrix::zeros(rows, cols);
    for j in 0..rows {
        for n in 0..=n_modes {
            let cosn = grid.mode_at(Parity::Cosine, n, j);
            let sinn = grid.mode_at(Parity::Sine, n, j);
            f1[(j, n)] = g1[(j, n)] + local1[j][3] * cosn - if n > 0 { 0.5 * sinn } else { 0.0 };
            f2[(j, n)] = g2[(j, n)] + local2[j][3] * cosn;
            if n > 0 {
                let wn = 2.0 * n as f64;
                let col = n_modes + n;
                let basis_r = [cosn, -wn * sinn, -wn * wn * cosn];
                let l1 = &local1[j];
                let l2 = &local2[j];
                f1[(j, col)] =
                    s1[(j, n)] + l1[0] * basis_r[0] + l1[1] * basis_r[1] + l1[2] * basis_r[2];
                f2[(j, col)] =
                    s2[(j, n)] + l2[0] * basis_r[0] + l2[1] * basis_r[1] + l2[2] * basis_r[2];
            }
        }
    }
    Ok(NodeJacobian { n_modes, f1, f2 })
}
