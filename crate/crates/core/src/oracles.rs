//! Closed-form reference values near the bifurcation point `b = 2`.
//!
//! Everything here is computed through the full discrete functional with
//! finite differences; the closed forms only appear as expected values.
//!
//! Directions use `(g, r)` order:
//! `v = (0, cos 2θ)`, `ṽ = (2 cos 2θ, 0)`, `v̂ = (−8 cos 4θ, 3/2 cos 4θ)`.
//! `Q` keeps the `cos 2θ` coefficient of the second component.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::functional::{projected_residual, Perturbation, ProjectedResidual, ResidualMode, SheetState};
use crate::spectral::Grid;

/// Base finite-difference step for derivative oracles.
pub const FD_STEP: f64 = 1e-3;
/// Steps below this lose every digit to cancellation in a third difference.
pub const MIN_FD_STEP: f64 = 1e-7;
/// Default `|b − 2|` accepted by [`local_branch_predict`].
pub const TRUST_RADIUS: f64 = 0.3;
/// Modes compared when an oracle states a full function.
pub const CHECKED_MODES: usize = 4;

pub fn v() -> Perturbation {
    Perturbation::from_modes(&[], &[(1, 1.0)])
}

pub fn v_tilde() -> Perturbation {
    Perturbation::from_modes(&[(1, 2.0)], &[])
}

pub fn v_hat() -> Perturbation {
    Perturbation::from_modes(&[(2, -8.0)], &[(2, 1.5)])
}

fn n_modes_of(dirs: &[&Perturbation]) -> usize {
    dirs.iter()
        .map(|d| d.g.n_modes().max(d.r.n_modes()))
        .max()
        .unwrap_or(0)
        .max(CHECKED_MODES)
}

/// Mixed central difference `∂ᵏF/∂d₁…∂dₖ` at step `h`.
///
/// Uses `Σ_s (Π sᵢ) F(x + h Σ sᵢ dᵢ) / (2h)ᵏ` over all sign vectors `s`.
pub fn mixed_derivative_at_step(
    base: &SheetState,
    dirs: &[&Perturbation],
    grid: &Grid,
    n_modes: usize,
    h: f64,
) -> Result<ProjectedResidual> {
    if !(h.is_finite() && h >= MIN_FD_STEP) {
        return Err(Error::StepUnderflow(h));
    }
    let k = dirs.len();
    let base = base.resized(base.n_modes().max(n_modes_of(dirs)));
    let mut acc: Option<ProjectedResidual> = None;
    for mask in 0..(1u32 << k) {
        let mut point = base.clone();
        let mut sign = 1.0;
        for (i, d) in dirs.iter().enumerate() {
            let s = if mask & (1 << i) == 0 { 1.0 } else { -1.0 };
            sign *= s;
            point = point.perturbed(s * h, d)?;
        }
        let value = projected_residual(&point, grid, n_modes)?;
        acc = Some(match acc {
            None => value.scaled(sign),
            Some(a) => a.axpy(sign, &value),
        });
    }
    let acc = acc.expect("at least one stencil point");
    Ok(acc.scaled((2.0 * h).powi(k as i32).recip()))
}

/// [`mixed_derivative_at_step`] with one Richardson extrapolation `(4D(h/2) − D(h))/3`.
pub fn mixed_derivative(
    base: &SheetState,
    dirs: &[&Perturbation],
    grid: &Grid,
    n_modes: usize,
    h: f64,
) -> Result<ProjectedResidual> {
    let coarse = mixed_derivative_at_step(base, dirs, grid, n_modes, h)?;
    let fine = mixed_derivative_at_step(base, dirs, grid, n_modes, 0.5 * h)?;
    Ok(fine.scaled(4.0 / 3.0).axpy(-1.0 / 3.0, &coarse))
}

/// `d²/dtds F(b, t·dir1 + s·dir2)` at `t = s = 0`, projected onto modes `1..=n_modes`.
pub fn directional_second_derivative(
    base_b: f64,
    dir1: &Perturbation,
    dir2: &Perturbation,
    grid: &Grid,
    n_modes: usize,
) -> Result<ProjectedResidual> {
    let base = SheetState::trivial(base_b, n_modes);
    mixed_derivative(&base, &[dir1, dir2], grid, n_modes, FD_STEP)
}

/// `(1/3) d³/dt³ F(b, t·dir)` at `t = 0`, projected onto modes `1..=n_modes`.
pub fn directional_third_derivative(
    base_b: f64,
    dir: &Perturbation,
    grid: &Grid,
    n_modes: usize,
) -> Result<ProjectedResidual> {
    let base = SheetState::trivial(base_b, n_modes);
    Ok(mixed_derivative(&base, &[dir, dir, dir], grid, n_modes, FD_STEP)?.scaled(1.0 / 3.0))
}

/// One reference value: expected projected coefficients of a derivative.
#[derive(Debug, Clone)]
pub struct OracleEntry {
    pub name: &'static str,
    /// Formula the entry checks, for report tables.
    pub statement: &'static str,
    /// Nonzero expected coefficients; every other checked coefficient is expected to vanish.
    pub expected: Vec<(ResidualMode, f64)>,
    /// Only the `Q` component (`F₂ cos 2θ`) is compared.
    pub q_only: bool,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub name: String,
    pub expected: f64,
    pub computed: f64,
    pub error: f64,
    pub pass: bool,
}

/// The ten directional-derivative values at `b = 2`, `Ω = 1`.
pub fn value_entries() -> Vec<OracleEntry> {
    use ResidualMode::{F1Sine as S, F2Cosine as C};
    let e = |name, statement, expected: Vec<(ResidualMode, f64)>, q_only| OracleEntry {
        name,
        statement,
        expected,
        q_only,
        tolerance: 1e-4,
    };
    vec![
        e("value1", "∂b DF(2,0)v = (sin 2θ, 0)", vec![(S(1), 1.0)], false),
        e("value2", "½ d²/dt² F(2,tv) = (−2 sin 4θ, −3 cos 4θ)", vec![(S(2), -2.0), (C(2), -3.0)], false),
        e("value10", "∂b Q d²/dt² F(b,tv) = 0", vec![], true),
        e("value7", "DF(2,0)ṽ = −(I−Q)∂b DF(2,0)v", vec![(S(1), -1.0)], false),
        e("value4", "DF(2,0)v̂ = −d²/dt² (I−Q)F(2,tv)", vec![(S(2), 4.0), (C(2), 6.0)], false),
        e("value5", "d²/dtds Q F(2,tv+sv̂) = −12 cos 2θ", vec![(C(1), -12.0)], true),
        e("value6", "⅓ d³/dt³ Q F(2,tv) = 4 cos 2θ", vec![(C(1), 4.0)], true),
        e("value8", "Q d²/dtds F(2,tv+sṽ) = 0", vec![], true),
        e("value9", "∂b DF(2,0)v̂ = (3 sin 4θ, 2 cos 4θ), Q part 0", vec![(S(2), 3.0), (C(2), 2.0)], false),
        e("value11", "2Q ∂b DF(2,0)ṽ = 2 cos 2θ", vec![(C(1), 2.0)], true),
    ]
}

/// The derivative an entry refers to, evaluated at `b = 2`.
pub fn evaluate_value(name: &str, grid: &Grid) -> Result<ProjectedResidual> {
    let n = CHECKED_MODES;
    let base = SheetState::trivial(2.0, n);
    let b = Perturbation::along_b();
    let (v, vt, vh) = (v(), v_tilde(), v_hat());
    let d = |dirs: &[&Perturbation]| mixed_derivative(&base, dirs, grid, n, FD_STEP);
    Ok(match name {
        "value1" => d(&[&b, &v])?,
        "value2" => d(&[&v, &v])?.scaled(0.5),
        "value10" => d(&[&b, &v, &v])?,
        "value7" => d(&[&vt])?,
        "value4" => d(&[&vh])?,
        "value5" => d(&[&v, &vh])?,
        "value6" => d(&[&v, &v, &v])?.scaled(1.0 / 3.0),
        "value8" => d(&[&v, &vt])?,
        "value9" => d(&[&b, &vh])?,
        "value11" => d(&[&b, &vt])?.scaled(2.0),
        other => return Err(Error::UnknownIdentity(other.to_string())),
    })
}

/// Compare one entry coefficient by coefficient; the error is `|Δ| / max(1, |expected|)`.
pub fn check_value(entry: &OracleEntry, computed: &ProjectedResidual) -> Vec<OracleOutcome> {
    let modes: Vec<ResidualMode> = if entry.q_only {
        vec![ResidualMode::F2Cosine(1)]
    } else {
        (1..=computed.n_modes())
            .flat_map(|n| [ResidualMode::F1Sine(n), ResidualMode::F2Cosine(n)])
            .collect()
    };
    modes
        .into_iter()
        .map(|mode| {
            let expected = entry
                .expected
                .iter()
                .find(|(m, _)| *m == mode)
                .map_or(0.0, |(_, x)| *x);
            let value = computed.get(mode);
            let error = (value - expected).abs() / expected.abs().max(1.0);
            let label = match mode {
                ResidualMode::F1Sine(n) => format!("{} F1 sin{}θ", entry.name, 2 * n),
                ResidualMode::F2Cosine(n) => format!("{} F2 cos{}θ", entry.name, 2 * n),
            };
            OracleOutcome {
                name: label,
                expected,
                computed: value,
                error,
                pass: error <= entry.tolerance,
            }
        })
        .collect()
}

/// Principal-value averages `⨍ = (1/2π)∫` with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identity {
    /// `⨍ (cos mθ − cos mη) / (2 − 2cos(θ−η)) = (m/2) cos mθ`
    Lemma1,
    /// `⨍ cos mη sin(θ−η) / (2 − 2cos(θ−η)) = ½ sin mθ`
    Lemma2,
    /// `⨍ (cos 2θ − cos 2η) cos 4η / (2 − 2cos(θ−η)) = −½ cos 2θ + ½ cos 6θ`
    Lemma31,
    /// `⨍ (cos 2θ − cos 2η) cos 2η / (2 − 2cos(θ−η)) = −½ + ½ cos 4θ`
    Lemma32,
    /// `⨍ (cos 4θ − cos 4η) cos 2η / (2 − 2cos(θ−η)) = cos 6θ`
    Lemma33,
    /// `⨍ (cos 2θ − cos 2η) sin 2η / (2 − 2cos(θ−η)) = ½ sin 4θ`
    Lemma34,
    /// `⨍ (cos 2θ − cos 2η)³ / (2 − 2cos(θ−η))² = (9/4) cos 2θ − cos 6θ`
    Lemma4,
    /// `⨍ (cos 2θ − cos 2η)² sin(θ−η) / (2 − 2cos(θ−η))² = −sin 4θ`
    Lemma5,
}

impl Identity {
    pub const ALL: [Identity; 8] = [
        Identity::Lemma1,
        Identity::Lemma2,
        Identity::Lemma31,
        Identity::Lemma32,
        Identity::Lemma33,
        Identity::Lemma34,
        Identity::Lemma4,
        Identity::Lemma5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Identity::Lemma1 => "lemma1",
            Identity::Lemma2 => "lemma2",
            Identity::Lemma31 => "lemma31",
            Identity::Lemma32 => "lemma32",
            Identity::Lemma33 => "lemma33",
            Identity::Lemma34 => "lemma34",
            Identity::Lemma4 => "lemma4",
            Identity::Lemma5 => "lemma5",
        }
    }

    /// Whether the identity is a family indexed by `m`.
    pub fn takes_m(self) -> bool {
        matches!(self, Identity::Lemma1 | Identity::Lemma2)
    }

    pub fn closed_form(self, m: usize, theta: f64) -> f64 {
        let mf = m as f64;
        let c = |k: f64| (k * theta).cos();
        let s = |k: f64| (k * theta).sin();
        match self {
            Identity::Lemma1 => 0.5 * mf * c(mf),
            Identity::Lemma2 => 0.5 * s(mf),
            Identity::Lemma31 => -0.5 * c(2.0) + 0.5 * c(6.0),
            Identity::Lemma32 => -0.5 + 0.5 * c(4.0),
            Identity::Lemma33 => c(6.0),
            Identity::Lemma34 => 0.5 * s(4.0),
            Identity::Lemma4 => 2.25 * c(2.0) - c(6.0),
            Identity::Lemma5 => -s(4.0),
        }
    }

    /// Integrand at `η = θ − x`, `x ≠ 0`.
    fn integrand(self, m: usize, theta: f64, x: f64) -> f64 {
        let eta = theta - x;
        let mf = m as f64;
        let denom = 2.0 - 2.0 * x.cos();
        let diff = |a: f64| (a * theta).cos() - (a * eta).cos();
        match self {
            Identity::Lemma1 => diff(mf) / denom,
            Identity::Lemma2 => (mf * eta).cos() * x.sin() / denom,
            Identity::Lemma31 => diff(2.0) * (4.0 * eta).cos() / denom,
            Identity::Lemma32 => diff(2.0) * (2.0 * eta).cos() / denom,
            Identity::Lemma33 => diff(4.0) * (2.0 * eta).cos() / denom,
            Identity::Lemma34 => diff(2.0) * (2.0 * eta).sin() / denom,
            Identity::Lemma4 => diff(2.0).powi(3) / (denom * denom),
            Identity::Lemma5 => diff(2.0).powi(2) * x.sin() / (denom * denom),
        }
    }

    /// `lim_{x→0} ½(f(θ−x) + f(θ+x))`: the odd `1/x` part cancels on a symmetric grid.
    fn diagonal(self, m: usize, theta: f64) -> f64 {
        let mf = m as f64;
        // (cos aθ − cos aη)·w(η)/(2−2cos) → (a²/2) cos aθ · w(θ) + a sin aθ · w'(θ)
        let product = |a: f64, w: f64, dw: f64| {
            0.5 * a * a * (a * theta).cos() * w + a * (a * theta).sin() * dw
        };
        let (s2, c2) = (2.0 * theta).sin_cos();
        match self {
            Identity::Lemma1 => 0.5 * mf * mf * (mf * theta).cos(),
            Identity::Lemma2 => mf * (mf * theta).sin(),
            Identity::Lemma31 => product(2.0, (4.0 * theta).cos(), -4.0 * (4.0 * theta).sin()),
            Identity::Lemma32 => product(2.0, c2, -2.0 * s2),
            Identity::Lemma33 => product(4.0, c2, -2.0 * s2),
            Identity::Lemma34 => product(2.0, s2, 2.0 * c2),
            Identity::Lemma4 => 24.0 * s2 * s2 * c2,
            Identity::Lemma5 => -8.0 * s2 * c2,
        }
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Identity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Identity::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::UnknownIdentity(s.to_string()))
    }
}

/// `(quadrature, closed form)` for a named identity at `(m, θ)`.
///
/// The average runs over `2N_θ` equispaced `η` nodes covering a full period and
/// passing through `η = θ`, where the symmetrized diagonal limit is used.
pub fn integral_identity(name: &str, m: usize, theta: f64, grid: &Grid) -> Result<(f64, f64)> {
    let id: Identity = name.parse()?;
    if id.takes_m() && m == 0 {
        return Err(Error::InvalidArgument(format!("{id} needs m ≥ 1")));
    }
    let nodes = 2 * grid.n_theta();
    let h = PI / grid.n_theta() as f64;
    let mut sum = id.diagonal(m, theta);
    for k in 1..nodes {
        let value = id.integrand(m, theta, k as f64 * h);
        if !value.is_finite() {
            return Err(Error::NonFinite { node: k });
        }
        sum += value;
    }
    Ok((sum / nodes as f64, id.closed_form(m, theta)))
}

/// Coefficients of `w` in the second-order expansion of the reduced functional at `(2, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FredCoefficients {
    pub bb: f64,
    pub tt: f64,
    pub tb: f64,
    pub b: f64,
    pub t: f64,
}

impl FredCoefficients {
    /// Second-order Taylor polynomial in `(b − 2, t)`.
    pub fn quadratic(&self, b: f64, t: f64) -> f64 {
        let db = b - 2.0;
        self.b * db + self.t * t + 0.5 * self.bb * db * db + self.tb * db * t + 0.5 * self.tt * t * t
    }
}

pub fn fred_coefficients() -> FredCoefficients {
    FredCoefficients {
        bb: 2.0,
        tt: -8.0,
        tb: 0.0,
        b: 0.0,
        t: 0.0,
    }
}

/// Linear-theory guess at fixed `b`: `r = sign·(|b−2|/2)·cos 2θ`, `g = 0`.
pub fn local_branch_predict(b: f64, sign: f64, n_modes: usize) -> Result<SheetState> {
    local_branch_predict_within(b, sign, n_modes, TRUST_RADIUS)
}

pub fn local_branch_predict_within(
    b: f64,
    sign: f64,
    n_modes: usize,
    radius: f64,
) -> Result<SheetState> {
    let offset = (b - 2.0).abs();
    if !(offset <= radius) {
        return Err(Error::OutsideTrustRegion { offset, radius });
    }
    let mut state = SheetState::trivial(b, n_modes.max(1));
    state.r.set_coeff(1, sign.signum() * 0.5 * offset);
    Ok(state)
}

/// Linear-theory guess at fixed `r₁` on the branch `b ≈ 2 + 2·slope_sign·r₁`.
pub fn local_branch_predict_r1(r1: f64, slope_sign: f64, n_modes: usize) -> Result<SheetState> {
    let b = 2.0 + 2.0 * slope_sign.signum() * r1;
    let offset = (b - 2.0).abs();
    if !(offset <= TRUST_RADIUS) {
        return Err(Error::OutsideTrustRegion {
            offset,
            radius: TRUST_RADIUS,
        });
    }
    let mut state = SheetState::trivial(b, n_modes.max(1));
    state.r.set_coeff(1, r1);
    Ok(state)
}
