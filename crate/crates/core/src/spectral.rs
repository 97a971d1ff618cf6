//! Fourier primitives for π-periodic functions on the circle.
//!
//! Every series here carries only even wavenumbers `2n`: a cosine series is
//! `a₀ + Σ aₙ cos(2nθ)` and a sine series is `Σ aₙ sin(2nθ)`. Sampling uses a
//! uniform grid `θ_j = jπ/N_θ`; half-period grids (`j = 1..N_θ`) already cover a
//! full period of such functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cosine,
    Sine,
}

impl Parity {
    #[inline]
    fn trig(self, x: f64) -> f64 {
        match self {
            Parity::Cosine => x.cos(),
            Parity::Sine => x.sin(),
        }
    }
}

/// Truncated series in `cos(2nθ)` or `sin(2nθ)`.
///
/// `coeffs[i]` is the coefficient of mode `n = i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    parity: Parity,
    constant: f64,
    coeffs: Vec<f64>,
}

impl FourierSeries {
    pub fn cosine(constant: f64, coeffs: Vec<f64>) -> Self {
        Self {
            parity: Parity::Cosine,
            constant,
            coeffs,
        }
    }

    pub fn sine(coeffs: Vec<f64>) -> Self {
        Self {
            parity: Parity::Sine,
            constant: 0.0,
            coeffs,
        }
    }

    pub fn zero(parity: Parity, n_modes: usize) -> Self {
        Self {
            parity,
            constant: 0.0,
            coeffs: vec![0.0; n_modes],
        }
    }

    /// Series with the listed `(n, aₙ)` entries and `n_modes` slots.
    pub fn from_modes(parity: Parity, n_modes: usize, modes: &[(usize, f64)]) -> Self {
        let mut s = Self::zero(parity, n_modes);
        for &(n, a) in modes {
            s.set_coeff(n, a);
        }
        s
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficient of mode `n` (`n = 0` is the constant); zero past the truncation.
    pub fn coeff(&self, n: usize) -> f64 {
        if n == 0 {
            self.constant
        } else {
            self.coeffs.get(n - 1).copied().unwrap_or(0.0)
        }
    }

    /// Sets mode `n`, growing the truncation if needed. Sine series ignore `n = 0`.
    pub fn set_coeff(&mut self, n: usize, value: f64) {
        if n == 0 {
            if self.parity == Parity::Cosine {
                self.constant = value;
            }
            return;
        }
        if self.coeffs.len() < n {
            self.coeffs.resize(n, 0.0);
        }
        self.coeffs[n - 1] = value;
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        if self.parity == Parity::Cosine {
            self.constant = constant;
        }
        self
    }

    /// Drops or zero-pads modes so that exactly `n_modes` remain.
    pub fn resized(mut self, n_modes: usize) -> Self {
        self.coeffs.resize(n_modes, 0.0);
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            parity: self.parity,
            constant: self.constant * factor,
            coeffs: self.coeffs.iter().map(|a| a * factor).collect(),
        }
    }

    /// `self + factor·other`; parities must agree.
    pub fn axpy(&self, factor: f64, other: &Self) -> Result<Self> {
        if self.parity != other.parity {
            return Err(Error::ParityMismatch {
                expected: self.parity,
                found: other.parity,
            });
        }
        let n = self.n_modes().max(other.n_modes());
        let coeffs = (1..=n)
            .map(|k| self.coeff(k) + factor * other.coeff(k))
            .collect();
        Ok(Self {
            parity: self.parity,
            constant: self.constant + factor * other.constant,
            coeffs,
        })
    }

    /// Value at an arbitrary angle.
    pub fn eval_at(&self, theta: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .fold(self.constant, |acc, (i, a)| {
                acc + a * self.parity.trig(2.0 * (i + 1) as f64 * theta)
            })
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs
            .iter()
            .fold(self.constant.abs(), |m, a| m.max(a.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Span {
    /// `θ_j = jπ/N_θ`, `j = 1..N_θ`.
    Half,
    /// `θ_j = jπ/N_θ`, `j = 1..2N_θ`.
    Full,
}

/// Uniform collocation grid with spacing `h = π/N_θ`.
///
/// Holds `cos(mπ/N_θ)` and `sin(mπ/N_θ)` for `m = 0..2N_θ` so that every
/// trigonometric factor at grid nodes (and node differences) is a table lookup.
#[derive(Debug, Clone)]
pub struct Grid {
    n_theta: usize,
    span: Span,
    cos_table: Vec<f64>,
    sin_table: Vec<f64>,
}

impl Grid {
    pub fn new(n_theta: usize, span: Span) -> Result<Self> {
        if n_theta == 0 {
            return Err(Error::InvalidArgument("grid needs at least one node".into()));
        }
        let period = 2 * n_theta;
        let (cos_table, sin_table) = (0..period)
            .map(|m| {
                let x = m as f64 * PI / n_theta as f64;
                (x.cos(), x.sin())
            })
            .unzip();
        Ok(Self {
            n_theta,
            span,
            cos_table,
            sin_table,
        })
    }

    pub fn half(n_theta: usize) -> Result<Self> {
        Self::new(n_theta, Span::Half)
    }

    pub fn full(n_theta: usize) -> Result<Self> {
        Self::new(n_theta, Span::Full)
    }

    /// `N_θ`, the number of nodes per half period.
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn span(&self) -> Span {
        self.span
    }

    pub fn len(&self) -> usize {
        match self.span {
            Span::Half => self.n_theta,
            Span::Full => 2 * self.n_theta,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        PI / self.n_theta as f64
    }

    /// Angle of the `i`-th node, `i` counted from zero.
    pub fn node(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Table index of angle `mπ/N_θ` reduced modulo 2π.
    #[inline]
    pub(crate) fn wrap(&self, m: i64) -> usize {
        m.rem_euclid(2 * self.n_theta as i64) as usize
    }

    /// `cos(mπ/N_θ)`.
    #[inline]
    pub fn cos_at(&self, m: i64) -> f64 {
        self.cos_table[self.wrap(m)]
    }

    /// `sin(mπ/N_θ)`.
    #[inline]
    pub fn sin_at(&self, m: i64) -> f64 {
        self.sin_table[self.wrap(m)]
    }

    /// `trig(2n θ_i)` at node `i`.
    #[inline]
    pub fn mode_at(&self, parity: Parity, n: usize, i: usize) -> f64 {
        let m = (2 * n * (i + 1)) as i64;
        match parity {
            Parity::Cosine => self.cos_at(m),
            Parity::Sine => self.sin_at(m),
        }
    }
}

/// Samples `series` at every node of `grid`.
pub fn eval(series: &FourierSeries, grid: &Grid) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            series
                .coeffs
                .iter()
                .enumerate()
                .fold(series.constant, |acc, (k, a)| {
                    acc + a * grid.mode_at(series.parity, k + 1, i)
                })
        })
        .collect()
}

/// Exact θ-derivative of the series.
pub fn differentiate(series: &FourierSeries) -> FourierSeries {
    let coeffs = series
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let w = 2.0 * (i + 1) as f64;
            match series.parity {
                Parity::Cosine => -w * a,
                Parity::Sine => w * a,
            }
        })
        .collect();
    let parity = match series.parity {
        Parity::Cosine => Parity::Sine,
        Parity::Sine => Parity::Cosine,
    };
    FourierSeries {
        parity,
        constant: 0.0,
        coeffs,
    }
}

/// Periodic Hilbert transform `H(cos mθ) = sin mθ`, applied coefficient-wise.
pub fn hilbert(series: &FourierSeries) -> Result<FourierSeries> {
    if series.parity != Parity::Cosine {
        return Err(Error::ParityMismatch {
            expected: Parity::Cosine,
            found: series.parity,
        });
    }
    Ok(FourierSeries::sine(series.coeffs.clone()))
}

/// `(1/π)∫_{-π}^{π} values(θ)·trig(mode·θ) dθ` by the periodic trapezoid rule.
///
/// `mode` is the wavenumber (`2n` for the `n`-th coefficient) and must be even.
pub fn project_mode(values: &[f64], grid: &Grid, mode: usize, parity: Parity) -> Result<f64> {
    if mode % 2 != 0 {
        return Err(Error::OddMode(mode));
    }
    check_len(values, grid)?;
    let n = mode / 2;
    let sum: f64 = values
        .iter()
        .enumerate()
        .map(|(i, v)| v * grid.mode_at(parity, n, i))
        .sum();
    Ok(2.0 * sum / values.len() as f64)
}

/// Mean value `(1/2π)∫ f dθ` by the periodic trapezoid rule (equal weights).
pub fn trapezoid_integral(values: &[f64], grid: &Grid) -> Result<f64> {
    check_len(values, grid)?;
    if let Some(node) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn check_len(values: &[f64], grid: &Grid) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    Ok(())
}
