//! Linearization of `F` at the circle and Jacobians of the discrete residual.
//!
//! At `(b, 0, 0)` the derivative acts diagonally on Fourier modes: the pair
//! `(aₙ, bₙ)` of `cos(2nθ)` coefficients of `(g, r)` maps to the `sin(2nθ)`
//! coefficient of `F₁` and the `cos(2nθ)` coefficient of `F₂` through
//!
//! ```text
//! Mₙ = [ −1/2        −2n(Ω − b/2) ]
//!      [ b/2 − Ω      b²(n − 1)   ]
//! ```

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::functional::{
    node_jacobian, projected_residual, Coefficient, ResidualMode, SheetState,
};
use crate::spectral::{FourierSeries, Grid, Parity};

/// Singular values below this flag a mode as part of the kernel.
pub const KERNEL_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMatrix {
    pub n: usize,
    pub b: f64,
    pub omega: f64,
    pub entries: Matrix2<f64>,
}

impl ModeMatrix {
    pub fn apply(&self, a: f64, b: f64) -> (f64, f64) {
        let v = self.entries * nalgebra::Vector2::new(a, b);
        (v[0], v[1])
    }

    pub fn determinant(&self) -> f64 {
        self.entries.determinant()
    }

    pub fn min_singular_value(&self) -> f64 {
        self.entries.singular_values().min()
    }
}

pub fn mode_matrix(b: f64, omega: f64, n: usize) -> Result<ModeMatrix> {
    if n < 1 {
        return Err(Error::InvalidArgument("mode index must be at least 1".into()));
    }
    let nf = n as f64;
    let entries = Matrix2::new(
        -0.5,
        -2.0 * nf * (omega - 0.5 * b),
        0.5 * b - omega,
        b * b * (nf - 1.0),
    );
    Ok(ModeMatrix {
        n,
        b,
        omega,
        entries,
    })
}

/// `DF(b,0,0)[g, r]` as a (sine, cosine) pair of series.
pub fn apply_linearization(
    b: f64,
    omega: f64,
    g: &FourierSeries,
    r: &FourierSeries,
) -> Result<(FourierSeries, FourierSeries)> {
    for s in [g, r] {
        if s.parity() != Parity::Cosine {
            return Err(Error::ParityMismatch {
                expected: Parity::Cosine,
                found: s.parity(),
            });
        }
        if s.constant() != 0.0 {
            return Err(Error::InvalidArgument(
                "linearization acts on mean-free perturbations".into(),
            ));
        }
    }
    let n_modes = g.n_modes().max(r.n_modes());
    let mut f1 = Vec::with_capacity(n_modes);
    let mut f2 = Vec::with_capacity(n_modes);
    for n in 1..=n_modes {
        let (x, y) = mode_matrix(b, omega, n)?.apply(g.coeff(n), r.coeff(n));
        f1.push(x);
        f2.push(y);
    }
    Ok((FourierSeries::sine(f1), FourierSeries::cosine(0.0, f2)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelRow {
    pub n: usize,
    pub min_singular_value: f64,
    pub flagged: bool,
}

/// Smallest singular value of every `Mₙ`, `n = 1..=n_max`.
pub fn kernel_report(b: f64, omega: f64, n_max: usize) -> Result<Vec<KernelRow>> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    (1..=n_max)
        .map(|n| {
            let sigma = mode_matrix(b, omega, n)?.min_singular_value();
            Ok(KernelRow {
                n,
                min_singular_value: sigma,
                flagged: sigma < KERNEL_THRESHOLD,
            })
        })
        .collect()
}

/// Jacobian of the Fourier-projected residual with labelled rows and columns.
#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    pub matrix: DMatrix<f64>,
    pub rows: Vec<ResidualMode>,
    pub cols: Vec<Coefficient>,
}

impl JacobianMatrix {
    pub fn entry(&self, row: ResidualMode, col: Coefficient) -> Option<f64> {
        let i = self.rows.iter().position(|r| *r == row)?;
        let j = self.cols.iter().position(|c| *c == col)?;
        Some(self.matrix[(i, j)])
    }

    /// The 2×2 block acting on `(γₙ, rₙ)` and producing `(F₁ sin, F₂ cos)` of mode `n`.
    pub fn block(&self, n: usize) -> Option<Matrix2<f64>> {
        let rows = [ResidualMode::F1Sine(n), ResidualMode::F2Cosine(n)];
        let cols = [Coefficient::Gamma(n), Coefficient::Radius(n)];
        let mut m = Matrix2::zeros();
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in cols.iter().enumerate() {
                m[(i, j)] = self.entry(*r, *c)?;
            }
        }
        Some(m)
    }
}

/// Residual rows `F₁ sin(2nθ)` then `F₂ cos(2nθ)` for `n = 1..=n_modes`.
pub fn residual_rows(n_modes: usize) -> Vec<ResidualMode> {
    (1..=n_modes)
        .map(ResidualMode::F1Sine)
        .chain((1..=n_modes).map(ResidualMode::F2Cosine))
        .collect()
}

fn truncation(state: &SheetState, unknowns: &[Coefficient]) -> usize {
    unknowns
        .iter()
        .map(|c| c.mode())
        .max()
        .unwrap_or(0)
        .max(state.n_modes())
}

/// Central-difference Jacobian of the projected residual.
///
/// Unknown `xᵢ` is stepped by `h·max(1, |xᵢ|)`; columns follow `unknowns`.
pub fn fd_jacobian(
    state: &SheetState,
    grid: &Grid,
    unknowns: &[Coefficient],
    h: f64,
) -> Result<JacobianMatrix> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be positive")));
    }
    let n_modes = truncation(state, unknowns);
    let base = state.resized(n_modes);
    let rows = residual_rows(n_modes);
    let mut matrix = DMatrix::zeros(rows.len(), unknowns.len());
    for (col, &c) in unknowns.iter().enumerate() {
        let x = base.coefficient(c);
        let step = h * x.abs().max(1.0);
        let eval = |value: f64| -> Result<Vec<f64>> {
            let mut s = base.clone();
            s.set_coefficient(c, value);
            projected_residual(&s, grid, n_modes)
                .map(|p| p.to_vec())
                .map_err(|e| Error::InadmissiblePerturbation {
                    unknown: c.to_string(),
                    source: Box::new(e),
                })
        };
        let plus = eval(x + step)?;
        let minus = eval(x - step)?;
        for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
            matrix[(i, col)] = (p - m) / (2.0 * step);
        }
    }
    Ok(JacobianMatrix {
        matrix,
        rows,
        cols: unknowns.to_vec(),
    })
}

/// Exact Jacobian of the projected residual (chain rule through the discrete sums).
pub fn exact_jacobian(
    state: &SheetState,
    grid: &Grid,
    unknowns: &[Coefficient],
) -> Result<JacobianMatrix> {
    let n_modes = truncation(state, unknowns);
    let base = state.resized(n_modes);
    let nodes = node_jacobian(&base, grid)?;
    let full = nodes.project(grid, n_modes);
    let mut matrix = DMatrix::zeros(full.nrows(), unknowns.len());
    for (col, c) in unknowns.iter().enumerate() {
        let src = nodes
            .column_index(*c)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown {c} is outside the truncation")))?;
        matrix.set_column(col, &full.column(src));
    }
    Ok(JacobianMatrix {
        matrix,
        rows: residual_rows(n_modes),
        cols: unknowns.to_vec(),
    })
}

/// `(γₙ, rₙ)` for `n = 1..=n_modes`, in that interleaved order.
pub fn paired_unknowns(n_modes: usize) -> Vec<Coefficient> {
    (1..=n_modes)
        .flat_map(|n| [Coefficient::Gamma(n), Coefficient::Radius(n)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_matrix(m: &Matrix2<f64>, expected: [[f64; 2]; 2], tol: f64) {
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (m[(i, j)] - expected[i][j]).abs() <= tol,
                    "({i},{j}): {} vs {}",
                    m[(i, j)],
                    expected[i][j]
                );
            }
        }
    }

    #[test]
    fn mode_matrix_examples() {
        assert_matrix(&mode_matrix(2.0, 1.0, 1).unwrap().entries, [[-0.5, 0.0], [0.0, 0.0]], 0.0);
        assert_matrix(&mode_matrix(2.0, 1.0, 3).unwrap().entries, [[-0.5, 0.0], [0.0, 8.0]], 0.0);
        assert_matrix(&mode_matrix(3.0, 1.0, 2).unwrap().entries, [[-0.5, 2.0], [0.5, 9.0]], 0.0);
        assert!(mode_matrix(2.0, 1.0, 0).is_err());
    }

    #[test]
    fn mode_matrix_at_three_matches_finite_differences() {
        let grid = Grid::half(64).unwrap();
        let jac = fd_jacobian(&SheetState::trivial(3.0, 2), &grid, &paired_unknowns(2), 1e-6).unwrap();
        assert_matrix(&jac.block(2).unwrap(), [[-0.5, 2.0], [0.5, 9.0]], 1e-6);
    }

    #[test]
    fn apply_linearization_examples() {
        let c = |modes: &[(usize, f64)]| FourierSeries::from_modes(Parity::Cosine, 2, modes);
        let (f1, f2) = apply_linearization(2.0, 1.0, &c(&[]), &c(&[(1, 1.0)])).unwrap();
        assert_eq!(f1.max_abs_coeff(), 0.0);
        assert_eq!(f2.max_abs_coeff(), 0.0);

        let (f1, f2) = apply_linearization(2.0, 1.0, &c(&[(1, 1.0)]), &c(&[])).unwrap();
        assert_eq!(f1.coeff(1), -0.5);
        assert_eq!(f2.max_abs_coeff(), 0.0);

        let (f1, f2) = apply_linearization(2.0, 1.0, &c(&[]), &c(&[(2, 1.0)])).unwrap();
        assert_eq!(f1.max_abs_coeff(), 0.0);
        assert_eq!(f2.coeff(2), 4.0);

        let sine = FourierSeries::sine(vec![1.0]);
        assert!(apply_linearization(2.0, 1.0, &sine, &c(&[])).is_err());
    }

    #[test]
    fn kernel_report_examples() {
        let flagged = |b: f64, n: usize| -> Vec<usize> {
            kernel_report(b, 1.0, n)
                .unwrap()
                .into_iter()
                .filter(|r| r.flagged)
                .map(|r| r.n)
                .collect()
        };
        assert_eq!(flagged(2.0, 4), vec![1]);
        assert!(flagged(2.5, 4).is_empty());
        let single = kernel_report(2.0, 1.0, 1).unwrap();
        assert_eq!(single[0].min_singular_value, 0.0);
    }

    #[test]
    fn kernel_direction_is_radial_cos2() {
        let m = mode_matrix(2.0, 1.0, 1).unwrap();
        assert_eq!(m.determinant(), 0.0);
        assert_eq!(m.apply(0.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn fd_jacobian_at_circle_recovers_mode_matrices() {
        let grid = Grid::half(64).unwrap();
        let jac = fd_jacobian(&SheetState::trivial(2.0, 2), &grid, &paired_unknowns(2), 1e-6).unwrap();
        assert_eq!(jac.matrix.shape(), (4, 4));
        assert_matrix(&jac.block(1).unwrap(), [[-0.5, 0.0], [0.0, 0.0]], 1e-6);
        assert_matrix(&jac.block(2).unwrap(), [[-0.5, 0.0], [0.0, 4.0]], 1e-6);
        // no coupling between modes at the circle
        for (i, r) in jac.rows.iter().enumerate() {
            for (j, c) in jac.cols.iter().enumerate() {
                if r.mode() != c.mode() {
                    assert!(jac.matrix[(i, j)].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn exact_and_fd_jacobians_agree_off_the_circle() {
        let grid = Grid::half(64).unwrap();
        let mut s = SheetState::trivial(1.9, 4);
        s.set_coefficient(Coefficient::Radius(1), 0.15);
        s.set_coefficient(Coefficient::Radius(2), -0.03);
        s.set_coefficient(Coefficient::Gamma(1), 0.04);
        let unknowns: Vec<_> = std::iter::once(Coefficient::Gamma(0))
            .chain(paired_unknowns(4))
            .collect();
        let fd = fd_jacobian(&s, &grid, &unknowns, 1e-6).unwrap();
        let exact = exact_jacobian(&s, &grid, &unknowns).unwrap();
        let diff = (&fd.matrix - &exact.matrix).abs().max();
        assert!(diff < 1e-7, "max difference {diff:e}");
    }

    #[test]
    fn linearization_is_linear() {
        let g1 = FourierSeries::cosine(0.0, vec![0.3, -1.2, 0.7]);
        let r1 = FourierSeries::cosine(0.0, vec![-0.4, 0.1, 2.0]);
        let g2 = FourierSeries::cosine(0.0, vec![1.1, 0.5, -0.2]);
        let r2 = FourierSeries::cosine(0.0, vec![0.9, -0.6, 0.3]);
        let (a1, a2) = apply_linearization(2.7, 1.0, &g1, &r1).unwrap();
        let (b1, b2) = apply_linearization(2.7, 1.0, &g2, &r2).unwrap();
        let g = g1.axpy(-3.0, &g2).unwrap();
        let r = r1.axpy(-3.0, &r2).unwrap();
        let (c1, c2) = apply_linearization(2.7, 1.0, &g, &r).unwrap();
        for n in 1..=3 {
            assert!((c1.coeff(n) - (a1.coeff(n) - 3.0 * b1.coeff(n))).abs() < 1e-14);
            assert!((c2.coeff(n) - (a2.coeff(n) - 3.0 * b2.coeff(n))).abs() < 1e-14);
        }
    }
}
