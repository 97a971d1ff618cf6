//! Natural-parameter continuation of solution branches.
//!
//! Each point is solved with the previous converged state as initial guess;
//! the first point is seeded from linear theory or from a stored state.

use crate::error::{Error, Result};
use crate::functional::{assemble_residual, project_residual, SheetState};
use crate::oracles::{local_branch_predict, local_branch_predict_r1};
use crate::solver::{solve_sheet, Convergence, Fixed, ResidualKind, SheetSolveOptions};
use crate::spectral::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameter {
    /// `b` prescribed, `r₁` solved for.
    B,
    /// `r₁` prescribed, `b` solved for.
    R1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Seed {
    /// Linear theory. For `Parameter::B` the sign is that of `r₁`; for
    /// `Parameter::R1` it is the sign of the slope `db/dr₁ = ±2`.
    Linear { sign: f64 },
    /// Explicit initial guess for the first point.
    State(SheetState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationConfig {
    pub parameter: Parameter,
    /// Parameter value of point `first_index`.
    pub start: f64,
    pub step: f64,
    pub n_steps: usize,
    /// Step index of the first point; nonzero when resuming a stored branch.
    pub first_index: usize,
    pub seed: Seed,
    pub n_modes: usize,
    pub n_theta: usize,
    pub solver: SheetSolveOptions,
}

impl ContinuationConfig {
    pub fn new(parameter: Parameter, start: f64, step: f64, n_steps: usize, seed: Seed) -> Self {
        Self {
            parameter,
            start,
            step,
            n_steps,
            first_index: 0,
            seed,
            n_modes: 160,
            n_theta: 1024,
            solver: SheetSolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step != 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step {} must be finite and nonzero", self.step)));
        }
        if self.n_modes < 1 || self.n_theta < 4 * self.n_modes {
            return Err(Error::InvalidArgument(format!(
                "need N ≥ 1 and N_θ ≥ 4N (N = {}, N_θ = {})",
                self.n_modes, self.n_theta
            )));
        }
        Ok(())
    }

    /// Parameter value at step index `index`.
    pub fn parameter_at(&self, index: usize) -> f64 {
        self.start + (index - self.first_index) as f64 * self.step
    }

    fn fixed(&self, value: f64) -> Fixed {
        match self.parameter {
            Parameter::B => Fixed::B(value),
            Parameter::R1 => Fixed::R1(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub step_index: usize,
    pub r1: f64,
    pub b: f64,
    pub state: SheetState,
    /// Node residual sup norm, recomputed after the solve. Bounded by the
    /// solver tolerance unless the solve used [`Convergence::Solver`].
    pub residual_sup: f64,
    pub residual_l2: f64,
    pub iterations: usize,
    pub lambda_final: f64,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// Why the branch ended early, if it did.
    pub truncated: Option<String>,
}

pub fn continue_branch(config: &ContinuationConfig) -> Result<Branch> {
    continue_branch_with(config, |_| Ok(()))
}

/// As [`continue_branch`], handing every accepted point to `on_point` as soon as it is solved.
pub fn continue_branch_with(
    config: &ContinuationConfig,
    mut on_point: impl FnMut(&BranchPoint) -> Result<()>,
) -> Result<Branch> {
    config.validate()?;
    let grid = Grid::half(config.n_theta)?;
    let mut guess = match &config.seed {
        Seed::State(s) => s.resized(config.n_modes),
        Seed::Linear { sign } => match config.parameter {
            Parameter::B => local_branch_predict(config.start, *sign, config.n_modes)?,
            Parameter::R1 => local_branch_predict_r1(config.start, *sign, config.n_modes)?,
        },
    };
    let mut points = Vec::with_capacity(config.n_steps);
    for k in 0..config.n_steps {
        let index = config.first_index + k;
        let value = config.parameter_at(index);
        let failure = match solve_sheet(config.fixed(value), &guess, &grid, &config.solver) {
            Ok(report) if report.converged => {
                let field = assemble_residual(&report.state, &grid)?;
                let residual_sup = field.sup_norm;
                let measured = match (config.solver.convergence, config.solver.residual) {
                    (Convergence::Solver, ResidualKind::Coefficients) => {
                        project_residual(&field, &grid, config.n_modes).sup_norm()
                    }
                    _ => residual_sup,
                };
                if measured <= config.solver.lm.tol {
                    let point = BranchPoint {
                        step_index: index,
                        r1: report.state.r1(),
                        b: report.state.b,
                        state: report.state,
                        residual_sup,
                        residual_l2: field.l2_norm,
                        iterations: report.iterations,
                        lambda_final: report.lambda_final,
                    };
                    on_point(&point)?;
                    guess = point.state.clone();
                    points.push(point);
                    continue;
                }
                format!("re-evaluated residual {measured:e} exceeds tolerance")
            }
            Ok(report) => format!(
                "solver stopped ({:?}) with residual {:e} after {} iterations",
                report.termination, report.residual_sup, report.iterations
            ),
            Err(e) => e.to_string(),
        };
        let reason = format!("at parameter {value}: {failure}");
        if points.is_empty() {
            return Err(Error::FirstStepFailed { reason });
        }
        return Ok(Branch {
            points,
            truncated: Some(reason),
        });
    }
    Ok(Branch {
        points,
        truncated: None,
    })
}

/// Largest coefficient change between two states, `b` included.
pub fn coefficient_jump(a: &SheetState, b: &SheetState) -> f64 {
    let n = a.n_modes().max(b.n_modes());
    let (a, b) = (a.resized(n), b.resized(n));
    let mut jump = (a.b - b.b).abs();
    for k in 1..=n {
        jump = jump
            .max((a.g.coeff(k) - b.g.coeff(k)).abs())
            .max((a.r.coeff(k) - b.r.coeff(k)).abs());
    }
    jump
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fold {
    pub r1: f64,
    pub b: f64,
}

/// Turning point of `b(r₁)`: vertex of the parabola through the extremal point and its neighbours.
///
/// Returns `None` when `b` is monotone along the branch.
pub fn detect_fold(points: &[(f64, f64)]) -> Result<Option<Fold>> {
    if points.len() < 3 {
        return Err(Error::BranchTooShort {
            found: points.len(),
            needed: 3,
        });
    }
    for i in 1..points.len() - 1 {
        let (x0, y0) = points[i - 1];
        let (x1, y1) = points[i];
        let (x2, y2) = points[i + 1];
        if (y1 - y0) * (y2 - y1) >= 0.0 {
            continue;
        }
        // Newton form of the interpolating parabola
        let d01 = (y1 - y0) / (x1 - x0);
        let d12 = (y2 - y1) / (x2 - x1);
        let a = (d12 - d01) / (x2 - x0);
        let slope0 = d01 - a * (x0 + x1);
        let r1 = -slope0 / (2.0 * a);
        let b = y0 + d01 * (r1 - x0) + a * (r1 - x0) * (r1 - x1);
        return Ok(Some(Fold { r1, b }));
    }
    Ok(None)
}

pub fn detect_fold_on(branch: &[BranchPoint]) -> Result<Option<Fold>> {
    detect_fold(&branch.iter().map(|p| (p.r1, p.b)).collect::<Vec<_>>())
}

/// Radius around `r₁ = 0` used by [`branch_slope`].
pub const SLOPE_WINDOW: f64 = 0.05;

/// Least-squares slope `db/dr₁` over points with `0 < |r₁| ≤ 0.05`.
pub fn branch_slope(points: &[(f64, f64)]) -> Result<f64> {
    let near: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(r1, _)| r1.abs() <= SLOPE_WINDOW && *r1 != 0.0)
        .collect();
    if near.len() < 5 {
        return Err(Error::BranchTooShort {
            found: near.len(),
            needed: 5,
        });
    }
    let n = near.len() as f64;
    let mx = near.iter().map(|p| p.0).sum::<f64>() / n;
    let my = near.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = near.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = near.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("r₁ is constant; slope undefined".into()));
    }
    Ok(sxy / sxx)
}

pub fn branch_slope_on(branch: &[BranchPoint]) -> Result<f64> {
    branch_slope(&branch.iter().map(|p| (p.r1, p.b)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_fold() {
        let pts: Vec<_> = (0..60)
            .map(|k| {
                let r1 = 0.01 * k as f64 + 0.003;
                (r1, (r1 - 0.3).powi(2) + 1.68)
            })
            .collect();
        let fold = detect_fold(&pts).unwrap().unwrap();
        assert!((fold.r1 - 0.3).abs() < 1e-12);
        assert!((fold.b - 1.68).abs() < 1e-12);
    }

    #[test]
    fn monotone_branch_has_no_fold() {
        let pts: Vec<_> = (1..=10).map(|k| (0.005 * k as f64, 2.0 + 0.01 * k as f64)).collect();
        assert_eq!(detect_fold(&pts).unwrap(), None);
        assert!(matches!(detect_fold(&pts[..2]), Err(Error::BranchTooShort { .. })));
    }

    #[test]
    fn slope_of_lines() {
        let pts: Vec<_> = (-10..=10).map(|k| (0.005 * k as f64, 2.0 - 2.0 * 0.005 * k as f64)).collect();
        assert!((branch_slope(&pts).unwrap() + 2.0).abs() < 1e-12);
        let flat: Vec<_> = (0..10).map(|k| (0.0, 2.0 + k as f64)).collect();
        assert!(branch_slope(&flat).is_err());
        let few: Vec<_> = (1..=4).map(|k| (0.01 * k as f64, 2.0)).collect();
        assert!(matches!(branch_slope(&few), Err(Error::BranchTooShort { found: 4, .. })));
    }

    fn small(parameter: Parameter, start: f64, step: f64, n: usize, sign: f64) -> ContinuationConfig {
        ContinuationConfig {
            n_modes: 16,
            n_theta: 64,
            ..ContinuationConfig::new(parameter, start, step, n, Seed::Linear { sign })
        }
    }

    #[test]
    fn b_continuation_near_bifurcation() {
        let branch = continue_branch(&small(Parameter::B, 2.1, 0.001, 10, 1.0)).unwrap();
        assert!(branch.truncated.is_none());
        assert_eq!(branch.points.len(), 10);
        for w in branch.points.windows(2) {
            assert!(w[1].r1 > w[0].r1);
            assert!(w[1].b > w[0].b);
            assert_eq!(w[1].step_index, w[0].step_index + 1);
            assert!(coefficient_jump(&w[0].state, &w[1].state) <= 50.0 * 0.001);
        }
        for p in &branch.points {
            assert!(p.residual_sup <= 1e-10);
        }
        assert!((branch.points[0].r1 - 0.05).abs() < 0.01);
    }

    #[test]
    fn r1_continuation_slopes() {
        for sign in [1.0, -1.0] {
            let right = continue_branch(&small(Parameter::R1, 0.005, 0.005, 10, sign)).unwrap();
            let left = continue_branch(&small(Parameter::R1, -0.005, -0.005, 10, sign)).unwrap();
            let mut points = left.points;
            points.reverse();
            points.extend(right.points);
            let slope = branch_slope_on(&points).unwrap();
            assert!((slope - 2.0 * sign).abs() < 0.1, "slope {slope}");
            assert_eq!(detect_fold_on(&points).unwrap(), None);
        }
    }

    #[test]
    fn resume_reproduces_the_tail() {
        let config = small(Parameter::R1, 0.01, 0.01, 6, 1.0);
        let full = continue_branch(&config).unwrap().points;
        let mid = &full[2];
        let resumed = continue_branch(&ContinuationConfig {
            start: mid.r1 + config.step,
            first_index: mid.step_index + 1,
            n_steps: 3,
            seed: Seed::State(mid.state.clone()),
            ..config.clone()
        })
        .unwrap()
        .points;
        for (a, b) in full[3..].iter().zip(&resumed) {
            assert_eq!(a.step_index, b.step_index);
            assert!(coefficient_jump(&a.state, &b.state) <= 1e-9);
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(continue_branch(&small(Parameter::B, 2.1, 0.0, 3, 1.0)).is_err());
        let mut c = small(Parameter::B, 2.1, 0.001, 3, 1.0);
        c.n_theta = 32;
        assert!(c.validate().is_err());
        assert!(matches!(
            continue_branch(&small(Parameter::B, 2.6, 0.001, 3, 1.0)),
            Err(Error::OutsideTrustRegion { .. })
        ));
    }

    #[test]
    fn first_step_failure_is_reported() {
        let mut c = small(Parameter::R1, 0.05, 0.01, 3, 1.0);
        c.solver.lm.max_iter = 0;
        assert!(matches!(continue_branch(&c), Err(Error::FirstStepFailed { .. })));
    }
}
