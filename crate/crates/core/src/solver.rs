//! Levenberg–Marquardt for square or overdetermined nonlinear systems, and the
//! sheet-specific wrapper that flattens a [`SheetState`] into unknowns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::functional::{assemble_residual, node_jacobian, project_residual, Coefficient, SheetState};
use crate::linearization::fd_jacobian;
use crate::spectral::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    /// Convergence threshold on the problem's sup measure.
    pub tol: f64,
    pub max_iter: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Damping beyond this ends the solve without convergence.
    pub lambda_max: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_max: 1e16,
        }
    }
}

/// Residual value together with the norm used to decide convergence.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub f: DVector<f64>,
    pub sup: f64,
    pub l2: f64,
}

impl Evaluation {
    /// Sup and RMS of `f` itself.
    pub fn from_vector(f: DVector<f64>) -> Self {
        let sup = f.amax();
        let l2 = if f.is_empty() { 0.0 } else { f.norm() / (f.len() as f64).sqrt() };
        Self { f, sup, l2 }
    }
}

pub trait LeastSquaresProblem {
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation>;

    /// Central differences with step `1e-6·max(1, |xᵢ|)` unless overridden.
    fn jacobian(&self, x: &DVector<f64>, f: &Evaluation) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(f.f.len(), x.len());
        for i in 0..x.len() {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let col = (self.evaluate(&xp)?.f - self.evaluate(&xm)?.f) / (2.0 * h);
            jac.set_column(i, &col);
        }
        Ok(jac)
    }
}

/// A residual closure with finite-difference Jacobian.
pub struct FnProblem<F>(pub F);

impl<F> LeastSquaresProblem for FnProblem<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
        (self.0)(x).map(Evaluation::from_vector)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    Stagnated,
    DampingCap,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residual_sup: f64,
    pub residual_l2: f64,
    pub iterations: usize,
    pub lambda_final: f64,
    pub converged: bool,
    pub termination: Termination,
    /// `‖f‖₂` at the initial point and after every accepted step.
    pub history: Vec<f64>,
}

/// Classic Marquardt iteration.
///
/// Steps solve `(JᵀJ + λ diag(JᵀJ)) s = −Jᵀf`. A trial point is accepted when
/// `‖f‖₂` decreases; a trial point where the residual cannot be evaluated
/// (for example a self-intersecting curve) counts as a rejection.
pub fn solve<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: DVector<f64>,
    opts: &LmOptions,
) -> Result<LmReport> {
    let mut x = x0;
    let mut current = problem.evaluate(&x)?;
    let mut norm = current.f.norm();
    let mut lambda = opts.lambda0;
    let mut history = vec![norm];
    let mut iterations = 0;

    let report = |x: DVector<f64>, e: &Evaluation, iterations, lambda, termination, history| LmReport {
        x,
        residual_sup: e.sup,
        residual_l2: e.l2,
        iterations,
        lambda_final: lambda,
        converged: termination == Termination::Converged,
        termination,
        history,
    };

    if current.sup <= opts.tol {
        return Ok(report(x, &current, 0, lambda, Termination::Converged, history));
    }

    while iterations < opts.max_iter {
        iterations += 1;
        let jac = problem.jacobian(&x, &current)?;
        let jtj = jac.tr_mul(&jac);
        let rhs = -jac.tr_mul(&current.f);
        let floor = jtj.diagonal().amax().max(1.0) * 1e-15;
        let diag = jtj.diagonal().map(|d| d.max(floor));

        loop {
            let mut normal = jtj.clone();
            for i in 0..normal.nrows() {
                normal[(i, i)] += lambda * diag[i];
            }
            let step = normal.cholesky().map(|c| c.solve(&rhs));
            let Some(step) = step else {
                lambda *= opts.lambda_up;
                if lambda > opts.lambda_max {
                    return Ok(report(x, &current, iterations, lambda, Termination::DampingCap, history));
                }
                continue;
            };
            if step.norm() <= 1e-14 * (1.0 + x.norm()) {
                return Ok(report(x, &current, iterations, lambda, Termination::Stagnated, history));
            }
            let trial = &x + &step;
            match problem.evaluate(&trial) {
                Ok(e) if e.f.norm() < norm => {
                    x = trial;
                    norm = e.f.norm();
                    current = e;
                    lambda /= opts.lambda_down;
                    break;
                }
                _ => {
                    lambda *= opts.lambda_up;
                    if lambda > opts.lambda_max {
                        return Ok(report(x, &current, iterations, lambda, Termination::DampingCap, history));
                    }
                }
            }
        }
        history.push(norm);
        if current.sup <= opts.tol {
            return Ok(report(x, &current, iterations, lambda, Termination::Converged, history));
        }
    }
    Ok(report(x, &current, iterations, lambda, Termination::MaxIterations, history))
}

/// Which parameter is held fixed during a sheet solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fixed {
    /// `r₁` fixed; `b = γ₀` is an unknown.
    R1(f64),
    /// `b` fixed; `r₁` is an unknown.
    B(f64),
}

/// Flattening of sheet coefficients into an unknown vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownLayout {
    pub fixed: Fixed,
    pub n_modes: usize,
}

impl UnknownLayout {
    pub fn new(fixed: Fixed, n_modes: usize) -> Result<Self> {
        if n_modes < 1 {
            return Err(Error::InvalidArgument("truncation N must be at least 1".into()));
        }
        Ok(Self { fixed, n_modes })
    }

    /// `γ₀ or γ₁, …, γ_N`, then the free `r` coefficients in increasing mode.
    pub fn unknowns(&self) -> Vec<Coefficient> {
        let n = self.n_modes;
        match self.fixed {
            Fixed::R1(_) => (0..=n)
                .map(Coefficient::Gamma)
                .chain((2..=n).map(Coefficient::Radius))
                .collect(),
            Fixed::B(_) => (1..=n)
                .map(Coefficient::Gamma)
                .chain((1..=n).map(Coefficient::Radius))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.n_modes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The guess resized to `N` with the fixed value imposed.
    pub fn prepare(&self, guess: &SheetState) -> SheetState {
        let mut s = guess.resized(self.n_modes);
        match self.fixed {
            Fixed::R1(r1) => s.set_coefficient(Coefficient::Radius(1), r1),
            Fixed::B(b) => s.b = b,
        }
        s
    }

    pub fn flatten(&self, state: &SheetState) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.unknowns().into_iter().map(|c| state.coefficient(c)),
        )
    }

    pub fn unflatten(&self, template: &SheetState, x: &DVector<f64>) -> SheetState {
        let mut s = template.clone();
        for (c, v) in self.unknowns().into_iter().zip(x.iter()) {
            s.set_coefficient(c, *v);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualKind {
    /// `F₁` sine and `F₂` cosine coefficients `n = 1..N`; a square system.
    #[default]
    Coefficients,
    /// Raw node values of `(F₁, F₂)`; overdetermined least squares.
    Nodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianKind {
    /// Chain rule through the discrete sums.
    #[default]
    Exact,
    /// Central differences of the projected residual.
    FiniteDifference,
}

/// Quantity compared against `LmOptions::tol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convergence {
    /// Sup norm of the sampled node residual.
    #[default]
    Nodes,
    /// Sup norm of the vector the solver minimizes. With coefficient-valued
    /// residuals this solves the truncated system even where `N` modes cannot
    /// resolve the solution; the node residual then measures truncation.
    Solver,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SheetSolveOptions {
    pub lm: LmOptions,
    pub residual: ResidualKind,
    pub jacobian: JacobianKind,
    pub convergence: Convergence,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub state: SheetState,
    /// Sup norm of the node residual at the returned state.
    pub residual_sup: f64,
    pub residual_l2: f64,
    /// Sup norm of the solver's residual vector.
    pub solver_residual_sup: f64,
    pub iterations: usize,
    pub lambda_final: f64,
    pub converged: bool,
    pub termination: Termination,
    pub history: Vec<f64>,
}

struct SheetProblem<'a> {
    layout: UnknownLayout,
    template: SheetState,
    grid: &'a Grid,
    opts: SheetSolveOptions,
}

impl LeastSquaresProblem for SheetProblem<'_> {
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
        let state = self.layout.unflatten(&self.template, x);
        let field = assemble_residual(&state, self.grid)?;
        let f = match self.opts.residual {
            ResidualKind::Coefficients => DVector::from_vec(
                project_residual(&field, self.grid, self.layout.n_modes).to_vec(),
            ),
            ResidualKind::Nodes => {
                DVector::from_iterator(2 * field.f1.len(), field.f1.iter().chain(&field.f2).copied())
            }
        };
        let sup = match self.opts.convergence {
            Convergence::Nodes => field.sup_norm,
            Convergence::Solver => f.amax(),
        };
        Ok(Evaluation {
            f,
            sup,
            l2: field.l2_norm,
        })
    }

    fn jacobian(&self, x: &DVector<f64>, _f: &Evaluation) -> Result<DMatrix<f64>> {
        let state = self.layout.unflatten(&self.template, x);
        let unknowns = self.layout.unknowns();
        match (self.opts.jacobian, self.opts.residual) {
            (JacobianKind::FiniteDifference, ResidualKind::Coefficients) => {
                Ok(fd_jacobian(&state, self.grid, &unknowns, 1e-6)?.matrix)
            }
            (JacobianKind::FiniteDifference, ResidualKind::Nodes) => {
                let mut jac = DMatrix::zeros(2 * self.grid.len(), x.len());
                for (i, c) in unknowns.iter().enumerate() {
                    let h = 1e-6 * x[i].abs().max(1.0);
                    let eval = |value: f64| -> Result<DVector<f64>> {
                        let mut xs = x.clone();
                        xs[i] = value;
                        self.evaluate(&xs).map(|e| e.f).map_err(|e| Error::InadmissiblePerturbation {
                            unknown: c.to_string(),
                            source: Box::new(e),
                        })
                    };
                    let col = (eval(x[i] + h)? - eval(x[i] - h)?) / (2.0 * h);
                    jac.set_column(i, &col);
                }
                Ok(jac)
            }
            (JacobianKind::Exact, kind) => {
                let nodes = node_jacobian(&state, self.grid)?;
                let full = match kind {
                    ResidualKind::Coefficients => nodes.project(self.grid, self.layout.n_modes),
                    ResidualKind::Nodes => nodes.nodes(),
                };
                let cols: Vec<usize> = unknowns
                    .iter()
                    .map(|c| nodes.column_index(*c).expect("layout within truncation"))
                    .collect();
                Ok(full.select_columns(&cols))
            }
        }
    }
}

/// Solve `F = 0` for the sheet with one parameter held fixed.
///
/// The truncation `N` is taken from the guess.
pub fn solve_sheet(
    fixed: Fixed,
    guess: &SheetState,
    grid: &Grid,
    opts: &SheetSolveOptions,
) -> Result<SolveReport> {
    let layout = UnknownLayout::new(fixed, guess.n_modes())?;
    let template = layout.prepare(guess);
    template.check_class()?;
    let problem = SheetProblem {
        layout: layout.clone(),
        template: template.clone(),
        grid,
        opts: *opts,
    };
    let lm = solve(&problem, layout.flatten(&template), &opts.lm)?;
    let final_eval = problem.evaluate(&lm.x)?;
    let state = layout.unflatten(&template, &lm.x);
    let field = assemble_residual(&state, grid)?;
    Ok(SolveReport {
        state,
        residual_sup: field.sup_norm,
        residual_l2: field.l2_norm,
        solver_residual_sup: final_eval.f.amax(),
        iterations: lm.iterations,
        lambda_final: lm.lambda_final,
        converged: lm.converged,
        termination: lm.termination,
        history: lm.history,
    })
}
