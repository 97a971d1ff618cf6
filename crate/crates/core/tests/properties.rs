use nalgebra::DVector;
use proptest::prelude::*;

use vortex_sheet::functional::{projected_residual, ResidualMode};
use vortex_sheet::records::{SolutionRecord, SolverInfo};
use vortex_sheet::solver::{solve, FnProblem, LmOptions};
use vortex_sheet::spectral::{project_mode, Parity};
use vortex_sheet::{assemble_residual, FourierSeries, Grid, SheetState};

fn small_state() -> impl Strategy<Value = SheetState> {
    (1usize..=6)
        .prop_flat_map(|n| {
            (
                1.0f64..3.0,
                prop::collection::vec(-0.05f64..0.05, n),
                prop::collection::vec(-0.05f64..0.05, n),
            )
        })
        .prop_map(|(b, g, r)| {
            SheetState::new(b, FourierSeries::cosine(0.0, g), FourierSeries::cosine(0.0, r)).unwrap()
        })
}

/// `θ ↦ θ + π/2` flips the sign of every odd mode `cos 2nθ`.
fn quarter_turn(s: &SheetState) -> SheetState {
    let flip = |c: &[f64]| c.iter().enumerate().map(|(k, x)| if k % 2 == 0 { -x } else { *x }).collect();
    SheetState::new(
        s.b,
        FourierSeries::cosine(0.0, flip(s.g.coeffs())),
        FourierSeries::cosine(0.0, flip(s.r.coeffs())),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quarter_turn_maps_residual_modes(s in small_state()) {
        let grid = Grid::half(64).unwrap();
        let n = s.n_modes();
        let a = projected_residual(&s, &grid, n).unwrap();
        let b = projected_residual(&quarter_turn(&s), &grid, n).unwrap();
        let scale = a.sup_norm().max(1e-300);
        for k in 1..=n {
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            for mode in [ResidualMode::F1Sine(k), ResidualMode::F2Cosine(k)] {
                prop_assert!((b.get(mode) - sign * a.get(mode)).abs() <= 1e-11 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn residual_has_the_declared_parity(s in small_state()) {
        let grid = Grid::half(64).unwrap();
        let field = assemble_residual(&s, &grid).unwrap();
        let scale = field.sup_norm.max(1e-300);
        for k in 0..32 {
            let c1 = project_mode(&field.f1, &grid, 2 * k, Parity::Cosine).unwrap();
            prop_assert!(c1.abs() <= 1e-10 * scale);
            if k > 0 {
                let s2 = project_mode(&field.f2, &grid, 2 * k, Parity::Sine).unwrap();
                prop_assert!(s2.abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn solution_records_round_trip_bitwise(
        s in small_state(),
        sup in 0.0f64..1.0,
        l2 in 0.0f64..1.0,
        lambda in 1e-30f64..1e10,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let info = SolverInfo { iterations: 7, lambda_final: lambda };
        let rec = SolutionRecord::new(&s, 64, sup, l2, info);
        rec.write(&path).unwrap();
        let back = SolutionRecord::read(&path).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(back.state().unwrap(), s);
    }

    #[test]
    fn lm_history_never_increases(
        target in prop::collection::vec(-2.0f64..2.0, 3),
        start in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let t = DVector::from_vec(target);
        let problem = FnProblem(|x: &DVector<f64>| {
            Ok(DVector::from_iterator(4, [
                x[0] - t[0] + 0.3 * x[1] * x[2],
                (x[1] - t[1]) * (1.0 + x[0] * x[0]),
                x[2].powi(3) - t[2].powi(3),
                0.1 * (x[0] - t[0]),
            ]))
        });
        let report = solve(&problem, DVector::from_vec(start), &LmOptions::default()).unwrap();
        prop_assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
        if report.converged {
            prop_assert!(report.residual_sup <= 1e-10);
        }
    }
}
