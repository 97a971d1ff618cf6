//! End-to-end acceptance run. Prints one line per criterion and exits nonzero
//! if any criterion fails.
//!
//! The branch criteria trace full branches at N = 160, N_θ = 1024 and take
//! several minutes in an optimized build.

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vortex_sheet::continuation::{
    branch_slope_on, continue_branch, detect_fold_on, BranchPoint, ContinuationConfig, Parameter, Seed,
};
use vortex_sheet::linearization::{fd_jacobian, mode_matrix, paired_unknowns};
use vortex_sheet::oracles::{check_value, evaluate_value, integral_identity, value_entries, Identity};
use vortex_sheet::solver::{solve_sheet, Convergence, Fixed, SheetSolveOptions};
use vortex_sheet::spectral::{project_mode, Parity};
use vortex_sheet::{assemble_residual, FourierSeries, Grid, SheetState};

const N_MODES: usize = 160;
const N_THETA: usize = 1024;
const TOL: f64 = 1e-10;
/// Continuation step in r1 for the branch runs.
const STEP: f64 = 0.005;

struct Outcome {
    pass: bool,
    detail: String,
}

fn say(line: impl AsRef<str>) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", line.as_ref());
    let _ = out.flush();
}

fn report(id: usize, title: &str, o: &Outcome) -> bool {
    say(format!(
        "criterion {id}: {} {title}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    ));
    o.pass
}

fn trivial_residual() -> Outcome {
    let grid = Grid::half(N_THETA).unwrap();
    let worst = [1.0, 2.0, 3.0, 5.0]
        .iter()
        .map(|&b| assemble_residual(&SheetState::trivial(b, 4), &grid).unwrap().sup_norm)
        .fold(0.0, f64::max);
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("max sup-norm {worst:.2e} over b in {{1,2,3,5}} (tol 1e-12)"),
    }
}

fn identities() -> Outcome {
    let grid = Grid::half(N_THETA).unwrap();
    let thetas: Vec<f64> = (0..16).map(|k| 0.05 + k as f64 * std::f64::consts::PI / 16.0).collect();
    let mut worst = (0.0, String::new());
    for id in Identity::ALL {
        let ms: Vec<usize> = if id.takes_m() { (1..=8).collect() } else { vec![0] };
        for &m in &ms {
            for &theta in &thetas {
                let (q, exact) = integral_identity(id.name(), m, theta, &grid).unwrap();
                let err = (q - exact).abs();
                if err >= worst.0 {
                    worst = (err, format!("{} m={m} θ={theta:.3}", id.name()));
                }
            }
        }
    }
    Outcome {
        pass: worst.0 <= 1e-10,
        detail: format!("worst abs error {:.2e} at {} (tol 1e-10)", worst.0, worst.1),
    }
}

fn linearization() -> Outcome {
    let grid = Grid::half(N_THETA).unwrap();
    let n = 8;
    let mut worst: f64 = 0.0;
    let mut worst_paper: f64 = 0.0;
    for b in [2.0, 2.5, 3.0] {
        let jac = fd_jacobian(&SheetState::trivial(b, n), &grid, &paired_unknowns(n), 1e-6).unwrap();
        let mut expected = nalgebra::DMatrix::zeros(jac.matrix.nrows(), jac.matrix.ncols());
        for k in 1..=n {
            let m = mode_matrix(b, 1.0, k).unwrap().entries;
            let rows = [k - 1, n + k - 1];
            let cols = [2 * (k - 1), 2 * (k - 1) + 1];
            for i in 0..2 {
                for j in 0..2 {
                    expected[(rows[i], cols[j])] = m[(i, j)];
                }
            }
            if b == 2.0 {
                let stated = Matrix2::new(-0.5, 0.0, 0.0, 4.0 * (k as f64 - 1.0));
                worst_paper = worst_paper.max((jac.block(k).unwrap() - stated).amax());
            }
        }
        worst = worst.max((&jac.matrix - expected).amax());
    }
    Outcome {
        pass: worst <= 1e-6 && worst_paper <= 1e-6,
        detail: format!(
            "max |FD − mode matrix| {worst:.2e} incl. off-block zeros; b=2 blocks vs diag(−1/2, 4(n−1)) {worst_paper:.2e} (tol 1e-6)"
        ),
    }
}

fn reduced_values() -> Outcome {
    let grid = Grid::half(N_THETA).unwrap();
    let mut worst = (0.0, String::new());
    let mut failed = Vec::new();
    for entry in value_entries() {
        let computed = evaluate_value(entry.name, &grid).unwrap();
        for o in check_value(&entry, &computed) {
            if !o.pass {
                failed.push(o.name.clone());
            }
            if o.error >= worst.0 {
                worst = (o.error, o.name);
            }
        }
    }
    Outcome {
        pass: failed.is_empty(),
        detail: format!(
            "10 values; worst relative error {:.2e} at {} (tol 1e-4){}",
            worst.0,
            worst.1,
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    }
}

fn symmetry() -> Outcome {
    let grid = Grid::half(256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20261016);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let coeffs = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-0.05..=0.05)).collect::<Vec<_>>();
        let g = coeffs(&mut rng);
        let r = coeffs(&mut rng);
        let b = rng.gen_range(1.0..3.0);
        let state = SheetState::new(b, FourierSeries::cosine(0.0, g), FourierSeries::cosine(0.0, r)).unwrap();
        let field = assemble_residual(&state, &grid).unwrap();
        let scale = field.sup_norm.max(f64::MIN_POSITIVE);
        for k in 0..grid.len() / 2 {
            let c1 = project_mode(&field.f1, &grid, 2 * k, Parity::Cosine).unwrap();
            let s2 = if k == 0 { 0.0 } else { project_mode(&field.f2, &grid, 2 * k, Parity::Sine).unwrap() };
            worst = worst.max(c1.abs().max(s2.abs()) / scale);
        }
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("100 random states, max wrong-parity content / sup-norm {worst:.2e} (tol 1e-10)"),
    }
}

struct Branches {
    upper: Vec<BranchPoint>,
    lower: Vec<BranchPoint>,
    lower_end: Option<String>,
    upper_left: Vec<BranchPoint>,
    lower_left: Vec<BranchPoint>,
    extra: Vec<BranchPoint>,
    /// Lower branch continued on the truncated system (coefficient convergence).
    lower_truncated: Vec<BranchPoint>,
}

fn trace(start: f64, step: f64, n_steps: usize, seed: Seed, convergence: Convergence) -> (Vec<BranchPoint>, Option<String>) {
    let mut config = ContinuationConfig::new(Parameter::R1, start, step, n_steps, seed);
    config.n_modes = N_MODES;
    config.n_theta = N_THETA;
    config.solver.lm.tol = TOL;
    config.solver.convergence = convergence;
    let t = Instant::now();
    let branch = continue_branch(&config).expect("first point converges");
    let last = branch.points.last().map_or(f64::NAN, |p| p.r1);
    say(format!(
        "  traced {} points from r1 = {start} to {last:.3} in {:.0} s{}",
        branch.points.len(),
        t.elapsed().as_secs_f64(),
        branch.truncated.as_deref().map(|r| format!("; stopped {r}")).unwrap_or_default()
    ));
    (branch.points, branch.truncated)
}

fn trace_branches() -> Branches {
    let n_right = (0.95 / STEP).round() as usize;
    let n_left = (0.05 / STEP).round() as usize;
    let strict = Convergence::Nodes;
    let (upper, _) = trace(STEP, STEP, n_right, Seed::Linear { sign: 1.0 }, strict);
    let (lower, lower_end) = trace(STEP, STEP, n_right, Seed::Linear { sign: -1.0 }, strict);
    let (upper_left, _) = trace(-STEP, -STEP, n_left, Seed::Linear { sign: 1.0 }, strict);
    let (lower_left, _) = trace(-STEP, -STEP, n_left, Seed::Linear { sign: -1.0 }, strict);

    // r1 = 0.362 lies between grid points; solve it from the neighbouring stored point
    let grid = Grid::half(N_THETA).unwrap();
    let mut extra = Vec::new();
    let near = lower
        .iter()
        .min_by(|a, b| (a.r1 - 0.36).abs().total_cmp(&(b.r1 - 0.36).abs()))
        .expect("lower branch has points");
    let mut opts = SheetSolveOptions::default();
    opts.lm.tol = TOL;
    let rep = solve_sheet(Fixed::R1(0.362), &near.state, &grid, &opts).unwrap();
    if rep.converged {
        extra.push(BranchPoint {
            step_index: usize::MAX,
            r1: rep.state.r1(),
            b: rep.state.b,
            residual_sup: rep.residual_sup,
            residual_l2: rep.residual_l2,
            iterations: rep.iterations,
            lambda_final: rep.lambda_final,
            state: rep.state,
        });
    }

    let mut lower_truncated = Vec::new();
    if let Some(last) = lower.last() {
        if last.r1 < 0.825 - 1e-9 {
            let n = ((0.825 - last.r1) / STEP).round() as usize;
            let (pts, _) = trace(last.r1 + STEP, STEP, n, Seed::State(last.state.clone()), Convergence::Solver);
            lower_truncated = pts;
        }
    }
    Branches {
        upper,
        lower,
        lower_end,
        upper_left,
        lower_left,
        extra,
        lower_truncated,
    }
}

fn at(points: &[BranchPoint], r1: f64) -> Option<&BranchPoint> {
    points.iter().find(|p| (p.r1 - r1).abs() < 1e-9)
}

fn branch_points(br: &Branches) -> Outcome {
    let lower_all: Vec<BranchPoint> = br.lower.iter().chain(&br.extra).cloned().collect();
    let targets = [
        ("lower", 0.362, 1.6799, &lower_all),
        ("lower", 0.825, 1.7779, &lower_all),
        ("upper", 0.525, 4.0954, &br.upper),
        ("upper", 0.925, 9.3439, &br.upper),
    ];
    let mut pass = true;
    let mut summary = Vec::new();
    for (name, r1, b_ref, pts) in targets {
        match at(pts, r1) {
            Some(p) => {
                let d = (p.b - b_ref).abs();
                let ok = d <= 1e-2;
                pass &= ok;
                say(format!(
                    "  {name} r1 = {r1}: b = {:.6} (reference {b_ref}), |Δb| = {d:.2e}, residual {:.1e} -> {}",
                    p.b,
                    p.residual_sup,
                    if ok { "ok" } else { "MISS" }
                ));
                summary.push(format!("{r1}:{}", if ok { "ok" } else { "miss" }));
            }
            None => {
                pass = false;
                let end = pts.iter().map(|p| p.r1).fold(f64::NAN, f64::max);
                say(format!(
                    "  {name} r1 = {r1}: no converged point; branch ends at r1 = {end:.3} ({})",
                    br.lower_end.as_deref().unwrap_or("not truncated")
                ));
                if let Some(p) = at(&br.lower_truncated, r1) {
                    say(format!(
                        "  {name} r1 = {r1} on the N = {N_MODES} truncated system: b = {:.6} (reference {b_ref}), |Δb| = {:.2e}, node residual {:.1e} (unresolved)",
                        p.b,
                        (p.b - b_ref).abs(),
                        p.residual_sup
                    ));
                }
                summary.push(format!("{r1}:unreached"));
            }
        }
    }
    Outcome {
        pass,
        detail: format!("|Δb| ≤ 1e-2 at N={N_MODES}, N_θ={N_THETA}, tol {TOL:e}: {}", summary.join(" ")),
    }
}

fn fold(br: &Branches) -> Outcome {
    match detect_fold_on(&br.lower).unwrap() {
        Some(f) => Outcome {
            pass: (1.66..=1.70).contains(&f.b),
            detail: format!("lower-branch fold at r1 = {:.5}, b = {:.6} (window [1.66, 1.70])", f.r1, f.b),
        },
        None => Outcome {
            pass: false,
            detail: "no fold detected on the lower branch".into(),
        },
    }
}

fn slopes(br: &Branches) -> Outcome {
    let both = |a: &[BranchPoint], b: &[BranchPoint]| -> Vec<BranchPoint> { a.iter().chain(b).cloned().collect() };
    let up = branch_slope_on(&both(&br.upper, &br.upper_left)).unwrap();
    let down = branch_slope_on(&both(&br.lower, &br.lower_left)).unwrap();
    let ok = (up - 2.0).abs() <= 0.1 && (down + 2.0).abs() <= 0.1;
    Outcome {
        pass: ok,
        detail: format!("slopes over |r1| ≤ 0.05: upper {up:.4}, lower {down:.4} (±2 within 5%)"),
    }
}

fn grid_stability(br: &Branches) -> Outcome {
    let fine = Grid::half(2 * N_THETA).unwrap();
    let accepted: Vec<&BranchPoint> = br
        .upper
        .iter()
        .chain(&br.lower)
        .chain(&br.upper_left)
        .chain(&br.lower_left)
        .chain(&br.extra)
        .collect();
    let mut worst = (0.0, f64::NAN);
    for p in &accepted {
        let sup = assemble_residual(&p.state, &fine).unwrap().sup_norm;
        if sup >= worst.0 {
            worst = (sup, p.r1);
        }
    }
    Outcome {
        pass: worst.0 <= 1e-9,
        detail: format!(
            "{} accepted points at N_θ = {}: max residual {:.2e} at r1 = {:.3} (tol 1e-9)",
            accepted.len(),
            2 * N_THETA,
            worst.0,
            worst.1
        ),
    }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results = Vec::new();
    results.push(report(1, "trivial branch", &trivial_residual()));
    results.push(report(2, "integral identities", &identities()));
    results.push(report(3, "linearization", &linearization()));
    results.push(report(4, "reduced derivatives", &reduced_values()));
    say("tracing branches ...");
    let br = trace_branches();
    results.push(report(5, "branch points", &branch_points(&br)));
    results.push(report(6, "fold", &fold(&br)));
    results.push(report(7, "local branch law", &slopes(&br)));
    results.push(report(8, "grid stability", &grid_stability(&br)));
    results.push(report(9, "symmetry", &symmetry()));
    let passed = results.iter().filter(|p| **p).count();
    say(format!(
        "acceptance: {passed}/{} criteria passed in {:.0} s",
        results.len(),
        started.elapsed().as_secs_f64()
    ));
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
