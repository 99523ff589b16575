//! Acceptance criteria. Each criterion prints one `PASS` or `FAIL` line with
//! the measured quantities; the process exits non-zero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vkplate::functional::{
    constraint, constraint_jacobian_apply, energy, energy_gradient, normalize, ConstraintData,
    KSpec,
};
use vkplate::grid::{contract_quad, det2, divdiv_adjoint, hessian, integrate, GridDomain, ScalarField, Sym2, SymMatrixField};
use vkplate::solver::{minimize, restore_feasibility, SolveReport, SolverConfig};
use vkplate::verify::{
    convergence_study, el_residual, identity_suite, perturbed_start, StudyOptions, IDENTITY_TOL,
};

const ORDER_MIN: f64 = 1.8;
const ENERGY_REL_TOL: f64 = 0.02;
const RUNTIME_LIMIT_S: f64 = 60.0;
const MULTIPLIER_TOL: f64 = 1e-2;
const EXPANSION_TOL: f64 = 1e-12;
const GRADIENT_FD_TOL: f64 = 1e-6;
const NEWTON_EXPONENT_MIN: f64 = 1.8;
const NEWTON_FIT_BELOW: f64 = 0.1;
const NEWTON_TARGET: f64 = 1e-9;
const NEWTON_MAX_ITERS: usize = 10;
const ADJOINT_TOL: f64 = 1e-12;
const EL_RESIDUAL_TOL: f64 = 1e-4;
const ZERO_ENERGY_TOL: f64 = 1e-10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn grid(n: usize) -> GridDomain {
    GridDomain::unit_square(n).expect("valid grid")
}

fn random_field(d: GridDomain, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::new(d, (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("finite")
}

fn solve_constant(n: usize, k: f64) -> SolveReport {
    let d = grid(n);
    let data = ConstraintData::constant(d, k).expect("finite k");
    let start = perturbed_start(d, k, 0.1).expect("positive k");
    minimize(Some(&start), &data, &SolverConfig::default()).expect("solve converges")
}

fn multiplier_error(r: &SolveReport) -> f64 {
    let d = *r.v.domain();
    d.interior_nodes()
        .map(|(i, j)| (r.lambda.get(i, j) - 1.0).abs())
        .fold(0.0, f64::max)
}

fn constant_k_oracle() -> Outcome {
    let t0 = Instant::now();
    let rows = match convergence_study(1.0, &[17, 33, 65], &StudyOptions::default()) {
        Ok(rows) => rows,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let secs = t0.elapsed().as_secs_f64();
    let last = rows.last().expect("three rows");
    let exact = 2.0 * grid(65).interior_area();
    let energy_rel = last.energy_error / exact;
    let orders: Vec<Option<f64>> = rows.iter().skip(1).map(|r| r.observed_order).collect();
    let order_ok = orders.iter().all(|o| o.is_some_and(|o| o >= ORDER_MIN));
    let errors: Vec<f64> = rows.iter().map(|r| r.field_error_inf).collect();
    outcome(
        order_ok && energy_rel <= ENERGY_REL_TOL && secs <= RUNTIME_LIMIT_S,
        format!(
            "field errors [{}], orders {orders:.2?} (need >= {ORDER_MIN}), \
             energy rel err {energy_rel:.2e} (<= {ENERGY_REL_TOL}), runtime {secs:.1}s (<= {RUNTIME_LIMIT_S}s)",
            sci(&errors)
        ),
    )
}

fn multiplier_oracle(k1: &SolveReport, k4: &SolveReport) -> Outcome {
    let (e1, e4) = (multiplier_error(k1), multiplier_error(k4));
    outcome(
        e1 <= MULTIPLIER_TOL && e4 <= MULTIPLIER_TOL,
        format!("|lambda - 1|_inf: k=1 {e1:.2e}, k=4 {e4:.2e} (<= {MULTIPLIER_TOL:e})"),
    )
}

fn constraint_expansion() -> Outcome {
    let d = grid(17);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = ConstraintData::new(random_field(d, &mut rng)).expect("finite k");
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let v = random_field(d, &mut rng);
        let h = random_field(d, &mut rng);
        let lhs = constraint(&v.axpy(1.0, &h), &data);
        let rhs = &(&constraint(&v, &data) + &constraint_jacobian_apply(&v, &h))
            + &det2(&hessian(&h));
        let terms = [
            det2(&hessian(&v.axpy(1.0, &h))),
            det2(&hessian(&v)),
            constraint_jacobian_apply(&v, &h),
            det2(&hessian(&h)),
            data.k().clone(),
        ];
        for (i, j) in d.interior_nodes() {
            let scale = terms.iter().map(|t| t.get(i, j).abs()).fold(0.0, f64::max);
            worst = worst.max((lhs.get(i, j) - rhs.get(i, j)).abs() / scale);
        }
    }
    outcome(
        worst <= EXPANSION_TOL,
        format!("worst nodewise relative defect {worst:.2e} over 100 pairs (<= {EXPANSION_TOL:e})"),
    )
}

fn energy_gradient_checks() -> Outcome {
    let d = grid(17);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = 1e-5;
    let (mut fd_worst, mut quad_worst) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let v = random_field(d, &mut rng);
        let h = random_field(d, &mut rng);
        let v = &v * (1.0 / v.norm());
        let h = &h * (1.0 / h.norm());
        let analytic = energy_gradient(&v).dot(&h);
        let fd = (energy(&v.axpy(eps, &h)) - energy(&v.axpy(-eps, &h))) / (2.0 * eps);
        fd_worst = fd_worst.max((analytic - fd).abs() / analytic.abs());
        for t in [0.1, 1.0, 3.0] {
            let lhs = energy(&v.axpy(t, &h));
            let rhs = energy(&v) + t * analytic + t * t * energy(&h);
            quad_worst = quad_worst.max((lhs - rhs).abs() / lhs);
        }
    }
    outcome(
        fd_worst <= GRADIENT_FD_TOL && quad_worst <= EXPANSION_TOL,
        format!(
            "central difference rel err {fd_worst:.2e} (<= {GRADIENT_FD_TOL:e}), \
             quadratic expansion rel err {quad_worst:.2e} (<= {EXPANSION_TOL:e})"
        ),
    )
}

/// Least-squares slope of `ln r[n+1]` against `ln r[n]` over the steps that
/// start at or below `below`, widened by one step when that leaves a single
/// point.
fn fitted_exponent(residuals: &[f64], below: f64) -> Option<f64> {
    let first = residuals.iter().position(|&r| r <= below)?;
    let steps = residuals.len().checked_sub(1)?;
    let start = if steps.saturating_sub(first) >= 2 { first } else { first.checked_sub(1)? };
    let pts: Vec<(f64, f64)> = residuals[start..]
        .windows(2)
        .filter(|w| w[1] > 0.0)
        .map(|w| (w[0].ln(), w[1].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn newton_restoration() -> Outcome {
    let d = grid(33);
    let data = ConstraintData::constant(d, 1.0).expect("finite k");
    let v0 = ScalarField::from_fn(d, |x, y| 0.6 * (x * x + y * y));
    let r = match restore_feasibility(&v0, &data, &SolverConfig::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("restoration failed: {e}")),
    };
    let last = *r.residuals.last().expect("initial residual");
    let p = fitted_exponent(&r.residuals, NEWTON_FIT_BELOW);
    outcome(
        p.is_some_and(|p| p >= NEWTON_EXPONENT_MIN)
            && last <= NEWTON_TARGET
            && r.iterations <= NEWTON_MAX_ITERS,
        format!(
            "residuals [{}], fitted exponent {:.2?} (>= {NEWTON_EXPONENT_MIN}), \
             {} iterations (<= {NEWTON_MAX_ITERS})",
            sci(&r.residuals), p, r.iterations
        ),
    )
}

fn lower_bound(solves: &[(&str, &ConstraintData, &SolveReport)]) -> Outcome {
    let tol = SolverConfig::default().tol_constraint;
    let mut worst_margin = f64::INFINITY;
    let mut records = 0;
    let mut ok = true;
    for (_, data, r) in solves {
        let area = data.domain().interior_area();
        let bound = 2.0 * integrate(data.k()) - 2.0 * tol * area;
        for rec in &r.history {
            records += 1;
            worst_margin = worst_margin.min(rec.energy - bound);
            ok &= rec.energy >= bound;
        }
        ok &= r.converged;
    }
    let names: Vec<&str> = solves.iter().map(|s| s.0).collect();
    outcome(
        ok,
        format!("{records} accepted iterates over {names:?}, smallest margin above bound {worst_margin:.3e}"),
    )
}

fn identities() -> Outcome {
    let report = identity_suite(7);
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let worst = report.checks.iter().map(|c| c.max_defect).fold(0.0, f64::max);
    outcome(
        report.passed && report.checks.iter().all(|c| c.tolerance <= IDENTITY_TOL),
        format!(
            "{} checks, worst defect {worst:.2e} (<= {IDENTITY_TOL:e}), failing {failed:?}",
            report.checks.len()
        ),
    )
}

fn adjointness_and_el(k1: &SolveReport) -> Outcome {
    let d = grid(17);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let m = SymMatrixField::new(
            d,
            (0..d.interior_len())
                .map(|_| {
                    Sym2::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
        .expect("finite");
        let h = random_field(d, &mut rng);
        let lhs = contract_quad(&m, &hessian(&h));
        let rhs = divdiv_adjoint(&m).dot(&h);
        let scale = contract_quad(&m, &m).sqrt() * h.norm();
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    let el = el_residual(&k1.v, &k1.lambda).max_abs_beyond_ring(2);
    outcome(
        worst <= ADJOINT_TOL && el <= EL_RESIDUAL_TOL,
        format!(
            "adjoint defect {worst:.2e} (<= {ADJOINT_TOL:e}), \
             deep-interior EL residual on 65x65 {el:.2e} (<= {EL_RESIDUAL_TOL:e})"
        ),
    )
}

fn degenerate_zero(r: &vkplate::Result<SolveReport>) -> Outcome {
    match r {
        Ok(r) => {
            let zero_err = normalize(&r.v).max_abs();
            outcome(
                zero_err == 0.0 && r.energy <= ZERO_ENERGY_TOL,
                format!("max |v| {zero_err:.1e}, energy {:.1e} (<= {ZERO_ENERGY_TOL:e})", r.energy),
            )
        }
        Err(e) => outcome(false, format!("solve failed: {e}")),
    }
}

fn run_cli(config: &Path) -> Option<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_vkplate"))
        .arg(config)
        .status()
        .ok()?;
    status.code().map(|c| c as u8)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("out");
    let cfg = dir.path().join("config.json");
    let text = serde_json::json!({
        "command": "verify",
        "grid": 17,
        "k": {"constant": 1.0},
        "seed": 3,
        "out": out,
    });
    std::fs::write(&cfg, text.to_string()).expect("write config");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let code = run_cli(&cfg);
        let files: Vec<Option<Vec<u8>>> = ["report.json", "v.csv", "lambda.csv"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).ok())
            .collect();
        for f in ["report.json", "v.csv", "lambda.csv"] {
            let _ = std::fs::remove_file(out.join(f));
        }
        outputs.push((code, files));
    }
    let complete = outputs.iter().all(|(c, f)| *c == Some(0) && f.iter().all(Option::is_some));
    let identical = outputs[0] == outputs[1];
    outcome(
        complete && identical,
        format!(
            "exit codes {:?}, all outputs present {complete}, bitwise identical {identical}",
            outputs.iter().map(|o| o.0).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    results.push((1, "constant-k oracle on 17/33/65", constant_k_oracle()));

    let k1 = solve_constant(65, 1.0);
    let k4 = solve_constant(65, 4.0);
    results.push((2, "multiplier oracle on 65x65, k in {1, 4}", multiplier_oracle(&k1, &k4)));
    results.push((3, "exact quadratic expansion of the constraint", constraint_expansion()));
    results.push((4, "energy gradient", energy_gradient_checks()));
    results.push((5, "Newton restoration from 0.6|x|^2", newton_restoration()));

    let cfg = SolverConfig::default();
    let d17 = grid(17);
    let d33 = grid(33);
    let one17 = ConstraintData::constant(d17, 1.0).expect("finite k");
    let one33 = ConstraintData::constant(d33, 1.0).expect("finite k");
    let four65 = ConstraintData::constant(grid(65), 4.0).expect("finite k");
    let one65 = ConstraintData::constant(grid(65), 1.0).expect("finite k");
    let poly17 = KSpec::Poly(vec![(0, 0, 1.0), (1, 0, 0.5), (0, 2, 0.25)])
        .sample(d17)
        .expect("finite k");
    let zero17 = ConstraintData::constant(d17, 0.0).expect("finite k");
    let s17 = minimize(Some(&perturbed_start(d17, 1.0, 0.1).expect("k > 0")), &one17, &cfg);
    let s33 = minimize(Some(&perturbed_start(d33, 1.0, 0.3).expect("k > 0")), &one33, &cfg);
    let sp = minimize(None, &poly17, &cfg);
    let sz = minimize(None, &zero17, &cfg);
    let outcome6 = match (&s17, &s33, &sp, &sz) {
        (Ok(a), Ok(b), Ok(c), Ok(z)) => lower_bound(&[
            ("k=1 17x17", &one17, a),
            ("k=1 33x33", &one33, b),
            ("k=1+x/2+y^2/4 17x17", &poly17, c),
            ("k=0 17x17", &zero17, z),
            ("k=1 65x65", &one65, &k1),
            ("k=4 65x65", &four65, &k4),
        ]),
        _ => outcome(false, "a solve failed".to_string()),
    };
    results.push((6, "feasible lower bound over full histories", outcome6));
    results.push((7, "matrix identities and saddle oracle", identities()));
    results.push((8, "adjointness and Euler-Lagrange consistency", adjointness_and_el(&k1)));
    results.push((9, "degenerate case k = 0", degenerate_zero(&sz)));
    results.push((10, "bitwise reproducible CLI outputs", determinism()));

    let mut failures = 0;
    for (id, name, o) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag}: {name}: {}", o.detail);
        failures += usize::from(!o.passed);
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        results.len() - failures
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
