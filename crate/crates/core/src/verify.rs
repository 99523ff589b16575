//! Verification: strong-form residual of the multiplier equation, comparison
//! with the closed-form minimizer modulo affine functions, mesh-refinement
//! studies and the pointwise matrix identity suite.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{
    analytic_minimizer, analytic_minimizer_for, constraint, energy, normalize,
    trace_identity_defect, tracefree_identity_defect, Branch, ConstraintData,
};
use crate::grid::{
    biharmonic, cofactor, contract_quad, frobenius, hessian, tracefree, GridDomain, ScalarField,
    Sym2,
};
use crate::solver::{minimize, SolverConfig};

/// `Delta^2 v - cof D2 v : D2 lambda` on nodes at least two away from the
/// boundary, zero elsewhere.
pub fn el_residual(v: &ScalarField, lambda: &ScalarField) -> ScalarField {
    let d = *v.domain();
    let bih = biharmonic(v);
    let coupling = frobenius(&cofactor(&hessian(v)), &hessian(lambda));
    let values = d
        .nodes()
        .map(|(i, j)| {
            if d.ring(i, j) >= 2 {
                bih.get(i, j) - coupling.get(i, j)
            } else {
                0.0
            }
        })
        .collect();
    ScalarField::new(d, values).expect("residual of finite fields is finite")
}

/// `|<D2 v, D2 h>_quad - <lambda cof D2 v, D2 h>_quad|` for one test field.
pub fn weak_el_defect(v: &ScalarField, lambda: &ScalarField, h: &ScalarField) -> f64 {
    let hv = hessian(v);
    let hh = hessian(h);
    (contract_quad(&hv, &hh) - contract_quad(&cofactor(&hv).scale_by(lambda), &hh)).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticComparison {
    /// `max |normalize(v) - normalize(v_exact)|`.
    pub field_error_inf: f64,
    /// Nodal L2 norm of the same difference.
    pub field_error_l2: f64,
    /// `|energy(v) - 2 k interior_area|`.
    pub energy_error: f64,
}

/// Compares `v` with `sqrt(k)/2 |x|^2` after removing affine parts.
pub fn compare_to_analytic(v: &ScalarField, data: &ConstraintData) -> Result<AnalyticComparison> {
    let k = data.constant_value().ok_or(Error::NonConstantK)?;
    let exact = analytic_minimizer(data, Branch::Elliptic)?;
    let diff = &normalize(v) - &normalize(&exact);
    Ok(AnalyticComparison {
        field_error_inf: diff.max_abs(),
        field_error_l2: diff.norm(),
        energy_error: (energy(v) - 2.0 * k * v.domain().interior_area()).abs(),
    })
}

/// Closed-form minimizer for `k` plus `amplitude cos(pi x / Lx) cos(pi y / Ly) / pi^2`.
/// The bump moves the boundary values, so the solver has to find them.
pub fn perturbed_start(domain: GridDomain, k: f64, amplitude: f64) -> Result<ScalarField> {
    let base = analytic_minimizer_for(domain, k, Branch::Elliptic)?;
    let (lx, ly) = (domain.extent_x(), domain.extent_y());
    let bump = ScalarField::from_fn(domain, |x, y| {
        (PI * x / lx).cos() * (PI * y / ly).cos() / (PI * PI)
    });
    Ok(base.axpy(amplitude, &bump))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub field_error_inf: f64,
    pub field_error_l2: f64,
    pub energy_error: f64,
    pub multiplier_error_inf: f64,
    /// `log(e_prev / e) / log(h_prev / h)` from infinity-norm field errors;
    /// absent on the first row or when an error is exactly zero.
    pub observed_order: Option<f64>,
    pub outer_iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOptions {
    pub extent: (f64, f64),
    /// Amplitude of the start perturbation, see [`perturbed_start`].
    pub perturbation: f64,
    pub solver: SolverConfig,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            extent: (1.0, 1.0),
            perturbation: 0.1,
            solver: SolverConfig::default(),
        }
    }
}

fn study_row(k: f64, n: usize, opts: &StudyOptions) -> Result<ConvergenceRow> {
    let d = GridDomain::new(opts.extent.0, opts.extent.1, n, n)?;
    let data = ConstraintData::constant(d, k)?;
    let start = perturbed_start(d, k, opts.perturbation)?;
    let report = minimize(Some(&start), &data, &opts.solver)?;
    let cmp = compare_to_analytic(&report.v, &data)?;
    let multiplier_error_inf = d
        .interior_nodes()
        .map(|(i, j)| (report.lambda.get(i, j) - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(ConvergenceRow {
        n,
        h: d.hx(),
        field_error_inf: cmp.field_error_inf,
        field_error_l2: cmp.field_error_l2,
        energy_error: cmp.energy_error,
        multiplier_error_inf,
        observed_order: None,
        outer_iterations: report.outer_iterations,
    })
}

/// Solves the constant-`k` problem on each `n x n` grid (concurrently) and
/// tabulates errors against the closed form.
pub fn convergence_study(
    k: f64,
    grids: &[usize],
    opts: &StudyOptions,
) -> Result<Vec<ConvergenceRow>> {
    let results: Vec<Result<ConvergenceRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = grids
            .iter()
            .map(|&n| s.spawn(move || study_row(k, n, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("study worker panicked"))
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    for i in 1..rows.len() {
        let (prev, cur) = (&rows[i - 1], &rows[i]);
        let order = (prev.field_error_inf > 0.0 && cur.field_error_inf > 0.0)
            .then(|| (prev.field_error_inf / cur.field_error_inf).ln() / (prev.h / cur.h).ln());
        rows[i].observed_order = order;
    }
    Ok(rows)
}

/// Table in the `n,h,field_err,energy_err,lambda_err,order` layout.
pub fn rows_to_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("n,h,field_err,energy_err,lambda_err,order\n");
    for r in rows {
        let order = r.observed_order.map(|o| o.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.h, r.field_error_inf, r.energy_error, r.multiplier_error_inf, order
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub max_defect: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub seed: u64,
    pub checks: Vec<IdentityCheck>,
    pub passed: bool,
}

/// Tolerance of the identity suite.
pub const IDENTITY_TOL: f64 = 1e-13;
const RANDOM_MATRICES: usize = 1000;

fn check(name: &str, max_defect: f64, tolerance: f64) -> IdentityCheck {
    IdentityCheck {
        name: name.to_string(),
        max_defect,
        tolerance,
        passed: max_defect <= tolerance,
    }
}

/// Largest defect of both matrix identities, relative to `max(|A|^2, 1)`.
fn identity_defects<'a>(mats: impl Iterator<Item = &'a Sym2>) -> (f64, f64) {
    mats.fold((0.0_f64, 0.0_f64), |(t, f), a| {
        let scale = a.norm_sq().max(1.0);
        (
            t.max(trace_identity_defect(a).abs() / scale),
            f.max(tracefree_identity_defect(a).abs() / scale),
        )
    })
}

/// `|A|^2 = (tr A)^2 - 2 det A` and `|A|^2 = 2|A°|^2 + 2 det A` on seeded
/// random matrices, on Hessians of random fields and on the zero matrix,
/// plus exact feasibility of the saddle `(x^2 - y^2)/2` for `k = -1`.
pub fn identity_suite(seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mats: Vec<Sym2> = (0..RANDOM_MATRICES)
        .map(|_| {
            Sym2::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let (t, f) = identity_defects(mats.iter());
    let mut checks = vec![
        check("trace identity, random matrices", t, IDENTITY_TOL),
        check("trace-free identity, random matrices", f, IDENTITY_TOL),
    ];

    let d = GridDomain::unit_square(17).expect("valid grid");
    let field = ScalarField::new(
        d,
        (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("finite random field");
    let hess = hessian(&field);
    let (t, f) = identity_defects(hess.values().iter());
    checks.push(check("trace identity, random-field Hessians", t, IDENTITY_TOL));
    checks.push(check("trace-free identity, random-field Hessians", f, IDENTITY_TOL));

    let z = Sym2::ZERO;
    checks.push(check(
        "both identities, zero matrix",
        trace_identity_defect(&z).abs().max(tracefree_identity_defect(&z).abs()),
        0.0,
    ));

    let saddle = ScalarField::from_fn(d, |x, y| 0.5 * (x * x - y * y));
    let data = ConstraintData::constant(d, -1.0).expect("finite k");
    checks.push(check(
        "saddle feasible for k = -1",
        constraint(&saddle, &data).max_abs(),
        IDENTITY_TOL,
    ));
    let tf_err = tracefree(&hessian(&saddle))
        .values()
        .iter()
        .map(|a| (*a - Sym2::new(1.0, 0.0, -1.0)).max_abs_entry())
        .fold(0.0, f64::max);
    checks.push(check("saddle trace-free part is diag(1, -1)", tf_err, IDENTITY_TOL));
    let area = d.interior_area();
    checks.push(check(
        "saddle energy is 2 x interior area",
        (energy(&saddle) - 2.0 * area).abs() / (2.0 * area),
        IDENTITY_TOL,
    ));

    let passed = checks.iter().all(|c| c.passed);
    IdentityReport {
        seed,
        checks,
        passed,
    }
}
