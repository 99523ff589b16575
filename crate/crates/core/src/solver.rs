//! Constrained minimization of the bending energy on the convex branch of
//! `{det D2 v = k}`.
//!
//! Every accepted iterate is feasible: a trial point `v + t d` is pulled back
//! onto the constraint set by Newton's method for the Monge-Ampere equation
//! with the boundary values of the trial point ([`restore_feasibility`]).
//! The multiplier is recovered by least squares from the current iterate
//! ([`recover_multiplier`]) and the projected gradient measures stationarity
//! ([`tangent_step`]).
//!
//! The search direction is by default a reduced Newton step: the tangent
//! space of the constraint at `v` is parametrized by boundary values (the
//! interior follows from the linearized constraint), and the Lagrangian
//! Hessian is solved on it. The projected gradient is kept as a fallback
//! and as an option.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{
    analytic_minimizer_for, constraint, constraint_jacobian_apply,
    constraint_jacobian_transpose_apply, energy, normalize, Branch, ConstraintData,
};
use crate::grid::{
    cofactor, contraction_stencil, divdiv_adjoint, hessian, ScalarField, Sym2,
};
use crate::linsolve::{BandMatrix, EllipticOperator};

/// How the outer loop picks its search direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchDirection {
    #[default]
    ReducedNewton,
    ProjectedGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Infinity norm of `det D2 v - k` accepted as feasible.
    pub tol_constraint: f64,
    /// Quadrature norm of the projected gradient per unit area.
    pub tol_stationarity: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub initial_step: f64,
    pub backtracking: f64,
    pub min_step: f64,
    /// Minimum nodal Hessian eigenvalue of admissible iterates.
    pub convexity_margin: f64,
    pub direction: SearchDirection,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_constraint: 1e-9,
            tol_stationarity: 1e-6,
            max_outer: 500,
            max_newton: 30,
            initial_step: 1.0,
            backtracking: 0.5,
            min_step: 1e-10,
            convexity_margin: 1e-8,
            direction: SearchDirection::ReducedNewton,
        }
    }
}

impl SolverConfig {
    /// Checks the field invariants, naming the first offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = [
            ("tol_constraint", self.tol_constraint),
            ("tol_stationarity", self.tol_stationarity),
            ("initial_step", self.initial_step),
            ("min_step", self.min_step),
            ("convexity_margin", self.convexity_margin),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err((name, format!("must be positive, got {value}")));
            }
        }
        if !(self.backtracking > 0.0 && self.backtracking < 1.0) {
            return Err((
                "backtracking",
                format!("must lie in (0, 1), got {}", self.backtracking),
            ));
        }
        if self.max_newton == 0 {
            return Err(("max_newton", "must be at least 1".into()));
        }
        Ok(())
    }
}

/// One accepted iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub energy: f64,
    pub constraint_inf: f64,
    pub stationarity_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Normalized minimizer.
    pub v: ScalarField,
    /// Multiplier on interior nodes, zero on the boundary.
    pub lambda: ScalarField,
    pub energy: f64,
    pub constraint_inf: f64,
    pub stationarity_norm: f64,
    pub outer_iterations: usize,
    pub newton_iterations_total: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

/// Output of [`restore_feasibility`].
#[derive(Clone, Debug)]
pub struct Restoration {
    pub v: ScalarField,
    /// Constraint residual (infinity norm) before each Newton step and at the end.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn check_convexity(v: &ScalarField, margin: f64) -> Result<()> {
    let (node, min_eigenvalue) = hessian(v).min_eigenvalue();
    if min_eigenvalue < margin {
        return Err(Error::LostConvexity {
            node,
            min_eigenvalue,
        });
    }
    Ok(())
}

/// Newton's method for `det D2 v = k` with the boundary values of `v` held
/// fixed: solve `cof D2 v : D2 rho = k - det D2 v`, `rho = 0` on the
/// boundary, and update `v <- v + rho`. A step that breaks convexity is
/// halved a few times before giving up.
pub fn restore_feasibility(
    v: &ScalarField,
    data: &ConstraintData,
    cfg: &SolverConfig,
) -> Result<Restoration> {
    const MAX_DAMPING: usize = 6;
    check_convexity(v, cfg.convexity_margin)?;
    let mut v = v.clone();
    let mut r = constraint(&v, data);
    let mut res = r.max_abs_interior();
    let mut residuals = vec![res];
    let mut iterations = 0;
    while res > cfg.tol_constraint {
        if iterations == cfg.max_newton {
            return Err(Error::MaxNewtonIterations {
                iterations,
                residual: res,
            });
        }
        let op = EllipticOperator::assemble(&cofactor(&hessian(&v)))?;
        let rho = op.solve_dirichlet(&-&r)?.u;
        let mut t = 1.0;
        let mut accepted = None;
        let mut last_err = None;
        for _ in 0..MAX_DAMPING {
            let trial = v.axpy(t, &rho);
            match check_convexity(&trial, cfg.convexity_margin) {
                Ok(()) => {
                    accepted = Some(trial);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
            t *= 0.5;
        }
        v = match accepted {
            Some(trial) => trial,
            None => return Err(last_err.expect("damping loop ran")),
        };
        iterations += 1;
        r = constraint(&v, data);
        res = r.max_abs_interior();
        residuals.push(res);
    }
    Ok(Restoration {
        v,
        residuals,
        iterations,
    })
}

/// Least-squares multiplier and its residual.
#[derive(Clone, Debug)]
pub struct Multiplier {
    /// Interior values, zero on the boundary.
    pub lambda: ScalarField,
    /// `g - J^T lambda` with `g = energy_gradient(v) / 2`.
    pub residual: ScalarField,
    /// Nodal norm of `residual`.
    pub residual_norm: f64,
}

/// Solves `min |g - J^T lambda|` through the normal equations `J J^T lambda = J g`,
/// where `g = divdiv_adjoint(hessian(v))` and `J h = cof D2 v : D2 h`.
pub fn recover_multiplier(v: &ScalarField) -> Result<Multiplier> {
    let d = *v.domain();
    let (nxi, nyi) = (d.nx() - 2, d.ny() - 2);
    let cof = cofactor(&hessian(v));
    let stencils: Vec<[[f64; 3]; 3]> = cof
        .values()
        .iter()
        .map(|a| contraction_stencil(a, d.hx(), d.hy()))
        .collect();
    let band = 2 * nyi + 2;
    let mut normal = BandMatrix::zeros(d.interior_len(), band, band);
    for pi in 0..nxi {
        for pj in 0..nyi {
            let p = pi * nyi + pj;
            let wp = &stencils[p];
            for qi in pi.saturating_sub(2)..(pi + 3).min(nxi) {
                for qj in pj.saturating_sub(2)..(pj + 3).min(nyi) {
                    let q = qi * nyi + qj;
                    let wq = &stencils[q];
                    // Shared nodes n satisfy |n - p| <= 1 and |n - q| <= 1.
                    let (di, dj) = (qi as isize - pi as isize, qj as isize - pj as isize);
                    let mut s = 0.0;
                    for a in (-1isize).max(di - 1)..=1isize.min(di + 1) {
                        for b in (-1isize).max(dj - 1)..=1isize.min(dj + 1) {
                            s += wp[(a + 1) as usize][(b + 1) as usize]
                                * wq[(a - di + 1) as usize][(b - dj + 1) as usize];
                        }
                    }
                    if s != 0.0 {
                        normal.add(p, q, s);
                    }
                }
            }
        }
    }
    let g = divdiv_adjoint(&hessian(v));
    let rhs = constraint_jacobian_apply(v, &g).interior_values();
    let lu = normal
        .factor()
        .map_err(|_| Error::SingularNormalEquations)?;
    let lambda_int = lu.solve(&rhs);
    if lambda_int.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularNormalEquations);
    }
    let lambda = ScalarField::from_interior(d, &lambda_int);
    let residual = &g - &constraint_jacobian_transpose_apply(v, &lambda);
    let residual_norm = residual.norm();
    Ok(Multiplier {
        lambda,
        residual,
        residual_norm,
    })
}

/// Projected steepest-descent direction `h = -(g - J^T lambda)`.
#[derive(Clone, Debug)]
pub struct TangentStep {
    pub h: ScalarField,
    pub lambda: ScalarField,
    /// `|g - J^T lambda| / area`.
    pub stationarity_norm: f64,
}

pub fn tangent_step(v: &ScalarField) -> Result<TangentStep> {
    let m = recover_multiplier(v)?;
    Ok(TangentStep {
        h: -&m.residual,
        stationarity_norm: m.residual_norm / v.domain().area(),
        lambda: m.lambda,
    })
}

/// Newton step for the Lagrangian restricted to the tangent space of the
/// constraint at `v`. Returns `None` when the reduced Hessian cannot be
/// factored or the step is not a descent direction.
fn reduced_newton_direction(v: &ScalarField, lambda: &ScalarField) -> Result<Option<ScalarField>> {
    let d = *v.domain();
    let (nx, ny) = (d.nx(), d.ny());
    let op = EllipticOperator::assemble(&cofactor(&hessian(v)))?;
    let lu = op.factor()?;

    // Three pinned corners remove the affine directions.
    let pinned = [(0, 0), (nx - 1, 0), (0, ny - 1)];
    let free: Vec<(usize, usize)> = d
        .boundary_nodes()
        .filter(|node| !pinned.contains(node))
        .collect();

    let basis: Vec<ScalarField> = free
        .iter()
        .map(|&(bi, bj)| {
            let mut e = vec![0.0; d.len()];
            e[d.index(bi, bj)] = 1.0;
            let e = ScalarField::from_vec_unchecked(d, e);
            let rhs: Vec<f64> = op.apply(&e).interior_values().iter().map(|x| -x).collect();
            let interior = lu.solve(&rhs);
            &e + &ScalarField::from_interior(d, &interior)
        })
        .collect();

    // Columns hold D2 z and (D2 z - lambda cof D2 z) with the off-diagonal
    // doubled, so that the quadrature contraction becomes a dot product.
    let m = d.interior_len();
    let nb = basis.len();
    let mut hz = DMatrix::<f64>::zeros(3 * m, nb);
    let mut wz = DMatrix::<f64>::zeros(3 * m, nb);
    let lam = lambda.interior_values();
    for (c, z) in basis.iter().enumerate() {
        for (p, a) in hessian(z).values().iter().enumerate() {
            let w: Sym2 = *a - a.cofactor().scale(lam[p]);
            hz[(3 * p, c)] = a.a11;
            hz[(3 * p + 1, c)] = a.a12;
            hz[(3 * p + 2, c)] = a.a22;
            wz[(3 * p, c)] = w.a11;
            wz[(3 * p + 1, c)] = 2.0 * w.a12;
            wz[(3 * p + 2, c)] = w.a22;
        }
    }
    let mut reduced = wz.tr_mul(&hz) * d.cell_area();
    reduced = (&reduced + reduced.transpose()) * 0.5;

    let mut hv = DVector::<f64>::zeros(3 * m);
    for (p, a) in hessian(v).values().iter().enumerate() {
        hv[3 * p] = a.a11;
        hv[3 * p + 1] = 2.0 * a.a12;
        hv[3 * p + 2] = a.a22;
    }
    let grad = hz.tr_mul(&hv) * d.cell_area();

    let diag_max = reduced.diagonal().amax();
    let mut shift = 0.0;
    let mut step = None;
    for _ in 0..16 {
        let mut shifted = reduced.clone();
        for i in 0..nb {
            shifted[(i, i)] += shift;
        }
        if let Some(chol) = shifted.cholesky() {
            step = Some(chol.solve(&(-&grad)));
            break;
        }
        shift = if shift == 0.0 {
            1e-12 * diag_max
        } else {
            10.0 * shift
        };
    }
    let Some(step) = step else {
        return Ok(None);
    };
    if step.dot(&grad) >= 0.0 {
        return Ok(None);
    }
    let mut dir = vec![0.0; d.len()];
    for (z, s) in basis.iter().zip(step.iter()) {
        for (out, zi) in dir.iter_mut().zip(z.values()) {
            *out += s * zi;
        }
    }
    Ok(Some(ScalarField::from_vec_unchecked(d, dir)))
}

fn record(v: &ScalarField, data: &ConstraintData, stationarity_norm: f64) -> IterationRecord {
    IterationRecord {
        energy: energy(v),
        constraint_inf: constraint(v, data).max_abs_interior(),
        stationarity_norm,
    }
}

/// Minimizes the bending energy over feasible convex fields.
///
/// Starts from `v0` or, by default, from `sqrt(mean k)/2 |x|^2`; the start
/// is restored to feasibility first. For `k` identically zero the affine
/// functions are feasible with zero energy and the (normalized) zero field
/// is returned directly.
pub fn minimize(
    v0: Option<&ScalarField>,
    data: &ConstraintData,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let d = *data.domain();
    if let Some(v0) = v0 {
        assert_eq!(d, *v0.domain(), "start lives on a different grid");
    }
    if data.is_identically_zero() {
        let v = ScalarField::zeros(d);
        let rec = record(&v, data, 0.0);
        return Ok(SolveReport {
            lambda: ScalarField::zeros(d),
            energy: rec.energy,
            constraint_inf: rec.constraint_inf,
            stationarity_norm: 0.0,
            outer_iterations: 0,
            newton_iterations_total: 0,
            converged: true,
            history: vec![rec],
            v,
        });
    }
    if !(data.k_min() > 0.0) {
        return Err(Error::NotElliptic {
            node: None,
            value: data.k_min(),
        });
    }

    let start = match v0 {
        Some(v0) => v0.clone(),
        None => analytic_minimizer_for(d, data.mean(), Branch::Elliptic)?,
    };
    let restored = restore_feasibility(&start, data, cfg)?;
    let mut newton_total = restored.iterations;
    let mut v = normalize(&restored.v);
    let mut history = Vec::new();
    let mut outer = 0;

    loop {
        let step = tangent_step(&v)?;
        let rec = record(&v, data, step.stationarity_norm);
        history.push(rec);
        let mut report = SolveReport {
            v: v.clone(),
            lambda: step.lambda.clone(),
            energy: rec.energy,
            constraint_inf: rec.constraint_inf,
            stationarity_norm: rec.stationarity_norm,
            outer_iterations: outer,
            newton_iterations_total: newton_total,
            converged: false,
            history: history.clone(),
        };
        if rec.stationarity_norm <= cfg.tol_stationarity && rec.constraint_inf <= cfg.tol_constraint
        {
            report.converged = true;
            return Ok(report);
        }
        if outer == cfg.max_outer {
            return Err(Error::MaxOuterIterations(Box::new(report)));
        }

        let dir = match cfg.direction {
            SearchDirection::ReducedNewton => reduced_newton_direction(&v, &step.lambda)?,
            SearchDirection::ProjectedGradient => None,
        }
        .unwrap_or(step.h);

        let mut t = cfg.initial_step;
        let accepted = loop {
            if t < cfg.min_step {
                break None;
            }
            match restore_feasibility(&v.axpy(t, &dir), data, cfg) {
                Ok(r) => {
                    newton_total += r.iterations;
                    let trial = normalize(&r.v);
                    if energy(&trial) <= rec.energy {
                        break Some(trial);
                    }
                }
                Err(Error::LostConvexity { .. } | Error::MaxNewtonIterations { .. }) => {}
                Err(e) => return Err(e),
            }
            t *= cfg.backtracking;
        };
        match accepted {
            Some(next) => v = next,
            None => {
                report.newton_iterations_total = newton_total;
                return Err(Error::LineSearchStalled(Box::new(report)));
            }
        }
        outer += 1;
    }
}
