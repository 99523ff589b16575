//! Bending energy, the Monge-Ampere constraint map and its linearization,
//! the closed-form minimizers for constant `k`, and affine normalization.
//!
//! Multiplier sign convention: a stationary `v` satisfies
//! `<D2 v, D2 h> = <lambda cof D2 v, D2 h>` for all `h`, i.e. the strong form
//! `Delta^2 v = cof D2 v : D2 lambda`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    cofactor, det2, divdiv_adjoint, frobenius, hessian, integrate, GridDomain, ScalarField,
    Sym2,
};

/// Default infinity-norm threshold for the feasibility-dependent identities.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-6;

/// How the curvature datum `k` is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KSpec {
    Constant(f64),
    /// `sum coeff * x^i * y^j` over `(i, j, coeff)`.
    Poly(Vec<(u32, u32, f64)>),
}

impl KSpec {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            KSpec::Constant(c) => *c,
            KSpec::Poly(terms) => terms
                .iter()
                .map(|&(i, j, c)| c * x.powi(i as i32) * y.powi(j as i32))
                .sum(),
        }
    }

    pub fn sample(&self, domain: GridDomain) -> Result<ConstraintData> {
        ConstraintData::new(ScalarField::new(
            domain,
            ScalarField::from_fn(domain, |x, y| self.eval(x, y)).into_values(),
        )?)
    }
}

/// Nodal samples of `k` with the cached minimum.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintData {
    k: ScalarField,
    k_min: f64,
}

impl ConstraintData {
    pub fn new(k: ScalarField) -> Result<Self> {
        let k = ScalarField::new(*k.domain(), k.into_values())?;
        let k_min = k.min();
        Ok(Self { k, k_min })
    }

    pub fn constant(domain: GridDomain, k: f64) -> Result<Self> {
        Self::new(ScalarField::constant(domain, k))
    }

    pub fn k(&self) -> &ScalarField {
        &self.k
    }

    pub fn k_min(&self) -> f64 {
        self.k_min
    }

    pub fn domain(&self) -> &GridDomain {
        self.k.domain()
    }

    /// The common value if every node carries the same `k`.
    pub fn constant_value(&self) -> Option<f64> {
        let first = self.k.values()[0];
        self.k.values().iter().all(|&v| v == first).then_some(first)
    }

    pub fn is_identically_zero(&self) -> bool {
        self.k.values().iter().all(|&v| v == 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.k.mean()
    }
}

/// Which closed-form minimizer to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// `sqrt(k)/2 |x|^2`, for `k >= 0`.
    Elliptic,
    /// `sqrt(|k|)/2 (x^2 - y^2)`, for `k <= 0`.
    Hyperbolic,
}

/// `integrate(|D2 v|^2)`.
pub fn energy(v: &ScalarField) -> f64 {
    let h = hessian(v);
    integrate(&frobenius(&h, &h))
}

/// Nodal gradient of [`energy`]: `2 divdiv_adjoint(hessian(v))`.
pub fn energy_gradient(v: &ScalarField) -> ScalarField {
    &divdiv_adjoint(&hessian(v)) * 2.0
}

/// `det D2 v - k` on interior nodes.
pub fn constraint(v: &ScalarField, data: &ConstraintData) -> ScalarField {
    (&det2(&hessian(v)) - data.k()).with_zero_boundary()
}

/// `cof D2 v : D2 h` on interior nodes.
pub fn constraint_jacobian_apply(v: &ScalarField, h: &ScalarField) -> ScalarField {
    frobenius(&cofactor(&hessian(v)), &hessian(h))
}

/// Adjoint of [`constraint_jacobian_apply`] with respect to the quadrature
/// product on interior values of `mu` and the nodal product on the output.
pub fn constraint_jacobian_transpose_apply(v: &ScalarField, mu: &ScalarField) -> ScalarField {
    divdiv_adjoint(&cofactor(&hessian(v)).scale_by(mu))
}

fn check_feasible(v: &ScalarField, data: &ConstraintData, tol: f64) -> Result<()> {
    let residual = constraint(v, data).max_abs_interior();
    if residual > tol {
        return Err(Error::FeasibilityViolated {
            residual,
            tolerance: tol,
        });
    }
    Ok(())
}

/// `integrate((Delta v)^2 - 2k)`; equals [`energy`] on feasible fields.
pub fn energy_identity_laplacian(v: &ScalarField, data: &ConstraintData, tol: f64) -> Result<f64> {
    check_feasible(v, data, tol)?;
    let h = hessian(v);
    let d = *v.domain();
    let integrand: Vec<f64> = d
        .interior_nodes()
        .zip(h.values())
        .map(|((i, j), a)| a.trace().powi(2) - 2.0 * data.k().get(i, j))
        .collect();
    Ok(integrate(&ScalarField::from_interior(d, &integrand)))
}

/// `2 integrate(|D2 v - (Delta v / 2) I|^2 + k)`; equals [`energy`] on
/// feasible fields.
pub fn energy_identity_tracefree(v: &ScalarField, data: &ConstraintData, tol: f64) -> Result<f64> {
    check_feasible(v, data, tol)?;
    let h = hessian(v);
    let d = *v.domain();
    let integrand: Vec<f64> = d
        .interior_nodes()
        .zip(h.values())
        .map(|((i, j), a)| a.tracefree().norm_sq() + data.k().get(i, j))
        .collect();
    Ok(2.0 * integrate(&ScalarField::from_interior(d, &integrand)))
}

/// Closed-form minimizer for constant `k`.
pub fn analytic_minimizer(data: &ConstraintData, branch: Branch) -> Result<ScalarField> {
    let k = data.constant_value().ok_or(Error::NonConstantK)?;
    analytic_minimizer_for(*data.domain(), k, branch)
}

pub(crate) fn analytic_minimizer_for(
    domain: GridDomain,
    k: f64,
    branch: Branch,
) -> Result<ScalarField> {
    let s = 0.5 * k.abs().sqrt();
    match branch {
        Branch::Elliptic if k < 0.0 => Err(Error::SignMismatch {
            branch: "elliptic",
            k,
        }),
        Branch::Hyperbolic if k > 0.0 => Err(Error::SignMismatch {
            branch: "hyperbolic",
            k,
        }),
        _ if k == 0.0 => Ok(ScalarField::zeros(domain)),
        Branch::Elliptic => Ok(ScalarField::from_fn(domain, |x, y| s * (x * x + y * y))),
        Branch::Hyperbolic => Ok(ScalarField::from_fn(domain, |x, y| s * (x * x - y * y))),
    }
}

/// Mean of the centered-difference gradient over interior nodes.
fn mean_gradient(v: &ScalarField) -> (f64, f64) {
    let d = v.domain();
    let (mut gx, mut gy) = (0.0, 0.0);
    for (i, j) in d.interior_nodes() {
        gx += (v.get(i + 1, j) - v.get(i - 1, j)) / (2.0 * d.hx());
        gy += (v.get(i, j + 1) - v.get(i, j - 1)) / (2.0 * d.hy());
    }
    let n = d.interior_len() as f64;
    (gx / n, gy / n)
}

/// Removes the affine part: the result has zero nodal mean and zero mean
/// centered-difference gradient.
pub fn normalize(v: &ScalarField) -> ScalarField {
    let d = *v.domain();
    let (bx, by) = mean_gradient(v);
    let tilted = ScalarField::from_vec_unchecked(
        d,
        d.nodes()
            .map(|(i, j)| {
                let (x, y) = d.coords(i, j);
                v.get(i, j) - bx * x - by * y
            })
            .collect(),
    );
    let mean = tilted.mean();
    tilted.map(|a| a - mean)
}

/// Pointwise `|A|^2 - (tr A)^2 + 2 det A`.
pub fn trace_identity_defect(a: &Sym2) -> f64 {
    a.norm_sq() - a.trace().powi(2) + 2.0 * a.det()
}

/// Pointwise `|A|^2 - 2 |A°|^2 - 2 det A`.
pub fn tracefree_identity_defect(a: &Sym2) -> f64 {
    a.norm_sq() - 2.0 * a.tracefree().norm_sq() - 2.0 * a.det()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::laplacian;

    fn grid(n: usize) -> GridDomain {
        GridDomain::unit_square(n).unwrap()
    }

    fn paraboloid(d: GridDomain) -> ScalarField {
        ScalarField::from_fn(d, |x, y| 0.5 * (x * x + y * y))
    }

    fn saddle(d: GridDomain) -> ScalarField {
        ScalarField::from_fn(d, |x, y| 0.5 * (x * x - y * y))
    }

    #[test]
    fn energy_of_closed_forms() {
        let d = grid(17);
        let area = d.interior_area();
        assert!((energy(&paraboloid(d)) - 2.0 * area).abs() < 1e-12);
        assert!((energy(&saddle(d)) - 2.0 * area).abs() < 1e-12);
        assert!(energy(&ScalarField::from_fn(d, |x, y| 1.0 + 2.0 * x - y)) < 1e-20);
    }

    #[test]
    fn energy_gradient_of_zero_is_zero() {
        let d = grid(9);
        assert_eq!(energy_gradient(&ScalarField::zeros(d)).max_abs(), 0.0);
    }

    #[test]
    fn constraint_examples() {
        let d = grid(17);
        let one = ConstraintData::constant(d, 1.0).unwrap();
        let minus_one = ConstraintData::constant(d, -1.0).unwrap();
        assert!(constraint(&paraboloid(d), &one).max_abs() < 1e-12);
        assert!(constraint(&saddle(d), &minus_one).max_abs() < 1e-12);
        let c = constraint(&ScalarField::zeros(d), &one);
        assert!(d.interior_nodes().all(|(i, j)| c.get(i, j) == -1.0));
        assert!(d.boundary_nodes().all(|(i, j)| c.get(i, j) == 0.0));
    }

    #[test]
    fn jacobian_at_paraboloid_is_the_laplacian() {
        let d = grid(9);
        let v = paraboloid(d);
        let h = ScalarField::from_fn(d, |x, y| (2.0 * x).sin() * y * y);
        let diff = &constraint_jacobian_apply(&v, &h) - &laplacian(&h);
        assert!(diff.max_abs() < 1e-9);
        let xy = ScalarField::from_fn(d, |x, y| x * y);
        assert!(constraint_jacobian_apply(&v, &xy).max_abs() < 1e-12);
        let j = constraint_jacobian_apply(&v, &v);
        assert!(d.interior_nodes().all(|(i, j_)| (j.get(i, j_) - 2.0).abs() < 1e-12));
    }

    #[test]
    fn transpose_examples() {
        let d = grid(9);
        let v = paraboloid(d);
        assert_eq!(
            constraint_jacobian_transpose_apply(&v, &ScalarField::zeros(d)).max_abs(),
            0.0
        );
        let ones = ScalarField::constant(d, 1.0);
        let lhs = constraint_jacobian_transpose_apply(&v, &ones);
        let rhs = divdiv_adjoint(&hessian(&v));
        assert!((&lhs - &rhs).max_abs() <= 1e-12 * rhs.max_abs());
    }

    #[test]
    fn identities_on_closed_forms() {
        let d = grid(17);
        for (v, k) in [(paraboloid(d), 1.0), (saddle(d), -1.0)] {
            let data = ConstraintData::constant(d, k).unwrap();
            let e = energy(&v);
            let lap = energy_identity_laplacian(&v, &data, DEFAULT_FEASIBILITY_TOL).unwrap();
            let tf = energy_identity_tracefree(&v, &data, DEFAULT_FEASIBILITY_TOL).unwrap();
            assert!((lap - e).abs() <= 1e-10 * e);
            assert!((tf - e).abs() <= 1e-10 * e);
        }
        let a = Sym2::new(1.0, 0.0, 2.0);
        assert_eq!(a.norm_sq(), 5.0);
        assert_eq!(a.trace().powi(2) - 2.0 * a.det(), 5.0);
        assert_eq!(trace_identity_defect(&a), 0.0);
    }

    #[test]
    fn identities_reject_infeasible_fields() {
        let d = grid(9);
        let data = ConstraintData::constant(d, 2.0).unwrap();
        let err = energy_identity_laplacian(&paraboloid(d), &data, DEFAULT_FEASIBILITY_TOL);
        assert!(matches!(err, Err(Error::FeasibilityViolated { .. })));
        let err = energy_identity_tracefree(&paraboloid(d), &data, DEFAULT_FEASIBILITY_TOL);
        assert!(matches!(err, Err(Error::FeasibilityViolated { .. })));
    }

    #[test]
    fn analytic_minimizers() {
        let d = grid(9);
        let v = analytic_minimizer(&ConstraintData::constant(d, 1.0).unwrap(), Branch::Elliptic)
            .unwrap();
        assert!((&v - &paraboloid(d)).max_abs() < 1e-15);
        let v = analytic_minimizer(
            &ConstraintData::constant(d, -1.0).unwrap(),
            Branch::Hyperbolic,
        )
        .unwrap();
        assert!((&v - &saddle(d)).max_abs() < 1e-15);
        let zero = ConstraintData::constant(d, 0.0).unwrap();
        assert_eq!(analytic_minimizer(&zero, Branch::Elliptic).unwrap().max_abs(), 0.0);
        assert_eq!(analytic_minimizer(&zero, Branch::Hyperbolic).unwrap().max_abs(), 0.0);

        let bad = ConstraintData::constant(d, -1.0).unwrap();
        assert!(matches!(
            analytic_minimizer(&bad, Branch::Elliptic),
            Err(Error::SignMismatch { .. })
        ));
        let bad = ConstraintData::constant(d, 4.0).unwrap();
        assert!(matches!(
            analytic_minimizer(&bad, Branch::Hyperbolic),
            Err(Error::SignMismatch { .. })
        ));
        let varying = KSpec::Poly(vec![(0, 0, 1.0), (1, 0, 0.5)]).sample(d).unwrap();
        assert!(matches!(
            analytic_minimizer(&varying, Branch::Elliptic),
            Err(Error::NonConstantK)
        ));
    }

    #[test]
    fn normalize_examples() {
        let d = grid(17);
        let affine = ScalarField::from_fn(d, |x, y| 3.0 - 2.0 * x + 0.5 * y);
        assert!(normalize(&affine).max_abs() < 1e-13);

        let v = normalize(&paraboloid(d));
        assert!(v.mean().abs() < 1e-13);
        let (gx, gy) = mean_gradient(&v);
        assert!(gx.abs() < 1e-13 && gy.abs() < 1e-13);

        let w = ScalarField::from_fn(d, |x, y| (3.0 * x).sin() + x * y * y);
        let once = normalize(&w);
        assert!((&normalize(&once) - &once).max_abs() < 1e-13);
        assert!((energy(&once) - energy(&w)).abs() <= 1e-13 * energy(&w));
    }

    #[test]
    fn k_spec_sampling() {
        let d = grid(5);
        let data = KSpec::Poly(vec![(0, 0, 1.0), (2, 1, 3.0)]).sample(d).unwrap();
        let (x, y) = d.coords(3, 2);
        assert!((data.k().get(3, 2) - (1.0 + 3.0 * x * x * y)).abs() < 1e-15);
        assert_eq!(data.k_min(), 1.0);
        assert_eq!(data.constant_value(), None);
        let c = KSpec::Constant(2.5).sample(d).unwrap();
        assert_eq!(c.constant_value(), Some(2.5));
        assert!(KSpec::Constant(f64::NAN).sample(d).is_err());
    }

    #[test]
    fn k_spec_json_shape() {
        let k: KSpec = serde_json::from_str(r#"{"constant": 1.5}"#).unwrap();
        assert_eq!(k, KSpec::Constant(1.5));
        let k: KSpec = serde_json::from_str(r#"{"poly": [[0, 0, 1.0], [1, 2, -0.5]]}"#).unwrap();
        assert_eq!(k, KSpec::Poly(vec![(0, 0, 1.0), (1, 2, -0.5)]));
    }
}
