//! Strictly elliptic Dirichlet problems `A(x) : D2 u = f` with `u = 0` on the
//! boundary.
//!
//! The operator is in non-divergence form, so the assembled matrix is not
//! symmetric. Unknowns are the interior nodes in interior storage order,
//! which gives a band of half-width `ny - 1`; the default solver is a banded
//! LU factorization with partial pivoting. BiCGSTAB with a Jacobi
//! preconditioner is available as a fallback.

use crate::error::{Error, Result};
use crate::grid::{contraction_stencil, GridDomain, ScalarField, SymMatrixField};

/// Square banded matrix with room for the fill-in of partial pivoting.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + j + self.kl - i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// Adds `value` at `(i, j)`; panics outside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band"
        );
        let s = self.slot(i, j);
        self.data[s] += value;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// LU factorization with partial pivoting (row interchanges within the band).
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * n as f64;
        let mut piv = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let ucol = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last {
                let a = self.data[self.slot(i, k)].abs();
                if a > best {
                    best = a;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::SingularSystem(format!("zero pivot in column {k}")));
            }
            piv[k] = p;
            if p != k {
                for j in k..=ucol {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot_start = self.slot(k, k);
            let pivot = self.data[pivot_start];
            let len = ucol - k;
            for i in k + 1..=last {
                let s = self.slot(i, k);
                let l = self.data[s] / pivot;
                self.data[s] = l;
                if l == 0.0 {
                    continue;
                }
                // Row k occupies an earlier stretch of `data` than row i.
                let (head, tail) = self.data.split_at_mut(i * w);
                let urow = &head[pivot_start + 1..pivot_start + 1 + len];
                let row = &mut tail[s - i * w + 1..s - i * w + 1 + len];
                for (r, u) in row.iter_mut().zip(urow) {
                    *r -= l * u;
                }
            }
        }
        Ok(BandLu { band: self, piv })
    }
}

/// Banded LU factors; solves are read-only and may run concurrently.
#[derive(Clone, Debug)]
pub struct BandLu {
    band: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.band.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let BandMatrix { n, kl, ku, .. } = self.band;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for (i, bi) in b.iter_mut().enumerate().take((k + kl).min(n - 1) + 1).skip(k + 1) {
                    *bi -= self.band.data[self.band.slot(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let ucol = (k + kl + ku).min(n - 1);
            let start = self.band.slot(k, k);
            let row = &self.band.data[start + 1..start + 1 + (ucol - k)];
            let s: f64 = row.iter().zip(&b[k + 1..=ucol]).map(|(a, x)| a * x).sum();
            b[k] = (b[k] - s) / self.band.data[start];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Linear solver used by [`EllipticOperator::solve_dirichlet_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum LinearMethod {
    #[default]
    BandedLu,
    BiCgStab { tol: f64, max_iter: usize },
}


/// Solution of a Dirichlet problem with its interior residual.
#[derive(Clone, Debug)]
pub struct DirichletSolution {
    pub u: ScalarField,
    /// `max |A : D2 u - f|` over interior nodes.
    pub residual_inf: f64,
}

/// `u -> A : D2 u` on interior nodes with zero Dirichlet data.
#[derive(Clone, Debug)]
pub struct EllipticOperator {
    coeff: SymMatrixField,
    ellipticity_constant: f64,
    matrix: BandMatrix,
}

impl EllipticOperator {
    /// Assembles the interior matrix; fails with `NotElliptic` at the first
    /// node whose coefficient has a non-positive eigenvalue.
    pub fn assemble(coeff: &SymMatrixField) -> Result<Self> {
        let (node, ellipticity_constant) = coeff.min_eigenvalue();
        if !(ellipticity_constant > 0.0) {
            let d = coeff.domain();
            let first_bad = d
                .interior_nodes()
                .zip(coeff.values())
                .find(|(_, a)| !(a.min_eigenvalue() > 0.0))
                .map(|(n, a)| (n, a.min_eigenvalue()))
                .unwrap_or((node, ellipticity_constant));
            return Err(Error::NotElliptic {
                node: Some(first_bad.0),
                value: first_bad.1,
            });
        }
        let d = *coeff.domain();
        let band = d.ny() - 1;
        let mut matrix = BandMatrix::zeros(d.interior_len(), band, band);
        for ((i, j), a) in d.interior_nodes().zip(coeff.values()) {
            let row = d.interior_index(i, j);
            let w = contraction_stencil(a, d.hx(), d.hy());
            for (di, wrow) in w.iter().enumerate() {
                for (dj, &wij) in wrow.iter().enumerate() {
                    let (ni, nj) = (i + di - 1, j + dj - 1);
                    if !d.is_boundary(ni, nj) && wij != 0.0 {
                        matrix.add(row, d.interior_index(ni, nj), wij);
                    }
                }
            }
        }
        Ok(Self {
            coeff: coeff.clone(),
            ellipticity_constant,
            matrix,
        })
    }

    pub fn domain(&self) -> &GridDomain {
        self.coeff.domain()
    }

    pub fn coeff(&self) -> &SymMatrixField {
        &self.coeff
    }

    /// Minimum nodal eigenvalue of the coefficient field.
    pub fn ellipticity_constant(&self) -> f64 {
        self.ellipticity_constant
    }

    /// Assembled interior matrix (boundary unknowns eliminated).
    pub fn matrix(&self) -> &BandMatrix {
        &self.matrix
    }

    /// `A : D2 u` at interior nodes, boundary values of `u` included.
    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        crate::grid::frobenius(&self.coeff, &crate::grid::hessian(u))
    }

    pub fn factor(&self) -> Result<BandLu> {
        self.matrix.clone().factor()
    }

    pub fn solve_dirichlet(&self, f: &ScalarField) -> Result<DirichletSolution> {
        self.solve_dirichlet_with(f, LinearMethod::BandedLu)
    }

    pub fn solve_dirichlet_with(
        &self,
        f: &ScalarField,
        method: LinearMethod,
    ) -> Result<DirichletSolution> {
        let d = *self.domain();
        assert_eq!(d, *f.domain(), "right-hand side lives on a different grid");
        let rhs = f.interior_values();
        let x = match method {
            LinearMethod::BandedLu => self.factor()?.solve(&rhs),
            LinearMethod::BiCgStab { tol, max_iter } => {
                bicgstab(&self.matrix, &rhs, tol, max_iter)?
            }
        };
        let u = ScalarField::from_interior(d, &x);
        let residual_inf = (&self.apply(&u) - f).max_abs_interior();
        Ok(DirichletSolution { u, residual_inf })
    }
}

pub fn assemble(coeff: &SymMatrixField) -> Result<EllipticOperator> {
    EllipticOperator::assemble(coeff)
}

pub fn solve_dirichlet(op: &EllipticOperator, f: &ScalarField) -> Result<DirichletSolution> {
    op.solve_dirichlet(f)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned BiCGSTAB.
pub fn bicgstab(a: &BandMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d != 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&diag).map(|(x, d)| x * d).collect() };
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut rel = 1.0;
    for _ in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        let phat = precond(&p);
        v = a.matvec(&phat);
        let denom = dot(&r0, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        let shat = precond(&s);
        let t = a.matvec(&shat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for k in 0..n {
            x[k] += alpha * phat[k] + omega * shat[k];
            r[k] = s[k] - omega * t[k];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if !rel.is_finite() {
            break;
        }
        if rel <= tol {
            return Ok(x);
        }
    }
    Err(Error::Diverged {
        iterations: max_iter,
        residual: rel,
    })
}
