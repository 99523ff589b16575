//! Uniform rectangular grids, nodal fields and the discrete differential
//! operators everything else is assembled from.
//!
//! Nodes are indexed by `(i, j)` with `i` along the first axis and `j` along
//! the second; node `(i, j)` sits at `(i * hx, j * hy)`. Values are stored
//! row-major, so the flat index is `i * ny + j`.
//!
//! Hessian-valued quantities only live on interior nodes
//! (`1..nx-1 x 1..ny-1`). Scalar quantities derived from them are stored as
//! full [`ScalarField`]s that are zero on the boundary ring.
//!
//! Two inner products are used throughout:
//!
//! * the quadrature product of interior quantities,
//!   `<f, g>_quad = hx * hy * sum_{interior} f g` (and `A : B` for matrices);
//! * the nodal product `<f, g> = hx * hy * sum_{all nodes} f g`.
//!
//! [`divdiv_adjoint`] is the adjoint of [`hessian`] between the two, which
//! with these weights is the plain transpose of the stencil.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Smallest admissible node count per axis.
pub const MIN_NODES: usize = 5;

/// Uniform discretization of the rectangle `[0, extent_x] x [0, extent_y]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridDomain {
    extent_x: f64,
    extent_y: f64,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
}

impl GridDomain {
    pub fn new(extent_x: f64, extent_y: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx < MIN_NODES || ny < MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_NODES} nodes per axis, got {nx} x {ny}"
            )));
        }
        if !(extent_x.is_finite() && extent_x > 0.0 && extent_y.is_finite() && extent_y > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "extents must be positive and finite, got {extent_x} x {extent_y}"
            )));
        }
        Ok(Self {
            extent_x,
            extent_y,
            nx,
            ny,
            hx: extent_x / (nx - 1) as f64,
            hy: extent_y / (ny - 1) as f64,
        })
    }

    /// `n x n` nodes on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(1.0, 1.0, n, n)
    }

    pub fn extent_x(&self) -> f64 {
        self.extent_x
    }

    pub fn extent_y(&self) -> f64 {
        self.extent_y
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Area of one grid cell, the quadrature weight.
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Area of the plate.
    pub fn area(&self) -> f64 {
        self.extent_x * self.extent_y
    }

    /// Measure seen by [`integrate`]: `(nx - 2)(ny - 2) hx hy`.
    pub fn interior_area(&self) -> f64 {
        self.interior_len() as f64 * self.cell_area()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of interior nodes.
    pub fn interior_len(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    /// Flat index of interior node `(i, j)` among interior nodes.
    #[inline]
    pub fn interior_index(&self, i: usize, j: usize) -> usize {
        (i - 1) * (self.ny - 2) + (j - 1)
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Distance of node `(i, j)` to the boundary ring, in nodes.
    #[inline]
    pub fn ring(&self, i: usize, j: usize) -> usize {
        i.min(j).min(self.nx - 1 - i).min(self.ny - 1 - j)
    }

    /// Interior nodes in storage order.
    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.nx - 1).flat_map(move |i| (1..self.ny - 1).map(move |j| (i, j)))
    }

    /// All nodes in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nx).flat_map(move |i| (0..self.ny).map(move |j| (i, j)))
    }

    /// Boundary nodes in storage order.
    pub fn boundary_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes().filter(move |&(i, j)| self.is_boundary(i, j))
    }
}

/// Nodal values of a scalar function on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    domain: GridDomain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                domain.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { domain, values })
    }

    pub(crate) fn from_vec_unchecked(domain: GridDomain, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), domain.len());
        Self { domain, values }
    }

    pub fn zeros(domain: GridDomain) -> Self {
        Self::from_vec_unchecked(domain, vec![0.0; domain.len()])
    }

    pub fn constant(domain: GridDomain, c: f64) -> Self {
        Self::from_vec_unchecked(domain, vec![c; domain.len()])
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(domain: GridDomain, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = domain
            .nodes()
            .map(|(i, j)| {
                let (x, y) = domain.coords(i, j);
                f(x, y)
            })
            .collect();
        Self::from_vec_unchecked(domain, values)
    }

    /// Builds a field that is `f` at interior nodes and zero on the boundary.
    pub fn from_interior(domain: GridDomain, interior: &[f64]) -> Self {
        assert_eq!(interior.len(), domain.interior_len());
        let mut values = vec![0.0; domain.len()];
        for (p, (i, j)) in domain.interior_nodes().enumerate() {
            values[domain.index(i, j)] = interior[p];
        }
        Self::from_vec_unchecked(domain, values)
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.domain.index(i, j)]
    }

    /// Interior values in interior storage order.
    pub fn interior_values(&self) -> Vec<f64> {
        self.domain
            .interior_nodes()
            .map(|(i, j)| self.get(i, j))
            .collect()
    }

    /// Copy with the boundary ring set to zero.
    pub fn with_zero_boundary(&self) -> Self {
        let mut out = self.clone();
        for (i, j) in self.domain.boundary_nodes() {
            out.values[self.domain.index(i, j)] = 0.0;
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec_unchecked(self.domain, self.values.iter().map(|&v| f(v)).collect())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.domain, other.domain, "fields live on different grids");
        Self::from_vec_unchecked(
            self.domain,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// `self + t * dir`.
    pub fn axpy(&self, t: f64, dir: &Self) -> Self {
        self.zip_with(dir, |a, b| a + t * b)
    }

    /// Pointwise product.
    pub fn mul_pointwise(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    /// Nodal inner product `hx hy sum_{all nodes} f g`.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.domain, other.domain, "fields live on different grids");
        self.domain.cell_area()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Quadrature inner product over interior nodes only.
    pub fn dot_interior(&self, other: &Self) -> f64 {
        integrate(&self.mul_pointwise(other))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_interior(&self) -> f64 {
        self.domain
            .interior_nodes()
            .fold(0.0_f64, |m, (i, j)| m.max(self.get(i, j).abs()))
    }

    /// Maximum over nodes at least `ring` nodes away from the boundary.
    pub fn max_abs_beyond_ring(&self, ring: usize) -> f64 {
        self.domain
            .nodes()
            .filter(|&(i, j)| self.domain.ring(i, j) >= ring)
            .fold(0.0_f64, |m, (i, j)| m.max(self.get(i, j).abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: Self) -> ScalarField {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: Self) -> ScalarField {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: f64) -> ScalarField {
        self.map(|a| a * rhs)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|a| -a)
    }
}

/// Symmetric 2x2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2::new(0.0, 0.0, 0.0);
    pub const IDENTITY: Sym2 = Sym2::new(1.0, 0.0, 1.0);

    pub const fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    /// `cof [[a, b], [b, c]] = [[c, -b], [-b, a]]`.
    pub fn cofactor(&self) -> Self {
        Self::new(self.a22, -self.a12, self.a11)
    }

    /// `A - (tr A / 2) I`.
    pub fn tracefree(&self) -> Self {
        let half = 0.5 * self.trace();
        Self::new(self.a11 - half, self.a12, self.a22 - half)
    }

    /// Frobenius contraction `A : B`.
    pub fn contract(&self, other: &Self) -> f64 {
        self.a11 * other.a11 + 2.0 * self.a12 * other.a12 + self.a22 * other.a22
    }

    /// `|A|^2 = A : A`.
    pub fn norm_sq(&self) -> f64 {
        self.contract(self)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(s * self.a11, s * self.a12, s * self.a22)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let half_tr = 0.5 * self.trace();
        let half_diff = 0.5 * (self.a11 - self.a22);
        half_tr - half_diff.hypot(self.a12)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.a11.abs().max(self.a12.abs()).max(self.a22.abs())
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, rhs: Sym2) -> Sym2 {
        Sym2::new(self.a11 + rhs.a11, self.a12 + rhs.a12, self.a22 + rhs.a22)
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, rhs: Sym2) -> Sym2 {
        Sym2::new(self.a11 - rhs.a11, self.a12 - rhs.a12, self.a22 - rhs.a22)
    }
}

/// Symmetric matrix per interior node, in interior storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrixField {
    domain: GridDomain,
    values: Vec<Sym2>,
}

impl SymMatrixField {
    pub fn new(domain: GridDomain, values: Vec<Sym2>) -> Result<Self> {
        if values.len() != domain.interior_len() {
            return Err(Error::InvalidField(format!(
                "expected {} interior matrices, got {}",
                domain.interior_len(),
                values.len()
            )));
        }
        Ok(Self { domain, values })
    }

    pub fn constant(domain: GridDomain, m: Sym2) -> Self {
        Self {
            domain,
            values: vec![m; domain.interior_len()],
        }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[Sym2] {
        &self.values
    }

    /// Matrix at interior node `(i, j)`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Sym2 {
        self.values[self.domain.interior_index(i, j)]
    }

    pub fn map(&self, f: impl Fn(&Sym2) -> Sym2) -> Self {
        Self {
            domain: self.domain,
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Nodewise scalar, returned as a field with zero boundary.
    pub fn map_scalar(&self, f: impl Fn(&Sym2) -> f64) -> ScalarField {
        let interior: Vec<f64> = self.values.iter().map(f).collect();
        ScalarField::from_interior(self.domain, &interior)
    }

    /// Nodewise product with the interior values of `s`.
    pub fn scale_by(&self, s: &ScalarField) -> Self {
        assert_eq!(self.domain, *s.domain(), "fields live on different grids");
        Self {
            domain: self.domain,
            values: self
                .domain
                .interior_nodes()
                .zip(&self.values)
                .map(|((i, j), m)| m.scale(s.get(i, j)))
                .collect(),
        }
    }

    /// Smallest nodal eigenvalue together with its node.
    pub fn min_eigenvalue(&self) -> ((usize, usize), f64) {
        self.domain
            .interior_nodes()
            .zip(&self.values)
            .map(|(node, m)| (node, m.min_eigenvalue()))
            .fold(((1, 1), f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            })
    }
}

/// Discrete Hessian at interior nodes: three-point second differences and
/// the four-point cross stencil.
pub fn hessian(v: &ScalarField) -> SymMatrixField {
    let d = *v.domain();
    let (ihx2, ihy2) = (1.0 / (d.hx * d.hx), 1.0 / (d.hy * d.hy));
    let ihxy = 1.0 / (4.0 * d.hx * d.hy);
    let values = d
        .interior_nodes()
        .map(|(i, j)| {
            let c = v.get(i, j);
            Sym2::new(
                (v.get(i + 1, j) - 2.0 * c + v.get(i - 1, j)) * ihx2,
                (v.get(i + 1, j + 1) - v.get(i + 1, j - 1) - v.get(i - 1, j + 1)
                    + v.get(i - 1, j - 1))
                    * ihxy,
                (v.get(i, j + 1) - 2.0 * c + v.get(i, j - 1)) * ihy2,
            )
        })
        .collect();
    SymMatrixField { domain: d, values }
}

/// Five-point Laplacian, zero on the boundary ring.
pub fn laplacian(v: &ScalarField) -> ScalarField {
    hessian(v).map_scalar(Sym2::trace)
}

/// `laplacian(laplacian(v))`, kept on nodes at least two away from the
/// boundary and zero elsewhere.
pub fn biharmonic(v: &ScalarField) -> ScalarField {
    let d = *v.domain();
    let inner = laplacian(&laplacian(v));
    let values = d
        .nodes()
        .map(|(i, j)| if d.ring(i, j) >= 2 { inner.get(i, j) } else { 0.0 })
        .collect();
    ScalarField::from_vec_unchecked(d, values)
}

pub fn cofactor(m: &SymMatrixField) -> SymMatrixField {
    m.map(Sym2::cofactor)
}

pub fn det2(m: &SymMatrixField) -> ScalarField {
    m.map_scalar(Sym2::det)
}

pub fn frobenius(m: &SymMatrixField, n: &SymMatrixField) -> ScalarField {
    assert_eq!(m.domain, n.domain, "fields live on different grids");
    let interior: Vec<f64> = m
        .values
        .iter()
        .zip(&n.values)
        .map(|(a, b)| a.contract(b))
        .collect();
    ScalarField::from_interior(m.domain, &interior)
}

pub fn tracefree(m: &SymMatrixField) -> SymMatrixField {
    m.map(Sym2::tracefree)
}

/// `hx hy` times the sum over interior nodes.
pub fn integrate(f: &ScalarField) -> f64 {
    f.domain().cell_area()
        * f.domain()
            .interior_nodes()
            .map(|(i, j)| f.get(i, j))
            .sum::<f64>()
}

/// Quadrature inner product of two matrix fields.
pub fn contract_quad(m: &SymMatrixField, n: &SymMatrixField) -> f64 {
    assert_eq!(m.domain, n.domain, "fields live on different grids");
    m.domain.cell_area()
        * m.values
            .iter()
            .zip(&n.values)
            .map(|(a, b)| a.contract(b))
            .sum::<f64>()
}

/// Stencil weights of `A : hessian(.)` at one node, indexed `[di + 1][dj + 1]`.
pub fn contraction_stencil(a: &Sym2, hx: f64, hy: f64) -> [[f64; 3]; 3] {
    let wx = a.a11 / (hx * hx);
    let wy = a.a22 / (hy * hy);
    let wxy = 2.0 * a.a12 / (4.0 * hx * hy);
    [
        [wxy, wx, -wxy],
        [wy, -2.0 * wx - 2.0 * wy, wy],
        [-wxy, wx, wxy],
    ]
}

/// Adjoint of [`hessian`]: `<M, hessian(h)>_quad = <divdiv_adjoint(M), h>`
/// for every nodal `h`.
pub fn divdiv_adjoint(m: &SymMatrixField) -> ScalarField {
    let d = m.domain;
    let mut out = vec![0.0; d.len()];
    for ((i, j), a) in d.interior_nodes().zip(&m.values) {
        let w = contraction_stencil(a, d.hx, d.hy);
        for (di, row) in w.iter().enumerate() {
            for (dj, &wij) in row.iter().enumerate() {
                out[d.index(i + di - 1, j + dj - 1)] += wij;
            }
        }
    }
    ScalarField::from_vec_unchecked(d, out)
}
