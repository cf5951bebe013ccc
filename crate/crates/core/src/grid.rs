//! Uniform node-centred 2-D grid with scalar, vector and density fields.
//!
//! Nodes are ordered row-major, `index = iy * nx + ix`. Quadrature is the
//! tensor trapezoidal rule, derivatives use central differences in the
//! interior and one-sided second-order stencils on the boundary.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Uniform rectangular grid of `nx * ny` nodes over `[x_min, x_max] x [y_min, y_max]` (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    nx: usize,
    ny: usize,
}

impl Grid2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        if ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("grid bounds must be finite".into()));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::Validation(format!(
                "grid bounds must satisfy min < max, got [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        if nx < 3 || ny < 3 {
            return Err(Error::Validation(format!("grid needs at least 3 nodes per axis, got {nx} x {ny}")));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
        })
    }

    /// Square grid `[-half_width, half_width]^2` with `n` nodes per axis.
    pub fn square(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, -half_width, half_width, n, n)
    }

    /// The 20 x 20 grid over [-4, 4] mm^2 used by the reference experiment.
    pub fn reference() -> Self {
        Self::square(4.0, 20).expect("reference grid is valid")
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }
    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }
    /// Largest of the two spacings.
    pub fn h(&self) -> f64 {
        self.hx().max(self.hy())
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn node(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        if ix == self.nx - 1 {
            self.x_max
        } else {
            self.x_min + ix as f64 * self.hx()
        }
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        if iy == self.ny - 1 {
            self.y_max
        } else {
            self.y_min + iy as f64 * self.hy()
        }
    }

    #[inline]
    pub fn point(&self, index: usize) -> Point {
        let (ix, iy) = self.node(index);
        [self.x(ix), self.y(iy)]
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn is_interior(&self, ix: usize, iy: usize) -> bool {
        ix > 0 && iy > 0 && ix + 1 < self.nx && iy + 1 < self.ny
    }

    pub fn contains(&self, p: Point) -> bool {
        let tol_x = 1e-12 * (self.x_max - self.x_min);
        let tol_y = 1e-12 * (self.y_max - self.y_min);
        p[0] >= self.x_min - tol_x && p[0] <= self.x_max + tol_x && p[1] >= self.y_min - tol_y && p[1] <= self.y_max + tol_y
    }

    /// 1-D trapezoidal weights along x.
    pub fn weights_x(&self) -> Vec<f64> {
        trapezoid_weights(self.nx, self.hx())
    }

    /// 1-D trapezoidal weights along y.
    pub fn weights_y(&self) -> Vec<f64> {
        trapezoid_weights(self.ny, self.hy())
    }

    /// Tensor trapezoidal quadrature weights, one per node.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let wx = self.weights_x();
        let wy = self.weights_y();
        let mut w = Vec::with_capacity(self.len());
        for wyj in &wy {
            for wxi in &wx {
                w.push(wxi * wyj);
            }
        }
        w
    }

    /// Grid with the spacing halved on both axes over the same domain.
    pub fn refined(&self) -> Self {
        Self {
            nx: 2 * (self.nx - 1) + 1,
            ny: 2 * (self.ny - 1) + 1,
            ..*self
        }
    }

    /// Mirror a point back into the domain across the boundary it crossed.
    pub fn reflect(&self, p: Point) -> Point {
        [
            reflect_1d(p[0], self.x_min, self.x_max),
            reflect_1d(p[1], self.y_min, self.y_max),
        ]
    }

    /// Cell containing `p` and the local bilinear coordinates in `[0, 1]^2`.
    pub fn locate(&self, p: Point) -> Result<(usize, usize, f64, f64)> {
        if !p[0].is_finite() || !p[1].is_finite() || !self.contains(p) {
            return Err(Error::Domain(format!(
                "point ({}, {}) lies outside [{}, {}] x [{}, {}]",
                p[0], p[1], self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        let (ix, tx) = cell_1d(p[0], self.x_min, self.hx(), self.nx);
        let (iy, ty) = cell_1d(p[1], self.y_min, self.hy(), self.ny);
        Ok((ix, iy, tx, ty))
    }
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

fn cell_1d(x: f64, min: f64, h: f64, n: usize) -> (usize, f64) {
    let s = ((x - min) / h).max(0.0);
    let i = (s.floor() as usize).min(n - 2);
    let t = (s - i as f64).clamp(0.0, 1.0);
    (i, t)
}

fn reflect_1d(x: f64, lo: f64, hi: f64) -> f64 {
    if !x.is_finite() || (x >= lo && x <= hi) {
        return x;
    }
    let width = hi - lo;
    let period = 2.0 * width;
    let mut s = (x - lo).rem_euclid(period);
    if s > width {
        s = period - s;
    }
    lo + s
}

/// Node-sampled scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Validation(format!(
                "field has {} values but grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite field value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, values }
    }

    pub(crate) fn from_values_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.index(ix, iy)]
    }
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "ix,iy,x,y,value")?;
        for (i, v) in self.values.iter().enumerate() {
            let (ix, iy) = self.grid.node(i);
            let p = self.grid.point(i);
            writeln!(out, "{ix},{iy},{},{},{v}", p[0], p[1])?;
        }
        Ok(())
    }

    /// Read a field written by [`ScalarField::write_csv`] onto `grid`.
    pub fn read_csv<R: BufRead>(grid: Grid2D, input: R) -> Result<Self> {
        let mut values = vec![f64::NAN; grid.len()];
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "ix,iy,x,y,value" {
            return Err(Error::Validation(format!("unexpected CSV header `{header}`")));
        }
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::Validation(format!("malformed CSV row {}: `{line}`", lineno + 2));
            if cols.len() != 5 {
                return Err(bad());
            }
            let ix: usize = cols[0].trim().parse().map_err(|_| bad())?;
            let iy: usize = cols[1].trim().parse().map_err(|_| bad())?;
            let v: f64 = cols[4].trim().parse().map_err(|_| bad())?;
            if ix >= grid.nx() || iy >= grid.ny() {
                return Err(bad());
            }
            values[grid.index(ix, iy)] = v;
        }
        Self::new(grid, values)
    }
}

/// Node-sampled 2-D vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid2D,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid2D, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        if vx.len() != grid.len() || vy.len() != grid.len() {
            return Err(Error::Validation("vector field length does not match grid".into()));
        }
        if vx.iter().chain(vy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite vector field component".into()));
        }
        Ok(Self { grid, vx, vy })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            vx: vec![0.0; grid.len()],
            vy: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(Point) -> [f64; 2]) -> Self {
        let (vx, vy) = (0..grid.len()).map(|i| f(grid.point(i))).map(|v| (v[0], v[1])).unzip();
        Self { grid, vx, vy }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }
    pub fn vx(&self) -> &[f64] {
        &self.vx
    }
    pub fn vy(&self) -> &[f64] {
        &self.vy
    }
    pub fn at(&self, index: usize) -> [f64; 2] {
        [self.vx[index], self.vy[index]]
    }

    /// Largest component magnitude over all nodes.
    pub fn max_abs(&self) -> f64 {
        self.vx.iter().chain(self.vy.iter()).fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.vx.iter_mut().chain(self.vy.iter_mut()).for_each(|v| *v *= factor);
        self
    }

    /// Bilinear interpolation of both components.
    pub fn interpolate(&self, p: Point) -> Result<[f64; 2]> {
        let (ix, iy, tx, ty) = self.grid.locate(p)?;
        Ok([
            bilinear(&self.grid, &self.vx, ix, iy, tx, ty),
            bilinear(&self.grid, &self.vy, ix, iy, tx, ty),
        ])
    }
}

/// Probability density on the grid: nonnegative with unit trapezoidal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField(ScalarField);

/// Tolerance on the unit-mass invariant.
pub const MASS_TOL: f64 = 1e-9;

impl DensityField {
    /// Wrap a field that already satisfies the density invariants.
    pub fn new(field: ScalarField) -> Result<Self> {
        if let Some(i) = field.values.iter().position(|v| *v < 0.0) {
            return Err(Error::Validation(format!("negative density at node {i}")));
        }
        let mass = integrate(&field);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Validation(format!("density mass is {mass}, expected 1")));
        }
        Ok(Self(field))
    }

    /// Uniform density over the grid domain.
    pub fn uniform(grid: Grid2D) -> Self {
        Self(ScalarField::constant(grid, 1.0 / grid.area()))
    }

    /// Gaussian `N(mean, cov)` sampled at the nodes and renormalised on the grid.
    pub fn gaussian(grid: Grid2D, mean: Point, cov: [[f64; 2]; 2]) -> Result<Self> {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if !(cov[0][0] > 0.0 && det > 0.0) || (cov[0][1] - cov[1][0]).abs() > 1e-12 * cov[0][0].abs().max(1.0) {
            return Err(Error::Validation("covariance must be symmetric positive definite".into()));
        }
        let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
        let field = ScalarField::from_fn(grid, |p| {
            let d = [p[0] - mean[0], p[1] - mean[1]];
            let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
            (-0.5 * q).exp()
        });
        normalize(&field)
    }

    /// Build a density from node masses (quadrature weight times density).
    pub fn from_masses(grid: Grid2D, masses: &[f64]) -> Result<Self> {
        let w = grid.quadrature_weights();
        let values = masses.iter().zip(&w).map(|(m, w)| m / w).collect();
        normalize(&ScalarField::new(grid, values)?)
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }
    pub fn grid(&self) -> &Grid2D {
        &self.0.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    /// Node masses `w_i * rho_i`; they sum to one.
    pub fn masses(&self) -> Vec<f64> {
        self.0
            .grid
            .quadrature_weights()
            .iter()
            .zip(&self.0.values)
            .map(|(w, r)| w * r)
            .collect()
    }

    /// Mean and per-axis variance under the quadrature measure.
    pub fn moments(&self) -> (Point, Point) {
        let g = self.grid();
        let m = self.masses();
        let mut mean = [0.0; 2];
        for (i, mi) in m.iter().enumerate() {
            let p = g.point(i);
            mean[0] += mi * p[0];
            mean[1] += mi * p[1];
        }
        let mut var = [0.0; 2];
        for (i, mi) in m.iter().enumerate() {
            let p = g.point(i);
            var[0] += mi * (p[0] - mean[0]).powi(2);
            var[1] += mi * (p[1] - mean[1]).powi(2);
        }
        (mean, var)
    }

    /// Quadrature L1 distance between two densities on the same grid.
    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        assert_eq!(self.grid(), other.grid(), "densities live on different grids");
        self.grid()
            .quadrature_weights()
            .iter()
            .zip(self.values().iter().zip(other.values()))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum()
    }
}

/// Trapezoidal quadrature of `f` over the grid domain.
pub fn integrate(f: &ScalarField) -> f64 {
    let g = &f.grid;
    let wx = g.weights_x();
    let wy = g.weights_y();
    let mut total = 0.0;
    for (iy, wyj) in wy.iter().enumerate() {
        let row = &f.values[iy * g.nx..(iy + 1) * g.nx];
        let s: f64 = row.iter().zip(&wx).map(|(v, w)| v * w).sum();
        total += s * wyj;
    }
    total
}

/// First derivative along a strided line of `n` samples with spacing `h`.
#[inline]
fn d1(f: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    if i == 0 {
        (3.0 * (f(1) - f(0)) - (f(2) - f(1))) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * (f(n - 1) - f(n - 2)) - (f(n - 2) - f(n - 3))) / (2.0 * h)
    } else {
        (f(i + 1) - f(i - 1)) / (2.0 * h)
    }
}

/// Second derivative along a strided line.
#[inline]
fn d2(f: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    let h2 = h * h;
    if i > 0 && i < n - 1 {
        (f(i + 1) - 2.0 * f(i) + f(i - 1)) / h2
    } else if n >= 4 {
        if i == 0 {
            (2.0 * (f(0) - f(1)) - 3.0 * (f(1) - f(2)) + (f(2) - f(3))) / h2
        } else {
            (2.0 * (f(n - 1) - f(n - 2)) - 3.0 * (f(n - 2) - f(n - 3)) + (f(n - 3) - f(n - 4))) / h2
        }
    } else if i == 0 {
        (f(0) - 2.0 * f(1) + f(2)) / h2
    } else {
        (f(n - 1) - 2.0 * f(n - 2) + f(n - 3)) / h2
    }
}

fn partial_x(grid: &Grid2D, v: &[f64], ix: usize, iy: usize) -> f64 {
    let row = iy * grid.nx;
    d1(|k| v[row + k], ix, grid.nx, grid.hx())
}

fn partial_y(grid: &Grid2D, v: &[f64], ix: usize, iy: usize) -> f64 {
    d1(|k| v[k * grid.nx + ix], iy, grid.ny, grid.hy())
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let mut vx = Vec::with_capacity(g.len());
    let mut vy = Vec::with_capacity(g.len());
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            vx.push(partial_x(&g, &f.values, ix, iy));
            vy.push(partial_y(&g, &f.values, ix, iy));
        }
    }
    VectorField { grid: g, vx, vy }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let mut out = Vec::with_capacity(g.len());
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            out.push(partial_x(&g, &v.vx, ix, iy) + partial_y(&g, &v.vy, ix, iy));
        }
    }
    ScalarField { grid: g, values: out }
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let v = &f.values;
    let mut out = Vec::with_capacity(g.len());
    for iy in 0..g.ny {
        let row = iy * g.nx;
        for ix in 0..g.nx {
            let dxx = d2(|k| v[row + k], ix, g.nx, g.hx());
            let dyy = d2(|k| v[k * g.nx + ix], iy, g.ny, g.hy());
            out.push(dxx + dyy);
        }
    }
    ScalarField { grid: g, values: out }
}

#[inline]
fn bilinear(g: &Grid2D, v: &[f64], ix: usize, iy: usize, tx: f64, ty: f64) -> f64 {
    let i00 = g.index(ix, iy);
    let i10 = i00 + 1;
    let i01 = i00 + g.nx;
    let i11 = i01 + 1;
    (1.0 - tx) * (1.0 - ty) * v[i00] + tx * (1.0 - ty) * v[i10] + (1.0 - tx) * ty * v[i01] + tx * ty * v[i11]
}

/// Bilinear interpolation of `f` at `p`.
pub fn interpolate(f: &ScalarField, p: Point) -> Result<f64> {
    let (ix, iy, tx, ty) = f.grid.locate(p)?;
    Ok(bilinear(&f.grid, &f.values, ix, iy, tx, ty))
}

/// Rescale a nonnegative field to unit quadrature mass.
pub fn normalize(f: &ScalarField) -> Result<DensityField> {
    if let Some(i) = f.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value at node {i}")));
    }
    if let Some(i) = f.values.iter().position(|v| *v < 0.0) {
        return Err(Error::Validation(format!("negative value {} at node {i}", f.values[i])));
    }
    let mass = integrate(f);
    if !(mass > 0.0) {
        return Err(Error::Validation(format!("field mass must be positive, got {mass}")));
    }
    let values = f.values.iter().map(|v| v / mass).collect();
    Ok(DensityField(ScalarField { grid: f.grid, values }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid() -> Grid2D {
        // h = 0.1 on [-1, 1]^2
        Grid2D::square(1.0, 21).unwrap()
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid2D::new(0.0, 1.0, 0.0, 1.0, 2, 5).is_err());
        assert!(Grid2D::new(1.0, 1.0, 0.0, 1.0, 5, 5).is_err());
        assert!(Grid2D::new(0.0, f64::NAN, 0.0, 1.0, 5, 5).is_err());
    }

    #[test]
    fn row_major_ordering() {
        let g = Grid2D::new(0.0, 2.0, 0.0, 1.0, 3, 2 + 1).unwrap();
        assert_eq!(g.index(2, 1), 5);
        assert_eq!(g.node(5), (2, 1));
        assert_eq!(g.point(5), [2.0, 0.5]);
    }

    #[test]
    fn integrate_constant_gives_area() {
        let g = Grid2D::reference();
        assert_abs_diff_eq!(integrate(&ScalarField::constant(g, 1.0)), 64.0, epsilon = 1e-12);
    }

    #[test]
    fn integrate_odd_function_vanishes() {
        let g = Grid2D::reference();
        assert_abs_diff_eq!(integrate(&ScalarField::from_fn(g, |p| p[0])), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn integrate_x_squared() {
        // Trapezoid error for x^2 is h^2 (b - a) / 12 * f'' * (y extent) = 2 h^2 / 3, about 1.07e-3 at h = 0.04.
        let g = Grid2D::square(1.0, 51).unwrap();
        let v = integrate(&ScalarField::from_fn(g, |p| p[0] * p[0]));
        assert!((v - 4.0 / 3.0).abs() < 1.1e-3, "{v}");
        let h = g.hx();
        assert_abs_diff_eq!(v - 4.0 / 3.0, h * h * 2.0 / 6.0 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_of_affine_is_exact() {
        let g = Grid2D::new(-1.0, 3.0, 0.0, 2.0, 7, 5).unwrap();
        let gr = gradient(&ScalarField::from_fn(g, |p| 3.0 * p[0] - 2.0 * p[1] + 0.5));
        for i in 0..g.len() {
            assert_abs_diff_eq!(gr.vx()[i], 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(gr.vy()[i], -2.0, epsilon = 1e-12);
        }
        let gc = gradient(&ScalarField::constant(g, 4.2));
        assert_eq!(gc.max_abs(), 0.0);
    }

    #[test]
    fn gradient_of_quadratic_at_x_one() {
        let g = unit_grid();
        let gr = gradient(&ScalarField::from_fn(g, |p| p[0] * p[0]));
        // x = 1 is the boundary node: the one-sided second-order stencil is also exact for quadratics.
        let i = g.index(20, 10);
        assert_abs_diff_eq!(gr.vx()[i], 2.0, epsilon = 1e-12);
        let i = g.index(15, 10); // x = 0.5
        assert_abs_diff_eq!(gr.vx()[i], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn divergence_examples() {
        let g = unit_grid();
        let d = divergence(&VectorField::from_fn(g, |p| p));
        assert!(d.values().iter().all(|v| (v - 2.0).abs() < 1e-12));
        let d = divergence(&VectorField::from_fn(g, |_| [1.5, -0.5]));
        assert!(d.values().iter().all(|v| v.abs() < 1e-12));
        let d = divergence(&VectorField::from_fn(g, |p| [p[0] * p[0], 0.0]));
        assert_abs_diff_eq!(d.at(20, 3), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn laplacian_examples() {
        let g = unit_grid();
        let l = laplacian(&ScalarField::from_fn(g, |p| p[0] * p[0] + p[1] * p[1]));
        assert!(l.values().iter().all(|v| (v - 4.0).abs() < 1e-9));
        let l = laplacian(&ScalarField::from_fn(g, |p| 2.0 * p[0] - p[1]));
        assert!(l.values().iter().all(|v| v.abs() < 1e-9));
        // x^4 at x = 1 with h = 0.1 on an interior stencil: use a grid extending past x = 1.
        let g2 = Grid2D::square(2.0, 41).unwrap();
        let l = laplacian(&ScalarField::from_fn(g2, |p| p[0].powi(4)));
        assert_abs_diff_eq!(l.at(30, 20), 12.02, epsilon = 1e-6);
    }

    #[test]
    fn interpolate_examples() {
        let g = unit_grid();
        let f = ScalarField::from_fn(g, |p| p[0] * p[1]);
        assert_abs_diff_eq!(interpolate(&f, [0.05, 0.05]).unwrap(), 0.0025, epsilon = 1e-15);
        assert_abs_diff_eq!(interpolate(&f, g.point(37)).unwrap(), f.values()[37], epsilon = 1e-15);
        let b = ScalarField::from_fn(g, |p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1]);
        let c = [0.25, -0.35];
        assert_abs_diff_eq!(interpolate(&b, c).unwrap(), 1.0 + 0.5 + 0.35 - 0.5 * 0.25 * 0.35, epsilon = 1e-12);
        assert!(matches!(interpolate(&f, [1.5, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn normalize_examples() {
        let g = Grid2D::reference();
        let d = normalize(&ScalarField::constant(g, 1.0)).unwrap();
        assert!(d.values().iter().all(|v| (v - 1.0 / 64.0).abs() < 1e-15));
        let again = normalize(d.field()).unwrap();
        for (a, b) in again.values().iter().zip(d.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let gauss = ScalarField::from_fn(g, |p| 7.0 * (-(p[0] * p[0] + p[1] * p[1])).exp());
        let d = normalize(&gauss).unwrap();
        assert_abs_diff_eq!(integrate(d.field()), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn normalize_rejects_bad_input() {
        let g = Grid2D::reference();
        assert!(normalize(&ScalarField::zeros(g)).is_err());
        let mut v = vec![1.0; g.len()];
        v[3] = -1e-3;
        assert!(normalize(&ScalarField::new(g, v).unwrap()).is_err());
    }

    #[test]
    fn reflection_mirrors_across_boundary() {
        let g = Grid2D::reference();
        let p = g.reflect([4.1, -4.25]);
        assert_abs_diff_eq!(p[0], 3.9, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], -3.75, epsilon = 1e-12);
        let far = g.reflect([21.0, 0.0]);
        assert!(g.contains(far));
    }

    #[test]
    fn csv_roundtrip_preserves_values() {
        let g = Grid2D::new(0.0, 1.0, 0.0, 2.0, 3, 4).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0] + 10.0 * p[1] + 1e-17);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ix,iy,x,y,value\n0,0,0,0,"));
        let back = ScalarField::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }
}
