//! Uniform periodic grids on the unit torus `[0,1)^d`, Fourier
//! pseudo-spectral calculus and rectangle-rule quadrature.
//!
//! Values are stored row-major with axis 0 slowest. Every spectral operator
//! below is a diagonal multiplier in the discrete Fourier basis, so they all
//! commute with each other and are exact on trigonometric polynomials below
//! the Nyquist frequency.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Uniform grid with `n` points per axis on the `dim`-dimensional unit torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and at least 8, got {n}"
            )));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Volume `h^d` carried by each grid point.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Per-axis integer index of a flat index; unused axes are zero.
    pub fn multi_index(&self, mut index: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for axis in (0..self.dim).rev() {
            out[axis] = index % self.n;
            index /= self.n;
        }
        out
    }

    /// Coordinates `x_j = j·h` of a flat index; unused axes are zero.
    pub fn point(&self, index: usize) -> [f64; 3] {
        let h = self.spacing();
        self.multi_index(index).map(|j| j as f64 * h)
    }

    /// Signed wavenumber of an FFT bin. The Nyquist bin maps to `+n/2`.
    pub fn wavenumber(&self, bin: usize) -> i64 {
        if bin <= self.n / 2 {
            bin as i64
        } else {
            bin as i64 - self.n as i64
        }
    }

    fn is_nyquist(&self, bin: usize) -> bool {
        bin == self.n / 2
    }

    /// Symbol of `−Δ` at a flat spectral index.
    fn neg_laplacian_symbol(&self, index: usize) -> f64 {
        let bins = self.multi_index(index);
        let k2: i64 = bins[..self.dim]
            .iter()
            .map(|&b| {
                let k = self.wavenumber(b);
                k * k
            })
            .sum();
        TWO_PI * TWO_PI * k2 as f64
    }

    /// Imaginary part of the first-derivative symbol along `axis`.
    /// Zero at the Nyquist bin so that derivatives of real fields stay real.
    fn derivative_symbol(&self, index: usize, axis: usize) -> f64 {
        let bin = self.multi_index(index)[axis];
        if self.is_nyquist(bin) {
            0.0
        } else {
            TWO_PI * self.wavenumber(bin) as f64
        }
    }

    fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// In-place unnormalized multidimensional DFT, one axis at a time.
fn transform(grid: &TorusGrid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n;
    let fft = plan(n, inverse);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..grid.dim {
        let stride = n.pow((grid.dim - 1 - axis) as u32);
        let outer = n.pow(axis as u32);
        for block in 0..outer {
            for inner in 0..stride {
                let start = block * n * stride + inner;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, value) in line.iter().enumerate() {
                    data[start + j * stride] = *value;
                }
            }
        }
    }
}

pub(crate) fn forward(grid: &TorusGrid, values: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(grid, &mut data, false);
    data
}

pub(crate) fn inverse_real(grid: &TorusGrid, mut spectrum: Vec<Complex64>) -> Vec<f64> {
    transform(grid, &mut spectrum, true);
    let scale = 1.0 / grid.len() as f64;
    spectrum.iter().map(|c| c.re * scale).collect()
}

/// Real values on a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f` at every grid point; the slice has one entry per axis.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| f(&grid.point(i)[..grid.dim]))
            .collect();
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn integrate(&self) -> f64 {
        integrate(self)
    }

    pub fn mean(&self) -> f64 {
        self.integrate()
    }

    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp_norm(self, p)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `∫ f g` by the rectangle rule.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(sum * self.grid.cell_volume())
    }

    /// Spectral `−Δf`.
    pub fn neg_laplacian(&self) -> ScalarField {
        let mut spec = forward(&self.grid, &self.values);
        for (i, c) in spec.iter_mut().enumerate() {
            *c *= self.grid.neg_laplacian_symbol(i);
        }
        Self::from_raw(self.grid, inverse_real(&self.grid, spec))
    }

    /// Discrete periodic convolution `(k ∗ f)(x_j) = Σ_i k(x_i) f(x_j − x_i) h^d`,
    /// evaluated through the FFT.
    pub fn convolve(&self, kernel: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(&kernel.grid)?;
        let a = forward(&self.grid, &self.values);
        let b = forward(&self.grid, &kernel.values);
        let vol = self.grid.cell_volume();
        let product = a.iter().zip(&b).map(|(x, y)| x * y * vol).collect();
        Ok(Self::from_raw(self.grid, inverse_real(&self.grid, product)))
    }

    /// Rejects negative entries and vanishing mass.
    pub fn validate_density(&self) -> Result<()> {
        if let Some(index) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some((i, v)) = self.values.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(Error::InvalidDensity(format!(
                "negative value {v:e} at index {i}"
            )));
        }
        let mass = self.integrate();
        if mass <= 0.0 {
            return Err(Error::InvalidDensity("total mass is zero".into()));
        }
        Ok(())
    }
}

/// One scalar field per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let grid = *components
            .first()
            .ok_or_else(|| Error::InvalidParameter("vector field needs components".into()))?
            .grid();
        if components.len() != grid.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} components on a {}-d grid",
                components.len(),
                grid.dim()
            )));
        }
        for c in &components {
            grid.check_same(c.grid())?;
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            components: (0..grid.dim()).map(|_| ScalarField::constant(grid, 0.0)).collect(),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn map(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self {
            grid: self.grid,
            components: self.components.iter().map(f).collect(),
        }
    }

    /// `∫ |V|²`.
    pub fn squared_l2(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.values.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    /// `max_x |V(x)|`.
    pub fn max_magnitude(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                self.components
                    .iter()
                    .map(|c| c.values[i] * c.values[i])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `∫ U·V`.
    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.inner(b))
            .sum()
    }

    /// Spectral divergence.
    pub fn divergence(&self) -> ScalarField {
        let mut total = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for (axis, c) in self.components.iter().enumerate() {
            let spec = forward(&self.grid, &c.values);
            for (i, (t, s)) in total.iter_mut().zip(spec).enumerate() {
                *t += s * Complex64::new(0.0, self.grid.derivative_symbol(i, axis));
            }
        }
        ScalarField::from_raw(self.grid, inverse_real(&self.grid, total))
    }
}

/// Rectangle-rule integral `h^d Σ f(x_j)`.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// Discrete `L^p` norm; `p = ∞` gives the max norm.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidParameter(format!("L^p norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.values.iter().fold(0.0, |m, v| f64::max(m, v.abs())));
    }
    let vol = f.grid.cell_volume();
    let sum: f64 = if p == 1.0 {
        f.values.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        f.values.iter().map(|v| v * v).sum()
    } else {
        f.values.iter().map(|v| v.abs().powf(p)).sum()
    };
    Ok((sum * vol).powf(1.0 / p))
}

/// Spectral gradient, one Fourier-multiplier derivative per axis.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid;
    let spec = forward(&grid, &f.values);
    let components = (0..grid.dim)
        .map(|axis| {
            let d: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(i, c)| c * Complex64::new(0.0, grid.derivative_symbol(i, axis)))
                .collect();
            ScalarField::from_raw(grid, inverse_real(&grid, d))
        })
        .collect();
    VectorField { grid, components }
}

/// Solves `−Δu = g − mean(g)` with `mean(u) = 0`.
pub fn solve_poisson_zero_mean(g: &ScalarField) -> ScalarField {
    let grid = g.grid;
    let mut spec = forward(&grid, &g.values);
    spec[0] = Complex64::new(0.0, 0.0);
    for (i, c) in spec.iter_mut().enumerate().skip(1) {
        *c /= grid.neg_laplacian_symbol(i);
    }
    ScalarField::from_raw(grid, inverse_real(&grid, spec))
}

/// Iteration controls for [`solve_shifted_poisson_with`].
#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Relative residual target, scaled by `max(1, ‖g‖₂)`.
    pub tol: f64,
    /// `None` selects `10·n^{d/2}`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `(−Δ + w) u = g` for pointwise positive `w` with default options.
pub fn solve_shifted_poisson(g: &ScalarField, w: &ScalarField) -> Result<ScalarField> {
    solve_shifted_poisson_with(g, w, CgOptions::default()).map(|(u, _)| u)
}

/// Preconditioned conjugate gradients on `−Δ + diag(w)` with the spectral
/// preconditioner `(−Δ + mean(w))^{-1}`.
pub fn solve_shifted_poisson_with(
    g: &ScalarField,
    w: &ScalarField,
    opts: CgOptions,
) -> Result<(ScalarField, CgStats)> {
    let grid = g.grid;
    grid.check_same(&w.grid)?;
    if let Some((i, v)) = w.values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "shift must be positive, found {v} at index {i}"
        )));
    }
    let max_iter = opts
        .max_iter
        .unwrap_or_else(|| (10.0 * (grid.len() as f64).sqrt()).ceil() as usize);
    let vol = grid.cell_volume();
    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() * vol).sqrt();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let target = opts.tol * norm(&g.values).max(1.0);
    let shift = w.mean();
    let precondition = |r: &[f64]| -> Vec<f64> {
        let mut spec = forward(&grid, r);
        for (i, c) in spec.iter_mut().enumerate() {
            *c /= grid.neg_laplacian_symbol(i) + shift;
        }
        inverse_real(&grid, spec)
    };
    let apply = |u: &[f64]| -> Vec<f64> {
        let lap = ScalarField::from_raw(grid, u.to_vec()).neg_laplacian();
        lap.values
            .iter()
            .zip(u)
            .zip(&w.values)
            .map(|((l, u), w)| l + w * u)
            .collect()
    };
    let true_residual = |u: &[f64]| -> Vec<f64> {
        apply(u).iter().zip(&g.values).map(|(a, b)| b - a).collect()
    };

    let mut u = precondition(&g.values);
    let mut r = true_residual(&u);
    let mut res = norm(&r);
    let mut iterations = 0;
    // Restart from the true residual whenever the recursive one claims
    // convergence but the true one disagrees.
    while res > target && iterations < max_iter {
        let mut z = precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            let ap = apply(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for ((ui, ri), (pi, api)) in u.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
                *ui += alpha * pi;
                *ri -= alpha * api;
            }
            if norm(&r) <= target {
                break;
            }
            z = precondition(&r);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        r = true_residual(&u);
        let next = norm(&r);
        if next >= res && next > target {
            res = next;
            break;
        }
        res = next;
    }
    if res > target {
        return Err(Error::LinearSolveNotConverged {
            iterations,
            residual: res,
        });
    }
    Ok((
        ScalarField::from_raw(grid, u),
        CgStats {
            iterations,
            residual: res,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    fn max_err(a: &ScalarField, b: &ScalarField) -> f64 {
        a.values
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::new(1, 7).is_err());
        assert!(TorusGrid::new(1, 6).is_err());
        assert!(TorusGrid::new(4, 8).is_err());
        assert!(TorusGrid::new(0, 8).is_err());
        let g = TorusGrid::new(3, 8).unwrap();
        assert_eq!(g.len(), 512);
        assert_eq!(g.multi_index(8 * 8 + 3), [1, 0, 3]);
    }

    #[test]
    fn integrate_examples() {
        for grid in [g1(8), TorusGrid::new(2, 16).unwrap(), TorusGrid::new(3, 8).unwrap()] {
            assert!((ScalarField::constant(grid, 1.0).integrate() - 1.0).abs() < 1e-15);
        }
        let f = ScalarField::from_fn(g1(32), |x| (2.0 * PI * x[0]).cos());
        assert!(f.integrate().abs() < 1e-15);
        let f = ScalarField::from_fn(g1(64), |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
        assert!((f.integrate() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pure_modes_integrate_to_zero() {
        let grid = TorusGrid::new(2, 16).unwrap();
        for kx in 0..8 {
            for ky in 0..8 {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let f = ScalarField::from_fn(grid, |x| {
                    (2.0 * PI * (kx as f64 * x[0] + ky as f64 * x[1])).cos()
                });
                assert!(f.integrate().abs() < 1e-13, "mode ({kx},{ky})");
            }
        }
    }

    #[test]
    fn lp_norm_examples() {
        let two = ScalarField::constant(g1(16), 2.0);
        assert!((two.lp_norm(3.0).unwrap() - 2.0).abs() < 1e-14);
        assert!((two.lp_norm(1.0).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(two.lp_norm(f64::INFINITY).unwrap(), 2.0);
        let c = ScalarField::from_fn(g1(64), |x| (2.0 * PI * x[0]).cos());
        assert!((c.lp_norm(2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(c.lp_norm(0.5).is_err());
        assert!(c.lp_norm(f64::NAN).is_err());
    }

    #[test]
    fn gradient_examples() {
        let g = gradient(&ScalarField::constant(g1(16), 5.0));
        assert_eq!(g.max_magnitude(), 0.0);

        let f = ScalarField::from_fn(g1(64), |x| (2.0 * PI * x[0]).sin());
        let exact = ScalarField::from_fn(g1(64), |x| 2.0 * PI * (2.0 * PI * x[0]).cos());
        assert!(max_err(gradient(&f).component(0), &exact) < 1e-12);

        let grid = TorusGrid::new(2, 32).unwrap();
        let f = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).sin() + (2.0 * PI * x[1]).sin());
        let grad = gradient(&f);
        for axis in 0..2 {
            let exact = ScalarField::from_fn(grid, |x| 2.0 * PI * (2.0 * PI * x[axis]).cos());
            assert!(max_err(grad.component(axis), &exact) < 1e-12);
        }
    }

    #[test]
    fn nyquist_derivative_is_dropped() {
        let grid = g1(16);
        let f = ScalarField::from_fn(grid, |x| (2.0 * PI * 8.0 * x[0]).cos());
        assert!(gradient(&f).max_magnitude() < 1e-12);
    }

    #[test]
    fn shifted_poisson_examples() {
        let grid = g1(32);
        let u = solve_shifted_poisson(&ScalarField::constant(grid, 3.0), &ScalarField::constant(grid, 1.0))
            .unwrap();
        assert!(max_err(&u, &ScalarField::constant(grid, 3.0)) < 1e-12);

        let g = ScalarField::from_fn(grid, |x| (4.0 * PI * PI + 1.0) * (2.0 * PI * x[0]).cos());
        let u = solve_shifted_poisson(&g, &ScalarField::constant(grid, 1.0)).unwrap();
        let exact = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).cos());
        assert!(max_err(&u, &exact) < 1e-10);

        let u = solve_shifted_poisson(&ScalarField::constant(grid, 0.0), &ScalarField::constant(grid, 2.0))
            .unwrap();
        assert_eq!(u.max().abs().max(u.min().abs()), 0.0);
    }

    #[test]
    fn shifted_poisson_residual_with_variable_shift() {
        let grid = TorusGrid::new(2, 32).unwrap();
        let w = ScalarField::from_fn(grid, |x| 1.0 + 0.8 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
        let g = ScalarField::from_fn(grid, |x| (2.0 * PI * (x[0] + 2.0 * x[1])).sin() + 0.3);
        let (u, stats) = solve_shifted_poisson_with(&g, &w, CgOptions::default()).unwrap();
        let au = u.neg_laplacian().zip_with(&u.zip_with(&w, |a, b| a * b).unwrap(), |a, b| a + b).unwrap();
        let r = au.zip_with(&g, |a, b| a - b).unwrap();
        assert!(r.lp_norm(2.0).unwrap() <= 1e-12 * g.lp_norm(2.0).unwrap().max(1.0));
        assert_eq!(stats.residual, r.lp_norm(2.0).unwrap());
    }

    #[test]
    fn shifted_poisson_rejects_nonpositive_shift() {
        let grid = g1(16);
        let w = ScalarField::from_fn(grid, |x| x[0] - 0.5);
        assert!(solve_shifted_poisson(&ScalarField::constant(grid, 1.0), &w).is_err());
    }

    #[test]
    fn shifted_poisson_reports_iteration_cap() {
        let grid = g1(64);
        let w = ScalarField::from_fn(grid, |x| 1e-3 + 1e3 * (2.0 * PI * x[0]).sin().powi(8));
        let g = ScalarField::from_fn(grid, |x| (6.0 * PI * x[0]).cos());
        let err = solve_shifted_poisson_with(&g, &w, CgOptions { tol: 1e-12, max_iter: Some(2) }).unwrap_err();
        assert!(matches!(err, Error::LinearSolveNotConverged { iterations: 2, .. }));
    }

    #[test]
    fn poisson_zero_mean_examples() {
        let u = solve_poisson_zero_mean(&ScalarField::constant(g1(16), 7.0));
        assert_eq!(u.max().abs().max(u.min().abs()), 0.0);

        let grid = g1(32);
        let g = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).cos());
        let exact = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).cos() / (4.0 * PI * PI));
        assert!(max_err(&solve_poisson_zero_mean(&g), &exact) < 1e-12);

        let grid = TorusGrid::new(2, 32).unwrap();
        let g = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).cos() + (4.0 * PI * x[1]).cos());
        let exact = ScalarField::from_fn(grid, |x| {
            (2.0 * PI * x[0]).cos() / (4.0 * PI * PI) + (4.0 * PI * x[1]).cos() / (16.0 * PI * PI)
        });
        let u = solve_poisson_zero_mean(&g);
        assert!(max_err(&u, &exact) < 1e-12);
        assert!(u.mean().abs() < 1e-15);
    }

    #[test]
    fn convolution_with_delta_is_identity() {
        let grid = g1(16);
        let mut delta = vec![0.0; 16];
        delta[0] = 16.0;
        let delta = ScalarField::new(grid, delta).unwrap();
        let f = ScalarField::from_fn(grid, |x| (x[0] * 3.0).sin());
        assert!(max_err(&f.convolve(&delta).unwrap(), &f) < 1e-14);
    }

    #[test]
    fn density_validation() {
        let grid = g1(8);
        assert!(ScalarField::constant(grid, 0.0).validate_density().is_err());
        assert!(ScalarField::from_fn(grid, |x| x[0] - 0.1).validate_density().is_err());
        assert!(ScalarField::from_fn(grid, |x| x[0]).validate_density().is_ok());
        assert!(ScalarField::new(grid, vec![f64::NAN; 8]).is_err());
        assert!(ScalarField::new(grid, vec![1.0; 7]).is_err());
    }
}
