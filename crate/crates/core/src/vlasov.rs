//! Semi-Lagrangian simulation of the doubly mollified ionic Vlasov–Poisson
//! system
//!
//! ```text
//! ∂_t f + v·∇_x f + E·∇_v f = 0,   ρ = ∫ f dv,
//! −ΔΦ = χ_n ∗ ρ − e^Φ,             E = −χ_n ∗ ∇Φ,
//! ```
//!
//! on `T^d × [−V, V]^d`. Time stepping is Strang splitting: half a step of
//! free transport in `x`, a field refresh, a full velocity kick, and another
//! half step in `x`. Each sub-step is a uniform shift along grid lines. The
//! velocity kick uses 4-point Lagrange interpolation with zero extension; the
//! spatial shift is a Fourier phase shift by default, with periodic 4-point
//! interpolation available as [`XAdvection::Cubic`].

use std::f64::consts::PI;
use std::path::PathBuf;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::{total_energy, EnergyBreakdown};
use crate::grid::{forward, inverse_real, ScalarField, TorusGrid, VectorField};
use crate::ivpf::PhaseSpaceDump;
use crate::pbsolver::{solve_pb_from, PbConfig, PbSolution};

/// Outflow through the velocity boundary tolerated before aborting, as a
/// fraction of the initial mass.
pub const MAX_OUTFLOW_FRACTION: f64 = 1e-6;

/// Outer velocity layer must be below this fraction of the peak at `t = 0`.
pub const CONTAINMENT_TOL: f64 = 1e-12;

/// Distribution function on the spatial torus times a velocity box. Values
/// are indexed `[spatial index · nv^d + velocity index]`; velocity nodes are
/// cell centres `v_j = −V + (j + ½) h_v`, `h_v = 2V / nv`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceField {
    grid: TorusGrid,
    v_extent: f64,
    nv: usize,
    values: Vec<f64>,
}

impl PhaseSpaceField {
    pub fn new(grid: TorusGrid, v_extent: f64, nv: usize, values: Vec<f64>) -> Result<Self> {
        if !(v_extent > 0.0 && v_extent.is_finite()) {
            return Err(Error::InvalidParameter(format!("velocity extent must be positive, got {v_extent}")));
        }
        if nv < 4 {
            return Err(Error::InvalidParameter(format!("need at least 4 velocity points, got {nv}")));
        }
        let expected = grid.len() * nv.pow(grid.dim() as u32);
        if values.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "expected {expected} phase-space values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(i) = values.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidDensity(format!("negative phase-space value at index {i}")));
        }
        Ok(Self {
            grid,
            v_extent,
            nv,
            values,
        })
    }

    /// Samples `f(x, v)` at every node.
    pub fn from_fn(
        grid: TorusGrid,
        v_extent: f64,
        nv: usize,
        f: impl Fn(&[f64], &[f64]) -> f64 + Sync,
    ) -> Result<Self> {
        let d = grid.dim();
        let nvel = nv.pow(d as u32);
        let hv = 2.0 * v_extent / nv as f64;
        let values = (0..grid.len() * nvel)
            .into_par_iter()
            .map(|i| {
                let x = grid.point(i / nvel);
                let v = velocity_of(i % nvel, d, nv, v_extent, hv);
                f(&x[..d], &v[..d])
            })
            .collect();
        Self::new(grid, v_extent, nv, values)
    }

    pub fn from_dump(dump: PhaseSpaceDump, v_extent: f64) -> Result<Self> {
        let grid = TorusGrid::new(dump.dim as usize, dump.n as usize)?;
        Self::new(grid, v_extent, dump.nv as usize, dump.values)
    }

    pub fn to_dump(&self, time_index: u64) -> PhaseSpaceDump {
        PhaseSpaceDump {
            dim: self.grid.dim() as u32,
            n: self.grid.n() as u32,
            nv: self.nv as u32,
            time_index,
            values: self.values.clone(),
        }
    }

    pub fn spatial_grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn v_extent(&self) -> f64 {
        self.v_extent
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn velocity_spacing(&self) -> f64 {
        2.0 * self.v_extent / self.nv as f64
    }

    /// Number of velocity nodes, `nv^d`.
    pub fn velocity_len(&self) -> usize {
        self.nv.pow(self.grid.dim() as u32)
    }

    /// Phase-space volume element `h_x^d h_v^d`.
    pub fn cell_volume(&self) -> f64 {
        self.grid.cell_volume() * self.velocity_spacing().powi(self.grid.dim() as i32)
    }

    pub fn velocity(&self, iv: usize) -> [f64; 3] {
        velocity_of(iv, self.grid.dim(), self.nv, self.v_extent, self.velocity_spacing())
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// `‖f‖_q` over phase space.
    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::InvalidParameter(format!("need q >= 1, got {q}")));
        }
        let sum: f64 = if q == 1.0 {
            self.values.iter().sum()
        } else if q == 2.0 {
            self.values.iter().map(|v| v * v).sum()
        } else {
            self.values.iter().map(|v| v.powf(q)).sum()
        };
        Ok((sum * self.cell_volume()).powf(1.0 / q))
    }

    /// `∫∫ |v|² f`.
    pub fn second_moment(&self) -> f64 {
        let nvel = self.velocity_len();
        let speeds: Vec<f64> = (0..nvel)
            .map(|iv| self.velocity(iv).iter().map(|c| c * c).sum())
            .collect();
        self.values
            .chunks_exact(nvel)
            .map(|slice| slice.iter().zip(&speeds).map(|(f, s)| f * s).sum::<f64>())
            .sum::<f64>()
            * self.cell_volume()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.second_moment()
    }

    /// Largest value on the outermost velocity layer.
    pub fn outer_layer_max(&self) -> f64 {
        let d = self.grid.dim();
        let nvel = self.velocity_len();
        let nv = self.nv;
        let on_boundary = |iv: usize| {
            let mut rest = iv;
            (0..d).any(|_| {
                let j = rest % nv;
                rest /= nv;
                j == 0 || j == nv - 1
            })
        };
        let boundary: Vec<usize> = (0..nvel).filter(|&iv| on_boundary(iv)).collect();
        self.values
            .chunks_exact(nvel)
            .flat_map(|slice| boundary.iter().map(move |&iv| slice[iv]))
            .fold(0.0, f64::max)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks the initial-data requirements: positive mass and a velocity
    /// box wide enough that the outer layer is negligible.
    pub fn check_initial(&self) -> Result<()> {
        if !(self.mass() > 0.0) {
            return Err(Error::InvalidDensity("phase-space field has zero mass".into()));
        }
        let outer = self.outer_layer_max();
        if outer > CONTAINMENT_TOL * self.max_value() {
            return Err(Error::VelocityBoxTooSmall {
                outflow: outer,
                mass: self.mass(),
            });
        }
        Ok(())
    }

    /// Applies `χ_n ∗_x` to every velocity slice.
    pub fn mollify_space(&self, kernel: &ScalarField) -> Result<Self> {
        if kernel.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let nvel = self.velocity_len();
        let slices: Vec<Vec<f64>> = (0..nvel)
            .into_par_iter()
            .map(|iv| {
                let slice: Vec<f64> = (0..self.grid.len()).map(|ix| self.values[ix * nvel + iv]).collect();
                let smoothed = ScalarField::from_raw(self.grid, slice).convolve(kernel)?;
                Ok(smoothed.into_values())
            })
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; self.values.len()];
        for (iv, slice) in slices.iter().enumerate() {
            for (ix, v) in slice.iter().enumerate() {
                values[ix * nvel + iv] = v.max(0.0);
            }
        }
        Ok(Self { values, ..self.clone() })
    }
}

fn velocity_of(iv: usize, d: usize, nv: usize, v_extent: f64, hv: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    let mut rest = iv;
    for axis in (0..d).rev() {
        let j = rest % nv;
        rest /= nv;
        out[axis] = -v_extent + (j as f64 + 0.5) * hv;
    }
    out
}

/// `ρ(x) = ∫ f(x, v) dv`.
pub fn density(f: &PhaseSpaceField) -> Result<ScalarField> {
    let nvel = f.velocity_len();
    let dv = f.velocity_spacing().powi(f.grid.dim() as i32);
    let values: Vec<f64> = f.values.chunks_exact(nvel).map(|s| s.iter().sum::<f64>() * dv).collect();
    let rho = ScalarField::new(f.grid, values)?;
    if !(rho.integrate() > 0.0) {
        return Err(Error::InvalidDensity("density has zero mass".into()));
    }
    Ok(rho)
}

/// Scaled bump `χ_n(x) = n^d χ(n x)`, `χ(y) ∝ exp(−1/(1 − |4y|²))` on
/// `|y| < ¼`, normalized so that its grid integral is exactly one.
pub fn mollifier_kernel(grid: TorusGrid, n_reg: usize) -> Result<ScalarField> {
    if n_reg == 0 {
        return Err(Error::InvalidParameter("mollifier index must be at least 1".into()));
    }
    if grid.n() < 8 * n_reg {
        return Err(Error::InvalidParameter(format!(
            "grid with {} points per axis cannot resolve mollifier index {n_reg} (needs {})",
            grid.n(),
            8 * n_reg
        )));
    }
    let scale = 4.0 * n_reg as f64;
    let raw = ScalarField::from_fn(grid, |x| {
        let r2: f64 = x
            .iter()
            .map(|&c| {
                let wrapped = if c > 0.5 { c - 1.0 } else { c };
                (scale * wrapped).powi(2)
            })
            .sum();
        if r2 < 1.0 {
            (-1.0 / (1.0 - r2)).exp()
        } else {
            0.0
        }
    });
    let total = raw.integrate();
    Ok(raw.map(|v| v / total))
}

/// Doubly mollified field: `Φ` solves the Poisson–Boltzmann problem for
/// `χ_n ∗ ρ`, and `E = −χ_n ∗ ∇Φ`.
#[derive(Clone, Debug)]
pub struct RegularizedField {
    kernel: ScalarField,
    cfg: PbConfig,
}

impl RegularizedField {
    pub fn new(grid: TorusGrid, n_reg: usize, cfg: PbConfig) -> Result<Self> {
        Ok(Self {
            kernel: mollifier_kernel(grid, n_reg)?,
            cfg,
        })
    }

    pub fn kernel(&self) -> &ScalarField {
        &self.kernel
    }

    pub fn solve(&self, rho: &ScalarField) -> Result<(VectorField, PbSolution)> {
        self.solve_warm(rho, None)
    }

    /// Starts Newton from a previous potential, when one is available.
    pub fn solve_warm(
        &self,
        rho: &ScalarField,
        previous: Option<&PbSolution>,
    ) -> Result<(VectorField, PbSolution)> {
        rho.validate_density()?;
        // circular convolution with a nonnegative kernel; only rounding can go negative
        let smoothed = rho.convolve(&self.kernel)?.map(|v| v.max(0.0));
        let sol = match previous {
            Some(prev) => {
                let phi_flat_guess = crate::pbsolver::flat_sharp_split(&smoothed)
                    .map(|s| crate::grid::solve_poisson_zero_mean(&s.rho_flat))?;
                let h0 = prev.phi.zip_with(&phi_flat_guess, |a, b| a - b)?;
                solve_pb_from(&smoothed, &self.cfg, Some(&h0))?
            }
            None => solve_pb_from(&smoothed, &self.cfg, None)?,
        };
        let components = sol
            .e_field
            .components()
            .iter()
            .map(|c| c.convolve(&self.kernel))
            .collect::<Result<Vec<_>>>()?;
        Ok((VectorField::new(components)?, sol))
    }
}

pub fn regularized_field(
    rho: &ScalarField,
    n_reg: usize,
    cfg: &PbConfig,
) -> Result<(VectorField, PbSolution)> {
    RegularizedField::new(*rho.grid(), n_reg, *cfg)?.solve(rho)
}

/// 4-point Lagrange weights for offset `α ∈ [0, 1)` on nodes `−1, 0, 1, 2`.
fn cubic_weights(alpha: f64) -> [f64; 4] {
    let a = alpha;
    [
        -a * (a - 1.0) * (a - 2.0) / 6.0,
        (a + 1.0) * (a - 1.0) * (a - 2.0) / 2.0,
        -(a + 1.0) * a * (a - 2.0) / 2.0,
        (a + 1.0) * a * (a - 1.0) / 6.0,
    ]
}

/// `dst[j] = src(j − shift)` along one strided line of `len` nodes.
fn shift_line(
    data: &[f64],
    out: &mut [f64],
    start: usize,
    stride: usize,
    len: usize,
    shift: f64,
    periodic: bool,
) {
    let base = (-shift).floor();
    let weights = cubic_weights(-shift - base);
    let base = base as i64;
    let n = len as i64;
    for j in 0..n {
        let mut acc = 0.0;
        for (m, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let i = j + base + m as i64 - 1;
            let idx = if periodic {
                i.rem_euclid(n)
            } else if (0..n).contains(&i) {
                i
            } else {
                continue;
            };
            acc += w * data[start + idx as usize * stride];
        }
        out[start + j as usize * stride] = acc;
    }
}

/// Calls `f(start, stride)` for every line along `axis` of an `n^dim` block.
fn for_each_line(n: usize, dim: usize, axis: usize, mut f: impl FnMut(usize, usize)) {
    let stride = n.pow((dim - 1 - axis) as u32);
    let outer = n.pow(axis as u32);
    for block in 0..outer {
        for inner in 0..stride {
            f(block * n * stride + inner, stride);
        }
    }
}

/// Interpolation used for the spatial half steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum XAdvection {
    /// Exact Fourier phase shift of each velocity slice. The Nyquist mode is
    /// left in place.
    #[default]
    Spectral,
    /// 4-point Lagrange interpolation, periodic.
    Cubic,
}

impl std::str::FromStr for XAdvection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "cubic" => Ok(Self::Cubic),
            _ => Err(Error::Config(format!("unknown x advection `{s}` (expected spectral or cubic)"))),
        }
    }
}

/// Free transport `f(x, v) ← f(x − v τ, v)`.
pub fn advect_x(f: &PhaseSpaceField, tau: f64, method: XAdvection) -> PhaseSpaceField {
    let grid = f.grid;
    let nvel = f.velocity_len();
    let slices: Vec<Vec<f64>> = (0..nvel)
        .into_par_iter()
        .map(|iv| {
            let slice: Vec<f64> = (0..grid.len()).map(|ix| f.values[ix * nvel + iv]).collect();
            let v = f.velocity(iv);
            let disp = [v[0] * tau, v[1] * tau, v[2] * tau];
            match method {
                XAdvection::Spectral => shift_spectral(&grid, slice, &disp),
                XAdvection::Cubic => shift_cubic(&grid, slice, &disp),
            }
        })
        .collect();
    let mut values = vec![0.0; f.values.len()];
    for (iv, slice) in slices.iter().enumerate() {
        for (ix, v) in slice.iter().enumerate() {
            values[ix * nvel + iv] = *v;
        }
    }
    PhaseSpaceField { values, ..f.clone() }
}

fn shift_cubic(grid: &TorusGrid, mut cur: Vec<f64>, disp: &[f64; 3]) -> Vec<f64> {
    let (d, n, h) = (grid.dim(), grid.n(), grid.spacing());
    let mut next = vec![0.0; cur.len()];
    for axis in 0..d {
        let shift = disp[axis] / h;
        if shift == 0.0 {
            continue;
        }
        for_each_line(n, d, axis, |start, stride| {
            shift_line(&cur, &mut next, start, stride, n, shift, true)
        });
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

fn shift_spectral(grid: &TorusGrid, values: Vec<f64>, disp: &[f64; 3]) -> Vec<f64> {
    if disp.iter().all(|&a| a == 0.0) {
        return values;
    }
    let n = grid.n();
    let mut spectrum = forward(grid, &values);
    for (k, c) in spectrum.iter_mut().enumerate() {
        let idx = grid.multi_index(k);
        let mut phase = 0.0;
        for axis in 0..grid.dim() {
            let m = grid.wavenumber(idx[axis]);
            if 2 * m.unsigned_abs() as usize != n {
                phase -= 2.0 * PI * m as f64 * disp[axis];
            }
        }
        *c *= Complex64::from_polar(1.0, phase);
    }
    inverse_real(grid, spectrum)
}

/// Velocity kick `f(x, v) ← f(x, v − E(x) τ)` with zero inflow. Returns the
/// kicked field and the mass that left the velocity box.
pub fn kick_v(f: &PhaseSpaceField, e_field: &VectorField, tau: f64) -> Result<(PhaseSpaceField, f64)> {
    if e_field.grid() != &f.grid {
        return Err(Error::GridMismatch);
    }
    let d = f.grid.dim();
    let nv = f.nv;
    let nvel = f.velocity_len();
    let hv = f.velocity_spacing();
    let mut values = f.values.clone();
    let lost: f64 = values
        .par_chunks_mut(nvel)
        .enumerate()
        .map(|(ix, slice)| {
            let before: f64 = slice.iter().sum();
            let mut scratch = vec![0.0; nvel];
            for axis in 0..d {
                let shift = e_field.component(axis).values()[ix] * tau / hv;
                if shift == 0.0 {
                    continue;
                }
                for_each_line(nv, d, axis, |start, stride| {
                    shift_line(slice, &mut scratch, start, stride, nv, shift, false)
                });
                slice.copy_from_slice(&scratch);
            }
            before - slice.iter().sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let outflow = lost * f.cell_volume();
    Ok((PhaseSpaceField { values, ..f.clone() }, outflow))
}

/// Sets negative undershoots to zero and returns the mass added.
fn clip_negative(f: &mut PhaseSpaceField) -> f64 {
    let mut added = 0.0;
    for v in f.values.iter_mut() {
        if *v < 0.0 {
            added -= *v;
            *v = 0.0;
        }
    }
    added * f.cell_volume()
}

/// Bookkeeping for one time step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Mass lost through the velocity boundary.
    pub outflow: f64,
    /// Mass added by clipping negative values.
    pub clipped: f64,
}

/// `dt ≤ safety · min(h_x / V, h_v / max|E|)`.
pub fn cfl_limit(f: &PhaseSpaceField, e_field: &VectorField, safety: f64) -> f64 {
    let transport = f.grid.spacing() / f.v_extent;
    let emax = e_field.max_magnitude();
    let kick = if emax > 0.0 {
        f.velocity_spacing() / emax
    } else {
        f64::INFINITY
    };
    safety * transport.min(kick)
}

fn check_cfl(f: &PhaseSpaceField, e_field: &VectorField, dt: f64, safety: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let limit = cfl_limit(f, e_field, safety);
    if dt > limit {
        return Err(Error::Cfl { dt, limit });
    }
    Ok(())
}

/// One Strang step `x/2, v, x/2` in a prescribed field.
pub fn step(
    f: &PhaseSpaceField,
    e_field: &VectorField,
    dt: f64,
    cfl_safety: f64,
    method: XAdvection,
) -> Result<(PhaseSpaceField, StepStats)> {
    check_cfl(f, e_field, dt, cfl_safety)?;
    let mass = f.mass();
    let half = advect_x(f, 0.5 * dt, method);
    let (kicked, outflow) = kick_v(&half, e_field, dt)?;
    if outflow > MAX_OUTFLOW_FRACTION * mass {
        return Err(Error::VelocityBoxTooSmall { outflow, mass });
    }
    let mut out = advect_x(&kicked, 0.5 * dt, method);
    let clipped = clip_negative(&mut out);
    Ok((out, StepStats { outflow, clipped }))
}

/// Initial data recognised by the config `init` key.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    Maxwellian,
    PerturbedMaxwellian { amplitude: f64, mode: u32 },
    File(PathBuf),
}

impl std::str::FromStr for InitialCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognised init `{s}`"));
        if s == "maxwellian" {
            return Ok(Self::Maxwellian);
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(path)));
        }
        if let Some(rest) = s.strip_prefix("perturbed_maxwellian:") {
            let (a, m) = rest.split_once(':').ok_or_else(bad)?;
            let amplitude: f64 = a.parse().map_err(|_| bad())?;
            let mode: u32 = m.parse().map_err(|_| bad())?;
            if !(amplitude.abs() < 1.0) {
                return Err(Error::Config(format!("perturbation amplitude {amplitude} makes the density negative")));
            }
            return Ok(Self::PerturbedMaxwellian { amplitude, mode });
        }
        Err(bad())
    }
}

/// Smooth step: 0 for `u ≤ 0`, 1 for `u ≥ 1`, `C^∞` in between.
pub(crate) fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / u).exp();
        let b = (-1.0 / (1.0 - u)).exp();
        a / (a + b)
    }
}

/// Compactly supported velocity cutoff: equal to 1 for `|v_a| ≤ V − h_v − V/4`
/// on every axis and to 0 from the outermost node layer outwards.
pub fn velocity_cutoff(v: &[f64], v_extent: f64, hv: f64) -> f64 {
    let edge = v_extent - hv;
    let width = v_extent / 4.0;
    v.iter().map(|c| smooth_step((edge - c.abs()) / width)).product()
}

/// `(1 + a cos(2π k x₁)) (2π)^{−d/2} e^{−|v|²/2}`, cut off smoothly inside the
/// velocity box.
pub fn perturbed_maxwellian(
    grid: TorusGrid,
    v_extent: f64,
    nv: usize,
    amplitude: f64,
    mode: u32,
) -> Result<PhaseSpaceField> {
    let d = grid.dim();
    let norm = (2.0 * PI).powf(-(d as f64) / 2.0);
    let hv = 2.0 * v_extent / nv as f64;
    PhaseSpaceField::from_fn(grid, v_extent, nv, |x, v| {
        let spatial = 1.0 + amplitude * (2.0 * PI * mode as f64 * x[0]).cos();
        let v2: f64 = v.iter().map(|c| c * c).sum();
        spatial * norm * (-0.5 * v2).exp() * velocity_cutoff(v, v_extent, hv)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VlasovConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_reg: usize,
    pub cfl_safety: f64,
    /// Energy and snapshot cadence, in steps.
    pub sample_every: usize,
    /// Allowed relative growth of the total energy.
    pub energy_tol: f64,
    pub x_advection: XAdvection,
}

impl Default for VlasovConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            n_reg: 4,
            cfl_safety: 0.8,
            sample_every: 10,
            energy_tol: 1e-2,
            x_advection: XAdvection::Spectral,
        }
    }
}

impl VlasovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::InvalidParameter("dt must be positive and t_end nonnegative".into()));
        }
        if self.n_reg == 0 || self.sample_every == 0 {
            return Err(Error::InvalidParameter("n_reg and sample_every must be at least 1".into()));
        }
        if !(self.cfl_safety > 0.0) || !(self.energy_tol >= 0.0) {
            return Err(Error::InvalidParameter("cfl_safety must be positive".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// One row of the energy trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySample {
    pub step: usize,
    pub time: f64,
    pub energy: EnergyBreakdown,
}

/// Conservation bookkeeping over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunLedger {
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Cumulative mass lost through the velocity boundary.
    pub outflow: f64,
    /// Cumulative mass added by clipping.
    pub clipped: f64,
    /// Largest mass added by clipping in one step.
    pub max_step_clipped: f64,
    /// `max_t |E(t) − E(0)| / E(0)` over the samples.
    pub max_energy_drift: f64,
    /// Whether `E(t) ≤ E(0)(1 + energy_tol)` at every sample.
    pub energy_ok: bool,
    /// `max_t ‖f_t‖₁ / ‖f₀‖₁` over all steps.
    pub max_l1_ratio: f64,
    /// `max_t ‖f_t‖₂ / ‖f₀‖₂` over all steps.
    pub max_l2_ratio: f64,
    /// Smallest phase-space value seen after any step.
    pub min_value: f64,
    /// `max_t ∫∫|v|²f_t / E(0)` over the samples.
    pub max_second_moment_ratio: f64,
}

impl RunLedger {
    /// `|m(t) − m(0) + outflow − clipped|`.
    pub fn mass_defect(&self) -> f64 {
        (self.final_mass - self.initial_mass + self.outflow - self.clipped).abs()
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Vec<EnergySample>,
    pub snapshots: Vec<(u64, PhaseSpaceField)>,
    pub ledger: RunLedger,
}

impl RunOutput {
    pub fn csv_rows(&self) -> Vec<(f64, EnergyBreakdown)> {
        self.trace.iter().map(|s| (s.time, s.energy)).collect()
    }
}

/// Regularized energy of `f`: kinetic part plus `P` and `S` of the
/// potential solved from `χ_n ∗ ρ`.
pub fn regularized_energy(
    f: &PhaseSpaceField,
    field: &RegularizedField,
    previous: Option<&PbSolution>,
) -> Result<(EnergyBreakdown, PbSolution)> {
    let rho = density(f)?;
    let (_, sol) = field.solve_warm(&rho, previous)?;
    Ok((total_energy(f, &sol)?, sol))
}

/// Integrates to `t_end`, sampling the regularized energy and storing a
/// snapshot every `sample_every` steps and at the final step.
pub fn run(f0: &PhaseSpaceField, vcfg: &VlasovConfig, pcfg: &PbConfig) -> Result<RunOutput> {
    run_with(f0, vcfg, pcfg, true)
}

/// As [`run`]; `keep_snapshots = false` skips storing phase-space snapshots.
pub fn run_with(
    f0: &PhaseSpaceField,
    vcfg: &VlasovConfig,
    pcfg: &PbConfig,
    keep_snapshots: bool,
) -> Result<RunOutput> {
    vcfg.validate()?;
    pcfg.validate()?;
    f0.check_initial()?;
    let field = RegularizedField::new(f0.grid, vcfg.n_reg, *pcfg)?;
    let steps = vcfg.steps();

    let initial_mass = f0.mass();
    let l1_0 = f0.lq_norm(1.0)?;
    let l2_0 = f0.lq_norm(2.0)?;
    let (e0, mut last_sol) = regularized_energy(f0, &field, None)?;
    let mut trace = vec![EnergySample {
        step: 0,
        time: 0.0,
        energy: e0,
    }];
    let mut snapshots = Vec::new();
    if keep_snapshots {
        snapshots.push((0, f0.clone()));
    }
    let mut ledger = RunLedger {
        initial_mass,
        final_mass: initial_mass,
        energy_ok: true,
        max_l1_ratio: 1.0,
        max_l2_ratio: 1.0,
        min_value: f0.min_value(),
        max_second_moment_ratio: f0.second_moment() / e0.total,
        ..RunLedger::default()
    };

    let mut f = f0.clone();
    for k in 1..=steps {
        let half = advect_x(&f, 0.5 * vcfg.dt, vcfg.x_advection);
        let rho = density(&half)?;
        let (e_field, sol) = field.solve_warm(&rho, Some(&last_sol))?;
        check_cfl(&half, &e_field, vcfg.dt, vcfg.cfl_safety)?;
        let (kicked, outflow) = kick_v(&half, &e_field, vcfg.dt)?;
        let mut next = advect_x(&kicked, 0.5 * vcfg.dt, vcfg.x_advection);
        let clipped = clip_negative(&mut next);
        last_sol = sol;

        ledger.outflow += outflow;
        ledger.clipped += clipped;
        ledger.max_step_clipped = ledger.max_step_clipped.max(clipped);
        if ledger.outflow > MAX_OUTFLOW_FRACTION * initial_mass {
            return Err(Error::VelocityBoxTooSmall {
                outflow: ledger.outflow,
                mass: initial_mass,
            });
        }
        ledger.max_l1_ratio = ledger.max_l1_ratio.max(next.lq_norm(1.0)? / l1_0);
        ledger.max_l2_ratio = ledger.max_l2_ratio.max(next.lq_norm(2.0)? / l2_0);
        ledger.min_value = ledger.min_value.min(next.min_value());
        f = next;

        if k % vcfg.sample_every == 0 || k == steps {
            let (energy, sol) = regularized_energy(&f, &field, Some(&last_sol))?;
            last_sol = sol;
            let drift = (energy.total - e0.total).abs() / e0.total;
            ledger.max_energy_drift = ledger.max_energy_drift.max(drift);
            if energy.total > e0.total * (1.0 + vcfg.energy_tol) {
                ledger.energy_ok = false;
            }
            ledger.max_second_moment_ratio =
                ledger.max_second_moment_ratio.max(f.second_moment() / e0.total);
            trace.push(EnergySample {
                step: k,
                time: k as f64 * vcfg.dt,
                energy,
            });
            if keep_snapshots {
                snapshots.push((k as u64, f.clone()));
            }
        }
    }
    ledger.final_mass = f.mass();
    Ok(RunOutput {
        trace,
        snapshots,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maxwell(v: &[f64]) -> f64 {
        (2.0 * PI).powf(-(v.len() as f64) / 2.0) * (-0.5 * v.iter().map(|c| c * c).sum::<f64>()).exp()
    }

    #[test]
    fn cubic_weights_reproduce_cubics() {
        for alpha in [0.0, 0.1, 0.5, 0.93] {
            let w = cubic_weights(alpha);
            for p in 0..4 {
                let exact = alpha.powi(p);
                let interp: f64 = w.iter().enumerate().map(|(m, w)| w * (m as f64 - 1.0).powi(p)).sum();
                assert!((interp - exact).abs() < 1e-14, "alpha {alpha} degree {p}");
            }
        }
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn kernel_normalization_and_constants() {
        let grid = TorusGrid::new(1, 64).unwrap();
        for n_reg in [1, 2, 4, 8] {
            let k = mollifier_kernel(grid, n_reg).unwrap();
            assert!((k.integrate() - 1.0).abs() < 1e-15);
            assert!(k.min() >= 0.0);
            let c = ScalarField::constant(grid, 3.5).convolve(&k).unwrap();
            assert!(c.values().iter().all(|v| (v - 3.5).abs() < 1e-14));
        }
        assert!(mollifier_kernel(grid, 9).is_err());
        assert!(mollifier_kernel(grid, 0).is_err());
        let k2 = mollifier_kernel(TorusGrid::new(2, 32).unwrap(), 2).unwrap();
        assert!((k2.integrate() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mollification_error_shrinks_quadratically() {
        let grid = TorusGrid::new(1, 512).unwrap();
        let f = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).cos());
        let err = |n_reg| {
            let k = mollifier_kernel(grid, n_reg).unwrap();
            f.convolve(&k).unwrap().zip_with(&f, |a, b| a - b).unwrap().lp_norm(2.0).unwrap()
        };
        let (e4, e8) = (err(4), err(8));
        assert!(e4 / e8 >= 3.0, "{e4:e} {e8:e}");
    }

    #[test]
    fn density_examples() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let f = PhaseSpaceField::from_fn(grid, 8.0, 128, |_, v| maxwell(v)).unwrap();
        let rho = density(&f).unwrap();
        assert!(rho.values().iter().all(|r| (r - 1.0).abs() < 1e-10));

        let f = PhaseSpaceField::from_fn(grid, 8.0, 128, |x, v| {
            (1.0 + 0.1 * (2.0 * PI * x[0]).cos()) * maxwell(v)
        })
        .unwrap();
        let rho = density(&f).unwrap();
        for (i, r) in rho.values().iter().enumerate() {
            let x = grid.point(i)[0];
            assert!((r - (1.0 + 0.1 * (2.0 * PI * x).cos())).abs() < 1e-10);
        }

        let zero = PhaseSpaceField::from_fn(grid, 8.0, 16, |_, _| 0.0).unwrap();
        assert!(density(&zero).is_err());
    }

    #[test]
    fn rejects_bad_fields() {
        let grid = TorusGrid::new(1, 8).unwrap();
        assert!(PhaseSpaceField::new(grid, 1.0, 8, vec![1.0; 63]).is_err());
        assert!(PhaseSpaceField::new(grid, 1.0, 8, vec![-1.0; 64]).is_err());
        assert!(PhaseSpaceField::new(grid, 0.0, 8, vec![1.0; 64]).is_err());
        let wide = PhaseSpaceField::from_fn(grid, 2.0, 16, |_, v| maxwell(v)).unwrap();
        assert!(matches!(wide.check_initial(), Err(Error::VelocityBoxTooSmall { .. })));
    }

    #[test]
    fn cutoff_initial_data_is_contained() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let f = perturbed_maxwellian(grid, 6.0, 128, 0.05, 1).unwrap();
        assert_eq!(f.outer_layer_max(), 0.0);
        f.check_initial().unwrap();
        let rho = density(&f).unwrap();
        // the Gaussian tail beyond |v| ≈ 4.4 is removed
        assert!((rho.integrate() - 1.0).abs() < 3e-5);
        let g2 = TorusGrid::new(2, 8).unwrap();
        let f = perturbed_maxwellian(g2, 6.0, 16, 0.0, 1).unwrap();
        assert_eq!(f.outer_layer_max(), 0.0);
    }

    #[test]
    fn regularized_field_of_constant_vanishes() {
        let grid = TorusGrid::new(1, 64).unwrap();
        let (e, sol) = regularized_field(&ScalarField::constant(grid, 1.7), 4, &PbConfig::default()).unwrap();
        assert!(e.max_magnitude() < 1e-10);
        assert!(sol.phi.values().iter().all(|p| (p - 1.7f64.ln()).abs() < 1e-10));
    }

    #[test]
    fn regularized_field_recovers_manufactured_mode() {
        // Pick ρ with χ_n ∗ ρ equal to the manufactured density of
        // Φ* = 0.02 cos(2πx); then E = −χ_n ∗ ∂_xΦ* = χ̂_n(1)·0.04π sin(2πx).
        let grid = TorusGrid::new(1, 64).unwrap();
        let n_reg = 4;
        let kernel = mollifier_kernel(grid, n_reg).unwrap();
        let target = ScalarField::from_fn(grid, |x| {
            let c = (2.0 * PI * x[0]).cos();
            0.02 * (2.0 * PI).powi(2) * c + (0.02 * c).exp()
        });
        let spec_k = crate::grid::forward(&grid, kernel.values());
        let mut spec_t = crate::grid::forward(&grid, target.values());
        for (t, k) in spec_t.iter_mut().zip(&spec_k) {
            *t /= k * grid.cell_volume();
        }
        let rho = ScalarField::new(grid, crate::grid::inverse_real(&grid, spec_t)).unwrap();
        assert!(rho.min() > 0.0);
        let (e, _) = regularized_field(&rho, n_reg, &PbConfig::default()).unwrap();
        let khat1 = spec_k[1].re * grid.cell_volume();
        for (i, ev) in e.component(0).values().iter().enumerate() {
            let x = grid.point(i)[0];
            let exact = khat1 * 0.04 * PI * (2.0 * PI * x).sin();
            assert!((ev - exact).abs() < 1e-8, "{ev} vs {exact}");
        }
    }

    #[test]
    fn regularized_field_converges_as_index_grows() {
        let grid = TorusGrid::new(1, 256).unwrap();
        let cfg = PbConfig::default();
        let rho = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos() + 0.2 * (6.0 * PI * x[0]).sin());
        let exact = crate::pbsolver::solve_pb(&rho, &cfg).unwrap().e_field;
        let errs: Vec<f64> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&n| {
                let (e, _) = regularized_field(&rho, n, &cfg).unwrap();
                e.component(0)
                    .zip_with(exact.component(0), |a, b| a - b)
                    .unwrap()
                    .lp_norm(2.0)
                    .unwrap()
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "{errs:?}");
        }
        assert!(errs[4] < errs[0] / 100.0, "{errs:?}");
    }

    #[test]
    fn uniform_data_is_steady_under_free_transport() {
        let grid = TorusGrid::new(1, 32).unwrap();
        let f = PhaseSpaceField::from_fn(grid, 8.0, 64, |_, v| maxwell(v)).unwrap();
        let (g, stats) = step(&f, &VectorField::zeros(grid), 1e-3, 0.8, XAdvection::Cubic).unwrap();
        for (a, b) in f.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(stats.outflow, 0.0);
    }

    fn free_transport_error(n: usize) -> f64 {
        let grid = TorusGrid::new(1, n).unwrap();
        let (vext, nv) = (4.0, 32);
        let g = |x: f64, v: f64| (1.0 + 0.3 * (2.0 * PI * x).cos()) * (-0.5 * v * v).exp();
        let t0 = 0.1;
        let mut f = PhaseSpaceField::from_fn(grid, vext, nv, |x, v| g(x[0] - v[0] * t0, v[0])).unwrap();
        let dt = 0.5 * grid.spacing() / vext;
        let steps = 20;
        for _ in 0..steps {
            f = step(&f, &VectorField::zeros(grid), dt, 0.8, XAdvection::Cubic).unwrap().0;
        }
        let tau = steps as f64 * dt;
        let exact = PhaseSpaceField::from_fn(grid, vext, nv, |x, v| g(x[0] - v[0] * (t0 + tau), v[0])).unwrap();
        f.values()
            .iter()
            .zip(exact.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn free_transport_is_fourth_order() {
        let (coarse, fine) = (free_transport_error(16), free_transport_error(32));
        // dt ∝ h keeps the per-step shift in cells fixed, so the error scales like h⁴
        assert!(coarse / fine > 12.0, "{coarse:e} {fine:e}");
        assert!(fine < 1e-4);
    }

    #[test]
    fn spectral_transport_is_exact_on_band_limited_data() {
        let grid = TorusGrid::new(2, 16).unwrap();
        let g = |x: &[f64], v: &[f64]| {
            (1.0 + 0.3 * (2.0 * PI * (x[0] + 2.0 * x[1])).sin()) * maxwell(v)
        };
        let f = PhaseSpaceField::from_fn(grid, 4.0, 8, g).unwrap();
        let tau = 0.137;
        let moved = advect_x(&f, tau, XAdvection::Spectral);
        let exact = PhaseSpaceField::from_fn(grid, 4.0, 8, |x, v| {
            g(&[x[0] - v[0] * tau, x[1] - v[1] * tau], v)
        })
        .unwrap();
        for (a, b) in moved.values().iter().zip(exact.values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn x_advection_parses() {
        assert_eq!("cubic".parse::<XAdvection>().unwrap(), XAdvection::Cubic);
        assert_eq!("spectral".parse::<XAdvection>().unwrap(), XAdvection::Spectral);
        assert!("linear".parse::<XAdvection>().is_err());
    }

    #[test]
    fn equilibrium_is_preserved() {
        let grid = TorusGrid::new(1, 32).unwrap();
        let f0 = perturbed_maxwellian(grid, 8.0, 128, 0.0, 1).unwrap();
        let vcfg = VlasovConfig {
            dt: 1e-3,
            t_end: 0.1,
            sample_every: 50,
            ..VlasovConfig::default()
        };
        let out = run(&f0, &vcfg, &PbConfig::default()).unwrap();
        let (_, last) = out.snapshots.last().unwrap();
        let diff = f0
            .values()
            .iter()
            .zip(last.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = f0.values().iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm <= 1e-8, "{}", diff / norm);
        assert_eq!(out.trace.len(), 3);
        for s in &out.trace {
            assert!((s.energy.total - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn cfl_violation_is_reported() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let f = perturbed_maxwellian(grid, 6.0, 32, 0.05, 1).unwrap();
        assert!(matches!(step(&f, &VectorField::zeros(grid), 0.1, 0.8, XAdvection::Spectral), Err(Error::Cfl { .. })));
        let vcfg = VlasovConfig {
            dt: 0.1,
            t_end: 0.2,
            n_reg: 2,
            ..VlasovConfig::default()
        };
        assert!(matches!(run(&f, &vcfg, &PbConfig::default()), Err(Error::Cfl { .. })));
    }

    #[test]
    fn strong_field_overflows_velocity_box() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let f = PhaseSpaceField::from_fn(grid, 3.0, 32, |_, v| if v[0] > 2.5 { 1.0 } else { 0.1 }).unwrap();
        let e = VectorField::new(vec![ScalarField::constant(grid, 20.0)]).unwrap();
        assert!(matches!(step(&f, &e, 1e-3, 0.8, XAdvection::Spectral), Err(Error::VelocityBoxTooSmall { .. })));
    }

    #[test]
    fn init_parsing() {
        assert_eq!("maxwellian".parse::<InitialCondition>().unwrap(), InitialCondition::Maxwellian);
        assert_eq!(
            "perturbed_maxwellian:0.05:1".parse::<InitialCondition>().unwrap(),
            InitialCondition::PerturbedMaxwellian { amplitude: 0.05, mode: 1 }
        );
        assert_eq!(
            "file:/tmp/x.ivpf".parse::<InitialCondition>().unwrap(),
            InitialCondition::File("/tmp/x.ivpf".into())
        );
        assert!("perturbed_maxwellian:2:1".parse::<InitialCondition>().is_err());
        assert!("gaussian".parse::<InitialCondition>().is_err());
    }

    #[test]
    fn spatial_mollification_keeps_mass() {
        let grid = TorusGrid::new(1, 32).unwrap();
        let f = perturbed_maxwellian(grid, 6.0, 32, 0.5, 3).unwrap();
        let k = mollifier_kernel(grid, 2).unwrap();
        let g = f.mollify_space(&k).unwrap();
        assert!((g.mass() - f.mass()).abs() < 1e-14);
        assert!(g.lq_norm(2.0).unwrap() <= f.lq_norm(2.0).unwrap());
    }
}
