//! Poisson–Boltzmann solver `−ΔΦ = ρ − e^Φ` on the torus.
//!
//! The density is split as `ρ = ρ_♭ + ρ^♯` with `ρ_♭ = min(ρ, ½‖ρ‖₁)`. The
//! bounded part drives a linear zero-mean Poisson problem for `Φ_♭`; the
//! remainder `Φ^♯ = Φ − Φ_♭` minimizes the strictly convex functional
//!
//! ```text
//! J[h] = ∫ ½|∇h|² + e^{Φ_♭ + h} − (m_♭ + ρ^♯) h,   m_♭ = ∫ ρ_♭,
//! ```
//!
//! whose Euler–Lagrange equation is `−Δh = m_♭ + ρ^♯ − e^{Φ_♭ + h}`. We
//! minimize `J` by damped Newton with Armijo backtracking; each Newton
//! direction solves `(−Δ + e^{Φ_♭+h}) d = −F(h)` by preconditioned CG.

use crate::error::{Error, Result};
use crate::grid::{
    gradient, solve_poisson_zero_mean, solve_shifted_poisson_with, CgOptions, ScalarField,
    TorusGrid, VectorField,
};

/// Largest exponent accepted inside `e^{Φ_♭ + h}`.
pub const MAX_EXPONENT: f64 = 700.0;

/// Slack for the pointwise comparison of two electron densities.
pub const COMPARISON_TOL: f64 = 1e-7;

const MAX_BACKTRACKS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PbConfig {
    /// Residual target in `L²`, relative to `max(1, ‖ρ‖₂)`.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
}

impl Default for PbConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton_iters: 60,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
        }
    }
}

impl PbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidParameter("newton_tol must be positive".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidParameter("backtrack_factor must lie in (0, 1)".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidParameter("armijo_c must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// `ρ = ρ_♭ + ρ^♯` with the flat part capped at half the total mass.
#[derive(Clone, Debug)]
pub struct FlatSharpSplit {
    pub rho_flat: ScalarField,
    pub rho_sharp: ScalarField,
    pub m_flat: f64,
    pub threshold: f64,
}

pub fn flat_sharp_split(rho: &ScalarField) -> Result<FlatSharpSplit> {
    rho.validate_density()?;
    let threshold = 0.5 * rho.lp_norm(1.0)?;
    let (flat, sharp): (Vec<f64>, Vec<f64>) =
        rho.values().iter().map(|&v| split_value(v, threshold)).unzip();
    let rho_flat = ScalarField::new(*rho.grid(), flat)?;
    let rho_sharp = ScalarField::new(*rho.grid(), sharp)?;
    let m_flat = rho_flat.integrate();
    Ok(FlatSharpSplit {
        rho_flat,
        rho_sharp,
        m_flat,
        threshold,
    })
}

/// Splits one value as `flat + sharp == value` exactly in floating point,
/// with `flat <= threshold` and `sharp >= 0`.
fn split_value(value: f64, threshold: f64) -> (f64, f64) {
    if value <= threshold {
        return (value, 0.0);
    }
    let mut sharp = value - threshold;
    loop {
        // value − sharp is exact once sharp >= value / 2 (Sterbenz); below that
        // the rounded difference is checked directly.
        let flat = value - sharp;
        if flat <= threshold && flat + sharp == value {
            return (flat, sharp);
        }
        sharp = sharp.next_up();
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p <= 1.0 {
        return Err(Error::InvalidParameter(format!("exponent p must exceed 1, got {p}")));
    }
    Ok(())
}

/// Lower bound `½‖ρ‖₁ (‖ρ‖₁ / 2‖ρ‖_p)^{p/(p−1)}` on the flat mass `m_♭`.
pub fn m_flat_lower_bound(rho: &ScalarField, p: f64) -> Result<f64> {
    check_exponent(p)?;
    rho.validate_density()?;
    let l1 = rho.lp_norm(1.0)?;
    let lp = rho.lp_norm(p)?;
    Ok(0.5 * l1 * (l1 / (2.0 * lp)).powf(p / (p - 1.0)))
}

/// Evaluates `J[h]`. The Dirichlet term is `½⟨h, −Δh⟩`, which is `½∫|∇h|²`
/// for band-limited `h` and keeps the gradient of `J` consistent with the
/// Newton residual at the Nyquist mode.
pub fn energy_j(h: &ScalarField, split: &FlatSharpSplit, phi_flat: &ScalarField) -> Result<f64> {
    if h.grid() != split.rho_sharp.grid() || h.grid() != phi_flat.grid() {
        return Err(Error::GridMismatch);
    }
    let dirichlet = 0.5 * h.inner(&h.neg_laplacian())?;
    let mut rest = 0.0;
    for ((&hv, &pf), &rs) in h
        .values()
        .iter()
        .zip(phi_flat.values())
        .zip(split.rho_sharp.values())
    {
        let exponent = pf + hv;
        if exponent > MAX_EXPONENT {
            return Err(Error::ExponentOverflow { exponent });
        }
        rest += exponent.exp() - (split.m_flat + rs) * hv;
    }
    Ok(dirichlet + rest * h.grid().cell_volume())
}

#[derive(Clone, Debug)]
pub struct PbSolution {
    pub phi: ScalarField,
    pub phi_flat: ScalarField,
    pub phi_sharp: ScalarField,
    pub e_field: VectorField,
    pub electron_density: ScalarField,
    pub residual: f64,
    pub iterations: usize,
    pub j_value: f64,
    /// `J` at every accepted Newton iterate, starting with the initial guess.
    pub j_history: Vec<f64>,
}

impl PbSolution {
    /// Single-line machine-readable diagnostics record.
    pub fn diagnostics_line(&self) -> String {
        format!(
            "iters={} residual={:e} J={:.17e}",
            self.iterations, self.residual, self.j_value
        )
    }
}

/// Full residual `‖−ΔΦ + e^Φ − ρ‖₂`.
pub fn pb_residual(phi: &ScalarField, rho: &ScalarField) -> Result<f64> {
    let lap = phi.neg_laplacian();
    let r = lap
        .zip_with(phi, |l, p| l + p.exp())?
        .zip_with(rho, |a, b| a - b)?;
    r.lp_norm(2.0)
}

pub fn solve_pb(rho: &ScalarField, cfg: &PbConfig) -> Result<PbSolution> {
    solve_pb_from(rho, cfg, None)
}

/// Like [`solve_pb`], optionally starting Newton from a caller-supplied
/// sharp part instead of `log(∫ρ) − Φ_♭`.
pub fn solve_pb_from(
    rho: &ScalarField,
    cfg: &PbConfig,
    initial_sharp: Option<&ScalarField>,
) -> Result<PbSolution> {
    cfg.validate()?;
    let split = flat_sharp_split(rho)?;
    let grid = *rho.grid();
    let phi_flat = solve_poisson_zero_mean(&split.rho_flat);
    let mass = rho.integrate();

    let mut h = match initial_sharp {
        Some(h0) => {
            if h0.grid() != &grid {
                return Err(Error::GridMismatch);
            }
            h0.clone()
        }
        None => phi_flat.map(|pf| mass.ln() - pf),
    };
    let source = split.rho_sharp.map(|rs| split.m_flat + rs);
    let target = cfg.newton_tol * rho.lp_norm(2.0)?.max(1.0);
    let cg = CgOptions {
        tol: 1e-12,
        max_iter: Some(((10.0 * (grid.len() as f64).sqrt()) as usize).max(1000)),
    };

    // Newton residual F(h) = −Δh + e^{Φ_♭+h} − m_♭ − ρ^♯ and the weights e^{Φ_♭+h}.
    let evaluate = |h: &ScalarField| -> Result<(ScalarField, ScalarField)> {
        let exps = h.zip_with(&phi_flat, |hv, pf| (hv + pf).exp())?;
        let f = h
            .neg_laplacian()
            .zip_with(&exps, |l, e| l + e)?
            .zip_with(&source, |a, s| a - s)?;
        Ok((f, exps))
    };

    let mut j = energy_j(&h, &split, &phi_flat)?;
    let mut j_history = vec![j];
    let (mut f, mut weights) = evaluate(&h)?;
    let mut res = f.lp_norm(2.0)?;
    let mut iterations = 0;

    while res > target {
        if iterations >= cfg.max_newton_iters {
            return Err(Error::NewtonNotConverged {
                iterations,
                residual: res,
                j_value: j,
            });
        }
        iterations += 1;
        let rhs = f.map(|v| -v);
        let (dir, _) = solve_shifted_poisson_with(&rhs, &weights, cg)?;
        let slope = f.inner(&dir)?;
        // Below this, J differences are dominated by rounding.
        let noise = 1e-13 * (j.abs() + mass);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = h.zip_with(&dir, |a, b| a + t * b)?;
            let peak = trial
                .values()
                .iter()
                .zip(phi_flat.values())
                .map(|(a, b)| a + b)
                .fold(f64::NEG_INFINITY, f64::max);
            if peak > MAX_EXPONENT {
                t *= cfg.backtrack_factor;
                continue;
            }
            let j_trial = energy_j(&trial, &split, &phi_flat)?;
            if j_trial <= j + cfg.armijo_c * t * slope {
                accepted = Some((trial, j_trial));
                break;
            }
            if (t * slope).abs() <= noise {
                let (f_trial, _) = evaluate(&trial)?;
                if f_trial.lp_norm(2.0)? < res {
                    accepted = Some((trial, j_trial));
                    break;
                }
            }
            t *= cfg.backtrack_factor;
        }
        let Some((next, j_next)) = accepted else {
            let peak = h.values().iter().zip(phi_flat.values()).map(|(a, b)| a + b + dir.max());
            let exponent = peak.fold(f64::NEG_INFINITY, f64::max);
            if exponent > MAX_EXPONENT {
                return Err(Error::ExponentOverflow { exponent });
            }
            return Err(Error::NewtonNotConverged {
                iterations,
                residual: res,
                j_value: j,
            });
        };
        h = next;
        j = j_next;
        j_history.push(j);
        (f, weights) = evaluate(&h)?;
        res = f.lp_norm(2.0)?;
    }

    let phi = phi_flat.zip_with(&h, |a, b| a + b)?;
    let electron_density = phi.map(f64::exp);
    let e_field = gradient(&phi).map(|c| c.map(|v| -v));
    let residual = pb_residual(&phi, rho)?;
    Ok(PbSolution {
        phi,
        phi_flat,
        phi_sharp: h,
        e_field,
        electron_density,
        residual,
        iterations,
        j_value: j,
        j_history,
    })
}

/// Amplitude of the manufactured potential `Φ* = A cos(2π x₁)`.
pub const MANUFACTURED_AMPLITUDE: f64 = 0.02;

/// `(ρ, Φ*)` with `Φ* = 0.02 cos(2π x₁)` and `ρ = −ΔΦ* + e^{Φ*}`, so that
/// `Φ*` solves the problem for `ρ` exactly.
pub fn manufactured_fixture(grid: TorusGrid) -> (ScalarField, ScalarField) {
    let a = MANUFACTURED_AMPLITUDE;
    let k2 = (2.0 * std::f64::consts::PI).powi(2);
    let c = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).cos();
    let rho = ScalarField::from_fn(grid, |x| a * k2 * c(x) + (a * c(x)).exp());
    let phi = ScalarField::from_fn(grid, |x| a * c(x));
    (rho, phi)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    /// `min_x (e^{Φ[ρ₂]} − e^{Φ[ρ₁]})`.
    pub min_gap: f64,
    pub holds: bool,
}

/// Solves both problems for `ρ₁ ≤ ρ₂` and measures the pointwise ordering of
/// the electron densities.
pub fn comparison_check(rho1: &ScalarField, rho2: &ScalarField, cfg: &PbConfig) -> Result<Comparison> {
    if rho1.grid() != rho2.grid() {
        return Err(Error::GridMismatch);
    }
    if let Some(i) = rho1
        .values()
        .iter()
        .zip(rho2.values())
        .position(|(a, b)| a > b)
    {
        return Err(Error::InvalidParameter(format!(
            "comparison needs rho1 <= rho2 pointwise, violated at index {i}"
        )));
    }
    let s1 = solve_pb(rho1, cfg)?;
    let s2 = solve_pb(rho2, cfg)?;
    let min_gap = s2
        .electron_density
        .values()
        .iter()
        .zip(s1.electron_density.values())
        .map(|(a, b)| a - b)
        .fold(f64::INFINITY, f64::min);
    Ok(Comparison {
        min_gap,
        holds: min_gap >= -COMPARISON_TOL,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElectronMinBound {
    pub bound: f64,
    pub observed_min: f64,
}

/// Uniform lower bound `m_bound · e^{−n_d ‖ρ‖₁}` on the electron density,
/// with `m_bound` from [`m_flat_lower_bound`], next to the solved minimum.
pub fn electron_min_bound(
    rho: &ScalarField,
    p: f64,
    n_d: f64,
    cfg: &PbConfig,
) -> Result<ElectronMinBound> {
    if !(n_d > 0.0) {
        return Err(Error::InvalidParameter(format!("n_d must be positive, got {n_d}")));
    }
    let sol = solve_pb(rho, cfg)?;
    electron_min_bound_for(rho, &sol, p, n_d)
}

/// As [`electron_min_bound`] but for an already solved density.
pub fn electron_min_bound_for(
    rho: &ScalarField,
    sol: &PbSolution,
    p: f64,
    n_d: f64,
) -> Result<ElectronMinBound> {
    let bound = m_flat_lower_bound(rho, p)? * (-n_d * rho.lp_norm(1.0)?).exp();
    Ok(ElectronMinBound {
        bound,
        observed_min: sol.electron_density.min(),
    })
}

/// `n_d(‖ρ‖₁ + ‖ρ‖₁²) + (4 e^{n_d‖ρ‖₁} Γ(p′+3))^{p′}` with `p′ = p/(p−1)`.
pub fn c1_estimate(rho: &ScalarField, p: f64, n_d: f64) -> Result<f64> {
    check_exponent(p)?;
    if !(n_d >= 0.0) {
        return Err(Error::InvalidParameter(format!("n_d must be nonnegative, got {n_d}")));
    }
    rho.validate_density()?;
    let l1 = rho.lp_norm(1.0)?;
    let conj = p / (p - 1.0);
    // log of the second term, so overflow is detected before it happens
    let log_second = conj * ((4.0f64).ln() + n_d * l1 + libm::lgamma(conj + 3.0));
    if log_second > f64::MAX.ln() {
        return Err(Error::ExponentOverflow { exponent: log_second });
    }
    let second = (4.0 * (n_d * l1).exp() * libm::tgamma(conj + 3.0)).powf(conj);
    Ok(n_d * (l1 + l1 * l1) + second)
}
