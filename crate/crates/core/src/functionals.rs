//! Energy functionals of the Poisson–Boltzmann solution and the full
//! Vlasov energy, stability metrics between two solutions, and a few closed
//! form utilities (Gautschi-type lower bound, interpolation exponent,
//! weak-solution thresholds).

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{gradient, ScalarField};
use crate::pbsolver::{solve_pb, PbConfig, PbSolution};
use crate::vlasov::PhaseSpaceField;

/// Kinetic, potential and entropy contributions at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub potential: f64,
    pub entropy: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(kinetic: f64, potential: f64, entropy: f64) -> Self {
        Self {
            kinetic,
            potential,
            entropy,
            total: kinetic + potential + entropy,
        }
    }
}

/// `P = ½∫|∇Φ|²`.
pub fn potential_energy(sol: &PbSolution) -> f64 {
    0.5 * gradient(&sol.phi).squared_l2()
}

/// Integrand `e^φ(φ − 1) + 1 = Σ_{k≥2} (k−1) φ^k / k!`, summed directly for
/// small `φ` where the closed form cancels.
fn entropy_density(phi: f64) -> f64 {
    if phi.abs() < 0.1 {
        let mut term = phi; // φ^k / k! for k = 1
        let mut sum = 0.0;
        for k in 2..16 {
            term *= phi / k as f64;
            sum += (k - 1) as f64 * term;
        }
        sum
    } else {
        phi.exp() * (phi - 1.0) + 1.0
    }
}

/// `S = ∫ e^Φ(Φ − 1) + 1`.
pub fn entropy(sol: &PbSolution) -> f64 {
    let grid = sol.phi.grid();
    sol.phi.values().iter().map(|&p| entropy_density(p)).sum::<f64>() * grid.cell_volume()
}

/// `½∫∫|v|²f + P + S`, with `sol` solved from the density of `f` (or its
/// mollification, for the regularized energy).
pub fn total_energy(f: &PhaseSpaceField, sol: &PbSolution) -> Result<EnergyBreakdown> {
    if f.spatial_grid() != sol.phi.grid() {
        return Err(Error::GridMismatch);
    }
    if !(f.mass() > 0.0) {
        return Err(Error::InvalidDensity("phase-space field has zero mass".into()));
    }
    Ok(EnergyBreakdown::new(
        f.kinetic_energy(),
        potential_energy(sol),
        entropy(sol),
    ))
}

/// Writes `t,kinetic,potential,entropy,total` rows with 17 significant digits.
pub fn write_energy_csv<W: Write>(mut out: W, rows: &[(f64, EnergyBreakdown)]) -> Result<()> {
    writeln!(out, "t,kinetic,potential,entropy,total")?;
    for (t, e) in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            t, e.kinetic, e.potential, e.entropy, e.total
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityReport {
    /// `‖∇Φ₁ − ∇Φ₂‖₂`
    pub grad_diff_l2: f64,
    /// `‖Φ₁ − Φ₂‖_q`
    pub phi_diff_lq: f64,
    /// `‖ρ₁ − ρ₂‖_p`
    pub rho_diff_lp: f64,
    pub q: f64,
    pub p: f64,
}

pub fn stability_pair(
    rho1: &ScalarField,
    rho2: &ScalarField,
    p: f64,
    q: f64,
    cfg: &PbConfig,
) -> Result<StabilityReport> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::InvalidParameter(format!("need p, q >= 1, got p={p}, q={q}")));
    }
    let s1 = solve_pb(rho1, cfg)?;
    let s2 = solve_pb(rho2, cfg)?;
    stability_of(rho1, &s1, rho2, &s2, p, q)
}

/// As [`stability_pair`] for already solved densities.
pub fn stability_of(
    rho1: &ScalarField,
    s1: &PbSolution,
    rho2: &ScalarField,
    s2: &PbSolution,
    p: f64,
    q: f64,
) -> Result<StabilityReport> {
    let dphi = s1.phi.zip_with(&s2.phi, |a, b| a - b)?;
    Ok(StabilityReport {
        grad_diff_l2: gradient(&dphi).squared_l2().sqrt(),
        phi_diff_lq: dphi.lp_norm(q)?,
        rho_diff_lp: rho1.zip_with(rho2, |a, b| a - b)?.lp_norm(p)?,
        q,
        p,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter("slope needs at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("log-log slope needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("degenerate abscissae".into()));
    }
    Ok(sxy / sxx)
}

/// Both sides of `(e^s − 1)s ≥ s^q / Γ(q)` for `s ≥ 0`, `q ≥ 2`.
pub fn gautschi_check(s: f64, q: f64) -> Result<(f64, f64)> {
    if !(s >= 0.0) || !(q >= 2.0) {
        return Err(Error::InvalidParameter(format!("need s >= 0 and q >= 2, got s={s}, q={q}")));
    }
    let lhs = s.exp_m1() * s;
    let rhs = if s == 0.0 {
        0.0
    } else {
        (q * s.ln() - libm::lgamma(q)).exp()
    };
    Ok((lhs, rhs))
}

/// `p = (d(q−1) + 2q) / (d(q−1) + 2)`, the density integrability exponent
/// obtained from `f ∈ L^q` with a finite second velocity moment.
pub fn interpolation_exponent(d: u32, q: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if !(q > 1.0) {
        return Err(Error::InvalidParameter(format!("q must exceed 1, got {q}")));
    }
    let a = d as f64 * (q - 1.0);
    Ok((a + 2.0 * q) / (a + 2.0))
}

/// Smallest `q` for which the Lagrangian solution is also distributional.
pub fn weak_solution_threshold(d: u32) -> Result<f64> {
    match d {
        0 | 1 => Err(Error::InvalidParameter(format!("dimension must be at least 2, got {d}"))),
        2 => Ok((7.0 + 17f64.sqrt()) / 8.0),
        3 => Ok((12.0 + 3.0 * 5f64.sqrt()) / 11.0),
        _ => Ok(2.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use std::f64::consts::{LN_2, PI};

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    fn solve(rho: &ScalarField) -> PbSolution {
        solve_pb(rho, &PbConfig::default()).unwrap()
    }

    #[test]
    fn potential_examples() {
        for m in [0.3, 1.0, 4.0] {
            assert!(potential_energy(&solve(&ScalarField::constant(g1(32), m))).abs() < 1e-12);
        }
        let grid = g1(64);
        let rho = ScalarField::from_fn(grid, |x| {
            let c = (2.0 * PI * x[0]).cos();
            0.02 * (2.0 * PI).powi(2) * c + (0.02 * c).exp()
        });
        let expected = 0.5 * 0.02f64.powi(2) * (2.0 * PI).powi(2) * 0.5;
        assert!((expected - 0.003947842).abs() < 1e-9);
        assert!((potential_energy(&solve(&rho)) - expected).abs() < 1e-9);
    }

    #[test]
    fn potential_is_quadratic_in_amplitude() {
        let grid = g1(64);
        let eps = [1e-3, 3e-3, 1e-2, 3e-2];
        let pot: Vec<f64> = eps
            .iter()
            .map(|e| {
                potential_energy(&solve(&ScalarField::from_fn(grid, |x| 1.0 + e * (2.0 * PI * x[0]).cos())))
            })
            .collect();
        let slope = loglog_slope(&eps, &pot).unwrap();
        assert!((slope - 2.0).abs() < 0.01, "{slope}");
    }

    #[test]
    fn entropy_examples() {
        let grid = g1(16);
        assert!(entropy(&solve(&ScalarField::constant(grid, 1.0))).abs() < 1e-10);
        let two = entropy(&solve(&ScalarField::constant(grid, 2.0)));
        assert!((two - (2.0 * (LN_2 - 1.0) + 1.0)).abs() < 1e-9);
        assert!((two - 0.3862944).abs() < 1e-7);
        let half = entropy(&solve(&ScalarField::constant(grid, 0.5)));
        assert!((half - (0.5 * (-LN_2 - 1.0) + 1.0)).abs() < 1e-9);
        assert!((half - 0.1534264).abs() < 1e-7);
    }

    #[test]
    fn entropy_density_series_matches_closed_form() {
        for phi in [-0.09f64, -1e-3, 1e-5, 0.05, 0.0999] {
            let closed = phi.exp() * (phi - 1.0) + 1.0;
            assert!((entropy_density(phi) - closed).abs() < 1e-15, "{phi}");
        }
        assert_eq!(entropy_density(0.0), 0.0);
        assert!(entropy_density(-3.0) > 0.0);
    }

    #[test]
    fn stability_examples() {
        let cfg = PbConfig::default();
        let grid = g1(32);
        let r = stability_pair(
            &ScalarField::constant(grid, 1.0),
            &ScalarField::constant(grid, 2.0),
            2.0,
            2.0,
            &cfg,
        )
        .unwrap();
        assert!(r.grad_diff_l2 < 1e-10);
        assert!((r.phi_diff_lq - LN_2).abs() < 1e-9);
        assert!((r.rho_diff_lp - 1.0).abs() < 1e-14);

        let rho = ScalarField::from_fn(grid, |x| 1.0 + 0.4 * (2.0 * PI * x[0]).sin());
        let r = stability_pair(&rho, &rho, 1.5, 3.0, &cfg).unwrap();
        assert!(r.grad_diff_l2 < 1e-10 && r.phi_diff_lq < 1e-10 && r.rho_diff_lp == 0.0);
    }

    #[test]
    fn slope_regression() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.75)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 0.75).abs() < 1e-13);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn gautschi_examples() {
        for q in [2.0, 3.5, 8.0] {
            assert_eq!(gautschi_check(0.0, q).unwrap(), (0.0, 0.0));
        }
        let (l, r) = gautschi_check(1.0, 2.0).unwrap();
        assert!((l - 1.718281828459045).abs() < 1e-15);
        assert!((r - 1.0).abs() < 1e-14);
        let (l, r) = gautschi_check(2.0, 3.0).unwrap();
        assert!((l - 2.0 * (2f64.exp() - 1.0)).abs() < 1e-13);
        assert!((r - 4.0).abs() < 1e-13);
        assert!(gautschi_check(-1.0, 2.0).is_err());
        assert!(gautschi_check(1.0, 1.5).is_err());
    }

    #[test]
    fn interpolation_examples() {
        assert!((interpolation_exponent(3, 2.0).unwrap() - 1.4).abs() < 1e-15);
        assert!((interpolation_exponent(2, 2.0).unwrap() - 1.5).abs() < 1e-15);
        let p = interpolation_exponent(3, 1.0 + 1e-9).unwrap();
        assert!(p > 1.0 && p - 1.0 < 1e-8);
        assert!(interpolation_exponent(2, 1.0).is_err());
        assert!(interpolation_exponent(0, 2.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert!((weak_solution_threshold(3).unwrap() - 1.701).abs() < 5e-4);
        assert!((weak_solution_threshold(2).unwrap() - 1.390).abs() < 5e-4);
        assert_eq!(weak_solution_threshold(5).unwrap(), 2.0);
        assert_eq!(weak_solution_threshold(4).unwrap(), 2.0);
        assert!(weak_solution_threshold(1).is_err());
    }

    #[test]
    fn csv_format() {
        let mut buf = Vec::new();
        write_energy_csv(&mut buf, &[(0.0, EnergyBreakdown::new(0.5, 0.0, 0.0))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,kinetic,potential,entropy,total"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[1], "5.0000000000000000e-1");
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.5);
    }
}
