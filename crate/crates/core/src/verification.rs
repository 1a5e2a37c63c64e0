//! Manufactured-solution verification: exact fields, error norms,
//! convergence orders and parameter sweeps.
//!
//! The exact solution is written in coordinates `(X, Y) = x - c` centered on
//! the interface, a circle of radius 2/3, so the whole solution translates
//! rigidly with the interface.

use std::time::Instant;

use nalgebra::{Matrix2, Point2, Vector2};
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{MeshQuadrature, PhysicalParams};
use crate::error::{Error, ParamError, Result};
use crate::geometry::{Circle, LevelSet, Phase};
use crate::mesh::{DOMAIN_HI, DOMAIN_LO};
use crate::solver::{solve_problem, Discretization, ProblemData, Solution};

/// Interface radius of the manufactured problem.
pub const RADIUS: f64 = 2.0 / 3.0;

/// Normal stress jump `[n^T sigma n]` of the manufactured fields.
pub const TRACTION: f64 = -0.5;

/// Exact two-phase Stokes solution with slip on a circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManufacturedCase {
    pub center: [f64; 2],
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub slip: f64,
}

impl ManufacturedCase {
    pub fn new(center: [f64; 2], mu_minus: f64, mu_plus: f64, slip: f64) -> Result<Self, ParamError> {
        if !(mu_minus.is_finite() && mu_plus.is_finite() && mu_minus > 0.0 && mu_minus <= mu_plus) {
            return Err(ParamError::Viscosity { mu_minus, mu_plus });
        }
        if !(slip.is_finite() && slip > 0.0) {
            return Err(ParamError::Slip { value: slip, requirement: "finite and > 0" });
        }
        Ok(ManufacturedCase { center, mu_minus, mu_plus, slip })
    }

    pub fn level_set(&self) -> Circle {
        Circle::new(self.center, RADIUS)
    }

    pub fn mu(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Minus => self.mu_minus,
            Phase::Plus => self.mu_plus,
        }
    }

    fn local(&self, x: &Point2<f64>) -> (f64, f64) {
        (x.x - self.center[0], x.y - self.center[1])
    }

    /// `g = a R^2 + b` with the coefficients `(a, b)` of a phase.
    fn profile(&self, phase: Phase) -> (f64, f64) {
        let a = 0.75 / self.mu(phase);
        match phase {
            Phase::Plus => (a, 0.0),
            Phase::Minus => (a, (self.mu_minus - self.mu_plus) / (3.0 * self.mu_plus * self.mu_minus) - 1.0 / self.slip),
        }
    }

    /// `sup |g-|` over the interior disk.
    pub fn sup_g_minus(&self) -> f64 {
        let (a, b) = self.profile(Phase::Minus);
        b.abs().max((a * RADIUS * RADIUS + b).abs())
    }

    pub fn velocity(&self, phase: Phase, x: &Point2<f64>) -> Vector2<f64> {
        let (a, b) = self.profile(phase);
        let (xx, yy) = self.local(x);
        let g = a * (xx * xx + yy * yy) + b;
        Vector2::new(-g * yy, g * xx)
    }

    /// `G[(i, j)] = d u_i / d x_j`.
    pub fn velocity_gradient(&self, phase: Phase, x: &Point2<f64>) -> Matrix2<f64> {
        let (a, b) = self.profile(phase);
        let (xx, yy) = self.local(x);
        let g = a * (xx * xx + yy * yy) + b;
        Matrix2::new(-2.0 * a * xx * yy, -g - 2.0 * a * yy * yy, g + 2.0 * a * xx * xx, 2.0 * a * xx * yy)
    }

    pub fn pressure(&self, phase: Phase, x: &Point2<f64>) -> f64 {
        let (xx, _) = self.local(x);
        match phase {
            Phase::Minus => xx.powi(3),
            Phase::Plus => xx.powi(3) - 0.5,
        }
    }

    pub fn pressure_gradient(&self, _phase: Phase, x: &Point2<f64>) -> Vector2<f64> {
        let (xx, _) = self.local(x);
        Vector2::new(3.0 * xx * xx, 0.0)
    }

    /// `sigma = 2 mu D(u) - p I`.
    pub fn stress(&self, phase: Phase, x: &Point2<f64>) -> Matrix2<f64> {
        let g = self.velocity_gradient(phase, x);
        self.mu(phase) * (g + g.transpose()) - self.pressure(phase, x) * Matrix2::identity()
    }

    /// `f = -div sigma = -mu lap u + grad p`; the velocity Laplacian is `8 a (-Y, X)`.
    pub fn forcing(&self, phase: Phase, x: &Point2<f64>) -> Vector2<f64> {
        let (a, _) = self.profile(phase);
        let (xx, yy) = self.local(x);
        -self.mu(phase) * 8.0 * a * Vector2::new(-yy, xx) + self.pressure_gradient(phase, x)
    }

    /// Dirichlet data on the outer boundary.
    pub fn boundary(&self, x: &Point2<f64>) -> Vector2<f64> {
        self.velocity(Phase::Plus, x)
    }

    pub fn traction(&self, _x: &Point2<f64>) -> f64 {
        TRACTION
    }

    /// Largest violation of the interface conditions at `count` uniform points:
    /// normal velocity continuity, both slip conditions and the normal stress jump.
    pub fn interface_residuals(&self, count: usize) -> [f64; 4] {
        let mut worst = [0.0f64; 4];
        let ls = self.level_set();
        for k in 0..count {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            let x = Point2::new(self.center[0] + RADIUS * theta.cos(), self.center[1] + RADIUS * theta.sin());
            let n = ls.unit_normal(&x);
            let proj = Matrix2::identity() - n * n.transpose();
            let (um, up) = (self.velocity(Phase::Minus, &x), self.velocity(Phase::Plus, &x));
            let (sm, sp) = (self.stress(Phase::Minus, &x) * n, self.stress(Phase::Plus, &x) * n);
            let slip = self.slip * (proj * up - proj * um);
            worst[0] = worst[0].max((up - um).dot(&n).abs());
            worst[1] = worst[1].max((proj * sp - slip).norm());
            worst[2] = worst[2].max((proj * sm - slip).norm());
            worst[3] = worst[3].max((n.dot(&sm) - n.dot(&sp) - self.traction(&x)).abs());
        }
        worst
    }

    /// Broken `H^3` norm of the velocity over both phases.
    pub fn velocity_h3_norm(&self, quad: &MeshQuadrature, disc: &Discretization) -> f64 {
        let mut total = 0.0;
        for phase in Phase::BOTH {
            let (a, _) = self.profile(phase);
            for &e in disc.space.elements(phase) {
                for (x, w) in quad.volume(phase, e).iter() {
                    let (xx, yy) = self.local(x);
                    let u = self.velocity(phase, x);
                    let g = self.velocity_gradient(phase, x);
                    // second derivatives per multi-index xx, xy, yy of (u1, u2)
                    let second = [(-2.0 * a * yy, 6.0 * a * xx), (-2.0 * a * xx, 2.0 * a * yy), (-6.0 * a * yy, 2.0 * a * xx)];
                    // third derivatives xxx, xxy, xyy, yyy
                    let third = [(0.0, 6.0 * a), (-2.0 * a, 0.0), (0.0, 2.0 * a), (-6.0 * a, 0.0)];
                    let mut s = u.norm_squared() + g.norm_squared();
                    s += second.iter().chain(third.iter()).map(|(p, q)| p * p + q * q).sum::<f64>();
                    total += w * s;
                }
            }
        }
        total.sqrt()
    }
}

/// Error measures of one discrete solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub n: usize,
    pub h: f64,
    pub err_l2_u: f64,
    pub err_h1w_u: f64,
    /// `err_h1w_u` divided by the solution magnitude (see [`SCALING`]).
    pub err_h1w_u_scaled: f64,
    pub err_l2w_p: f64,
    /// Relative residual of the linear solve.
    pub residual: f64,
    /// Mean-constraint multiplier.
    pub multiplier: f64,
    pub wall_ms: f64,
}

/// Description of the magnitude used for `err_h1w_u_scaled`.
pub const SCALING: &str = "sup over the interior disk of |g-|, the profile of the interior velocity";

/// Errors of a solution against a manufactured case, on the given rules.
pub fn compute_errors(case: &ManufacturedCase, disc: &Discretization, quad: &MeshQuadrature, sol: &Solution) -> [f64; 3] {
    let space = &disc.space;
    let (mut l2u, mut h1w) = (0.0, 0.0);
    // pressure difference and its weighted mean
    let (mut pp, mut pm, mut wm) = (0.0, 0.0, 0.0);
    for phase in Phase::BOTH {
        let mu = case.mu(phase);
        let uh = sol.velocity(space, phase);
        let ph = sol.pressure(space, phase);
        for &e in space.elements(phase) {
            for (x, w) in quad.volume(phase, e).iter() {
                let du = case.velocity(phase, x) - uh.value_in(e, x);
                let dg = case.velocity_gradient(phase, x) - uh.gradient_in(e, x);
                let dd = 0.5 * (dg + dg.transpose());
                l2u += w * du.norm_squared();
                h1w += w * 2.0 * mu * dd.norm_squared();
                let dp = case.pressure(phase, x) - ph.value_in(e, x);
                pp += w * dp * dp / mu;
                pm += w * dp / mu;
                wm += w / mu;
            }
        }
    }
    // ||d - c||^2 with c the weighted mean of d
    let c = pm / wm;
    let l2wp = (pp - 2.0 * c * pm + c * c * wm).max(0.0);
    [l2u.sqrt(), h1w.sqrt(), l2wp.sqrt()]
}

/// Discretization settings shared by all cases of a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudySettings {
    /// Penalties and averaging weights; viscosities and slip come from the case.
    pub params: PhysicalParams,
    pub tol: f64,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings { params: PhysicalParams::default(), tol: crate::solver::DEFAULT_TOL }
    }
}

impl StudySettings {
    fn params_for(&self, case: &ManufacturedCase) -> PhysicalParams {
        PhysicalParams { mu_minus: case.mu_minus, mu_plus: case.mu_plus, slip: case.slip, ..self.params }
    }
}

/// Level set of a case, nudged off grid vertices and tangencies.
fn case_level_set(case: &ManufacturedCase, n: usize) -> (ManufacturedCase, Circle) {
    let ls = case.level_set().regularized_for_grid(DOMAIN_LO, (DOMAIN_HI - DOMAIN_LO) / n as f64, n + 1);
    let moved = ManufacturedCase { center: [ls.center.x, ls.center.y], ..*case };
    (moved, ls)
}

/// Result of one solve with everything needed for diagnostics.
pub struct CaseRun {
    pub case: ManufacturedCase,
    pub disc: Discretization,
    pub solution: Solution,
    pub report: ErrorReport,
}

/// Solves one manufactured case on an `n x n` mesh and measures the errors.
pub fn run_case(case: &ManufacturedCase, n: usize, settings: &StudySettings) -> Result<CaseRun> {
    let start = Instant::now();
    let (case, ls) = case_level_set(case, n);
    let disc = Discretization::new(n, &ls)?;
    let params = settings.params_for(&case);
    let forcing = |phase: Phase, x: &Point2<f64>| case.forcing(phase, x);
    let traction = |x: &Point2<f64>| case.traction(x);
    let boundary = |x: &Point2<f64>| case.boundary(x);
    let data = ProblemData { params, forcing: &forcing, traction: &traction, boundary: &boundary };
    let solution = solve_problem(&disc, &data, settings.tol)?;
    let [err_l2_u, err_h1w_u, err_l2w_p] = compute_errors(&case, &disc, &disc.quad, &solution);
    let scale = case.sup_g_minus();
    let report = ErrorReport {
        n,
        h: disc.mesh.h(),
        err_l2_u,
        err_h1w_u,
        err_h1w_u_scaled: err_h1w_u / scale,
        err_l2w_p,
        residual: solution.residual,
        multiplier: solution.multiplier(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    let [a, b, c] = [err_l2_u, err_h1w_u, err_l2w_p];
    log::info!("n={n} c={:?} mu=({}, {}) f={}: errors {a:.3e} {b:.3e} {c:.3e}", case.center, case.mu_minus, case.mu_plus, case.slip);
    Ok(CaseRun { case, disc, solution, report })
}

/// Largest tangential velocity jump `|[P u_h]|` over the interface quadrature points.
pub fn max_tangential_jump(run: &CaseRun) -> f64 {
    let space = &run.disc.space;
    let um = run.solution.velocity(space, Phase::Minus);
    let up = run.solution.velocity(space, Phase::Plus);
    let mut worst = 0.0f64;
    for &e in &run.disc.topo.cut_elements {
        for (x, _, n) in run.disc.quad.interface(e).iter() {
            let t = Vector2::new(-n.y, n.x);
            worst = worst.max((um.value_in(e, x) - up.value_in(e, x)).dot(&t).abs());
        }
    }
    worst
}

/// `log2(e(h) / e(h/2))`.
pub fn eoc(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Observed orders between consecutive rows, for the three error columns.
pub fn eoc_table(reports: &[ErrorReport]) -> Vec<Option<[f64; 3]>> {
    let mut out = vec![None];
    for w in reports.windows(2) {
        let (c, f) = (&w[0], &w[1]);
        out.push(Some([eoc(c.err_l2_u, f.err_l2_u), eoc(c.err_h1w_u, f.err_h1w_u), eoc(c.err_l2w_p, f.err_l2w_p)]));
    }
    out.truncate(reports.len());
    out
}

/// One entry of a study table.
#[derive(Debug, Clone)]
pub struct StudyEntry {
    pub case: ManufacturedCase,
    pub n: usize,
    /// Position index of the interface-position study.
    pub k: Option<u32>,
    pub outcome: std::result::Result<ErrorReport, Error>,
}

/// Runs a list of independent cases concurrently, preserving order.
pub fn run_entries(entries: Vec<(ManufacturedCase, usize, Option<u32>)>, settings: &StudySettings) -> Vec<StudyEntry> {
    entries
        .into_par_iter()
        .map(|(case, n, k)| {
            let outcome = run_case(&case, n, settings).map(|r| r.report);
            if let Err(e) = &outcome {
                log::warn!("case n={n} k={k:?} {case:?} failed: {e}");
            }
            StudyEntry { case, n, k, outcome }
        })
        .collect()
}

/// Convergence study over increasing powers of two.
pub fn convergence_study(case: &ManufacturedCase, n_list: &[usize], settings: &StudySettings) -> Result<Vec<ErrorReport>> {
    let valid = n_list.iter().all(|n| n.is_power_of_two()) && n_list.windows(2).all(|w| w[0] < w[1]);
    if !valid {
        return Err(crate::error::MeshError::InvalidRefinement(n_list.to_vec()).into());
    }
    let entries = run_entries(n_list.iter().map(|&n| (*case, n, None)).collect(), settings);
    entries.into_iter().map(|e| e.outcome).collect()
}

pub fn viscosity_sweep(mu_plus: &[f64], n: usize, settings: &StudySettings) -> Result<Vec<StudyEntry>> {
    let cases = mu_plus
        .iter()
        .map(|&m| ManufacturedCase::new([0.0, 0.0], 1.0, m, 10.0).map(|c| (c, n, None)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(run_entries(cases, settings))
}

pub fn slip_sweep(slips: &[f64], n: usize, settings: &StudySettings) -> Result<Vec<StudyEntry>> {
    let cases = slips
        .iter()
        .map(|&f| ManufacturedCase::new([0.0, 0.0], 1.0, 10.0, f).map(|c| (c, n, None)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(run_entries(cases, settings))
}

/// Interface center for position index `k` on an `n x n` mesh.
pub fn position_center(k: u32, n: usize) -> [f64; 2] {
    let h = (DOMAIN_HI - DOMAIN_LO) / n as f64;
    let angle = k as f64 / 10.0 * std::f64::consts::PI;
    let r = h / 20.0 * k as f64;
    [r * angle.cos(), r * angle.sin()]
}

pub fn position_sweep(ks: &[u32], n: usize, settings: &StudySettings) -> Result<Vec<StudyEntry>> {
    let cases = ks
        .iter()
        .map(|&k| ManufacturedCase::new(position_center(k, n), 1.0, 10.0, 10.0).map(|c| (c, n, Some(k))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(run_entries(cases, settings))
}

/// `10^0 ... 10^8`.
pub fn default_viscosities() -> Vec<f64> {
    (0..=8).map(|e| 10f64.powi(e)).collect()
}

/// `2^-8 ... 2^8`.
pub fn default_slips() -> Vec<f64> {
    (-8..=8).map(|e| 2f64.powi(e)).collect()
}

pub fn default_positions() -> Vec<u32> {
    (1..=20).collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{interpolate_pressure, interpolate_velocity};
    use crate::geometry::CutQuadratureSettings;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn default_case() -> ManufacturedCase {
        ManufacturedCase::new([0.0, 0.0], 1.0, 10.0, 10.0).unwrap()
    }

    #[test]
    fn rejects_invalid_cases() {
        assert!(ManufacturedCase::new([0.0, 0.0], 1.0, 10.0, 0.0).is_err());
        assert!(ManufacturedCase::new([0.0, 0.0], 1.0, 10.0, -1.0).is_err());
        assert!(ManufacturedCase::new([0.0, 0.0], 10.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn interface_conditions_hold() {
        for (c, mm, mp, f) in [([0.0, 0.0], 1.0, 10.0, 10.0), ([0.03, -0.01], 1.0, 1e8, 1.0 / 256.0), ([-0.1, 0.05], 2.0, 2.0, 256.0)] {
            let case = ManufacturedCase::new(c, mm, mp, f).unwrap();
            let res = case.interface_residuals(64);
            for r in res {
                assert!(r <= 1e-10, "{res:?}");
            }
        }
    }

    #[test]
    fn forcing_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let case = ManufacturedCase::new([0.02, -0.03], 1.0, 10.0, 2.0).unwrap();
        let ls = case.level_set();
        let eps = 1e-3;
        for phase in Phase::BOTH {
            let mut count = 0;
            while count < 100 {
                let x = Point2::new(rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95));
                if Phase::of_value(ls.value(&x)) != phase || ls.value(&x).abs() < 0.05 {
                    continue;
                }
                count += 1;
                // fourth-order central differences of the stress
                let d = |dir: Vector2<f64>| {
                    let s = |t: f64| case.stress(phase, &(x + t * dir));
                    (-s(2.0 * eps) + 8.0 * s(eps) - 8.0 * s(-eps) + s(-2.0 * eps)) / (12.0 * eps)
                };
                let (dx, dy) = (d(Vector2::x()), d(Vector2::y()));
                let div = Vector2::new(dx[(0, 0)] + dy[(0, 1)], dx[(1, 0)] + dy[(1, 1)]);
                assert!((-div - case.forcing(phase, &x)).norm() <= 1e-7);
                // velocity is divergence free
                assert!(case.velocity_gradient(phase, &x).trace().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tangential_jump_is_radius_over_slip() {
        // g+ - g- equals 1/f on the interface
        let case = ManufacturedCase::new([0.0, 0.0], 1.0, 10.0, 4.0).unwrap();
        let x = Point2::new(RADIUS, 0.0);
        let jump = case.velocity(Phase::Plus, &x) - case.velocity(Phase::Minus, &x);
        assert!((jump.y - RADIUS / 4.0).abs() < 1e-15);
        assert!((case.sup_g_minus() - (0.3 + 0.25)).abs() < 1e-15);
    }

    fn interpolant(case: &ManufacturedCase, disc: &Discretization) -> Solution {
        let mut coeffs = Vec::new();
        for phase in Phase::BOTH {
            coeffs.extend(interpolate_velocity(&disc.space, phase, |x| case.velocity(phase, x)).coeffs);
        }
        for phase in Phase::BOTH {
            coeffs.extend(interpolate_pressure(&disc.space, phase, |x| case.pressure(phase, x)).coeffs);
        }
        coeffs.push(0.0);
        Solution { coeffs, residual: 0.0, refinement_steps: 0 }
    }

    #[test]
    fn interpolation_errors_decay_at_optimal_rates() {
        let case = default_case();
        let errs: Vec<[f64; 3]> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let disc = Discretization::new(n, &case.level_set()).unwrap();
                compute_errors(&case, &disc, &disc.quad, &interpolant(&case, &disc))
            })
            .collect();
        for w in errs.windows(2) {
            assert!(eoc(w[0][0], w[1][0]) > 2.8);
            assert!(eoc(w[0][1], w[1][1]) > 1.8);
            assert!(eoc(w[0][2], w[1][2]) > 1.8);
        }
    }

    #[test]
    fn pressure_error_ignores_constant_shifts() {
        let case = default_case();
        let disc = Discretization::new(8, &case.level_set()).unwrap();
        let mut sol = interpolant(&case, &disc);
        let base = compute_errors(&case, &disc, &disc.quad, &sol);
        let dv = disc.space.dim_v();
        for c in &mut sol.coeffs[dv..dv + disc.space.dim_q()] {
            *c += 0.37;
        }
        let shifted = compute_errors(&case, &disc, &disc.quad, &sol);
        assert!((base[2] - shifted[2]).abs() <= 1e-12);
        assert_eq!(base[0], shifted[0]);
    }

    #[test]
    fn solve_at_sixteen() {
        let case = default_case();
        let run = run_case(&case, 16, &StudySettings::default()).unwrap();
        let r = run.report;
        assert!(r.residual <= 1e-10);
        assert!(r.multiplier.abs() <= 1e-8);
        for e in [r.err_l2_u, r.err_h1w_u, r.err_l2w_p, r.err_h1w_u_scaled] {
            assert!(e.is_finite() && e > 0.0);
        }
        // quadrature saturation: doubling the order barely moves the errors
        let ls = run.case.level_set();
        let fine = CutQuadratureSettings { order: 15, ..*run.disc.quad.settings() };
        let quad = MeshQuadrature::build(&run.disc.mesh, &run.disc.topo, &ls, fine).unwrap();
        let refined = compute_errors(&run.case, &run.disc, &quad, &run.solution);
        for (a, b) in [r.err_l2_u, r.err_h1w_u, r.err_l2w_p].iter().zip(refined) {
            assert!((a - b).abs() < 1e-3 * a, "{a} vs {b}");
        }
    }

    #[test]
    fn tolerance_tightening_is_stable() {
        let case = default_case();
        let loose = StudySettings { tol: 1e-8, ..Default::default() };
        let tight = StudySettings { tol: 1e-12, ..Default::default() };
        let a = run_case(&case, 16, &loose).unwrap().report;
        let b = run_case(&case, 16, &tight).unwrap().report;
        for (x, y) in [(a.err_l2_u, b.err_l2_u), (a.err_h1w_u, b.err_h1w_u), (a.err_l2w_p, b.err_l2w_p)] {
            assert!((x - y).abs() < 1e-6 * y);
        }
    }

    #[test]
    fn reruns_and_k_zero_are_identical() {
        let case = default_case();
        let settings = StudySettings::default();
        let a = run_case(&case, 16, &settings).unwrap().report;
        let b = run_case(&case, 16, &settings).unwrap().report;
        let strip = |r: ErrorReport| ErrorReport { wall_ms: 0.0, ..r };
        assert_eq!(strip(a), strip(b));
        let k0 = position_sweep(&[0], 16, &settings).unwrap().remove(0);
        assert_eq!(k0.case.center, [0.0, 0.0]);
        assert_eq!(strip(k0.outcome.unwrap()), strip(a));
    }

    #[test]
    fn strong_coupling_keeps_tangential_jump_small() {
        let f = 256.0;
        let case = ManufacturedCase::new([0.0, 0.0], 1.0, 10.0, f).unwrap();
        let run = run_case(&case, 16, &StudySettings::default()).unwrap();
        // exact jump is R / f; the tangential stress scale is 2/3
        let jump = max_tangential_jump(&run);
        assert!(jump <= 2.0 * (2.0 / 3.0) / f, "{jump}");
        assert!((jump - RADIUS / f).abs() < 0.05 * RADIUS / f);
    }

    #[test]
    fn position_centers() {
        let h = 2.0 / 32.0;
        let c = position_center(5, 32);
        assert!((c[0] - 0.0).abs() < 1e-15 && (c[1] - h / 4.0).abs() < 1e-15);
        let c = position_center(20, 32);
        assert!((c[0] - h).abs() < 1e-15 && c[1].abs() < 1e-15);
        assert_eq!(default_positions().len(), 20);
        assert_eq!(default_slips().len(), 17);
        assert_eq!(default_viscosities().len(), 9);
    }

    #[test]
    fn eoc_rows() {
        let mk = |n: usize, e: f64| ErrorReport {
            n,
            h: 2.0 / n as f64,
            err_l2_u: e * e * e,
            err_h1w_u: e * e,
            err_h1w_u_scaled: e * e,
            err_l2w_p: e * e,
            residual: 0.0,
            multiplier: 0.0,
            wall_ms: 0.0,
        };
        let table = eoc_table(&[mk(4, 1.0), mk(8, 0.5), mk(16, 0.25)]);
        assert!(table[0].is_none());
        let row = table[2].unwrap();
        assert!((row[0] - 3.0).abs() < 1e-12 && (row[1] - 2.0).abs() < 1e-12);
        assert!(convergence_study(&default_case(), &[4, 12], &StudySettings::default()).is_err());
        assert!(convergence_study(&default_case(), &[8, 4], &StudySettings::default()).is_err());
    }

    #[test]
    fn h3_norm_grows_like_inverse_slip() {
        let disc = Discretization::new(8, &default_case().level_set()).unwrap();
        let a = ManufacturedCase::new([0.0, 0.0], 1.0, 10.0, 1e-3).unwrap().velocity_h3_norm(&disc.quad, &disc);
        let b = ManufacturedCase::new([0.0, 0.0], 1.0, 10.0, 2e-3).unwrap().velocity_h3_norm(&disc.quad, &disc);
        assert!((a / b - 2.0).abs() < 0.01);
    }
}
