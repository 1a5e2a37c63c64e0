//! Saddle-point system with the weighted mean constraint, and its solution.
//!
//! Unknowns are `[u-, u+, p-, p+, lambda]` and the matrix is
//!
//! ```text
//! [ A   B^T  0 ]
//! [ B   -C   m ]
//! [ 0   m^T  0 ]
//! ```
//!
//! which is symmetric. Boundary data are imposed strongly by elimination.

use std::sync::Once;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{Point2, Vector2};

use crate::assembly::{AssembledForms, DofSpace, MeshQuadrature, PhysicalParams};
use crate::error::{Result, SolveError};
use crate::fespace::{apply_dirichlet, dirichlet_values, PressureFunction, TwoPhaseSpace, VelocityFunction};
use crate::geometry::{LevelSet, Phase};
use crate::mesh::{BackgroundMesh, CutTopology};
use crate::sparse::CsrMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;

/// Maximum number of refinement sweeps after the first solve.
const MAX_REFINEMENT: usize = 6;

/// Mesh, cut topology, spaces and quadrature of one configuration.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: BackgroundMesh,
    pub topo: CutTopology,
    pub space: TwoPhaseSpace,
    pub quad: MeshQuadrature,
}

impl Discretization {
    pub fn new<L: LevelSet + ?Sized>(n: usize, ls: &L) -> Result<Self> {
        let mesh = BackgroundMesh::new(n)?;
        let topo = CutTopology::build(&mesh, ls)?;
        let space = TwoPhaseSpace::new(&mesh, &topo);
        let quad = MeshQuadrature::with_defaults(&mesh, &topo, ls)?;
        Ok(Discretization { mesh, topo, space, quad })
    }
}

/// Assembled and constrained linear system.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dim_v: usize,
    pub dim_q: usize,
}

impl SaddleSystem {
    pub fn size(&self) -> usize {
        self.dim_v + self.dim_q + 1
    }

    /// `||K x - b|| / ||b||`, or `||K x||` when `b = 0`.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let r = residual(&self.matrix, x, &self.rhs);
        let bn = norm(&self.rhs);
        if bn > 0.0 {
            norm(&r) / bn
        } else {
            norm(&r)
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(k: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    k.matvec(x).iter().zip(b).map(|(kx, bi)| bi - kx).collect()
}

/// Composes the blocks and eliminates the prescribed velocity values.
pub fn build_system(space: &TwoPhaseSpace, forms: &AssembledForms, dirichlet: &[(usize, f64)]) -> Result<SaddleSystem, SolveError> {
    let (dim_v, dim_q) = (space.dim_v(), space.dim_q());
    let check = |name: &str, rows: usize, cols: usize, exp_rows: usize, exp_cols: usize| {
        if (rows, cols) == (exp_rows, exp_cols) {
            Ok(())
        } else {
            Err(SolveError::DimensionMismatch(format!("{name} is {rows}x{cols}, expected {exp_rows}x{exp_cols}")))
        }
    };
    for (name, block, r, c) in [
        ("a_i", &forms.a_i, dim_v, dim_v),
        ("a_n", &forms.a_n, dim_v, dim_v),
        ("a_p", &forms.a_p, dim_v, dim_v),
        ("b_h", &forms.b, dim_q, dim_v),
        ("b_p", &forms.c, dim_q, dim_q),
    ] {
        check(name, block.matrix.nrows(), block.matrix.ncols(), r, c)?;
    }
    if forms.b.rows != DofSpace::Pressure || forms.b.cols != DofSpace::Velocity {
        return Err(SolveError::DimensionMismatch("b_h must map velocity to pressure".into()));
    }
    check("rhs", forms.rhs.len(), 1, dim_v, 1)?;
    check("mean", forms.mean.len(), 1, dim_q, 1)?;
    if let Some(&(d, _)) = dirichlet.iter().find(|(d, _)| *d >= dim_v) {
        return Err(SolveError::DimensionMismatch(format!("prescribed index {d} outside the velocity block")));
    }

    let size = dim_v + dim_q + 1;
    let lam = dim_v + dim_q;
    let a = forms.a_h();
    let mut t: Vec<(usize, usize, f64)> = a.matrix.triplets().collect();
    for (i, j, v) in forms.b.matrix.triplets() {
        t.push((dim_v + i, j, v));
        t.push((j, dim_v + i, v));
    }
    t.extend(forms.c.matrix.triplets().map(|(i, j, v)| (dim_v + i, dim_v + j, -v)));
    for (q, &m) in forms.mean.iter().enumerate() {
        if m != 0.0 {
            t.push((dim_v + q, lam, m));
            t.push((lam, dim_v + q, m));
        }
    }
    let mut matrix = CsrMatrix::from_triplets(size, size, &t);
    let mut rhs = vec![0.0; size];
    rhs[..dim_v].copy_from_slice(&forms.rhs);
    apply_dirichlet(dirichlet, &mut matrix, &mut rhs);
    Ok(SaddleSystem { matrix, rhs, dim_v, dim_q })
}

/// Coefficients of a solved system.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub coeffs: Vec<f64>,
    /// Relative residual reached.
    pub residual: f64,
    pub refinement_steps: usize,
}

impl Solution {
    pub fn velocity<'a>(&self, space: &'a TwoPhaseSpace, phase: Phase) -> VelocityFunction<'a> {
        space.velocity_function(phase, &self.coeffs)
    }

    pub fn pressure<'a>(&self, space: &'a TwoPhaseSpace, phase: Phase) -> PressureFunction<'a> {
        space.pressure_function(phase, &self.coeffs)
    }

    pub fn multiplier(&self) -> f64 {
        *self.coeffs.last().expect("empty solution")
    }
}

static SEQUENTIAL: Once = Once::new();

/// Direct solve with symmetric equilibration and iterative refinement.
pub fn solve(system: &SaddleSystem, tol: f64) -> Result<Solution, SolveError> {
    // factorizations run single-threaded so results do not depend on the pool size
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
    let n = system.size();
    if system.matrix.nrows() != n || system.rhs.len() != n {
        return Err(SolveError::DimensionMismatch(format!(
            "matrix {}x{}, rhs {}, expected {n}",
            system.matrix.nrows(),
            system.matrix.ncols(),
            system.rhs.len()
        )));
    }
    if norm(&system.rhs) == 0.0 {
        return Ok(Solution { coeffs: vec![0.0; n], residual: 0.0, refinement_steps: 0 });
    }

    let mut scale = vec![0.0f64; n];
    for (i, _, v) in system.matrix.triplets() {
        scale[i] = scale[i].max(v.abs());
    }
    if let Some(i) = scale.iter().position(|&s| s == 0.0) {
        return Err(SolveError::Singular(format!("row {i} is empty")));
    }
    for s in scale.iter_mut() {
        *s = 1.0 / s.sqrt();
    }
    let triplets: Vec<Triplet<usize, usize, f64>> = system
        .matrix
        .triplets()
        .map(|(i, j, v)| Triplet::new(i, j, scale[i] * v * scale[j]))
        .collect();
    let scaled = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| SolveError::Singular(format!("{e:?}")))?;
    let lu = scaled.sp_lu().map_err(|e| SolveError::Singular(format!("{e:?}")))?;

    let solve_scaled = |r: &[f64]| -> Vec<f64> {
        let mut col = Mat::<f64>::from_fn(n, 1, |i, _| scale[i] * r[i]);
        lu.solve_in_place(col.as_mut());
        (0..n).map(|i| scale[i] * col[(i, 0)]).collect()
    };

    let bn = norm(&system.rhs);
    let mut x = solve_scaled(&system.rhs);
    let mut best = f64::INFINITY;
    let mut steps = 0;
    loop {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::Singular("factorization produced non-finite values".into()));
        }
        let r = residual(&system.matrix, &x, &system.rhs);
        let rel = norm(&r) / bn;
        if rel <= tol {
            return Ok(Solution { coeffs: x, residual: rel, refinement_steps: steps });
        }
        // stop once refinement stagnates
        if steps >= MAX_REFINEMENT || rel > 0.5 * best {
            return Err(SolveError::NonConverged { residual: rel, tol });
        }
        best = rel;
        let dx = solve_scaled(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
        steps += 1;
    }
}

/// Data of one two-phase problem.
pub struct ProblemData<'a> {
    pub params: PhysicalParams,
    pub forcing: &'a (dyn Fn(Phase, &Point2<f64>) -> Vector2<f64> + Sync),
    /// Normal stress jump on the interface.
    pub traction: &'a (dyn Fn(&Point2<f64>) -> f64 + Sync),
    /// Velocity on the outer boundary.
    pub boundary: &'a (dyn Fn(&Point2<f64>) -> Vector2<f64> + Sync),
}

/// Assembles, constrains and solves on a prepared discretization.
pub fn solve_problem(disc: &Discretization, data: &ProblemData<'_>, tol: f64) -> Result<Solution> {
    data.params.validate()?;
    let forms = crate::assembly::assemble_all(&disc.space, &disc.topo, &disc.quad, &data.params, data.forcing, data.traction);
    let dirichlet = dirichlet_values(&disc.space, data.boundary);
    let system = build_system(&disc.space, &forms, &dirichlet)?;
    Ok(solve(&system, tol)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_all;
    use crate::fespace::{interpolate_pressure, interpolate_velocity};
    use crate::geometry::Circle;

    fn disc(n: usize, c: [f64; 2]) -> Discretization {
        Discretization::new(n, &Circle::new(c, 2.0 / 3.0)).unwrap()
    }

    #[test]
    fn system_size_and_symmetry() {
        let d = disc(8, [0.0, 0.0]);
        let params = PhysicalParams::default();
        let forms = assemble_all(&d.space, &d.topo, &d.quad, &params, |_, x| Vector2::new(x.y, 1.0), |_| -0.5);
        let dirichlet = dirichlet_values(&d.space, |x| Vector2::new(x.x, -x.y));
        let sys = build_system(&d.space, &forms, &dirichlet).unwrap();
        let s = &d.space;
        assert_eq!(
            sys.size(),
            s.dim_velocity(Phase::Minus) + s.dim_velocity(Phase::Plus) + s.dim_pressure(Phase::Minus) + s.dim_pressure(Phase::Plus) + 1
        );
        assert_eq!(sys.matrix.nrows(), sys.size());
        assert!(sys.matrix.max_asymmetry() <= 1e-11);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = disc(4, [0.0, 0.0]);
        let params = PhysicalParams::default();
        let mut forms = assemble_all(&d.space, &d.topo, &d.quad, &params, |_, _| Vector2::zeros(), |_| 0.0);
        forms.rhs.pop();
        assert!(matches!(build_system(&d.space, &forms, &[]), Err(SolveError::DimensionMismatch(_))));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let d = disc(8, [0.0, 0.0]);
        let data = ProblemData {
            params: PhysicalParams::default(),
            forcing: &|_, _| Vector2::zeros(),
            traction: &|_| 0.0,
            boundary: &|_| Vector2::zeros(),
        };
        let sol = solve_problem(&d, &data, DEFAULT_TOL).unwrap();
        assert!(norm(&sol.coeffs) <= 1e-12);
    }

    #[test]
    fn reproduces_global_polynomials() {
        // rigid motion has zero stress, so no slip or normal-stress jump arises
        let u = |x: &Point2<f64>| Vector2::new(0.3 - x.y, 0.2 + x.x);
        let p = |x: &Point2<f64>| 1.0 + x.x + 2.0 * x.y + 0.5 * x.x * x.y;
        let grad_p = |x: &Point2<f64>| Vector2::new(1.0 + 0.5 * x.y, 2.0 + 0.5 * x.x);
        for c in [[0.0, 0.0], [0.031, -0.017]] {
            let d = disc(16, c);
            let params = PhysicalParams { mu_minus: 2.0, mu_plus: 2.0, ..Default::default() };
            let data = ProblemData { params, forcing: &|_, x| grad_p(x), traction: &|_| 0.0, boundary: &u };
            let sol = solve_problem(&d, &data, DEFAULT_TOL).unwrap();
            let forms = assemble_all(&d.space, &d.topo, &d.quad, &params, |_, _| Vector2::zeros(), |_| 0.0);
            // shift the exact pressure to the discrete mean constraint
            let mut pe = interpolate_pressure(&d.space, Phase::Minus, p).coeffs;
            pe.extend(interpolate_pressure(&d.space, Phase::Plus, p).coeffs);
            let mean: f64 = pe.iter().zip(&forms.mean).map(|(a, b)| a * b).sum::<f64>() / forms.mean.iter().sum::<f64>();
            let mut err: f64 = 0.0;
            for phase in Phase::BOTH {
                let exact = interpolate_velocity(&d.space, phase, u);
                let got = sol.velocity(&d.space, phase);
                for (a, b) in exact.coeffs.iter().zip(&got.coeffs) {
                    err = err.max((a - b).abs());
                }
                let got = sol.pressure(&d.space, phase);
                let exact = interpolate_pressure(&d.space, phase, p);
                for (a, b) in exact.coeffs.iter().zip(&got.coeffs) {
                    err = err.max((a - mean - b).abs());
                }
            }
            assert!(err <= 1e-9, "nodal error {err}");
            assert!(sol.multiplier().abs() <= 1e-9);
        }
    }

    #[test]
    fn energy_identity() {
        let d = disc(8, [0.01, 0.02]);
        let params = PhysicalParams::default();
        let forcing = |_: Phase, x: &Point2<f64>| Vector2::new(1.0 + x.y, x.x * x.x);
        let forms = assemble_all(&d.space, &d.topo, &d.quad, &params, forcing, |_| -0.5);
        let dirichlet = dirichlet_values(&d.space, |_| Vector2::zeros());
        let sys = build_system(&d.space, &forms, &dirichlet).unwrap();
        let sol = solve(&sys, DEFAULT_TOL).unwrap();
        let (dv, dq) = (d.space.dim_v(), d.space.dim_q());
        let u = &sol.coeffs[..dv];
        let p = &sol.coeffs[dv..dv + dq];
        let lhs = forms.a_h().matrix.bilinear(u, u) + forms.c.matrix.bilinear(p, p);
        let rhs: f64 = forms.rhs.iter().zip(u).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs(), "{lhs} vs {rhs}");
        let mp: f64 = forms.mean.iter().zip(p).map(|(a, b)| a * b).sum();
        assert!(mp.abs() <= 1e-10);
    }

    #[test]
    fn singular_system_is_reported() {
        let matrix = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let sys = SaddleSystem { matrix, rhs: vec![1.0, 1.0, 1.0], dim_v: 1, dim_q: 1 };
        assert!(matches!(solve(&sys, DEFAULT_TOL), Err(SolveError::Singular(_))));
    }

    #[test]
    fn symmetric_part_is_coercive() {
        let d = disc(8, [0.0, 0.0]);
        let params = PhysicalParams { mu_minus: 1.0, mu_plus: 10.0, slip: 10.0, gamma: 40.0, ..Default::default() };
        let forms = assemble_all(&d.space, &d.topo, &d.quad, &params, |_, _| Vector2::zeros(), |_| 0.0);
        let lambda = smallest_eigenvalue_without(&forms.a_h().matrix, d.space.dirichlet_dofs());
        assert!(lambda > 0.0, "{lambda}");
    }

    /// Smallest eigenvalue of a symmetric matrix with some rows/columns removed.
    pub(crate) fn smallest_eigenvalue_without(a: &CsrMatrix, removed: &[usize]) -> f64 {
        let mut keep = vec![true; a.nrows()];
        for &r in removed {
            keep[r] = false;
        }
        let map: Vec<usize> = (0..a.nrows()).filter(|&i| keep[i]).collect();
        let mut index = vec![usize::MAX; a.nrows()];
        for (k, &i) in map.iter().enumerate() {
            index[i] = k;
        }
        let mut dense = Mat::<f64>::zeros(map.len(), map.len());
        for (i, j, v) in a.triplets() {
            if keep[i] && keep[j] {
                dense[(index[i], index[j])] = v;
            }
        }
        let eig = dense.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        eig[0]
    }
}
