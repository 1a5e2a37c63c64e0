//! Discrete bilinear forms and load vector of the unfitted two-phase method.
//!
//! Conventions: jumps are `[a] = a- - a+`, averages `{a} = alpha a+ + beta a-`
//! and `<a> = beta a+ + alpha a-`. The interface normal points from the minus
//! into the plus phase. Matrix entry `(i, j)` holds `form(phi_j, phi_i)`, so
//! rows belong to test functions.

use std::borrow::Cow;

use nalgebra::{Matrix2, Point2, Vector2};
use rayon::prelude::*;

use crate::error::{GeometryError, ParamError};
use crate::fespace::{q1_physical, q2_physical, TwoPhaseSpace, Q1_NODES, Q2_NODES, VELOCITY_LOCAL};
use crate::geometry::{cut_rules, tensor_rule, CutQuadratureSettings, CutRules, InterfaceRule, LevelSet, Phase, QuadRule};
use crate::mesh::{BackgroundMesh, CutTopology};
use crate::sparse::CsrMatrix;

/// Polynomial degree integrated exactly by the default volume rules.
pub const DEFAULT_ORDER: usize = 7;

type Triplet = (usize, usize, f64);

/// Material and discretization parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PhysicalParams {
    pub mu_minus: f64,
    pub mu_plus: f64,
    /// Slip (friction) coefficient `f`.
    pub slip: f64,
    /// Nitsche penalty.
    pub gamma: f64,
    /// Velocity ghost penalties, indexed by [`Phase::index`].
    pub gamma_u: [f64; 2],
    /// Pressure ghost penalties.
    pub gamma_p: [f64; 2],
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            mu_minus: 1.0,
            mu_plus: 10.0,
            slip: 10.0,
            gamma: 40.0,
            gamma_u: [0.05; 2],
            gamma_p: [0.05; 2],
            alpha: 0.0,
            beta: 1.0,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !(finite_pos(self.mu_minus) && finite_pos(self.mu_plus) && self.mu_minus <= self.mu_plus) {
            return Err(ParamError::Viscosity { mu_minus: self.mu_minus, mu_plus: self.mu_plus });
        }
        if !(self.slip.is_finite() && self.slip >= 0.0) {
            return Err(ParamError::Slip { value: self.slip, requirement: "finite and >= 0" });
        }
        let weights_ok = (0.0..=1.0).contains(&self.alpha)
            && (0.0..=1.0).contains(&self.beta)
            && (self.alpha + self.beta - 1.0).abs() <= 1e-12;
        if !weights_ok {
            return Err(ParamError::Weights { alpha: self.alpha, beta: self.beta });
        }
        if !finite_pos(self.gamma) {
            return Err(ParamError::Penalty { name: "gamma", value: self.gamma, requirement: "finite and > 0" });
        }
        let penalties = [
            ("gamma_u_minus", self.gamma_u[0]),
            ("gamma_u_plus", self.gamma_u[1]),
            ("gamma_p_minus", self.gamma_p[0]),
            ("gamma_p_plus", self.gamma_p[1]),
        ];
        for (name, value) in penalties {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ParamError::Penalty { name, value, requirement: "finite and >= 0" });
            }
        }
        Ok(())
    }

    pub fn mu(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Minus => self.mu_minus,
            Phase::Plus => self.mu_plus,
        }
    }

    /// Weight of a phase's trace in `{.}`.
    pub fn avg_weight(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Minus => self.beta,
            Phase::Plus => self.alpha,
        }
    }

    /// Weight of a phase's trace in `<.>`.
    pub fn dual_avg_weight(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Minus => self.alpha,
            Phase::Plus => self.beta,
        }
    }

    /// `{mu}`.
    pub fn mu_avg(&self) -> f64 {
        self.alpha * self.mu_plus + self.beta * self.mu_minus
    }
}

/// Sign of a phase's trace in the jump `[a] = a- - a+`.
pub fn jump_sign(phase: Phase) -> f64 {
    match phase {
        Phase::Minus => 1.0,
        Phase::Plus => -1.0,
    }
}

/// `[a] = a- - a+`.
pub fn jump(minus: f64, plus: f64) -> f64 {
    minus - plus
}

/// `{a} = alpha a+ + beta a-`.
pub fn average(params: &PhysicalParams, minus: f64, plus: f64) -> f64 {
    params.alpha * plus + params.beta * minus
}

/// `<a> = beta a+ + alpha a-`.
pub fn dual_average(params: &PhysicalParams, minus: f64, plus: f64) -> f64 {
    params.beta * plus + params.alpha * minus
}

/// Which unknown block a matrix dimension refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofSpace {
    Velocity,
    Pressure,
}

/// Assembled block with its row and column spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBlock {
    pub rows: DofSpace,
    pub cols: DofSpace,
    pub matrix: CsrMatrix,
}

impl SparseBlock {
    fn from_parts(space: &TwoPhaseSpace, rows: DofSpace, cols: DofSpace, parts: Vec<Vec<Triplet>>) -> Self {
        let dim = |s| match s {
            DofSpace::Velocity => space.dim_v(),
            DofSpace::Pressure => space.dim_q(),
        };
        let triplets: Vec<Triplet> = parts.into_iter().flatten().collect();
        SparseBlock { rows, cols, matrix: CsrMatrix::from_triplets(dim(rows), dim(cols), &triplets) }
    }

    pub fn add(&self, other: &SparseBlock) -> SparseBlock {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        SparseBlock { rows: self.rows, cols: self.cols, matrix: self.matrix.add(&other.matrix) }
    }
}

/// Quadrature rules of every active element.
///
/// Uncut elements use a tensor Gauss rule generated on demand; cut elements
/// store their phase and interface rules.
#[derive(Debug, Clone)]
pub struct MeshQuadrature {
    mesh: BackgroundMesh,
    settings: CutQuadratureSettings,
    cut: Vec<Option<CutRules>>,
    empty: InterfaceRule,
}

impl MeshQuadrature {
    pub fn build<L: LevelSet + ?Sized>(
        mesh: &BackgroundMesh,
        topo: &CutTopology,
        ls: &L,
        settings: CutQuadratureSettings,
    ) -> Result<Self, GeometryError> {
        let rules: Vec<(usize, CutRules)> = topo
            .cut_elements
            .par_iter()
            .map(|&e| cut_rules(&mesh.cell(e), ls, &settings).map(|r| (e, r)))
            .collect::<Result<_, _>>()?;
        let mut cut = vec![None; mesh.num_elements()];
        for (e, r) in rules {
            cut[e] = Some(r);
        }
        Ok(MeshQuadrature { mesh: mesh.clone(), settings, cut, empty: InterfaceRule::default() })
    }

    /// Rules exact to [`DEFAULT_ORDER`] with the depth rule for the mesh size.
    pub fn with_defaults<L: LevelSet + ?Sized>(mesh: &BackgroundMesh, topo: &CutTopology, ls: &L) -> Result<Self, GeometryError> {
        Self::build(mesh, topo, ls, CutQuadratureSettings::for_mesh_size(mesh.h(), DEFAULT_ORDER))
    }

    pub fn settings(&self) -> &CutQuadratureSettings {
        &self.settings
    }

    /// Rule for `T ∩ Ω^phase`; meaningful only for elements active in `phase`.
    pub fn volume(&self, phase: Phase, e: usize) -> Cow<'_, QuadRule> {
        match &self.cut[e] {
            Some(r) => Cow::Borrowed(r.phase(phase)),
            None => Cow::Owned(tensor_rule(&self.mesh.cell(e), self.settings.points_per_axis())),
        }
    }

    /// Rule for `Γ ∩ T`, empty on uncut elements.
    pub fn interface(&self, e: usize) -> &InterfaceRule {
        self.cut[e].as_ref().map_or(&self.empty, |r| &r.interface)
    }
}

/// Velocity basis of one element at one point.
struct VelocityEval {
    val: [f64; Q2_NODES],
    grad: [Vector2<f64>; Q2_NODES],
}

impl VelocityEval {
    fn new(space: &TwoPhaseSpace, e: usize, x: &Point2<f64>) -> Self {
        let (val, grad) = q2_physical(&space.mesh().cell(e), x);
        VelocityEval { val, grad }
    }

    fn value(&self, k: usize) -> Vector2<f64> {
        let mut v = Vector2::zeros();
        v[k % 2] = self.val[k / 2];
        v
    }

    fn sym_grad(&self, k: usize) -> Matrix2<f64> {
        let g = self.grad[k / 2];
        if k % 2 == 0 {
            Matrix2::new(g.x, 0.5 * g.y, 0.5 * g.y, 0.0)
        } else {
            Matrix2::new(0.0, 0.5 * g.x, 0.5 * g.x, g.y)
        }
    }

    fn div(&self, k: usize) -> f64 {
        self.grad[k / 2][k % 2]
    }

    /// `n^T D(phi_k) n`.
    fn normal_strain(&self, k: usize, n: &Vector2<f64>) -> f64 {
        self.grad[k / 2].dot(n) * n[k % 2]
    }
}

fn par_elements<F>(space: &TwoPhaseSpace, phase_filter: impl Fn(usize) -> bool + Sync, f: F) -> Vec<Vec<Triplet>>
where
    F: Fn(usize) -> Vec<Triplet> + Sync + Send,
{
    (0..space.mesh().num_elements()).into_par_iter().filter(|&e| phase_filter(e)).map(f).collect()
}

fn volume_stiffness(space: &TwoPhaseSpace, quad: &MeshQuadrature, params: &PhysicalParams, e: usize) -> Vec<Triplet> {
    let mut out = Vec::new();
    for phase in Phase::BOTH {
        if !space.is_active(phase, e) {
            continue;
        }
        let dofs = space.element_velocity_dofs(phase, e);
        let mut local = [[0.0; VELOCITY_LOCAL]; VELOCITY_LOCAL];
        let rule = quad.volume(phase, e);
        let two_mu = 2.0 * params.mu(phase);
        for (x, w) in rule.iter() {
            let ev = VelocityEval::new(space, e, x);
            let d: [Matrix2<f64>; VELOCITY_LOCAL] = std::array::from_fn(|k| ev.sym_grad(k));
            for i in 0..VELOCITY_LOCAL {
                for j in 0..VELOCITY_LOCAL {
                    local[i][j] += two_mu * w * d[j].dot(&d[i]);
                }
            }
        }
        push_local(&mut out, &dofs, &dofs, &local);
    }
    out
}

fn push_local<const R: usize, const C: usize>(out: &mut Vec<Triplet>, rows: &[usize; R], cols: &[usize; C], local: &[[f64; C]; R]) {
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            if local[i][j] != 0.0 {
                out.push((r, c, local[i][j]));
            }
        }
    }
}

/// Interface quantities of the two-phase velocity unknowns of a cut element
/// at one interface point, minus-phase unknowns first.
struct InterfaceTraces {
    dofs: [usize; 2 * VELOCITY_LOCAL],
    /// `[phi . n]`
    normal_jump: [f64; 2 * VELOCITY_LOCAL],
    /// `[phi . t]`
    tangential_jump: [f64; 2 * VELOCITY_LOCAL],
    /// `{mu n^T D(phi) n}`
    normal_stress_avg: [f64; 2 * VELOCITY_LOCAL],
    /// `<phi . n>`
    normal_dual_avg: [f64; 2 * VELOCITY_LOCAL],
}

impl InterfaceTraces {
    fn new(space: &TwoPhaseSpace, params: &PhysicalParams, e: usize, x: &Point2<f64>, n: &Vector2<f64>) -> Self {
        let ev = VelocityEval::new(space, e, x);
        let t = Vector2::new(-n.y, n.x);
        let mut tr = InterfaceTraces {
            dofs: [0; 2 * VELOCITY_LOCAL],
            normal_jump: [0.0; 2 * VELOCITY_LOCAL],
            tangential_jump: [0.0; 2 * VELOCITY_LOCAL],
            normal_stress_avg: [0.0; 2 * VELOCITY_LOCAL],
            normal_dual_avg: [0.0; 2 * VELOCITY_LOCAL],
        };
        for (s, phase) in Phase::BOTH.into_iter().enumerate() {
            let dofs = space.element_velocity_dofs(phase, e);
            let sign = jump_sign(phase);
            let mu_w = params.mu(phase) * params.avg_weight(phase);
            for k in 0..VELOCITY_LOCAL {
                let idx = s * VELOCITY_LOCAL + k;
                let v = ev.value(k);
                tr.dofs[idx] = dofs[k];
                tr.normal_jump[idx] = sign * v.dot(n);
                tr.tangential_jump[idx] = sign * v.dot(&t);
                tr.normal_stress_avg[idx] = mu_w * ev.normal_strain(k, n);
                tr.normal_dual_avg[idx] = params.dual_avg_weight(phase) * v.dot(n);
            }
        }
        tr
    }
}

fn interface_pairs<F>(out: &mut Vec<Triplet>, tr: &InterfaceTraces, entry: F)
where
    F: Fn(usize, usize) -> f64,
{
    for i in 0..2 * VELOCITY_LOCAL {
        for j in 0..2 * VELOCITY_LOCAL {
            let v = entry(i, j);
            if v != 0.0 {
                out.push((tr.dofs[i], tr.dofs[j], v));
            }
        }
    }
}

/// `2 (mu D(u), D(v))` per phase `+ <f [Pu], [Pv]> - 2 <{mu n^T D(u) n}, [v.n]>`.
pub fn assemble_a_i(space: &TwoPhaseSpace, topo: &CutTopology, quad: &MeshQuadrature, params: &PhysicalParams) -> SparseBlock {
    let parts = par_elements(
        space,
        |e| space.is_active(Phase::Minus, e) || space.is_active(Phase::Plus, e),
        |e| {
            let mut out = volume_stiffness(space, quad, params, e);
            if topo.is_cut(e) {
                for (x, w, n) in quad.interface(e).iter() {
                    let tr = InterfaceTraces::new(space, params, e, x, n);
                    interface_pairs(&mut out, &tr, |i, j| {
                        w * (params.slip * tr.tangential_jump[j] * tr.tangential_jump[i]
                            - 2.0 * tr.normal_stress_avg[j] * tr.normal_jump[i])
                    });
                }
            }
            out
        },
    );
    SparseBlock::from_parts(space, DofSpace::Velocity, DofSpace::Velocity, parts)
}

/// `(gamma / h) {mu} <[u.n], [v.n]> - 2 <{mu n^T D(v) n}, [u.n]>`.
pub fn assemble_a_n(space: &TwoPhaseSpace, topo: &CutTopology, quad: &MeshQuadrature, params: &PhysicalParams) -> SparseBlock {
    let penalty = params.gamma / space.mesh().h() * params.mu_avg();
    let parts = par_elements(
        space,
        |e| topo.is_cut(e),
        |e| {
            let mut out = Vec::new();
            for (x, w, n) in quad.interface(e).iter() {
                let tr = InterfaceTraces::new(space, params, e, x, n);
                interface_pairs(&mut out, &tr, |i, j| {
                    w * (penalty * tr.normal_jump[j] * tr.normal_jump[i] - 2.0 * tr.normal_stress_avg[i] * tr.normal_jump[j])
                });
            }
            out
        },
    );
    SparseBlock::from_parts(space, DofSpace::Velocity, DofSpace::Velocity, parts)
}

/// Gauss points on both elements of a facet patch.
fn patch_points(mesh: &BackgroundMesh, elements: [usize; 2], q: usize) -> Vec<(Point2<f64>, f64)> {
    elements
        .iter()
        .flat_map(|&e| {
            let rule = tensor_rule(&mesh.cell(e), q);
            rule.points.into_iter().zip(rule.weights)
        })
        .collect()
}

/// Velocity ghost penalty `sum_s mu_s gamma_u^s sum_e h^-2 ((u1 - u2), (v1 - v2))_{omega_e}`.
pub fn assemble_ghost_velocity(space: &TwoPhaseSpace, topo: &CutTopology, params: &PhysicalParams) -> SparseBlock {
    let mesh = space.mesh();
    let q = CutQuadratureSettings::for_mesh_size(mesh.h(), DEFAULT_ORDER).points_per_axis();
    let parts: Vec<Vec<Triplet>> = Phase::BOTH
        .into_iter()
        .flat_map(|phase| topo.facets(phase).iter().map(move |f| (phase, *f)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(phase, facet)| {
            let scale = params.mu(phase) * params.gamma_u[phase.index()] / (mesh.h() * mesh.h());
            let [a, b] = facet.elements;
            let nodes = [space.element_velocity_dofs(phase, a), space.element_velocity_dofs(phase, b)];
            let cells = [mesh.cell(a), mesh.cell(b)];
            let mut local = [[0.0; 2 * Q2_NODES]; 2 * Q2_NODES];
            for (x, w) in patch_points(mesh, facet.elements, q) {
                let va = q2_physical(&cells[0], &x).0;
                let vb = q2_physical(&cells[1], &x).0;
                let d: [f64; 2 * Q2_NODES] = std::array::from_fn(|k| if k < Q2_NODES { va[k] } else { -vb[k - Q2_NODES] });
                for i in 0..2 * Q2_NODES {
                    for j in 0..2 * Q2_NODES {
                        local[i][j] += scale * w * d[i] * d[j];
                    }
                }
            }
            let dof = |k: usize, c: usize| nodes[k / Q2_NODES][2 * (k % Q2_NODES) + c];
            let mut out = Vec::with_capacity(2 * (2 * Q2_NODES) * (2 * Q2_NODES));
            for i in 0..2 * Q2_NODES {
                for j in 0..2 * Q2_NODES {
                    for c in 0..2 {
                        out.push((dof(i, c), dof(j, c), local[i][j]));
                    }
                }
            }
            out
        })
        .collect();
    SparseBlock::from_parts(space, DofSpace::Velocity, DofSpace::Velocity, parts)
}

/// `-(p, div v)` per phase `+ <{p}, [v.n]>`; rows are pressure test functions.
pub fn assemble_b_h(space: &TwoPhaseSpace, topo: &CutTopology, quad: &MeshQuadrature, params: &PhysicalParams) -> SparseBlock {
    let dim_v = space.dim_v();
    let parts = par_elements(
        space,
        |e| space.is_active(Phase::Minus, e) || space.is_active(Phase::Plus, e),
        |e| {
            let cell = space.mesh().cell(e);
            let mut out = Vec::new();
            for phase in Phase::BOTH {
                if !space.is_active(phase, e) {
                    continue;
                }
                let vd = space.element_velocity_dofs(phase, e);
                let pd = space.element_pressure_dofs(phase, e);
                let mut local = [[0.0; VELOCITY_LOCAL]; Q1_NODES];
                for (x, w) in quad.volume(phase, e).iter() {
                    let ev = VelocityEval::new(space, e, x);
                    let (pv, _) = q1_physical(&cell, x);
                    for (i, row) in local.iter_mut().enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v -= w * pv[i] * ev.div(j);
                        }
                    }
                }
                push_local(&mut out, &pd, &vd, &local);
            }
            if topo.is_cut(e) {
                for (x, w, n) in quad.interface(e).iter() {
                    let tr = InterfaceTraces::new(space, params, e, x, n);
                    let (pv, _) = q1_physical(&cell, x);
                    for phase in Phase::BOTH {
                        let pd = space.element_pressure_dofs(phase, e);
                        let weight = params.avg_weight(phase);
                        if weight == 0.0 {
                            continue;
                        }
                        for (i, &r) in pd.iter().enumerate() {
                            for j in 0..2 * VELOCITY_LOCAL {
                                let v = w * weight * pv[i] * tr.normal_jump[j];
                                if v != 0.0 {
                                    out.push((r, tr.dofs[j], v));
                                }
                            }
                        }
                    }
                }
            }
            debug_assert!(out.iter().all(|&(_, c, _)| c < dim_v));
            out
        },
    );
    SparseBlock::from_parts(space, DofSpace::Pressure, DofSpace::Velocity, parts)
}

/// Pressure ghost penalty `sum_s mu_s^-1 gamma_p^s sum_e ((p1 - p2), (q1 - q2))_{omega_e}`.
pub fn assemble_ghost_pressure(space: &TwoPhaseSpace, topo: &CutTopology, params: &PhysicalParams) -> SparseBlock {
    let mesh = space.mesh();
    let q = CutQuadratureSettings::for_mesh_size(mesh.h(), DEFAULT_ORDER).points_per_axis();
    let parts: Vec<Vec<Triplet>> = Phase::BOTH
        .into_iter()
        .flat_map(|phase| topo.facets(phase).iter().map(move |f| (phase, *f)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(phase, facet)| {
            let scale = params.gamma_p[phase.index()] / params.mu(phase);
            let [a, b] = facet.elements;
            let nodes = [space.element_pressure_dofs(phase, a), space.element_pressure_dofs(phase, b)];
            let cells = [mesh.cell(a), mesh.cell(b)];
            let mut local = [[0.0; 2 * Q1_NODES]; 2 * Q1_NODES];
            for (x, w) in patch_points(mesh, facet.elements, q) {
                let va = q1_physical(&cells[0], &x).0;
                let vb = q1_physical(&cells[1], &x).0;
                let d: [f64; 2 * Q1_NODES] = std::array::from_fn(|k| if k < Q1_NODES { va[k] } else { -vb[k - Q1_NODES] });
                for i in 0..2 * Q1_NODES {
                    for j in 0..2 * Q1_NODES {
                        local[i][j] += scale * w * d[i] * d[j];
                    }
                }
            }
            let mut out = Vec::with_capacity(4 * Q1_NODES * Q1_NODES);
            for i in 0..2 * Q1_NODES {
                for j in 0..2 * Q1_NODES {
                    out.push((nodes[i / Q1_NODES][i % Q1_NODES], nodes[j / Q1_NODES][j % Q1_NODES], local[i][j]));
                }
            }
            out
        })
        .collect();
    SparseBlock::from_parts(space, DofSpace::Pressure, DofSpace::Pressure, parts)
}

/// `(f-, v-) + (f+, v+) + <g_Γ, <v.n>>` over the velocity block.
pub fn assemble_rhs<F, G>(space: &TwoPhaseSpace, topo: &CutTopology, quad: &MeshQuadrature, params: &PhysicalParams, forcing: F, traction: G) -> Vec<f64>
where
    F: Fn(Phase, &Point2<f64>) -> Vector2<f64> + Sync,
    G: Fn(&Point2<f64>) -> f64 + Sync,
{
    let parts: Vec<Vec<(usize, f64)>> = (0..space.mesh().num_elements())
        .into_par_iter()
        .map(|e| {
            let mut out = Vec::new();
            for phase in Phase::BOTH {
                if !space.is_active(phase, e) {
                    continue;
                }
                let dofs = space.element_velocity_dofs(phase, e);
                let mut local = [0.0; VELOCITY_LOCAL];
                for (x, w) in quad.volume(phase, e).iter() {
                    let fx = forcing(phase, x);
                    let (val, _) = q2_physical(&space.mesh().cell(e), x);
                    for (k, l) in local.iter_mut().enumerate() {
                        *l += w * val[k / 2] * fx[k % 2];
                    }
                }
                out.extend(dofs.iter().copied().zip(local));
            }
            if topo.is_cut(e) {
                for (x, w, n) in quad.interface(e).iter() {
                    let g = traction(x);
                    let tr = InterfaceTraces::new(space, params, e, x, n);
                    for (d, v) in tr.dofs.iter().zip(tr.normal_dual_avg) {
                        out.push((*d, w * g * v));
                    }
                }
            }
            out
        })
        .collect();
    let mut rhs = vec![0.0; space.dim_v()];
    for (d, v) in parts.into_iter().flatten() {
        rhs[d] += v;
    }
    rhs
}

/// Weights of the mean constraint `sum_s int_{Ω^s} mu_s^-1 q^s` over the pressure block.
pub fn assemble_mean_constraint(space: &TwoPhaseSpace, quad: &MeshQuadrature, params: &PhysicalParams) -> Vec<f64> {
    let parts: Vec<Vec<(usize, f64)>> = (0..space.mesh().num_elements())
        .into_par_iter()
        .map(|e| {
            let cell = space.mesh().cell(e);
            let mut out = Vec::new();
            for phase in Phase::BOTH {
                if !space.is_active(phase, e) {
                    continue;
                }
                let dofs = space.element_pressure_dofs(phase, e);
                let mut local = [0.0; Q1_NODES];
                for (x, w) in quad.volume(phase, e).iter() {
                    let (val, _) = q1_physical(&cell, x);
                    for k in 0..Q1_NODES {
                        local[k] += w * val[k] / params.mu(phase);
                    }
                }
                out.extend(dofs.iter().copied().zip(local));
            }
            out
        })
        .collect();
    let mut m = vec![0.0; space.dim_q()];
    for (d, v) in parts.into_iter().flatten() {
        m[d] += v;
    }
    m
}

/// Every block of the discrete problem.
#[derive(Debug, Clone)]
pub struct AssembledForms {
    pub a_i: SparseBlock,
    pub a_n: SparseBlock,
    pub a_p: SparseBlock,
    pub b: SparseBlock,
    pub c: SparseBlock,
    pub rhs: Vec<f64>,
    pub mean: Vec<f64>,
}

impl AssembledForms {
    /// `A_h = a_i + a_n + a_p`.
    pub fn a_h(&self) -> SparseBlock {
        self.a_i.add(&self.a_n).add(&self.a_p)
    }
}

pub fn assemble_all<F, G>(space: &TwoPhaseSpace, topo: &CutTopology, quad: &MeshQuadrature, params: &PhysicalParams, forcing: F, traction: G) -> AssembledForms
where
    F: Fn(Phase, &Point2<f64>) -> Vector2<f64> + Sync,
    G: Fn(&Point2<f64>) -> f64 + Sync,
{
    AssembledForms {
        a_i: assemble_a_i(space, topo, quad, params),
        a_n: assemble_a_n(space, topo, quad, params),
        a_p: assemble_ghost_velocity(space, topo, params),
        b: assemble_b_h(space, topo, quad, params),
        c: assemble_ghost_pressure(space, topo, params),
        rhs: assemble_rhs(space, topo, quad, params, forcing, traction),
        mean: assemble_mean_constraint(space, quad, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{interpolate_pressure, interpolate_velocity};
    use crate::geometry::{gauss_legendre, Circle};
    use proptest::prelude::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    struct Setup {
        mesh: BackgroundMesh,
        topo: CutTopology,
        space: TwoPhaseSpace,
        quad: MeshQuadrature,
        ls: Circle,
    }

    fn setup(n: usize, center: [f64; 2], r: f64) -> Setup {
        let mesh = BackgroundMesh::new(n).unwrap();
        let ls = Circle::new(center, r);
        let topo = CutTopology::build(&mesh, &ls).unwrap();
        let space = TwoPhaseSpace::new(&mesh, &topo);
        let quad = MeshQuadrature::with_defaults(&mesh, &topo, &ls).unwrap();
        Setup { mesh, topo, space, quad, ls }
    }

    /// Coefficients of the same global velocity field in both phases.
    fn global_velocity<F: Fn(&Point2<f64>) -> Vector2<f64> + Copy>(space: &TwoPhaseSpace, f: F) -> Vec<f64> {
        let mut x = interpolate_velocity(space, Phase::Minus, f).coeffs;
        x.extend(interpolate_velocity(space, Phase::Plus, f).coeffs);
        x
    }

    fn global_pressure<F: Fn(&Point2<f64>) -> f64 + Copy>(space: &TwoPhaseSpace, f: F) -> Vec<f64> {
        let mut x = interpolate_pressure(space, Phase::Minus, f).coeffs;
        x.extend(interpolate_pressure(space, Phase::Plus, f).coeffs);
        x
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn params_validation() {
        assert!(PhysicalParams::default().validate().is_ok());
        let bad = [
            PhysicalParams { alpha: 0.5, beta: 0.6, ..Default::default() },
            PhysicalParams { mu_minus: 2.0, mu_plus: 1.0, ..Default::default() },
            PhysicalParams { slip: -1.0, ..Default::default() },
            PhysicalParams { gamma: 0.0, ..Default::default() },
            PhysicalParams { gamma_p: [0.05, -1.0], ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn rigid_motion_in_kernel_without_interface() {
        let s = setup(4, [5.0, 5.0], 0.1);
        let params = PhysicalParams { slip: 0.0, ..Default::default() };
        let a = assemble_a_i(&s.space, &s.topo, &s.quad, &params);
        let u = global_velocity(&s.space, |x| Vector2::new(0.3 - x.y, 0.2 + x.x));
        assert!(max_abs(&a.matrix.matvec(&u)) < 1e-12);
        assert!(a.matrix.max_asymmetry() < 1e-13);
    }

    #[test]
    fn single_element_entry_matches_oracle() {
        // the bubble node of element 5 is supported on that element only
        let s = setup(4, [5.0, 5.0], 0.1);
        let params = PhysicalParams::default();
        let a = assemble_a_i(&s.space, &s.topo, &s.quad, &params);
        let dofs = s.space.element_velocity_dofs(Phase::Plus, 5);
        let (bx, by) = (dofs[2 * 4], dofs[2 * 4 + 1]);
        // oracle: 20-point Gauss on closed-form bubble derivatives
        let cell = s.mesh.cell(5);
        let (lo, ext) = (cell.lo, cell.extent());
        let bubble_grad = |x: f64, y: f64| {
            let (s, t) = ((x - lo.x) / ext.x, (y - lo.y) / ext.y);
            let b = |r: f64| 4.0 * r * (1.0 - r);
            let db = |r: f64| 4.0 - 8.0 * r;
            (db(s) * b(t) / ext.x, b(s) * db(t) / ext.y)
        };
        let g = gauss_legendre(20);
        let (mut xx, mut xy) = (0.0, 0.0);
        for (s1, w1) in g.iter() {
            for (s2, w2) in g.iter() {
                let (gx, gy) = bubble_grad(lo.x + s1 * ext.x, lo.y + s2 * ext.y);
                let w = w1 * w2 * cell.area();
                // 2 mu D(phi e1) : D(phi e1) = 2 mu (gx^2 + gy^2 / 2)
                xx += w * 2.0 * params.mu_plus * (gx * gx + 0.5 * gy * gy);
                // 2 mu D(phi e2) : D(phi e1) = mu gx gy
                xy += w * params.mu_plus * gx * gy;
            }
        }
        assert!((a.matrix.get(bx, bx) - xx).abs() < 1e-12 * xx.abs());
        assert!((a.matrix.get(bx, by) - xy).abs() < 1e-12);
        assert!((a.matrix.get(by, bx) - xy).abs() < 1e-12);
    }

    #[test]
    fn nitsche_terms_vanish_on_continuous_fields() {
        let s = setup(8, [0.0, 0.0], 2.0 / 3.0);
        let params = PhysicalParams::default();
        let a_n = assemble_a_n(&s.space, &s.topo, &s.quad, &params);
        let u = global_velocity(&s.space, |x| Vector2::new(x.x * x.y * x.y + 1.0, x.x * x.x - x.y));
        let r = a_n.matrix.matvec(&u);
        assert!(max_abs(&r) < 1e-11, "{}", max_abs(&r));
    }

    #[test]
    fn a_h_is_symmetric() {
        for (n, c) in [(8, [0.0, 0.0]), (16, [0.013, -0.021])] {
            let s = setup(n, c, 2.0 / 3.0);
            let params = PhysicalParams::default();
            let a_i = assemble_a_i(&s.space, &s.topo, &s.quad, &params);
            let a_n = assemble_a_n(&s.space, &s.topo, &s.quad, &params);
            let a_p = assemble_ghost_velocity(&s.space, &s.topo, &params);
            let a_h = a_i.add(&a_n).add(&a_p);
            assert!(a_h.matrix.max_asymmetry() <= 1e-11, "{}", a_h.matrix.max_asymmetry());
            // a_i alone is not symmetric because of the consistency term
            assert!(a_i.matrix.max_asymmetry() > 1e-6);
        }
    }

    #[test]
    fn ghost_penalties_vanish_on_global_polynomials() {
        let s = setup(8, [0.05, 0.0], 0.6);
        let params = PhysicalParams::default();
        let j = assemble_ghost_velocity(&s.space, &s.topo, &params);
        let u = global_velocity(&s.space, |x| Vector2::new(x.x * x.x * x.y * x.y - 3.0 * x.x, 2.0 + x.x * x.y * x.y));
        assert!(j.matrix.bilinear(&u, &u).abs() <= 1e-12);
        assert!(max_abs(&j.matrix.matvec(&u)) <= 1e-12);
        let c = assemble_ghost_pressure(&s.space, &s.topo, &params);
        let p = global_pressure(&s.space, |x| 1.0 + x.x - 2.0 * x.y + 0.5 * x.x * x.y);
        assert!(c.matrix.bilinear(&p, &p).abs() <= 1e-12);
    }

    #[test]
    fn ghost_patch_values_match_closed_forms() {
        // n = 2 gives unit elements; every element is cut, all four facets carry penalties
        let s = setup(2, [0.0, 0.0], 0.3);
        assert_eq!(s.topo.facets(Phase::Minus).len(), 4);
        let params = PhysicalParams::default();
        let j = assemble_ghost_velocity(&s.space, &s.topo, &params);
        // x^2 left of x = 0 and 0 right of it; two vertical patches each give int x^4 = 2/5
        let u = global_velocity(&s.space, |x| Vector2::new(if x.x < 0.0 { x.x * x.x } else { 0.0 }, 0.0));
        let expected = (params.mu_minus * params.gamma_u[0] + params.mu_plus * params.gamma_u[1]) * 2.0 * 0.4;
        assert!((j.matrix.bilinear(&u, &u) - expected).abs() < 1e-12);

        let c = assemble_ghost_pressure(&s.space, &s.topo, &params);
        let p = global_pressure(&s.space, |x| x.x.min(0.0));
        let expected = (params.gamma_p[0] / params.mu_minus + params.gamma_p[1] / params.mu_plus) * 2.0 * (2.0 / 3.0);
        assert!((c.matrix.bilinear(&p, &p) - expected).abs() < 1e-12);
    }

    #[test]
    fn ghost_velocity_scales_with_inverse_square_of_h() {
        // kink along x = 0: each patch straddling it contributes mu gamma_u h^-2 * 2 h^6 / 5
        let params = PhysicalParams::default();
        for n in [4, 8, 16] {
            let s = setup(n, [0.0, 0.0], 2.0 / 3.0);
            let h = s.mesh.h();
            let j = assemble_ghost_velocity(&s.space, &s.topo, &params);
            let u = global_velocity(&s.space, |x| Vector2::new(if x.x < 0.0 { x.x * x.x } else { 0.0 }, 0.0));
            let mut expected = 0.0;
            for phase in Phase::BOTH {
                let straddling = s
                    .topo
                    .facets(phase)
                    .iter()
                    .filter(|f| {
                        let (ca, cb) = (s.mesh.cell(f.elements[0]), s.mesh.cell(f.elements[1]));
                        ca.lo.x.min(cb.lo.x) < 0.0 && ca.hi.x.max(cb.hi.x) > 0.0
                    })
                    .count();
                expected += params.mu(phase) * params.gamma_u[phase.index()] * straddling as f64 * 0.4 * h.powi(4);
            }
            let value = j.matrix.bilinear(&u, &u);
            assert!((value - expected).abs() <= 1e-12, "n = {n}: {value} vs {expected}");
        }
    }

    #[test]
    fn ghost_pressure_is_symmetric_psd() {
        let s = setup(8, [0.0, 0.0], 2.0 / 3.0);
        let c = assemble_ghost_pressure(&s.space, &s.topo, &PhysicalParams::default());
        assert!(c.matrix.max_asymmetry() <= 1e-12);
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let q: Vec<f64> = (0..s.space.dim_q()).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(c.matrix.bilinear(&q, &q) >= -1e-12);
        }
    }

    #[test]
    fn divergence_block_identities() {
        let s = setup(16, [0.0, 0.0], 2.0 / 3.0);
        let params = PhysicalParams::default();
        let b = assemble_b_h(&s.space, &s.topo, &s.quad, &params);
        assert_eq!((b.matrix.nrows(), b.matrix.ncols()), (s.space.dim_q(), s.space.dim_v()));
        // divergence-free Q2 field from the stream function x^2 y^2
        let u = global_velocity(&s.space, |x| Vector2::new(2.0 * x.x * x.x * x.y, -2.0 * x.x * x.y * x.y));
        let ones = vec![1.0; s.space.dim_q()];
        assert!(b.matrix.bilinear(&ones, &u).abs() < 1e-11);

        // indicator of the minus phase against a global field: -∮ v.n
        let field = |x: &Point2<f64>| Vector2::new(x.x * x.x + x.x, x.y);
        let v = global_velocity(&s.space, field);
        let mut p = vec![0.0; s.space.dim_q()];
        p[..s.space.dim_pressure(Phase::Minus)].fill(1.0);
        let flux: f64 = (0..s.mesh.num_elements())
            .map(|e| s.quad.interface(e).integrate(|x, n| field(x).dot(n)))
            .sum();
        let d = b.matrix.bilinear(&p, &v) + flux;
        assert!(d.abs() < 1e-11, "{d} {flux}");
        // divergence theorem: 2 |Ω-|
        let area = std::f64::consts::PI * 4.0 / 9.0;
        assert!((flux - 2.0 * area).abs() < 1e-8);
    }

    #[test]
    fn load_vector() {
        let s = setup(16, [0.0, 0.0], 2.0 / 3.0);
        let params = PhysicalParams::default();
        let zero = assemble_rhs(&s.space, &s.topo, &s.quad, &params, |_, _| Vector2::zeros(), |_| 0.0);
        assert!(zero.iter().all(|&v| v == 0.0));

        let r0 = 2.0 / 3.0;
        let rhs = assemble_rhs(&s.space, &s.topo, &s.quad, &params, |_, _| Vector2::zeros(), |_| 1.0);
        let v = global_velocity(&s.space, |x| x.coords / r0);
        let total: f64 = rhs.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((total - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-8);

        let m = assemble_mean_constraint(&s.space, &s.quad, &params);
        let ones = vec![1.0; s.space.dim_q()];
        let area = std::f64::consts::PI * r0 * r0;
        let expected = area / params.mu_minus + (4.0 - area) / params.mu_plus;
        let got: f64 = m.iter().zip(&ones).map(|(a, b)| a * b).sum();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn forcing_matches_oracle_quadrature() {
        let s = setup(16, [0.0, 0.0], 2.0 / 3.0);
        let params = PhysicalParams::default();
        let forcing = |_: Phase, x: &Point2<f64>| Vector2::new(6.0 * x.y + 3.0 * x.x * x.x, -6.0 * x.x);
        let rhs = assemble_rhs(&s.space, &s.topo, &s.quad, &params, forcing, |_| 0.0);
        // oracle rules: more points per axis and deeper subdivision
        let fine = CutQuadratureSettings { order: 15, min_depth: 5, max_depth: 12 };
        let oracle = MeshQuadrature::build(&s.mesh, &s.topo, &s.ls, fine).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let mut picks: Vec<usize> = (0..3).map(|_| rng.random_range(0..s.mesh.num_elements())).collect();
        picks.push(s.topo.cut_elements[rng.random_range(0..s.topo.cut_elements.len())]);
        for e in picks {
            for phase in Phase::BOTH {
                if !s.space.is_active(phase, e) {
                    continue;
                }
                // bubble node: supported on e only
                let dofs = s.space.element_velocity_dofs(phase, e);
                for c in 0..2 {
                    let exact: f64 = oracle
                        .volume(phase, e)
                        .iter()
                        .map(|(x, w)| w * q2_physical(&s.mesh.cell(e), x).0[4] * forcing(phase, x)[c])
                        .sum();
                    assert!((rhs[dofs[8 + c]] - exact).abs() < 1e-10, "element {e} phase {phase:?}");
                }
            }
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let s = setup(8, [0.02, 0.01], 2.0 / 3.0);
        let params = PhysicalParams::default();
        let a = assemble_a_i(&s.space, &s.topo, &s.quad, &params);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| assemble_a_i(&s.space, &s.topo, &s.quad, &params));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn jump_average_identity(am in -1e3..1e3f64, ap in -1e3..1e3f64, bm in -1e3..1e3f64, bp in -1e3..1e3f64, alpha in 0.0..=1.0f64) {
            let params = PhysicalParams { alpha, beta: 1.0 - alpha, ..Default::default() };
            let lhs = jump(am * bm, ap * bp);
            let rhs = jump(bm, bp) * average(&params, am, ap) + dual_average(&params, bm, bp) * jump(am, ap);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + (am * bm).abs() + (ap * bp).abs()));
        }

        #[test]
        fn default_weights_pick_traces(m in -10.0..10.0f64, p in -10.0..10.0f64) {
            let params = PhysicalParams::default();
            prop_assert_eq!(average(&params, m, p), m);
            prop_assert_eq!(dual_average(&params, m, p), p);
        }
    }
}
