//! Per-phase Q2 velocity and Q1 pressure spaces on the active meshes.
//!
//! Every element meeting a phase carries that phase's unknowns, so elements
//! of the cut band hold two independent copies. Unknowns are ordered
//! `[u-, u+, p-, p+, lambda]`; velocity unknowns are node-major with the two
//! components interleaved.

use nalgebra::{Matrix2, Point2, Vector2};

use crate::geometry::Phase;
use crate::mesh::{BackgroundMesh, CutTopology, DOMAIN_LO};
use crate::sparse::CsrMatrix;

/// Local Q2 nodes per element.
pub const Q2_NODES: usize = 9;
/// Local Q1 nodes per element.
pub const Q1_NODES: usize = 4;
/// Local velocity unknowns per element and phase.
pub const VELOCITY_LOCAL: usize = 2 * Q2_NODES;

fn lagrange2(t: f64) -> [f64; 3] {
    [2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)]
}

fn lagrange2_deriv(t: f64) -> [f64; 3] {
    [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0]
}

/// Q2 basis values and reference gradients at a reference point.
///
/// Local node `l = 3 * lb + la` sits at `(la / 2, lb / 2)`. The point may lie
/// outside `[0, 1]^2`, which evaluates the canonical polynomial extension.
pub fn q2_basis(xi: &Point2<f64>) -> ([f64; Q2_NODES], [Vector2<f64>; Q2_NODES]) {
    let (lx, ly) = (lagrange2(xi.x), lagrange2(xi.y));
    let (dx, dy) = (lagrange2_deriv(xi.x), lagrange2_deriv(xi.y));
    let mut val = [0.0; Q2_NODES];
    let mut grad = [Vector2::zeros(); Q2_NODES];
    for lb in 0..3 {
        for la in 0..3 {
            let l = 3 * lb + la;
            val[l] = lx[la] * ly[lb];
            grad[l] = Vector2::new(dx[la] * ly[lb], lx[la] * dy[lb]);
        }
    }
    (val, grad)
}

/// Q1 basis values and reference gradients; local node `l = 2 * lb + la`.
pub fn q1_basis(xi: &Point2<f64>) -> ([f64; Q1_NODES], [Vector2<f64>; Q1_NODES]) {
    let lx = [1.0 - xi.x, xi.x];
    let ly = [1.0 - xi.y, xi.y];
    let mut val = [0.0; Q1_NODES];
    let mut grad = [Vector2::zeros(); Q1_NODES];
    for lb in 0..2 {
        for la in 0..2 {
            let l = 2 * lb + la;
            val[l] = lx[la] * ly[lb];
            let sx = if la == 0 { -1.0 } else { 1.0 };
            let sy = if lb == 0 { -1.0 } else { 1.0 };
            grad[l] = Vector2::new(sx * ly[lb], lx[la] * sy);
        }
    }
    (val, grad)
}

/// Q2 values and physical gradients of element `cell` at physical point `x`.
pub fn q2_physical(cell: &crate::geometry::Cell, x: &Point2<f64>) -> ([f64; Q2_NODES], [Vector2<f64>; Q2_NODES]) {
    let (val, mut grad) = q2_basis(&cell.to_reference(x));
    let e = cell.extent();
    for g in grad.iter_mut() {
        g.x /= e.x;
        g.y /= e.y;
    }
    (val, grad)
}

pub fn q1_physical(cell: &crate::geometry::Cell, x: &Point2<f64>) -> ([f64; Q1_NODES], [Vector2<f64>; Q1_NODES]) {
    let (val, mut grad) = q1_basis(&cell.to_reference(x));
    let e = cell.extent();
    for g in grad.iter_mut() {
        g.x /= e.x;
        g.y /= e.y;
    }
    (val, grad)
}

const ABSENT: u32 = u32::MAX;

/// Numbering of the grid nodes touched by one phase's active elements.
#[derive(Debug, Clone, PartialEq)]
struct NodeMap {
    nodes: Vec<usize>,
    lookup: Vec<u32>,
}

impl NodeMap {
    fn build(grid_nodes: usize, elements: &[usize], element_nodes: impl Fn(usize) -> Vec<usize>) -> Self {
        let mut touched = vec![false; grid_nodes];
        for &e in elements {
            for g in element_nodes(e) {
                touched[g] = true;
            }
        }
        let nodes: Vec<usize> = (0..grid_nodes).filter(|&g| touched[g]).collect();
        let mut lookup = vec![ABSENT; grid_nodes];
        for (k, &g) in nodes.iter().enumerate() {
            lookup[g] = k as u32;
        }
        NodeMap { nodes, lookup }
    }

    fn local(&self, global: usize) -> Option<usize> {
        match self.lookup[global] {
            ABSENT => None,
            k => Some(k as usize),
        }
    }
}

/// Degree-of-freedom layout of the two-phase Q2-Q1 space.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseSpace {
    mesh: BackgroundMesh,
    velocity: [NodeMap; 2],
    pressure: [NodeMap; 2],
    active: [Vec<bool>; 2],
    elements: [Vec<usize>; 2],
    dirichlet: Vec<usize>,
}

impl TwoPhaseSpace {
    pub fn new(mesh: &BackgroundMesh, topo: &CutTopology) -> Self {
        let n = mesh.n();
        let q2_side = 2 * n + 1;
        let q1_side = n + 1;
        let q2_nodes = |e: usize| {
            let (i, j) = mesh.element_ij(e);
            (0..Q2_NODES).map(|l| (2 * j + l / 3) * q2_side + 2 * i + l % 3).collect::<Vec<_>>()
        };
        let q1_nodes = |e: usize| {
            let (i, j) = mesh.element_ij(e);
            (0..Q1_NODES).map(|l| (j + l / 2) * q1_side + i + l % 2).collect::<Vec<_>>()
        };
        let velocity = Phase::BOTH.map(|p| NodeMap::build(q2_side * q2_side, topo.elements(p), q2_nodes));
        let pressure = Phase::BOTH.map(|p| NodeMap::build(q1_side * q1_side, topo.elements(p), q1_nodes));
        let active = Phase::BOTH.map(|p| {
            let mut flags = vec![false; mesh.num_elements()];
            for &e in topo.elements(p) {
                flags[e] = true;
            }
            flags
        });
        let elements = Phase::BOTH.map(|p| topo.elements(p).to_vec());

        let mut space = TwoPhaseSpace { mesh: mesh.clone(), velocity, pressure, active, elements, dirichlet: Vec::new() };
        let plus = &space.velocity[Phase::Plus.index()];
        let mut dirichlet = Vec::new();
        for (k, &g) in plus.nodes.iter().enumerate() {
            let (a, b) = (g % q2_side, g / q2_side);
            if a == 0 || b == 0 || a == q2_side - 1 || b == q2_side - 1 {
                let base = space.velocity_offset(Phase::Plus) + 2 * k;
                dirichlet.extend([base, base + 1]);
            }
        }
        space.dirichlet = dirichlet;
        space
    }

    pub fn mesh(&self) -> &BackgroundMesh {
        &self.mesh
    }

    pub fn num_velocity_nodes(&self, phase: Phase) -> usize {
        self.velocity[phase.index()].nodes.len()
    }

    /// `dim V_h^phase` (two components per Q2 node).
    pub fn dim_velocity(&self, phase: Phase) -> usize {
        2 * self.num_velocity_nodes(phase)
    }

    /// `dim Q_h^phase`.
    pub fn dim_pressure(&self, phase: Phase) -> usize {
        self.pressure[phase.index()].nodes.len()
    }

    /// Size of the velocity block `[u-, u+]`.
    pub fn dim_v(&self) -> usize {
        self.dim_velocity(Phase::Minus) + self.dim_velocity(Phase::Plus)
    }

    /// Size of the pressure block `[p-, p+]`.
    pub fn dim_q(&self) -> usize {
        self.dim_pressure(Phase::Minus) + self.dim_pressure(Phase::Plus)
    }

    /// Total unknowns including the mean-value multiplier.
    pub fn system_size(&self) -> usize {
        self.dim_v() + self.dim_q() + 1
    }

    pub fn velocity_offset(&self, phase: Phase) -> usize {
        match phase {
            Phase::Minus => 0,
            Phase::Plus => self.dim_velocity(Phase::Minus),
        }
    }

    /// Offset inside the pressure block.
    pub fn pressure_offset(&self, phase: Phase) -> usize {
        match phase {
            Phase::Minus => 0,
            Phase::Plus => self.dim_pressure(Phase::Minus),
        }
    }

    pub fn multiplier_index(&self) -> usize {
        self.dim_v() + self.dim_q()
    }

    pub fn is_active(&self, phase: Phase, e: usize) -> bool {
        self.active[phase.index()][e]
    }

    pub fn elements(&self, phase: Phase) -> &[usize] {
        &self.elements[phase.index()]
    }

    /// Velocity-block indices of an element's unknowns, `2 * l + component`.
    pub fn element_velocity_dofs(&self, phase: Phase, e: usize) -> [usize; VELOCITY_LOCAL] {
        let map = &self.velocity[phase.index()];
        let side = 2 * self.mesh.n() + 1;
        let (i, j) = self.mesh.element_ij(e);
        let offset = self.velocity_offset(phase);
        let mut dofs = [0; VELOCITY_LOCAL];
        for l in 0..Q2_NODES {
            let g = (2 * j + l / 3) * side + 2 * i + l % 3;
            let k = map.local(g).expect("element not active in phase");
            dofs[2 * l] = offset + 2 * k;
            dofs[2 * l + 1] = offset + 2 * k + 1;
        }
        dofs
    }

    /// Pressure-block indices of an element's unknowns.
    pub fn element_pressure_dofs(&self, phase: Phase, e: usize) -> [usize; Q1_NODES] {
        let map = &self.pressure[phase.index()];
        let side = self.mesh.n() + 1;
        let (i, j) = self.mesh.element_ij(e);
        let offset = self.pressure_offset(phase);
        std::array::from_fn(|l| offset + map.local((j + l / 2) * side + i + l % 2).expect("element not active in phase"))
    }

    /// Plus-phase velocity unknowns on the outer boundary.
    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet
    }

    fn q2_node_point(&self, g: usize) -> Point2<f64> {
        let side = 2 * self.mesh.n() + 1;
        let step = 0.5 * self.mesh.h();
        Point2::new(DOMAIN_LO + (g % side) as f64 * step, DOMAIN_LO + (g / side) as f64 * step)
    }

    fn q1_node_point(&self, g: usize) -> Point2<f64> {
        let side = self.mesh.n() + 1;
        let step = self.mesh.h();
        Point2::new(DOMAIN_LO + (g % side) as f64 * step, DOMAIN_LO + (g / side) as f64 * step)
    }

    /// Coordinates of the phase's Q2 nodes in DOF order.
    pub fn velocity_nodes(&self, phase: Phase) -> Vec<Point2<f64>> {
        self.velocity[phase.index()].nodes.iter().map(|&g| self.q2_node_point(g)).collect()
    }

    pub fn pressure_nodes(&self, phase: Phase) -> Vec<Point2<f64>> {
        self.pressure[phase.index()].nodes.iter().map(|&g| self.q1_node_point(g)).collect()
    }

    /// Active element of `phase` containing `x`, preferring the lowest index.
    pub fn locate(&self, phase: Phase, x: &Point2<f64>) -> Option<usize> {
        let e = self.mesh.locate(x)?;
        if self.is_active(phase, e) {
            return Some(e);
        }
        // x may sit on an edge shared with an active neighbour
        let n = self.mesh.n() as i64;
        let (i, j) = self.mesh.element_ij(e);
        let mut candidates = Vec::new();
        for dj in -1..=1 {
            for di in -1..=1 {
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if (0..n).contains(&ii) && (0..n).contains(&jj) {
                    candidates.push((jj * n + ii) as usize);
                }
            }
        }
        candidates.sort_unstable();
        candidates.into_iter().find(|&c| self.is_active(phase, c) && self.mesh.cell(c).contains(x, 1e-12))
    }

    /// Splits a full solution vector into per-phase fields.
    pub fn velocity_function<'a>(&'a self, phase: Phase, solution: &[f64]) -> VelocityFunction<'a> {
        let start = self.velocity_offset(phase);
        VelocityFunction { space: self, phase, coeffs: solution[start..start + self.dim_velocity(phase)].to_vec() }
    }

    pub fn pressure_function<'a>(&'a self, phase: Phase, solution: &[f64]) -> PressureFunction<'a> {
        let start = self.dim_v() + self.pressure_offset(phase);
        PressureFunction { space: self, phase, coeffs: solution[start..start + self.dim_pressure(phase)].to_vec() }
    }
}

/// Velocity field of one phase, coefficients in that phase's DOF order.
#[derive(Debug, Clone)]
pub struct VelocityFunction<'a> {
    space: &'a TwoPhaseSpace,
    phase: Phase,
    pub coeffs: Vec<f64>,
}

impl<'a> VelocityFunction<'a> {
    pub fn new(space: &'a TwoPhaseSpace, phase: Phase, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.dim_velocity(phase));
        VelocityFunction { space, phase, coeffs }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    fn local(&self, e: usize) -> [f64; VELOCITY_LOCAL] {
        let offset = self.space.velocity_offset(self.phase);
        self.space.element_velocity_dofs(self.phase, e).map(|d| self.coeffs[d - offset])
    }

    /// Value of element `e`'s polynomial (extended if `x` lies outside `e`).
    pub fn value_in(&self, e: usize, x: &Point2<f64>) -> Vector2<f64> {
        let (val, _) = q2_physical(&self.space.mesh.cell(e), x);
        let c = self.local(e);
        (0..Q2_NODES).fold(Vector2::zeros(), |acc, l| acc + val[l] * Vector2::new(c[2 * l], c[2 * l + 1]))
    }

    /// Gradient `G[(i, j)] = d u_i / d x_j` of element `e`'s polynomial.
    pub fn gradient_in(&self, e: usize, x: &Point2<f64>) -> Matrix2<f64> {
        let (_, grad) = q2_physical(&self.space.mesh.cell(e), x);
        let c = self.local(e);
        (0..Q2_NODES).fold(Matrix2::zeros(), |acc, l| {
            acc + Vector2::new(c[2 * l], c[2 * l + 1]) * grad[l].transpose()
        })
    }

    pub fn sym_grad_in(&self, e: usize, x: &Point2<f64>) -> Matrix2<f64> {
        let g = self.gradient_in(e, x);
        0.5 * (g + g.transpose())
    }

    pub fn value(&self, x: &Point2<f64>) -> Option<Vector2<f64>> {
        self.space.locate(self.phase, x).map(|e| self.value_in(e, x))
    }
}

/// Pressure field of one phase.
#[derive(Debug, Clone)]
pub struct PressureFunction<'a> {
    space: &'a TwoPhaseSpace,
    phase: Phase,
    pub coeffs: Vec<f64>,
}

impl<'a> PressureFunction<'a> {
    pub fn new(space: &'a TwoPhaseSpace, phase: Phase, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.dim_pressure(phase));
        PressureFunction { space, phase, coeffs }
    }

    pub fn value_in(&self, e: usize, x: &Point2<f64>) -> f64 {
        let (val, _) = q1_physical(&self.space.mesh.cell(e), x);
        let offset = self.space.pressure_offset(self.phase);
        let dofs = self.space.element_pressure_dofs(self.phase, e);
        (0..Q1_NODES).map(|l| val[l] * self.coeffs[dofs[l] - offset]).sum()
    }

    pub fn gradient_in(&self, e: usize, x: &Point2<f64>) -> Vector2<f64> {
        let (_, grad) = q1_physical(&self.space.mesh.cell(e), x);
        let offset = self.space.pressure_offset(self.phase);
        let dofs = self.space.element_pressure_dofs(self.phase, e);
        (0..Q1_NODES).fold(Vector2::zeros(), |acc, l| acc + grad[l] * self.coeffs[dofs[l] - offset])
    }

    pub fn value(&self, x: &Point2<f64>) -> Option<f64> {
        self.space.locate(self.phase, x).map(|e| self.value_in(e, x))
    }
}

/// Nodal interpolant of a velocity field on one phase's space.
pub fn interpolate_velocity<'a, F>(space: &'a TwoPhaseSpace, phase: Phase, f: F) -> VelocityFunction<'a>
where
    F: Fn(&Point2<f64>) -> Vector2<f64>,
{
    let coeffs = space.velocity_nodes(phase).into_iter().flat_map(|x| {
        let v = f(&x);
        [v.x, v.y]
    });
    VelocityFunction { space, phase, coeffs: coeffs.collect() }
}

/// Nodal interpolant of a pressure field on one phase's space.
pub fn interpolate_pressure<'a, F>(space: &'a TwoPhaseSpace, phase: Phase, f: F) -> PressureFunction<'a>
where
    F: Fn(&Point2<f64>) -> f64,
{
    PressureFunction { space, phase, coeffs: space.pressure_nodes(phase).iter().map(f).collect() }
}

/// Nodal values of the boundary data on the Dirichlet unknowns.
pub fn dirichlet_values<F>(space: &TwoPhaseSpace, g: F) -> Vec<(usize, f64)>
where
    F: Fn(&Point2<f64>) -> Vector2<f64>,
{
    let nodes = space.velocity_nodes(Phase::Plus);
    let offset = space.velocity_offset(Phase::Plus);
    space
        .dirichlet_dofs()
        .iter()
        .map(|&d| {
            let k = (d - offset) / 2;
            (d, g(&nodes[k])[(d - offset) % 2])
        })
        .collect()
}

/// Strong Dirichlet conditions on a square system.
///
/// Constrained rows and columns become identity rows/columns; the removed
/// column contributions move to the right-hand side, so a symmetric matrix
/// stays symmetric.
pub fn apply_dirichlet(values: &[(usize, f64)], matrix: &mut CsrMatrix, rhs: &mut [f64]) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols());
    assert_eq!(n, rhs.len());
    let mut prescribed = vec![None; n];
    for &(d, v) in values {
        prescribed[d] = Some(v);
    }
    for i in 0..n {
        let (cols, vals) = matrix.row_mut(i);
        if let Some(gi) = prescribed[i] {
            for (c, v) in cols.iter().zip(vals.iter_mut()) {
                *v = if *c == i { 1.0 } else { 0.0 };
            }
            rhs[i] = gi;
            continue;
        }
        for (c, v) in cols.iter().zip(vals.iter_mut()) {
            if let Some(gc) = prescribed[*c] {
                rhs[i] -= *v * gc;
                *v = 0.0;
            }
        }
    }
    // constrained rows without a stored diagonal
    let missing: Vec<_> = values.iter().filter(|&&(d, _)| matrix.get(d, d) != 1.0).map(|&(d, _)| (d, d, 1.0)).collect();
    if !missing.is_empty() {
        let mut t: Vec<_> = matrix.triplets().collect();
        t.extend(missing);
        *matrix = CsrMatrix::from_triplets(n, n, &t);
    }
    matrix.prune_zeros();
}
