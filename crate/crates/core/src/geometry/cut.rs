//! Quadrature on cut cells and on the interface.
//!
//! A cut cell is bisected recursively. Once a sub-cell is deep enough and the
//! level set is monotone along one axis inside it, the interface is a graph
//! over the other axis. Gauss points along the graph axis are placed on
//! pieces split wherever the interface leaves through a face, and at each of
//! them the crossing height is found by scalar root finding. This yields
//! curved sub-region rules whose accuracy is limited only by the smoothness
//! of the height function.

use nalgebra::{Point2, Vector2};

use super::gauss::gauss_legendre;
use super::roots::{bracketed_root, roots_in_interval};
use super::{classify_element, Cell, ElementCutClass, LevelSet, Phase};
use crate::error::GeometryError;

/// Offset in the minimum-depth rule `d = max(2, ceil(2.5 log2(1/h)) - DEPTH_BASE)`.
pub const DEPTH_BASE: i64 = 10;

/// Extra subdivision levels allowed when no graph direction is found.
const EXTRA_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutQuadratureSettings {
    /// Polynomial degree integrated exactly on uncut sub-cells.
    pub order: usize,
    pub min_depth: usize,
    pub max_depth: usize,
}

impl CutQuadratureSettings {
    pub fn for_mesh_size(h: f64, order: usize) -> Self {
        let raw = (2.5 * (1.0 / h).log2()).ceil() as i64 - DEPTH_BASE;
        let min_depth = raw.max(2) as usize;
        CutQuadratureSettings { order, min_depth, max_depth: min_depth + EXTRA_DEPTH }
    }

    /// Gauss points per axis for degree `order`.
    pub fn points_per_axis(&self) -> usize {
        self.order / 2 + 1
    }

    pub fn with_order(self, order: usize) -> Self {
        CutQuadratureSettings { order, ..self }
    }
}

/// Volume quadrature rule: physical points with positive weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadRule {
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, x: Point2<f64>, w: f64) {
        self.points.push(x);
        self.weights.push(w);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point2<f64>, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    pub fn integrate<F: Fn(&Point2<f64>) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Interface rule: points on the interface, arc-length weights and unit
/// normals pointing from the minus into the plus phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterfaceRule {
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
    pub normals: Vec<Vector2<f64>>,
}

impl InterfaceRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point2<f64>, f64, &Vector2<f64>)> {
        self.points
            .iter()
            .zip(self.weights.iter().copied())
            .zip(self.normals.iter())
            .map(|((x, w), n)| (x, w, n))
    }

    pub fn integrate<F: Fn(&Point2<f64>, &Vector2<f64>) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(x, w, n)| w * f(x, n)).sum()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Both phase rules and the interface rule of one cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CutRules {
    pub minus: QuadRule,
    pub plus: QuadRule,
    pub interface: InterfaceRule,
}

impl CutRules {
    pub fn phase(&self, phase: Phase) -> &QuadRule {
        match phase {
            Phase::Minus => &self.minus,
            Phase::Plus => &self.plus,
        }
    }

    fn phase_mut(&mut self, phase: Phase) -> &mut QuadRule {
        match phase {
            Phase::Minus => &mut self.minus,
            Phase::Plus => &mut self.plus,
        }
    }
}

/// Tensor Gauss rule with `q x q` points on `cell`.
pub fn tensor_rule(cell: &Cell, q: usize) -> QuadRule {
    let mut rule = QuadRule { points: Vec::with_capacity(q * q), weights: Vec::with_capacity(q * q) };
    push_tensor(cell, q, &mut rule);
    rule
}

fn push_tensor(cell: &Cell, q: usize, rule: &mut QuadRule) {
    let g = gauss_legendre(q);
    let area = cell.area();
    for (eta, wy) in g.iter() {
        for (xi, wx) in g.iter() {
            rule.push(cell.map(&Point2::new(xi, eta)), wx * wy * area);
        }
    }
}

/// Volume rule for `cell ∩ Ω^phase`.
pub fn volume_quadrature<L: LevelSet + ?Sized>(
    cell: &Cell,
    ls: &L,
    phase: Phase,
    settings: &CutQuadratureSettings,
) -> Result<QuadRule, GeometryError> {
    match classify_element(cell, ls) {
        ElementCutClass::Cut => {
            let rules = cut_rules(cell, ls, settings)?;
            Ok(match phase {
                Phase::Minus => rules.minus,
                Phase::Plus => rules.plus,
            })
        }
        class if class.contains_phase(phase) => Ok(tensor_rule(cell, settings.points_per_axis())),
        _ => Ok(QuadRule::default()),
    }
}

/// Interface rule for `Γ ∩ cell`; empty for uncut cells.
pub fn interface_quadrature<L: LevelSet + ?Sized>(
    cell: &Cell,
    ls: &L,
    settings: &CutQuadratureSettings,
) -> Result<InterfaceRule, GeometryError> {
    match classify_element(cell, ls) {
        ElementCutClass::Cut => Ok(cut_rules(cell, ls, settings)?.interface),
        _ => Ok(InterfaceRule::default()),
    }
}

/// Minus, plus and interface rules for a cell, built in one subdivision pass.
pub fn cut_rules<L: LevelSet + ?Sized>(
    cell: &Cell,
    ls: &L,
    settings: &CutQuadratureSettings,
) -> Result<CutRules, GeometryError> {
    let mut rules = CutRules::default();
    subdivide(cell, ls, settings, 0, &mut rules)?;
    Ok(rules)
}

fn subdivide<L: LevelSet + ?Sized>(
    cell: &Cell,
    ls: &L,
    settings: &CutQuadratureSettings,
    depth: usize,
    out: &mut CutRules,
) -> Result<(), GeometryError> {
    let q = settings.points_per_axis();
    match classify_element(cell, ls) {
        ElementCutClass::InsideMinus => push_tensor(cell, q, &mut out.minus),
        ElementCutClass::InsidePlus => push_tensor(cell, q, &mut out.plus),
        ElementCutClass::Cut => {
            if depth >= settings.min_depth {
                if let Some(axis) = height_axis(cell, ls) {
                    graph_rules(cell, ls, axis, q, out);
                    return Ok(());
                }
                if depth >= settings.max_depth {
                    return Err(GeometryError::UnresolvedCut {
                        lo: [cell.lo.x, cell.lo.y],
                        hi: [cell.hi.x, cell.hi.y],
                        depth,
                    });
                }
            }
            for child in cell.split4() {
                subdivide(&child, ls, settings, depth + 1, out)?;
            }
        }
    }
    Ok(())
}

/// Axis along which the level set is strictly monotone over the whole cell.
fn height_axis<L: LevelSet + ?Sized>(cell: &Cell, ls: &L) -> Option<usize> {
    let g = ls.gradient(&cell.center());
    let preferred = if g.y.abs() >= g.x.abs() { 1 } else { 0 };
    [preferred, 1 - preferred].into_iter().find(|&axis| {
        let mut sign = 0.0;
        cell.sample_grid(super::CLASSIFY_SAMPLES).all(|x| {
            let d = ls.gradient(&x)[axis];
            if d == 0.0 {
                return false;
            }
            if sign == 0.0 {
                sign = d.signum();
            }
            d.signum() == sign
        })
    })
}

/// Builds curved rules on a cell where `phi` is monotone along `axis`.
fn graph_rules<L: LevelSet + ?Sized>(cell: &Cell, ls: &L, axis: usize, q: usize, out: &mut CutRules) {
    let t_axis = 1 - axis;
    let (t0, t1) = (cell.lo[t_axis], cell.hi[t_axis]);
    let (a, b) = (cell.lo[axis], cell.hi[axis]);
    let point = |t: f64, s: f64| {
        let mut p = Point2::origin();
        p[t_axis] = t;
        p[axis] = s;
        p
    };

    // Break the graph axis where the interface leaves through the bottom or top face.
    let mut breaks = vec![t0, t1];
    for face in [a, b] {
        breaks.extend(roots_in_interval(
            |t| ls.value(&point(t, face)),
            |t| ls.gradient(&point(t, face))[t_axis],
            t0,
            t1,
            8,
        ));
    }
    breaks.sort_by(f64::total_cmp);
    let min_len = 1e-14 * (t1 - t0);
    breaks.dedup_by(|x, y| (*x - *y).abs() <= min_len);

    let g = gauss_legendre(q);
    for span in breaks.windows(2) {
        let (s0, s1) = (span[0], span[1]);
        let len = s1 - s0;
        if len <= min_len {
            continue;
        }
        for (xi, wt) in g.iter() {
            let t = s0 + xi * len;
            let wt = wt * len;
            let fa = ls.value(&point(t, a));
            let fb = ls.value(&point(t, b));
            if fa * fb < 0.0 {
                let root = bracketed_root(|s| ls.value(&point(t, s)), |s| ls.gradient(&point(t, s))[axis], a, b);
                let x = point(t, root);
                let grad = ls.gradient(&x);
                out.interface.points.push(x);
                out.interface.weights.push(wt * grad.norm() / grad[axis].abs());
                out.interface.normals.push(grad.normalize());
                push_column(out.phase_mut(Phase::of_value(fa)), &point, t, wt, a, root, q);
                push_column(out.phase_mut(Phase::of_value(fb)), &point, t, wt, root, b, q);
            } else {
                let phase = Phase::of_value(if fa.abs() >= fb.abs() { fa } else { fb });
                push_column(out.phase_mut(phase), &point, t, wt, a, b, q);
            }
        }
    }
}

fn push_column<P: Fn(f64, f64) -> Point2<f64>>(
    rule: &mut QuadRule,
    point: &P,
    t: f64,
    wt: f64,
    lo: f64,
    hi: f64,
    q: usize,
) {
    let len = hi - lo;
    if len <= 0.0 {
        return;
    }
    for (eta, ws) in gauss_legendre(q).iter() {
        rule.push(point(t, lo + eta * len), wt * ws * len);
    }
}
