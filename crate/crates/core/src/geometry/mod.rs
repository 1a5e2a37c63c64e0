//! Implicit interface description and cut-cell quadrature.
//!
//! The interface is the zero level of a smooth function `phi` with `phi < 0`
//! in the interior phase and `phi > 0` in the exterior phase. Cells of the
//! background mesh are axis-aligned rectangles.

mod cut;
mod gauss;
mod roots;

pub use cut::{
    cut_rules, interface_quadrature, tensor_rule, volume_quadrature, CutQuadratureSettings,
    CutRules, InterfaceRule, QuadRule, DEPTH_BASE,
};
pub use gauss::{gauss_legendre, GaussRule};
pub use roots::{bracketed_root, roots_in_interval};

use nalgebra::{Matrix2, Point2, Vector2};

/// One of the two fluid phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Interior phase, `phi < 0`.
    Minus,
    /// Exterior phase, `phi > 0`.
    Plus,
}

impl Phase {
    pub const BOTH: [Phase; 2] = [Phase::Minus, Phase::Plus];

    pub fn index(self) -> usize {
        match self {
            Phase::Minus => 0,
            Phase::Plus => 1,
        }
    }

    pub fn of_value(phi: f64) -> Phase {
        if phi < 0.0 {
            Phase::Minus
        } else {
            Phase::Plus
        }
    }
}

/// A smooth implicit function whose zero level is the interface.
pub trait LevelSet: Sync {
    fn value(&self, x: &Point2<f64>) -> f64;
    fn gradient(&self, x: &Point2<f64>) -> Vector2<f64>;
    fn hessian(&self, x: &Point2<f64>) -> Matrix2<f64>;

    /// Exact lower/upper bounds of the function over `cell`, when cheaply known.
    fn bounds(&self, _cell: &Cell) -> Option<(f64, f64)> {
        None
    }

    fn unit_normal(&self, x: &Point2<f64>) -> Vector2<f64> {
        self.gradient(x).normalize()
    }
}

/// Circle `|x - c|^2 - r^2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point2<f64>,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: [f64; 2], radius: f64) -> Self {
        assert!(radius > 0.0, "circle radius must be positive");
        Circle { center: Point2::new(center[0], center[1]), radius }
    }

    /// Returns a copy nudged off configurations where the circle passes
    /// through a grid vertex or is tangent to a grid line.
    ///
    /// The grid is `origin + i * spacing` for `i in 0..=count` along both axes.
    pub fn regularized_for_grid(&self, origin: f64, spacing: f64, count: usize) -> Circle {
        const TOL: f64 = 1e-13;
        const SHIFT: f64 = 1e-12;
        let mut circle = *self;
        for _ in 0..8 {
            if !circle.is_degenerate_on_grid(origin, spacing, count, TOL) {
                return circle;
            }
            log::warn!(
                "circle (c = ({}, {}), r = {}) degenerate on grid; shifting center by {SHIFT:e}",
                circle.center.x,
                circle.center.y,
                circle.radius
            );
            circle.center += Vector2::new(SHIFT, SHIFT);
        }
        circle
    }

    fn is_degenerate_on_grid(&self, origin: f64, spacing: f64, count: usize, tol: f64) -> bool {
        let lines: Vec<f64> = (0..=count).map(|i| origin + i as f64 * spacing).collect();
        let r = self.radius;
        for &line in &lines {
            for (c, _) in [(self.center.x, 0), (self.center.y, 1)] {
                if (c + r - line).abs() < tol || (c - r - line).abs() < tol {
                    return true;
                }
            }
        }
        lines.iter().any(|&x| {
            lines.iter().any(|&y| ((Point2::new(x, y) - self.center).norm() - r).abs() < tol)
        })
    }
}

impl LevelSet for Circle {
    fn value(&self, x: &Point2<f64>) -> f64 {
        (x - self.center).norm_squared() - self.radius * self.radius
    }

    fn gradient(&self, x: &Point2<f64>) -> Vector2<f64> {
        2.0 * (x - self.center)
    }

    fn hessian(&self, _x: &Point2<f64>) -> Matrix2<f64> {
        Matrix2::identity() * 2.0
    }

    fn bounds(&self, cell: &Cell) -> Option<(f64, f64)> {
        let c = self.center;
        let nearest = Point2::new(c.x.clamp(cell.lo.x, cell.hi.x), c.y.clamp(cell.lo.y, cell.hi.y));
        let far_x = if (c.x - cell.lo.x).abs() > (c.x - cell.hi.x).abs() { cell.lo.x } else { cell.hi.x };
        let far_y = if (c.y - cell.lo.y).abs() > (c.y - cell.hi.y).abs() { cell.lo.y } else { cell.hi.y };
        Some((self.value(&nearest), self.value(&Point2::new(far_x, far_y))))
    }
}

/// Signed curvature `div(grad phi / |grad phi|)` of the level through `x`.
pub fn curvature<L: LevelSet + ?Sized>(ls: &L, x: &Point2<f64>) -> f64 {
    let g = ls.gradient(x);
    let hess = ls.hessian(x);
    let norm = g.norm();
    // div(g/|g|) = tr(H)/|g| - g^T H g / |g|^3
    hess.trace() / norm - (g.transpose() * hess * g)[(0, 0)] / norm.powi(3)
}

/// Axis-aligned rectangle `[lo.x, hi.x] x [lo.y, hi.y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lo: Point2<f64>,
    pub hi: Point2<f64>,
}

impl Cell {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Cell { lo: Point2::new(lo[0], lo[1]), hi: Point2::new(hi[0], hi[1]) }
    }

    pub fn extent(&self) -> Vector2<f64> {
        self.hi - self.lo
    }

    pub fn area(&self) -> f64 {
        let e = self.extent();
        e.x * e.y
    }

    pub fn center(&self) -> Point2<f64> {
        nalgebra::center(&self.lo, &self.hi)
    }

    /// Maps reference coordinates in `[0,1]^2` (or beyond) to physical space.
    pub fn map(&self, xi: &Point2<f64>) -> Point2<f64> {
        let e = self.extent();
        Point2::new(self.lo.x + xi.x * e.x, self.lo.y + xi.y * e.y)
    }

    pub fn to_reference(&self, x: &Point2<f64>) -> Point2<f64> {
        let e = self.extent();
        Point2::new((x.x - self.lo.x) / e.x, (x.y - self.lo.y) / e.y)
    }

    pub fn contains(&self, x: &Point2<f64>, tol: f64) -> bool {
        x.x >= self.lo.x - tol && x.x <= self.hi.x + tol && x.y >= self.lo.y - tol && x.y <= self.hi.y + tol
    }

    /// The four quadrants, ordered lower-left, lower-right, upper-left, upper-right.
    pub fn split4(&self) -> [Cell; 4] {
        let m = self.center();
        [
            Cell { lo: self.lo, hi: m },
            Cell { lo: Point2::new(m.x, self.lo.y), hi: Point2::new(self.hi.x, m.y) },
            Cell { lo: Point2::new(self.lo.x, m.y), hi: Point2::new(m.x, self.hi.y) },
            Cell { lo: m, hi: self.hi },
        ]
    }

    /// Tensor grid of `k x k` sample points including the corners.
    pub fn sample_grid(&self, k: usize) -> impl Iterator<Item = Point2<f64>> + '_ {
        let step = 1.0 / (k - 1) as f64;
        (0..k).flat_map(move |j| (0..k).map(move |i| self.map(&Point2::new(i as f64 * step, j as f64 * step))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementCutClass {
    InsideMinus,
    InsidePlus,
    Cut,
}

impl ElementCutClass {
    pub fn contains_phase(self, phase: Phase) -> bool {
        match (self, phase) {
            (ElementCutClass::Cut, _) => true,
            (ElementCutClass::InsideMinus, Phase::Minus) => true,
            (ElementCutClass::InsidePlus, Phase::Plus) => true,
            _ => false,
        }
    }
}

/// Samples per axis used for classification (corners included).
pub const CLASSIFY_SAMPLES: usize = 5;

/// Classifies a cell against the level set.
///
/// The cell is cut when the sampled values (and the exact bounds, if the
/// level set provides them) take both signs.
pub fn classify_element<L: LevelSet + ?Sized>(cell: &Cell, ls: &L) -> ElementCutClass {
    let (mut min, mut max) = cell
        .sample_grid(CLASSIFY_SAMPLES)
        .map(|x| ls.value(&x))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if let Some((lo, hi)) = ls.bounds(cell) {
        min = min.min(lo);
        max = max.max(hi);
    }
    if min < 0.0 && max > 0.0 {
        ElementCutClass::Cut
    } else if ls.value(&cell.center()) < 0.0 {
        ElementCutClass::InsideMinus
    } else {
        ElementCutClass::InsidePlus
    }
}
