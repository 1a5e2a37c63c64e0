//! Uniform quad background mesh of `[-1, 1]^2` and the active sets of the
//! unfitted discretization.

use crate::error::{GeometryError, MeshError};
use crate::geometry::{classify_element, Cell, ElementCutClass, LevelSet, Phase};

pub const DOMAIN_LO: f64 = -1.0;
pub const DOMAIN_HI: f64 = 1.0;

/// Interior facet shared by two elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Facet {
    /// Neighbors ordered by element index (left/bottom first).
    pub elements: [usize; 2],
    pub orientation: FacetOrientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetOrientation {
    /// Facet lies on a line `x = const`.
    Vertical,
    /// Facet lies on a line `y = const`.
    Horizontal,
}

/// Structured `n x n` quad mesh, elements and vertices numbered row-major
/// starting from the lower-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMesh {
    n: usize,
    h: f64,
    facets: Vec<Facet>,
}

impl BackgroundMesh {
    pub fn new(n: usize) -> Result<Self, MeshError> {
        if n < 2 {
            return Err(MeshError::TooCoarse(n));
        }
        if n % 2 != 0 {
            return Err(MeshError::OddSubdivision(n));
        }
        let h = (DOMAIN_HI - DOMAIN_LO) / n as f64;
        let mut facets = Vec::with_capacity(2 * n * (n - 1));
        for j in 0..n {
            for i in 0..n - 1 {
                facets.push(Facet { elements: [j * n + i, j * n + i + 1], orientation: FacetOrientation::Vertical });
            }
        }
        for j in 0..n - 1 {
            for i in 0..n {
                facets.push(Facet { elements: [j * n + i, (j + 1) * n + i], orientation: FacetOrientation::Horizontal });
            }
        }
        Ok(BackgroundMesh { n, h, facets })
    }

    /// Subdivisions per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Element size `h_T = h_e = 2/n`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_elements(&self) -> usize {
        self.n * self.n
    }

    pub fn num_vertices(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn interior_facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Column and row of an element.
    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.n, e / self.n)
    }

    pub fn cell(&self, e: usize) -> Cell {
        let (i, j) = self.element_ij(e);
        let h = self.h;
        Cell::new(
            [DOMAIN_LO + i as f64 * h, DOMAIN_LO + j as f64 * h],
            [DOMAIN_LO + (i + 1) as f64 * h, DOMAIN_LO + (j + 1) as f64 * h],
        )
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_elements()).map(|e| self.cell(e))
    }

    pub fn is_boundary_element(&self, e: usize) -> bool {
        let (i, j) = self.element_ij(e);
        i == 0 || j == 0 || i == self.n - 1 || j == self.n - 1
    }

    /// Element containing `x` (the lowest-index one on shared edges).
    pub fn locate(&self, x: &nalgebra::Point2<f64>) -> Option<usize> {
        let fi = (x.x - DOMAIN_LO) / self.h;
        let fj = (x.y - DOMAIN_LO) / self.h;
        let tol = 1e-12;
        if fi < -tol || fj < -tol || fi > self.n as f64 + tol || fj > self.n as f64 + tol {
            return None;
        }
        let i = (fi.max(0.0) as usize).min(self.n - 1);
        let j = (fj.max(0.0) as usize).min(self.n - 1);
        Some(j * self.n + i)
    }

    /// Number of boundary facets (each with a single neighbor).
    pub fn num_boundary_facets(&self) -> usize {
        4 * self.n
    }
}

/// Classification of every element plus the active element and facet sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CutTopology {
    pub classes: Vec<ElementCutClass>,
    /// Elements meeting each phase, indexed by [`Phase::index`].
    pub phase_elements: [Vec<usize>; 2],
    pub cut_elements: Vec<usize>,
    /// Ghost-penalty facets per phase: both neighbors active, one of them cut.
    pub ghost_facets: [Vec<Facet>; 2],
}

impl CutTopology {
    pub fn build<L: LevelSet + ?Sized>(mesh: &BackgroundMesh, ls: &L) -> Result<Self, GeometryError> {
        let classes: Vec<ElementCutClass> = mesh.cells().map(|c| classify_element(&c, ls)).collect();

        // The minus phase has to stay strictly inside the domain.
        for e in (0..mesh.num_elements()).filter(|&e| mesh.is_boundary_element(e)) {
            if classes[e] != ElementCutClass::InsidePlus && touches_boundary_minus(mesh, e, ls) {
                return Err(GeometryError::InterfaceTouchesBoundary { element: e });
            }
        }

        let phase_elements = Phase::BOTH.map(|phase| {
            (0..classes.len()).filter(|&e| classes[e].contains_phase(phase)).collect::<Vec<_>>()
        });
        let cut_elements = (0..classes.len()).filter(|&e| classes[e] == ElementCutClass::Cut).collect();
        let ghost_facets = Phase::BOTH.map(|phase| {
            mesh.interior_facets()
                .iter()
                .filter(|f| {
                    let [a, b] = f.elements;
                    classes[a].contains_phase(phase)
                        && classes[b].contains_phase(phase)
                        && (classes[a] == ElementCutClass::Cut || classes[b] == ElementCutClass::Cut)
                })
                .copied()
                .collect::<Vec<_>>()
        });
        Ok(CutTopology { classes, phase_elements, cut_elements, ghost_facets })
    }

    pub fn elements(&self, phase: Phase) -> &[usize] {
        &self.phase_elements[phase.index()]
    }

    pub fn facets(&self, phase: Phase) -> &[Facet] {
        &self.ghost_facets[phase.index()]
    }

    pub fn is_cut(&self, e: usize) -> bool {
        self.classes[e] == ElementCutClass::Cut
    }
}

/// Whether the level set is non-positive somewhere on the outer edges of a
/// boundary element.
fn touches_boundary_minus<L: LevelSet + ?Sized>(mesh: &BackgroundMesh, e: usize, ls: &L) -> bool {
    let cell = mesh.cell(e);
    let (i, j) = mesh.element_ij(e);
    let n = mesh.n();
    let (lo, hi) = (cell.lo, cell.hi);
    let mut edges = Vec::new();
    if i == 0 {
        edges.push(Cell { lo, hi: nalgebra::Point2::new(lo.x, hi.y) });
    }
    if i == n - 1 {
        edges.push(Cell { lo: nalgebra::Point2::new(hi.x, lo.y), hi });
    }
    if j == 0 {
        edges.push(Cell { lo, hi: nalgebra::Point2::new(hi.x, lo.y) });
    }
    if j == n - 1 {
        edges.push(Cell { lo: nalgebra::Point2::new(lo.x, hi.y), hi });
    }
    edges.iter().any(|edge| {
        let sampled = edge.sample_grid(crate::geometry::CLASSIFY_SAMPLES).any(|x| ls.value(&x) <= 0.0);
        sampled || ls.bounds(edge).is_some_and(|(min, _)| min <= 0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Circle;

    #[test]
    fn counts() {
        let m = BackgroundMesh::new(4).unwrap();
        assert_eq!(m.num_elements(), 16);
        assert_eq!(m.num_vertices(), 25);
        assert_eq!(m.interior_facets().len(), 24);
        let m = BackgroundMesh::new(2).unwrap();
        assert_eq!(m.num_elements(), 4);
        assert_eq!(m.h(), 1.0);
        assert_eq!(BackgroundMesh::new(64).unwrap().num_elements(), 4096);
        assert_eq!(BackgroundMesh::new(1), Err(MeshError::TooCoarse(1)));
        assert_eq!(BackgroundMesh::new(5), Err(MeshError::OddSubdivision(5)));
    }

    #[test]
    fn element_areas_sum_to_domain() {
        let m = BackgroundMesh::new(16).unwrap();
        let total: f64 = m.cells().map(|c| c.area()).sum();
        assert_eq!(total, 4.0);
    }

    #[test]
    fn facet_neighbors_are_adjacent() {
        let m = BackgroundMesh::new(6).unwrap();
        let mut seen = vec![0usize; m.num_elements()];
        for f in m.interior_facets() {
            let [a, b] = f.elements;
            assert_ne!(a, b);
            let (ca, cb) = (m.cell(a), m.cell(b));
            match f.orientation {
                FacetOrientation::Vertical => assert!((ca.hi.x - cb.lo.x).abs() < 1e-15),
                FacetOrientation::Horizontal => assert!((ca.hi.y - cb.lo.y).abs() < 1e-15),
            }
            seen[a] += 1;
            seen[b] += 1;
        }
        // every element has 4 facets; boundary facets have one neighbor
        let interior_slots: usize = seen.iter().sum();
        assert_eq!(interior_slots + m.num_boundary_facets(), 4 * m.num_elements());
    }

    #[test]
    fn locate_points() {
        let m = BackgroundMesh::new(4).unwrap();
        assert_eq!(m.locate(&nalgebra::Point2::new(-0.99, -0.99)), Some(0));
        assert_eq!(m.locate(&nalgebra::Point2::new(1.0, 1.0)), Some(15));
        assert_eq!(m.locate(&nalgebra::Point2::new(0.1, -0.6)), Some(2));
        assert_eq!(m.locate(&nalgebra::Point2::new(1.5, 0.0)), None);
    }

    #[test]
    fn topology_of_coarse_circle() {
        let m = BackgroundMesh::new(4).unwrap();
        let ls = Circle::new([0.0, 0.0], 2.0 / 3.0);
        let topo = CutTopology::build(&m, &ls).unwrap();
        // four center cells plus eight edge-adjacent cells; corners are outside
        assert_eq!(topo.cut_elements.len(), 12);
        assert!(topo.elements(Phase::Minus).iter().all(|&e| topo.is_cut(e)));
        assert_eq!(topo.elements(Phase::Plus).len(), 16);
    }

    #[test]
    fn topology_invariants() {
        for (n, c) in [(8, [0.0, 0.0]), (16, [0.031, -0.017]), (32, [-0.0123, 0.04])] {
            let m = BackgroundMesh::new(n).unwrap();
            let ls = Circle::new(c, 2.0 / 3.0);
            let topo = CutTopology::build(&m, &ls).unwrap();
            // Cut = minus ∩ plus; minus ∪ plus = all
            for e in 0..m.num_elements() {
                let in_m = topo.elements(Phase::Minus).contains(&e);
                let in_p = topo.elements(Phase::Plus).contains(&e);
                assert!(in_m || in_p);
                assert_eq!(in_m && in_p, topo.is_cut(e));
            }
            for phase in Phase::BOTH {
                for f in topo.facets(phase) {
                    assert!(f.elements.iter().all(|e| topo.elements(phase).contains(e)));
                    assert!(f.elements.iter().any(|&e| topo.is_cut(e)));
                }
            }
            // cut band scales like the perimeter
            let ratio = topo.cut_elements.len() as f64 / (4.0 * std::f64::consts::PI * (2.0 / 3.0) / (3.0 * m.h()));
            assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
            assert_eq!(topo, CutTopology::build(&m, &ls).unwrap());
        }
    }

    #[test]
    fn small_circle_inside_one_element_is_cut() {
        let m = BackgroundMesh::new(4).unwrap();
        let ls = Circle::new([0.25, 0.25], 0.1);
        let topo = CutTopology::build(&m, &ls).unwrap();
        assert_eq!(topo.cut_elements, vec![10]);
        let ls = Circle::new([0.25, 0.25], 0.7);
        let topo = CutTopology::build(&m, &ls).unwrap();
        assert!(!topo.cut_elements.is_empty());
    }

    #[test]
    fn rejects_interface_on_boundary() {
        let m = BackgroundMesh::new(8).unwrap();
        let ls = Circle::new([0.5, 0.0], 0.6);
        assert!(matches!(CutTopology::build(&m, &ls), Err(GeometryError::InterfaceTouchesBoundary { .. })));
    }
}
