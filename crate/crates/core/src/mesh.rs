//! Uniform triangulations of a rectangle.
//!
//! Nodes are numbered row-major (`index = j * nx + i`, `i` along x). Every
//! grid cell is split by its bottom-left to top-right diagonal into two
//! counterclockwise triangles. Boundary nodes are traversed counterclockwise
//! starting at the bottom-left corner; a boundary vector holds one value per
//! boundary node in that order.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::sparse::CsrPattern;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }
}

/// The four sides of the rectangle, in boundary traversal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub side: Side,
    /// Positions of the endpoints in the boundary traversal.
    pub positions: [usize; 2],
    /// Mesh node indices of the endpoints.
    pub nodes: [usize; 2],
    pub length: f64,
}

/// A P1 triangle with its precomputed geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub nodes: [usize; 3],
    pub area: f64,
    /// Constant gradients of the three local hat functions.
    pub grads: [[f64; 2]; 3],
}

impl Element {
    /// Gradient of the P1 interpolant of `values` on this element.
    #[inline]
    pub fn gradient(&self, values: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (k, &n) in self.nodes.iter().enumerate() {
            g[0] += values[n] * self.grads[k][0];
            g[1] += values[n] * self.grads[k][1];
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    rect: Rect,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Element>,
    boundary_nodes: Vec<usize>,
    boundary_edges: Vec<BoundaryEdge>,
    arc_positions: Vec<f64>,
    lumped: Vec<f64>,
    pattern: Arc<CsrPattern>,
}

/// Builds the uniform `nx x ny` node triangulation of `rect`.
pub fn build_uniform_mesh(nx: usize, ny: usize, rect: Rect) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidMesh(format!(
            "need at least 2 nodes per side, got {nx} x {ny}"
        )));
    }
    let (w, h) = (rect.width(), rect.height());
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(Error::InvalidMesh(format!("degenerate rectangle {rect:?}")));
    }

    let dx = w / (nx - 1) as f64;
    let dy = h / (ny - 1) as f64;
    let mut nodes = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        // Pin the last row/column to the exact corner coordinates.
        let y = if j == ny - 1 { rect.y1 } else { rect.y0 + j as f64 * dy };
        for i in 0..nx {
            let x = if i == nx - 1 { rect.x1 } else { rect.x0 + i as f64 * dx };
            nodes.push([x, y]);
        }
    }

    let id = |i: usize, j: usize| j * nx + i;
    let mut elements = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            elements.push(make_element([n00, n10, n11], &nodes));
            elements.push(make_element([n00, n11, n01], &nodes));
        }
    }

    // Counterclockwise from the bottom-left corner.
    let mut boundary_nodes = Vec::with_capacity(2 * (nx + ny) - 4);
    let mut sides = Vec::with_capacity(2 * (nx + ny) - 4);
    for i in 0..nx - 1 {
        boundary_nodes.push(id(i, 0));
        sides.push(Side::Bottom);
    }
    for j in 0..ny - 1 {
        boundary_nodes.push(id(nx - 1, j));
        sides.push(Side::Right);
    }
    for i in (1..nx).rev() {
        boundary_nodes.push(id(i, ny - 1));
        sides.push(Side::Top);
    }
    for j in (1..ny).rev() {
        boundary_nodes.push(id(0, j));
        sides.push(Side::Left);
    }

    let nb = boundary_nodes.len();
    let mut boundary_edges = Vec::with_capacity(nb);
    let mut arc_positions = Vec::with_capacity(nb);
    let mut arc = 0.0;
    for p in 0..nb {
        let q = (p + 1) % nb;
        let (a, b) = (boundary_nodes[p], boundary_nodes[q]);
        let length = dist(nodes[a], nodes[b]);
        arc_positions.push(arc);
        arc += length;
        boundary_edges.push(BoundaryEdge {
            side: sides[p],
            positions: [p, q],
            nodes: [a, b],
            length,
        });
    }

    let mut lumped = vec![0.0; nodes.len()];
    for e in &elements {
        for &n in &e.nodes {
            lumped[n] += e.area / 3.0;
        }
    }

    let triples: Vec<[usize; 3]> = elements.iter().map(|e| e.nodes).collect();
    let pattern = CsrPattern::from_triangles(nodes.len(), &triples);

    Ok(Mesh {
        nx,
        ny,
        rect,
        nodes,
        elements,
        boundary_nodes,
        boundary_edges,
        arc_positions,
        lumped,
        pattern,
    })
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

fn make_element(tri: [usize; 3], nodes: &[[f64; 2]]) -> Element {
    let [p0, p1, p2] = tri.map(|n| nodes[n]);
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let area = 0.5 * det;
    // grad psi_k = (y_{k+1} - y_{k+2}, x_{k+2} - x_{k+1}) / det
    let p = [p0, p1, p2];
    let mut grads = [[0.0; 2]; 3];
    for (k, g) in grads.iter_mut().enumerate() {
        let a = p[(k + 1) % 3];
        let b = p[(k + 2) % 3];
        *g = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    Element {
        nodes: tri,
        area,
        grads,
    }
}

impl Mesh {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, n: usize) -> [f64; 2] {
        self.nodes[n]
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn triangles(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.elements.iter().map(|e| e.nodes)
    }

    /// Mesh spacing along x.
    pub fn hx(&self) -> f64 {
        self.rect.width() / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.rect.height() / (self.ny - 1) as f64
    }

    /// Boundary node indices in counterclockwise traversal order.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn num_boundary_nodes(&self) -> usize {
        self.boundary_nodes.len()
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// Arc length from the bottom-left corner to each boundary node.
    pub fn arc_positions(&self) -> &[f64] {
        &self.arc_positions
    }

    /// Lumped mass weights `sum_{T ∋ i} |T| / 3`.
    pub fn lumped_weights(&self) -> &[f64] {
        &self.lumped
    }

    pub(crate) fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    /// Boundary position of a node, if it lies on the boundary.
    pub fn boundary_position(&self, node: usize) -> Option<usize> {
        self.boundary_nodes.iter().position(|&n| n == node)
    }

    /// Evaluates `f` at every boundary node.
    pub fn boundary_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.boundary_nodes
            .iter()
            .map(|&n| f(self.nodes[n][0], self.nodes[n][1]))
            .collect()
    }

    /// Maximum number of unknowns coupled to a node, `|i - j|` over the stencil.
    pub fn bandwidth(&self) -> usize {
        self.pattern.bandwidth()
    }
}

/// Edges on `side`, ordered along the counterclockwise traversal.
pub fn boundary_edges_of(mesh: &Mesh, side: Side) -> Vec<BoundaryEdge> {
    mesh.boundary_edges
        .iter()
        .filter(|e| e.side == side)
        .copied()
        .collect()
}

/// Trapezoidal approximation of `∫_Γ f g dσ` for boundary vectors `f`, `g`.
pub fn boundary_l2_inner(mesh: &Mesh, f: &[f64], g: &[f64]) -> Result<f64> {
    let nb = mesh.num_boundary_nodes();
    check_len("boundary vector f", nb, f.len())?;
    check_len("boundary vector g", nb, g.len())?;
    Ok(mesh
        .boundary_edges
        .iter()
        .map(|e| {
            let [p, q] = e.positions;
            0.5 * e.length * (f[p] * g[p] + f[q] * g[q])
        })
        .sum())
}

/// `boundary_l2_inner(f, f).sqrt()`.
pub fn boundary_l2_norm(mesh: &Mesh, f: &[f64]) -> Result<f64> {
    Ok(boundary_l2_inner(mesh, f, f)?.sqrt())
}
