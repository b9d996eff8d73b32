//! P1 Galerkin discretization of `-div(a grad u) + c u = f` with Neumann flux.
//!
//! Coefficients live at the nodes and are interpolated linearly inside each
//! triangle. Element integrals use the three-point edge-midpoint rule, which
//! is exact for quadratics; boundary integrals use the trapezoidal rule on
//! edges, matching [`crate::mesh::boundary_l2_inner`].

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{conjugate_gradient, BandCholesky, CgStats, CsrMatrix};

/// One real value per mesh node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodalField(Vec<f64>);

impl NodalField {
    pub fn zeros(mesh: &Mesh) -> Self {
        NodalField(vec![0.0; mesh.num_nodes()])
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        NodalField(vec![value; mesh.num_nodes()])
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        NodalField(mesh.nodes().iter().map(|p| f(p[0], p[1])).collect())
    }

    /// Wraps `values`, checking the length against `mesh` and finiteness.
    pub fn from_vec(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        check_len("nodal field", mesh.num_nodes(), values.len())?;
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Inadmissible {
                name: "nodal field",
                node,
                value: values[node],
            });
        }
        Ok(NodalField(values))
    }

    /// Wraps `values` without validation.
    pub fn from_raw(values: Vec<f64>) -> Self {
        NodalField(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        NodalField(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &[f64], f: impl Fn(f64, f64) -> f64) -> Self {
        NodalField(self.0.iter().zip(other).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Deref for NodalField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for NodalField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<NodalField> for Vec<f64> {
    fn from(f: NodalField) -> Self {
        f.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    ConjugateGradient,
    DirectFactorization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub method: SolverMethod,
    pub rel_tol: f64,
    /// `None` means ten times the number of unknowns.
    pub max_iter: Option<usize>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            method: SolverMethod::ConjugateGradient,
            rel_tol: 1e-10,
            max_iter: None,
        }
    }
}

impl SolverSettings {
    pub fn direct() -> Self {
        SolverSettings {
            method: SolverMethod::DirectFactorization,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::invalid("rel_tol", format!("must be positive, got {}", self.rel_tol)));
        }
        if self.max_iter == Some(0) {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        Ok(())
    }

    /// Tolerance scale used by consistency checks; roundoff for the direct method.
    pub fn effective_tol(&self) -> f64 {
        match self.method {
            SolverMethod::ConjugateGradient => self.rel_tol,
            SolverMethod::DirectFactorization => 1e-12,
        }
    }
}

/// Assembled `K(a) + M(c)`.
#[derive(Debug, Clone)]
pub struct SparseSpdSystem {
    matrix: CsrMatrix,
}

impl SparseSpdSystem {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    /// Factorizes (direct) or extracts the preconditioner (CG) once so the
    /// system can be solved for many right-hand sides.
    pub fn prepare(&self, settings: &SolverSettings) -> Result<PreparedSolver> {
        settings.validate()?;
        match settings.method {
            SolverMethod::DirectFactorization => {
                Ok(PreparedSolver::Direct(BandCholesky::factor(&self.matrix)?))
            }
            SolverMethod::ConjugateGradient => {
                let n = self.matrix.n();
                let inv_diag = self
                    .matrix
                    .diagonal()
                    .iter()
                    .enumerate()
                    .map(|(row, &d)| {
                        if d > 0.0 {
                            Ok(1.0 / d)
                        } else {
                            Err(Error::NotPositiveDefinite { row, pivot: d })
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PreparedSolver::Cg {
                    matrix: self.matrix.clone(),
                    inv_diag,
                    rel_tol: settings.rel_tol,
                    max_iter: settings.max_iter.unwrap_or(10 * n),
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum PreparedSolver {
    Direct(BandCholesky),
    Cg {
        matrix: CsrMatrix,
        inv_diag: Vec<f64>,
        rel_tol: f64,
        max_iter: usize,
    },
}

impl PreparedSolver {
    pub fn solve(&self, rhs: &[f64]) -> Result<NodalField> {
        if let Some(node) = rhs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Inadmissible {
                name: "right-hand side",
                node,
                value: rhs[node],
            });
        }
        match self {
            PreparedSolver::Direct(chol) => Ok(NodalField(chol.solve(rhs))),
            PreparedSolver::Cg {
                matrix,
                inv_diag,
                rel_tol,
                max_iter,
            } => {
                check_len("right-hand side", matrix.n(), rhs.len())?;
                let (x, stats): (Vec<f64>, CgStats) =
                    conjugate_gradient(matrix, inv_diag, rhs, *rel_tol, *max_iter)?;
                log::trace!("cg: {} iterations, residual {:.2e}", stats.iterations, stats.relative_residual);
                Ok(NodalField(x))
            }
        }
    }
}

fn check_coefficient(mesh: &Mesh, name: &'static str, v: &[f64]) -> Result<()> {
    check_len(name, mesh.num_nodes(), v.len())?;
    if let Some(node) = v.iter().position(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::Inadmissible {
            name,
            node,
            value: v[node],
        });
    }
    Ok(())
}

/// Local edges of a triangle used by the midpoint rule.
const EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Assembles `A_ij = ∫ a ∇ψ_i·∇ψ_j + c ψ_i ψ_j`.
pub fn assemble_system(mesh: &Mesh, a: &[f64], c: &[f64]) -> Result<SparseSpdSystem> {
    check_coefficient(mesh, "a", a)?;
    check_coefficient(mesh, "c", c)?;
    let mut matrix = CsrMatrix::zeros(mesh.pattern().clone());
    let slots = &mesh.pattern().element_slots;
    let vals = matrix.values_mut();
    for (e, s) in mesh.elements().iter().zip(slots) {
        let n = e.nodes;
        let a_mean = (a[n[0]] + a[n[1]] + a[n[2]]) / 3.0;
        let mut local = [0.0; 9];
        for r in 0..3 {
            for q in 0..3 {
                let g = e.grads[r][0] * e.grads[q][0] + e.grads[r][1] * e.grads[q][1];
                local[3 * r + q] = a_mean * e.area * g;
            }
        }
        let w = e.area / 12.0;
        for &(k, l) in &EDGES {
            let cm = 0.5 * (c[n[k]] + c[n[l]]) * w;
            local[3 * k + k] += cm;
            local[3 * l + l] += cm;
            local[3 * k + l] += cm;
            local[3 * l + k] += cm;
        }
        for (slot, v) in s.iter().zip(local) {
            vals[*slot] += v;
        }
    }
    Ok(SparseSpdSystem { matrix })
}

/// `b_i = ∫_Γ g ψ_i dσ` by the edge trapezoid rule.
pub fn assemble_neumann_load(mesh: &Mesh, g: &[f64]) -> Result<NodalField> {
    check_len("boundary flux", mesh.num_boundary_nodes(), g.len())?;
    let mut b = NodalField::zeros(mesh);
    for e in mesh.boundary_edges() {
        let [p, q] = e.positions;
        let [np, nq] = e.nodes;
        b[np] += 0.5 * e.length * g[p];
        b[nq] += 0.5 * e.length * g[q];
    }
    Ok(b)
}

/// `b_i = ∫_Ω f ψ_i dx` for nodal `f`.
pub fn assemble_source_load(mesh: &Mesh, f: &[f64]) -> Result<NodalField> {
    check_len("source", mesh.num_nodes(), f.len())?;
    let mut b = NodalField::zeros(mesh);
    for e in mesh.elements() {
        let n = e.nodes;
        let w = e.area / 6.0;
        for &(k, l) in &EDGES {
            let fm = 0.5 * (f[n[k]] + f[n[l]]) * w;
            b[n[k]] += fm;
            b[n[l]] += fm;
        }
    }
    Ok(b)
}

pub fn solve_spd(system: &SparseSpdSystem, rhs: &[f64], settings: &SolverSettings) -> Result<NodalField> {
    system.prepare(settings)?.solve(rhs)
}

/// Restriction of nodal values to the boundary, in traversal order.
pub fn trace(mesh: &Mesh, u: &[f64]) -> Vec<f64> {
    mesh.boundary_nodes().iter().map(|&n| u[n]).collect()
}

// ---------------------------------------------------------------------------
// Discrete norms and integrals
// ---------------------------------------------------------------------------

/// `∫_Ω v dx` (exact for P1).
pub fn integral(mesh: &Mesh, v: &[f64]) -> f64 {
    mesh.lumped_weights().iter().zip(v).map(|(w, v)| w * v).sum()
}

/// `∫_Ω c u dx` with the same quadrature as the mass matrix, i.e. `1^T M(c) u`.
pub fn weighted_integral(mesh: &Mesh, c: &[f64], u: &[f64]) -> f64 {
    let mut total = 0.0;
    for e in mesh.elements() {
        let n = e.nodes;
        let mut s = 0.0;
        for &(k, l) in &EDGES {
            s += 0.5 * (c[n[k]] + c[n[l]]) * 0.5 * (u[n[k]] + u[n[l]]);
        }
        total += e.area / 3.0 * s;
    }
    total
}

/// Consistent-mass `L²(Ω)` inner product of two P1 fields.
pub fn l2_inner(mesh: &Mesh, u: &[f64], v: &[f64]) -> f64 {
    let mut total = 0.0;
    for e in mesh.elements() {
        let [i, j, k] = e.nodes;
        let (su, sv) = (u[i] + u[j] + u[k], v[i] + v[j] + v[k]);
        total += e.area / 12.0 * (u[i] * v[i] + u[j] * v[j] + u[k] * v[k] + su * sv);
    }
    total
}

pub fn l2_norm(mesh: &Mesh, v: &[f64]) -> f64 {
    l2_inner(mesh, v, v).max(0.0).sqrt()
}

/// Lumped-mass inner product `Σ m_i u_i v_i`.
pub fn lumped_inner(mesh: &Mesh, u: &[f64], v: &[f64]) -> f64 {
    mesh.lumped_weights()
        .iter()
        .zip(u.iter().zip(v))
        .map(|(w, (a, b))| w * a * b)
        .sum()
}

/// `(Σ m_i |v_i|^p)^{1/p}` with lumped weights.
pub fn lp_norm(mesh: &Mesh, v: &[f64], p: f64) -> f64 {
    let s: f64 = mesh
        .lumped_weights()
        .iter()
        .zip(v)
        .map(|(w, x)| w * x.abs().powf(p))
        .sum();
    s.powf(1.0 / p)
}

pub fn l1_norm(mesh: &Mesh, v: &[f64]) -> f64 {
    lp_norm(mesh, v, 1.0)
}

pub fn h1_seminorm(mesh: &Mesh, v: &[f64]) -> f64 {
    mesh.elements()
        .iter()
        .map(|e| {
            let g = e.gradient(v);
            e.area * (g[0] * g[0] + g[1] * g[1])
        })
        .sum::<f64>()
        .sqrt()
}

pub fn h1_norm(mesh: &Mesh, v: &[f64]) -> f64 {
    (h1_seminorm(mesh, v).powi(2) + l2_norm(mesh, v).powi(2)).sqrt()
}

/// Degree-4 six-point triangle rule: barycentric points and weights.
const DUNAVANT4: [([f64; 3], f64); 6] = [
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
];

/// `‖u - u_h‖_{L²}` against an exact function, by a degree-4 rule per triangle.
pub fn l2_error(mesh: &Mesh, u_h: &[f64], exact: impl Fn(f64, f64) -> f64) -> f64 {
    let mut total = 0.0;
    for e in mesh.elements() {
        let p = e.nodes.map(|n| mesh.node(n));
        for (bary, w) in DUNAVANT4 {
            let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
            let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
            let uh: f64 = (0..3).map(|k| bary[k] * u_h[e.nodes[k]]).sum();
            total += w * e.area * (exact(x, y) - uh).powi(2);
        }
    }
    total.sqrt()
}

/// `|u - u_h|_{H¹}` against an exact gradient.
pub fn h1_seminorm_error(mesh: &Mesh, u_h: &[f64], grad: impl Fn(f64, f64) -> [f64; 2]) -> f64 {
    let mut total = 0.0;
    for e in mesh.elements() {
        let p = e.nodes.map(|n| mesh.node(n));
        let gh = e.gradient(u_h);
        for (bary, w) in DUNAVANT4 {
            let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
            let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
            let g = grad(x, y);
            total += w * e.area * ((g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2));
        }
    }
    total.sqrt()
}
