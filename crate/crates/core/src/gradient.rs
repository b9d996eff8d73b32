//! Adjoint solves, shape-derivative fields and the level-set update.
//!
//! `L^a` and `L^c` are the `L²` representatives of the gradient of half the
//! data misfit with respect to `φᵃ` and `φᶜ` (plus the optional curvature
//! term). The update solves `(Δ - I) δφ = L` with zero normal flux.

use crate::error::{check_len, Error, Result};
use crate::fem::{assemble_source_load, assemble_system, NodalField, PreparedSolver, SolverSettings};
use crate::forward::{ForwardOperator, Residuals};
use crate::levelset::{curvature_term, Coefficient, LevelSetPair, SmoothHeaviside};
use crate::mesh::Mesh;

/// Solves the state equation with the residual as Neumann flux.
pub fn adjoint_solve(mesh: &Mesh, a: &[f64], c: &[f64], r_m: &[f64], settings: &SolverSettings) -> Result<NodalField> {
    ForwardOperator::new(mesh, a, c, settings)?.solve_flux(r_m)
}

/// Nodal representatives of the adjoint products for `a` and `c`.
///
/// Both are exact gradients of `-wᵀ A(a, c) u` with respect to the nodal
/// coefficient values, divided by the lumped weights, so that pairing them
/// with a direction in the lumped inner product reproduces the discrete
/// directional derivative. `da` is the area-weighted average of the
/// element-constant `-∇u·∇w`. `dc` is `-u w` sampled at the edge
/// midpoints, the points where the mass term is integrated.
///
/// Note the sign of `da`: the derivative of the state with respect to `a`
/// enters with a minus, exactly like the one for `c`.
pub fn shape_derivative_fields(mesh: &Mesh, u: &[f64], w: &[f64]) -> Result<(NodalField, NodalField)> {
    check_len("u", mesh.num_nodes(), u.len())?;
    check_len("w", mesh.num_nodes(), w.len())?;
    const EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];
    let mut da = NodalField::zeros(mesh);
    let mut dc = NodalField::zeros(mesh);
    for e in mesh.elements() {
        let gu = e.gradient(u);
        let gw = e.gradient(w);
        let p = e.area / 3.0 * (gu[0] * gw[0] + gu[1] * gw[1]);
        for &n in &e.nodes {
            da[n] -= p;
        }
        for &(k, l) in &EDGES {
            let (nk, nl) = (e.nodes[k], e.nodes[l]);
            let q = e.area / 24.0 * ((u[nk] + u[nl]) * (w[nk] + w[nl]));
            dc[nk] -= q;
            dc[nl] -= q;
        }
    }
    for ((a, c), wt) in da.iter_mut().zip(dc.iter_mut()).zip(mesh.lumped_weights()) {
        *a /= wt;
        *c /= wt;
    }
    Ok((da, dc))
}

/// Sums over experiments of the shape-derivative fields, one adjoint solve
/// per residual on the already prepared state operator.
pub fn adjoint_products(op: &ForwardOperator<'_>, res: &Residuals) -> Result<(NodalField, NodalField)> {
    let mesh = op.mesh();
    let mut sum_da = NodalField::zeros(mesh);
    let mut sum_dc = NodalField::zeros(mesh);
    for (u, r) in res.u.iter().zip(&res.r) {
        let w = op.solve_flux(r)?;
        let (da, dc) = shape_derivative_fields(mesh, u, &w)?;
        for i in 0..mesh.num_nodes() {
            sum_da[i] += da[i];
            sum_dc[i] += dc[i];
        }
    }
    Ok((sum_da, sum_dc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTerms {
    pub l_a: NodalField,
    pub l_c: NodalField,
    /// Data-misfit contributions, before the curvature term.
    pub data_part_a: NodalField,
    pub data_part_c: NodalField,
}

impl GradientTerms {
    pub fn get(&self, which: Coefficient) -> &NodalField {
        match which {
            Coefficient::A => &self.l_a,
            Coefficient::C => &self.l_c,
        }
    }
}

fn data_part(phi: &[f64], h: SmoothHeaviside, jump: f64, sum: &[f64]) -> NodalField {
    NodalField::from_raw(phi.iter().zip(sum).map(|(&t, &s)| jump * h.derivative(t) * s).collect())
}

/// `L^a = (a1 - a2) H'_ε(φᵃ) Σ ∇u·∇w - α β_a κ(φᵃ)` and
/// `L^c = (c1 - c2) H'_ε(φᶜ) Σ (-u w) - α β_c κ(φᶜ)`, with `κ` from
/// [`curvature_term`].
#[allow(clippy::too_many_arguments)]
pub fn assemble_l(
    mesh: &Mesh,
    ls: &LevelSetPair,
    sum_da: &[f64],
    sum_dc: &[f64],
    alpha: f64,
    beta_a: f64,
    beta_c: f64,
    eta: f64,
) -> Result<GradientTerms> {
    check_len("sum_da", mesh.num_nodes(), sum_da.len())?;
    check_len("sum_dc", mesh.num_nodes(), sum_dc.len())?;
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if !(beta_a >= 0.0 && beta_c >= 0.0) {
        return Err(Error::invalid("beta", "must be non-negative"));
    }
    let h = SmoothHeaviside::new(ls.eps)?;
    let l = ls.levels;
    let data_part_a = data_part(&ls.phi_a, h, l.a1 - l.a2, sum_da);
    let data_part_c = data_part(&ls.phi_c, h, l.c1 - l.c2, sum_dc);
    let with_curvature = |data: &NodalField, phi: &[f64], beta: f64| -> Result<NodalField> {
        if beta == 0.0 {
            return Ok(data.clone());
        }
        let k = curvature_term(mesh, phi, ls.eps, eta)?;
        Ok(data.zip_map(&k, |d, k| d - alpha * beta * k))
    };
    Ok(GradientTerms {
        l_a: with_curvature(&data_part_a, &ls.phi_a, beta_a)?,
        l_c: with_curvature(&data_part_c, &ls.phi_c, beta_c)?,
        data_part_a,
        data_part_c,
    })
}

/// The prepared `K(1) + M(1)` operator of the update equation.
pub struct UpdateSolver<'m> {
    mesh: &'m Mesh,
    solver: PreparedSolver,
}

impl<'m> UpdateSolver<'m> {
    pub fn new(mesh: &'m Mesh, settings: &SolverSettings) -> Result<Self> {
        let one = NodalField::constant(mesh, 1.0);
        let solver = assemble_system(mesh, &one, &one)?.prepare(settings)?;
        Ok(UpdateSolver { mesh, solver })
    }

    /// `δφ` with `(Δ - I) δφ = L` weakly, `∂δφ/∂ν = 0`.
    pub fn solve(&self, l: &[f64]) -> Result<NodalField> {
        let mut b = assemble_source_load(self.mesh, l)?;
        for v in b.iter_mut() {
            *v = -*v;
        }
        self.solver.solve(&b)
    }
}

pub fn update_solve(mesh: &Mesh, l: &[f64], settings: &SolverSettings) -> Result<NodalField> {
    UpdateSolver::new(mesh, settings)?.solve(l)
}

/// `φ + δφ / α`.
pub fn apply_update(phi: &[f64], dphi: &[f64], alpha: f64) -> Result<NodalField> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
    }
    check_len("dphi", phi.len(), dphi.len())?;
    Ok(NodalField::from_raw(phi.iter().zip(dphi).map(|(p, d)| p + d / alpha).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{l2_error, weighted_integral};
    use crate::forward::forward_solve;
    use crate::levelset::ContrastLevels;
    use crate::mesh::{build_uniform_mesh, Rect};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Mesh {
        build_uniform_mesh(n, n, Rect::UNIT).unwrap()
    }

    fn coefficients(m: &Mesh) -> (NodalField, NodalField) {
        (
            NodalField::from_fn(m, |x, y| 1.0 + x * y),
            NodalField::from_fn(m, |x, y| 2.0 + (x - y).sin()),
        )
    }

    #[test]
    fn adjoint_trivial_cases() {
        let m = unit(12);
        let (a, c) = coefficients(&m);
        let s = SolverSettings::direct();
        let w = adjoint_solve(&m, &a, &c, &vec![0.0; m.num_boundary_nodes()], &s).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        let g = m.boundary_from_fn(|x, y| x - y * y);
        let (u, _) = forward_solve(&m, &a, &c, &g, &s).unwrap();
        let w = adjoint_solve(&m, &a, &c, &g, &s).unwrap();
        assert_eq!(u, w);

        let one = NodalField::constant(&m, 1.0);
        let r = m.boundary_from_fn(|x, y| 1.0 + x + 0.5 * y);
        let w = adjoint_solve(&m, &a, &one, &r, &s).unwrap();
        let flux = crate::mesh::boundary_l2_inner(&m, &r, &vec![1.0; r.len()]).unwrap();
        assert_relative_eq!(weighted_integral(&m, &one, &w), flux, max_relative = 1e-10);
    }

    #[test]
    fn adjoint_superposition() {
        let m = unit(10);
        let (a, c) = coefficients(&m);
        let s = SolverSettings::default();
        let r = m.boundary_from_fn(|x, _| x);
        let g = m.boundary_from_fn(|_, y| y * y);
        let rg: Vec<f64> = r.iter().zip(&g).map(|(p, q)| p + q).collect();
        let w1 = adjoint_solve(&m, &a, &c, &r, &s).unwrap();
        let w2 = adjoint_solve(&m, &a, &c, &g, &s).unwrap();
        let w3 = adjoint_solve(&m, &a, &c, &rg, &s).unwrap();
        for i in 0..m.num_nodes() {
            assert!((w1[i] + w2[i] - w3[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_fields() {
        let m = unit(9);
        let zero = NodalField::zeros(&m);
        let u = NodalField::from_fn(&m, |x, y| (x + 2.0 * y).sin());
        let (da, dc) = shape_derivative_fields(&m, &u, &zero).unwrap();
        assert!(da.iter().chain(dc.iter()).all(|&v| v == 0.0));
        let (da, dc) = shape_derivative_fields(&m, &u, &u).unwrap();
        assert!(da.iter().all(|&v| v <= 0.0) && dc.iter().all(|&v| v <= 0.0));

        let one = NodalField::constant(&m, 1.0);
        let (_, dc) = shape_derivative_fields(&m, &one, &one).unwrap();
        assert!(dc.iter().all(|v| (v + 1.0).abs() < 1e-14));

        let x = NodalField::from_fn(&m, |x, _| x);
        let y = NodalField::from_fn(&m, |_, y| y);
        let (da, dc) = shape_derivative_fields(&m, &x, &y).unwrap();
        assert!(da.iter().all(|v| v.abs() < 1e-12));
        // midpoint sampling of -xy: O(h²) inside, one-sided O(h) on the boundary
        let h = m.hx();
        for (i, p) in m.nodes().iter().enumerate() {
            let tol = if m.boundary_position(i).is_some() { h } else { h * h };
            assert!((dc[i] + p[0] * p[1]).abs() < tol, "{} vs {}", dc[i], -p[0] * p[1]);
        }
        let w = NodalField::from_fn(&m, |x, y| x * x - y);
        assert_eq!(
            shape_derivative_fields(&m, &u, &w).unwrap(),
            shape_derivative_fields(&m, &w, &u).unwrap()
        );
    }

    #[test]
    fn l_outside_band_and_level_swap() {
        let m = unit(11);
        let ls = LevelSetPair::new(
            NodalField::from_fn(&m, |x, _| 1.0 + x),
            NodalField::from_fn(&m, |x, y| 0.1 - (x - 0.5).powi(2) - (y - 0.5).powi(2) - 0.05),
            ContrastLevels::default(),
            0.1,
        )
        .unwrap();
        let sum_da = NodalField::from_fn(&m, |x, y| x + y + 1.0);
        let sum_dc = NodalField::from_fn(&m, |x, y| x - y);
        let t = assemble_l(&m, &ls, &sum_da, &sum_dc, 1.0, 0.0, 0.0, 1e-8).unwrap();
        assert!(t.l_a.iter().all(|&v| v == 0.0));
        assert_eq!(t.l_c, t.data_part_c);
        assert!(t.l_c.iter().any(|&v| v != 0.0));

        let mut swapped = ls.clone();
        swapped.levels.c1 = ls.levels.c2;
        swapped.levels.c2 = ls.levels.c1;
        let t2 = assemble_l(&m, &swapped, &sum_da, &sum_dc, 1.0, 0.0, 0.0, 1e-8).unwrap();
        for i in 0..m.num_nodes() {
            assert_eq!(t2.data_part_c[i], -t.data_part_c[i]);
        }
        let t3 = assemble_l(&m, &ls, &sum_da, &sum_dc, 1.0, 0.0, 0.5, 1e-8).unwrap();
        assert_eq!(t3.data_part_c, t.data_part_c);
        assert_ne!(t3.l_c, t.l_c);
        assert!(assemble_l(&m, &ls, &sum_da, &sum_dc, 0.0, 0.0, 0.0, 1e-8).is_err());
    }

    #[test]
    fn update_constant_and_zero() {
        let m = unit(13);
        let s = SolverSettings::direct();
        let d = update_solve(&m, &NodalField::zeros(&m), &s).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        let d = update_solve(&m, &NodalField::constant(&m, 2.5), &s).unwrap();
        assert!(d.iter().all(|&v| (v + 2.5).abs() < 1e-10));
    }

    #[test]
    fn update_manufactured() {
        let errs: Vec<f64> = [17, 33]
            .iter()
            .map(|&n| {
                let m = unit(n);
                let l = NodalField::from_fn(&m, |x, _| (-PI * PI - 1.0) * (PI * x).cos());
                let d = update_solve(&m, &l, &SolverSettings::direct()).unwrap();
                l2_error(&m, &d, |x, _| (PI * x).cos())
            })
            .collect();
        assert!(errs[1] < 5e-3);
        let ratio = errs[0] / errs[1];
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn update_is_linear() {
        let m = unit(11);
        let s = SolverSettings::default();
        let l1 = NodalField::from_fn(&m, |x, y| x * y);
        let l2 = NodalField::from_fn(&m, |x, y| (3.0 * x).cos() - y);
        let sum = l1.zip_map(&l2, |p, q| p + q);
        let (d1, d2, d3) = (
            update_solve(&m, &l1, &s).unwrap(),
            update_solve(&m, &l2, &s).unwrap(),
            update_solve(&m, &sum, &s).unwrap(),
        );
        for i in 0..m.num_nodes() {
            assert!((d1[i] + d2[i] - d3[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn apply_update_steps() {
        let phi = vec![1.0, -2.0, 0.5];
        assert_eq!(apply_update(&phi, &[0.0; 3], 2.0).unwrap().to_vec(), phi);
        let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
        assert!(apply_update(&phi, &neg, 1.0).unwrap().iter().all(|&v| v == 0.0));
        let d = [0.3, 0.1, -0.2];
        let s1 = apply_update(&phi, &d, 1.0).unwrap();
        let s2 = apply_update(&phi, &d, 0.5).unwrap();
        for i in 0..3 {
            assert_relative_eq!(s2[i] - phi[i], 2.0 * (s1[i] - phi[i]), max_relative = 1e-12);
        }
        assert!(apply_update(&phi, &d, 0.0).is_err());
    }
}
