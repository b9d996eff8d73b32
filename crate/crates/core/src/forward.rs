//! Parameter-to-measurement maps, data misfit and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::{
    assemble_neumann_load, assemble_system, h1_norm, l1_norm, lp_norm, trace, NodalField,
    PreparedSolver, SolverSettings,
};
use crate::mesh::{boundary_l2_inner, boundary_l2_norm, Mesh};

/// Applied fluxes `g_m` with their measured traces `h_m^δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSet {
    pub excitations: Vec<Vec<f64>>,
    pub measurements: Vec<Vec<f64>>,
    /// Noise level in `L²(Γ)` units.
    pub delta: f64,
}

impl ExperimentSet {
    pub fn new(mesh: &Mesh, excitations: Vec<Vec<f64>>, measurements: Vec<Vec<f64>>, delta: f64) -> Result<Self> {
        let set = ExperimentSet {
            excitations,
            measurements,
            delta,
        };
        set.validate(mesh)?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.excitations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excitations.is_empty()
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.excitations.is_empty() {
            return Err(Error::invalid("experiments", "need at least one excitation"));
        }
        check_len("measurement count", self.excitations.len(), self.measurements.len())?;
        let nb = mesh.num_boundary_nodes();
        for (g, h) in self.excitations.iter().zip(&self.measurements) {
            check_len("excitation", nb, g.len())?;
            check_len("measurement", nb, h.len())?;
        }
        if !(self.delta >= 0.0) {
            return Err(Error::invalid("delta", format!("must be non-negative, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Admissible box `a_lo <= a <= a_hi`, `c_lo <= c <= c_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBox {
    pub a_lo: f64,
    pub a_hi: f64,
    pub c_lo: f64,
    pub c_hi: f64,
}

impl Default for ParameterBox {
    fn default() -> Self {
        ParameterBox {
            a_lo: 0.5,
            a_hi: 20.0,
            c_lo: 0.5,
            c_hi: 20.0,
        }
    }
}

impl ParameterBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_lo > 0.0 && self.a_lo <= self.a_hi && self.a_hi.is_finite()) {
            return Err(Error::invalid("box", format!("need 0 < a_lo <= a_hi, got [{}, {}]", self.a_lo, self.a_hi)));
        }
        if !(self.c_lo > 0.0 && self.c_lo <= self.c_hi && self.c_hi.is_finite()) {
            return Err(Error::invalid("box", format!("need 0 < c_lo <= c_hi, got [{}, {}]", self.c_lo, self.c_hi)));
        }
        Ok(())
    }

    pub fn contains_a(&self, v: f64) -> bool {
        v >= self.a_lo && v <= self.a_hi
    }

    pub fn contains_c(&self, v: f64) -> bool {
        v >= self.c_lo && v <= self.c_hi
    }

    pub fn check(&self, a: &[f64], c: &[f64]) -> Result<()> {
        if let Some(node) = a.iter().position(|&v| !self.contains_a(v)) {
            return Err(Error::Inadmissible { name: "a", node, value: a[node] });
        }
        if let Some(node) = c.iter().position(|&v| !self.contains_c(v)) {
            return Err(Error::Inadmissible { name: "c", node, value: c[node] });
        }
        Ok(())
    }
}

/// The system `K(a) + M(c)` prepared once for repeated Neumann solves.
/// Forward and adjoint problems share it.
pub struct ForwardOperator<'m> {
    mesh: &'m Mesh,
    solver: PreparedSolver,
}

impl<'m> ForwardOperator<'m> {
    pub fn new(mesh: &'m Mesh, a: &[f64], c: &[f64], settings: &SolverSettings) -> Result<Self> {
        let system = assemble_system(mesh, a, c)?;
        let solver = system.prepare(settings)?;
        Ok(ForwardOperator { mesh, solver })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    /// Solves with Neumann flux `g` (a boundary vector).
    pub fn solve_flux(&self, g: &[f64]) -> Result<NodalField> {
        let b = assemble_neumann_load(self.mesh, g)?;
        self.solver.solve(&b)
    }
}

/// `(u, u|_Γ)` for flux `g`.
pub fn forward_solve(
    mesh: &Mesh,
    a: &[f64],
    c: &[f64],
    g: &[f64],
    settings: &SolverSettings,
) -> Result<(NodalField, Vec<f64>)> {
    let u = ForwardOperator::new(mesh, a, c, settings)?.solve_flux(g)?;
    let h = trace(mesh, &u);
    Ok((u, h))
}

/// Residuals `r_m = u_m|_Γ - h_m^δ` and the states `u_m`.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub r: Vec<Vec<f64>>,
    pub u: Vec<NodalField>,
}

pub fn residuals_with(op: &ForwardOperator<'_>, experiments: &ExperimentSet) -> Result<Residuals> {
    let mesh = op.mesh();
    experiments.validate(mesh)?;
    let mut r = Vec::with_capacity(experiments.len());
    let mut u = Vec::with_capacity(experiments.len());
    for (g, h) in experiments.excitations.iter().zip(&experiments.measurements) {
        let um = op.solve_flux(g)?;
        let rm = trace(mesh, &um).iter().zip(h).map(|(x, y)| x - y).collect();
        r.push(rm);
        u.push(um);
    }
    Ok(Residuals { r, u })
}

pub fn residuals(
    mesh: &Mesh,
    a: &[f64],
    c: &[f64],
    experiments: &ExperimentSet,
    settings: &SolverSettings,
) -> Result<Residuals> {
    let op = ForwardOperator::new(mesh, a, c, settings)?;
    residuals_with(&op, experiments)
}

/// `Σ_m ‖r_m‖²_{L²(Γ)}`.
pub fn misfit(mesh: &Mesh, r: &[Vec<f64>]) -> Result<f64> {
    r.iter().map(|rm| boundary_l2_inner(mesh, rm, rm)).sum()
}

/// Adds a seeded perturbation of `L²(Γ)` norm exactly `delta`.
///
/// Entries are drawn independently from `U(-1, 1)` and rescaled.
pub fn add_noise(mesh: &Mesh, h: &[f64], delta: f64, seed: u64) -> Result<Vec<f64>> {
    check_len("boundary data", mesh.num_boundary_nodes(), h.len())?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", format!("must be non-negative, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(h.to_vec());
    }
    if h.is_empty() {
        return Err(Error::invalid("delta", "cannot add noise on an empty boundary"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e: Vec<f64> = (0..h.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = boundary_l2_norm(mesh, &e)?;
    if norm == 0.0 {
        return Err(Error::invalid("delta", "degenerate noise draw"));
    }
    let scale = delta / norm;
    for v in &mut e {
        *v *= scale;
    }
    Ok(h.iter().zip(&e).map(|(x, y)| x + y).collect())
}

/// Exponent `s = 2p / (p - 2)` paired with an integrability exponent `p > 2`.
pub fn holder_exponent(p: f64) -> Result<f64> {
    if !(p > 2.0) {
        return Err(Error::invalid("p", format!("must exceed 2, got {p}")));
    }
    Ok(2.0 * p / (p - 2.0))
}

/// Both sides of the continuity estimate for one perturbation:
/// `lhs = ‖u - u'‖_{H¹}`, `rhs_core = (‖a - a'‖_{L¹} + ‖c - c'‖_{L¹})^{1/s}`.
#[allow(clippy::too_many_arguments)]
pub fn holder_probe(
    mesh: &Mesh,
    base: (&[f64], &[f64]),
    perturbed: (&[f64], &[f64]),
    g: &[f64],
    exponent_s: f64,
    bounds: &ParameterBox,
    settings: &SolverSettings,
) -> Result<(f64, f64)> {
    if !(exponent_s > 2.0) {
        return Err(Error::invalid("exponent_s", format!("must exceed 2, got {exponent_s}")));
    }
    bounds.check(base.0, base.1)?;
    bounds.check(perturbed.0, perturbed.1)?;
    let (u, _) = forward_solve(mesh, base.0, base.1, g, settings)?;
    let (u2, _) = forward_solve(mesh, perturbed.0, perturbed.1, g, settings)?;
    let du: Vec<f64> = u.iter().zip(u2.iter()).map(|(x, y)| x - y).collect();
    let da: Vec<f64> = base.0.iter().zip(perturbed.0).map(|(x, y)| x - y).collect();
    let dc: Vec<f64> = base.1.iter().zip(perturbed.1).map(|(x, y)| x - y).collect();
    let lhs = h1_norm(mesh, &du);
    let rhs_core = (l1_norm(mesh, &da) + l1_norm(mesh, &dc)).powf(1.0 / exponent_s);
    Ok((lhs, rhs_core))
}

/// `‖f‖_{L^s}` and `M^{(s-1)/s} ‖f‖_{L¹}^{1/s}` for `|f| <= M`.
pub fn lemma_interpolation_check(mesh: &Mesh, field: &[f64], bound_m: f64, s: f64) -> Result<(f64, f64)> {
    check_len("field", mesh.num_nodes(), field.len())?;
    if !(s >= 1.0) {
        return Err(Error::invalid("s", format!("must be at least 1, got {s}")));
    }
    if let Some(node) = field.iter().position(|v| !(v.abs() <= bound_m)) {
        return Err(Error::Inadmissible {
            name: "field",
            node,
            value: field[node],
        });
    }
    let lhs = lp_norm(mesh, field, s);
    let rhs = bound_m.powf((s - 1.0) / s) * l1_norm(mesh, field).powf(1.0 / s);
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{weighted_integral, SolverSettings};
    use crate::mesh::{build_uniform_mesh, Rect};
    use approx::assert_relative_eq;

    fn unit(n: usize) -> Mesh {
        build_uniform_mesh(n, n, Rect::UNIT).unwrap()
    }

    #[test]
    fn zero_flux_gives_zero_state() {
        let m = unit(10);
        let one = NodalField::constant(&m, 1.0);
        let (u, h) = forward_solve(&m, &one, &one, &vec![0.0; m.num_boundary_nodes()], &SolverSettings::default()).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compatibility_with_unit_flux() {
        let m = unit(20);
        let one = NodalField::constant(&m, 1.0);
        let settings = SolverSettings::default();
        let (u, _) = forward_solve(&m, &one, &one, &vec![1.0; m.num_boundary_nodes()], &settings).unwrap();
        assert_relative_eq!(weighted_integral(&m, &one, &u), 4.0, max_relative = 1e-8);
    }

    #[test]
    fn constant_offset_residual() {
        let m = unit(15);
        let one = NodalField::constant(&m, 1.0);
        let settings = SolverSettings::direct();
        let g = m.boundary_from_fn(|x, _| x);
        let (_, h) = forward_solve(&m, &one, &one, &g, &settings).unwrap();
        let shifted: Vec<f64> = h.iter().map(|v| v + 1.0).collect();
        let exp = ExperimentSet::new(&m, vec![g.clone(), g], vec![shifted.clone(), shifted], 0.0).unwrap();
        let res = residuals(&m, &one, &one, &exp, &settings).unwrap();
        for r in &res.r {
            assert_relative_eq!(boundary_l2_inner(&m, r, r).unwrap(), 4.0, max_relative = 1e-10);
        }
        assert_relative_eq!(misfit(&m, &res.r).unwrap(), 8.0, max_relative = 1e-10);
    }

    #[test]
    fn misfit_scaling() {
        let m = unit(8);
        let nb = m.num_boundary_nodes();
        assert_eq!(misfit(&m, &[vec![0.0; nb]]).unwrap(), 0.0);
        assert_relative_eq!(misfit(&m, &[vec![1.0; nb]]).unwrap(), 4.0, max_relative = 1e-12);
        let r = vec![m.boundary_from_fn(|x, y| x - 2.0 * y), m.boundary_from_fn(|x, y| x * y)];
        let r2: Vec<Vec<f64>> = r.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
        assert_relative_eq!(misfit(&m, &r2).unwrap(), 4.0 * misfit(&m, &r).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn noise_has_exact_norm_and_is_seeded() {
        let m = unit(30);
        let h = m.boundary_from_fn(|x, y| (x + y).sin());
        assert_eq!(add_noise(&m, &h, 0.0, 7).unwrap(), h);
        let n1 = add_noise(&m, &h, 0.01, 7).unwrap();
        let n2 = add_noise(&m, &h, 0.01, 7).unwrap();
        assert_eq!(n1, n2);
        let e: Vec<f64> = n1.iter().zip(&h).map(|(a, b)| a - b).collect();
        assert!((boundary_l2_norm(&m, &e).unwrap() - 0.01).abs() < 1e-12);
        let n3 = add_noise(&m, &h, 0.01, 8).unwrap();
        assert_ne!(n1, n3);
        assert!(add_noise(&m, &h, -1.0, 7).is_err());
    }

    #[test]
    fn holder_probe_trivial_cases() {
        let m = unit(12);
        let one = NodalField::constant(&m, 1.0);
        let g = m.boundary_from_fn(|x, _| x);
        let s = holder_exponent(2.5).unwrap();
        assert_relative_eq!(s, 10.0);
        let (lhs, rhs) = holder_probe(&m, (&one, &one), (&one, &one), &g, s, &ParameterBox::default(), &SolverSettings::direct()).unwrap();
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
        let bad = NodalField::constant(&m, 100.0);
        assert!(holder_probe(&m, (&one, &one), (&bad, &one), &g, s, &ParameterBox::default(), &SolverSettings::direct()).is_err());
        assert!(holder_probe(&m, (&one, &one), (&one, &one), &g, 2.0, &ParameterBox::default(), &SolverSettings::direct()).is_err());
    }

    #[test]
    fn lemma_equality_cases() {
        let m = unit(21);
        let mm = 3.0;
        let (l, r) = lemma_interpolation_check(&m, &NodalField::constant(&m, mm), mm, 4.0).unwrap();
        assert_relative_eq!(l, mm, max_relative = 1e-12);
        assert_relative_eq!(r, mm, max_relative = 1e-12);
        let (l, r) = lemma_interpolation_check(&m, &NodalField::zeros(&m), mm, 3.0).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
        let disk = NodalField::from_fn(&m, |x, y| if (x - 0.5).powi(2) + (y - 0.5).powi(2) < 0.09 { mm } else { 0.0 });
        let (l, r) = lemma_interpolation_check(&m, &disk, mm, 3.0).unwrap();
        assert_relative_eq!(l, r, max_relative = 1e-12);
        assert!(lemma_interpolation_check(&m, &disk, 1.0, 3.0).is_err());
    }
}
