//! Built-in numerical checks: manufactured-solution convergence, adjoint
//! consistency against finite differences, reciprocity, and the continuity
//! probe.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fem::{
    assemble_source_load, assemble_system, h1_seminorm_error, l2_error, weighted_integral,
    NodalField, SolverSettings,
};
use crate::forward::{
    holder_exponent, holder_probe, lemma_interpolation_check, misfit, residuals, residuals_with,
    ForwardOperator, ParameterBox,
};
use crate::gradient::{adjoint_products, assemble_l};
use crate::levelset::{init_paraboloid, project_smooth, Coefficient, ContrastLevels, LevelSetPair};
use crate::mesh::{boundary_l2_inner, boundary_l2_norm, build_uniform_mesh, Rect};
use crate::phantoms::{make_excitations, make_phantom, synthesize_data, PhantomKind};

/// One line of a check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub sizes: Vec<usize>,
    pub l2_errors: Vec<f64>,
    pub h1_errors: Vec<f64>,
    /// Observed orders between consecutive sizes.
    pub l2_orders: Vec<f64>,
    pub h1_orders: Vec<f64>,
}

/// `u = cos(πx) cos(πy)` with `a = c = 1`, zero flux and source
/// `(2π² + 1) u`, solved on `n × n` unit-square meshes.
pub fn manufactured_solution(sizes: &[usize], settings: &SolverSettings) -> Result<ConvergenceReport> {
    let exact = |x: f64, y: f64| (PI * x).cos() * (PI * y).cos();
    let grad = |x: f64, y: f64| {
        [
            -PI * (PI * x).sin() * (PI * y).cos(),
            -PI * (PI * x).cos() * (PI * y).sin(),
        ]
    };
    let mut l2_errors = Vec::new();
    let mut h1_errors = Vec::new();
    let mut hs = Vec::new();
    for &n in sizes {
        let mesh = build_uniform_mesh(n, n, Rect::UNIT)?;
        let one = NodalField::constant(&mesh, 1.0);
        let f = NodalField::from_fn(&mesh, |x, y| (2.0 * PI * PI + 1.0) * exact(x, y));
        let b = assemble_source_load(&mesh, &f)?;
        let u = assemble_system(&mesh, &one, &one)?.prepare(settings)?.solve(&b)?;
        let e0 = l2_error(&mesh, &u, exact);
        let e1 = h1_seminorm_error(&mesh, &u, grad);
        l2_errors.push(e0);
        h1_errors.push((e0 * e0 + e1 * e1).sqrt());
        hs.push(mesh.hx());
    }
    let orders = |e: &[f64]| -> Vec<f64> {
        (1..e.len())
            .map(|i| (e[i - 1] / e[i]).ln() / (hs[i - 1] / hs[i]).ln())
            .collect()
    };
    Ok(ConvergenceReport {
        sizes: sizes.to_vec(),
        l2_orders: orders(&l2_errors),
        h1_orders: orders(&h1_errors),
        l2_errors,
        h1_errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalCheck {
    pub which: Coefficient,
    /// Richardson-extrapolated central difference of half the misfit.
    pub finite_difference: f64,
    /// Lumped inner product of the data part of `L` with the direction.
    pub predicted: f64,
    pub rel_err: f64,
}

/// Compares `d/dt ½ misfit(P_ε(φ + t v))` with `(L_data, v)` for random
/// directions `v` supported where `H'_ε(φ)` is nonzero.
///
/// The level sets are paraboloids on an `n × n` mesh and the data come from
/// the single-pair phantom on the same mesh.
pub fn adjoint_check(n: usize, directions: usize, seed: u64, settings: &SolverSettings) -> Result<Vec<DirectionalCheck>> {
    let mesh = build_uniform_mesh(n, n, Rect::UNIT)?;
    let eps = 0.1;
    let phantom = make_phantom(PhantomKind::SinglePair, &mesh);
    let data = synthesize_data(&phantom, &mesh, 1, 0.0, seed, settings)?;
    let ls = LevelSetPair::new(
        init_paraboloid(&mesh, [0.4, 0.6], 0.2)?,
        init_paraboloid(&mesh, [0.6, 0.4], 0.2)?,
        ContrastLevels::default(),
        eps,
    )?;

    let objective = |pair: &LevelSetPair| -> Result<f64> {
        let (a, c) = project_smooth(pair);
        let res = residuals(&mesh, &a, &c, &data, settings)?;
        Ok(0.5 * misfit(&mesh, &res.r)?)
    };

    let (a, c) = project_smooth(&ls);
    let op = ForwardOperator::new(&mesh, &a, &c, settings)?;
    let res = residuals_with(&op, &data)?;
    let (sum_da, sum_dc) = adjoint_products(&op, &res)?;
    let terms = assemble_l(&mesh, &ls, &sum_da, &sum_dc, 1.0, 0.0, 0.0, 1e-8)?;

    // Keep every perturbed node strictly inside the linear part of H_ε so the
    // objective is smooth along the line.
    let margin = 0.1 * eps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for which in [Coefficient::C, Coefficient::A] {
        let phi = ls.phi(which);
        let band: Vec<usize> = (0..mesh.num_nodes())
            .filter(|&i| phi[i] > -eps + margin && phi[i] < -margin)
            .collect();
        let data_part = match which {
            Coefficient::A => &terms.data_part_a,
            Coefficient::C => &terms.data_part_c,
        };
        for _ in 0..directions {
            let mut v = vec![0.0; mesh.num_nodes()];
            for &i in &band {
                v[i] = rng.gen_range(-1.0..1.0);
            }
            let predicted: f64 = (0..mesh.num_nodes())
                .map(|i| mesh.lumped_weights()[i] * data_part[i] * v[i])
                .sum();
            let central = |t: f64| -> Result<f64> {
                let shifted = |sign: f64| {
                    let mut p = ls.clone();
                    for (x, d) in p.phi_mut(which).iter_mut().zip(&v) {
                        *x += sign * t * d;
                    }
                    p
                };
                Ok((objective(&shifted(1.0))? - objective(&shifted(-1.0))?) / (2.0 * t))
            };
            let t = 0.5 * margin;
            let (d1, d2, d4) = (central(t)?, central(t / 2.0)?, central(t / 4.0)?);
            let r1 = (4.0 * d2 - d1) / 3.0;
            let r2 = (4.0 * d4 - d2) / 3.0;
            let fd = (16.0 * r2 - r1) / 15.0;
            out.push(DirectionalCheck {
                which,
                finite_difference: fd,
                predicted,
                rel_err: (fd - predicted).abs() / predicted.abs(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReciprocityReport {
    /// Largest `|<g_m, h_n> - <g_n, h_m>|` over pairs and experiments.
    pub max_gap: f64,
    /// `max_m ‖g_m‖ · max_n ‖h_n‖`.
    pub scale: f64,
    /// Largest `|∫ c u_m - ∫_Γ g_m|`.
    pub max_compat_gap: f64,
}

/// Reciprocity of the Neumann-to-Dirichlet map and the flux balance for
/// `pairs` random coefficient pairs with nodal values drawn from `[1, 10]`.
pub fn reciprocity_check(n: usize, pairs: usize, seed: u64, settings: &SolverSettings) -> Result<ReciprocityReport> {
    let mesh = build_uniform_mesh(n, n, Rect::UNIT)?;
    let g = make_excitations(&mesh);
    let ones = vec![1.0; mesh.num_boundary_nodes()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ReciprocityReport {
        max_gap: 0.0,
        scale: 0.0,
        max_compat_gap: 0.0,
    };
    let g_norm = g
        .iter()
        .map(|gm| boundary_l2_norm(&mesh, gm))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    for _ in 0..pairs {
        let a = NodalField::from_raw((0..mesh.num_nodes()).map(|_| rng.gen_range(1.0..10.0)).collect());
        let c = NodalField::from_raw((0..mesh.num_nodes()).map(|_| rng.gen_range(1.0..10.0)).collect());
        let op = ForwardOperator::new(&mesh, &a, &c, settings)?;
        let mut h = Vec::new();
        for gm in &g {
            let u = op.solve_flux(gm)?;
            let gap = (weighted_integral(&mesh, &c, &u) - boundary_l2_inner(&mesh, gm, &ones)?).abs();
            report.max_compat_gap = report.max_compat_gap.max(gap);
            h.push(crate::fem::trace(&mesh, &u));
        }
        for hn in &h {
            report.scale = report.scale.max(g_norm * boundary_l2_norm(&mesh, hn)?);
        }
        for m in 0..g.len() {
            for k in m + 1..g.len() {
                let gap = (boundary_l2_inner(&mesh, &g[m], &h[k])? - boundary_l2_inner(&mesh, &g[k], &h[m])?).abs();
                report.max_gap = report.max_gap.max(gap);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ContinuityReport {
    pub radii: Vec<f64>,
    pub exponent_s: f64,
    /// `‖u - u'‖_{H¹} / (‖a - a'‖_{L¹} + ‖c - c'‖_{L¹})^{1/s}` per member.
    pub ratios: Vec<f64>,
    /// `(‖f‖_{L^s}, M^{(s-1)/s} ‖f‖_{L¹}^{1/s})` for the indicator
    /// perturbations `f = a' - a`.
    pub lemma: Vec<(f64, f64)>,
}

impl ContinuityReport {
    pub fn max_over_median(&self) -> f64 {
        let mut r = self.ratios.clone();
        r.sort_by(f64::total_cmp);
        let k = r.len();
        let median = if k % 2 == 1 {
            r[k / 2]
        } else {
            0.5 * (r[k / 2 - 1] + r[k / 2])
        };
        r[k - 1] / median
    }

    pub fn max_lemma_gap(&self) -> f64 {
        self.lemma
            .iter()
            .map(|(l, r)| (l - r).abs() / r.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// Shrinking disk perturbations of both coefficients around the constant
/// pair `a = c = 1`: inside a disk of radius `r` centred at `(0.5, 0.3)`
/// both are raised to 10. The state is driven by the bottom excitation.
pub fn continuity_probe(n: usize, radii: &[f64], p: f64, settings: &SolverSettings) -> Result<ContinuityReport> {
    let mesh = build_uniform_mesh(n, n, Rect::UNIT)?;
    let s = holder_exponent(p)?;
    let g = &make_excitations(&mesh)[0];
    let bounds = ParameterBox::default();
    let base = NodalField::constant(&mesh, 1.0);
    let jump = 9.0;
    let mut ratios = Vec::new();
    let mut lemma = Vec::new();
    for &r in radii {
        let pert = NodalField::from_fn(&mesh, |x, y| {
            if (x - 0.5).hypot(y - 0.3) <= r {
                1.0 + jump
            } else {
                1.0
            }
        });
        let (lhs, rhs) = holder_probe(&mesh, (&base, &base), (&pert, &pert), g, s, &bounds, settings)?;
        ratios.push(lhs / rhs);
        let diff: Vec<f64> = pert.iter().map(|v| v - 1.0).collect();
        lemma.push(lemma_interpolation_check(&mesh, &diff, jump, s)?);
    }
    Ok(ContinuityReport {
        radii: radii.to_vec(),
        exponent_s: s,
        ratios,
        lemma,
    })
}

/// Runs the default suite: convergence on 17/33/65 meshes, five adjoint
/// directions per coefficient on a 25-node mesh, and reciprocity for three
/// random pairs.
pub fn run_suite(settings: &SolverSettings) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let mms = manufactured_solution(&[17, 33, 65], settings)?;
    let l2_ok = mms.l2_orders.iter().all(|o| (o - 2.0).abs() <= 0.2);
    let h1_ok = mms.h1_orders.iter().all(|o| (o - 1.0).abs() <= 0.2);
    out.push(CheckOutcome {
        name: "manufactured solution".into(),
        passed: l2_ok && h1_ok,
        detail: format!("L2 orders {:.3?}, H1 orders {:.3?}", mms.l2_orders, mms.h1_orders),
    });

    let adj = adjoint_check(25, 5, 7, settings)?;
    let worst = adj.iter().map(|d| d.rel_err).fold(0.0, f64::max);
    out.push(CheckOutcome {
        name: "adjoint gradient".into(),
        passed: worst <= 1e-3,
        detail: format!("{} directions, worst relative error {worst:.2e}", adj.len()),
    });

    let rec = reciprocity_check(25, 3, 11, settings)?;
    out.push(CheckOutcome {
        name: "reciprocity".into(),
        passed: rec.max_gap <= 1e-8 * rec.scale && rec.max_compat_gap <= 1e-8,
        detail: format!(
            "gap {:.2e} (scale {:.2e}), flux balance gap {:.2e}",
            rec.max_gap, rec.scale, rec.max_compat_gap
        ),
    });
    Ok(out)
}
