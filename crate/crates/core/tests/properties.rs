//! Cross-module properties on random inputs.

use dot_levelset::fem::{trace, weighted_integral, NodalField};
use dot_levelset::forward::{add_noise, ForwardOperator};
use dot_levelset::levelset::{heaviside, heaviside_eps, project_sharp, project_smooth, ContrastLevels, LevelSetPair};
use dot_levelset::mesh::{boundary_l2_inner, boundary_l2_norm};
use dot_levelset::phantoms::{clean_measurements, make_excitations, make_phantom, synthesize_data_relative, PhantomKind};
use dot_levelset::{build_uniform_mesh, Mesh, Rect, SolverSettings};
use proptest::prelude::*;

fn mesh(nx: usize, ny: usize) -> Mesh {
    build_uniform_mesh(nx, ny, Rect::new(0.0, 0.0, 1.5, 1.0)).unwrap()
}

fn field(m: &Mesh, vals: &[f64]) -> NodalField {
    NodalField::from_raw((0..m.num_nodes()).map(|i| vals[i % vals.len()]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn smoothed_heaviside_is_a_monotone_ramp(t in -1.0f64..1.0, dt in 0.0f64..0.5, eps in 0.01f64..0.5) {
        let h = heaviside_eps(t, eps).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!(heaviside_eps(t + dt, eps).unwrap() >= h);
        if t >= 0.0 || t <= -eps {
            prop_assert_eq!(h, heaviside(t));
        }
    }

    #[test]
    fn sharp_projection_ignores_positive_scaling(
        vals in prop::collection::vec(-1.0f64..1.0, 30),
        lambda in 0.01f64..100.0,
    ) {
        let m = mesh(6, 5);
        let phi_a = field(&m, &vals);
        let phi_c = phi_a.map(|v| -v);
        let ls = LevelSetPair::new(phi_a.clone(), phi_c.clone(), ContrastLevels::default(), 0.1).unwrap();
        let scaled = LevelSetPair::new(phi_a.map(|v| lambda * v), phi_c.map(|v| lambda * v), ls.levels, 0.1).unwrap();
        prop_assert_eq!(project_sharp(&ls), project_sharp(&scaled));
    }

    #[test]
    fn smooth_projection_stays_between_levels(
        vals in prop::collection::vec(-0.3f64..0.3, 30),
        a1 in 0.5f64..20.0, a2 in 0.5f64..20.0,
    ) {
        prop_assume!((a1 - a2).abs() > 1e-3);
        let m = mesh(6, 5);
        let levels = ContrastLevels { a1, a2, c1: 10.0, c2: 1.0 };
        let phi = field(&m, &vals);
        let ls = LevelSetPair::new(phi.clone(), phi, levels, 0.1).unwrap();
        let (a, c) = project_smooth(&ls);
        let (lo, hi) = (a1.min(a2), a1.max(a2));
        prop_assert!(a.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        prop_assert!(c.iter().all(|&v| (1.0 - 1e-12..=10.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn mesh_boundary_bookkeeping(nx in 2usize..12, ny in 2usize..12) {
        let m = mesh(nx, ny);
        prop_assert_eq!(m.num_boundary_nodes(), 2 * (nx + ny) - 4);
        let total: f64 = m.lumped_weights().iter().sum();
        prop_assert!((total - 1.5).abs() < 1e-12);
        prop_assert!(m.arc_positions().windows(2).all(|w| w[1] > w[0]));
        prop_assert!(m.arc_positions()[0] == 0.0);
        let ones = vec![1.0; m.num_boundary_nodes()];
        prop_assert!((boundary_l2_inner(&m, &ones, &ones).unwrap() - 5.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn neumann_to_dirichlet_map_is_symmetric(
        a_vals in prop::collection::vec(1.0f64..10.0, 7),
        c_vals in prop::collection::vec(1.0f64..10.0, 5),
    ) {
        let m = mesh(11, 9);
        let a = field(&m, &a_vals);
        let c = field(&m, &c_vals);
        let op = ForwardOperator::new(&m, &a, &c, &SolverSettings::direct()).unwrap();
        let g = make_excitations(&m);
        let ones = vec![1.0; m.num_boundary_nodes()];
        let h: Vec<Vec<f64>> = g
            .iter()
            .map(|gm| {
                let u = op.solve_flux(gm).unwrap();
                // total absorption balances the inflow
                let balance = weighted_integral(&m, &c, &u) - boundary_l2_inner(&m, gm, &ones).unwrap();
                assert!(balance.abs() < 1e-10, "{balance}");
                trace(&m, &u)
            })
            .collect();
        for i in 0..g.len() {
            for j in 0..i {
                let lhs = boundary_l2_inner(&m, &g[i], &h[j]).unwrap();
                let rhs = boundary_l2_inner(&m, &g[j], &h[i]).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn noise_has_the_requested_norm(delta in 0.0f64..0.5, seed in any::<u64>()) {
        let m = mesh(9, 7);
        let h: Vec<f64> = m.arc_positions().iter().map(|s| s.sin()).collect();
        let noisy = add_noise(&m, &h, delta, seed).unwrap();
        let diff: Vec<f64> = noisy.iter().zip(&h).map(|(p, q)| p - q).collect();
        prop_assert!((boundary_l2_norm(&m, &diff).unwrap() - delta).abs() <= 1e-12);
        prop_assert_eq!(add_noise(&m, &h, delta, seed).unwrap(), noisy);
    }

    #[test]
    fn relative_noise_scales_with_each_trace(rel in 0.001f64..0.1, seed in any::<u64>()) {
        let m = build_uniform_mesh(11, 11, Rect::UNIT).unwrap();
        let p = make_phantom(PhantomKind::Near, &m);
        let s = SolverSettings::direct();
        let (_, clean) = clean_measurements(&p, &m, 1, &s).unwrap();
        let set = synthesize_data_relative(&p, &m, 1, rel, seed, &s).unwrap();
        let mut largest: f64 = 0.0;
        for (h, hd) in clean.iter().zip(&set.measurements) {
            let diff: Vec<f64> = hd.iter().zip(h).map(|(x, y)| x - y).collect();
            let want = rel * boundary_l2_norm(&m, h).unwrap();
            largest = largest.max(want);
            prop_assert!((boundary_l2_norm(&m, &diff).unwrap() - want).abs() <= 1e-12);
        }
        prop_assert_eq!(set.delta, largest);
    }
}
