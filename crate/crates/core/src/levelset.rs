//! Level-set representation of two-valued coefficient pairs.
//!
//! The region `{φ >= 0}` carries the first contrast value. The smoothed
//! Heaviside ramps linearly from 0 at `t = -ε` to 1 at `t = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::NodalField;
use crate::forward::ParameterBox;
use crate::mesh::Mesh;

/// The two values each coefficient may take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastLevels {
    pub a1: f64,
    pub a2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for ContrastLevels {
    fn default() -> Self {
        ContrastLevels {
            a1: 10.0,
            a2: 1.0,
            c1: 10.0,
            c2: 1.0,
        }
    }
}

impl ContrastLevels {
    pub fn validate(&self, bounds: &ParameterBox) -> Result<()> {
        for (name, v) in [("a1", self.a1), ("a2", self.a2), ("c1", self.c1), ("c2", self.c2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("levels", format!("{name} must be positive, got {v}")));
            }
        }
        if self.a1 == self.a2 || self.c1 == self.c2 {
            return Err(Error::invalid("levels", "the two values of each coefficient must differ"));
        }
        if !(bounds.contains_a(self.a1) && bounds.contains_a(self.a2)) {
            return Err(Error::invalid("levels", "a-levels outside the parameter box"));
        }
        if !(bounds.contains_c(self.c1) && bounds.contains_c(self.c2)) {
            return Err(Error::invalid("levels", "c-levels outside the parameter box"));
        }
        Ok(())
    }
}

/// Which coefficient a level set describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coefficient {
    A,
    C,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetPair {
    pub phi_a: NodalField,
    pub phi_c: NodalField,
    pub levels: ContrastLevels,
    pub eps: f64,
}

impl LevelSetPair {
    pub fn new(phi_a: NodalField, phi_c: NodalField, levels: ContrastLevels, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
        }
        check_len("phi_c", phi_a.len(), phi_c.len())?;
        if phi_a.iter().chain(phi_c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("level set", "values must be finite"));
        }
        Ok(LevelSetPair {
            phi_a,
            phi_c,
            levels,
            eps,
        })
    }

    pub fn phi(&self, which: Coefficient) -> &NodalField {
        match which {
            Coefficient::A => &self.phi_a,
            Coefficient::C => &self.phi_c,
        }
    }

    pub fn phi_mut(&mut self, which: Coefficient) -> &mut NodalField {
        match which {
            Coefficient::A => &mut self.phi_a,
            Coefficient::C => &mut self.phi_c,
        }
    }

    /// `(value on {φ >= 0}, value elsewhere)` for one coefficient.
    pub fn level_pair(&self, which: Coefficient) -> (f64, f64) {
        match which {
            Coefficient::A => (self.levels.a1, self.levels.a2),
            Coefficient::C => (self.levels.c1, self.levels.c2),
        }
    }
}

/// Piecewise-linear smoothed Heaviside of width `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothHeaviside {
    eps: f64,
}

impl SmoothHeaviside {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
        }
        Ok(SmoothHeaviside { eps })
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        if t > 0.0 {
            1.0
        } else if t < -self.eps {
            0.0
        } else {
            1.0 + t / self.eps
        }
    }

    /// `1/ε` on the open interval `(-ε, 0)`, zero elsewhere.
    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        if t > -self.eps && t < 0.0 {
            1.0 / self.eps
        } else {
            0.0
        }
    }
}

pub fn heaviside_eps(t: f64, eps: f64) -> Result<f64> {
    Ok(SmoothHeaviside::new(eps)?.value(t))
}

pub fn heaviside_eps_prime(t: f64, eps: f64) -> Result<f64> {
    Ok(SmoothHeaviside::new(eps)?.derivative(t))
}

/// Sharp Heaviside with `H(0) = 1`.
#[inline]
pub fn heaviside(t: f64) -> f64 {
    if t >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn blend(phi: &[f64], v1: f64, v2: f64, h: impl Fn(f64) -> f64) -> NodalField {
    NodalField::from_raw(
        phi.iter()
            .map(|&t| {
                let w = h(t);
                v1 * w + v2 * (1.0 - w)
            })
            .collect(),
    )
}

/// Sharp projector: two-valued `(a, c)`.
pub fn project_sharp(ls: &LevelSetPair) -> (NodalField, NodalField) {
    let l = ls.levels;
    (
        blend(&ls.phi_a, l.a1, l.a2, heaviside),
        blend(&ls.phi_c, l.c1, l.c2, heaviside),
    )
}

/// One coefficient through the smoothed projector.
pub fn project_smooth_one(ls: &LevelSetPair, which: Coefficient) -> NodalField {
    let h = SmoothHeaviside { eps: ls.eps };
    let (v1, v2) = ls.level_pair(which);
    blend(ls.phi(which), v1, v2, |t| h.value(t))
}

/// Smoothed projector: `a = a1 H_ε(φᵃ) + a2 (1 - H_ε(φᵃ))`, likewise for `c`.
pub fn project_smooth(ls: &LevelSetPair) -> (NodalField, NodalField) {
    (
        project_smooth_one(ls, Coefficient::A),
        project_smooth_one(ls, Coefficient::C),
    )
}

/// Nodal approximation of `H'_ε(φ) div(∇H_ε(φ) / |∇H_ε(φ)|_η)`, where
/// `|g|_η = sqrt(|g|² + η²)`.
///
/// The divergence is the weak one, `-∫ F·∇ψ_i`, with zero normal flux on
/// the boundary, divided by the lumped mass.
pub fn curvature_term(mesh: &Mesh, phi: &[f64], eps: f64, eta: f64) -> Result<NodalField> {
    let h = SmoothHeaviside::new(eps)?;
    if !(eta > 0.0) {
        return Err(Error::invalid("eta", format!("must be positive, got {eta}")));
    }
    check_len("phi", mesh.num_nodes(), phi.len())?;
    let mut out = NodalField::zeros(mesh);
    if phi.iter().all(|&t| h.derivative(t) == 0.0) {
        return Ok(out);
    }
    let hv: Vec<f64> = phi.iter().map(|&t| h.value(t)).collect();
    for e in mesh.elements() {
        let g = e.gradient(&hv);
        let norm = (g[0] * g[0] + g[1] * g[1] + eta * eta).sqrt();
        let f = [g[0] / norm, g[1] / norm];
        for (k, &n) in e.nodes.iter().enumerate() {
            out[n] -= e.area * (f[0] * e.grads[k][0] + f[1] * e.grads[k][1]);
        }
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v *= h.derivative(phi[i]) / mesh.lumped_weights()[i];
    }
    Ok(out)
}

/// `∫_Ω |∇H_ε(φ)| dx` with element-wise gradients.
pub fn perimeter_estimate(mesh: &Mesh, phi: &[f64], eps: f64) -> Result<f64> {
    let h = SmoothHeaviside::new(eps)?;
    check_len("phi", mesh.num_nodes(), phi.len())?;
    let hv: Vec<f64> = phi.iter().map(|&t| h.value(t)).collect();
    Ok(mesh
        .elements()
        .iter()
        .map(|e| {
            let g = e.gradient(&hv);
            e.area * g[0].hypot(g[1])
        })
        .sum())
}

/// `φ(x) = radius² - |x - center|²`, positive inside the disk.
pub fn init_paraboloid(mesh: &Mesh, center: [f64; 2], radius: f64) -> Result<NodalField> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
    }
    Ok(NodalField::from_fn(mesh, |x, y| {
        radius * radius - (x - center[0]).powi(2) - (y - center[1]).powi(2)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_mesh, Rect};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Mesh {
        build_uniform_mesh(n, n, Rect::UNIT).unwrap()
    }

    fn pair(mesh: &Mesh, fa: impl Fn(f64, f64) -> f64, fc: impl Fn(f64, f64) -> f64) -> LevelSetPair {
        LevelSetPair::new(
            NodalField::from_fn(mesh, fa),
            NodalField::from_fn(mesh, fc),
            ContrastLevels::default(),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn heaviside_values() {
        assert_eq!(heaviside_eps(0.5, 0.1).unwrap(), 1.0);
        assert_relative_eq!(heaviside_eps(-0.05, 0.1).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(heaviside_eps(-0.2, 0.1).unwrap(), 0.0);
        assert_relative_eq!(heaviside_eps_prime(-0.05, 0.1).unwrap(), 10.0);
        assert_eq!(heaviside_eps_prime(0.3, 0.1).unwrap(), 0.0);
        assert_eq!(heaviside_eps_prime(-0.1, 0.1).unwrap(), 0.0);
        assert_eq!(heaviside_eps_prime(0.0, 0.1).unwrap(), 0.0);
        assert!(heaviside_eps(0.0, 0.0).is_err());
        assert!(heaviside_eps_prime(0.0, -1.0).is_err());
        assert_eq!(heaviside(0.0), 1.0);
    }

    proptest! {
        #[test]
        fn heaviside_monotone_and_bounded(t in -1.0f64..1.0, dt in 0.0f64..0.5, eps in 1e-3f64..0.5) {
            let h = SmoothHeaviside::new(eps).unwrap();
            let (v, w) = (h.value(t), h.value(t + dt));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!(w >= v);
            if t >= 0.0 || t <= -eps {
                prop_assert_eq!(v, heaviside(t));
            }
        }

        #[test]
        fn sharp_projection_is_scale_invariant(lambda in 1e-3f64..1e3, cx in 0.1f64..0.9, r in 0.05f64..0.4) {
            let m = unit(9);
            let ls = pair(&m, |x, y| r * r - (x - cx).powi(2) - (y - 0.5).powi(2), |x, _| x - cx);
            let mut scaled = ls.clone();
            scaled.phi_a = ls.phi_a.map(|v| lambda * v);
            scaled.phi_c = ls.phi_c.map(|v| lambda * v);
            prop_assert_eq!(project_sharp(&ls), project_sharp(&scaled));
        }

        #[test]
        fn smooth_projection_stays_in_hull(shift in -0.3f64..0.3) {
            let m = unit(9);
            let ls = pair(&m, |x, y| x - y + shift, |x, y| x * y - 0.2 + shift);
            let (a, c) = project_smooth(&ls);
            prop_assert!(a.iter().all(|&v| (1.0..=10.0).contains(&v)));
            prop_assert!(c.iter().all(|&v| (1.0..=10.0).contains(&v)));
            let (sa, sc) = project_sharp(&ls);
            prop_assert!(sa.iter().chain(sc.iter()).all(|&v| v == 1.0 || v == 10.0));
        }
    }

    #[test]
    fn projections() {
        let m = unit(6);
        let ls = pair(&m, |_, _| 1.0, |_, _| -1.0);
        let (a, c) = project_sharp(&ls);
        assert!(a.iter().all(|&v| v == 10.0) && c.iter().all(|&v| v == 1.0));

        let ls = pair(&m, |_, _| -0.05, |_, _| -0.05);
        let (a, _) = project_smooth(&ls);
        assert!(a.iter().all(|&v| (v - 5.5).abs() < 1e-14));

        let ls = pair(&m, |x, y| x + y, |x, _| x);
        assert_eq!(project_smooth(&ls), project_sharp(&ls));
        let ls = pair(&m, |x, y| -0.1 - x - y, |x, _| -0.2 - x);
        assert_eq!(project_smooth(&ls), project_sharp(&ls));
    }

    #[test]
    fn paraboloid() {
        let m = unit(51);
        let phi = init_paraboloid(&m, [0.5, 0.5], 0.2).unwrap();
        assert_relative_eq!(phi[m.node_index(25, 25)], 0.04, epsilon = 1e-14);
        assert_relative_eq!(phi[0], 0.04 - 0.5, epsilon = 1e-14);
        assert!(init_paraboloid(&m, [0.5, 0.5], 0.0).is_err());
        let big = init_paraboloid(&m, [0.5, 0.5], 2.0).unwrap();
        assert!(big.iter().all(|&v| v >= 0.0));

        // Nodal count of {φ >= 0} times cell area against π r²; one cell
        // layer around the circle bounds the discrepancy.
        let h = m.hx();
        let area = phi.iter().filter(|&&v| v >= 0.0).count() as f64 * h * h;
        assert!((area - PI * 0.04).abs() < 2.0 * PI * 0.2 * h, "area {area}");
    }

    #[test]
    fn curvature_trivial_cases() {
        let m = unit(11);
        let c = curvature_term(&m, &NodalField::constant(&m, -0.05), 0.1, 1e-8).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        let far = NodalField::from_fn(&m, |x, y| 1.0 + x + y);
        assert!(curvature_term(&m, &far, 0.1, 1e-8).unwrap().iter().all(|&v| v == 0.0));
        assert!(curvature_term(&m, &far, 0.1, 0.0).is_err());
    }

    #[test]
    fn curvature_of_circle() {
        // φ = |x - c| - R: the band (-ε, 0) lies just inside the circle and
        // div(∇φ/|∇φ|) = 1/r there.
        let (r0, eps) = (0.3, 0.1);
        let m = unit(101);
        let phi = NodalField::from_fn(&m, |x, y| (x - 0.5).hypot(y - 0.5) - r0);
        let k = curvature_term(&m, &phi, eps, 1e-8).unwrap();
        let h = SmoothHeaviside::new(eps).unwrap();
        let mut checked = 0;
        for j in 1..m.ny() - 1 {
            for i in 1..m.nx() - 1 {
                let n = m.node_index(i, j);
                // whole 3x3 neighbourhood strictly inside the band
                let inside = (j - 1..=j + 1)
                    .all(|jj| (i - 1..=i + 1).all(|ii| h.derivative(phi[m.node_index(ii, jj)]) > 0.0));
                if !inside {
                    continue;
                }
                let [x, y] = m.node(n);
                let expected = 1.0 / (x - 0.5).hypot(y - 0.5);
                let got = k[n] * eps;
                assert!((got - expected).abs() <= 0.2 * expected, "node {n}: {got} vs {expected}");
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn perimeter_of_circle() {
        let m = unit(129);
        assert_eq!(perimeter_estimate(&m, &NodalField::constant(&m, 0.3), 0.1).unwrap(), 0.0);
        // Coarea: the estimate is the mean perimeter of the level sets in
        // the band, 2π(R - ε/2) for φ = |x - c| - R.
        let eps = 0.02;
        let phi = NodalField::from_fn(&m, |x, y| (x - 0.5).hypot(y - 0.5) - 0.25);
        let p = perimeter_estimate(&m, &phi, eps).unwrap();
        assert!((p - 2.0 * PI * 0.25).abs() < 0.1 * 2.0 * PI * 0.25, "{p}");
        // the band is only a few cells wide, so allow a few percent of
        // interpolation error on top of that
        assert!((p / (2.0 * PI * (0.25 - eps / 2.0)) - 1.0).abs() < 0.03, "{p}");
    }

    #[test]
    fn perimeter_does_not_grow_with_scaling() {
        // Positive inside: the band sits outside the circle and narrows
        // towards it as λ grows.
        let m = unit(65);
        let phi = NodalField::from_fn(&m, |x, y| 0.25 - (x - 0.5).hypot(y - 0.5));
        let mut last = f64::INFINITY;
        for lambda in [1.0, 1.5, 2.0, 3.0] {
            let p = perimeter_estimate(&m, &phi.map(|v| lambda * v), 0.1).unwrap();
            assert!(p <= last + 1e-9, "lambda {lambda}: {p} > {last}");
            last = p;
        }
    }
}
