//! Ground-truth coefficient pairs, the four side excitations, and synthetic
//! measurements.
//!
//! Inclusion placements are fixed constants. Each phantom records its
//! geometry so it can be resampled on a finer mesh.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{trace, NodalField, SolverSettings};
use crate::forward::{add_noise, ExperimentSet, ForwardOperator};
use crate::levelset::ContrastLevels;
use crate::mesh::{boundary_l2_norm, build_uniform_mesh, Mesh, Side};

/// Inclusion shape in domain coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2] },
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { center, radius } => {
                (x - center[0]).powi(2) + (y - center[1]).powi(2) <= radius * radius
            }
            Shape::Rect { lo, hi } => x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1],
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
            Shape::Rect { lo, hi } => (hi[0] - lo[0]) * (hi[1] - lo[1]),
        }
    }
}

/// Inclusions of each coefficient; the support is the union of its shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub a: Vec<Shape>,
    pub c: Vec<Shape>,
}

impl Geometry {
    fn sample(shapes: &[Shape], mesh: &Mesh, inside: f64, outside: f64) -> NodalField {
        NodalField::from_fn(mesh, |x, y| {
            if shapes.iter().any(|s| s.contains(x, y)) {
                inside
            } else {
                outside
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// One disjoint disk per coefficient.
    SinglePair,
    /// Disk for `a`, non-convex (L-shaped) support for `c`.
    ComplexPair,
    /// Supports well apart.
    Separated,
    /// Supports a small positive distance apart.
    Near,
    /// Intersecting supports.
    Overlapping,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 5] = [
        PhantomKind::SinglePair,
        PhantomKind::ComplexPair,
        PhantomKind::Separated,
        PhantomKind::Near,
        PhantomKind::Overlapping,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PhantomKind::SinglePair => "single-pair",
            PhantomKind::ComplexPair => "complex-pair",
            PhantomKind::Separated => "separated",
            PhantomKind::Near => "near",
            PhantomKind::Overlapping => "overlapping",
        }
    }

    pub fn geometry(&self) -> Geometry {
        let disk = |cx: f64, cy: f64, r: f64| Shape::Disk {
            center: [cx, cy],
            radius: r,
        };
        match self {
            PhantomKind::SinglePair => Geometry {
                a: vec![disk(0.3, 0.7, 0.15)],
                c: vec![disk(0.7, 0.3, 0.15)],
            },
            PhantomKind::ComplexPair => Geometry {
                a: vec![disk(0.3, 0.7, 0.15)],
                c: vec![
                    Shape::Rect {
                        lo: [0.5, 0.15],
                        hi: [0.85, 0.3],
                    },
                    Shape::Rect {
                        lo: [0.7, 0.15],
                        hi: [0.85, 0.6],
                    },
                ],
            },
            PhantomKind::Separated => Geometry {
                a: vec![disk(0.3, 0.3, 0.15)],
                c: vec![disk(0.7, 0.7, 0.15)],
            },
            PhantomKind::Near => Geometry {
                a: vec![disk(0.33, 0.5, 0.15)],
                c: vec![disk(0.67, 0.5, 0.15)],
            },
            PhantomKind::Overlapping => Geometry {
                a: vec![disk(0.42, 0.5, 0.17)],
                c: vec![disk(0.58, 0.5, 0.17)],
            },
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PhantomKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("phantom", format!("unknown phantom `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub kind: PhantomKind,
    pub a_true: NodalField,
    pub c_true: NodalField,
    pub levels: ContrastLevels,
    pub geometry: Geometry,
}

impl Phantom {
    /// The same geometry sampled at the nodes of `mesh`.
    pub fn resample(&self, mesh: &Mesh) -> Phantom {
        let l = self.levels;
        Phantom {
            kind: self.kind,
            a_true: Geometry::sample(&self.geometry.a, mesh, l.a1, l.a2),
            c_true: Geometry::sample(&self.geometry.c, mesh, l.c1, l.c2),
            levels: l,
            geometry: self.geometry.clone(),
        }
    }

    /// The same geometry with other contrast values.
    pub fn with_levels(&self, levels: ContrastLevels, mesh: &Mesh) -> Phantom {
        Phantom {
            levels,
            ..self.clone()
        }
        .resample(mesh)
    }
}

pub fn make_phantom(kind: PhantomKind, mesh: &Mesh) -> Phantom {
    let levels = ContrastLevels::default();
    let geometry = kind.geometry();
    Phantom {
        kind,
        a_true: Geometry::sample(&geometry.a, mesh, levels.a1, levels.a2),
        c_true: Geometry::sample(&geometry.c, mesh, levels.c1, levels.c2),
        levels,
        geometry,
    }
}

/// Unit flux on the middle half of each side, in the order Bottom, Right,
/// Top, Left. Nodes exactly at a segment end get one half.
pub fn make_excitations(mesh: &Mesh) -> Vec<Vec<f64>> {
    let r = mesh.rect();
    Side::ALL
        .iter()
        .map(|&side| {
            mesh.boundary_from_fn(|x, y| {
                let tx = (x - r.x0) / r.width();
                let ty = (y - r.y0) / r.height();
                let on_side = match side {
                    Side::Bottom => ty == 0.0,
                    Side::Right => tx == 1.0,
                    Side::Top => ty == 1.0,
                    Side::Left => tx == 0.0,
                };
                if !on_side {
                    return 0.0;
                }
                let t = match side {
                    Side::Bottom | Side::Top => tx,
                    Side::Right | Side::Left => ty,
                };
                const TOL: f64 = 1e-12;
                if (t - 0.25).abs() < TOL || (t - 0.75).abs() < TOL {
                    0.5
                } else if t > 0.25 && t < 0.75 {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Noise-free traces of `phantom` under `excitations`, computed on a mesh
/// refined `refine` times and restricted to the boundary nodes of `mesh`.
pub fn clean_measurements(
    phantom: &Phantom,
    mesh: &Mesh,
    refine: usize,
    settings: &SolverSettings,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if refine == 0 {
        return Err(Error::invalid("refine", "must be at least 1"));
    }
    let excitations = make_excitations(mesh);
    if refine == 1 {
        let op = ForwardOperator::new(mesh, &phantom.a_true, &phantom.c_true, settings)?;
        let h = excitations
            .iter()
            .map(|g| Ok(trace(mesh, &op.solve_flux(g)?)))
            .collect::<Result<Vec<_>>>()?;
        return Ok((excitations, h));
    }
    let fine = build_uniform_mesh(refine * (mesh.nx() - 1) + 1, refine * (mesh.ny() - 1) + 1, mesh.rect())?;
    let fine_phantom = phantom.resample(&fine);
    let fine_g = make_excitations(&fine);
    let op = ForwardOperator::new(&fine, &fine_phantom.a_true, &fine_phantom.c_true, settings)?;
    let nx = mesh.nx();
    let h = fine_g
        .iter()
        .map(|g| {
            let u = op.solve_flux(g)?;
            Ok(mesh
                .boundary_nodes()
                .iter()
                .map(|&n| {
                    let (i, j) = (n % nx, n / nx);
                    u[fine.node_index(refine * i, refine * j)]
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((excitations, h))
}

/// Synthetic experiment set: clean traces plus noise of norm `delta` per
/// experiment, seeded with `seed + m` for experiment `m = 1..ℓ`.
pub fn synthesize_data(
    phantom: &Phantom,
    mesh: &Mesh,
    refine: usize,
    delta: f64,
    seed: u64,
    settings: &SolverSettings,
) -> Result<ExperimentSet> {
    let (g, h) = clean_measurements(phantom, mesh, refine, settings)?;
    let noisy = h
        .iter()
        .enumerate()
        .map(|(m, hm)| add_noise(mesh, hm, delta, seed.wrapping_add(m as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    ExperimentSet::new(mesh, g, noisy, delta)
}

/// Like [`synthesize_data`], but experiment `m` gets noise of norm
/// `rel · ‖h_m‖`. The set records the largest of these as its `delta`.
pub fn synthesize_data_relative(
    phantom: &Phantom,
    mesh: &Mesh,
    refine: usize,
    rel: f64,
    seed: u64,
    settings: &SolverSettings,
) -> Result<ExperimentSet> {
    if !(rel >= 0.0 && rel.is_finite()) {
        return Err(Error::invalid("delta", format!("must be non-negative, got {rel}")));
    }
    let (g, h) = clean_measurements(phantom, mesh, refine, settings)?;
    let mut delta: f64 = 0.0;
    let noisy = h
        .iter()
        .enumerate()
        .map(|(m, hm)| {
            let dm = rel * boundary_l2_norm(mesh, hm)?;
            delta = delta.max(dm);
            add_noise(mesh, hm, dm, seed.wrapping_add(m as u64 + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    ExperimentSet::new(mesh, g, noisy, delta)
}
