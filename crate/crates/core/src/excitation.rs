//! Boundary excitation dictionaries.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{project_zero_mean, TraceFunction};
use crate::mesh::{Mesh, Point};

/// Boundary-mass-weighted centroid of the boundary nodes.
fn boundary_centroid(mesh: &Mesh) -> Point {
    let w = mesh.boundary_weights();
    let total: f64 = w.iter().sum();
    let mut c = [0.0; 2];
    for (s, &v) in mesh.boundary_nodes().iter().enumerate() {
        let p = mesh.nodes()[v];
        c[0] += w[s] * p[0];
        c[1] += w[s] * p[1];
    }
    [c[0] / total, c[1] / total]
}

fn boundary_angles(mesh: &Mesh) -> Vec<f64> {
    let c = boundary_centroid(mesh);
    mesh.boundary_nodes()
        .iter()
        .map(|&v| {
            let p = mesh.nodes()[v];
            (p[1] - c[1]).atan2(p[0] - c[0])
        })
        .collect()
}

fn from_values(mesh: &Mesh, values: Vec<f64>) -> TraceFunction {
    project_zero_mean(mesh, &values).expect("boundary traces match the mesh")
}

/// First `count` boundary Fourier modes in the polar angle about the boundary
/// centroid: `cos(theta), sin(theta), cos(2 theta), ...`, projected to zero mean.
pub fn fourier_modes(mesh: &Mesh, count: usize) -> Vec<TraceFunction> {
    let angles = boundary_angles(mesh);
    (0..count)
        .map(|i| {
            let k = (i / 2 + 1) as f64;
            let values = angles
                .iter()
                .map(|&t| if i % 2 == 0 { (k * t).cos() } else { (k * t).sin() })
                .collect();
            from_values(mesh, values)
        })
        .collect()
}

/// Adjacent-electrode drive patterns: `count` smooth bumps at angles
/// `2 pi (i + 1/2) / count`, excitation `i` driving bump `i` against bump `i + 1`.
pub fn adjacent_dipoles(mesh: &Mesh, count: usize) -> Vec<TraceFunction> {
    let angles = boundary_angles(mesh);
    let half_width = PI / count.max(1) as f64;
    let bump = |t: f64, centre: f64| {
        let mut d = (t - centre).rem_euclid(2.0 * PI);
        if d > PI {
            d = 2.0 * PI - d;
        }
        if d < half_width {
            (0.5 * PI * d / half_width).cos().powi(2)
        } else {
            0.0
        }
    };
    let centre = |i: usize| 2.0 * PI * (i as f64 + 0.5) / count as f64;
    (0..count)
        .map(|i| {
            let (a, b) = (centre(i), centre((i + 1) % count));
            let values = angles.iter().map(|&t| bump(t, a) - bump(t, b)).collect();
            from_values(mesh, values)
        })
        .collect()
}

/// Trace of the affine function `gradient . x`, projected to zero mean.
pub fn affine(mesh: &Mesh, gradient: Point) -> TraceFunction {
    TraceFunction::projected(mesh, |p| gradient[0] * p[0] + gradient[1] * p[1])
}

/// Random combination of the first `modes` Fourier modes with coefficients in `[-1, 1]`.
pub fn random_smooth<R: Rng>(mesh: &Mesh, modes: usize, rng: &mut R) -> TraceFunction {
    let basis = fourier_modes(mesh, modes);
    let mut values = vec![0.0; mesh.boundary_nodes().len()];
    for b in &basis {
        let c: f64 = rng.gen_range(-1.0..=1.0);
        for (v, x) in values.iter_mut().zip(&b.values) {
            *v += c * x;
        }
    }
    from_values(mesh, values)
}

/// Excitation dictionary as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationSpec {
    Fourier { count: usize },
    Dipole { count: usize },
    Affine { gradients: Vec<Point> },
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        ExcitationSpec::Fourier { count: 8 }
    }
}

impl ExcitationSpec {
    pub fn build(&self, mesh: &Mesh) -> Result<Vec<TraceFunction>> {
        match self {
            ExcitationSpec::Fourier { count } => Ok(fourier_modes(mesh, *count)),
            ExcitationSpec::Dipole { count } if *count < 2 => {
                Err(Error::Config("dipole dictionary needs at least two electrodes".into()))
            }
            ExcitationSpec::Dipole { count } => Ok(adjacent_dipoles(mesh, *count)),
            ExcitationSpec::Affine { gradients } => Ok(gradients.iter().map(|&g| affine(mesh, g)).collect()),
        }
    }
}
