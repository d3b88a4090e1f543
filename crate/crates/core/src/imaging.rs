//! Monotonicity-based shape reconstruction from Average DtN power data.
//!
//! A test region `T` is simulated as an anomaly (contrast law inside `T`,
//! background elsewhere). Under the "anomaly less conductive" convention, if
//! `T` lies inside the true anomaly `V` then `sigma_T >= sigma_V` pointwise and
//! every simulated power dominates the measured one. Aggregating this over a
//! finite dictionary with a per-excitation relative threshold is this
//! module's own rule: `T` is excluded as soon as one excitation violates the
//! expected ordering by more than `tau`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary_ops::{avg_dtn, QuadratureOptions};
use crate::constitutive::{default_grid, ordering_violation, ConductivityModel};
use crate::error::{Error, Result};
use crate::forward::{Conductor, SolverOptions, TraceFunction};
use crate::mesh::{Mesh, Point, Shape};

/// Diagonal Average DtN data `m_i = <Average Lambda(f_i), f_i>`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub excitations: Vec<TraceFunction>,
    pub powers: Vec<f64>,
    pub noise: f64,
}

impl MeasurementSet {
    /// Absolute floor of the relative threshold: `1e-12 max_i m_i`.
    pub fn floor(&self) -> f64 {
        1e-12 * self.powers.iter().copied().fold(0.0, f64::max)
    }
}

/// Average DtN powers of every excitation, evaluated concurrently in index order.
pub fn simulate_powers(
    conductor: &Conductor,
    excitations: &[TraceFunction],
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Result<Vec<f64>> {
    excitations
        .par_iter()
        .map(|f| avg_dtn(conductor, f, quadrature, options).map(|r| r.power))
        .collect()
}

/// Noisy synthetic data: each power multiplied by `1 + noise * eta_i`, `eta_i ~ U[-1, 1]`.
pub fn synthesize_measurements(
    truth: &Conductor,
    excitations: &[TraceFunction],
    noise: f64,
    seed: u64,
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Result<MeasurementSet> {
    if !(noise >= 0.0) {
        return Err(Error::Config(format!("noise level must be nonnegative, got {noise}")));
    }
    let clean = simulate_powers(truth, excitations, quadrature, options)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let powers = clean.iter().map(|p| p * (1.0 + noise * rng.gen_range(-1.0..=1.0))).collect();
    Ok(MeasurementSet { excitations: excitations.to_vec(), powers, noise })
}

/// Which way the anomaly departs from the background.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    /// Anomaly law <= background law; a protected test region has `sim >= m`.
    #[default]
    LessConductive,
    /// Anomaly law >= background law; the inequality is mirrored.
    MoreConductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Compatible,
    Excluded,
    Unknown,
}

/// Outcome of testing one region against the measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionTest {
    pub region: Vec<usize>,
    pub simulated: Vec<f64>,
    /// Signed margins oriented so that a protected region has margins >= 0
    /// (`sim - m` for less-conductive anomalies, `m - sim` otherwise).
    pub margins: Vec<f64>,
    /// Margins divided by `max(m_i, floor)`.
    pub relative_margins: Vec<f64>,
    pub verdict: Verdict,
    pub worst_margin: f64,
    pub worst_excitation: usize,
}

/// The two laws of an imaging experiment, with the declared contrast checked on a field grid.
#[derive(Debug, Clone, Copy)]
pub struct ContrastPair<'a> {
    pub models: &'a [ConductivityModel],
    pub background: usize,
    pub anomaly: usize,
    pub contrast: Contrast,
}

impl<'a> ContrastPair<'a> {
    pub fn new(models: &'a [ConductivityModel], background: usize, anomaly: usize, contrast: Contrast) -> Result<Self> {
        let (bg, an) = (
            models.get(background).ok_or_else(|| Error::Config("missing background model".into()))?,
            models.get(anomaly).ok_or_else(|| Error::Config("missing anomaly model".into()))?,
        );
        let grid = default_grid(bg.e0().max(an.e0()));
        let (lower, upper) = match contrast {
            Contrast::LessConductive => (an, bg),
            Contrast::MoreConductive => (bg, an),
        };
        if let Some(e) = ordering_violation(lower, upper, &grid) {
            return Err(Error::Config(format!("declared contrast {contrast:?} is violated at E = {e}")));
        }
        Ok(Self { models, background, anomaly, contrast })
    }

    fn assignment(&self, mesh: &Mesh, region: &[usize]) -> Vec<usize> {
        let mut labels = vec![self.background; mesh.num_elements()];
        for &e in region {
            labels[e] = self.anomaly;
        }
        labels
    }

    /// Average DtN powers with the anomaly law on `region`.
    pub fn simulate(
        &self,
        mesh: &Mesh,
        region: &[usize],
        excitations: &[TraceFunction],
        quadrature: &QuadratureOptions,
        options: &SolverOptions,
    ) -> Result<Vec<f64>> {
        if let Some(&e) = region.iter().find(|&&e| e >= mesh.num_elements()) {
            return Err(Error::Structural(format!("test region references missing element {e}")));
        }
        let conductor = Conductor::new(mesh, self.assignment(mesh, region), self.models)?;
        simulate_powers(&conductor, excitations, quadrature, options)
    }
}

/// Compares simulated and measured powers under the threshold `tau`.
pub fn classify(
    region: Vec<usize>,
    simulated: Vec<f64>,
    measurements: &MeasurementSet,
    tau: f64,
    contrast: Contrast,
) -> Result<InclusionTest> {
    if simulated.len() != measurements.powers.len() {
        return Err(Error::Structural("simulated and measured data differ in length".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("threshold must be nonnegative, got {tau}")));
    }
    let floor = measurements.floor();
    let margins: Vec<f64> = simulated
        .iter()
        .zip(&measurements.powers)
        .map(|(s, m)| match contrast {
            Contrast::LessConductive => s - m,
            Contrast::MoreConductive => m - s,
        })
        .collect();
    let relative_margins: Vec<f64> = margins
        .iter()
        .zip(&measurements.powers)
        .map(|(d, m)| d / m.max(floor).max(f64::MIN_POSITIVE))
        .collect();
    let (worst_excitation, worst_margin) = relative_margins
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, r)| if r < acc.1 { (i, r) } else { acc });
    let verdict = if relative_margins.iter().any(|&r| r < -tau) { Verdict::Excluded } else { Verdict::Compatible };
    Ok(InclusionTest { region, simulated, margins, relative_margins, verdict, worst_margin, worst_excitation })
}

/// Simulates one test region and classifies it.
#[allow(clippy::too_many_arguments)]
pub fn mpm_test(
    mesh: &Mesh,
    pair: &ContrastPair,
    region: &[usize],
    measurements: &MeasurementSet,
    tau: f64,
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Result<InclusionTest> {
    let simulated = pair.simulate(mesh, region, &measurements.excitations, quadrature, options)?;
    classify(region.to_vec(), simulated, measurements, tau, pair.contrast)
}

/// Test disks of one radius on an `m x m` lattice of centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestGrid {
    pub radius: f64,
    pub lattice: usize,
    /// Lattice bounds; defaults to the mesh bounding box. Centres sit at cell midpoints.
    #[serde(default)]
    pub bounds: Option<(Point, Point)>,
}

impl TestGrid {
    pub fn shapes(&self, mesh: &Mesh) -> Vec<Shape> {
        let (lo, hi) = self.bounds.unwrap_or_else(|| mesh.bounding_box());
        let m = self.lattice;
        let mut out = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                let cx = lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / m as f64;
                let cy = lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / m as f64;
                out.push(Shape::Disk { center: [cx, cy], radius: self.radius });
            }
        }
        out
    }
}

/// One test region's simulation, independent of the measurements and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSimulation {
    pub shape: Shape,
    pub region: Vec<usize>,
    pub simulated: std::result::Result<Vec<f64>, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorEntry {
    pub center: Point,
    pub radius: f64,
    pub verdict: Verdict,
    pub worst_margin: Option<f64>,
    pub worst_excitation: Option<usize>,
    pub reason: Option<String>,
}

/// Verdict per test region in lattice order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorMap {
    pub tau: f64,
    pub entries: Vec<IndicatorEntry>,
}

impl IndicatorMap {
    pub fn compatible(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.verdict == Verdict::Compatible)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Simulates every test region concurrently; results come back in lattice order.
pub fn simulate_regions(
    mesh: &Mesh,
    pair: &ContrastPair,
    shapes: &[Shape],
    excitations: &[TraceFunction],
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Vec<RegionSimulation> {
    shapes
        .par_iter()
        .map(|shape| {
            let region = shape.element_set(mesh);
            let simulated = pair
                .simulate(mesh, &region, excitations, quadrature, options)
                .map_err(|e| e.to_string());
            RegionSimulation { shape: shape.clone(), region, simulated }
        })
        .collect()
}

/// Classifies precomputed simulations against measurements at threshold `tau`.
pub fn indicator_map(
    simulations: &[RegionSimulation],
    measurements: &MeasurementSet,
    tau: f64,
    contrast: Contrast,
) -> Result<IndicatorMap> {
    let entries = simulations
        .iter()
        .map(|sim| {
            let (center, radius) = match &sim.shape {
                Shape::Disk { center, radius } => (*center, *radius),
                _ => ([f64::NAN; 2], f64::NAN),
            };
            Ok(match &sim.simulated {
                Ok(values) => {
                    let test = classify(sim.region.clone(), values.clone(), measurements, tau, contrast)?;
                    IndicatorEntry {
                        center,
                        radius,
                        verdict: test.verdict,
                        worst_margin: Some(test.worst_margin),
                        worst_excitation: Some(test.worst_excitation),
                        reason: None,
                    }
                }
                Err(reason) => IndicatorEntry {
                    center,
                    radius,
                    verdict: Verdict::Unknown,
                    worst_margin: None,
                    worst_excitation: None,
                    reason: Some(reason.clone()),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IndicatorMap { tau, entries })
}

/// Full sweep: simulate every lattice disk and classify it.
#[allow(clippy::too_many_arguments)]
pub fn mpm_reconstruct(
    mesh: &Mesh,
    pair: &ContrastPair,
    measurements: &MeasurementSet,
    grid: &TestGrid,
    tau: f64,
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Result<IndicatorMap> {
    let shapes = grid.shapes(mesh);
    let sims = simulate_regions(mesh, pair, &shapes, &measurements.excitations, quadrature, options);
    indicator_map(&sims, measurements, tau, pair.contrast)
}
