//! Dirichlet-to-Neumann operator, power products, and the Average DtN operator
//! obtained by integrating DtN responses over the scaling `alpha` in `[0, 1]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{compensated_sum, Conductor, SolverOptions, TraceFunction};
use crate::quadrature::GaussLegendre;

/// Discrete element of the dual trace space: one coefficient per boundary node.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFunctional {
    pub coefficients: Vec<f64>,
    /// Scaling parameter of the generating excitation, when it came from an `alpha` sweep.
    pub alpha: Option<f64>,
}

impl BoundaryFunctional {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Self { coefficients, alpha: None }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    /// `<self, phi>`.
    pub fn pair(&self, phi: &TraceFunction) -> Result<f64> {
        if phi.values.len() != self.coefficients.len() {
            return Err(Error::Structural(format!(
                "functional has {} coefficients but trace has {} values",
                self.coefficients.len(),
                phi.values.len()
            )));
        }
        Ok(compensated_sum(self.coefficients.iter().zip(&phi.values).map(|(c, v)| c * v)))
    }

    /// Pairing with the constant trace 1; zero for members of the zero-mean dual.
    pub fn constant_pairing(&self) -> f64 {
        compensated_sum(self.coefficients.iter().copied())
    }
}

/// Virtual power product `<Lambda, phi>`; the ohmic power when `phi` is the generating trace.
pub fn power_product(functional: &BoundaryFunctional, phi: &TraceFunction) -> Result<f64> {
    functional.pair(phi)
}

/// `Lambda(f)`: solve the forward problem at `f` and return its boundary flux.
pub fn dtn(conductor: &Conductor, f: &TraceFunction, options: &SolverOptions) -> Result<BoundaryFunctional> {
    let (u, _) = conductor.solve(f, None, options)?;
    Ok(conductor.boundary_flux(&u.values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureOptions {
    /// Gauss-Legendre nodes `K` of the base rule; the error estimate compares `K` and `2K`.
    pub nodes: usize,
    /// Relative tolerance on the estimated quadrature error.
    pub tol: f64,
    /// Keep doubling `K` until the tolerance is met or the fine rule reaches 64 nodes.
    pub adaptive: bool,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { nodes: 8, tol: 1e-6, adaptive: false }
    }
}

pub const MAX_QUADRATURE_NODES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    /// `alpha` nodes of the rule used for the returned values.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Per-node integrand values.
    pub node_values: Vec<f64>,
    /// Relative error estimate `|I_2K - I_K| / |I_2K|`.
    pub estimate: f64,
    pub absolute_estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDtNResult {
    pub functional: BoundaryFunctional,
    pub power: f64,
    pub quadrature: QuadratureReport,
}

struct SweepPoint {
    alpha: f64,
    weight: f64,
    functional: BoundaryFunctional,
}

/// Solves at every `alpha` node in ascending order, warm-starting each node
/// from the previous solution scaled by the ratio of consecutive nodes.
fn alpha_sweep(
    conductor: &Conductor,
    f: &TraceFunction,
    rule: &GaussLegendre,
    options: &SolverOptions,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(rule.len());
    let mut previous: Option<(f64, Vec<f64>)> = None;
    for (&alpha, &weight) in rule.nodes.iter().zip(&rule.weights) {
        let g = f.scaled(alpha);
        let guess = previous.as_ref().map(|(a, u)| u.iter().map(|v| v * alpha / a).collect::<Vec<_>>());
        let (u, _) = conductor.solve(&g, guess.as_deref(), options)?;
        let mut functional = conductor.boundary_flux(&u.values);
        functional.alpha = Some(alpha);
        previous = Some((alpha, u.values));
        out.push(SweepPoint { alpha, weight, functional });
    }
    Ok(out)
}

/// Integrates `integrand(alpha, Lambda(alpha f))` over `[0, 1]`, returning the
/// value, the quadrature report, and the sweep of the finer rule.
fn alpha_integral<F>(
    conductor: &Conductor,
    f: &TraceFunction,
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
    integrand: F,
) -> Result<(f64, QuadratureReport, Vec<SweepPoint>)>
where
    F: Fn(f64, &BoundaryFunctional) -> Result<f64>,
{
    if quadrature.nodes == 0 || 2 * quadrature.nodes > MAX_QUADRATURE_NODES {
        return Err(Error::Config(format!(
            "quadrature needs 1 <= K and 2K <= {MAX_QUADRATURE_NODES}, got K = {}",
            quadrature.nodes
        )));
    }
    let evaluate = |k: usize| -> Result<(f64, Vec<f64>, Vec<SweepPoint>, GaussLegendre)> {
        let rule = GaussLegendre::unit_interval(k);
        let sweep = alpha_sweep(conductor, f, &rule, options)?;
        let values = sweep.iter().map(|p| integrand(p.alpha, &p.functional)).collect::<Result<Vec<_>>>()?;
        let total = compensated_sum(values.iter().zip(&rule.weights).map(|(v, w)| v * w));
        Ok((total, values, sweep, rule))
    };
    let mut k = quadrature.nodes;
    let mut coarse = evaluate(k)?.0;
    loop {
        let (fine, values, sweep, rule) = evaluate(2 * k)?;
        let absolute = (fine - coarse).abs();
        let relative = if fine != 0.0 { absolute / fine.abs() } else { absolute };
        let met = relative <= quadrature.tol;
        if met || !quadrature.adaptive || 4 * k > MAX_QUADRATURE_NODES {
            if !met {
                return Err(Error::QuadratureNotConverged { nodes: 2 * k, estimate: relative });
            }
            let report = QuadratureReport {
                nodes: rule.nodes,
                weights: rule.weights,
                node_values: values,
                estimate: relative,
                absolute_estimate: absolute,
            };
            return Ok((fine, report, sweep));
        }
        coarse = fine;
        k *= 2;
    }
}

fn zero_result(len: usize) -> AveragedDtNResult {
    AveragedDtNResult {
        functional: BoundaryFunctional::zeros(len),
        power: 0.0,
        quadrature: QuadratureReport {
            nodes: Vec::new(),
            weights: Vec::new(),
            node_values: Vec::new(),
            estimate: 0.0,
            absolute_estimate: 0.0,
        },
    }
}

/// Average DtN `integral over [0, 1] of Lambda(alpha f) d alpha`, as a functional and its power at `f`.
pub fn avg_dtn(
    conductor: &Conductor,
    f: &TraceFunction,
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Result<AveragedDtNResult> {
    if f.is_zero() {
        return Ok(zero_result(f.values.len()));
    }
    let (power, report, sweep) = alpha_integral(conductor, f, quadrature, options, |_, l| l.pair(f))?;
    let mut coefficients = vec![0.0; f.values.len()];
    for point in &sweep {
        for (c, v) in coefficients.iter_mut().zip(&point.functional.coefficients) {
            *c += point.weight * v;
        }
    }
    Ok(AveragedDtNResult { functional: BoundaryFunctional::new(coefficients), power, quadrature: report })
}

/// Weighted ohmic power `integral over [0, 1] of P(alpha f) / alpha d alpha`
/// with `P(g) = <Lambda(g), g>`.
pub fn weighted_power_form(
    conductor: &Conductor,
    f: &TraceFunction,
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Result<f64> {
    if f.is_zero() {
        return Ok(0.0);
    }
    let (value, _, _) = alpha_integral(conductor, f, quadrature, options, |alpha, l| {
        Ok(l.pair(&f.scaled(alpha))? / alpha)
    })?;
    Ok(value)
}

/// One `(i, j)` entry of the measurement table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramEntry {
    pub i: usize,
    pub j: usize,
    /// `<Lambda(f_i), f_j>`.
    pub dtn_pairing: Option<f64>,
    /// `<Average Lambda(f_i), f_j>`.
    pub avg_dtn_pairing: Option<f64>,
    pub quad_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramTable {
    pub size: usize,
    pub entries: Vec<GramEntry>,
    /// Excitations whose solves failed, with the reason.
    pub failures: Vec<(usize, String)>,
    /// Per-excitation quadrature reports when the Average DtN was requested.
    pub quadrature: Vec<Option<QuadratureReport>>,
}

impl GramTable {
    pub fn entry(&self, i: usize, j: usize) -> &GramEntry {
        &self.entries[i * self.size + j]
    }

    /// `<Average Lambda(f_i), f_i>` for each excitation.
    pub fn avg_powers(&self) -> Vec<Option<f64>> {
        (0..self.size).map(|i| self.entry(i, i).avg_dtn_pairing).collect()
    }
}

/// Measures DtN and (optionally) Average DtN pairings for every excitation pair.
///
/// Excitations are processed concurrently; the table is assembled in index order.
pub fn gram_record(
    conductor: &Conductor,
    excitations: &[TraceFunction],
    quadrature: Option<&QuadratureOptions>,
    options: &SolverOptions,
) -> Result<GramTable> {
    if excitations.iter().any(|f| !f.zero_mean) {
        return Err(Error::Config("excitations must be projected to zero mean".into()));
    }
    type Row = std::result::Result<(BoundaryFunctional, Option<AveragedDtNResult>), String>;
    let rows: Vec<Row> = excitations
        .par_iter()
        .map(|f| {
            let lambda = dtn(conductor, f, options).map_err(|e| e.to_string())?;
            let avg = match quadrature {
                Some(q) => Some(avg_dtn(conductor, f, q, options).map_err(|e| e.to_string())?),
                None => None,
            };
            Ok((lambda, avg))
        })
        .collect();
    let n = excitations.len();
    let mut entries = Vec::with_capacity(n * n);
    let mut failures = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        if let Err(reason) = row {
            failures.push((i, reason.clone()));
        }
        for (j, fj) in excitations.iter().enumerate() {
            let entry = match row {
                Ok((lambda, avg)) => GramEntry {
                    i,
                    j,
                    dtn_pairing: Some(lambda.pair(fj)?),
                    avg_dtn_pairing: match avg {
                        Some(a) if i == j => Some(a.power),
                        Some(a) => Some(a.functional.pair(fj)?),
                        None => None,
                    },
                    quad_error: avg.as_ref().map(|a| a.quadrature.estimate),
                },
                Err(_) => GramEntry { i, j, dtn_pairing: None, avg_dtn_pairing: None, quad_error: None },
            };
            entries.push(entry);
        }
    }
    let quadrature = rows
        .into_iter()
        .map(|row| row.ok().and_then(|(_, avg)| avg.map(|a| a.quadrature)))
        .collect();
    Ok(GramTable { size: n, entries, failures, quadrature })
}
