//! Executable checks of the energy and boundary-operator identities, with a
//! machine-readable report.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::boundary_ops::{avg_dtn, dtn, QuadratureOptions};
use crate::constitutive::{default_grid, ordering_violation, validate_hypotheses, ConductivityModel};
use crate::error::{Error, Result};
use crate::excitation::random_smooth;
use crate::forward::{Conductor, PotentialField, SolverOptions, TraceFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The check could not discriminate (e.g. a degenerate dictionary).
    Inconclusive,
    /// The check was undefined for its inputs; the reason is in `observed`.
    Error,
}

/// One check evaluated on one configuration cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremCheck {
    pub id: String,
    pub config_digest: String,
    pub status: CheckStatus,
    pub observed: Value,
    pub tolerance: f64,
    pub pass: bool,
    pub seconds: Option<f64>,
}

impl TheoremCheck {
    fn new(id: &str, status: CheckStatus, observed: Value, tolerance: f64) -> Self {
        Self {
            id: id.to_string(),
            config_digest: String::new(),
            status,
            observed,
            tolerance,
            pass: status == CheckStatus::Pass,
            seconds: None,
        }
    }

    fn verdict(id: &str, pass: bool, observed: Value, tolerance: f64) -> Self {
        Self::new(id, if pass { CheckStatus::Pass } else { CheckStatus::Fail }, observed, tolerance)
    }

    /// Records an error that made the check undefined.
    pub fn failed(id: &str, error: &Error) -> Self {
        Self::new(id, CheckStatus::Error, json!({ "error": error.to_string() }), 0.0)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Declared ordering between two conductors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    /// first <= second
    #[default]
    Le,
    /// first >= second
    Ge,
}

/// Verifies the declared pointwise ordering element by element on the hypothesis grid.
pub fn check_ordering(first: &Conductor, second: &Conductor, order: Order) -> Result<()> {
    if first.mesh().num_elements() != second.mesh().num_elements() {
        return Err(Error::Structural("ordered conductors live on different meshes".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (&a, &b) in first.assignment().iter().zip(second.assignment()) {
        if !seen.insert((a, b)) {
            continue;
        }
        let (ma, mb) = (&first.models()[a], &second.models()[b]);
        let (lo, hi) = match order {
            Order::Le => (ma, mb),
            Order::Ge => (mb, ma),
        };
        let grid = default_grid(lo.e0().max(hi.e0()));
        if let Some(e) = ordering_violation(lo, hi, &grid) {
            return Err(Error::Config(format!("declared ordering {order:?} is violated at E = {e}")));
        }
    }
    Ok(())
}

fn oriented(order: Order, a: f64, b: f64) -> (f64, f64) {
    match order {
        Order::Le => (a, b),
        Order::Ge => (b, a),
    }
}

/// Energies at the solutions are ordered like the conductors.
pub fn check_energy_monotonicity(
    first: &Conductor,
    second: &Conductor,
    order: Order,
    excitations: &[TraceFunction],
    options: &SolverOptions,
) -> Result<TheoremCheck> {
    check_ordering(first, second, order)?;
    let mut rows = Vec::new();
    let mut pass = true;
    for f in excitations {
        let a = first.solve(f, None, options)?.1.energy;
        let b = second.solve(f, None, options)?.1.energy;
        let (lo, hi) = oriented(order, a, b);
        let slack = 1e-10 * hi.max(1.0);
        let ok = lo <= hi + slack;
        pass &= ok;
        rows.push(json!({ "first": a, "second": b, "excess": lo - hi, "ok": ok }));
    }
    Ok(TheoremCheck::verdict("energy-monotonicity", pass, json!({ "order": order, "excitations": rows }), 1e-10))
}

/// Average DtN powers are ordered like the conductors, and each equals its forward energy.
pub fn check_avg_dtn_monotonicity(
    first: &Conductor,
    second: &Conductor,
    order: Order,
    excitations: &[TraceFunction],
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Result<TheoremCheck> {
    check_ordering(first, second, order)?;
    let mut rows = Vec::new();
    let mut pass = true;
    for f in excitations {
        let mut sides = [(0.0, 0.0); 2];
        for (side, c) in sides.iter_mut().zip([first, second]) {
            let energy = c.solve(f, None, options)?.1.energy;
            *side = (avg_dtn(c, f, quadrature, options)?.power, energy);
        }
        let (lo, hi) = oriented(order, sides[0].0, sides[1].0);
        let ordered = lo <= hi + 1e-10 * hi.max(1.0);
        let transfer = sides.iter().all(|&(p, e)| (p - e).abs() <= transfer_tolerance(e, quadrature));
        pass &= ordered && transfer;
        rows.push(json!({
            "first_power": sides[0].0,
            "second_power": sides[1].0,
            "first_energy": sides[0].1,
            "second_energy": sides[1].1,
            "ordered": ordered,
            "transfer": transfer,
        }));
    }
    Ok(TheoremCheck::verdict("avg-dtn-monotonicity", pass, json!({ "order": order, "excitations": rows }), 1e-10))
}

fn transfer_tolerance(energy: f64, quadrature: &QuadratureOptions) -> f64 {
    1e-8f64.max(quadrature.tol * energy)
}

/// The Average DtN power at `f` equals the energy at the solution.
pub fn check_transfer(
    conductor: &Conductor,
    excitations: &[TraceFunction],
    quadrature: &QuadratureOptions,
    options: &SolverOptions,
) -> Result<TheoremCheck> {
    let mut rows = Vec::new();
    let mut pass = true;
    for f in excitations {
        let energy = conductor.solve(f, None, options)?.1.energy;
        let result = avg_dtn(conductor, f, quadrature, options)?;
        let error = (energy - result.power).abs();
        let ok = error <= transfer_tolerance(energy, quadrature);
        pass &= ok;
        rows.push(json!({
            "energy": energy,
            "power": result.power,
            "relative_error": error / energy.max(1e-12),
            "quadrature_nodes": result.quadrature.nodes.len(),
            "ok": ok,
        }));
    }
    Ok(TheoremCheck::verdict("transfer", pass, json!({ "excitations": rows }), quadrature.tol))
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        let dx = x.ln() - mx;
        (a + dx * (y.ln() - my), b + dx * dx)
    });
    num / den
}

pub const GATEAUX_STEPS: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const CONTINUITY_STEPS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Central differences of `G = energy o solve` in direction `phi` against `<Lambda(f), phi>`.
///
/// Points whose error is at the rounding floor of the difference quotient are
/// left out of the order fit; if fewer than two remain, the check passes on
/// the smallest-step error alone.
pub fn check_gateaux(
    conductor: &Conductor,
    f: &TraceFunction,
    phi: &TraceFunction,
    steps: &[f64],
    options: &SolverOptions,
) -> Result<TheoremCheck> {
    let energy_at = |g: &TraceFunction| conductor.solve(g, None, options).map(|(_, r)| r.energy);
    let g0 = energy_at(f)?;
    let derivative = dtn(conductor, f, options)?.pair(phi)?;
    let scale = derivative.abs().max(1e-12 * g0.abs());
    let mut rows = Vec::new();
    let mut fit = Vec::new();
    for &eps in steps {
        let quotient = (energy_at(&f.axpy(eps, phi))? - energy_at(&f.axpy(-eps, phi))?) / (2.0 * eps);
        let error = (quotient - derivative).abs();
        let floor = (1e-12 * scale).max(64.0 * f64::EPSILON * g0.abs() / eps);
        if error > floor {
            fit.push((eps, error));
        }
        rows.push(json!({ "eps": eps, "quotient": quotient, "error": error, "relative_error": rel(error, scale), "floor": floor }));
    }
    let smallest = steps.iter().copied().fold(f64::INFINITY, f64::min);
    let last = steps.iter().position(|&s| s == smallest).map(|i| rel(rows[i]["error"].as_f64().unwrap(), scale));
    let last_rel = last.unwrap_or(0.0);
    let order = (fit.len() >= 2).then(|| loglog_slope(&fit));
    let pass = last_rel <= 1e-4 && order.is_none_or(|o| o >= 1.9);
    Ok(TheoremCheck::verdict(
        "gateaux",
        pass,
        json!({
            "derivative": derivative,
            "energy": g0,
            "steps": rows,
            "order": order,
            "regime": if order.is_some() { "truncation" } else { "rounding-floor" },
            "smallest_step_relative_error": last_rel,
        }),
        1e-4,
    ))
}

fn rel(error: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        error / scale
    } else {
        error
    }
}

/// Largest growth exponent among the models in use.
fn exponent(conductor: &Conductor) -> f64 {
    let mut used = vec![false; conductor.models().len()];
    for &l in conductor.assignment() {
        used[l] = true;
    }
    conductor
        .models()
        .iter()
        .zip(used)
        .filter(|(_, u)| *u)
        .map(|(m, _)| m.p())
        .fold(2.0, f64::max)
}

fn gradient_distance(conductor: &Conductor, a: &PotentialField, b: &PotentialField, p: f64) -> f64 {
    a.gradients
        .iter()
        .zip(&b.gradients)
        .zip(conductor.mesh().element_areas())
        .map(|((x, y), area)| area * (x[0] - y[0]).hypot(x[1] - y[1]).powf(p))
        .sum()
}

/// `||grad u(f + eps phi) - grad u(f)||_p^p` decays at least linearly in `eps`.
pub fn check_boundary_continuity(
    conductor: &Conductor,
    f: &TraceFunction,
    phi: &TraceFunction,
    steps: &[f64],
    options: &SolverOptions,
) -> Result<TheoremCheck> {
    let p = exponent(conductor);
    let (base, _) = conductor.solve(f, None, options)?;
    let mut points = Vec::new();
    for &eps in steps {
        let (u, _) = conductor.solve(&f.axpy(eps, phi), None, options)?;
        points.push((eps, gradient_distance(conductor, &u, &base, p)));
    }
    let rows: Vec<Value> = points.iter().map(|(e, d)| json!({ "eps": e, "distance": d })).collect();
    let positive: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, d)| d > 0.0).collect();
    let (pass, slope) = if positive.is_empty() {
        (true, None)
    } else if positive.len() < points.len() || positive.len() < 2 {
        (false, None)
    } else {
        let s = loglog_slope(&positive);
        (s >= 0.9, Some(s))
    };
    Ok(TheoremCheck::verdict("boundary-continuity", pass, json!({ "p": p, "steps": rows, "slope": slope }), 0.9))
}

/// Ratio `<Lambda(f), f> / F(u)` for each excitation: constant `p` for
/// monomial laws, varying otherwise.
pub fn check_p_proportionality(
    conductor: &Conductor,
    excitations: &[TraceFunction],
    options: &SolverOptions,
) -> Result<TheoremCheck> {
    let mut ratios = Vec::new();
    for f in excitations.iter().filter(|f| !f.is_zero()) {
        let (u, report) = conductor.solve(f, None, options)?;
        ratios.push(conductor.boundary_flux(&u.values).pair(f)? / report.energy);
    }
    let used: Vec<&ConductivityModel> = {
        let mut seen = vec![false; conductor.models().len()];
        conductor.assignment().iter().for_each(|&l| seen[l] = true);
        conductor.models().iter().zip(seen).filter(|(_, s)| *s).map(|(m, _)| m).collect()
    };
    let homogeneous_degree = used.iter().all(|m| m.is_monomial()) && used.windows(2).all(|w| w[0].p() == w[1].p());
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if ratios.is_empty() { 0.0 } else { max - min };
    if homogeneous_degree {
        let p = used[0].p();
        let worst = ratios.iter().map(|r| (r - p).abs() / p).fold(0.0, f64::max);
        let observed = json!({ "expected": p, "ratios": ratios, "max_relative_deviation": worst, "mode": "proportional" });
        return Ok(TheoremCheck::verdict("p-proportionality", worst <= 1e-8, observed, 1e-8));
    }
    let observed = json!({ "ratios": ratios, "spread": spread, "mode": "non-proportional" });
    let status = if ratios.len() < 2 || spread <= 1e-12 {
        CheckStatus::Inconclusive
    } else if spread > 1e-3 {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(TheoremCheck::new("p-proportionality", status, observed, 1e-3))
}

/// Random interior perturbations of the solution never lower the energy.
pub fn check_dirichlet_principle(
    conductor: &Conductor,
    f: &TraceFunction,
    trials: usize,
    seed: u64,
    options: &SolverOptions,
) -> Result<TheoremCheck> {
    use rand::Rng;
    let (u, report) = conductor.solve(f, None, options)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let scale = u.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    for _ in 0..trials {
        let amplitude = scale * 10f64.powf(rng.gen_range(-4.0..0.0));
        let mut w = u.values.clone();
        for &node in conductor.mesh().dof_nodes() {
            w[node] += amplitude * rng.gen_range(-1.0..1.0);
        }
        worst = worst.min(conductor.energy(&w) - report.energy);
    }
    let pass = trials == 0 || worst >= -1e-10;
    Ok(TheoremCheck::verdict(
        "dirichlet-principle",
        pass,
        json!({ "energy": report.energy, "trials": trials, "min_energy_increase": if trials == 0 { None } else { Some(worst) } }),
        1e-10,
    ))
}

/// Admissibility hypotheses of one law on its default grid.
pub fn check_hypotheses(model: &ConductivityModel) -> Result<TheoremCheck> {
    let report = validate_hypotheses(model, &default_grid(model.e0()))?;
    Ok(TheoremCheck::verdict("hypotheses", report.all_pass(), serde_json::to_value(&report).unwrap(), 0.0))
}

/// Random `(f, phi)` pairs of smooth zero-mean traces.
pub fn random_trace_pairs(
    mesh: &crate::mesh::Mesh,
    count: usize,
    seed: u64,
) -> Vec<(TraceFunction, TraceFunction)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (random_smooth(mesh, 4, &mut rng), random_smooth(mesh, 4, &mut rng))).collect()
}

/// A deferred check evaluated by [`run_checks`].
pub struct CheckJob<'a> {
    pub id: &'static str,
    /// Canonical description of the configuration cell; hashed into the digest.
    pub cell: String,
    pub run: Box<dyn Fn() -> Result<TheoremCheck> + Send + Sync + 'a>,
}

/// Runs jobs concurrently and returns their checks in job order. Errors become
/// checks with status `error`.
pub fn run_checks(jobs: &[CheckJob], timings: bool) -> Vec<TheoremCheck> {
    jobs.par_iter()
        .map(|job| {
            let start = Instant::now();
            let mut check = (job.run)().unwrap_or_else(|e| TheoremCheck::failed(job.id, &e));
            check.id = job.id.to_string();
            check.config_digest = sha256_hex(job.cell.as_bytes());
            check.seconds = timings.then(|| start.elapsed().as_secs_f64());
            check
        })
        .collect()
}

/// Every check id the suite can emit.
pub const CHECK_IDS: [&str; 8] = [
    "hypotheses",
    "energy-monotonicity",
    "avg-dtn-monotonicity",
    "transfer",
    "p-proportionality",
    "gateaux",
    "boundary-continuity",
    "dirichlet-principle",
];

/// Checks of one suite run, in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct VerificationReport {
    pub checks: Vec<TheoremCheck>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Seeded polynomial pairs `lower <= upper`: the upper law adds nonnegative
/// increments to every coefficient of the lower one.
pub fn random_ordered_pairs(count: usize, seed: u64) -> Vec<[ConductivityModel; 2]> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x006f_7264_6572_6564);
    (0..count)
        .map(|_| {
            let degree = rng.gen_range(0..=2usize);
            let lower: Vec<f64> = (0..=degree).map(|k| rng.gen_range(if k == degree { 0.2 } else { 0.0 }..2.0)).collect();
            let upper: Vec<f64> = lower.iter().map(|c| c + rng.gen_range(0.0..1.0)).collect();
            [
                ConductivityModel::polynomial(lower).expect("valid coefficients"),
                ConductivityModel::polynomial(upper).expect("valid coefficients"),
            ]
        })
        .collect()
}

struct Cell<'e> {
    label: String,
    assignment: Vec<usize>,
    models: &'e [ConductivityModel],
}

/// Runs the configured check matrix. `only` restricts the suite to one check id.
pub fn run_full_suite(
    experiment: &crate::config::Experiment,
    only: Option<&str>,
    timings: bool,
) -> Result<VerificationReport> {
    if let Some(id) = only {
        if !CHECK_IDS.contains(&id) {
            return Err(Error::Config(format!("unknown check id {id:?}; known ids: {}", CHECK_IDS.join(", "))));
        }
    }
    let exp = experiment;
    let config = &exp.config;
    let spec = &config.verify;
    let (mesh, solver, quadrature) = (&exp.mesh, &config.solver, &config.quadrature);
    let ne = mesh.num_elements();
    let base = &exp.digest;

    let hypotheses: Vec<bool> = exp
        .models
        .iter()
        .map(|m| validate_hypotheses(m, &default_grid(m.e0())).map(|r| r.all_pass()).unwrap_or(false))
        .collect();
    let single: Vec<usize> = if spec.models.is_empty() {
        (0..exp.models.len()).filter(|&i| hypotheses[i]).collect()
    } else {
        spec.models.iter().map(|id| exp.model_index(id)).collect::<Result<_>>()?
    };
    let mut cells: Vec<Cell> = single
        .iter()
        .map(|&i| Cell {
            label: format!("model={}", exp.model_ids[i]),
            assignment: vec![0; ne],
            models: std::slice::from_ref(&exp.models[i]),
        })
        .collect();
    if exp.assignment.iter().any(|&l| l != exp.assignment[0]) {
        cells.push(Cell { label: "phantom".into(), assignment: exp.assignment.clone(), models: &exp.models });
    }
    let declared: Vec<(String, usize, usize, Order)> = spec
        .pairs
        .iter()
        .map(|p| Ok((format!("pair={}:{}:{:?}", p.first, p.second, p.order), exp.model_index(&p.first)?, exp.model_index(&p.second)?, p.order)))
        .collect::<Result<_>>()?;
    let random = random_ordered_pairs(spec.random_pairs, config.seed);
    let trace_pairs = random_trace_pairs(mesh, spec.trials, config.seed);
    let excitations = &exp.excitations;

    let mut jobs: Vec<CheckJob> = Vec::new();
    let cell_id = |parts: &str| format!("{base}/{parts}");

    for (i, id) in exp.model_ids.iter().enumerate() {
        let model = &exp.models[i];
        jobs.push(CheckJob { id: "hypotheses", cell: cell_id(&format!("hypotheses/{id}")), run: Box::new(move || check_hypotheses(model)) });
    }

    let mut pair_models: Vec<(String, [&ConductivityModel; 2], Order)> = declared
        .iter()
        .map(|(label, a, b, order)| (label.clone(), [&exp.models[*a], &exp.models[*b]], *order))
        .collect();
    for (k, [a, b]) in random.iter().enumerate() {
        pair_models.push((format!("random-pair={k}"), [a, b], Order::Le));
    }
    for (label, [a, b], order) in pair_models {
        for id in ["energy-monotonicity", "avg-dtn-monotonicity"] {
            let cell = cell_id(&format!("{id}/{label}"));
            jobs.push(CheckJob {
                id,
                cell,
                run: Box::new(move || {
                    let first = Conductor::new(mesh, vec![0; ne], std::slice::from_ref(a))?;
                    let second = Conductor::new(mesh, vec![0; ne], std::slice::from_ref(b))?;
                    if id == "energy-monotonicity" {
                        check_energy_monotonicity(&first, &second, order, excitations, solver)
                    } else {
                        check_avg_dtn_monotonicity(&first, &second, order, excitations, quadrature, solver)
                    }
                }),
            });
        }
    }

    for cell in &cells {
        let conductor = move || Conductor::new(mesh, cell.assignment.clone(), cell.models);
        let label = &cell.label;
        jobs.push(CheckJob {
            id: "transfer",
            cell: cell_id(&format!("transfer/{label}")),
            run: Box::new(move || check_transfer(&conductor()?, excitations, quadrature, solver)),
        });
        jobs.push(CheckJob {
            id: "p-proportionality",
            cell: cell_id(&format!("p-proportionality/{label}")),
            run: Box::new(move || check_p_proportionality(&conductor()?, excitations, solver)),
        });
        for (t, (f, phi)) in trace_pairs.iter().enumerate() {
            jobs.push(CheckJob {
                id: "gateaux",
                cell: cell_id(&format!("gateaux/{label}/trial={t}")),
                run: Box::new(move || check_gateaux(&conductor()?, f, phi, &GATEAUX_STEPS, solver)),
            });
            jobs.push(CheckJob {
                id: "boundary-continuity",
                cell: cell_id(&format!("boundary-continuity/{label}/trial={t}")),
                run: Box::new(move || check_boundary_continuity(&conductor()?, f, phi, &CONTINUITY_STEPS, solver)),
            });
        }
        if let Some(f) = excitations.first() {
            let (trials, seed) = (spec.perturbations, config.seed);
            jobs.push(CheckJob {
                id: "dirichlet-principle",
                cell: cell_id(&format!("dirichlet-principle/{label}")),
                run: Box::new(move || check_dirichlet_principle(&conductor()?, f, trials, seed, solver)),
            });
        }
    }

    if let Some(id) = only {
        jobs.retain(|j| j.id == id);
    }
    Ok(VerificationReport { checks: run_checks(&jobs, timings) })
}
