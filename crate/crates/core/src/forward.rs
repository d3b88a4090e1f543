//! Nonlinear steady-current forward problem: minimization of the Dirichlet
//! energy over piecewise-linear potentials with a prescribed boundary trace.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::boundary_ops::BoundaryFunctional;
use crate::constitutive::ConductivityModel;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::sparse::CholeskyFactor;

/// Boundary potential given by its values at the boundary nodes (in
/// [`Mesh::boundary_nodes`] order).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFunction {
    pub values: Vec<f64>,
    pub zero_mean: bool,
}

impl TraceFunction {
    /// Samples `g` at the boundary nodes without projecting.
    pub fn sample<F: Fn(Point) -> f64>(mesh: &Mesh, g: F) -> Self {
        let values = mesh.boundary_nodes().iter().map(|&v| g(mesh.nodes()[v])).collect();
        Self { values, zero_mean: false }
    }

    /// Samples `g` and projects onto zero boundary mean.
    pub fn projected<F: Fn(Point) -> f64>(mesh: &Mesh, g: F) -> Self {
        project_zero_mean(mesh, &Self::sample(mesh, g).values).expect("mesh has a boundary")
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self { values: vec![0.0; mesh.boundary_nodes().len()], zero_mean: true }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { values: self.values.iter().map(|v| alpha * v).collect(), zero_mean: self.zero_mean }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &TraceFunction) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect(),
            zero_mean: self.zero_mean && other.zero_mean,
        }
    }

    pub fn boundary_mean(&self, mesh: &Mesh) -> f64 {
        mesh.boundary_integral(&self.values) / mesh.boundary_length()
    }
}

/// Subtracts the boundary-mass-weighted mean.
pub fn project_zero_mean(mesh: &Mesh, raw: &[f64]) -> Result<TraceFunction> {
    let nb = mesh.boundary_nodes().len();
    if nb == 0 {
        return Err(Error::Structural("mesh has an empty boundary".into()));
    }
    if raw.len() != nb {
        return Err(Error::Structural(format!("trace has {} values for {nb} boundary nodes", raw.len())));
    }
    let mean = mesh.boundary_integral(raw) / mesh.boundary_length();
    Ok(TraceFunction { values: raw.iter().map(|v| v - mean).collect(), zero_mean: true })
}

/// Nodal potential with its per-element gradients and field magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub values: Vec<f64>,
    pub gradients: Vec<Point>,
    pub magnitudes: Vec<f64>,
}

impl PotentialField {
    pub fn from_nodal(mesh: &Mesh, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.num_nodes());
        let gradients: Vec<Point> = (0..mesh.num_elements()).map(|e| mesh.element_gradient(e, &values)).collect();
        let magnitudes = gradients.iter().map(|g| g[0].hypot(g[1])).collect();
        Self { values, gradients, magnitudes }
    }

    /// Boundary values, in trace order.
    pub fn trace(&self, mesh: &Mesh) -> TraceFunction {
        TraceFunction {
            values: mesh.boundary_nodes().iter().map(|&v| self.values[v]).collect(),
            zero_mean: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverBranch {
    Newton,
    Ncg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Residual norm at the harmonic extension of the trace; the relative tolerance scales with it.
    pub initial_gradient_norm: f64,
    pub energy: f64,
    pub backtracks: usize,
    pub branch: SolverBranch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Newton iteration cap.
    pub max_iter: usize,
    /// Cap on nonlinear conjugate-gradient steps after a Newton failure.
    pub max_ncg_iter: usize,
    /// Fall back to nonlinear CG when Newton stalls.
    pub fallback: bool,
    /// Skip Newton entirely and run nonlinear CG.
    pub ncg_only: bool,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Tangent evaluated at `max(E, regularization * E0)`.
    pub regularization: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_abs: 1e-12,
            tol_rel: 1e-10,
            max_iter: 200,
            max_ncg_iter: 2000,
            fallback: true,
            ncg_only: false,
            armijo: 1e-4,
            max_backtracks: 40,
            regularization: 1e-8,
        }
    }
}

/// Neumaier-compensated summation.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A mesh with a material assignment: the discrete conductor `sigma(x, E)`.
///
/// Caches the factorized frozen-conductivity stiffness matrix used for the
/// harmonic-extension initial guess.
#[derive(Debug)]
pub struct Conductor<'a> {
    mesh: &'a Mesh,
    assignment: Vec<usize>,
    models: &'a [ConductivityModel],
    frozen: OnceLock<Option<CholeskyFactor>>,
}

impl<'a> Conductor<'a> {
    pub fn new(mesh: &'a Mesh, assignment: Vec<usize>, models: &'a [ConductivityModel]) -> Result<Self> {
        if assignment.len() != mesh.num_elements() {
            return Err(Error::Structural(format!(
                "assignment has {} labels for {} elements",
                assignment.len(),
                mesh.num_elements()
            )));
        }
        if let Some(&bad) = assignment.iter().find(|&&l| l >= models.len()) {
            return Err(Error::Config(format!("assignment references missing model {bad}")));
        }
        Ok(Self { mesh, assignment, models, frozen: OnceLock::new() })
    }

    /// Every element uses `models[0]`.
    pub fn homogeneous(mesh: &'a Mesh, models: &'a [ConductivityModel]) -> Result<Self> {
        Self::new(mesh, vec![0; mesh.num_elements()], models)
    }

    pub fn mesh(&self) -> &'a Mesh {
        self.mesh
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn models(&self) -> &'a [ConductivityModel] {
        self.models
    }

    #[inline]
    fn model(&self, element: usize) -> &ConductivityModel {
        &self.models[self.assignment[element]]
    }

    /// Dirichlet energy of the piecewise-linear potential with nodal values `u`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let mesh = self.mesh;
        compensated_sum((0..mesh.num_elements()).map(|e| {
            let g = mesh.element_gradient(e, u);
            mesh.element_areas()[e] * self.model(e).energy_at(g[0].hypot(g[1]))
        }))
    }

    /// Weak-form residual against interior hat functions, in unknown order.
    pub fn energy_gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.mesh.num_dofs()];
        self.for_each_flux(u, |node, value| {
            if let Some(d) = self.mesh.node_dof(node) {
                r[d] += value;
            }
        });
        r
    }

    /// Calls `sink(node, area * sigma * grad u . grad lambda_node)` for every element-node pair.
    fn for_each_flux<F: FnMut(usize, f64)>(&self, u: &[f64], mut sink: F) {
        let mesh = self.mesh;
        for (e, tri) in mesh.elements().iter().enumerate() {
            let g = mesh.element_gradient(e, u);
            let mag = g[0].hypot(g[1]);
            let s = self.model(e).sigma_at(mag);
            if mag == 0.0 || !s.is_finite() {
                continue;
            }
            let scale = mesh.element_areas()[e] * s;
            let basis = mesh.basis_gradients(e);
            for k in 0..3 {
                sink(tri[k], scale * (g[0] * basis[k][0] + g[1] * basis[k][1]));
            }
        }
    }

    /// Discrete flux functional: `phi -> integral of sigma grad u . grad phi~` where
    /// `phi~` is the hat-function extension of boundary values.
    pub fn boundary_flux(&self, u: &[f64]) -> BoundaryFunctional {
        let mut coefficients = vec![0.0; self.mesh.boundary_nodes().len()];
        self.for_each_flux(u, |node, value| {
            if let Some(s) = self.mesh.boundary_slot(node) {
                coefficients[s] += value;
            }
        });
        BoundaryFunctional::new(coefficients)
    }

    /// Volume power `integral of J . E`.
    pub fn power(&self, u: &[f64]) -> f64 {
        let mesh = self.mesh;
        (0..mesh.num_elements())
            .map(|e| {
                let g = mesh.element_gradient(e, u);
                let mag = g[0].hypot(g[1]);
                mesh.element_areas()[e] * self.model(e).current_at(mag) * mag
            })
            .sum()
    }

    fn assemble_tangent(&self, u: &[f64], regularization: f64) -> crate::sparse::SkylineMatrix {
        let mesh = self.mesh;
        let mut k = mesh.stiffness_pattern().clone();
        for (e, tri) in mesh.elements().iter().enumerate() {
            let dofs = tri.map(|v| mesh.node_dof(v));
            if dofs.iter().all(Option::is_none) {
                continue;
            }
            let model = self.model(e);
            let g = mesh.element_gradient(e, u);
            let mag = g[0].hypot(g[1]);
            let et = mag.max(regularization * model.e0());
            let (s, jp) = model.tangent_at(et);
            let n = if mag > 0.0 { [g[0] / mag, g[1] / mag] } else { [0.0, 0.0] };
            let radial = jp - s;
            let t = [
                [s + radial * n[0] * n[0], radial * n[0] * n[1]],
                [radial * n[0] * n[1], s + radial * n[1] * n[1]],
            ];
            self.scatter(&mut k, e, &dofs, t);
        }
        k
    }

    fn scatter(&self, k: &mut crate::sparse::SkylineMatrix, e: usize, dofs: &[Option<usize>; 3], t: [[f64; 2]; 2]) {
        let area = self.mesh.element_areas()[e];
        let b = self.mesh.basis_gradients(e);
        for a in 0..3 {
            let Some(da) = dofs[a] else { continue };
            let tb = [t[0][0] * b[a][0] + t[0][1] * b[a][1], t[1][0] * b[a][0] + t[1][1] * b[a][1]];
            for c in 0..=a {
                let Some(dc) = dofs[c] else { continue };
                let v = area * (tb[0] * b[c][0] + tb[1] * b[c][1]);
                k.add(da, dc, v);
            }
        }
    }

    fn frozen_factor(&self) -> Option<&CholeskyFactor> {
        self.frozen
            .get_or_init(|| {
                let mesh = self.mesh;
                let mut k = mesh.stiffness_pattern().clone();
                for (e, tri) in mesh.elements().iter().enumerate() {
                    let dofs = tri.map(|v| mesh.node_dof(v));
                    let model = self.model(e);
                    let c = model.sigma_at(model.e0());
                    self.scatter(&mut k, e, &dofs, [[c, 0.0], [0.0, c]]);
                }
                k.cholesky()
            })
            .as_ref()
    }

    /// Nodal vector with boundary values `f` and interior values from the
    /// harmonic extension with conductivity frozen at `sigma(E0)`.
    pub fn harmonic_extension(&self, f: &TraceFunction) -> Vec<f64> {
        let mesh = self.mesh;
        let mut u = vec![0.0; mesh.num_nodes()];
        for (s, &v) in mesh.boundary_nodes().iter().enumerate() {
            u[v] = f.values[s];
        }
        if mesh.num_dofs() == 0 {
            return u;
        }
        let Some(factor) = self.frozen_factor() else { return u };
        // rhs = -K_IB f
        let mut rhs = vec![0.0; mesh.num_dofs()];
        for (e, tri) in mesh.elements().iter().enumerate() {
            let model = self.model(e);
            let c = model.sigma_at(model.e0());
            let area = mesh.element_areas()[e];
            let b = mesh.basis_gradients(e);
            for a in 0..3 {
                let Some(da) = mesh.node_dof(tri[a]) else { continue };
                for k in 0..3 {
                    if mesh.boundary_slot(tri[k]).is_some() {
                        let kab = area * c * (b[a][0] * b[k][0] + b[a][1] * b[k][1]);
                        rhs[da] -= kab * u[tri[k]];
                    }
                }
            }
        }
        let x = factor.solve(&rhs);
        for (d, &v) in mesh.dof_nodes().iter().enumerate() {
            u[v] = x[d];
        }
        u
    }

    /// Minimizes the Dirichlet energy with boundary trace `f`.
    ///
    /// `initial` optionally supplies interior values (a full nodal vector);
    /// boundary values are always overwritten by `f`.
    pub fn solve(
        &self,
        f: &TraceFunction,
        initial: Option<&[f64]>,
        options: &SolverOptions,
    ) -> Result<(PotentialField, SolveReport)> {
        let mesh = self.mesh;
        if f.values.len() != mesh.boundary_nodes().len() {
            return Err(Error::Structural(format!(
                "trace has {} values for {} boundary nodes",
                f.values.len(),
                mesh.boundary_nodes().len()
            )));
        }
        if f.is_zero() {
            let u = vec![0.0; mesh.num_nodes()];
            let report = SolveReport {
                iterations: 0,
                gradient_norm: 0.0,
                initial_gradient_norm: 0.0,
                energy: 0.0,
                backtracks: 0,
                branch: SolverBranch::Newton,
            };
            return Ok((PotentialField::from_nodal(mesh, u), report));
        }
        // The relative target is anchored at the harmonic extension so the
        // converged answer does not depend on the supplied initial guess.
        let harmonic = self.harmonic_extension(f);
        let reference = norm(&self.energy_gradient(&harmonic));
        let mut u = match initial {
            Some(init) => {
                if init.len() != mesh.num_nodes() {
                    return Err(Error::Structural("initial guess has the wrong length".into()));
                }
                let mut u = init.to_vec();
                for (s, &v) in mesh.boundary_nodes().iter().enumerate() {
                    u[v] = f.values[s];
                }
                u
            }
            None => harmonic,
        };

        let mut state = NewtonState::new(self, &mut u, options, reference);
        let outcome = if options.ncg_only { Err(()) } else { state.newton() };
        let converged = match outcome {
            Ok(()) => true,
            Err(()) if options.fallback || options.ncg_only => state.ncg(),
            Err(()) => false,
        };
        let report = state.report();
        if !converged {
            return Err(Error::NonConvergence { iterations: report.iterations, residual: report.gradient_norm });
        }
        Ok((PotentialField::from_nodal(mesh, u), report))
    }
}

struct NewtonState<'c, 'a, 'u> {
    conductor: &'c Conductor<'a>,
    u: &'u mut Vec<f64>,
    options: &'c SolverOptions,
    energy: f64,
    residual: Vec<f64>,
    residual_norm: f64,
    initial_norm: f64,
    target: f64,
    iterations: usize,
    backtracks: usize,
    branch: SolverBranch,
}

impl<'c, 'a, 'u> NewtonState<'c, 'a, 'u> {
    fn new(conductor: &'c Conductor<'a>, u: &'u mut Vec<f64>, options: &'c SolverOptions, reference: f64) -> Self {
        let energy = conductor.energy(u);
        let residual = conductor.energy_gradient(u);
        let residual_norm = norm(&residual);
        Self {
            conductor,
            u,
            options,
            energy,
            residual,
            residual_norm,
            initial_norm: reference,
            target: options.tol_abs + options.tol_rel * reference,
            iterations: 0,
            backtracks: 0,
            branch: SolverBranch::Newton,
        }
    }

    fn converged(&self) -> bool {
        self.residual_norm <= self.target
    }

    fn trial(&self, direction: &[f64], step: f64) -> Vec<f64> {
        let mut v = self.u.clone();
        for (d, &node) in self.conductor.mesh.dof_nodes().iter().enumerate() {
            v[node] += step * direction[d];
        }
        v
    }

    fn accept(&mut self, u: Vec<f64>, energy: f64, residual: Vec<f64>) {
        *self.u = u;
        self.energy = energy;
        self.residual_norm = norm(&residual);
        self.residual = residual;
    }

    /// Energy differences below this are treated as rounding noise.
    fn energy_noise(&self) -> f64 {
        64.0 * f64::EPSILON * self.energy.abs().max(f64::MIN_POSITIVE)
    }

    fn newton(&mut self) -> std::result::Result<(), ()> {
        while !self.converged() {
            if self.iterations >= self.options.max_iter {
                return Err(());
            }
            let tangent = self.conductor.assemble_tangent(self.u, self.options.regularization);
            let factor = tangent.cholesky().ok_or(())?;
            let direction: Vec<f64> = factor.solve(&self.residual).into_iter().map(|v| -v).collect();
            let slope = dot(&self.residual, &direction);
            if !(slope < 0.0) {
                return Err(());
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..=self.options.max_backtracks {
                let candidate = self.trial(&direction, step);
                let energy = self.conductor.energy(&candidate);
                if energy <= self.energy + self.options.armijo * step * slope {
                    let residual = self.conductor.energy_gradient(&candidate);
                    self.accept(candidate, energy, residual);
                    accepted = true;
                    break;
                }
                if energy - self.energy <= self.energy_noise() {
                    // Decrease is below energy resolution; judge by the residual instead.
                    let residual = self.conductor.energy_gradient(&candidate);
                    if norm(&residual) < self.residual_norm {
                        self.accept(candidate, energy, residual);
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
                self.backtracks += 1;
            }
            self.iterations += 1;
            if !accepted {
                return Err(());
            }
        }
        Ok(())
    }

    /// Polak-Ribiere+ nonlinear conjugate gradients with a secant line search
    /// on the directional derivative (the energy is convex along every line).
    fn ncg(&mut self) -> bool {
        self.branch = SolverBranch::Ncg;
        let n = self.residual.len();
        let mut direction: Vec<f64> = self.residual.iter().map(|g| -g).collect();
        let mut step_guess = 1.0 / self.residual_norm.max(f64::MIN_POSITIVE);
        let mut since_restart = 0usize;
        for _ in 0..self.options.max_ncg_iter {
            if self.converged() {
                return true;
            }
            let mut slope = dot(&self.residual, &direction);
            if !(slope < 0.0) || since_restart >= n.max(1) {
                direction = self.residual.iter().map(|g| -g).collect();
                slope = -self.residual_norm * self.residual_norm;
                since_restart = 0;
            }
            let Some((step, candidate, residual)) = self.line_search(&direction, slope, step_guess) else {
                return false;
            };
            let energy = self.conductor.energy(&candidate);
            if energy > self.energy + self.energy_noise() {
                return false;
            }
            let old = std::mem::take(&mut self.residual);
            let old_sq = self.residual_norm * self.residual_norm;
            self.accept(candidate, energy, residual);
            let beta = (dot(&self.residual, &self.residual) - dot(&self.residual, &old)) / old_sq;
            let beta = beta.max(0.0);
            for (d, g) in direction.iter_mut().zip(&self.residual) {
                *d = -g + beta * *d;
            }
            step_guess = step;
            since_restart += 1;
            self.iterations += 1;
        }
        self.converged()
    }

    fn directional(&self, direction: &[f64], step: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let candidate = self.trial(direction, step);
        let residual = self.conductor.energy_gradient(&candidate);
        (dot(&residual, direction), candidate, residual)
    }

    fn line_search(&mut self, direction: &[f64], slope0: f64, guess: f64) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        // Bracket the root of phi'(t) = grad F(u + t d) . d, phi'(0) = slope0 < 0.
        let (mut lo, mut dlo) = (0.0, slope0);
        let mut hi = guess.max(f64::MIN_POSITIVE);
        let mut probe = self.directional(direction, hi);
        let mut expansions = 0;
        while probe.0 < 0.0 {
            lo = hi;
            dlo = probe.0;
            if probe.0.abs() <= 0.1 * slope0.abs() {
                return Some((hi, probe.1, probe.2));
            }
            hi *= 2.0;
            expansions += 1;
            if expansions > 60 {
                return None;
            }
            probe = self.directional(direction, hi);
        }
        let mut dhi = probe.0;
        let mut best = probe;
        let mut best_t = hi;
        // Illinois regula falsi.
        let mut side = 0i32;
        for _ in 0..60 {
            if best.0.abs() <= 0.1 * slope0.abs() {
                break;
            }
            let t = (lo * dhi - hi * dlo) / (dhi - dlo);
            let t = if t.is_finite() && t > lo && t < hi { t } else { 0.5 * (lo + hi) };
            self.backtracks += 1;
            let p = self.directional(direction, t);
            if p.0 < 0.0 {
                lo = t;
                dlo = p.0;
                if side == -1 {
                    dhi *= 0.5;
                }
                side = -1;
            } else {
                hi = t;
                dhi = p.0;
                if side == 1 {
                    dlo *= 0.5;
                }
                side = 1;
            }
            best = p;
            best_t = t;
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        if best_t > 0.0 {
            Some((best_t, best.1, best.2))
        } else {
            None
        }
    }

    fn report(&self) -> SolveReport {
        SolveReport {
            iterations: self.iterations,
            gradient_norm: self.residual_norm,
            initial_gradient_norm: self.initial_norm,
            energy: self.energy,
            backtracks: self.backtracks,
            branch: self.branch,
        }
    }
}

/// Dirichlet energy `sum over elements of area * Q(|grad u|)`.
pub fn energy(mesh: &Mesh, assignment: &[usize], models: &[ConductivityModel], u: &PotentialField) -> f64 {
    compensated_sum(
        u.magnitudes
            .iter()
            .zip(assignment)
            .zip(mesh.element_areas())
            .map(|((&e, &label), area)| area * models[label].energy_at(e)),
    )
}

/// Energy gradient with respect to the interior nodal values, in unknown order.
pub fn energy_gradient(
    mesh: &Mesh,
    assignment: &[usize],
    models: &[ConductivityModel],
    u: &PotentialField,
) -> Result<Vec<f64>> {
    Ok(Conductor::new(mesh, assignment.to_vec(), models)?.energy_gradient(&u.values))
}

pub fn solve_forward(
    mesh: &Mesh,
    assignment: &[usize],
    models: &[ConductivityModel],
    f: &TraceFunction,
    options: &SolverOptions,
) -> Result<(PotentialField, SolveReport)> {
    Conductor::new(mesh, assignment.to_vec(), models)?.solve(f, None, options)
}

pub fn boundary_flux(
    mesh: &Mesh,
    assignment: &[usize],
    models: &[ConductivityModel],
    u: &PotentialField,
) -> Result<BoundaryFunctional> {
    Ok(Conductor::new(mesh, assignment.to_vec(), models)?.boundary_flux(&u.values))
}
