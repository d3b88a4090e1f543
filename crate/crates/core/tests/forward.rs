use approx::assert_relative_eq;
use monotone_eit::constitutive::ConductivityModel;
use monotone_eit::forward::*;
use monotone_eit::mesh::Mesh;
use monotone_eit::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear(s: f64) -> ConductivityModel {
    ConductivityModel::linear(s).unwrap()
}

fn nodal(mesh: &Mesh, g: impl Fn(f64, f64) -> f64) -> PotentialField {
    PotentialField::from_nodal(mesh, mesh.nodes().iter().map(|p| g(p[0], p[1])).collect())
}

fn strip(mesh: &Mesh) -> Vec<usize> {
    (0..mesh.num_elements()).map(|e| usize::from(mesh.centroid(e)[0] >= 0.5)).collect()
}

#[test]
fn projection_of_constant_is_zero() {
    let mesh = Mesh::unit_square(8);
    let f = TraceFunction::projected(&mesh, |_| 5.0);
    assert!(f.values.iter().all(|v| v.abs() < 1e-12));
    assert!(f.zero_mean);
}

#[test]
fn projection_keeps_symmetric_trace() {
    let mesh = Mesh::unit_square(8);
    let raw = TraceFunction::sample(&mesh, |p| p[0] - 0.5);
    let f = project_zero_mean(&mesh, &raw.values).unwrap();
    for (a, b) in f.values.iter().zip(&raw.values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn projection_is_idempotent() {
    let mesh = Mesh::disk(1.0, 6);
    let once = TraceFunction::projected(&mesh, |p| p[0].exp() + p[1] * p[1]);
    let twice = project_zero_mean(&mesh, &once.values).unwrap();
    for (a, b) in once.values.iter().zip(&twice.values) {
        assert!((a - b).abs() <= 1e-15);
    }
    assert!(once.boundary_mean(&mesh).abs() < 1e-12);
}

#[test]
fn projection_rejects_wrong_length() {
    let mesh = Mesh::unit_square(4);
    assert!(matches!(project_zero_mean(&mesh, &[1.0, 2.0]), Err(Error::Structural(_))));
}

#[test]
fn energy_of_affine_fields() {
    let mesh = Mesh::unit_square(6);
    let a = vec![0; mesh.num_elements()];
    assert_relative_eq!(energy(&mesh, &a, &[linear(1.0)], &nodal(&mesh, |x, _| x - 0.5)), 0.5, max_relative = 1e-14);
    let mono = ConductivityModel::monomial(1.0, 4.0).unwrap();
    assert_relative_eq!(energy(&mesh, &a, &[mono], &nodal(&mesh, |x, _| x)), 0.25, max_relative = 1e-14);
    let poly = ConductivityModel::polynomial(vec![1.0, 1.0]).unwrap();
    assert_relative_eq!(energy(&mesh, &a, &[poly], &nodal(&mesh, |x, _| 2.0 * x)), 14.0 / 3.0, max_relative = 1e-14);
}

#[test]
fn gradient_vanishes_on_affine_fields() {
    let mesh = Mesh::unit_square(8);
    let a = vec![0; mesh.num_elements()];
    let poly = [ConductivityModel::polynomial(vec![1.0, 2.0, 0.5]).unwrap()];
    let g = energy_gradient(&mesh, &a, &poly, &nodal(&mesh, |x, y| 0.3 * x - 1.1 * y)).unwrap();
    assert_eq!(g.len(), mesh.num_dofs());
    assert!(g.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn gradient_matches_finite_difference() {
    let mesh = Mesh::unit_square(8);
    let a = strip(&mesh);
    let models = [
        ConductivityModel::polynomial(vec![1.0, 1.0]).unwrap(),
        ConductivityModel::monomial(2.0, 3.0).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let field = PotentialField::from_nodal(&mesh, u.clone());
    let grad = energy_gradient(&mesh, &a, &models, &field).unwrap();
    let dir: Vec<f64> = (0..mesh.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let shifted = |t: f64| {
        let mut w = u.clone();
        for (d, &v) in mesh.dof_nodes().iter().enumerate() {
            w[v] += t * dir[d];
        }
        energy(&mesh, &a, &models, &PotentialField::from_nodal(&mesh, w))
    };
    let eps = 1e-6;
    let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
    let exact: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
    assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "{fd} vs {exact}");
}

#[test]
fn linear_gradient_is_additive() {
    let mesh = Mesh::unit_square(6);
    let a = strip(&mesh);
    let models = [linear(1.0), linear(3.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u1: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u2: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
    let g = |u: &[f64]| energy_gradient(&mesh, &a, &models, &PotentialField::from_nodal(&mesh, u.to_vec())).unwrap();
    let (g1, g2, gs) = (g(&u1), g(&u2), g(&sum));
    for i in 0..gs.len() {
        assert!((gs[i] - g1[i] - g2[i]).abs() < 1e-12);
    }
}

#[test]
fn solve_reproduces_affine_linear() {
    let mesh = Mesh::unit_square(16);
    let a = vec![0; mesh.num_elements()];
    let f = TraceFunction::projected(&mesh, |p| p[0] - 0.5);
    let (u, report) = solve_forward(&mesh, &a, &[linear(1.0)], &f, &SolverOptions::default()).unwrap();
    for (p, v) in mesh.nodes().iter().zip(&u.values) {
        assert!((v - (p[0] - 0.5)).abs() < 1e-10);
    }
    assert_relative_eq!(report.energy, 0.5, max_relative = 1e-12);
    assert!(report.gradient_norm <= 1e-12 + 1e-10 * report.initial_gradient_norm);
}

#[test]
fn solve_reproduces_affine_polynomial() {
    let mesh = Mesh::unit_square(12);
    let a = vec![0; mesh.num_elements()];
    let models = [ConductivityModel::polynomial(vec![1.0, 1.0, 1.0]).unwrap()];
    let g = |p: [f64; 2]| 0.7 * p[0] - 1.3 * p[1];
    let f = TraceFunction::projected(&mesh, g);
    let shift = f.values[0] - g(mesh.nodes()[mesh.boundary_nodes()[0]]);
    let (u, _) = solve_forward(&mesh, &a, &models, &f, &SolverOptions::default()).unwrap();
    for (p, v) in mesh.nodes().iter().zip(&u.values) {
        assert!((v - g(*p) - shift).abs() < 1e-9);
    }
}

#[test]
fn two_material_strip() {
    let mesh = Mesh::unit_square(16);
    let a = strip(&mesh);
    let models = [linear(1.0), linear(2.0)];
    // Unit potential drop across the strip: the series-conductance profile, which the
    // Dirichlet data must follow on the top and bottom edges as well.
    let profile = |x: f64| if x < 0.5 { 4.0 / 3.0 * x } else { 2.0 / 3.0 + 2.0 / 3.0 * (x - 0.5) };
    let f = TraceFunction::projected(&mesh, |p| profile(p[0]));
    let (u, report) = solve_forward(&mesh, &a, &models, &f, &SolverOptions::default()).unwrap();
    assert!((report.energy - 2.0 / 3.0).abs() < 1e-8);
    assert!((energy(&mesh, &a, &models, &u) - 2.0 / 3.0).abs() < 1e-8);
    for (e, g) in u.gradients.iter().enumerate() {
        let slope = if a[e] == 0 { 4.0 / 3.0 } else { 2.0 / 3.0 };
        assert!((g[0] - slope).abs() < 1e-9 && g[1].abs() < 1e-9, "{g:?}");
    }
}

#[test]
fn solution_matches_trace_and_gradients_are_consistent() {
    let mesh = Mesh::disk(1.0, 6);
    let a = vec![0; mesh.num_elements()];
    let models = [ConductivityModel::monomial(1.0, 3.0).unwrap()];
    let f = TraceFunction::projected(&mesh, |p| p[0] * p[1] + p[0]);
    let (u, _) = solve_forward(&mesh, &a, &models, &f, &SolverOptions::default()).unwrap();
    for (s, &v) in mesh.boundary_nodes().iter().enumerate() {
        assert_eq!(u.values[v], f.values[s]);
    }
    for e in 0..mesh.num_elements() {
        let g = mesh.element_gradient(e, &u.values);
        assert!((g[0] - u.gradients[e][0]).abs() <= 1e-14 && (g[1] - u.gradients[e][1]).abs() <= 1e-14);
    }
}

#[test]
fn zero_trace_short_circuits() {
    let mesh = Mesh::unit_square(4);
    let a = vec![0; mesh.num_elements()];
    let (u, report) = solve_forward(&mesh, &a, &[linear(1.0)], &TraceFunction::zeros(&mesh), &SolverOptions::default()).unwrap();
    assert!(u.values.iter().all(|&v| v == 0.0));
    assert_eq!(report.iterations, 0);
}

#[test]
fn dirichlet_principle() {
    let mesh = Mesh::unit_square(10);
    let a = strip(&mesh);
    let models = [ConductivityModel::polynomial(vec![1.0, 1.0]).unwrap(), ConductivityModel::monomial(1.0, 3.0).unwrap()];
    let f = TraceFunction::projected(&mesh, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
    let (u, report) = solve_forward(&mesh, &a, &models, &f, &SolverOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let scale = 10f64.powf(rng.gen_range(-4.0..0.0));
        let mut w = u.values.clone();
        for &v in mesh.dof_nodes() {
            w[v] += scale * rng.gen_range(-1.0..1.0);
        }
        let perturbed = energy(&mesh, &a, &models, &PotentialField::from_nodal(&mesh, w));
        assert!(perturbed >= report.energy - 1e-10);
    }
}

#[test]
fn solution_is_unique_across_initial_guesses() {
    let mesh = Mesh::unit_square(10);
    let a = vec![0; mesh.num_elements()];
    let models = [ConductivityModel::polynomial(vec![0.5, 0.0, 1.0]).unwrap()];
    let f = TraceFunction::projected(&mesh, |p| (p[0] - p[1]).powi(3));
    let conductor = monotone_eit::forward::Conductor::new(&mesh, a, &models).unwrap();
    let options = SolverOptions::default();
    let (u1, _) = conductor.solve(&f, None, &options).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let init: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let (u2, _) = conductor.solve(&f, Some(&init), &options).unwrap();
    for (x, y) in u1.values.iter().zip(&u2.values) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn conjugate_gradient_branch_converges() {
    let mesh = Mesh::unit_square(6);
    let a = vec![0; mesh.num_elements()];
    let models = [ConductivityModel::polynomial(vec![1.0, 1.0]).unwrap()];
    let f = TraceFunction::projected(&mesh, |p| p[0] * p[0] - p[1]);
    let newton = solve_forward(&mesh, &a, &models, &f, &SolverOptions::default()).unwrap();
    let options = SolverOptions { ncg_only: true, tol_rel: 1e-9, ..Default::default() };
    let (u, report) = solve_forward(&mesh, &a, &models, &f, &options).unwrap();
    assert_eq!(report.branch, SolverBranch::Ncg);
    for (x, y) in u.values.iter().zip(&newton.0.values) {
        assert!((x - y).abs() < 1e-7);
    }
}

#[test]
fn iteration_cap_reports_nonconvergence() {
    let mesh = Mesh::unit_square(8);
    let a = vec![0; mesh.num_elements()];
    let models = [ConductivityModel::monomial(1.0, 4.0).unwrap()];
    let f = TraceFunction::projected(&mesh, |p| (5.0 * p[0]).sin() * p[1]);
    let options = SolverOptions { max_iter: 1, fallback: false, ..Default::default() };
    match solve_forward(&mesh, &a, &models, &f, &options) {
        Err(Error::NonConvergence { iterations, residual }) => {
            assert!(iterations >= 1);
            assert!(residual > 0.0);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn boundary_flux_pairings() {
    let mesh = Mesh::unit_square(8);
    let a = vec![0; mesh.num_elements()];
    let fx = TraceFunction::projected(&mesh, |p| p[0] - 0.5);
    let fy = TraceFunction::projected(&mesh, |p| p[1] - 0.5);
    let u = nodal(&mesh, |x, _| x - 0.5);
    let flux = boundary_flux(&mesh, &a, &[linear(1.0)], &u).unwrap();
    assert_relative_eq!(flux.pair(&fx).unwrap(), 1.0, max_relative = 1e-13);
    assert!(flux.pair(&fy).unwrap().abs() < 1e-12);
    assert!(flux.constant_pairing().abs() < 1e-12);

    let mono = [ConductivityModel::monomial(2.0, 3.0).unwrap()];
    let flux = boundary_flux(&mesh, &a, &mono, &u).unwrap();
    assert_relative_eq!(flux.pair(&fx).unwrap(), 2.0, max_relative = 1e-13);
}

#[test]
fn flux_balance_on_nonlinear_solution() {
    let mesh = Mesh::disk(1.0, 8);
    let a: Vec<usize> = (0..mesh.num_elements()).map(|e| usize::from(mesh.centroid(e)[0] > 0.2)).collect();
    let models = [ConductivityModel::polynomial(vec![1.0, 1.0]).unwrap(), linear(3.0)];
    let f = TraceFunction::projected(&mesh, |p| p[0].powi(3) + p[1]);
    let (u, _) = solve_forward(&mesh, &a, &models, &f, &SolverOptions::default()).unwrap();
    let flux = boundary_flux(&mesh, &a, &models, &u).unwrap();
    assert!(flux.constant_pairing().abs() < 1e-12);
}

#[test]
fn assignment_is_validated() {
    let mesh = Mesh::unit_square(4);
    let models = [linear(1.0)];
    assert!(Conductor::new(&mesh, vec![0; 3], &models).is_err());
    assert!(Conductor::new(&mesh, vec![1; mesh.num_elements()], &models).is_err());
}
