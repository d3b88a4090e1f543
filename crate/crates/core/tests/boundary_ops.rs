use approx::assert_relative_eq;
use monotone_eit::boundary_ops::*;
use monotone_eit::constitutive::ConductivityModel;
use monotone_eit::excitation::{fourier_modes, random_smooth};
use monotone_eit::forward::{Conductor, SolverOptions, TraceFunction};
use monotone_eit::mesh::Mesh;
use monotone_eit::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn unit_gradient(mesh: &Mesh) -> TraceFunction {
    TraceFunction::projected(mesh, |p| p[0] - 0.5)
}

fn poly11() -> ConductivityModel {
    ConductivityModel::polynomial(vec![1.0, 1.0]).unwrap()
}

fn disk_phantom(mesh: &Mesh) -> Vec<usize> {
    (0..mesh.num_elements())
        .map(|e| {
            let c = mesh.centroid(e);
            usize::from((c[0] - 0.3).hypot(c[1] + 0.2) < 0.4)
        })
        .collect()
}

#[test]
fn dtn_unit_gradient_power() {
    let mesh = Mesh::unit_square(8);
    let models = [ConductivityModel::linear(1.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let f = unit_gradient(&mesh);
    assert_relative_eq!(dtn(&c, &f, &opts()).unwrap().pair(&f).unwrap(), 1.0, max_relative = 1e-12);
}

#[test]
fn dtn_of_zero_is_zero() {
    let mesh = Mesh::disk(1.0, 4);
    let models = [poly11()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let l = dtn(&c, &TraceFunction::zeros(&mesh), &opts()).unwrap();
    assert!(l.coefficients.iter().all(|&v| v == 0.0));
}

#[test]
fn dtn_two_material_strip() {
    let mesh = Mesh::unit_square(16);
    let a: Vec<usize> = (0..mesh.num_elements()).map(|e| usize::from(mesh.centroid(e)[0] >= 0.5)).collect();
    let models = [ConductivityModel::linear(1.0).unwrap(), ConductivityModel::linear(2.0).unwrap()];
    let c = Conductor::new(&mesh, a, &models).unwrap();
    let f = TraceFunction::projected(&mesh, |p| if p[0] < 0.5 { 4.0 / 3.0 * p[0] } else { (1.0 + 2.0 * p[0]) / 3.0 });
    assert!((dtn(&c, &f, &opts()).unwrap().pair(&f).unwrap() - 4.0 / 3.0).abs() < 1e-8);
}

#[test]
fn power_product_values() {
    let mesh = Mesh::unit_square(8);
    let f = unit_gradient(&mesh);
    let fy = TraceFunction::projected(&mesh, |p| p[1] - 0.5);

    let models = [ConductivityModel::monomial(1.0, 4.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    assert_relative_eq!(power_product(&dtn(&c, &f, &opts()).unwrap(), &f).unwrap(), 1.0, max_relative = 1e-10);

    let models = [ConductivityModel::linear(2.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let l = dtn(&c, &f, &opts()).unwrap();
    assert_relative_eq!(power_product(&l, &f).unwrap(), 2.0, max_relative = 1e-12);

    let models = [ConductivityModel::linear(1.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    assert!(power_product(&dtn(&c, &f, &opts()).unwrap(), &fy).unwrap().abs() < 1e-12);
}

#[test]
fn power_product_matches_volume_power() {
    let mesh = Mesh::disk(1.0, 8);
    let a = disk_phantom(&mesh);
    let models = [poly11(), ConductivityModel::monomial(0.5, 3.0).unwrap()];
    let c = Conductor::new(&mesh, a, &models).unwrap();
    let f = random_smooth(&mesh, 4, &mut ChaCha8Rng::seed_from_u64(5));
    let (u, _) = c.solve(&f, None, &opts()).unwrap();
    let l = c.boundary_flux(&u.values);
    let volume = c.power(&u.values);
    assert!((power_product(&l, &f).unwrap() - volume).abs() <= 1e-12 * volume.max(1.0));
    assert!(l.constant_pairing().abs() < 1e-12);
}

#[test]
fn power_product_rejects_mismatched_lengths() {
    let l = BoundaryFunctional::zeros(3);
    let phi = TraceFunction { values: vec![0.0; 4], zero_mean: true };
    assert!(matches!(power_product(&l, &phi), Err(Error::Structural(_))));
}

#[test]
fn avg_dtn_homogeneous_monomial() {
    let mesh = Mesh::unit_square(8);
    let models = [ConductivityModel::monomial(2.0, 3.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let f = unit_gradient(&mesh);
    let r = avg_dtn(&c, &f, &QuadratureOptions::default(), &opts()).unwrap();
    assert_relative_eq!(r.power, 2.0 / 3.0, max_relative = 1e-10);
    assert!((r.functional.pair(&f).unwrap() - r.power).abs() <= 1e-12);
    assert_eq!(r.quadrature.nodes.len(), 16);
    assert!(r.quadrature.estimate <= 1e-6);
}

#[test]
fn avg_dtn_polynomial_unit_gradient() {
    let mesh = Mesh::unit_square(8);
    let models = [poly11()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let r = avg_dtn(&c, &unit_gradient(&mesh), &QuadratureOptions::default(), &opts()).unwrap();
    assert_relative_eq!(r.power, 5.0 / 6.0, max_relative = 1e-10);
}

#[test]
fn avg_dtn_power_equals_energy_on_disk() {
    let mesh = Mesh::disk(1.0, 10);
    let a = disk_phantom(&mesh);
    let models = [poly11(), ConductivityModel::polynomial(vec![2.0, 0.5, 1.0]).unwrap()];
    let c = Conductor::new(&mesh, a, &models).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..3 {
        let f = random_smooth(&mesh, 5, &mut rng);
        let (_, report) = c.solve(&f, None, &opts()).unwrap();
        let r = avg_dtn(&c, &f, &QuadratureOptions { adaptive: true, ..Default::default() }, &opts()).unwrap();
        assert!((r.power - report.energy).abs() <= 1e-5 * report.energy);
    }
}

#[test]
fn avg_dtn_of_zero_is_zero() {
    let mesh = Mesh::unit_square(4);
    let models = [poly11()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let r = avg_dtn(&c, &TraceFunction::zeros(&mesh), &QuadratureOptions::default(), &opts()).unwrap();
    assert_eq!(r.power, 0.0);
}

#[test]
fn avg_dtn_reports_unconverged_quadrature() {
    let mesh = Mesh::unit_square(6);
    let models = [ConductivityModel::polynomial(vec![0.01, 0.0, 0.0, 5.0]).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let f = TraceFunction::projected(&mesh, |p| 3.0 * (p[0] * p[1] - p[1]));
    let q = QuadratureOptions { nodes: 1, tol: 1e-14, adaptive: false };
    match avg_dtn(&c, &f, &q, &opts()) {
        Err(Error::QuadratureNotConverged { nodes, estimate }) => {
            assert_eq!(nodes, 2);
            assert!(estimate > 1e-14);
        }
        other => panic!("expected quadrature failure, got {other:?}"),
    }
    let q = QuadratureOptions { nodes: 64, ..Default::default() };
    assert!(matches!(avg_dtn(&c, &f, &q, &opts()), Err(Error::Config(_))));
}

#[test]
fn adaptive_quadrature_meets_tight_tolerance() {
    let mesh = Mesh::unit_square(6);
    let models = [ConductivityModel::polynomial(vec![1.0, 0.0, 3.0]).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let f = TraceFunction::projected(&mesh, |p| (2.0 * p[0]).sin() + p[1] * p[1]);
    let q = QuadratureOptions { nodes: 2, tol: 1e-10, adaptive: true };
    let r = avg_dtn(&c, &f, &q, &opts()).unwrap();
    assert!(r.quadrature.estimate <= 1e-10);
    assert!(r.quadrature.nodes.len() > 4);
}

#[test]
fn weighted_power_form_values() {
    let mesh = Mesh::unit_square(8);
    let models = [ConductivityModel::linear(1.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let q = QuadratureOptions::default();
    assert_relative_eq!(weighted_power_form(&c, &unit_gradient(&mesh), &q, &opts()).unwrap(), 0.5, max_relative = 1e-12);
    assert_eq!(weighted_power_form(&c, &TraceFunction::zeros(&mesh), &q, &opts()).unwrap(), 0.0);
}

#[test]
fn weighted_power_form_equals_avg_power() {
    let mesh = Mesh::unit_square(8);
    let a: Vec<usize> = (0..mesh.num_elements()).map(|e| usize::from(mesh.centroid(e)[1] > 0.6)).collect();
    let models = [poly11(), ConductivityModel::polynomial(vec![0.5, 2.0]).unwrap()];
    let c = Conductor::new(&mesh, a, &models).unwrap();
    let q = QuadratureOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let f = random_smooth(&mesh, 4, &mut rng);
        let w = weighted_power_form(&c, &f, &q, &opts()).unwrap();
        let p = avg_dtn(&c, &f, &q, &opts()).unwrap().power;
        assert!((w - p).abs() <= 1e-10 * p, "{w} vs {p}");
    }
}

#[test]
fn warm_started_nodes_match_direct_solves() {
    let mesh = Mesh::unit_square(8);
    let models = [ConductivityModel::polynomial(vec![0.2, 1.0, 2.0]).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let f = TraceFunction::projected(&mesh, |p| (3.0 * p[0]).cos() * p[1]);
    let r = avg_dtn(&c, &f, &QuadratureOptions::default(), &opts()).unwrap();
    for (alpha, value) in r.quadrature.nodes.iter().zip(&r.quadrature.node_values) {
        let direct = dtn(&c, &f.scaled(*alpha), &opts()).unwrap().pair(&f).unwrap();
        assert!((direct - value).abs() <= 1e-9 * direct.abs().max(1e-12), "{alpha}: {direct} vs {value}");
    }
}

#[test]
fn gram_single_unit_gradient_row() {
    let mesh = Mesh::unit_square(8);
    let models = [ConductivityModel::linear(1.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let t = gram_record(&c, &[unit_gradient(&mesh)], Some(&QuadratureOptions::default()), &opts()).unwrap();
    assert_eq!(t.size, 1);
    assert_relative_eq!(t.entry(0, 0).avg_dtn_pairing.unwrap(), 0.5, max_relative = 1e-12);
    assert_relative_eq!(t.entry(0, 0).dtn_pairing.unwrap(), 1.0, max_relative = 1e-12);
}

#[test]
fn gram_empty_set() {
    let mesh = Mesh::unit_square(4);
    let models = [ConductivityModel::linear(1.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let t = gram_record(&c, &[], Some(&QuadratureOptions::default()), &opts()).unwrap();
    assert_eq!(t.size, 0);
    assert!(t.entries.is_empty());
}

#[test]
fn gram_requires_zero_mean() {
    let mesh = Mesh::unit_square(4);
    let models = [ConductivityModel::linear(1.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let raw = TraceFunction::sample(&mesh, |p| p[0]);
    assert!(matches!(gram_record(&c, &[raw], None, &opts()), Err(Error::Config(_))));
}

#[test]
fn gram_diagonal_matches_energy_on_disk() {
    let mesh = Mesh::disk(1.0, 10);
    let a = disk_phantom(&mesh);
    let models = [poly11(), ConductivityModel::linear(3.0).unwrap()];
    let c = Conductor::new(&mesh, a, &models).unwrap();
    let modes = fourier_modes(&mesh, 8);
    let q = QuadratureOptions { adaptive: true, ..Default::default() };
    let t = gram_record(&c, &modes, Some(&q), &opts()).unwrap();
    assert!(t.failures.is_empty());
    for (i, f) in modes.iter().enumerate() {
        let (_, report) = c.solve(f, None, &opts()).unwrap();
        let p = t.entry(i, i).avg_dtn_pairing.unwrap();
        assert!((p - report.energy).abs() <= 1e-5 * report.energy);
        let direct = avg_dtn(&c, f, &q, &opts()).unwrap().power;
        assert_eq!(p, direct);
    }
}

#[test]
fn gram_records_failures_as_missing_entries() {
    let mesh = Mesh::unit_square(6);
    let models = [ConductivityModel::monomial(1.0, 4.0).unwrap()];
    let c = Conductor::homogeneous(&mesh, &models).unwrap();
    let modes = fourier_modes(&mesh, 2);
    let strict = SolverOptions { max_iter: 1, fallback: false, ..Default::default() };
    let t = gram_record(&c, &modes, None, &strict).unwrap();
    assert_eq!(t.failures.len(), 2);
    assert!(t.entries.iter().all(|e| e.dtn_pairing.is_none()));
}

#[test]
fn monomial_dtn_is_p_times_average() {
    let mesh = Mesh::unit_square(12);
    for p in [2.0, 3.0, 4.0] {
        let models = [ConductivityModel::monomial(1.5, p).unwrap()];
        let c = Conductor::homogeneous(&mesh, &models).unwrap();
        let t = gram_record(&c, &fourier_modes(&mesh, 4), Some(&QuadratureOptions::default()), &opts()).unwrap();
        for i in 0..4 {
            let e = t.entry(i, i);
            let ratio = e.dtn_pairing.unwrap() / e.avg_dtn_pairing.unwrap();
            assert!((ratio - p).abs() <= 1e-8 * p, "p={p}: {ratio}");
        }
    }
}

#[test]
fn polynomial_dtn_is_not_proportional() {
    let mesh = Mesh::unit_square(12);
    let a: Vec<usize> = (0..mesh.num_elements()).map(|e| usize::from(mesh.centroid(e)[0] >= 0.5)).collect();
    let models = [poly11(), ConductivityModel::linear(0.5).unwrap()];
    let c = Conductor::new(&mesh, a, &models).unwrap();
    let t = gram_record(&c, &fourier_modes(&mesh, 8), Some(&QuadratureOptions::default()), &opts()).unwrap();
    let ratios: Vec<f64> = (0..8).map(|i| t.entry(i, i).dtn_pairing.unwrap() / t.entry(i, i).avg_dtn_pairing.unwrap()).collect();
    let spread = ratios.iter().cloned().fold(f64::MIN, f64::max) - ratios.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 1e-3, "{ratios:?}");
}
