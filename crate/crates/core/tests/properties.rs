use approx::assert_relative_eq;
use proptest::prelude::*;

use ricci_lab::battery::{battery, set_pairs, trig_field};
use ricci_lab::entropy::pointed_entropy_curve;
use ricci_lab::flow::{evolve_conformal_torus, make_flat_torus, make_shrinking_sphere, ConformalFlowOptions};
use ricci_lab::geometry::{GridMesh, Mesh, SphereMesh};
use ricci_lab::heatkernel::{image_sum_kernel, series_kernel, solve_conjugate_kernel, KernelOptions};
use ricci_lab::inequalities::TestFunction;
use ricci_lab::io::{read_history, write_history};
use ricci_lab::numerics::integrate_samples;
use ricci_lab::regularity::{eps_star, implication_violations, regularity_scale};
use ricci_lab::report::{Report, Status};

fn probability(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn report_passes_iff_slack_within_tolerance(lhs in -10.0..10.0f64, rhs in -10.0..10.0f64, tol in 0.0..1.0f64) {
        let r = Report::upper("p", lhs, rhs, tol);
        prop_assert_eq!(r.slack, rhs - lhs);
        prop_assert_eq!(r.passed(), rhs - lhs >= -tol);
        let e = Report::equal("e", lhs, rhs, tol);
        prop_assert_eq!(e.status == Status::Pass, (lhs - rhs).abs() <= tol);
        let back: Report = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn test_functions_meet_their_normalization(
        phi in prop::collection::vec(-5.0..5.0f64, 8..40),
        seed in any::<u64>(),
    ) {
        let raw: Vec<f64> = (0..phi.len()).map(|i| 1.0 + ((seed >> (i % 60)) & 7) as f64).collect();
        let nu = probability(&raw);
        prop_assert!(TestFunction::centered(&phi, &nu).normalization_defect(&nu) < 1e-12);
        if phi.iter().any(|v| v.abs() > 1e-3) {
            let p = TestFunction::unit_mass(&phi, &nu).unwrap();
            prop_assert!(p.normalization_defect(&nu) < 1e-12);
            prop_assert!(p.values.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn eps_star_is_the_largest_admissible_eps(
        points in prop::collection::vec((-3.0..1.0f64, 0.0..4.0f64), 1..30),
    ) {
        let eps = eps_star(&points);
        prop_assert!(eps >= 0.0);
        prop_assert_eq!(implication_violations(&points, eps), 0);
        prop_assert!(implication_violations(&points, eps.next_up()) > 0);
    }

    #[test]
    fn set_pairs_are_disjoint_and_non_empty(seed in any::<u64>(), res in 12usize..40, sphere in any::<bool>()) {
        let mesh = if sphere {
            Mesh::Sphere(SphereMesh::new(res).unwrap())
        } else {
            Mesh::Grid(GridMesh::new(2, res, 5.0).unwrap())
        };
        for (a, b) in set_pairs(&mesh, 12, Some(0), seed) {
            prop_assert!(!a.is_empty() && !b.is_empty());
            prop_assert!(a.iter().all(|i| b.binary_search(i).is_err()));
            prop_assert!(a.iter().chain(&b).all(|&i| i < mesh.len()));
        }
    }

    #[test]
    fn quadrature_of_positive_samples_is_positive(
        gaps in prop::collection::vec(0.01..2.0f64, 2..20),
        values in prop::collection::vec(0.0..3.0f64, 21),
    ) {
        let mut x = vec![0.0];
        for g in &gaps {
            x.push(x.last().unwrap() + g);
        }
        let y = &values[..x.len()];
        prop_assert!(integrate_samples(&x, y) >= 0.0);
        // Linear data integrates exactly on any spacing.
        let line: Vec<f64> = x.iter().map(|t| 2.0 - 0.5 * t).collect();
        let end = *x.last().unwrap();
        prop_assert!((integrate_samples(&x, &line) - (2.0 * end - 0.25 * end * end)).abs() < 1e-9 * (1.0 + end * end));
    }

    #[test]
    fn regularity_scale_grows_with_the_horizon(t1 in 0.05..0.9f64, dt in 0.0..0.5f64) {
        let t2 = t1 + dt;
        let short = make_shrinking_sphere(2.0, t1, 16, 8).unwrap();
        let long = make_shrinking_sphere(2.0, t2, 16, 8).unwrap();
        prop_assert!(regularity_scale(&short, 0, 0.0).unwrap() <= regularity_scale(&long, 0, 0.0).unwrap());
        let flat = make_flat_torus(2, 4.0, 8, t2).unwrap();
        prop_assert!(regularity_scale(&flat, 3, 0.0).unwrap() >= regularity_scale(&short, 0, 0.0).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn entropies_are_invariant_under_parabolic_rescaling(lambda in 0.3..4.0f64, r0 in 1.5..3.0f64) {
        let flow = make_shrinking_sphere(r0, 1.0, 32, 16).unwrap();
        let k = series_kernel(&flow, 0.0, &[-0.8, -0.4]).unwrap();
        let a = pointed_entropy_curve(&flow, &k).unwrap();
        let scaled = flow.parabolic_rescale(lambda).unwrap();
        let b = pointed_entropy_curve(&scaled, &k.rescale(lambda)).unwrap();
        for j in 0..a.s.len() {
            prop_assert!((a.w[j] - b.w[j]).abs() <= 1e-10 * a.w[j].abs());
            prop_assert!((a.nash[j] - b.nash[j]).abs() <= 1e-10 * a.nash[j].abs());
        }
        let r = regularity_scale(&flow, 0, 0.0).unwrap();
        let rs = regularity_scale(&scaled, 0, 0.0).unwrap();
        prop_assert!((r - lambda * rs).abs() <= 1e-12 * r);
    }

    #[test]
    fn history_round_trips_exactly(seed in any::<u64>(), res in 8usize..20) {
        let mesh = GridMesh::new(2, res, 2.0).unwrap();
        let u0: Vec<f64> = trig_field(&mesh, 2, seed).iter().map(|v| 0.2 * v).collect();
        let flow = evolve_conformal_torus(&mesh, &u0, 0.2, &ConformalFlowOptions::default()).unwrap();
        let k = solve_conjugate_kernel(&flow, seed as usize % mesh.len(), &KernelOptions { per_doubling: 4, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_history(&mut buf, &flow, std::slice::from_ref(&k)).unwrap();
        let (back, kernels) = read_history(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back, flow);
        prop_assert_eq!(kernels, vec![k]);
    }
}

#[test]
fn flat_image_sum_has_unit_mass_and_vanishing_entropy() {
    let flow = make_flat_torus(2, 24.0, 64, 1.0).unwrap();
    let k = image_sum_kernel(&flow, 5, 0.0, &[-1.0, -0.3]).unwrap();
    let c = pointed_entropy_curve(&flow, &k).unwrap();
    for j in 0..2 {
        let ks = k.view(&flow, j).unwrap();
        assert_relative_eq!(ks.mass(), 1.0, epsilon = 1e-12);
        assert!(c.w[j].abs() < 1e-8 && c.nash[j].abs() < 1e-8, "{c:?}");
    }
}

#[test]
fn battery_is_seeded() {
    let mesh = Mesh::Grid(GridMesh::new(2, 16, 2.0).unwrap());
    assert_eq!(battery(&mesh, 4, 3, 9), battery(&mesh, 4, 3, 9));
    assert_ne!(battery(&mesh, 4, 3, 9), battery(&mesh, 4, 3, 10));
}
