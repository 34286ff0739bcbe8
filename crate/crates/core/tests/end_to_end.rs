use lls_core::ingest::{frequency_table, read_csv};
use lls_core::mixing::histogram;
use lls_core::moment_matrix::{build_moment_matrix, computational_rank};
use lls_core::pattern::enumerate_patterns;
use lls_core::pipeline::{estimate, evaluate, EstimateOptions};
use lls_core::simulator::{
    exact_moments, read_latent_csv, sample, write_latent_csv, BasisSpec, GeneratorConfig, MixingSpec,
};
use lls_core::solver::{solve_expectations, SolverOptions};
use lls_core::subspace::{fit_subspace, Subspace};
use lls_core::{Basis, Schema};

fn config(j: usize, n: usize, mixing: MixingSpec) -> GeneratorConfig {
    GeneratorConfig {
        schema: Schema::binary(j).unwrap(),
        k: 2,
        basis: BasisSpec::Random {
            seed: None,
            min_separation: 0.3,
        },
        mixing,
        n,
        seed: 42,
    }
}

#[test]
fn csv_round_trip_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let s = sample(&config(200, 5000, MixingSpec::atoms_on_g1(&[(0.15, 0.3), (0.85, 0.7)]))).unwrap();
    let data = dir.path().join("data.csv");
    let latent = dir.path().join("latent.csv");
    s.dataset.write_csv(&data).unwrap();
    write_latent_csv(&latent, &s.latent).unwrap();
    let ds = read_csv(&data, s.dataset.schema()).unwrap();
    assert_eq!(ds, s.dataset);
    let back = read_latent_csv(&latent).unwrap();
    assert_eq!(back, s.latent);

    let est = estimate::<f64>(&ds, &EstimateOptions::new(2)).unwrap();
    let ev = evaluate(&est.subspace, &est.individuals, &s.basis, &back).unwrap();
    assert!(ev.max_angle < 0.15, "{ev:?}");
    assert!(ev.w1_g1.unwrap() < 0.08, "{ev:?}");
    let h = histogram(&est.mixing_in(&s.basis).unwrap(), 0, 20, 0.0, 1.0).unwrap();
    assert!((h.in_range_mass() + h.below + h.above - 1.0).abs() < 1e-12);
    let peaks = h.peaks();
    let mut two = [h.center(peaks[0]), h.center(peaks[1])];
    two.sort_by(f64::total_cmp);
    assert!((two[0] - 0.15).abs() <= 0.1 && (two[1] - 0.85).abs() <= 0.1, "{two:?}");
}

#[test]
fn exact_path_recovers_truth() {
    let cfg = config(12, 1, MixingSpec::atoms_on_g1(&[(0.2, 0.5), (0.7, 0.5)]));
    let truth = cfg.build_basis().unwrap();
    let schema = truth.schema().clone();
    let table = exact_moments(&truth, &cfg.mixing, &enumerate_patterns(&schema, 2)).unwrap();
    let m = build_moment_matrix::<f64, _>(&table, 1).unwrap();
    assert_eq!(computational_rank(&m, 1e-9).unwrap(), 2);
    let fit: Basis = fit_subspace(&m, 2).unwrap();
    let angle = fit.principal_angles(&truth).into_iter().fold(0.0, f64::max);
    assert!(angle < 1e-7, "{angle}");

    // expectations in the true basis equal the weighted atoms
    let zero = lls_core::Pattern::zeros(12);
    let g = solve_expectations(&fit, &table, &zero, &SolverOptions::default()).unwrap();
    let in_truth = fit.coordinates_in(&truth) * &g.expectations;
    assert!((in_truth[0] - 0.45).abs() < 1e-7, "{in_truth}");
}

#[test]
fn single_precision_pipeline() {
    let s = sample(&config(40, 4000, MixingSpec::atoms_on_g1(&[(0.1, 0.5), (0.9, 0.5)]))).unwrap();
    let est = estimate::<f32>(&s.dataset, &EstimateOptions::new(2)).unwrap();
    assert!(est.subspace.row_sum_error() < 1e-5);
    let w = est.mixing.total_weight();
    assert!((w - 1.0).abs() < 1e-5, "{w}");
    let truth: Subspace<f32> = lls_core::simulator::cast_basis(&s.basis);
    let angle = est.subspace.principal_angles(&truth).into_iter().fold(0.0f32, f32::max);
    assert!(angle < 0.2, "{angle}");
}

#[test]
fn frequency_table_matches_direct_counts() {
    let s = sample(&config(8, 1000, MixingSpec::atoms_on_g1(&[(0.5, 1.0)]))).unwrap();
    let pats = enumerate_patterns(s.dataset.schema(), 2);
    let table = frequency_table(&s.dataset, &pats);
    for p in &pats {
        let direct = s.dataset.rows().filter(|r| p.matches(r)).count() as u64;
        assert_eq!(table.count(p), Some(direct));
    }
}
