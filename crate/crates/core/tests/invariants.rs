use lls_core::mixing::{histogram, wasserstein1_1d, Distribution1D, MixingEstimate};
use lls_core::moments::MomentSource;
use lls_core::pattern::{substitute, Level, Pattern, Schema};
use lls_core::simulator::{random_basis, ExactModel, MixingSpec, PointMass};
use lls_core::solver::{solve_higher_moments, SolverOptions};
use nalgebra::DVector;
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = (Schema, u64, Vec<(f64, f64)>, Vec<Level>)> {
    (
        prop::collection::vec(2u16..=3, 4..8),
        any::<u64>(),
        prop::collection::vec((0.0f64..1.0, 0.1f64..1.0), 1..4),
    )
        .prop_flat_map(|(levels, seed, atoms)| {
            let schema = Schema::new(levels.clone()).unwrap();
            let pattern = levels
                .iter()
                .map(|&l| prop_oneof![Just(0 as Level), 1..=l])
                .collect::<Vec<_>>();
            (Just(schema), Just(seed), Just(atoms), pattern)
        })
}

fn mixing(atoms: &[(f64, f64)]) -> MixingSpec {
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    MixingSpec::PointMasses {
        points: atoms
            .iter()
            .map(|&(g1, w)| PointMass {
                g: vec![g1, 1.0 - g1],
                weight: w / total,
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_moments_marginalize((schema, seed, atoms, p) in model_strategy()) {
        let basis = random_basis(&schema, 2, seed, 0.0).unwrap();
        let model = ExactModel::new(&basis, &mixing(&atoms)).unwrap();
        let p = Pattern::from(p);
        let mp = model.moment(&p).unwrap();
        for j in p.zero_positions() {
            let sum: f64 = (1..=schema.level_count(j))
                .map(|l| model.moment(&substitute(&schema, &p, j, l as Level).unwrap()).unwrap())
                .sum();
            prop_assert!((sum - mp).abs() < 1e-14);
        }
    }

    #[test]
    fn solved_moments_match_oracle((schema, seed, atoms, p) in model_strategy()) {
        let p = Pattern::from(p);
        prop_assume!(p.zero_count() >= 2);
        let basis = random_basis(&schema, 2, seed, 0.0).unwrap();
        let model = ExactModel::new(&basis, &mixing(&atoms)).unwrap();
        let got = solve_higher_moments(&basis, &model, &p, 2, &SolverOptions::default()).unwrap();
        prop_assert!((got.expectations.sum() - 1.0).abs() < 1e-12);
        for (v, x) in &got.values {
            let truth = model.conditional_moment(&p, v).unwrap();
            prop_assert!((x - truth).abs() < 1e-8, "{} {} {}", v, x, truth);
        }
    }

    #[test]
    fn histogram_conserves_mass(
        xs in prop::collection::vec((-0.5f64..1.5, 1u64..50), 1..80),
        bins in 1usize..40,
        lo in -0.2f64..0.5,
        width in 0.05f64..1.5,
    ) {
        let total = xs.iter().map(|x| x.1).sum();
        let pts = xs
            .iter()
            .enumerate()
            .map(|(i, &(x, c))| (Pattern::from(vec![i as Level]), DVector::from_vec(vec![x, 1.0 - x]), c))
            .collect();
        let est = MixingEstimate::from_counts(pts, total).unwrap();
        let h = histogram(&est, 0, bins, lo, lo + width).unwrap();
        prop_assert!((h.in_range_mass() + h.below + h.above - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_is_a_metric(
        a in prop::collection::vec((0.0f64..1.0, 0.1f64..1.0), 1..10),
        b in prop::collection::vec((0.0f64..1.0, 0.1f64..1.0), 1..10),
        shift in -0.5f64..0.5,
    ) {
        let da = Distribution1D::atoms(a.iter().copied()).normalized();
        let db = Distribution1D::atoms(b.iter().copied()).normalized();
        let moved = Distribution1D::atoms(a.iter().map(|&(x, w)| (x + shift, w))).normalized();
        prop_assert!(wasserstein1_1d(&da, &da).abs() < 1e-12);
        prop_assert!((wasserstein1_1d(&da, &db) - wasserstein1_1d(&db, &da)).abs() < 1e-12);
        prop_assert!((wasserstein1_1d(&da, &moved) - shift.abs()).abs() < 1e-9);
    }
}
