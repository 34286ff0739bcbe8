//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use lls_core::mixing::{histogram, wasserstein1_1d, MixingEstimate};
use lls_core::moment_matrix::{build_moment_matrix, complete_matrix};
use lls_core::moments::{ExactMoments, MomentSource};
use lls_core::pattern::{enumerate_patterns, pattern_add, substitute, Level, Pattern, Schema};
use lls_core::pipeline::{dataset_matrix, estimate, restored_g1, EstimateOptions};
use lls_core::simulator::{random_basis, sample, BasisSpec, ExactModel, GeneratorConfig, MixingSpec, PointMass};
use lls_core::solver::{
    main_equation_residual, orders_of_degree, solve_expectations, Averaging, FullPatternScorer, MomentSolver,
    SolverOptions,
};
use lls_core::subspace::{check_identifiability, fit_subspace};
use nalgebra::DVector;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const ORACLE_TOL: f64 = 1e-10;
const COMPLETION_TOL: f64 = 1e-8;
const ANGLE_LIMIT: f64 = 0.05;
const ATOM_WINDOW: f64 = 0.05;
const ATOM_MASS_MIN: f64 = 0.70;
const W1_LIMIT: f64 = 0.05;
const NORMALIZATION_TOL: f64 = 1e-12;
const PROPERTY_INSTANCES: u64 = 200;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn two_point(j: usize, seed: u64) -> (Schema, lls_core::Basis, MixingSpec) {
    let schema = Schema::binary(j).unwrap();
    let basis = random_basis(&schema, 2, seed, 0.3).unwrap();
    let mix = MixingSpec::atoms_on_g1(&[(0.2, 0.4), (0.75, 0.6)]);
    (schema, basis, mix)
}

fn oracle_identity() -> Outcome {
    let t = Instant::now();
    let (schema, basis, mix) = two_point(5, 2024);
    let model = ExactModel::new(&basis, &mix).map_err(|e| e.to_string())?;
    let mut solver = MomentSolver::new(&basis, &model, SolverOptions::default());
    let (mut eqs, mut worst_eq, mut worst_g) = (0usize, 0.0f64, 0.0f64);
    for p in enumerate_patterns(&schema, 4) {
        let zeros = p.zero_positions();
        for n in 0..=2u32 {
            // g^{v + e_k} at the pattern needs one zero per degree
            if zeros.len() < n as usize + 1 {
                continue;
            }
            for v in orders_of_degree(2, n) {
                for &j in &zeros {
                    for level in 1..=2 {
                        let r =
                            main_equation_residual(&mut solver, &p, j, level, &v).map_err(|e| format!("{p}: {e}"))?;
                        worst_eq = worst_eq.max(r.abs());
                        eqs += 1;
                    }
                }
            }
            let (vals, _) = solver.degree(&p, n + 1).map_err(|e| e.to_string())?;
            for (v, x) in orders_of_degree(2, n + 1).iter().zip(vals) {
                let truth = model.conditional_moment(&p, v).map_err(|e| e.to_string())?;
                worst_g = worst_g.max((x - truth).abs());
            }
        }
    }
    let elapsed = t.elapsed();
    ensure(eqs > 0, "no admissible equations")?;
    ensure(worst_eq < ORACLE_TOL, format!("equation residual {worst_eq:e}"))?;
    ensure(worst_g < ORACLE_TOL, format!("moment error {worst_g:e}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "{eqs} equations, max residual {worst_eq:.2e}, max moment error {worst_g:.2e}, {elapsed:.2?}"
    ))
}

fn completion_exactness() -> Outcome {
    let t = Instant::now();
    let (_, basis, mix) = two_point(10, 77);
    let model = ExactModel::new(&basis, &mix).map_err(|e| e.to_string())?;
    let m = build_moment_matrix::<f64, _>(&model, 2).map_err(|e| e.to_string())?;
    let masked = m.unknown_count();
    let truth = model.completed_matrix(m.col_patterns());
    let (done, report) = complete_matrix(&m, 2).map_err(|e| e.to_string())?;
    ensure(done.is_complete(), "entries left unknown")?;
    ensure(report.filled_entries.len() == masked, "not every masked entry filled")?;
    let err = (done.values() - &truth).abs().max();
    ensure(err < COMPLETION_TOL, format!("max error {err:e}"))?;
    let (again, second) = complete_matrix(&done, 2).map_err(|e| e.to_string())?;
    ensure(second.filled_entries.is_empty(), "second pass filled entries")?;
    ensure(again.values() == done.values(), "second pass changed values")?;
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "{masked} masked entries, max error {err:.2e}, idempotent, {elapsed:.2?}"
    ))
}

fn config(j: usize, n: usize, mixing: MixingSpec, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        schema: Schema::binary(j).unwrap(),
        k: 2,
        basis: BasisSpec::Random {
            seed: None,
            min_separation: 0.3,
        },
        mixing,
        n,
        seed,
    }
}

fn subspace_consistency() -> Outcome {
    // calibrated medians (seeds 100..110): 0.271, 0.0843, 0.0279
    let t = Instant::now();
    let mut medians = Vec::new();
    for n in [1_000usize, 10_000, 100_000] {
        let mut angles: Vec<f64> = (0..10)
            .map(|r| {
                let s = sample(&config(
                    100,
                    n,
                    MixingSpec::atoms_on_g1(&[(0.1, 0.5), (0.4, 0.5)]),
                    100 + r,
                ))
                .unwrap();
                let m = dataset_matrix::<f64>(&s.dataset, 1).unwrap();
                let est = fit_subspace(&m, 2).unwrap();
                est.principal_angles(&s.basis).into_iter().fold(0.0, f64::max)
            })
            .collect();
        angles.sort_by(f64::total_cmp);
        medians.push(0.5 * (angles[4] + angles[5]));
    }
    let elapsed = t.elapsed();
    ensure(
        medians.windows(2).all(|w| w[1] < w[0]),
        format!("medians not decreasing: {medians:?}"),
    )?;
    ensure(medians[2] < ANGLE_LIMIT, format!("median at N = 1e5 is {}", medians[2]))?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(format!(
        "median angles {:.4} / {:.4} / {:.4} rad, {elapsed:.2?}",
        medians[0], medians[1], medians[2]
    ))
}

fn two_atoms() -> Outcome {
    // calibrated mass near the atoms (seeds 1..3): 0.846, 0.854, 0.852
    let t = Instant::now();
    let atoms = [0.1, 0.4];
    let s = sample(&config(
        1000,
        10_000,
        MixingSpec::atoms_on_g1(&[(0.1, 0.5), (0.4, 0.5)]),
        1,
    ))
    .map_err(|e| e.to_string())?;
    let est = estimate::<f64>(&s.dataset, &EstimateOptions::new(2)).map_err(|e| e.to_string())?;
    let restored = est.mixing_in(&s.basis).map_err(|e| e.to_string())?;
    let near: f64 = restored
        .points()
        .iter()
        .filter(|p| atoms.iter().any(|a| (p.coords[0] - a).abs() <= ATOM_WINDOW))
        .map(|p| p.weight)
        .sum();
    let h = histogram(&restored, 0, 50, 0.0, 1.0).map_err(|e| e.to_string())?;
    let top = [h.center(h.modes()[0]), h.center(h.modes()[1])];
    // a 0.02-wide bin grid splits each atom's peak over neighbouring bins,
    // so the two heaviest local maxima must also match the atoms one to one
    let peaks = h.peaks();
    ensure(peaks.len() >= 2, format!("{} peaks", peaks.len()))?;
    let mut modes = [h.center(peaks[0]), h.center(peaks[1])];
    modes.sort_by(f64::total_cmp);
    let elapsed = t.elapsed();
    ensure(near >= ATOM_MASS_MIN, format!("mass near atoms {near:.4}"))?;
    ensure(
        top.iter().all(|c| atoms.iter().any(|a| (c - a).abs() <= ATOM_WINDOW)),
        format!("top bins at {top:?}"),
    )?;
    ensure(
        modes.iter().zip(atoms).all(|(c, a)| (c - a).abs() <= ATOM_WINDOW),
        format!("peaks at {modes:?}"),
    )?;
    within(elapsed, Duration::from_secs(600))?;
    Ok(format!(
        "mass near atoms {near:.4}, top bins at {:.2} and {:.2}, peaks at {:.2} and {:.2}, {elapsed:.2?}",
        top[0], top[1], modes[0], modes[1]
    ))
}

fn interval_mixings() -> Outcome {
    // calibrated W1 (seed 7): one interval 0.0083 / 0.0028, two 0.0142 / 0.0050
    let t = Instant::now();
    let mut lines = Vec::new();
    for (name, mix) in [
        (
            "[0.2,0.7]",
            MixingSpec::UniformIntervals {
                intervals: vec![[0.2, 0.7]],
            },
        ),
        (
            "[0,0.2]+[0.5,0.8]",
            MixingSpec::UniformIntervals {
                intervals: vec![[0.0, 0.2], [0.5, 0.8]],
            },
        ),
    ] {
        let mut w = Vec::new();
        for j in [300usize, 1000] {
            let s = sample(&config(j, 10_000, mix.clone(), 7)).map_err(|e| e.to_string())?;
            let est = estimate::<f64>(&s.dataset, &EstimateOptions::new(2)).map_err(|e| e.to_string())?;
            w.push(wasserstein1_1d(&restored_g1(&est, &s.basis), &mix.g1_distribution()));
        }
        ensure(w[1] < W1_LIMIT, format!("{name}: W1 at J = 1000 is {}", w[1]))?;
        ensure(
            w[0] > w[1],
            format!("{name}: W1 {} at J = 300 not above {} at J = 1000", w[0], w[1]),
        )?;
        lines.push(format!("{name} W1 {:.4} -> {:.4}", w[0], w[1]));
    }
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(900))?;
    Ok(format!("{}, {elapsed:.2?}", lines.join("; ")))
}

fn identifiability_table() -> Outcome {
    // (levels, K, twice the bound, identifiable)
    let binary = |j: usize| vec![2 as Level; j];
    let table: Vec<(Vec<Level>, usize, i64, bool)> = vec![
        (binary(300), 2, 301, true),
        (binary(3), 3, 4, false),
        (binary(1000), 2, 1001, true),
        (binary(5), 3, 6, true),
        (binary(5), 4, 6, false),
        (vec![3, 3, 3], 2, 5, true),
        (vec![3, 3, 3], 3, 5, false),
        (vec![2, 3, 4], 2, 3, false),
        (vec![4; 10], 10, 27, true),
        (binary(1), 1, 2, true),
    ];
    for (levels, k, twice, ok) in &table {
        let schema = Schema::new(levels.clone()).map_err(|e| e.to_string())?;
        let v = check_identifiability(&schema, *k);
        ensure(
            v.bound == Ratio::new(*twice, 2) && v.identifiable == *ok,
            format!("{levels:?}, K = {k}: got {} / {}", v.bound, v.identifiable),
        )?;
    }
    Ok(format!("{} schemas", table.len()))
}

fn random_schema(rng: &mut ChaCha20Rng, min_j: usize, max_j: usize) -> Schema {
    let j = rng.random_range(min_j..=max_j);
    Schema::new((0..j).map(|_| rng.random_range(2..=3)).collect()).unwrap()
}

fn random_pattern(rng: &mut ChaCha20Rng, schema: &Schema) -> Pattern {
    Pattern::from(
        schema
            .levels()
            .iter()
            .map(|&l| {
                if rng.random_bool(0.5) {
                    0
                } else {
                    rng.random_range(1..=l)
                }
            })
            .collect::<Vec<Level>>(),
    )
}

fn random_mixing(rng: &mut ChaCha20Rng, k: usize, points: usize) -> MixingSpec {
    let raw: Vec<f64> = (0..points).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    MixingSpec::PointMasses {
        points: raw
            .iter()
            .map(|w| {
                let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let s: f64 = e.iter().sum();
                PointMass {
                    g: e.iter().map(|x| x / s).collect(),
                    weight: w / total,
                }
            })
            .collect(),
    }
}

fn property_suites() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xacce97);
    let mut checks = 0usize;
    for instance in 0..PROPERTY_INSTANCES {
        // pattern algebra
        let schema = random_schema(&mut rng, 3, 8);
        let zero = Pattern::zeros(schema.questions());
        let (a, b, c) = (
            random_pattern(&mut rng, &schema),
            random_pattern(&mut rng, &schema),
            random_pattern(&mut rng, &schema),
        );
        let add = |x: &Pattern, y: &Pattern| pattern_add(&schema, x, y).unwrap();
        ensure(
            add(&a, &b) == add(&b, &a),
            format!("{instance}: addition not commutative"),
        )?;
        ensure(
            add(&a, &zero) == Some(a.clone()),
            format!("{instance}: zero not neutral"),
        )?;
        if let (Some(ab), Some(bc)) = (add(&a, &b), add(&b, &c)) {
            ensure(
                add(&ab, &c) == add(&a, &bc),
                format!("{instance}: addition not associative"),
            )?;
        }
        if let Some(ab) = add(&a, &b) {
            ensure(
                ab.support_size() == a.support_size() + b.support_size(),
                format!("{instance}: support not additive"),
            )?;
        }
        checks += 4;

        // marginalization and normalization on an exact model
        let k = rng.random_range(1..=3usize).min(check_k_max(&schema));
        let basis = random_basis(&schema, k, instance, 0.0).map_err(|e| e.to_string())?;
        ensure(
            basis.row_sum_error() < NORMALIZATION_TOL,
            format!("{instance}: basis row sums"),
        )?;
        let mix = random_mixing(&mut rng, k, k + 1);
        let model = ExactModel::new(&basis, &mix).map_err(|e| e.to_string())?;
        let p = random_pattern(&mut rng, &schema);
        let mp = model.moment(&p).unwrap();
        for j in p.zero_positions() {
            let sum: f64 = (1..=schema.level_count(j))
                .map(|l| model.moment(&substitute(&schema, &p, j, l as Level).unwrap()).unwrap())
                .sum();
            ensure((sum - mp).abs() < 1e-14, format!("{instance}: marginalization at {p}"))?;
            checks += 1;
        }
        // one spare equation per extra basis vector is needed to solve
        let zeros = p.zero_count();
        if zeros > 0 && p.zero_capacity(&schema) - zeros + 1 >= k {
            let g = solve_expectations(&basis, &model, &p, &SolverOptions::default())
                .map_err(|e| format!("{instance}: {e}"))?;
            ensure(
                (g.expectations.sum() - 1.0).abs() < NORMALIZATION_TOL,
                format!("{instance}: expectations sum to {}", g.expectations.sum()),
            )?;
            checks += 1;
        }

        // fitted basis from exact moments
        if instance % 4 == 0 && k >= 2 {
            let pats = enumerate_patterns(&schema, 2);
            let mut table = ExactMoments::new(schema.clone());
            for q in &pats {
                table.insert(q.clone(), model.moment(q).unwrap());
            }
            let m = build_moment_matrix::<f64, _>(&table, 1).map_err(|e| e.to_string())?;
            if let Ok(fit) = fit_subspace(&m, k) {
                ensure(
                    fit.row_sum_error() < NORMALIZATION_TOL,
                    format!("{instance}: fitted row sums"),
                )?;
                checks += 1;
            }
        }

        // full-pattern solves and histogram mass on sampled data
        if instance % 10 == 0 {
            let cfg = GeneratorConfig {
                schema: schema.clone(),
                k,
                basis: BasisSpec::Random {
                    seed: Some(instance),
                    min_separation: 0.0,
                },
                mixing: mix.clone(),
                n: 300,
                seed: instance,
            };
            let s = sample(&cfg).map_err(|e| e.to_string())?;
            let scorer = FullPatternScorer::new(&s.basis, &s.dataset).map_err(|e| e.to_string())?;
            let scores = scorer.score_all(Averaging::Precision).map_err(|e| e.to_string())?;
            for g in &scores {
                ensure(
                    (g.sum() - 1.0).abs() < NORMALIZATION_TOL,
                    format!("{instance}: full-pattern sum"),
                )?;
            }
            checks += scores.len();
        }
        let n = rng.random_range(1..40usize);
        let counts: Vec<u64> = (0..n).map(|_| rng.random_range(1..20)).collect();
        let total = counts.iter().sum();
        let pts = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let x = rng.random_range(-0.3..1.3);
                (
                    Pattern::from(vec![i as Level + 1]),
                    DVector::from_vec(vec![x, 1.0 - x]),
                    c,
                )
            })
            .collect();
        let est = MixingEstimate::from_counts(pts, total).map_err(|e| e.to_string())?;
        let bins = rng.random_range(1..60);
        let lo = rng.random_range(-0.2..0.3);
        let h = histogram(&est, 0, bins, lo, lo + rng.random_range(0.1..1.2)).map_err(|e| e.to_string())?;
        let mass = h.in_range_mass() + h.below + h.above;
        ensure(
            (mass - 1.0).abs() < NORMALIZATION_TOL,
            format!("{instance}: histogram mass {mass}"),
        )?;
        checks += 1;
    }
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "{PROPERTY_INSTANCES} instances, {checks} checks, {elapsed:.2?}"
    ))
}

fn check_k_max(schema: &Schema) -> usize {
    let v = check_identifiability(schema, 1);
    v.k_max.floor().max(1.0) as usize
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 oracle identity", oracle_identity),
        ("2 completion exactness", completion_exactness),
        ("3 subspace consistency", subspace_consistency),
        ("4 two-atom mixing, J = 1000", two_atoms),
        ("5 interval mixings", interval_mixings),
        ("6 identifiability arithmetic", identifiability_table),
        ("7 property suites", property_suites),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
