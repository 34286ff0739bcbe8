use std::fs;
use std::path::{Path, PathBuf};

use lls_core::ingest::read_csv;
use lls_core::mixing::{histogram, mixing_moments, Histogram1D, MixingEstimate};
use lls_core::pipeline::{self, EstimateOptions};
use lls_core::simulator::{read_latent_csv, sample, write_latent_csv, GeneratorConfig};
use lls_core::solver::orders_of_degree;
use lls_core::subspace::{check_identifiability, IdentifiabilityVerdict, Subspace};
use lls_core::{Averaging, Pattern, Schema};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::manifest::Recorder;
use crate::{AveragingArg, CliError};

/// Coordinates outside this band are flagged in the moment report.
const FLAG_RANGE: (f64, f64) = (-0.1, 1.1);

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_schema(path: &Path) -> Result<Schema, CliError> {
    serde_json::from_value(read_json(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>, n: Option<usize>) -> Result<(), CliError> {
    let mut cfg = GeneratorConfig::from_json(&read_text(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = n {
        cfg.n = n;
    }
    let params = serde_json::to_value(&cfg).expect("config serializes");
    let mut rec = Recorder::new("simulate", &params, Some(cfg.seed), out)?;
    rec.input(config);
    let s = sample(&cfg)?;
    rec.lap("sample");
    s.dataset.write_csv(rec.output("dataset.csv"))?;
    write_latent_csv(rec.output("latent.csv"), &s.latent)?;
    rec.write("schema.json", pretty(&cfg.schema))?;
    rec.write("truth_basis.json", pretty(&s.basis.to_json()))?;
    rec.write("config.json", pretty(&cfg))?;
    rec.lap("write");
    rec.finish()?;
    Ok(())
}

pub struct EstimateArgs {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub k: usize,
    pub out: PathBuf,
    pub bins: usize,
    pub range: (f64, f64),
    pub col_support: usize,
    pub averaging: AveragingArg,
    pub force: bool,
}

fn bound_line(v: &IdentifiabilityVerdict) -> String {
    format!(
        "K = {} vs bound (|L| - J)/2 - max L_j + 5/2 = ({} - {})/2 - {} + 5/2 = {} ({})",
        v.k,
        v.total_levels,
        v.questions,
        v.max_level,
        v.k_max,
        if v.identifiable {
            "identifiable"
        } else {
            "not identifiable"
        }
    )
}

fn write_histogram(rec: &mut Recorder, stem: &str, h: &Histogram1D) -> Result<(), CliError> {
    rec.write(&format!("{stem}.csv"), h.to_csv())?;
    rec.write(&format!("{stem}.json"), pretty(h))?;
    rec.write(&format!("{stem}.dat"), h.to_plot_data())?;
    Ok(())
}

/// `histogram` for `g_1`; `histogram_g<k>` for the other axes when `K > 2`.
fn write_histograms(
    rec: &mut Recorder,
    prefix: &str,
    est: &MixingEstimate<f64>,
    bins: usize,
    (lo, hi): (f64, f64),
) -> Result<(), CliError> {
    let axes = if est.k() > 2 { est.k() } else { 1 };
    for axis in 0..axes.min(est.k().max(1)) {
        let h = histogram(est, axis, bins, lo, hi)?;
        let stem = if axis == 0 {
            prefix.to_string()
        } else {
            format!("{prefix}_g{}", axis + 1)
        };
        write_histogram(rec, &stem, &h)?;
    }
    Ok(())
}

fn flagged(g: &DVector<f64>) -> bool {
    g.iter().any(|&x| !(FLAG_RANGE.0..=FLAG_RANGE.1).contains(&x))
}

pub fn estimate(a: &EstimateArgs) -> Result<(), CliError> {
    if a.k == 0 {
        return Err(CliError::Input("K must be at least 1".into()));
    }
    let schema = read_schema(&a.schema)?;
    let verdict = check_identifiability(&schema, a.k);
    if !verdict.identifiable && !a.force {
        return Err(CliError::Model(format!(
            "{}; pass --force to run anyway",
            bound_line(&verdict)
        )));
    }
    let ds = read_csv(&a.data, &schema)?;
    let averaging = match a.averaging {
        AveragingArg::Precision => Averaging::Precision,
        AveragingArg::Uniform => Averaging::Uniform,
    };
    let params = json!({
        "schema": schema,
        "k": a.k,
        "bins": a.bins,
        "hist_range": [a.range.0, a.range.1],
        "col_support": a.col_support,
        "averaging": averaging,
        "force": a.force,
    });
    let mut rec = Recorder::new("estimate", &params, None, &a.out)?;
    rec.input(&a.data);
    rec.input(&a.schema);
    rec.lap("read");

    let mut opts = EstimateOptions::new(a.k);
    opts.col_support = a.col_support;
    opts.averaging = averaging;
    opts.force = a.force;
    let est = pipeline::estimate::<f64>(&ds, &opts)?;
    rec.lap("estimate");

    let mut subspace = est.subspace.to_json();
    subspace["identifiability"] = serde_json::to_value(&est.verdict).expect("verdict serializes");
    rec.write("subspace.json", pretty(&subspace))?;

    let k = a.k;
    let patterns: Vec<Value> = est
        .mixing
        .points()
        .iter()
        .map(|p| {
            json!({
                "pattern": p.pattern.key(),
                "weight": p.weight,
                "expectations": p.coords.as_slice(),
                "flagged": flagged(&p.coords),
            })
        })
        .collect();
    let mut moments = serde_json::Map::new();
    for n in 1..=2 {
        for v in orders_of_degree(k, n) {
            moments.insert(v.key(), json!(mixing_moments(&est.mixing, &v)));
        }
    }
    let report = json!({
        "k": k,
        "averaging": averaging,
        "individuals": ds.len(),
        "distinct_patterns": est.mixing.len(),
        "flagged": est.mixing.points().iter().filter(|p| flagged(&p.coords)).count(),
        "out_of_simplex": est.mixing.out_of_simplex(),
        "mixing_moments": moments,
        "patterns": patterns,
    });
    rec.write("moments.json", pretty(&report))?;
    est.mixing.write_csv(rec.output("mixing.csv"))?;
    let individuals: Vec<Vec<f64>> = est.individuals.iter().map(|g| g.iter().copied().collect()).collect();
    write_latent_csv(rec.output("individuals.csv"), &individuals)?;
    write_histograms(&mut rec, "histogram", &est.mixing, a.bins, a.range)?;
    rec.lap("write");
    rec.finish()?;
    Ok(())
}

pub fn evaluate(estimate: &Path, latent: &Path, truth: &Path, out: &Path, bins: usize) -> Result<(), CliError> {
    let sub_path = estimate.join("subspace.json");
    let ind_path = estimate.join("individuals.csv");
    let subspace = Subspace::<f64>::from_json(&read_json(&sub_path)?)?;
    let truth_basis = Subspace::<f64>::from_json(&read_json(truth)?)?;
    let individuals: Vec<DVector<f64>> = read_latent_csv(&ind_path)?.into_iter().map(DVector::from_vec).collect();
    let latent_g = read_latent_csv(latent)?;
    let params = json!({
        "estimate": path_str(estimate),
        "truth": path_str(truth),
        "latent": path_str(latent),
        "bins": bins,
    });
    let mut rec = Recorder::new("evaluate", &params, None, out)?;
    for p in [&sub_path, &ind_path, &latent.to_path_buf(), &truth.to_path_buf()] {
        rec.input(p);
    }
    let ev = pipeline::evaluate(&subspace, &individuals, &truth_basis, &latent_g)?;
    rec.lap("evaluate");
    rec.write("report.json", pretty(&ev))?;

    let c = subspace.coordinates_in(&truth_basis);
    let points = individuals.iter().map(|g| (Pattern::zeros(0), &c * g, 1)).collect();
    let restored = MixingEstimate::from_counts(points, individuals.len() as u64)?;
    write_histograms(&mut rec, "histogram_true", &restored, bins, (0.0, 1.0))?;
    rec.lap("write");
    rec.finish()?;
    Ok(())
}

fn parse_k_range(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Input(format!("bad K range {s:?}; expected lo:hi or a single value"));
    let (lo, hi) = match s.split_once(':') {
        Some((a, b)) => (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let k = s.trim().parse().map_err(|_| bad())?;
            (k, k)
        }
    };
    if lo == 0 {
        return Err(CliError::Input("K must be at least 1".into()));
    }
    if lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

pub fn rank_scan(data: &Path, schema: &Path, k_range: &str, out: &Path, col_support: usize) -> Result<(), CliError> {
    let ks = parse_k_range(k_range)?;
    let schema_v = read_schema(schema)?;
    let ds = read_csv(data, &schema_v)?;
    let params = json!({ "schema": schema_v, "k_range": ks, "col_support": col_support });
    let mut rec = Recorder::new("rank-scan", &params, None, out)?;
    rec.input(data);
    rec.input(schema);
    let scan = pipeline::rank_scan(&ds, &ks, col_support)?;
    rec.lap("scan");
    for e in &scan.entries {
        println!(
            "K = {}: objective {:.6e} (relative {:.6e}); {}",
            e.k,
            e.objective,
            e.relative_objective,
            bound_line(&e.identifiability)
        );
    }
    rec.write("scan.json", pretty(&scan))?;
    rec.finish()?;
    Ok(())
}

pub fn check_id(schema: &Path, k: usize, out: Option<&Path>) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::Input("K must be at least 1".into()));
    }
    let s = read_schema(schema)?;
    let v = check_identifiability(&s, k);
    let text = pretty(&v);
    print!("{text}");
    eprintln!("{}", bound_line(&v));
    if let Some(dir) = out {
        let mut rec = Recorder::new("check-id", &json!({ "schema": s, "k": k }), None, dir)?;
        rec.input(schema);
        rec.write("check_id.json", text)?;
        rec.finish()?;
    }
    Ok(())
}
