use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::Method;
use crate::harness::run::{csv_err, seed_dir, IterationRecord, RunManifest, SummaryRow};
use crate::metrics::{ExplorationHistogram, ExplorationLevel};

/// One row of `comparison.csv`: mean ± standard error over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: Method,
    pub env: String,
    pub seeds: usize,
    pub success_mean: f64,
    pub success_stderr: f64,
    pub regret_mean: f64,
    pub regret_stderr: f64,
    pub queries_mean: f64,
    pub final_delta_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationPoint {
    pub method: Method,
    pub iteration: usize,
    pub none: usize,
    pub low: usize,
    pub medium: usize,
    pub high: usize,
    pub modal: ExplorationLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub method: Method,
    pub seed: u64,
    pub iteration: usize,
    pub queries_made: usize,
    pub dataset_size: usize,
    pub delta_total: Option<f64>,
    pub delta_disagreements: Option<u64>,
    pub validation_success: f64,
    pub density_ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub methods: Vec<MethodRow>,
    pub exploration: Vec<ExplorationPoint>,
    pub curves: Vec<CurvePoint>,
}

pub struct LoadedRun {
    pub manifest: RunManifest,
    pub rows: Vec<SummaryRow>,
    pub logs: BTreeMap<u64, Vec<IterationRecord>>,
}

/// Reads a finished run directory.
pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest_path = dir.join("run.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    let summary = dir.join("summary.csv");
    let mut rdr = csv::Reader::from_path(&summary).map_err(|e| csv_err(&summary, e))?;
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()
        .map_err(|e| csv_err(&summary, e))?;
    let mut logs = BTreeMap::new();
    for &seed in &manifest.seeds {
        let path = seed_dir(dir, seed).join("iterations.jsonl");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let recs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<IterationRecord>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Malformed {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        logs.insert(seed, recs);
    }
    Ok(LoadedRun {
        manifest,
        rows,
        logs,
    })
}

fn describe(dir: &Path) -> String {
    match fs::read_dir(dir) {
        Err(_) => format!("{} (does not exist)", dir.display()),
        Ok(entries) => {
            let mut names: Vec<String> = entries
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            names.sort();
            format!("{} (contains: {})", dir.display(), if names.is_empty() { "nothing".into() } else { names.join(", ") })
        }
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates two or more runs on the same environment and seeds.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(Error::Mismatch("compare needs at least two run directories".into()));
    }
    let mut runs = Vec::new();
    let mut broken = Vec::new();
    for d in dirs {
        match load_run(d) {
            Ok(r) => runs.push(r),
            Err(e) => broken.push(format!("{}: {e}", describe(d))),
        }
    }
    if !broken.is_empty() {
        return Err(Error::Mismatch(format!(
            "unreadable run directories: {}",
            broken.join("; ")
        )));
    }
    let first = &runs[0].manifest;
    for (d, r) in dirs.iter().zip(&runs).skip(1) {
        let m = &r.manifest;
        if m.env != first.env {
            return Err(Error::Mismatch(format!(
                "{} ran on {} but {} ran on {}",
                d.display(),
                m.env_label,
                dirs[0].display(),
                first.env_label
            )));
        }
        if m.seeds != first.seeds {
            return Err(Error::Mismatch(format!(
                "{} used seeds {:?} but {} used {:?}",
                d.display(),
                m.seeds,
                dirs[0].display(),
                first.seeds
            )));
        }
    }

    let mut methods = Vec::new();
    let mut exploration = Vec::new();
    let mut curves = Vec::new();
    for r in &runs {
        let m = r.manifest.method;
        let success: Vec<f64> = r.rows.iter().map(|x| x.success_rate).collect();
        let regret: Vec<f64> = r.rows.iter().filter_map(|x| x.regret).collect();
        let queries: Vec<f64> = r.rows.iter().map(|x| x.total_queries as f64).collect();
        let deltas: Vec<f64> = r.rows.iter().filter_map(|x| x.final_delta).collect();
        let (success_mean, success_stderr) = mean_stderr(&success);
        let (regret_mean, regret_stderr) = if regret.is_empty() { (0.0, 0.0) } else { mean_stderr(&regret) };
        methods.push(MethodRow {
            method: m,
            env: r.manifest.env_label.clone(),
            seeds: r.rows.len(),
            success_mean,
            success_stderr,
            regret_mean,
            regret_stderr,
            queries_mean: mean_stderr(&queries).0,
            final_delta_mean: (!deltas.is_empty()).then(|| mean_stderr(&deltas).0),
        });

        let mut per_iter: BTreeMap<usize, ExplorationHistogram> = BTreeMap::new();
        for (seed, recs) in &r.logs {
            for rec in recs {
                let h = per_iter.entry(rec.log.iteration).or_default();
                h.none += rec.log.exploration.none;
                h.low += rec.log.exploration.low;
                h.medium += rec.log.exploration.medium;
                h.high += rec.log.exploration.high;
                curves.push(CurvePoint {
                    method: m,
                    seed: *seed,
                    iteration: rec.log.iteration,
                    queries_made: rec.log.queries_made,
                    dataset_size: rec.log.dataset_size,
                    delta_total: rec.log.delta_total,
                    delta_disagreements: rec.log.delta_disagreements,
                    validation_success: rec.log.validation_success,
                    density_ratio: rec.log.density_ratio,
                });
            }
        }
        for (iteration, h) in per_iter {
            exploration.push(ExplorationPoint {
                method: m,
                iteration,
                none: h.none,
                low: h.low,
                medium: h.medium,
                high: h.high,
                modal: h.modal(),
            });
        }
    }
    Ok(Comparison {
        methods,
        exploration,
        curves,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `comparison.csv`, `exploration_series.csv` and `curves.csv`.
pub fn write_comparison(c: &Comparison, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_rows(&out.join("comparison.csv"), &c.methods)?;
    write_rows(&out.join("exploration_series.csv"), &c.exploration)?;
    write_rows(&out.join("curves.csv"), &c.curves)
}
