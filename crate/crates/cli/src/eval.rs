use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use microreg::io::{read_report, read_transform, EvalRecord, ResultReport, Timings};
use microreg::metrics::evaluate;
use serde::Serialize;

use crate::register::ProfileArg;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `*.json` reports. A report without an evaluation is
    /// scored against `<name>.gt.txt` when that file exists.
    dir: PathBuf,
    /// Thresholds used when scoring against a ground-truth file.
    #[arg(long, value_enum, default_value = "threedmatch")]
    profile: ProfileArg,
    /// Print a JSON summary instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Serialize)]
struct PairRow {
    name: String,
    re_deg: f64,
    te_cm: f64,
    success: bool,
}

#[derive(Debug, Serialize)]
struct Summary {
    pairs: Vec<PairRow>,
    evaluated: usize,
    excluded: Vec<String>,
    successes: usize,
    /// Fraction of evaluated pairs that succeeded.
    rr: Option<f64>,
    /// Means over successful pairs only.
    mean_re_deg: Option<f64>,
    mean_te_cm: Option<f64>,
    /// Means over every report read.
    mean_timings_ms: Option<Timings>,
}

fn report_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn score(path: &Path, report: &ResultReport, profile: ProfileArg) -> Result<Option<EvalRecord>> {
    if let Some(e) = report.eval {
        return Ok(Some(e));
    }
    let gt = path.with_extension("gt.txt");
    if !gt.is_file() {
        return Ok(None);
    }
    let truth = read_transform(&gt)?;
    Ok(Some(EvalRecord::from(&evaluate(&report.fine()?, &truth, profile.profile()))))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(dir: &Path, profile: ProfileArg) -> Result<Summary> {
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    let mut timings = Vec::new();
    for path in report_paths(dir)? {
        let report = read_report(&path)?;
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        timings.push(report.timings_ms);
        match score(&path, &report, profile)? {
            Some(e) => pairs.push(PairRow {
                name,
                re_deg: e.re_deg,
                te_cm: e.te_cm,
                success: e.success,
            }),
            None => {
                log::warn!("{}: no evaluation and no ground truth, excluded", path.display());
                excluded.push(name);
            }
        }
    }
    let successes = pairs.iter().filter(|p| p.success).count();
    let ok = || pairs.iter().filter(|p| p.success);
    Ok(Summary {
        evaluated: pairs.len(),
        successes,
        rr: (!pairs.is_empty()).then(|| successes as f64 / pairs.len() as f64),
        mean_re_deg: mean(ok().map(|p| p.re_deg)),
        mean_te_cm: mean(ok().map(|p| p.te_cm)),
        mean_timings_ms: (!timings.is_empty()).then(|| Timings {
            coarse: mean(timings.iter().map(|t| t.coarse)).unwrap_or(0.0),
            fine: mean(timings.iter().map(|t| t.fine)).unwrap_or(0.0),
            total: mean(timings.iter().map(|t| t.total)).unwrap_or(0.0),
        }),
        pairs,
        excluded,
    })
}

fn or_dash(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

fn print_table(s: &Summary) {
    println!("{:<24} {:>12} {:>12} {:>8}", "pair", "RE (deg)", "TE (cm)", "success");
    for p in &s.pairs {
        println!("{:<24} {:>12.4} {:>12.3} {:>8}", p.name, p.re_deg, p.te_cm, p.success);
    }
    println!();
    println!(
        "RR {}% ({}/{}), {} excluded",
        or_dash(s.rr.map(|r| r * 100.0), 2),
        s.successes,
        s.evaluated,
        s.excluded.len()
    );
    println!("mean RE over successes {} deg", or_dash(s.mean_re_deg, 4));
    println!("mean TE over successes {} cm", or_dash(s.mean_te_cm, 3));
    if let Some(t) = s.mean_timings_ms {
        println!("mean time {:.1} ms (coarse {:.1}, fine {:.1})", t.total, t.coarse, t.fine);
    }
}

pub fn run(args: EvalArgs) -> Result<()> {
    let summary = summarize(&args.dir, args.profile)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print_table(&summary);
    }
    Ok(())
}
