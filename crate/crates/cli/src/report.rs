use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use curvjm_core::evalreport::{
    bias_cp_table, compare_models, median_looic, write_looic_csv, LooResult, ParamSummary, ReplicationResult,
};
use curvjm_core::io::{file_digest, read_draws_csv, RunManifest, DRAWS_FILE};
use curvjm_core::simgen::{read_truth, TRUTH_FILE};
use curvjm_core::Error;

use crate::loo::{LOO_DIR, LOO_FILE};
use crate::run::{finish_manifest, manifest_of, CmdResult, Failure, EXIT_DATA};
use crate::ReportArgs;

pub const BIAS_CP_FILE: &str = "bias_cp.csv";
pub const LOOIC_FILE: &str = "looic.csv";
pub const LOOIC_MEDIAN_FILE: &str = "looic_median.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Fit directories below `dir`, depth first in name order.
fn find_fits(dir: &Path, found: &mut Vec<PathBuf>) -> CmdResult {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::new(EXIT_DATA, format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    if dir.join(DRAWS_FILE).is_file() && manifest_of(dir).is_some_and(|m| m.command == "fit") {
        found.push(dir.to_path_buf());
    }
    for e in entries {
        find_fits(&e, found)?;
    }
    Ok(())
}

struct FitRecord {
    dir: PathBuf,
    result: ReplicationResult,
    truth: Option<BTreeMap<String, f64>>,
    loo: Option<LooResult>,
}

fn load_fit(dir: &Path, index: usize) -> CmdResult<FitRecord> {
    let m = manifest_of(dir).ok_or_else(|| Failure::new(EXIT_DATA, format!("{}: unreadable manifest", dir.display())))?;
    let approach = m.attributes.get("approach").and_then(|v| v.as_str()).unwrap_or("unknown").to_string();
    let replicate = m.attributes.get("replicate").and_then(serde_json::Value::as_u64).unwrap_or(index as u64);
    let truth = if dir.join(TRUTH_FILE).is_file() { Some(read_truth(dir)?) } else { None };
    let draws = read_draws_csv(std::fs::File::open(dir.join(DRAWS_FILE))?)?;
    let mut params = BTreeMap::new();
    for name in truth.iter().flat_map(|t| t.keys()) {
        if let Some(cols) = draws.column(name) {
            params.insert(name.clone(), ParamSummary::from_draws(&cols.concat())?);
        }
    }
    let loo_path = dir.join(LOO_DIR).join(LOO_FILE);
    let loo: Option<LooResult> = if loo_path.is_file() {
        Some(serde_json::from_str(&std::fs::read_to_string(&loo_path)?).map_err(Error::from)?)
    } else {
        None
    };
    let result = ReplicationResult {
        replicate,
        approach,
        params,
        looic: loo.as_ref().map(|l| l.looic),
        looic_se: loo.as_ref().map(|l| l.se_looic),
        max_pareto_k: loo.as_ref().map(LooResult::max_pareto_k),
    };
    Ok(FitRecord { dir: dir.to_path_buf(), result, truth, loo })
}

pub fn run(args: &ReportArgs) -> CmdResult {
    let start = Instant::now();
    let mut dirs = Vec::new();
    find_fits(&args.study, &mut dirs)?;
    if dirs.is_empty() {
        return Err(Failure::new(EXIT_DATA, format!("no fit directories below {}", args.study.display())));
    }
    let fits = dirs.iter().enumerate().map(|(i, d)| load_fit(d, i)).collect::<CmdResult<Vec<_>>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for f in &fits {
        if !seen.insert((f.result.approach.clone(), f.result.replicate)) {
            return Err(Failure::new(
                EXIT_DATA,
                format!("{}: replicate {} of {} appears twice", f.dir.display(), f.result.replicate, f.result.approach),
            ));
        }
    }
    std::fs::create_dir_all(&args.out)?;
    let mut m = RunManifest::new("report", serde_json::json!({ "study": args.study, "expected_replicates": args.expected_replicates }), None);
    for f in &fits {
        let p = f.dir.join(DRAWS_FILE);
        m.inputs.insert(p.display().to_string(), file_digest(&p)?);
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for f in &fits {
        *counts.entry(f.result.approach.as_str()).or_default() += 1;
    }
    let expected = args.expected_replicates.unwrap_or_else(|| counts.values().copied().max().unwrap_or(0));
    for (a, &c) in &counts {
        if c < expected {
            let msg = format!("{a}: {c} of {expected} replicates present; table is partial");
            log::warn!("{msg}");
            eprintln!("warning: {msg}");
            m.messages.push(msg);
            m.status = "partial".into();
        }
    }

    let with_truth: Vec<&FitRecord> = fits.iter().filter(|f| f.truth.is_some()).collect();
    if let Some(first) = with_truth.first() {
        let truth = first.truth.clone().expect("filtered on truth");
        if with_truth.iter().any(|f| f.truth.as_ref() != Some(&truth)) {
            return Err(Failure::new(EXIT_DATA, "fits in the study were generated with different truths"));
        }
        let shared: BTreeMap<String, f64> =
            truth.into_iter().filter(|(k, _)| with_truth.iter().all(|f| f.result.params.contains_key(k))).collect();
        let results: Vec<ReplicationResult> = with_truth.iter().map(|f| f.result.clone()).collect();
        let table = bias_cp_table(&results, &shared)?;
        table.write_csv(std::fs::File::create(args.out.join(BIAS_CP_FILE))?)?;
    } else {
        m.messages.push("no truth.json in any fit; bias/coverage table skipped".into());
    }

    let results: Vec<ReplicationResult> = fits.iter().map(|f| f.result.clone()).collect();
    if results.iter().any(|r| r.looic.is_some()) {
        write_looic_csv(&results, std::fs::File::create(args.out.join(LOOIC_FILE))?)?;
        let mut med = String::from("approach,median_looic,replicates\n");
        for (a, v) in median_looic(&results) {
            let n = results.iter().filter(|r| r.approach == a && r.looic.is_some()).count();
            med.push_str(&format!("{a},{v:?},{n}\n"));
        }
        std::fs::write(args.out.join(LOOIC_MEDIAN_FILE), med)?;
        write_comparisons(&fits, &args.out.join(COMPARISON_FILE))?;
    }
    finish_manifest(m, &args.out, start)
}

/// Pairwise LOOIC comparisons among the approaches fitted to each replicate.
fn write_comparisons(fits: &[FitRecord], path: &Path) -> CmdResult {
    let mut by_rep: BTreeMap<u64, Vec<(String, LooResult)>> = BTreeMap::new();
    for f in fits {
        if let Some(l) = &f.loo {
            by_rep.entry(f.result.replicate).or_default().push((f.result.approach.clone(), l.clone()));
        }
    }
    let mut out = String::from("replicate,first,second,looic_diff,se,z\n");
    for (r, models) in by_rep {
        if models.len() < 2 {
            continue;
        }
        for p in compare_models(&models)?.pairs {
            out.push_str(&format!("{r},{},{},{:?},{:?},{:?}\n", p.first, p.second, p.looic_diff, p.se, p.z));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
