use std::path::Path;
use std::time::Instant;

use curvjm_core::evalreport::{psis_loo, LooStatus};
use curvjm_core::io::{file_digest, read_pointwise, RunManifest, POINTWISE_FILE};
use curvjm_core::Error;
use rayon::prelude::*;

use crate::run::{child_dirs, combine, finish_manifest, manifest_of, with_pool, CmdResult, Failure, EXIT_DATA};
use crate::LooArgs;

pub const LOO_DIR: &str = "loo";
pub const LOO_FILE: &str = "loo.json";
pub const LOO_POINTWISE_FILE: &str = "loo_pointwise.csv";

fn is_fit(dir: &Path) -> bool {
    dir.join(POINTWISE_FILE).is_file()
}

pub fn run(args: &LooArgs) -> CmdResult {
    if is_fit(&args.fit) {
        return loo_one(&args.fit);
    }
    let dirs = child_dirs(&args.fit, is_fit)?;
    if dirs.is_empty() {
        return Err(Failure::new(EXIT_DATA, format!("{} holds no {POINTWISE_FILE}", args.fit.display())));
    }
    let results = with_pool(args.jobs, || dirs.par_iter().map(|d| loo_one(d)).collect::<Vec<_>>())?;
    combine(results)
}

fn loo_one(fit: &Path) -> CmdResult {
    let start = Instant::now();
    let src = fit.join(POINTWISE_FILE);
    let pw = read_pointwise(&src)?;
    let loo = psis_loo(&pw.rows(), &pw.subjects)?;
    let out = fit.join(LOO_DIR);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(LOO_FILE), serde_json::to_string_pretty(&loo).map_err(Error::from)?)?;
    let mut csv = String::from("subject,elpd_loo,pareto_k\n");
    for ((id, e), k) in loo.subjects.iter().zip(&loo.pointwise_elpd).zip(&loo.pareto_k) {
        csv.push_str(&format!("{id},{e:?},{k:?}\n"));
    }
    std::fs::write(out.join(LOO_POINTWISE_FILE), csv)?;

    let mut m = RunManifest::new("loo", serde_json::json!({}), None);
    m.inputs.insert(src.display().to_string(), file_digest(&src)?);
    if let Some(fm) = manifest_of(fit) {
        m.attributes.extend(fm.attributes.into_iter().filter(|(k, _)| k == "approach" || k == "replicate"));
    }
    m.attributes.insert("looic".into(), loo.looic.into());
    m.attributes.insert("max_pareto_k".into(), loo.max_pareto_k().into());
    if loo.status != LooStatus::Ok {
        let n_bad = loo.pareto_k.iter().filter(|&&k| k > curvjm_core::evalreport::K_WARN).count();
        let msg = format!("{}: {n_bad} subjects with Pareto k above {}", fit.display(), curvjm_core::evalreport::K_WARN);
        log::warn!("{msg}");
        m.messages.push(msg);
        m.status = format!("{:?}", loo.status).to_lowercase();
    }
    finish_manifest(m, &out, start)
}
