use std::path::Path;
use std::time::Instant;

use curvjm_core::config::FitConfig;
use curvjm_core::data::{read_dataset, LONGITUDINAL_FILE, SURVIVAL_FILE};
use curvjm_core::io::{
    file_digest, write_draws_csv, write_pointwise, PointwiseMatrix, RunManifest, DIAGNOSTICS_FILE, DRAWS_FILE,
    POINTWISE_FILE,
};
use curvjm_core::pipeline::{fit_dataset, subject_order};
use curvjm_core::simgen::TRUTH_FILE;
use curvjm_core::Error;
use rayon::prelude::*;

use crate::run::{child_dirs, combine, finish_manifest, manifest_of, with_pool, CmdResult, Failure, EXIT_CONVERGENCE, EXIT_DATA};
use crate::FitArgs;

fn is_dataset(dir: &Path) -> bool {
    dir.join(LONGITUDINAL_FILE).is_file() || dir.join(SURVIVAL_FILE).is_file()
}

pub fn run(args: &FitArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(p) => FitConfig::load(p)?,
        None => FitConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.sampler.seed = s;
    }
    let config_digest = args.config.as_deref().map(file_digest).transpose()?;
    if is_dataset(&args.data) {
        return fit_one(&cfg, config_digest.as_deref(), &args.data, &args.out);
    }
    let dirs = child_dirs(&args.data, is_dataset)?;
    if dirs.is_empty() {
        return Err(Failure::new(
            EXIT_DATA,
            format!("{} holds no {LONGITUDINAL_FILE} and no dataset subdirectories", args.data.display()),
        ));
    }
    let results = with_pool(args.jobs, || {
        dirs.par_iter()
            .map(|d| {
                let name = d.file_name().expect("child directory has a name");
                fit_one(&cfg, config_digest.as_deref(), d, &args.out.join(name))
            })
            .collect::<Vec<_>>()
    })?;
    combine(results)
}

fn fit_one(cfg: &FitConfig, config_digest: Option<&str>, data: &Path, out: &Path) -> CmdResult {
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    let mut m = RunManifest::new("fit", serde_json::to_value(cfg).map_err(Error::from)?, Some(cfg.sampler.seed));
    m.attributes.insert("approach".into(), cfg.approach_label().into());
    m.attributes.insert("data".into(), data.display().to_string().into());
    if let Some(r) = manifest_of(data).and_then(|dm| dm.attributes.get("replicate").cloned()) {
        m.attributes.insert("replicate".into(), r);
    }
    if let Some(d) = config_digest {
        m.inputs.insert("config".into(), d.to_string());
    }
    let outcome = fit_into(cfg, data, out, &mut m);
    if let Err(f) = &outcome {
        m.status = if f.code == EXIT_CONVERGENCE { "convergence-warning".into() } else { "failed".into() };
        m.messages.push(f.message.clone());
    }
    finish_manifest(m, out, start)?;
    outcome
}

fn fit_into(cfg: &FitConfig, data: &Path, out: &Path, m: &mut RunManifest) -> CmdResult {
    for name in [LONGITUDINAL_FILE, SURVIVAL_FILE] {
        let p = data.join(name);
        if !p.is_file() {
            return Err(Error::Data(format!("missing {}", p.display())).into());
        }
        m.inputs.insert(p.display().to_string(), file_digest(&p)?);
    }
    let ds = read_dataset(data)?;
    let fit = fit_dataset(cfg, &ds)?;
    write_draws_csv(&fit.draws, std::fs::File::create(out.join(DRAWS_FILE))?)?;
    std::fs::write(out.join(DIAGNOSTICS_FILE), serde_json::to_string_pretty(&fit.diagnostics).map_err(Error::from)?)?;
    write_pointwise(&out.join(POINTWISE_FILE), &PointwiseMatrix::from_draws(&fit.draws, subject_order(&ds)))?;
    let truth = data.join(TRUTH_FILE);
    if truth.is_file() {
        std::fs::copy(&truth, out.join(TRUTH_FILE))?;
    }
    m.attributes.insert("subjects".into(), ds.n_subjects().into());
    m.attributes.insert("divergences".into(), fit.draws.divergences().into());
    m.attributes.insert("max_rhat".into(), fit.diagnostics.max_rhat().into());
    let bad = fit.unconverged_keys(cfg);
    if !bad.is_empty() {
        let detail: Vec<String> = bad
            .iter()
            .map(|n| format!("{n} (R-hat {:.3})", fit.diagnostics.get(n).map_or(f64::NAN, |p| p.rhat)))
            .collect();
        return Err(Failure::new(
            EXIT_CONVERGENCE,
            format!("{}: key parameters not converged: {}", out.display(), detail.join(", ")),
        ));
    }
    Ok(())
}
