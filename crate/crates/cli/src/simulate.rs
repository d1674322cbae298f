use std::path::Path;
use std::time::Instant;

use curvjm_core::io::{file_digest, RunManifest};
use curvjm_core::simgen::{generate, ScenarioConfig};
use rayon::prelude::*;

use crate::run::{combine, finish_manifest, with_pool, CmdResult};
use crate::SimulateArgs;

fn write_one(scenario: &ScenarioConfig, dir: &Path, replicate: Option<u64>, config_digest: &str) -> CmdResult {
    let start = Instant::now();
    let sim = generate(scenario)?;
    sim.write(dir)?;
    let mut m = RunManifest::new("simulate", serde_json::to_value(scenario).map_err(curvjm_core::Error::from)?, Some(scenario.seed));
    m.config_hash = scenario.hash();
    m.inputs.insert("config".into(), config_digest.to_string());
    if let Some(r) = replicate {
        m.attributes.insert("replicate".into(), r.into());
    }
    m.attributes.insert("n".into(), scenario.n.into());
    m.attributes.insert("censoring_rate".into(), sim.dataset.censoring_rate().into());
    finish_manifest(m, dir, start)
}

pub fn run(args: &SimulateArgs) -> CmdResult {
    let start = Instant::now();
    let mut scenario = ScenarioConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    let digest = file_digest(&args.config)?;
    std::fs::create_dir_all(&args.out)?;
    if args.replicates <= 1 {
        return write_one(&scenario, &args.out, None, &digest);
    }
    let results = with_pool(args.jobs, || {
        (0..args.replicates)
            .into_par_iter()
            .map(|r| write_one(&scenario.replicate(r), &args.out.join(format!("rep-{r:04}")), Some(r), &digest))
            .collect::<Vec<_>>()
    })?;
    combine(results)?;
    let mut m = RunManifest::new("simulate", serde_json::to_value(&scenario).map_err(curvjm_core::Error::from)?, Some(scenario.seed));
    m.config_hash = scenario.hash();
    m.inputs.insert("config".into(), digest);
    m.attributes.insert("replicates".into(), args.replicates.into());
    finish_manifest(m, &args.out, start)
}
