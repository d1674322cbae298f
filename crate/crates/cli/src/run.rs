//! Exit codes, worker pools and manifest bookkeeping shared by the commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use curvjm_core::io::{RunManifest, MANIFEST_FILE};
use curvjm_core::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CONVERGENCE: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Argument(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_DATA,
        Error::Domain(_) | Error::Numeric(_) | Error::FitFailure(_) => EXIT_NUMERIC,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// Runs `f` on a pool of `jobs` threads.
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> CmdResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::new(EXIT_NUMERIC, format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Worst exit code among failures, or the failure itself when there is one.
pub fn combine(results: Vec<CmdResult>) -> CmdResult {
    let mut worst: Option<Failure> = None;
    for r in results {
        if let Err(f) = r {
            log::error!("{}", f.message);
            if worst.as_ref().is_none_or(|w| f.code > w.code) {
                worst = Some(f);
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

/// Subdirectories of `dir` (sorted) for which `pred` holds.
pub fn child_dirs(dir: &Path, pred: impl Fn(&Path) -> bool) -> CmdResult<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::new(EXIT_DATA, format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && pred(p))
        .collect();
    v.sort();
    Ok(v)
}

/// Records every entry of `dir` except the manifest as an output and writes
/// the manifest last.
pub fn finish_manifest(mut m: RunManifest, dir: &Path, start: Instant) -> CmdResult<()> {
    let mut outputs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE))
        .collect();
    outputs.sort();
    m.outputs = outputs;
    m.elapsed_secs = start.elapsed().as_secs_f64();
    m.write(dir)?;
    Ok(())
}

/// Reads a manifest if the directory has one.
pub fn manifest_of(dir: &Path) -> Option<RunManifest> {
    dir.join(MANIFEST_FILE).is_file().then(|| RunManifest::read(dir).ok()).flatten()
}
