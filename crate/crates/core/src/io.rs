//! Fit artefacts on disk: draws CSV, binary pointwise log-likelihood sidecar,
//! and the run manifest written into every output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{fmt_f64, SubjectId};
use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;

pub const DRAWS_FILE: &str = "draws.csv";
pub const POINTWISE_FILE: &str = "pointwise.bin";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

const POINTWISE_MAGIC: &[u8; 8] = b"CJMPWLL1";

/// Writes `chain,draw,divergent,<names…>` with one row per kept draw.
pub fn write_draws_csv<W: Write>(draws: &PosteriorDraws, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["chain".to_string(), "draw".into(), "divergent".into()];
    header.extend(draws.names.iter().cloned());
    w.write_record(&header)?;
    for (c, chain) in draws.chains.iter().enumerate() {
        for (d, row) in chain.draws.iter().enumerate() {
            let mut rec = vec![c.to_string(), d.to_string(), u8::from(chain.divergent[d]).to_string()];
            rec.extend(row.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Draws table read back as column name → values per chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsTable {
    pub names: Vec<String>,
    /// `chains[c][d][j]`
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl DrawsTable {
    pub fn column(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.chains.iter().map(|c| c.iter().map(|r| r[j]).collect()).collect())
    }
}

pub fn read_draws_csv<R: Read>(input: R) -> Result<DrawsTable> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "draw" {
        return Err(Error::data("draws file must start with chain,draw,divergent"));
    }
    let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let c: usize = rec[0].parse().map_err(|_| Error::data(format!("bad chain index '{}'", &rec[0])))?;
        let row = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|_| Error::data(format!("bad draw value '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        if c >= chains.len() {
            chains.resize(c + 1, Vec::new());
        }
        chains[c].push(row);
    }
    Ok(DrawsTable { names, chains })
}

/// Pointwise survival log-likelihood per kept draw, with subject ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseMatrix {
    pub subjects: Vec<SubjectId>,
    /// `chains[c][d][i]`
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl PointwiseMatrix {
    pub fn from_draws(draws: &PosteriorDraws, subjects: Vec<SubjectId>) -> Self {
        Self { subjects, chains: draws.chains.iter().map(|c| c.pointwise.clone()).collect() }
    }

    /// Rows of all chains concatenated in chain order.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.chains.iter().flatten().cloned().collect()
    }
}

/// Little-endian layout: magic, `u64` chains, keep, subjects, the subject
/// ids, then `f64` values in chain/draw/subject order.
pub fn write_pointwise(path: &Path, m: &PointwiseMatrix) -> Result<()> {
    let keep = m.chains.first().map_or(0, Vec::len);
    let n = m.subjects.len();
    if m.chains.iter().any(|c| c.len() != keep || c.iter().any(|r| r.len() != n)) {
        return Err(Error::argument("pointwise matrix is ragged"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(POINTWISE_MAGIC)?;
    for v in [m.chains.len() as u64, keep as u64, n as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for id in &m.subjects {
        w.write_all(&id.to_le_bytes())?;
    }
    for v in m.chains.iter().flatten().flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pointwise(path: &Path) -> Result<PointwiseMatrix> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != POINTWISE_MAGIC {
        return Err(Error::data(format!("{} is not a pointwise log-likelihood file", path.display())));
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
        r.read_exact(&mut word)?;
        Ok(word)
    };
    let chains = u64::from_le_bytes(next(&mut r)?) as usize;
    let keep = u64::from_le_bytes(next(&mut r)?) as usize;
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let subjects = (0..n).map(|_| next(&mut r).map(u64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(chains);
    for _ in 0..chains {
        let mut c = Vec::with_capacity(keep);
        for _ in 0..keep {
            c.push((0..n).map(|_| next(&mut r).map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?);
        }
        out.push(c);
    }
    Ok(PointwiseMatrix { subjects, chains: out })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Record of one command run, written last into its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    /// Effective configuration with every default filled in.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub elapsed_secs: f64,
    pub status: String,
    pub messages: Vec<String>,
    /// Command-specific labels such as the replicate index or approach.
    #[serde(default)]
    pub attributes: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            elapsed_secs: 0.0,
            status: "ok".into(),
            messages: Vec::new(),
            attributes: BTreeMap::new(),
        }
    }

    /// Adds the digest of every regular file in `dir` (non-recursive) as an input.
    pub fn add_input_dir(&mut self, dir: &Path) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            self.inputs.insert(p.display().to_string(), file_digest(&p)?);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(self)?)?;
        Ok(p)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::data(format!("cannot read {}: {e}", p.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ChainDraws;

    fn toy_draws() -> PosteriorDraws {
        let chain = |off: f64| ChainDraws {
            draws: vec![vec![off, 0.1 + off], vec![off + 1.0, -2.5e-9]],
            accept_stat: vec![0.9, 0.8],
            divergent: vec![false, true],
            tree_depth: vec![3, 4],
            n_leapfrog: vec![7, 15],
            pointwise: vec![vec![-1.0, -2.0, -0.25], vec![-1.5, -0.1, -3.0 + off]],
            step_size: 0.3,
            inv_metric: vec![1.0, 1.0],
            warmup_divergences: 0,
        };
        PosteriorDraws { names: vec!["alpha1".into(), "alpha2".into()], chains: vec![chain(0.0), chain(10.0)] }
    }

    #[test]
    fn draws_csv_round_trip() {
        let d = toy_draws();
        let mut buf = Vec::new();
        write_draws_csv(&d, &mut buf).unwrap();
        let t = read_draws_csv(&buf[..]).unwrap();
        assert_eq!(t.names, d.names);
        assert_eq!(t.column("alpha2").unwrap(), d.column(1));
        assert!(String::from_utf8(buf).unwrap().contains("\n0,1,1,1.0,-2.5e-9\n"));
    }

    #[test]
    fn pointwise_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = PointwiseMatrix::from_draws(&toy_draws(), vec![4, 9, 12]);
        let p = dir.path().join(POINTWISE_FILE);
        write_pointwise(&p, &m).unwrap();
        assert_eq!(read_pointwise(&p).unwrap(), m);
        std::fs::write(&p, b"garbage!").unwrap();
        assert!(matches!(read_pointwise(&p), Err(Error::Data(_))));
    }

    #[test]
    fn manifest_round_trip_and_digests() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let mut m = RunManifest::new("fit", serde_json::json!({"seed": 3}), Some(3));
        m.add_input_dir(dir.path()).unwrap();
        let digest = m.inputs.values().next().unwrap();
        assert_eq!(digest, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
    }
}
