//! Longitudinal and survival records, dataset validation and CSV I/O.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SubjectId = u64;

/// One biomarker measurement with the subject's baseline covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalRecord {
    pub subject: SubjectId,
    pub time: f64,
    pub value: f64,
    pub covariates: Vec<f64>,
}

/// Follow-up of one subject: delayed entry, exit, event flag and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub subject: SubjectId,
    pub entry: f64,
    pub exit: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub longitudinal: Vec<LongitudinalRecord>,
    pub survival: Vec<SurvivalRecord>,
}

/// All information about one subject, gathered from both tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: SubjectId,
    pub entry: f64,
    pub exit: f64,
    pub event: bool,
    pub w_surv: Vec<f64>,
    pub w_long: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn n_subjects(&self) -> usize {
        self.survival.len()
    }

    pub fn n_long_covariates(&self) -> usize {
        self.longitudinal.first().map_or(0, |r| r.covariates.len())
    }

    pub fn n_surv_covariates(&self) -> usize {
        self.survival.first().map_or(0, |r| r.covariates.len())
    }

    pub fn censoring_rate(&self) -> f64 {
        let n = self.survival.len().max(1) as f64;
        self.survival.iter().filter(|s| !s.event).count() as f64 / n
    }

    /// Measurements per subject, in survival-table order.
    pub fn measurement_counts(&self) -> Vec<usize> {
        let mut counts: BTreeMap<SubjectId, usize> = BTreeMap::new();
        for r in &self.longitudinal {
            *counts.entry(r.subject).or_default() += 1;
        }
        self.survival.iter().map(|s| counts.get(&s.subject).copied().unwrap_or(0)).collect()
    }

    /// Largest time appearing anywhere in the data.
    pub fn max_time(&self) -> f64 {
        let a = self.survival.iter().map(|s| s.exit).fold(0.0, f64::max);
        self.longitudinal.iter().map(|r| r.time).fold(a, f64::max)
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.survival.iter().filter(|s| s.event).map(|s| s.exit).collect()
    }

    /// Checks the schema invariants: finite nonnegative times, entry ≤ exit,
    /// measurements no later than exit, consistent subject ids and covariate
    /// widths, and no duplicated `(subject, time)` pair.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let q = self.n_surv_covariates();
        for s in &self.survival {
            if !ids.insert(s.subject) {
                return Err(Error::data(format!("subject {} appears twice in survival data", s.subject)));
            }
            if !(s.entry.is_finite() && s.exit.is_finite()) || s.entry < 0.0 || s.exit < 0.0 {
                return Err(Error::data(format!("subject {}: invalid entry/exit times", s.subject)));
            }
            if s.entry > s.exit {
                return Err(Error::data(format!(
                    "subject {}: entry {} after exit {}",
                    s.subject, s.entry, s.exit
                )));
            }
            if s.event && s.exit <= s.entry {
                return Err(Error::data(format!("subject {}: event at or before entry", s.subject)));
            }
            if s.covariates.len() != q || s.covariates.iter().any(|c| !c.is_finite()) {
                return Err(Error::data(format!("subject {}: bad survival covariates", s.subject)));
            }
        }
        let exits: BTreeMap<SubjectId, f64> = self.survival.iter().map(|s| (s.subject, s.exit)).collect();
        let p = self.n_long_covariates();
        let mut seen = HashSet::new();
        let mut first_cov: BTreeMap<SubjectId, &Vec<f64>> = BTreeMap::new();
        for r in &self.longitudinal {
            let exit = exits.get(&r.subject).ok_or_else(|| {
                Error::data(format!("measurement for unknown subject {}", r.subject))
            })?;
            if !r.time.is_finite() || r.time < 0.0 || !r.value.is_finite() {
                return Err(Error::data(format!("subject {}: invalid measurement", r.subject)));
            }
            if r.time > *exit + 1e-9 {
                return Err(Error::data(format!(
                    "subject {}: measurement at {} after exit {}",
                    r.subject, r.time, exit
                )));
            }
            if !seen.insert((r.subject, r.time.to_bits())) {
                return Err(Error::data(format!(
                    "subject {}: duplicate measurement time {}",
                    r.subject, r.time
                )));
            }
            if r.covariates.len() != p || r.covariates.iter().any(|c| !c.is_finite()) {
                return Err(Error::data(format!("subject {}: bad longitudinal covariates", r.subject)));
            }
            match first_cov.get(&r.subject) {
                Some(c) if **c != r.covariates => {
                    return Err(Error::data(format!(
                        "subject {}: longitudinal covariates vary over time",
                        r.subject
                    )))
                }
                None => {
                    first_cov.insert(r.subject, &r.covariates);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Subjects in survival-table order with their measurements sorted by time.
    pub fn subjects(&self) -> Vec<Subject> {
        let mut by_id: BTreeMap<SubjectId, Vec<&LongitudinalRecord>> = BTreeMap::new();
        for r in &self.longitudinal {
            by_id.entry(r.subject).or_default().push(r);
        }
        let p = self.n_long_covariates();
        self.survival
            .iter()
            .map(|s| {
                let mut recs = by_id.remove(&s.subject).unwrap_or_default();
                recs.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
                Subject {
                    id: s.subject,
                    entry: s.entry,
                    exit: s.exit,
                    event: s.event,
                    w_surv: s.covariates.clone(),
                    w_long: recs.first().map_or_else(|| vec![0.0; p], |r| r.covariates.clone()),
                    times: recs.iter().map(|r| r.time).collect(),
                    values: recs.iter().map(|r| r.value).collect(),
                }
            })
            .collect()
    }

    /// Copy keeping only the given subject ids (order of the survival table).
    pub fn restrict(&self, keep: &HashSet<SubjectId>) -> Dataset {
        Dataset {
            longitudinal: self.longitudinal.iter().filter(|r| keep.contains(&r.subject)).cloned().collect(),
            survival: self.survival.iter().filter(|s| keep.contains(&s.subject)).cloned().collect(),
        }
    }
}

pub const LONGITUDINAL_FILE: &str = "longitudinal.csv";
pub const SURVIVAL_FILE: &str = "survival.csv";

fn cov_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Writes `subject,time,value,cov1..covp`. Lines in `provenance` are written
/// first as `#`-prefixed comments.
pub fn write_longitudinal<W: Write>(out: W, recs: &[LongitudinalRecord], provenance: &[String]) -> Result<()> {
    let mut out = out;
    for line in provenance {
        writeln!(out, "# {line}")?;
    }
    let p = recs.first().map_or(0, |r| r.covariates.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string(), "time".into(), "value".into()];
    header.extend(cov_header("cov", p));
    w.write_record(&header)?;
    for r in recs {
        let mut row = vec![r.subject.to_string(), fmt_f64(r.time), fmt_f64(r.value)];
        row.extend(r.covariates.iter().map(|c| fmt_f64(*c)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `subject,entry,exit,event,cov1..covq`.
pub fn write_survival<W: Write>(out: W, recs: &[SurvivalRecord], provenance: &[String]) -> Result<()> {
    let mut out = out;
    for line in provenance {
        writeln!(out, "# {line}")?;
    }
    let q = recs.first().map_or(0, |r| r.covariates.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string(), "entry".into(), "exit".into(), "event".into()];
    header.extend(cov_header("cov", q));
    w.write_record(&header)?;
    for r in recs {
        let mut row = vec![
            r.subject.to_string(),
            fmt_f64(r.entry),
            fmt_f64(r.exit),
            if r.event { "1".into() } else { "0".into() },
        ];
        row.extend(r.covariates.iter().map(|c| fmt_f64(*c)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input)
}

fn parse_field(rec: &csv::StringRecord, i: usize, what: &str, line: u64) -> Result<f64> {
    let s = rec.get(i).ok_or_else(|| Error::data(format!("line {line}: missing column {what}")))?;
    let v: f64 = s
        .parse()
        .map_err(|_| Error::data(format!("line {line}: column {what}: cannot parse '{s}'")))?;
    if !v.is_finite() {
        return Err(Error::data(format!("line {line}: column {what} is not finite")));
    }
    Ok(v)
}

fn check_header(h: &csv::StringRecord, expected: &[&str], file: &str) -> Result<usize> {
    for (i, e) in expected.iter().enumerate() {
        if h.get(i) != Some(*e) {
            return Err(Error::data(format!(
                "{file}: header column {} must be '{e}', found '{}'",
                i + 1,
                h.get(i).unwrap_or("")
            )));
        }
    }
    Ok(h.len() - expected.len())
}

pub fn read_longitudinal<R: Read>(input: R) -> Result<Vec<LongitudinalRecord>> {
    let mut rdr = reader(input);
    let ncov = check_header(rdr.headers()?, &["subject", "time", "value"], LONGITUDINAL_FILE)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let subject = rec[0]
            .parse()
            .map_err(|_| Error::data(format!("line {line}: bad subject id '{}'", &rec[0])))?;
        let time = parse_field(&rec, 1, "time", line)?;
        if time < 0.0 {
            return Err(Error::data(format!("line {line}: negative time")));
        }
        out.push(LongitudinalRecord {
            subject,
            time,
            value: parse_field(&rec, 2, "value", line)?,
            covariates: (0..ncov).map(|k| parse_field(&rec, 3 + k, "covariate", line)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

pub fn read_survival<R: Read>(input: R) -> Result<Vec<SurvivalRecord>> {
    let mut rdr = reader(input);
    let ncov = check_header(rdr.headers()?, &["subject", "entry", "exit", "event"], SURVIVAL_FILE)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let subject = rec[0]
            .parse()
            .map_err(|_| Error::data(format!("line {line}: bad subject id '{}'", &rec[0])))?;
        let event = match rec.get(3) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => return Err(Error::data(format!("line {line}: bad event flag {other:?}"))),
        };
        out.push(SurvivalRecord {
            subject,
            entry: parse_field(&rec, 1, "entry", line)?,
            exit: parse_field(&rec, 2, "exit", line)?,
            event,
            covariates: (0..ncov).map(|k| parse_field(&rec, 4 + k, "covariate", line)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// Reads and validates `longitudinal.csv` and `survival.csv` from `dir`.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let open = |name: &str| {
        let p = dir.join(name);
        std::fs::File::open(&p).map_err(|e| Error::data(format!("cannot open {}: {e}", p.display())))
    };
    let longitudinal = read_longitudinal(open(LONGITUDINAL_FILE)?)?;
    let survival = read_survival(open(SURVIVAL_FILE)?)?;
    let ds = Dataset { longitudinal, survival };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(dir: &Path, ds: &Dataset, provenance: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_longitudinal(std::fs::File::create(dir.join(LONGITUDINAL_FILE))?, &ds.longitudinal, provenance)?;
    write_survival(std::fs::File::create(dir.join(SURVIVAL_FILE))?, &ds.survival, provenance)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset {
            longitudinal: vec![
                LongitudinalRecord { subject: 1, time: 0.0, value: 5.0, covariates: vec![] },
                LongitudinalRecord { subject: 1, time: 0.5, value: 5.5, covariates: vec![] },
                LongitudinalRecord { subject: 2, time: 0.0, value: 4.0, covariates: vec![] },
            ],
            survival: vec![
                SurvivalRecord { subject: 1, entry: 0.0, exit: 3.0, event: true, covariates: vec![1.0] },
                SurvivalRecord { subject: 2, entry: 0.0, exit: 0.2, event: false, covariates: vec![0.0] },
            ],
        }
    }

    #[test]
    fn valid_dataset_passes_and_groups() {
        let ds = toy();
        ds.validate().unwrap();
        let subj = ds.subjects();
        assert_eq!(subj[0].times, vec![0.0, 0.5]);
        assert_eq!(ds.measurement_counts(), vec![2, 1]);
        assert!((ds.censoring_rate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn schema_violations_are_rejected() {
        let mut ds = toy();
        ds.longitudinal.push(LongitudinalRecord { subject: 1, time: 0.5, value: 1.0, covariates: vec![] });
        assert!(matches!(ds.validate(), Err(Error::Data(_))));

        let mut ds = toy();
        ds.survival[0].entry = 4.0;
        assert!(ds.validate().is_err());

        let mut ds = toy();
        ds.longitudinal[2].time = 0.3;
        assert!(ds.validate().is_err(), "measurement after exit");

        let mut ds = toy();
        ds.survival[1].entry = 0.2;
        ds.survival[1].event = true;
        assert!(ds.validate().is_err(), "event at entry");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = toy();
        let mut lbuf = Vec::new();
        let mut sbuf = Vec::new();
        write_longitudinal(&mut lbuf, &ds.longitudinal, &["seed = 1".into()]).unwrap();
        write_survival(&mut sbuf, &ds.survival, &[]).unwrap();
        assert!(String::from_utf8_lossy(&lbuf).starts_with("# seed = 1\nsubject,time,value\n"));
        assert_eq!(read_longitudinal(&lbuf[..]).unwrap(), ds.longitudinal);
        assert_eq!(read_survival(&sbuf[..]).unwrap(), ds.survival);
    }

    #[test]
    fn nan_and_negative_times_are_rejected_on_read() {
        let bad = "subject,time,value\n1,NaN,2.0\n";
        assert!(read_longitudinal(bad.as_bytes()).is_err());
        let bad = "subject,time,value\n1,-1.0,2.0\n";
        assert!(read_longitudinal(bad.as_bytes()).is_err());
        let bad = "subj,time,value\n";
        assert!(read_longitudinal(bad.as_bytes()).is_err());
    }
}
