//! Output files stamped with provenance, plus readers for the tables the
//! commands exchange.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::runconfig::Provenance;

/// An output directory whose files all carry the same provenance.
pub struct OutDir {
    pub dir: PathBuf,
    pub provenance: Provenance,
}

impl OutDir {
    pub fn create(dir: &Path, provenance: Provenance) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), provenance })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    }

    /// CSV led by a `#` provenance comment.
    pub fn csv<S: AsRef<str>>(&self, name: &str, header: &[S], rows: &[Vec<String>]) -> Result<()> {
        let mut buf = format!("# {}\n", self.provenance.comment()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let err = |e: csv::Error| CliError::Format(e.to_string());
            w.write_record(header.iter().map(|s| s.as_ref())).map_err(err)?;
            for r in rows {
                w.write_record(r).map_err(err)?;
            }
            w.flush().map_err(|e| CliError::io(self.path(name), e))?;
        }
        self.write(name, &buf)
    }

    /// Pretty JSON object with a `provenance` field added.
    pub fn json(&self, name: &str, mut value: serde_json::Value) -> Result<()> {
        if let Some(obj) = value.as_object_mut() {
            obj.insert("provenance".into(), self.provenance.json());
        }
        self.write(name, format!("{value:#}\n").as_bytes())
    }

    /// Plain text led by a `#` provenance comment.
    pub fn text(&self, name: &str, body: &str) -> Result<()> {
        self.write(name, format!("# {}\n{body}", self.provenance.comment()).as_bytes())
    }

    /// Plain PGM with the provenance as a comment after the magic line.
    pub fn pgm(&self, name: &str, pgm: &str) -> Result<()> {
        let body = pgm.strip_prefix("P2\n").ok_or_else(|| CliError::Format("expected a P2 image".into()))?;
        self.write(name, format!("P2\n# {}\n{body}", self.provenance.comment()).as_bytes())
    }
}

/// Formats a number for tables: shortest representation that reads back
/// exactly, switching to exponent notation for very small or large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v.is_nan() {
        "NA".into()
    } else if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Rows of a CSV with a header, keyed by column name; `#` lines are skipped.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let fmt = |e: csv::Error| CliError::Format(format!("{}: {e}", path.display()));
    let header = rdr.headers().map_err(fmt)?.iter().map(str::to_string).collect();
    let rows = rdr.records().map(|r| r.map(|r| r.iter().map(str::to_string).collect())).collect::<std::result::Result<_, _>>();
    Ok((header, rows.map_err(fmt)?))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Format(format!("{}: no {name} column", path.display())))
}

/// `patient_id → risk` from a risk table.
pub fn read_risks(path: &Path) -> Result<BTreeMap<String, f64>> {
    let (header, rows) = read_table(path)?;
    let (pid, risk) = (column(&header, "patient_id", path)?, column(&header, "risk", path)?);
    let mut out = BTreeMap::new();
    for r in rows {
        let v: f64 = r[risk].parse().map_err(|_| CliError::Parse(format!("risk {:?} is not a number", r[risk])))?;
        if out.insert(r[pid].clone(), v).is_some() {
            return Err(CliError::data(format!("duplicate patient_id {} in {}", r[pid], path.display())));
        }
    }
    Ok(out)
}

/// A numeric matrix with a leading id column: `(ids, column names, rows)`.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = read_table(path)?;
    if header.len() < 2 {
        return Err(CliError::Format(format!("{}: need an id column and at least one value column", path.display())));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for r in rows {
        ids.push(r[0].clone());
        let vals = r[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| CliError::Parse(format!("{}: {c:?} is not a number", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        values.push(vals);
    }
    Ok((ids, header[1..].to_vec(), values))
}
