//! Cohort manifest CSV: `patient_id,time,event[,bag][,covariate...]`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use tdam_core::bag::{Cohort, SurvivalRecord};

use crate::error::{CliError, Result};
use crate::runconfig::Provenance;

const REQUIRED: [&str; 3] = ["patient_id", "time", "event"];
const BAG_COLUMN: &str = "bag";

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "null")
}

/// Parses a manifest. Blank or `NA` covariate cells become `None`; lines
/// starting with `#` are comments.
pub fn parse_cohort_manifest(text: &str) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| CliError::Format(format!("manifest header: {e}")))?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let [pid, time, event] = REQUIRED.map(col);
    let (Some(pid), Some(time), Some(event)) = (pid, time, event) else {
        return Err(CliError::Format(format!("manifest header must contain {}", REQUIRED.join(","))));
    };
    let bag = col(BAG_COLUMN);
    let covs: Vec<(usize, &String)> =
        header.iter().enumerate().filter(|(i, _)| ![pid, time, event].contains(i) && Some(*i) != bag).collect();

    let mut records = Vec::new();
    let mut bag_paths = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| CliError::Format(format!("manifest row {line}: {e}")))?;
        let id = rec[pid].to_string();
        let t: f64 = rec[time]
            .parse()
            .map_err(|_| CliError::Parse(format!("row {line}: time {:?} is not a number", &rec[time])))?;
        let ev = match &rec[event] {
            "0" => false,
            "1" => true,
            other => return Err(CliError::Parse(format!("row {line}: event {other:?} must be 0 or 1"))),
        };
        if !(t > 0.0) || !t.is_finite() {
            return Err(CliError::data(format!("row {line}: patient {id} has non-positive time {t}")));
        }
        let mut r = SurvivalRecord::new(id.clone(), t, ev);
        for &(i, name) in &covs {
            let cell = &rec[i];
            let v = if is_missing(cell) {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| {
                    CliError::Parse(format!("row {line}: covariate {name} value {cell:?} is not a number"))
                })?)
            };
            r.covariates.insert(name.clone(), v);
        }
        if let Some(b) = bag.filter(|&b| !rec[b].is_empty()) {
            bag_paths.insert(id, rec[b].to_string());
        }
        records.push(r);
    }
    Ok(Cohort::new(records, bag_paths)?)
}

pub fn load_cohort_manifest(path: &Path) -> Result<Cohort> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_cohort_manifest(&text)
}

/// Writes a manifest with a provenance comment; times keep full precision.
pub fn write_cohort_manifest(cohort: &Cohort, path: &Path, provenance: &Provenance) -> Result<()> {
    let covs: Vec<String> = {
        let mut names: Vec<String> = cohort.records.iter().flat_map(|r| r.covariates.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    };
    let mut buf = Vec::new();
    writeln!(buf, "# {}", provenance.comment()).expect("write to vec");
    let mut w = csv::Writer::from_writer(buf);
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    if !cohort.bag_paths.is_empty() {
        header.push(BAG_COLUMN.into());
    }
    header.extend(covs.iter().cloned());
    let csv_err = |e: csv::Error| CliError::Format(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in &cohort.records {
        let mut row = vec![r.patient_id.clone(), r.time.to_string(), (r.event as u8).to_string()];
        if !cohort.bag_paths.is_empty() {
            row.push(cohort.bag_paths.get(&r.patient_id).cloned().unwrap_or_default());
        }
        for c in &covs {
            row.push(r.covariates.get(c).copied().flatten().map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Format(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
