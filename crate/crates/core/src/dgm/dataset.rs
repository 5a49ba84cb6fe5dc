use std::io::{Read, Write};

use super::{PatientRecord, TrialData};
use crate::error::{Error, Result};

/// Column order of the dataset CSV; `y2_star` is optional and oracle-only.
pub const DATASET_HEADER: [&str; 10] = [
    "patient_id", "treat", "y0", "y05", "y1", "y15", "y2", "sym05", "sym1", "sym15",
];

/// Writes one row per patient. `with_y2_star` appends the oracle-only column.
pub fn write_dataset_csv<W: Write>(trial: &TrialData, with_y2_star: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = DATASET_HEADER.to_vec();
    if with_y2_star {
        header.push("y2_star");
    }
    w.write_record(&header)?;
    for (i, p) in trial.patients.iter().enumerate() {
        let mut row = vec![i.to_string(), p.treat.to_string(), p.y0.to_string()];
        row.extend(p.y.iter().map(f64::to_string));
        row.extend(p.sym.iter().map(f64::to_string));
        if with_y2_star {
            let y2s = p
                .y2_star
                .ok_or_else(|| Error::Schema(format!("patient {i} has no y2_star value")))?;
            row.push(y2s.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Schema(format!("flush failed: {e}")))?;
    Ok(())
}

/// Reads a dataset CSV. Columns are matched by name; extra columns are ignored.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<TrialData> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = r.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<&str> = DATASET_HEADER[1..]
        .iter()
        .copied()
        .filter(|c| find(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing column(s): {}", missing.join(", "))));
    }
    let idx: Vec<usize> = DATASET_HEADER[1..].iter().map(|c| find(c).unwrap()).collect();
    let y2s_idx = find("y2_star");

    let mut patients = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |col: usize, name: &str| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::Schema(format!("row {}: column {name}: cannot parse {raw:?}", line + 1))
            })
        };
        let v: Vec<f64> = idx
            .iter()
            .zip(&DATASET_HEADER[1..])
            .map(|(&c, name)| num(c, name))
            .collect::<Result<_>>()?;
        let y2_star = match y2s_idx {
            Some(c) => Some(num(c, "y2_star")?),
            None => None,
        };
        patients.push(PatientRecord {
            treat: v[0],
            y0: v[1],
            y: [v[2], v[3], v[4], v[5]],
            sym: [v[6], v[7], v[8]],
            y2_star,
        });
    }
    let trial = TrialData::new(patients);
    trial
        .validate()
        .map_err(|e| Error::Schema(e.to_string()))?;
    Ok(trial)
}
