//! CSV files for samples, weighted atoms and chain traces.
//!
//! Columns are `theta_1..theta_d`, optionally followed by `weight` and
//! `source_shard` (atoms) or `log_gamma` (traces). Floats are written in
//! shortest round-trip form so files read back bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::combine::WeightedAtoms;
use crate::model::ParamPoint;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Schema(String),
}

fn theta_header(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("theta_{j}")).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

pub fn write_points<W: Write>(out: W, points: &[ParamPoint], d: usize) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(theta_header(d))?;
    for p in points {
        w.write_record(p.iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_points(path: impl AsRef<Path>, points: &[ParamPoint], d: usize) -> Result<(), IoError> {
    write_points(BufWriter::new(File::create(path)?), points, d)
}

pub fn save_atoms(path: impl AsRef<Path>, atoms: &WeightedAtoms) -> Result<(), IoError> {
    let mut w = writer(path.as_ref())?;
    let mut header = theta_header(atoms.dim());
    header.extend(["weight".to_string(), "source_shard".to_string()]);
    w.write_record(&header)?;
    for a in &atoms.atoms {
        let mut row: Vec<String> = a.theta.iter().map(|v| fmt(*v)).collect();
        row.push(fmt(a.weight));
        row.push(a.shard.map(|k| k.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(path: impl AsRef<Path>, trace: &[(ParamPoint, f64)], d: usize) -> Result<(), IoError> {
    let mut w = writer(path.as_ref())?;
    let mut header = theta_header(d);
    header.push("log_gamma".to_string());
    w.write_record(&header)?;
    for (theta, v) in trace {
        let mut row: Vec<String> = theta.iter().map(|x| fmt(*x)).collect();
        row.push(fmt(*v));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `theta_*` columns of any file written by this module.
pub fn read_points<R: Read>(input: R) -> Result<Vec<ParamPoint>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("theta_"))
        .map(|(i, _)| i)
        .collect();
    for (j, &c) in cols.iter().enumerate() {
        if header[c] != format!("theta_{}", j + 1) {
            return Err(IoError::Schema(format!("unexpected column `{}`", &header[c])));
        }
    }
    if cols.is_empty() {
        return Err(IoError::Schema("no theta_ columns".into()));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let theta = cols
            .iter()
            .map(|&c| {
                rec[c].parse::<f64>().map_err(|_| {
                    IoError::Schema(format!("row {}: `{}` is not a number", line + 2, &rec[c]))
                })
            })
            .collect::<Result<Vec<f64>, IoError>>()?;
        out.push(ParamPoint(theta));
    }
    Ok(out)
}

pub fn load_points(path: impl AsRef<Path>) -> Result<Vec<ParamPoint>, IoError> {
    read_points(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combine::WeightedAtom;

    #[test]
    fn points_round_trip_exactly() {
        let pts = vec![
            ParamPoint(vec![0.1, -1e-300]),
            ParamPoint(vec![1.0 / 3.0, 12345.678901234567]),
        ];
        let mut buf = Vec::new();
        write_points(&mut buf, &pts, 2).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta_1,theta_2\n"));
        assert_eq!(read_points(buf.as_slice()).unwrap(), pts);
    }

    #[test]
    fn atoms_and_traces_readable() {
        let dir = tempfile::tempdir().unwrap();
        let atoms = WeightedAtoms {
            atoms: vec![
                WeightedAtom {
                    theta: ParamPoint(vec![0.5]),
                    weight: 0.25,
                    shard: Some(1),
                },
                WeightedAtom {
                    theta: ParamPoint(vec![-2.0]),
                    weight: 0.75,
                    shard: Some(3),
                },
            ],
            source_shard: None,
            ess: None,
        };
        let p = dir.path().join("a.csv");
        save_atoms(&p, &atoms).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "theta_1,weight,source_shard");
        assert_eq!(load_points(&p).unwrap(), vec![ParamPoint(vec![0.5]), ParamPoint(vec![-2.0])]);

        let t = dir.path().join("t.csv");
        save_trace(&t, &[(ParamPoint(vec![1.5, 2.5]), -3.25)], 2).unwrap();
        assert_eq!(load_points(&t).unwrap(), vec![ParamPoint(vec![1.5, 2.5])]);
    }

    #[test]
    fn malformed_rows_rejected() {
        let bad = "theta_1\nabc\n";
        assert!(matches!(read_points(bad.as_bytes()), Err(IoError::Schema(_))));
        assert!(read_points("weight\n1.0\n".as_bytes()).is_err());
    }
}
