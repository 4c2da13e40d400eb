//! Measurement-record CSV format shared by simulate and tomo: one row per
//! shot with the probe mean, both homodyne outcomes, the applied angle, and
//! the post-processed outcome. Floats print in shortest round-trip form, so
//! a write/read cycle is exact and reruns are byte-identical.

use std::path::Path;

use nlq_core::circuit::MeasurementRecord;
use nlq_core::error::{Result, SimError};
use nlq_core::states::CoherentProbe;

const HEADER: [&str; 6] = ["alpha_x", "alpha_p", "q", "y", "m", "theta"];

/// Writes records with full precision.
pub fn write_records_csv(path: &Path, records: &[MeasurementRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
    wtr.write_record(HEADER)?;
    for r in records {
        wtr.write_record(&[
            format!("{}", r.probe.alpha_x),
            format!("{}", r.probe.alpha_p),
            format!("{}", r.q),
            format!("{}", r.y),
            format!("{}", r.m),
            format!("{}", r.theta_applied),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a record file back, validating the schema.
pub fn read_records_csv(path: &Path) -> Result<Vec<MeasurementRecord>> {
    let file = std::fs::File::open(path).map_err(|e| {
        SimError::InvalidConfig(format!("cannot open records {}: {e}", path.display()))
    })?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    {
        let headers = rdr.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != HEADER {
            return Err(SimError::FileFormat(format!(
                "record header mismatch: expected {HEADER:?}, got {got:?}"
            )));
        }
    }
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| {
                    SimError::FileFormat(format!("record row {line} has {} fields", row.len()))
                })?
                .parse::<f64>()
                .map_err(|e| SimError::FileFormat(format!("record row {line} field {i}: {e}")))
        };
        records.push(MeasurementRecord {
            probe: CoherentProbe::new(field(0)?, field(1)?),
            q: field(2)?,
            y: field(3)?,
            m: field(4)?,
            theta_applied: field(5)?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<MeasurementRecord> {
        vec![
            MeasurementRecord {
                probe: CoherentProbe::new(0.1, -0.2),
                q: 0.3,
                y: -0.4,
                m: 0.5,
                theta_applied: 0.21626990639214828,
            },
            MeasurementRecord {
                probe: CoherentProbe::new(-1.75e-3, 2.0),
                q: -0.6038560908479259,
                y: 1.0,
                m: -2.0,
                theta_applied: 0.0,
            },
        ]
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let records = sample();
        write_records_csv(&path, &records).unwrap();
        let back = read_records_csv(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.probe.alpha_x.to_bits(), b.probe.alpha_x.to_bits());
            assert_eq!(a.probe.alpha_p.to_bits(), b.probe.alpha_p.to_bits());
            assert_eq!(a.q.to_bits(), b.q.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.m.to_bits(), b.m.to_bits());
            assert_eq!(a.theta_applied.to_bits(), b.theta_applied.to_bits());
        }
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.csv");
        let second = dir.path().join("b.csv");
        write_records_csv(&first, &sample()).unwrap();
        write_records_csv(&second, &sample()).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        let err = read_records_csv(&path).unwrap_err();
        assert!(err.to_string().contains("header mismatch"));
    }

    #[test]
    fn malformed_float_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "alpha_x,alpha_p,q,y,m,theta\n1,2,3,4,oops,6\n").unwrap();
        let err = read_records_csv(&path).unwrap_err();
        assert!(err.to_string().contains("field 4"));
    }
}
