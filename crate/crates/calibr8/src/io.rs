//! Machine-readable result formats: particle/chain CSV with full-precision
//! reals, predictive-sample CSV, and the diagnostics sidecar.
//!
//! Reals serialize with 17 significant digits, which round-trips `f64`
//! exactly; `NaN` is written literally (ABC and EKI particles carry no
//! log-posterior).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::calibrate::{Chain, ParticleMeta, ParticleSet};
use crate::predict::PredictiveSample;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error: {0}")]
    Schema(String),
}

/// 17-significant-digit decimal form; parses back to the identical bits.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_f64(tok: &str) -> Result<f64, IoError> {
    tok.trim()
        .parse::<f64>()
        .map_err(|e| IoError::Schema(format!("unparseable real {tok:?}: {e}")))
}

/// Write a particle set with the header `x_<name>,...,weight,log_post`.
pub fn write_particles_csv<W: Write>(
    writer: W,
    names: &[String],
    set: &ParticleSet,
) -> Result<(), IoError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = names.iter().map(|n| format!("x_{n}")).collect();
    header.push("weight".into());
    header.push("log_post".into());
    csv_writer.write_record(&header)?;
    for ((point, &weight), &log_post) in set
        .points
        .iter()
        .zip(&set.weights)
        .zip(&set.log_post)
    {
        let mut record: Vec<String> = point.iter().map(|&v| format_f64(v)).collect();
        record.push(format_f64(weight));
        record.push(format_f64(log_post));
        csv_writer.write_record(&record)?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// Write a chain in the particle schema (uniform weights `1/T`).
pub fn write_chain_csv<W: Write>(
    writer: W,
    names: &[String],
    chain: &Chain,
) -> Result<(), IoError> {
    let mut set = chain.to_particles();
    set.meta.partial = chain.partial;
    write_particles_csv(writer, names, &set)
}

/// Parse a particle CSV back into names and a particle set.
pub fn read_particles_csv<R: Read>(reader: R) -> Result<(Vec<String>, ParticleSet), IoError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let header = csv_reader.headers()?.clone();
    let columns: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    if columns.len() < 3
        || columns[columns.len() - 2] != "weight"
        || columns[columns.len() - 1] != "log_post"
    {
        return Err(IoError::Schema(
            "expected header x_<name>,...,weight,log_post".into(),
        ));
    }
    let names: Vec<String> = columns[..columns.len() - 2]
        .iter()
        .map(|c| {
            c.strip_prefix("x_")
                .map(|s| s.to_string())
                .ok_or_else(|| IoError::Schema(format!("parameter column {c:?} must start x_")))
        })
        .collect::<Result<_, _>>()?;
    let d = names.len();

    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut log_post = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        if record.len() != d + 2 {
            return Err(IoError::Schema(format!(
                "row has {} fields, expected {}",
                record.len(),
                d + 2
            )));
        }
        let mut point = Vec::with_capacity(d);
        for tok in record.iter().take(d) {
            point.push(parse_f64(tok)?);
        }
        points.push(point);
        weights.push(parse_f64(&record[d])?);
        log_post.push(parse_f64(&record[d + 1])?);
    }
    if points.is_empty() {
        return Err(IoError::Schema("no particles in file".into()));
    }
    let mut set = ParticleSet {
        points,
        weights,
        log_post,
        meta: ParticleMeta {
            method: "loaded".into(),
            ..Default::default()
        },
    };
    set.meta.ess = set.ess();
    Ok((names, set))
}

/// Write predictive draws, one row per draw, header `y_1..y_n`.
pub fn write_predictive_csv<W: Write>(
    writer: W,
    sample: &PredictiveSample,
) -> Result<(), IoError> {
    let n = sample.draws.first().map_or(0, |d| d.len());
    let mut csv_writer = csv::Writer::from_writer(writer);
    let header: Vec<String> = (1..=n).map(|i| format!("y_{i}")).collect();
    csv_writer.write_record(&header)?;
    for draw in &sample.draws {
        let record: Vec<String> = draw.iter().map(|&v| format_f64(v)).collect();
        csv_writer.write_record(&record)?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// Parse predictive draws (any numeric CSV with one row per draw; a
/// non-numeric first row is treated as a header).
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>, IoError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        let parsed: Result<Vec<f64>, _> =
            record.iter().map(|tok| tok.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) if !row.is_empty() => rows.push(row),
            Ok(_) => {}
            Err(_) if rows.is_empty() => {} // header row
            Err(e) => return Err(IoError::Schema(format!("unparseable row: {e}"))),
        }
    }
    if rows.is_empty() {
        return Err(IoError::Schema("no numeric rows".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(IoError::Schema("ragged rows".into()));
    }
    Ok(rows)
}

/// Read a single vector: one row, or one value per line.
pub fn read_vector_csv<R: Read>(reader: R) -> Result<Vec<f64>, IoError> {
    let rows = read_matrix_csv(reader)?;
    if rows.len() == 1 {
        Ok(rows.into_iter().next().expect("one row"))
    } else if rows.iter().all(|r| r.len() == 1) {
        Ok(rows.into_iter().map(|r| r[0]).collect())
    } else {
        Err(IoError::Schema(
            "expected a single row or a single column of reals".into(),
        ))
    }
}

/// Per-run diagnostics sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_sim_evals: u64,
    pub acceptance_rate: Option<f64>,
    pub ess: Option<f64>,
    pub runtime_s: f64,
    pub partial: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::ParticleSet;

    #[test]
    fn particles_round_trip_bit_exactly() {
        let set = ParticleSet {
            points: vec![
                vec![0.1234567890123456789, -2.5e-17],
                vec![std::f64::consts::PI, 1.0 / 3.0],
            ],
            weights: vec![0.25, 0.75],
            log_post: vec![-1.5, f64::NAN],
            meta: Default::default(),
        };
        let names = vec!["a".to_string(), "b".to_string()];
        let mut buffer = Vec::new();
        write_particles_csv(&mut buffer, &names, &set).unwrap();
        let (back_names, back) = read_particles_csv(buffer.as_slice()).unwrap();
        assert_eq!(back_names, names);
        for (orig, parsed) in set.points.iter().flatten().zip(back.points.iter().flatten()) {
            assert_eq!(orig.to_bits(), parsed.to_bits());
        }
        assert_eq!(set.weights, back.weights);
        assert!(back.log_post[1].is_nan());
    }

    #[test]
    fn header_schema_is_enforced() {
        let bad = "a,weight\n1.0,1.0\n";
        assert!(matches!(
            read_particles_csv(bad.as_bytes()),
            Err(IoError::Schema(_))
        ));
        let bad2 = "x_a,log_post,weight\n1.0,0.0,1.0\n";
        assert!(matches!(
            read_particles_csv(bad2.as_bytes()),
            Err(IoError::Schema(_))
        ));
    }

    #[test]
    fn vector_reads_row_or_column() {
        assert_eq!(
            read_vector_csv("1.0,2.0,3.0\n".as_bytes()).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            read_vector_csv("1.0\n2.0\n3.0\n".as_bytes()).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            read_vector_csv("y\n1.5\n2.5\n".as_bytes()).unwrap(),
            vec![1.5, 2.5]
        );
    }

    #[test]
    fn diagnostics_serialize_with_pinned_keys() {
        let d = Diagnostics {
            n_sim_evals: 42,
            acceptance_rate: Some(0.3),
            ess: None,
            runtime_s: 1.25,
            partial: false,
        };
        let json = serde_json::to_value(&d).unwrap();
        for key in ["n_sim_evals", "acceptance_rate", "ess", "runtime_s", "partial"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert!(json["ess"].is_null());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn format_parse_is_identity(bits in any::<u64>()) {
                let v = f64::from_bits(bits);
                prop_assume!(!v.is_infinite());
                let s = format_f64(v);
                let back: f64 = s.parse().unwrap();
                if v.is_nan() {
                    prop_assert!(back.is_nan());
                } else {
                    prop_assert_eq!(v.to_bits(), back.to_bits());
                }
            }
        }
    }
}
