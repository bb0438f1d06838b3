//! Per-tick trace rows and their CSV form.

use std::io::{Read, Write};

use nalgebra::Vector3;
use thiserror::Error;

pub const TRACE_HEADER: [&str; 26] = [
    "t", "epm_x", "epm_y", "epm_z", "epm_mx", "epm_my", "epm_mz", "tip_x", "tip_y", "tip_z",
    "tipn_x", "tipn_y", "tipn_z", "theta", "pressure", "length", "Fg", "Fm_x", "Fm_y", "Fm_z",
    "tau_x", "tau_y", "tau_z", "contact", "buckled", "wall_gap",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("row {row}: column {column}: {message}")]
    Field {
        row: usize,
        column: &'static str,
        message: String,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    Width {
        row: usize,
        expected: usize,
        found: usize,
    },
}

/// One simulation tick. The EPM columns are zero while the EPM is removed.
/// `wall_gap` is infinite in free space.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub epm_position: Vector3<f64>,
    /// A m^2
    pub epm_moment: Vector3<f64>,
    pub tip: Vector3<f64>,
    pub tip_measured: Vector3<f64>,
    pub theta: f64,
    pub pressure: f64,
    pub length: f64,
    pub growing_force: f64,
    pub magnetic_force: Vector3<f64>,
    pub magnetic_torque: Vector3<f64>,
    pub contact: bool,
    pub buckled: bool,
    pub wall_gap: f64,
}

impl TraceRecord {
    fn fields(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(TRACE_HEADER.len());
        out.push(self.t.to_string());
        for v in [
            &self.epm_position,
            &self.epm_moment,
            &self.tip,
            &self.tip_measured,
        ] {
            out.extend(v.iter().map(f64::to_string));
        }
        for x in [self.theta, self.pressure, self.length, self.growing_force] {
            out.push(x.to_string());
        }
        for v in [&self.magnetic_force, &self.magnetic_torque] {
            out.extend(v.iter().map(f64::to_string));
        }
        out.push(u8::from(self.contact).to_string());
        out.push(u8::from(self.buckled).to_string());
        out.push(self.wall_gap.to_string());
        out
    }
}

/// Write rows with the fixed header. Floats use the shortest representation
/// that reads back to the same bits.
pub fn write_trace<W: Write>(w: W, rows: &[TraceRecord]) -> Result<(), TraceError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TRACE_HEADER)?;
    for r in rows {
        wtr.write_record(r.fields())?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn trace_to_string(rows: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(TraceError::Header {
            expected: TRACE_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != TRACE_HEADER.len() {
            return Err(TraceError::Width {
                row,
                expected: TRACE_HEADER.len(),
                found: rec.len(),
            });
        }
        let num = |k: usize| -> Result<f64, TraceError> {
            rec[k].trim().parse::<f64>().map_err(|e| TraceError::Field {
                row,
                column: TRACE_HEADER[k],
                message: e.to_string(),
            })
        };
        let flag = |k: usize| -> Result<bool, TraceError> {
            match rec[k].trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(TraceError::Field {
                    row,
                    column: TRACE_HEADER[k],
                    message: format!("expected 0 or 1, found {other:?}"),
                }),
            }
        };
        let v3 = |k: usize| -> Result<Vector3<f64>, TraceError> {
            Ok(Vector3::new(num(k)?, num(k + 1)?, num(k + 2)?))
        };
        rows.push(TraceRecord {
            t: num(0)?,
            epm_position: v3(1)?,
            epm_moment: v3(4)?,
            tip: v3(7)?,
            tip_measured: v3(10)?,
            theta: num(13)?,
            pressure: num(14)?,
            length: num(15)?,
            growing_force: num(16)?,
            magnetic_force: v3(17)?,
            magnetic_torque: v3(20)?,
            contact: flag(23)?,
            buckled: flag(24)?,
            wall_gap: num(25)?,
        });
    }
    Ok(rows)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    read_trace(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TraceRecord {
        TraceRecord {
            t: 0.01,
            epm_position: Vector3::new(0.1, -0.2, 0.15),
            epm_moment: Vector3::new(0.0, 952.9, 0.0),
            tip: Vector3::new(1.0 / 3.0, 2e-17, -0.0),
            tip_measured: Vector3::new(0.3341, 0.001, 0.0),
            theta: 0.7,
            pressure: 10e3,
            length: 0.15,
            growing_force: 11.7,
            magnetic_force: Vector3::new(1e-3, -2e-3, 3e-3),
            magnetic_torque: Vector3::new(0.0, 0.0, 0.02),
            contact: true,
            buckled: false,
            wall_gap: f64::INFINITY,
        }
    }

    #[test]
    fn header_is_exact() {
        let s = trace_to_string(&[]);
        assert_eq!(
            s.trim_end(),
            "t,epm_x,epm_y,epm_z,epm_mx,epm_my,epm_mz,tip_x,tip_y,tip_z,tipn_x,tipn_y,tipn_z,theta,pressure,length,Fg,Fm_x,Fm_y,Fm_z,tau_x,tau_y,tau_z,contact,buckled,wall_gap"
        );
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let rows = vec![
            sample(),
            TraceRecord {
                wall_gap: 0.0125,
                contact: false,
                ..sample()
            },
        ];
        let back = parse_trace(&trace_to_string(&rows)).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].tip.z.to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn bad_flag_names_column() {
        let mut s = trace_to_string(&[sample()]);
        s = s.replace(",1,0,inf", ",yes,0,inf");
        let err = parse_trace(&s).unwrap_err().to_string();
        assert!(err.contains("contact"), "{err}");
    }
}
