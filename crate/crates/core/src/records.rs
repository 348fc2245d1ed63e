//! CSV form of reading records and timestamp conventions for frame files.
//!
//! Columns, in order: `timestamp, status, pixel_row, delta_h_cm, height_cm,
//! match_score, detector_gap_px`. Absent values are empty fields.

use std::io::{Read, Write};

use chrono::NaiveDateTime;

use crate::ensemble::{Reading, ReadingRecord, Status};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] = [
    "timestamp",
    "status",
    "pixel_row",
    "delta_h_cm",
    "height_cm",
    "match_score",
    "detector_gap_px",
];

/// Timestamp layout embedded in frame file names.
pub const FILE_TIMESTAMP: &str = "%Y%m%dT%H%M%S";
/// Timestamp layout used in CSV files.
pub const CSV_TIMESTAMP: &str = "%Y-%m-%dT%H:%M:%S";

/// Finds a `YYYYMMDDTHHMMSS` (or `YYYYMMDD_HHMMSS`) stamp anywhere in a
/// file name.
pub fn timestamp_from_name(name: &str) -> Option<NaiveDateTime> {
    let bytes = name.as_bytes();
    if bytes.len() < 15 {
        return None;
    }
    (0..=bytes.len() - 15).find_map(|i| {
        let chunk = name.get(i..i + 15)?;
        let sep = chunk.as_bytes()[8];
        if sep != b'T' && sep != b'_' {
            return None;
        }
        let normalized = format!("{}T{}", &chunk[..8], &chunk[9..]);
        NaiveDateTime::parse_from_str(&normalized, FILE_TIMESTAMP).ok()
    })
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(CSV_TIMESTAMP).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, CSV_TIMESTAMP)
        .ok()
        .or_else(|| timestamp_from_name(s))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_records<W: Write>(out: W, records: &[ReadingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.timestamp.as_ref().map(format_timestamp).unwrap_or_default(),
            r.status.as_str().to_string(),
            opt(r.reading.map(|x| x.pixel_row)),
            opt(r.reading.map(|x| x.delta_h_cm)),
            opt(r.reading.map(|x| x.height_cm)),
            opt(r.match_score),
            opt(r.detector_gap_px),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<ReadingRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Input(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Input(format!("unexpected readings header: {headers:?}")));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Input(e.to_string()))?;
        let field = |i: usize| -> Result<Option<f64>> {
            let s = row.get(i).unwrap_or_default().trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| {
                Error::Input(format!("row {}: bad number `{s}` in {}", line + 2, CSV_HEADER[i]))
            })
        };
        let ts = row.get(0).unwrap_or_default();
        let timestamp = if ts.is_empty() {
            None
        } else {
            Some(parse_timestamp(ts).ok_or_else(|| {
                Error::Input(format!("row {}: bad timestamp `{ts}`", line + 2))
            })?)
        };
        let status: Status = row.get(1).unwrap_or_default().parse()?;
        let reading = match (field(2)?, field(3)?, field(4)?) {
            (Some(pixel_row), Some(delta_h_cm), Some(height_cm)) => {
                Some(Reading { pixel_row, delta_h_cm, height_cm })
            }
            (None, None, None) => None,
            _ => return Err(Error::Input(format!("row {}: partial reading", line + 2))),
        };
        if (status == Status::Ok) != reading.is_some() {
            return Err(Error::Input(format!(
                "row {}: status {} inconsistent with height fields",
                line + 2,
                status.as_str()
            )));
        }
        out.push(ReadingRecord {
            timestamp,
            status,
            reading,
            match_score: field(5)?,
            detector_gap_px: field(6)?,
        });
    }
    Ok(out)
}
