//! Production CSV (`timestamp_utc,node_0,node_1,...`) and plant JSON files.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};

use super::{Dataset, PlantSpec, STEP_MINUTES};
use crate::error::{Error, Result};

/// Runs of up to this many missing rows are linearly interpolated.
pub const MAX_INTERPOLATED_GAP: i64 = 4;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

fn parse_err(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    read_csv(File::open(path)?)
}

/// Parses and validates a production CSV. Row numbers in errors are file
/// line numbers (the header is line 1).
pub fn read_csv(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("timestamp_utc") || header.len() < 2 {
        return Err(parse_err(
            1,
            "header must be `timestamp_utc,node_0,...` with at least one node",
        ));
    }
    let n = header.len() - 1;
    let step = chrono::Duration::minutes(STEP_MINUTES);
    let mut start: Option<DateTime<Utc>> = None;
    let mut last: Option<DateTime<Utc>> = None;
    let mut power: Vec<f64> = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(parse_err(
                row,
                format!("expected {} fields, got {}", n + 1, rec.len()),
            ));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| parse_err(row, format!("unreadable timestamp `{}`", &rec[0])))?;
        let values = (1..=n)
            .map(|j| {
                let v: f64 = rec[j]
                    .parse()
                    .map_err(|_| parse_err(row, format!("unreadable value `{}`", &rec[j])))?;
                if !v.is_finite() {
                    return Err(parse_err(row, format!("non-finite power {v}")));
                }
                if v < 0.0 {
                    return Err(parse_err(
                        row,
                        format!("negative power {v} at node {}", j - 1),
                    ));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;

        if let Some(prev) = last {
            let delta = ts - prev;
            if delta <= chrono::Duration::zero() || delta.num_seconds() % (STEP_MINUTES * 60) != 0 {
                return Err(parse_err(
                    row,
                    format!("timestamp {ts} does not follow {prev} on the 15-minute grid"),
                ));
            }
            let steps = delta.num_seconds() / (STEP_MINUTES * 60);
            let missing = steps - 1;
            if missing > MAX_INTERPOLATED_GAP {
                return Err(Error::Window(format!(
                    "gap of {missing} missing rows from {} to {} (line {row}); at most {MAX_INTERPOLATED_GAP} are interpolated",
                    prev + step,
                    ts - step
                )));
            }
            if missing > 0 {
                log::warn!(
                    "interpolating {missing} missing rows between {prev} and {ts} (line {row})"
                );
                let base = power.len() - n;
                let before: Vec<f64> = power[base..].to_vec();
                for k in 1..=missing {
                    let w = k as f64 / steps as f64;
                    power.extend(before.iter().zip(&values).map(|(a, b)| a + w * (b - a)));
                }
            }
        } else {
            start = Some(ts);
        }
        power.extend(values);
        last = Some(ts);
    }
    let start = start.ok_or_else(|| parse_err(2, "no data rows"))?;
    Dataset::new(start, n, power)
}

/// Writes the dataset with shortest round-trip float formatting, so
/// identical data gives byte-identical files.
pub fn write_csv(dataset: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp_utc".to_string()];
    header.extend((0..dataset.n_nodes()).map(|v| format!("node_{v}")));
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(dataset.n_nodes() + 1);
    for t in 0..dataset.n_times() {
        rec.clear();
        rec.push(dataset.timestamp(t).format(TIMESTAMP_FORMAT).to_string());
        rec.extend((0..dataset.n_nodes()).map(|v| format!("{}", dataset.power(t, v))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plants(path: &Path) -> Result<Vec<PlantSpec>> {
    let plants: Vec<PlantSpec> = serde_json::from_reader(File::open(path)?)?;
    Ok(plants)
}

pub fn write_plants(plants: &[PlantSpec], writer: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(writer, plants)?;
    Ok(())
}
