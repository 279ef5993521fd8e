//! GNSS trajectory logs and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{file_err, invalid, Result};

pub const CSV_COLUMNS: [&str; 6] = ["timestamp", "lon", "lat", "speed", "heading", "machine_id"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Seconds.
    pub timestamp: f64,
    /// Degrees.
    pub lon: f64,
    pub lat: f64,
    /// Metres per second.
    pub speed: f64,
    /// Degrees in `[0, 360)`.
    pub heading: f64,
    pub machine_id: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub points: Vec<TrajectoryPoint>,
}

impl TrajectoryLog {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            point_ok(p).map_err(|m| invalid(format!("point {i}: {m}")))?;
            if i > 0 && p.timestamp < self.points[i - 1].timestamp {
                return Err(invalid(format!("point {i}: timestamp decreases")));
            }
        }
        Ok(())
    }

    pub fn coords(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().map(|p| (p.lon, p.lat))
    }
}

fn point_ok(p: &TrajectoryPoint) -> std::result::Result<(), String> {
    if !p.lon.is_finite() || !(-180.0..=180.0).contains(&p.lon) {
        return Err(format!("longitude {} outside [-180, 180]", p.lon));
    }
    if !p.lat.is_finite() || !(-90.0..=90.0).contains(&p.lat) {
        return Err(format!("latitude {} outside [-90, 90]", p.lat));
    }
    if !p.heading.is_finite() || !(0.0..360.0).contains(&p.heading) {
        return Err(format!("heading {} outside [0, 360)", p.heading));
    }
    if !p.timestamp.is_finite() || !p.speed.is_finite() {
        return Err("non-finite timestamp or speed".into());
    }
    Ok(())
}

/// Reads a header-led CSV, one point per row. Row errors name the 1-based
/// file line.
pub fn read_csv(path: &Path) -> Result<TrajectoryLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| file_err(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| file_err(path, e.to_string()))?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != CSV_COLUMNS {
        return Err(file_err(path, format!("expected header {}, found {}", CSV_COLUMNS.join(","), got.join(","))));
    }
    let mut log = TrajectoryLog::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            file_err(path, format!("line {line}: {}", e.kind_message()))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let p: TrajectoryPoint =
            rec.deserialize(Some(&header)).map_err(|e| file_err(path, format!("line {line}: {}", e.kind_message())))?;
        point_ok(&p).map_err(|m| file_err(path, format!("line {line}: {m}")))?;
        if log.points.last().is_some_and(|q| p.timestamp < q.timestamp) {
            return Err(file_err(path, format!("line {line}: timestamp decreases")));
        }
        log.points.push(p);
    }
    Ok(log)
}

trait KindMessage {
    fn kind_message(&self) -> String;
}

impl KindMessage for csv::Error {
    fn kind_message(&self) -> String {
        match self.kind() {
            csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                format!("expected {expected_len} fields, found {len}")
            }
            _ => self.to_string(),
        }
    }
}

pub fn write_csv(path: &Path, log: &TrajectoryLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e.to_string()))?;
    for p in &log.points {
        w.serialize(p).map_err(|e| file_err(path, e.to_string()))?;
    }
    w.flush().map_err(crate::error::io_err(path))
}
