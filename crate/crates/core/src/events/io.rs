//! Event file formats.
//!
//! The binary format is a flat sequence of 13-byte little-endian records
//! `(t: f64 seconds, x: u16, y: u16, p: i8)` next to a JSON header holding the
//! sensor size and record count (`events.bin` pairs with `events.json`).
//! A CSV file with a `t,x,y,p` header row is accepted as a fallback.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Event, Polarity};
use crate::error::{Error, Result};

const RECORD_BYTES: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFileHeader {
    pub height: usize,
    pub width: usize,
    pub count: usize,
}

pub fn header_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}

pub fn write_events_bin(path: &Path, events: &[Event], height: usize, width: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut record = [0u8; RECORD_BYTES];
    for e in events {
        record[0..8].copy_from_slice(&e.t.to_le_bytes());
        record[8..10].copy_from_slice(&e.x.to_le_bytes());
        record[10..12].copy_from_slice(&e.y.to_le_bytes());
        record[12] = e.p.code() as u8;
        out.write_all(&record).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;

    let header = EventFileHeader {
        height,
        width,
        count: events.len(),
    };
    let hpath = header_path(path);
    std::fs::write(&hpath, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(hpath, e))
}

pub fn read_events_bin(path: &Path) -> Result<(EventFileHeader, Vec<Event>)> {
    let hpath = header_path(path);
    let header_bytes = std::fs::read(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: EventFileHeader = serde_json::from_slice(&header_bytes)?;

    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != header.count * RECORD_BYTES {
        return Err(Error::format(
            "event file",
            format!(
                "{} holds {} bytes but the header declares {} records of {RECORD_BYTES} bytes",
                path.display(),
                bytes.len(),
                header.count
            ),
        ));
    }

    let mut events = Vec::with_capacity(header.count);
    for (i, r) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let t = f64::from_le_bytes(r[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([r[8], r[9]]);
        let y = u16::from_le_bytes([r[10], r[11]]);
        let p = Polarity::from_code(r[12] as i8 as i64)?;
        check_bounds(i, x, y, &header)?;
        events.push(Event { t, x, y, p });
    }
    Ok((header, events))
}

#[derive(Deserialize)]
struct CsvRow {
    t: f64,
    x: u16,
    y: u16,
    p: i64,
}

/// Reads a `t,x,y,p` CSV. When the sensor size is not given it is inferred
/// from the largest coordinates.
pub fn read_events_csv(path: &Path, size: Option<(usize, usize)>) -> Result<(EventFileHeader, Vec<Event>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format("event csv", e.to_string()))?;
    let mut events = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::format("event csv", e.to_string()))?;
        events.push(Event {
            t: row.t,
            x: row.x,
            y: row.y,
            p: Polarity::from_code(row.p)?,
        });
    }
    let (height, width) = match size {
        Some(s) => s,
        None => (
            events.iter().map(|e| e.y as usize + 1).max().unwrap_or(0),
            events.iter().map(|e| e.x as usize + 1).max().unwrap_or(0),
        ),
    };
    let header = EventFileHeader {
        height,
        width,
        count: events.len(),
    };
    for (i, e) in events.iter().enumerate() {
        check_bounds(i, e.x, e.y, &header)?;
    }
    Ok((header, events))
}

/// Reads either format, dispatching on the `.csv` extension.
pub fn read_events(path: &Path) -> Result<(EventFileHeader, Vec<Event>)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_events_csv(path, None),
        _ => read_events_bin(path),
    }
}

fn check_bounds(i: usize, x: u16, y: u16, header: &EventFileHeader) -> Result<()> {
    if x as usize >= header.width || y as usize >= header.height {
        return Err(Error::format(
            "event file",
            format!(
                "record {i} at ({x}, {y}) is outside the {}x{} sensor",
                header.width, header.height
            ),
        ));
    }
    Ok(())
}
