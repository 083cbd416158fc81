//! Binary (`BKNN`) and CSV point files.
//!
//! Binary layout, little-endian: magic `BKNN`, version `u32`, `n: u64`,
//! `d: u32`, reserved `u32`, then `n * d` row-major `f32` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::points::PointMatrix;

pub const MAGIC: &[u8; 4] = b"BKNN";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    /// Binary for `.bknn`/`.bin`, CSV otherwise.
    #[default]
    Auto,
    Binary,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Format::Auto),
            "bin" | "binary" | "bknn" => Ok(Format::Binary),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Usage(format!("unknown format {other:?}"))),
        }
    }
}

impl Format {
    pub fn resolve(self, path: &Path) -> Format {
        match self {
            Format::Auto => match path.extension().and_then(|e| e.to_str()) {
                Some("bknn") | Some("bin") => Format::Binary,
                _ => Format::Csv,
            },
            f => f,
        }
    }
}

fn parse_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location: location.into(),
        message: message.into(),
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<PointMatrix> {
    match format.resolve(path) {
        Format::Binary => read_binary(path),
        _ => read_csv(path),
    }
}

pub fn save_dataset(path: &Path, points: &PointMatrix, format: Format) -> Result<()> {
    match format.resolve(path) {
        Format::Binary => write_binary(path, points),
        _ => write_csv(path, points),
    }
}

pub fn encode_header(n: u64, d: u32) -> [u8; HEADER_BYTES as usize] {
    let mut h = [0u8; HEADER_BYTES as usize];
    h[0..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&n.to_le_bytes());
    h[16..20].copy_from_slice(&d.to_le_bytes());
    h
}

fn decode_header(path: &Path, h: &[u8]) -> Result<(usize, usize)> {
    if h.len() < HEADER_BYTES as usize {
        return Err(parse_err(
            path,
            format!("byte {}", h.len()),
            format!("header needs {HEADER_BYTES} bytes, file has {}", h.len()),
        ));
    }
    if &h[0..4] != MAGIC {
        return Err(parse_err(path, "byte 0", "bad magic, expected BKNN"));
    }
    let version = u32::from_le_bytes(h[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(parse_err(
            path,
            "byte 4",
            format!("unsupported version {version}"),
        ));
    }
    let n = u64::from_le_bytes(h[8..16].try_into().unwrap());
    let d = u32::from_le_bytes(h[16..20].try_into().unwrap());
    if n == 0 || d == 0 {
        return Err(parse_err(
            path,
            "byte 8",
            format!("empty shape n={n} d={d}"),
        ));
    }
    Ok((n as usize, d as usize))
}

/// Reads and checks the header, including that the payload length matches.
pub fn read_binary_header(path: &Path) -> Result<(usize, usize)> {
    let mut f = File::open(path)?;
    let mut h = Vec::with_capacity(HEADER_BYTES as usize);
    (&mut f).take(HEADER_BYTES).read_to_end(&mut h)?;
    let (n, d) = decode_header(path, &h)?;
    let actual = f.metadata()?.len() - HEADER_BYTES;
    let expected = (n as u64) * (d as u64) * 4;
    if actual != expected {
        return Err(parse_err(
            path,
            format!("byte {}", HEADER_BYTES + actual.min(expected)),
            format!("payload is {actual} bytes, expected {expected} for n={n} d={d}"),
        ));
    }
    Ok((n, d))
}

pub fn read_binary(path: &Path) -> Result<PointMatrix> {
    let bytes = std::fs::read(path)?;
    let (n, d) = decode_header(path, &bytes)?;
    let payload = &bytes[HEADER_BYTES as usize..];
    let expected = n * d * 4;
    if payload.len() != expected {
        return Err(parse_err(
            path,
            format!(
                "byte {}",
                HEADER_BYTES as usize + payload.len().min(expected)
            ),
            format!(
                "payload is {} bytes, expected {expected} for n={n} d={d}",
                payload.len()
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "{}: non-finite value at row {}, column {} (byte {})",
            path.display(),
            i / d,
            i % d,
            HEADER_BYTES as usize + 4 * i
        )));
    }
    PointMatrix::new(d, data)
}

pub fn write_binary(path: &Path, points: &PointMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_header(points.n() as u64, points.d() as u32))?;
    for v in points.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// One point per line, comma-separated. Blank lines and lines starting with
/// `#` are skipped.
pub fn read_csv(path: &Path) -> Result<PointMatrix> {
    parse_csv(path, BufReader::new(File::open(path)?))
}

pub fn parse_csv(path: &Path, reader: impl BufRead) -> Result<PointMatrix> {
    let mut data = Vec::new();
    let mut d = 0;
    let mut offset = 0usize;
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let line_start = offset;
        offset += line.len() + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut cols = 0;
        for field in t.split(',') {
            let f = field.trim();
            let v: f32 = f.parse().map_err(|_| {
                parse_err(
                    path,
                    format!("line {}, byte {line_start}", ln + 1),
                    format!("cannot parse {f:?} as a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "{}: non-finite value {f:?} on line {}",
                    path.display(),
                    ln + 1
                )));
            }
            data.push(v);
            cols += 1;
        }
        if d == 0 {
            d = cols;
        } else if cols != d {
            return Err(parse_err(
                path,
                format!("line {}, byte {line_start}", ln + 1),
                format!("expected {d} columns, found {cols}"),
            ));
        }
    }
    if d == 0 {
        return Err(parse_err(path, "line 1", "no data rows"));
    }
    PointMatrix::new(d, data)
}

pub fn write_csv(path: &Path, points: &PointMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in points.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
