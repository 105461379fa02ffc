//! Deterministic artifact emission: binary PGM heatmaps, CSV tables, and
//! JSON values with explicit "inf" sentinels.
//!
//! Floating-point values are formatted with the shortest round-trip
//! representation, so identical inputs produce byte-identical files.

use crate::grid::ScalarField;
use serde_json::Value;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Shortest round-trip decimal representation of a float, with non-finite
/// values spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

/// JSON value for a float: a number when finite, the strings
/// "inf"/"-inf"/"nan" otherwise (JSON has no non-finite numbers).
pub fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        serde_json::Number::from_f64(v)
            .map(Value::Number)
            .unwrap_or(Value::Null)
    } else {
        Value::String(fmt_f64(v))
    }
}

/// Write a binary PGM ("P5", maxval 255): width = height = n_side,
/// row-major from the y = 0 row, value = round(255 (f - min)/(max - min));
/// constant fields map to 0.
pub fn write_pgm(path: &Path, field: &ScalarField) -> std::io::Result<()> {
    let n = field.grid().n_side();
    let min = field.min();
    let max = field.max();
    let span = max - min;
    let mut bytes = Vec::with_capacity(n * n + 32);
    bytes.extend_from_slice(format!("P5\n{n} {n}\n255\n").as_bytes());
    for &v in field.values() {
        let g = if span > 0.0 {
            (255.0 * (v - min) / span).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        bytes.push(g);
    }
    fs::write(path, bytes)
}

/// Write a CSV with a header row; every row must have the header's arity.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        assert_eq!(row.len(), header.len(), "csv row arity mismatch");
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Serialize a JSON value with sorted keys and a trailing newline.
pub fn write_json(path: &Path, value: &Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn pgm_header_and_size() {
        let grid = GridSpec::new(8).unwrap();
        let f = ScalarField::from_fn(grid, |p| p.x);
        let dir = std::env::temp_dir().join("mfme-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.pgm");
        write_pgm(&path, &f).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(bytes.len(), "P5\n8 8\n255\n".len() + 64);
        // constant field maps to zeros
        let c = ScalarField::constant(grid, 3.0);
        write_pgm(&path, &c).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes[b"P5\n8 8\n255\n".len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 6.02e23, -7.25e-32] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(json_f64(f64::NEG_INFINITY), Value::String("-inf".into()));
    }
}
