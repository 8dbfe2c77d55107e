//! JSON and CSV emission with 17-significant-digit floats.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// `%.17g`: enough digits to round-trip every f64, trailing zeros dropped.
pub fn g17(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.16e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let e: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&e) {
        let fixed = format!("{:.*}", (16 - e) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}", trim_zeros(mant), e)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Pretty printer that writes floats with [`g17`] and non-finite floats as null.
struct Pretty17<'a>(PrettyFormatter<'a>);

impl Formatter for Pretty17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            let mut s = g17(value);
            // keep floats recognizable as floats
            if !s.contains(['.', 'e']) {
                s.push_str(".0");
            }
            w.write_all(s.as_bytes())
        } else {
            w.write_all(b"null")
        }
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> CliResult<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Pretty17(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Numerical(format!("cannot serialize result: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let s = to_json_string(value)?;
    std::fs::write(path, s).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

/// Adds `schema_version` to a JSON object.
pub fn versioned(mut v: Value) -> Value {
    if let Value::Object(map) = &mut v {
        map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    }
    v
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let io = |e: csv::Error| CliError::input(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_round_trips() {
        for &x in &[2.79, 0.1, -1.0 / 3.0, 1e-9, 6.02e23, 123456.0, f64::MIN_POSITIVE, -0.0018] {
            assert_eq!(g17(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(g17(2.79), "2.79");
        assert_eq!(g17(0.1), "0.10000000000000001");
        assert_eq!(g17(1.0), "1");
        assert_eq!(g17(0.5), "0.5");
        assert_eq!(g17(1e20), "1e20");
    }

    #[test]
    fn json_floats_keep_their_digits() {
        let s = to_json_string(&serde_json::json!({"a": 0.1, "b": 2.0, "c": [1.0e-7]})).unwrap();
        assert!(s.contains("0.10000000000000001"), "{s}");
        assert!(s.contains("\"b\": 2.0"), "{s}");
        assert!(s.contains("9.9999999999999995e-8"), "{s}");
    }
}
