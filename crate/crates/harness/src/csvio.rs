//! Minimal CSV layer: RFC-4180 quoting, `.` decimal separator, and a fixed
//! 17-significant-digit float format so every written value parses back to
//! the identical bits. Output files are byte-deterministic.

use std::io::{BufRead, Write};

use crate::error::{HarnessError, Result};

/// Formats a float with 17 significant digits (scientific notation), the
/// shortest width guaranteed to round-trip any f64. Non-finite values use
/// the spellings Rust's parser accepts back (`inf`, `-inf`, `NaN`).
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Quotes one field per RFC 4180: fields containing commas, quotes, or line
/// breaks are wrapped in double quotes with inner quotes doubled.
fn quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        let mut out = String::with_capacity(field.len() + 2);
        out.push('"');
        for ch in field.chars() {
            if ch == '"' {
                out.push('"');
            }
            out.push(ch);
        }
        out.push('"');
        out
    } else {
        field.to_string()
    }
}

/// Writes one row, quoting fields as needed.
pub fn write_row(w: &mut impl Write, fields: &[String]) -> Result<()> {
    let line: Vec<String> = fields.iter().map(|f| quote(f)).collect();
    writeln!(w, "{}", line.join(",")).map_err(|e| HarnessError::Io(e.to_string()))
}

/// Reads every row, handling quoted fields (including embedded separators
/// and doubled quotes). Returns rows of unquoted field strings.
pub fn read_rows(r: impl BufRead) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    let mut field = String::new();
    let mut row: Vec<String> = Vec::new();
    let mut in_quotes = false;

    for line in r.lines() {
        let line = line.map_err(|e| HarnessError::Io(e.to_string()))?;
        if in_quotes {
            // a quoted field continued across a line break
            field.push('\n');
        }
        let mut chars = line.chars().peekable();
        while let Some(ch) = chars.next() {
            if in_quotes {
                if ch == '"' {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        in_quotes = false;
                    }
                } else {
                    field.push(ch);
                }
            } else {
                match ch {
                    '"' => in_quotes = true,
                    ',' => {
                        row.push(std::mem::take(&mut field));
                        }
                    _ => field.push(ch),
                }
            }
        }
        if !in_quotes {
            row.push(std::mem::take(&mut field));
            rows.push(std::mem::take(&mut row));
        }
    }
    if in_quotes {
        return Err(HarnessError::Io("unterminated quoted CSV field".into()));
    }
    Ok(rows)
}

/// Parses a float written by [`fmt_float`].
pub fn parse_float(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| HarnessError::Io(format!("malformed float `{s}` in CSV")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn float_format_round_trips_exact_bits() {
        let values = [
            0.0,
            -0.0,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            f64::MAX,
            2.2250738585072014e-308,
            -1.7976931348623157e308,
            9.869604401089358,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ];
        for v in values {
            let back: f64 = fmt_float(v).parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "value {v}");
        }
        assert!(fmt_float(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn rfc_quoting_round_trips_awkward_fields() {
        let rows = vec![
            vec!["plain".to_string(), "with,comma".into(), "with\"quote".into()],
            vec!["multi\nline".to_string(), "".into(), "end".into()],
        ];
        let mut buf = Vec::new();
        for row in &rows {
            write_row(&mut buf, row).unwrap();
        }
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"with,comma\""));
        assert!(text.contains("\"with\"\"quote\""));

        let back = read_rows(Cursor::new(buf)).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn plain_rows_stay_unquoted() {
        let mut buf = Vec::new();
        write_row(&mut buf, &["a".into(), "1.5".into(), "x".into()]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,1.5,x\n");
    }

    #[test]
    fn unterminated_quote_is_an_error() {
        assert!(read_rows(Cursor::new(b"\"open".to_vec())).is_err());
    }
}
