//! Plain-text output helpers shared by the CSV writers.

use std::io::{self, Write};

/// Formats a float with 17 significant digits, the shortest width that
/// round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // normalize -0.0 so identical results print identically
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

/// Writes one CSV record of numbers.
pub fn write_row(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        w.write_all(fmt_f64(v).as_bytes())?;
    }
    w.write_all(b"\r\n")
}

/// Writes a CSV header row.
pub fn write_header<S: AsRef<str>>(w: &mut impl Write, names: &[S]) -> io::Result<()> {
    let line = names.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(",");
    w.write_all(line.as_bytes())?;
    w.write_all(b"\r\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, std::f64::consts::PI] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
    }

    #[test]
    fn rows_use_crlf() {
        let mut buf = Vec::new();
        write_header(&mut buf, &["t", "y_1"]).unwrap();
        write_row(&mut buf, [0.0, 1.5]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "t,y_1\r\n0.0000000000000000e0,1.5000000000000000e0\r\n");
    }
}
