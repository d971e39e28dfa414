//! Text formats shared by every CSV the crate writes: `.` decimal
//! separator, LF line endings, header row, 17 significant digits.

/// Formats with 17 significant digits in scientific notation, which
/// round-trips every `f64` exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Joins already formatted cells into one CSV line (no trailing newline).
pub fn csv_line<S: AsRef<str>>(cells: &[S]) -> String {
    cells.iter().map(|c| c.as_ref()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 10.5, -1.0 / 3.0, 1e-300, f64::MAX, 6.02214076e23] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_float(10.5), "1.0500000000000000e1");
    }
}
