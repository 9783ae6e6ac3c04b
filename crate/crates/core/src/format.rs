//! Text encodings shared by the file formats.

/// Formats a float with 17 significant digits, enough for a bit-exact
/// round trip through `str::parse::<f64>`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
