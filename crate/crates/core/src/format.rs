//! Locale-independent number and list formatting for CSV and text output.

use crate::model::ClientId;

/// Shortest decimal string that parses back to the same `f64`; never uses
/// exponent notation, thousands separators or a negative zero.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x}")
}

/// Semicolon-separated ids in the order given.
pub fn join_ids(ids: &[ClientId]) -> String {
    ids.iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(";")
}
