//! Pass/fail rows shared by every probe and verification suite.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub probe: String,
    /// `key=value` pairs joined by `;`.
    pub params: String,
    pub max_violation: f64,
    pub pass: bool,
}

impl ProbeRow {
    pub fn new(probe: &str, params: &[(&str, String)], max_violation: f64, pass: bool) -> Self {
        Self {
            probe: probe.to_string(),
            params: params
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";"),
            max_violation,
            pass,
        }
    }
}

pub const CSV_HEADER: &str = "probe,params,max_violation,pass";

pub fn rows_to_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.probe, r.params, r.max_violation, r.pass);
    }
    out
}

/// Worst violation and overall verdict of a list of rows.
pub fn summarize(rows: &[ProbeRow]) -> (f64, bool) {
    rows.iter().fold((f64::NEG_INFINITY, true), |(v, ok), r| {
        (v.max(r.max_violation), ok && r.pass)
    })
}
