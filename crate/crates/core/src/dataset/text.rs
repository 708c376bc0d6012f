//! Dataset file:
//!
//! ```text
//! dataset <source_id> <n_states> <n_actions> <count>
//! reward_stats <min> <max>
//! normalization <lo> <hi>      # optional
//! missing_next <s> <s> ...     # optional
//! <s> <a> <r> <s_next> <done>  # done is 0 or 1
//! ```

use std::fmt::Write as _;

use super::{OfflineDataset, Transition};
use crate::error::{Error, Result};

pub fn dataset_to_text(ds: &OfflineDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "dataset {} {} {} {}",
        ds.source_id,
        ds.n_states,
        ds.n_actions,
        ds.len()
    );
    let _ = writeln!(out, "reward_stats {} {}", ds.reward_stats.0, ds.reward_stats.1);
    if let Some((lo, hi)) = ds.normalization {
        let _ = writeln!(out, "normalization {lo} {hi}");
    }
    if !ds.missing_next.is_empty() {
        let list: Vec<String> = ds.missing_next.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "missing_next {}", list.join(" "));
    }
    for t in &ds.transitions {
        let _ = writeln!(out, "{} {} {} {} {}", t.s, t.a, t.r, t.s_next, u8::from(t.done));
    }
    out
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| perr(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| perr(line, format!("bad {what}")))
}

pub fn dataset_from_text(text: &str) -> Result<OfflineDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or_else(|| perr(1, "empty input"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("dataset") {
        return Err(perr(hl, "expected `dataset` header"));
    }
    let source: String = field(toks.next(), hl, "source id")?;
    let n: usize = field(toks.next(), hl, "state count")?;
    let m: usize = field(toks.next(), hl, "action count")?;
    let count: usize = field(toks.next(), hl, "tuple count")?;
    let mut stats = None;
    let mut normalization = None;
    let mut missing = Vec::new();
    let mut ts = Vec::with_capacity(count);
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("reward_stats") => {
                stats = Some((field(toks.next(), ln, "min")?, field(toks.next(), ln, "max")?));
            }
            Some("normalization") => {
                normalization = Some((field(toks.next(), ln, "lo")?, field(toks.next(), ln, "hi")?));
            }
            Some("missing_next") => {
                for t in toks {
                    missing.push(field(Some(t), ln, "state")?);
                }
            }
            first => {
                let done: u8 = {
                    let s = field(first, ln, "state")?;
                    let a = field(toks.next(), ln, "action")?;
                    let r = field(toks.next(), ln, "reward")?;
                    let s_next = field(toks.next(), ln, "next state")?;
                    let d = field(toks.next(), ln, "done flag")?;
                    ts.push(Transition {
                        s,
                        a,
                        r,
                        s_next,
                        done: d == 1,
                    });
                    d
                };
                if done > 1 {
                    return Err(perr(ln, "done flag must be 0 or 1"));
                }
            }
        }
    }
    if ts.len() != count {
        return Err(perr(hl, format!("header says {count} tuples, found {}", ts.len())));
    }
    let mut ds = OfflineDataset::new(n, m, source, ts)?;
    ds.reward_stats = stats.ok_or_else(|| perr(hl, "missing reward_stats line"))?;
    ds.normalization = normalization;
    ds.missing_next = missing;
    Ok(ds)
}
