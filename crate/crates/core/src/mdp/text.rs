//! Line-oriented MDP format:
//!
//! ```text
//! mdp <n_states> <n_actions> <discount>
//! terminal <s> <s> ...            # optional
//! <s> <a> <reward> <s'>:<p> ...   # one line per (s, a), nonzero entries only
//! ```
//!
//! Floats use Rust's shortest round-trip decimal form, so write/read is bit-exact.

use std::fmt::Write as _;

use super::TabularMdp;
use crate::error::{Error, Result};

pub fn mdp_to_text(mdp: &TabularMdp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mdp {} {} {}", mdp.n_states, mdp.n_actions, mdp.discount);
    let terminals: Vec<String> = mdp.terminals().map(|s| s.to_string()).collect();
    if !terminals.is_empty() {
        let _ = writeln!(out, "terminal {}", terminals.join(" "));
    }
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let _ = write!(out, "{s} {a} {}", mdp.reward(s, a));
            for (t, &p) in mdp.next_dist(s, a).iter().enumerate() {
                if p != 0.0 {
                    let _ = write!(out, " {t}:{p}");
                }
            }
            out.push('\n');
        }
    }
    out
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| perr(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| perr(line, format!("bad {what}")))
}

pub fn mdp_from_text(text: &str) -> Result<TabularMdp> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or_else(|| perr(1, "empty input"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("mdp") {
        return Err(perr(hl, "expected `mdp` header"));
    }
    let n: usize = num(toks.next(), hl, "state count")?;
    let m: usize = num(toks.next(), hl, "action count")?;
    let discount: f64 = num(toks.next(), hl, "discount")?;
    let mut transition = vec![0.0; n * m * n];
    let mut reward = vec![0.0; n * m];
    let mut seen = vec![false; n * m];
    let mut terminals = Vec::new();
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        let first = toks.next().unwrap_or_default();
        if first == "terminal" {
            for t in toks {
                terminals.push(t.parse().map_err(|_| perr(ln, "bad terminal index"))?);
            }
            continue;
        }
        let s: usize = num(Some(first), ln, "state")?;
        let a: usize = num(toks.next(), ln, "action")?;
        if s >= n || a >= m {
            return Err(perr(ln, format!("pair ({s}, {a}) out of range")));
        }
        if std::mem::replace(&mut seen[s * m + a], true) {
            return Err(perr(ln, format!("pair ({s}, {a}) listed twice")));
        }
        reward[s * m + a] = num(toks.next(), ln, "reward")?;
        for tok in toks {
            let (t, p) = tok
                .split_once(':')
                .ok_or_else(|| perr(ln, format!("expected succ:prob, got `{tok}`")))?;
            let t: usize = num(Some(t), ln, "successor")?;
            if t >= n {
                return Err(perr(ln, format!("successor {t} out of range")));
            }
            transition[(s * m + a) * n + t] = num(Some(p), ln, "probability")?;
        }
    }
    if let Some(k) = seen.iter().position(|&x| !x) {
        return Err(perr(0, format!("missing line for pair ({}, {})", k / m, k % m)));
    }
    TabularMdp::new(n, m, transition, reward, discount)?.with_terminals(&terminals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_garnet, make_gridworld, GridSpec};
    use proptest::prelude::*;

    #[test]
    fn gridworld_terminals_survive() {
        let spec = GridSpec {
            rows: 2,
            cols: 2,
            cell_rewards: vec![0.0, 0.0, 0.0, 1.0],
            absorbing: vec![3],
            slip: 0.1,
            discount: 0.95,
        };
        let mdp = make_gridworld(&spec).unwrap();
        assert_eq!(mdp_from_text(&mdp_to_text(&mdp)).unwrap(), mdp);
    }

    #[test]
    fn rejects_truncated_input() {
        assert!(mdp_from_text("mdp 2 1 0.5\n0 0 1 1:1\n").is_err());
        assert!(mdp_from_text("mdp 1 1 0.5\n0 0 1 0:0.5\n").is_err());
    }

    proptest! {
        #[test]
        fn garnet_round_trip_is_bit_exact(seed in 0u64..1000, n in 1usize..7, m in 1usize..4) {
            let mdp = make_garnet(n, m, n.min(3), 0.3, seed).unwrap();
            let text = mdp_to_text(&mdp);
            let back = mdp_from_text(&text).unwrap();
            prop_assert_eq!(&back, &mdp);
            prop_assert_eq!(mdp_to_text(&back), text);
        }
    }
}
