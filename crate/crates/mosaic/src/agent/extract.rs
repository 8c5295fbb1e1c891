//! Netlist extraction from generator replies.
//!
//! Replies usually carry the netlist in a fenced code block; the last
//! block wins. Without fences, the longest contiguous run of lines that
//! look like cards is taken. A few mechanical normalizations absorb
//! dialect noise: unit tokens like `1@u_kOhm` become `1k`, `circuit.gnd`
//! becomes `0`, and continuation lines are joined.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractError {
    #[error("no code block found in the reply, and no run of netlist cards either")]
    NoCandidate,
}

/// Pull the netlist text out of a reply.
pub fn extract_netlist(reply: &str) -> Result<String, ExtractError> {
    if let Some(block) = last_fenced_block(reply) {
        return Ok(normalize(&block));
    }
    match longest_card_run(reply) {
        Some(run) => Ok(normalize(&run)),
        None => Err(ExtractError::NoCandidate),
    }
}

fn last_fenced_block(reply: &str) -> Option<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in reply.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
            continue;
        }
        if let Some(lines) = &mut current {
            lines.push(line);
        }
    }
    blocks.pop()
}

fn looks_like_card(line: &str) -> bool {
    let t = line.trim();
    if t.is_empty() {
        return false;
    }
    if t.starts_with('*') || t.starts_with('+') {
        return true;
    }
    let lower = t.to_ascii_lowercase();
    if lower.starts_with(".model")
        || lower.starts_with(".subckt")
        || lower.starts_with(".ends")
        || lower.starts_with(".end")
    {
        return true;
    }
    let mut words = t.split_whitespace();
    let head = words.next().unwrap_or("");
    let rest = words.count();
    matches!(
        head.chars().next().map(|c| c.to_ascii_lowercase()),
        Some('r' | 'c' | 'v' | 'i' | 'm' | 'x')
    ) && rest >= 2
        && head.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn longest_card_run(reply: &str) -> Option<String> {
    let lines: Vec<&str> = reply.lines().collect();
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, line) in lines.iter().enumerate() {
        if looks_like_card(line) {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            let len = i - s;
            if best.is_none_or(|(_, blen)| len > blen) {
                best = Some((s, len));
            }
        }
    }
    if let Some(s) = start {
        let len = lines.len() - s;
        if best.is_none_or(|(_, blen)| len > blen) {
            best = Some((s, len));
        }
    }
    best.filter(|&(_, len)| len >= 2)
        .map(|(s, len)| lines[s..s + len].join("\n"))
}

/// Mechanical dialect cleanup on extracted text.
fn normalize(text: &str) -> String {
    let mut joined: Vec<String> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_end();
        // join SPICE continuation lines
        if let Some(rest) = trimmed.trim_start().strip_prefix('+') {
            if let Some(prev) = joined.last_mut() {
                prev.push(' ');
                prev.push_str(rest.trim());
                continue;
            }
        }
        joined.push(trimmed.to_string());
    }
    joined
        .into_iter()
        .map(|line| normalize_units(&line.replace("circuit.gnd", "0")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rewrite `<number>@u_<Prefix><Unit>` tokens into plain suffix form:
/// `1@u_kOhm` -> `1k`, `10@u_nF` -> `10n`, `5@u_V` -> `5`.
fn normalize_units(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(pos) = rest.find("@u_") {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 3..];
        let unit: String = tail.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
        let suffix = match unit.chars().next() {
            Some('f') => "f",
            Some('p') => "p",
            Some('n') => "n",
            Some('u') => "u",
            Some('m') if unit.starts_with("meg") => "meg",
            Some('m') => "m",
            Some('k') | Some('K') => "k",
            Some('M') => "meg",
            Some('G') => "g",
            // bare unit (Ohm, V, F, A, Hz): no scale
            _ => "",
        };
        out.push_str(suffix);
        rest = &tail[unit.len()..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_fenced_block() {
        let reply = "Here is the design:\n```\nRD Vdd Vout 10k\nVdd Vdd 0 5\n```\nDone.";
        assert_eq!(extract_netlist(reply).unwrap(), "RD Vdd Vout 10k\nVdd Vdd 0 5");
    }

    #[test]
    fn last_of_two_blocks_wins() {
        let reply = "

plan:
```
* draft
R1 a 0 1k
```
better:
```spice
* final
R2 b 0 2k
V1 b 0 5
```
";
        let got = extract_netlist(reply).unwrap();
        assert!(got.contains("R2 b 0 2k"));
        assert!(!got.contains("draft"));
    }

    #[test]
    fn pure_prose_is_an_error() {
        assert_eq!(
            extract_netlist("I am sorry, I cannot design this circuit."),
            Err(ExtractError::NoCandidate)
        );
    }

    #[test]
    fn bare_card_run_without_fences() {
        let reply = "\
The netlist is as follows:

Vdd Vdd 0 5.0
Vin Vin 0 1.0
M1 Vout Vin 0 0 nmos_model w=50e-6 l=1e-6
RD Vdd Vout 10k
.end

Let me know if you need anything else.";
        let got = extract_netlist(reply).unwrap();
        assert!(got.starts_with("Vdd Vdd 0 5.0"));
        assert!(got.ends_with(".end"));
    }

    #[test]
    fn dialect_units_normalize() {
        let reply = "```\nR1 Vout Vdd 1@u_kOhm\nC1 a 0 10@u_nF\nV1 in circuit.gnd 2.5@u_V\n```";
        let got = extract_netlist(reply).unwrap();
        assert_eq!(got, "R1 Vout Vdd 1k\nC1 a 0 10n\nV1 in 0 2.5");
    }

    #[test]
    fn continuation_lines_join() {
        let reply = "```\nM1 Vout Vin 0 0 nmos_model\n+ w=50e-6 l=1e-6\n```";
        assert_eq!(
            extract_netlist(reply).unwrap(),
            "M1 Vout Vin 0 0 nmos_model w=50e-6 l=1e-6"
        );
    }
}
