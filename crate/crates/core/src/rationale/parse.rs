//! `SCORE:` / `RATIONALE:` response parsing.

use super::RationaleError;

fn strip_decoration(s: &str) -> &str {
    s.trim_start().trim_start_matches(['*', '#', '_']).trim_start()
}

/// Case-insensitive prefix match; returns the remainder after the marker.
fn after_marker<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    let head = line.get(..marker.len())?;
    head.eq_ignore_ascii_case(marker).then(|| &line[marker.len()..])
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    let lower = haystack.to_ascii_lowercase();
    lower.find(&needle.to_ascii_lowercase())
}

/// Returns `(score, rationale)`.
///
/// The score comes from the first line starting with `SCORE:`; the rationale
/// is everything after the first `RATIONALE:` marker, trimmed.
pub fn parse_response(raw: &str) -> Result<(u8, String), RationaleError> {
    let err = |reason: &str| RationaleError::Parse { reason: reason.to_string(), raw: raw.to_string() };

    let rest = raw
        .lines()
        .find_map(|line| after_marker(strip_decoration(line), "score:"))
        .ok_or_else(|| err("missing SCORE marker"))?;
    let token: String = rest
        .trim_start_matches(|c: char| c.is_whitespace() || c == '*' || c == '[')
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '-' || *c == '+' || *c == '.')
        .collect();
    let score: i64 = token.parse().map_err(|_| err("SCORE is not an integer"))?;
    if !(0..=4).contains(&score) {
        return Err(err("SCORE outside 0-4"));
    }

    let pos = find_ci(raw, "rationale:").ok_or_else(|| err("missing RATIONALE marker"))?;
    let mut rationale = &raw[pos + "rationale:".len()..];
    if raw[..pos].ends_with("**") {
        rationale = rationale.strip_prefix("**").unwrap_or(rationale);
    }
    let rationale = rationale.trim();
    Ok((score as u8, rationale.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(
            parse_response("SCORE: 3\nRATIONALE: The essay identifies two obstacles.").unwrap(),
            (3, "The essay identifies two obstacles.".to_string())
        );
        assert_eq!(parse_response("SCORE: 0\nRATIONALE: x").unwrap(), (0, "x".to_string()));
        assert!(matches!(parse_response("SCORE: 7\nRATIONALE: x"), Err(RationaleError::Parse { .. })));
    }

    #[test]
    fn tolerant_formatting() {
        assert_eq!(parse_response("  score: 2\n\nRationale:\n  multi\nline  ").unwrap(), (2, "multi\nline".to_string()));
        assert_eq!(parse_response("**SCORE:** 4\n**RATIONALE:** ok").unwrap(), (4, "ok".to_string()));
    }

    #[test]
    fn failures_carry_raw_text() {
        let raw = "I think it deserves a 3";
        match parse_response(raw) {
            Err(RationaleError::Parse { raw: r, reason }) => {
                assert_eq!(r, raw);
                assert!(reason.contains("SCORE"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_response("SCORE: three\nRATIONALE: x").is_err());
        assert!(parse_response("SCORE: 2.5\nRATIONALE: x").is_err());
        assert!(parse_response("SCORE: 2").unwrap_err().to_string().contains("RATIONALE"));
    }
}
