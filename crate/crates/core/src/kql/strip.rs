//! Recovery of the query text from a chatty model reply.

use std::sync::LazyLock;

use regex::Regex;

static TABLE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:union\b.*|[A-Za-z_][A-Za-z0-9_]*\s*(?:\|.*)?)$").unwrap());

/// Removes markdown fences, leading prose and trailing explanation, keeping
/// the first table-led pipeline. Idempotent; returns the trimmed input when
/// no pipeline is recognisable.
pub fn strip_model_decorations(raw: &str) -> String {
    let body = first_fenced_block(raw)
        .filter(|b| !b.trim().is_empty())
        .unwrap_or(raw);
    let body = unwrap_backticks(body.trim());
    match pipeline_lines(body) {
        Some(q) => q,
        None => body.to_string(),
    }
}

/// Content of the first ``` fenced block, without its language tag. An
/// unclosed fence runs to the end of the text.
fn first_fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    // language tag runs to end of line
    let is_tag = |s: &str| {
        s.trim()
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    };
    let content_start = match after.find('\n') {
        Some(nl) if is_tag(&after[..nl]) => nl + 1,
        None if is_tag(after) => after.len(),
        _ => 0,
    };
    let content = &after[content_start..];
    Some(match content.find("```") {
        Some(close) => &content[..close],
        None => content,
    })
}

fn unwrap_backticks(text: &str) -> &str {
    match text.strip_prefix('`').and_then(|t| t.strip_suffix('`')) {
        Some(inner) if !inner.contains('`') => inner.trim(),
        _ => text,
    }
}

/// Stage keywords that may open a line of a query whose pipe was dropped.
pub(crate) const STAGE_KEYWORDS: &[&str] = &[
    "where",
    "project",
    "extend",
    "summarize",
    "sort",
    "order",
    "top",
    "take",
    "limit",
    "distinct",
    "join",
    "union",
    "count",
    "render",
];

static STAGE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^({})(\s|$)", STAGE_KEYWORDS.join("|"))).unwrap());

fn is_continuation(line: &str) -> bool {
    let t = line.trim_start();
    !t.is_empty()
        && (t.starts_with('|')
            || t.starts_with("//")
            || line.starts_with([' ', '\t'])
            || STAGE_LINE.is_match(t))
}

fn pipeline_lines(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| TABLE_LINE.is_match(l))?;
    let mut end = start + 1;
    let mut i = start + 1;
    while i < lines.len() {
        let line = lines[i];
        if is_continuation(line) {
            i += 1;
            end = i;
        } else if line.trim().is_empty() {
            // a blank line only continues the query if a pipe line follows
            let next = lines[i..].iter().position(|l| !l.trim().is_empty());
            match next.map(|n| lines[i + n]) {
                Some(l) if l.trim_start().starts_with('|') => i += next.unwrap(),
                _ => break,
            }
        } else {
            break;
        }
    }
    let kept: Vec<&str> = lines[start..end]
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim_end())
        .collect();
    Some(kept.join("\n").trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kql::test_corpus::*;

    #[test]
    fn removes_fences() {
        assert_eq!(
            strip_model_decorations("```kusto\nEmailEvents | take 5\n```"),
            "EmailEvents | take 5"
        );
        assert_eq!(
            strip_model_decorations("```kql\nEmailEvents | take 5\n```"),
            "EmailEvents | take 5"
        );
        assert_eq!(
            strip_model_decorations("```\nEmailEvents | take 5"),
            "EmailEvents | take 5"
        );
    }

    #[test]
    fn plain_query_unchanged() {
        assert_eq!(
            strip_model_decorations("EmailEvents | take 5"),
            "EmailEvents | take 5"
        );
        assert_eq!(strip_model_decorations(DEVICE_IP_QUERY), DEVICE_IP_QUERY);
    }

    #[test]
    fn removes_prose_around_fenced_query() {
        let raw = "Here is the query:\n```\nEmailEvents\n| take 5\n```\nThis query...";
        assert_eq!(strip_model_decorations(raw), "EmailEvents\n| take 5");
    }

    #[test]
    fn removes_prose_without_fences() {
        let raw = "Sure, here you go:\n\nEmailEvents\n| where Subject has \"x\"\n\n| take 5\n\nThis returns five emails.";
        assert_eq!(
            strip_model_decorations(raw),
            "EmailEvents\n| where Subject has \"x\"\n| take 5"
        );
    }

    #[test]
    fn dangling_fence_is_dropped() {
        assert_eq!(
            strip_model_decorations("EmailEvents\n| take 5\n```"),
            "EmailEvents\n| take 5"
        );
    }

    #[test]
    fn keeps_stage_lines_missing_their_pipe() {
        assert_eq!(
            strip_model_decorations("EmailEvents\nwhere A == 1\nThat is all."),
            "EmailEvents\nwhere A == 1"
        );
    }

    #[test]
    fn bare_fence_is_stable() {
        assert_eq!(strip_model_decorations("```kusto\n"), "```kusto");
        assert_eq!(strip_model_decorations("```kusto"), "```kusto");
    }

    #[test]
    fn inline_backticks() {
        assert_eq!(
            strip_model_decorations("`EmailEvents | take 5`"),
            "EmailEvents | take 5"
        );
    }

    #[test]
    fn nothing_recognisable_returns_trimmed_input() {
        assert_eq!(
            strip_model_decorations("  I cannot help with that.  "),
            "I cannot help with that."
        );
        assert_eq!(strip_model_decorations(""), "");
    }

    #[test]
    fn idempotent_on_samples() {
        let samples = [
            "```kusto\nEmailEvents | take 5\n```",
            "Here is the query:\n```\nEmailEvents\n| take 5\n```\nThis query...",
            "Answer:\nunion A, B\n| take 3\nDone.",
            HAS_ANY_CALL_QUERY,
            "   `T`  ",
            "EmailEvents | take 5\n```",
        ];
        for s in samples {
            let once = strip_model_decorations(s);
            assert_eq!(strip_model_decorations(&once), once, "{s:?}");
        }
    }
}
