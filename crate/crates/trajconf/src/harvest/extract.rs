//! Final-answer extraction from generated text.

use regex::Regex;

/// Default fallback pattern: the text after "answer is" / "answer:".
pub const DEFAULT_ANSWER_PATTERN: &str = r"(?i)answer\s*(?:is|:)\s*:?\s*(.+)";

/// Contents of the last `\boxed{...}` group, honoring nested braces.
pub fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// The last `\boxed{}` group if any, else the first capture group (or the
/// whole match) of the last line matching `pattern`.
pub fn extract_answer(text: &str, pattern: &Regex) -> Option<String> {
    if let Some(b) = last_boxed(text) {
        return Some(b.trim().to_owned());
    }
    text.lines().rev().find_map(|line| {
        let caps = pattern.captures(line)?;
        let m = caps.get(1).or_else(|| caps.get(0))?;
        let s = m.as_str().trim().trim_end_matches('.').trim();
        (!s.is_empty()).then(|| s.to_owned())
    })
}
