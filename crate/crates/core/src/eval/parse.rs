use std::sync::LazyLock;

use regex::Regex;

static PATTERNS: LazyLock<[Regex; 3]> = LazyLock::new(|| {
    [
        Regex::new(r"\(([1-4])\)").expect("valid pattern"),
        Regex::new(r"(?i)\banswer\b[^0-9]{0,30}?\b([1-4])\b").expect("valid pattern"),
        Regex::new(r"^\s*([1-4])\b").expect("valid pattern"),
    ]
});

/// Choice declared in a response, or `None` when there is none.
///
/// Patterns are tried in order: a parenthesized digit `(n)`, the word
/// "answer" followed closely by a digit, and a digit opening the response.
/// The first match of the first pattern that matches wins.
pub fn parse_answer(response: &str) -> Option<u8> {
    PATTERNS.iter().find_map(|re| {
        re.captures(response)
            .and_then(|c| c[1].parse::<u8>().ok())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns_in_priority_order() {
        assert_eq!(parse_answer("(4)"), Some(4));
        assert_eq!(parse_answer("The answer is (2) because..."), Some(2));
        assert_eq!(parse_answer("I cannot decide."), None);
        assert_eq!(parse_answer("Answer: 3"), Some(3));
        assert_eq!(parse_answer("My final answer is option 1."), Some(1));
        assert_eq!(parse_answer("2"), Some(2));
        assert_eq!(parse_answer("  3. It has the lowest risk"), Some(3));
        assert_eq!(parse_answer("Option 3 looks best, so the answer is (1)"), Some(1));
        assert_eq!(parse_answer("Option 3 looks best"), None);
        assert_eq!(parse_answer("(5)"), None);
        assert_eq!(parse_answer("42"), None);
        assert_eq!(parse_answer("answer 12"), None);
    }
}
