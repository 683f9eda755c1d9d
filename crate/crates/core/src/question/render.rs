use super::instance::QuestionInstance;
use crate::optimizer::ConstraintSet;

const PREAMBLE: &str = "You are a portfolio manager. Your task is to select the optimal portfolio based on \
portfolio theory. Make your decision using asset returns during the specified investment period and the \
information below.";

/// Percentage with up to four decimals and no trailing zeros.
fn percent(x: f64) -> String {
    let v = (x * 100.0 * 1e4).round() / 1e4;
    format!("{v}")
}

/// Human-readable constraint list, or `None` for the default constraints.
pub fn constraint_text(c: &ConstraintSet) -> Option<String> {
    let mut parts = Vec::new();
    if c.lower > 0.0 {
        parts.push(format!("each asset weight ≥ {}%", percent(c.lower)));
    }
    if c.upper < 1.0 {
        parts.push(format!("each asset weight ≤ {}%", percent(c.upper)));
    }
    if let Some(k) = c.asset_count {
        parts.push(format!("portfolio must include exactly {k} assets"));
    }
    if let Some(m) = c.min_return {
        parts.push(format!("mean return per period ≥ {m}"));
    }
    (!parts.is_empty()).then(|| parts.join("; "))
}

pub fn render_prompt(q: &QuestionInstance) -> String {
    let mut c = q.constraints;
    c.min_return = match (c.min_return, q.objective.mu0) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    };
    let mut out = String::new();
    out.push_str(PREAMBLE);
    out.push_str("\n\n");
    out.push_str(&format!("Objective: {}\n", q.objective.kind.prompt_name()));
    out.push_str(&format!("Assets: [{}]\n", q.tickers.join(", ")));
    out.push_str(&format!("Date: {} to {}\n", q.start, q.end));
    if let Some(text) = constraint_text(&c) {
        out.push_str(&format!("Constraints: {text}\n"));
    }
    out.push_str("\nChoices:");
    for (i, choice) in q.choices.iter().enumerate() {
        let body = choice
            .iter()
            .map(|(t, w)| format!("{t}: {w:.3}"))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!("\n({}) {{{body}}}", i + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_lines() {
        assert_eq!(constraint_text(&ConstraintSet::default()), None);
        assert_eq!(
            constraint_text(&ConstraintSet::with_lower(0.1)).as_deref(),
            Some("each asset weight ≥ 10%")
        );
        assert_eq!(
            constraint_text(&ConstraintSet::with_upper(0.7)).as_deref(),
            Some("each asset weight ≤ 70%")
        );
        assert_eq!(
            constraint_text(&ConstraintSet::with_asset_count(5)).as_deref(),
            Some("portfolio must include exactly 5 assets")
        );
        let both = ConstraintSet {
            lower: 0.05,
            upper: 0.6,
            ..ConstraintSet::default()
        };
        assert_eq!(
            constraint_text(&both).as_deref(),
            Some("each asset weight ≥ 5%; each asset weight ≤ 60%")
        );
    }
}
