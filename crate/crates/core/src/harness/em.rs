//! Exact match with a fixed normalization pipeline.
//!
//! Both sides are canonicalized (whitespace collapsed, trailing periods
//! stripped, numbers re-rendered without thousands separators) and
//! case-folded. If the whole strings differ, answers listing several parts
//! (separated by `|` or `, `) are compared as unordered multisets.

use crate::fusion::canonicalize_value;

/// Canonical, case-folded form of an answer.
pub fn normalize_answer(text: &str) -> String {
    canonicalize_value(&canonicalize_value(text).to_lowercase())
}

fn parts(text: &str) -> Vec<String> {
    let mut parts: Vec<String> = text
        .split('|')
        .flat_map(|p| p.split(", "))
        .map(normalize_answer)
        .filter(|p| !p.is_empty())
        .collect();
    parts.sort();
    parts
}

/// True if `prediction` matches any gold answer after normalization.
pub fn exact_match(prediction: &str, gold: &[String]) -> bool {
    let pred = normalize_answer(prediction);
    gold.iter().any(|g| {
        if normalize_answer(g) == pred {
            return true;
        }
        let (a, b) = (parts(prediction), parts(g));
        a.len() > 1 && a == b
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn em(p: &str, g: &[&str]) -> bool {
        exact_match(p, &g.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    #[test]
    fn documented_examples() {
        assert!(em("Denver Broncos", &["denver broncos"]));
        assert!(em("1,000", &["1000"]));
        assert!(!em("21", &["22"]));
        assert!(em("Paris.", &["paris"]));
        assert!(em("Paris|Athens", &["athens|paris"]));
        assert!(em("Paris, Athens", &["Athens|Paris"]));
        assert!(!em("Paris, Paris", &["Paris|Athens"]));
        assert!(em("b", &["a", "B"]));
        assert!(!em("", &["a"]));
    }

    proptest! {
        #[test]
        fn reflexive(g in "\\PC{0,30}") {
            prop_assert!(exact_match(&g, std::slice::from_ref(&g)));
        }

        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,30}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }
    }
}
