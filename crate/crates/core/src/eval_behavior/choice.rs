use serde::{Deserialize, Serialize};

use super::AnswerOption;

/// A recognised option letter, or no usable answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Letter(String),
    Abstain,
}

impl Choice {
    pub fn letter(&self) -> Option<&str> {
        match self {
            Choice::Letter(l) => Some(l),
            Choice::Abstain => None,
        }
    }
}

fn option_letter(c: char, options: &[AnswerOption]) -> Option<String> {
    let up = c.to_ascii_uppercase().to_string();
    options.iter().any(|o| o.letter.eq_ignore_ascii_case(&up)).then_some(up)
}

/// Letter forms anchored at the start of `t`: `B`, `(B)`, `B.`, `B)`, `B:`.
/// A bare lowercase letter only counts when `allow_lower` is set.
fn leading_letter(t: &str, options: &[AnswerOption], allow_lower: bool) -> Option<String> {
    let mut chars = t.chars();
    let first = chars.next()?;
    if first == '(' || first == '[' {
        let c = chars.next()?;
        let close = chars.next()?;
        if c.is_ascii_alphabetic() && matches!(close, ')' | ']') {
            return option_letter(c, options);
        }
        return None;
    }
    // a lone lowercase "a" starting prose is an article, not an answer
    if !(first.is_ascii_uppercase() || allow_lower && first.is_ascii_lowercase()) {
        return None;
    }
    let rest = &t[first.len_utf8()..];
    if rest.is_empty() {
        return option_letter(first, options);
    }
    match rest.strip_prefix(['.', ')', ':']) {
        Some(after) if after.is_empty() || after.starts_with(char::is_whitespace) => option_letter(first, options),
        _ => None,
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches(|c: char| c.is_ascii_punctuation() && c != '(' && c != ')')
        .to_lowercase()
}

/// Letter chosen by an answer text, checked in priority order: bare letter,
/// `(B)`, `B.`/`B)`/`B:`, `Answer: ...` forms, then a unique case-insensitive
/// option-text match. Anything else abstains.
pub fn extract_choice(answer_text: &str, options: &[AnswerOption]) -> Choice {
    let t = answer_text.trim();
    if t.chars().count() == 1 {
        if let Some(l) = t.chars().next().and_then(|c| option_letter(c, options)) {
            return Choice::Letter(l);
        }
    }
    if let Some(l) = leading_letter(t, options, false) {
        return Choice::Letter(l);
    }

    let lower = t.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find("answer") {
        let rest = t[from + pos + "answer".len()..].trim_start();
        let rest = match rest.strip_prefix("is") {
            Some(r) if r.starts_with(char::is_whitespace) || r.starts_with(':') => r,
            _ => rest,
        };
        let rest = rest.trim_start().trim_start_matches([':', '-', '=']).trim_start();
        if let Some(l) = leading_letter(rest, options, true) {
            return Choice::Letter(l);
        }
        from += pos + "answer".len();
    }

    let norm = normalize(t);
    let exact: Vec<&AnswerOption> = options.iter().filter(|o| normalize(&o.text) == norm).collect();
    if exact.len() == 1 {
        return Choice::Letter(exact[0].letter.to_ascii_uppercase());
    }
    let contained: Vec<&AnswerOption> = options
        .iter()
        .filter(|o| {
            let text = normalize(&o.text);
            !text.is_empty() && norm.contains(&text)
        })
        .collect();
    if contained.len() == 1 {
        return Choice::Letter(contained[0].letter.to_ascii_uppercase());
    }
    Choice::Abstain
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> Vec<AnswerOption> {
        ["a red car", "a blue bus", "a green bike", "nothing"]
            .iter()
            .zip(["A", "B", "C", "D"])
            .map(|(t, l)| AnswerOption { letter: l.into(), text: t.to_string() })
            .collect()
    }

    fn pick(s: &str) -> Choice {
        extract_choice(s, &opts())
    }

    fn letter(l: &str) -> Choice {
        Choice::Letter(l.into())
    }

    #[test]
    fn letter_forms() {
        assert_eq!(pick("B"), letter("B"));
        assert_eq!(pick(" b "), letter("B"));
        assert_eq!(pick("(A)"), letter("A"));
        assert_eq!(pick("(C) a green bike"), letter("C"));
        assert_eq!(pick("A."), letter("A"));
        assert_eq!(pick("D)"), letter("D"));
        assert_eq!(pick("C: because"), letter("C"));
        assert_eq!(pick("Answer: B."), letter("B"));
        assert_eq!(pick("Answer: (C)"), letter("C"));
        assert_eq!(pick("The answer is D"), letter("D"));
        assert_eq!(pick("final answer - A"), letter("A"));
        assert_eq!(pick("Answer: b"), letter("B"));
        assert_eq!(pick("the answer is a red car"), letter("A"));
    }

    #[test]
    fn option_text_and_abstain() {
        assert_eq!(pick("A blue bus."), letter("B"));
        assert_eq!(pick("I saw a green bike near the door"), letter("C"));
        assert_eq!(pick("the clip shows nothing relevant"), letter("D"));
        assert_eq!(pick("the clip shows something"), Choice::Abstain);
        assert_eq!(pick("E"), Choice::Abstain);
        assert_eq!(pick("(F)"), Choice::Abstain);
        assert_eq!(pick(""), Choice::Abstain);
        assert_eq!(pick("a red car or a blue bus"), Choice::Abstain);
    }

    proptest::proptest! {
        #[test]
        fn never_outside_options(s in "\\PC{0,30}") {
            let two = vec![
                AnswerOption { letter: "A".into(), text: "yes".into() },
                AnswerOption { letter: "B".into(), text: "no".into() },
            ];
            if let Choice::Letter(l) = extract_choice(&s, &two) {
                proptest::prop_assert!(l == "A" || l == "B");
            }
        }
    }
}
