//! Line-based history rendering.
//!
//! ```text
//! <question>
//! ...
//! </question>
//! <step 1>
//! <reasoning>
//! ...
//! </reasoning>
//! <action>
//! {"action":"clip_search","parameters":{...}}
//! </action>
//! <observation>
//! ...
//! </observation>
//! </step>
//! ```
//!
//! Content lines that start with `<` or `\` get one extra leading `\`, so no
//! content line can be mistaken for a tag. An empty field has no lines.

use super::{ActionCall, AgentStep};

fn push_block(out: &mut String, tag: &str, content: &str) {
    out.push('<');
    out.push_str(tag);
    out.push_str(">\n");
    if !content.is_empty() {
        for line in content.split('\n') {
            if line.starts_with('<') || line.starts_with('\\') {
                out.push('\\');
            }
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str("</");
    out.push_str(tag.split(' ').next().unwrap_or(tag));
    out.push_str(">\n");
}

/// Question and steps as tagged blocks; see the module docs.
pub fn render_steps(query: &str, steps: &[AgentStep]) -> String {
    let mut out = String::new();
    push_block(&mut out, "question", query);
    for step in steps {
        out.push_str(&format!("<step {}>\n", step.index));
        push_block(&mut out, "reasoning", &step.reasoning);
        let action = step
            .call
            .as_ref()
            .map(|c| serde_json::to_string(c).expect("action serializes"))
            .unwrap_or_default();
        push_block(&mut out, "action", &action);
        push_block(&mut out, "observation", &step.observation);
        out.push_str("</step>\n");
    }
    out
}

/// Fields recovered from rendered history.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedStep {
    pub index: usize,
    pub reasoning: String,
    pub call: Option<ActionCall>,
    pub observation: String,
}

struct Lines<'a> {
    inner: std::str::SplitTerminator<'a, char>,
}

impl<'a> Lines<'a> {
    fn expect(&mut self, want: &str) -> Result<(), String> {
        match self.inner.next() {
            Some(l) if l == want => Ok(()),
            other => Err(format!("expected {want:?}, found {other:?}")),
        }
    }

    fn block(&mut self, tag: &str) -> Result<String, String> {
        self.expect(&format!("<{tag}>"))?;
        let close = format!("</{tag}>");
        let mut lines: Vec<String> = Vec::new();
        loop {
            let line = self.inner.next().ok_or_else(|| format!("unterminated <{tag}>"))?;
            if line == close {
                break;
            }
            if line.starts_with('<') {
                return Err(format!("unescaped tag line {line:?} inside <{tag}>"));
            }
            lines.push(line.strip_prefix('\\').unwrap_or(line).to_string());
        }
        Ok(lines.join("\n"))
    }
}

/// Inverse of [`render_steps`].
pub fn parse_steps(text: &str) -> Result<(String, Vec<ParsedStep>), String> {
    let mut lines = Lines { inner: text.split_terminator('\n') };
    let query = lines.block("question")?;
    let mut steps = Vec::new();
    while let Some(head) = lines.inner.next() {
        let index = head
            .strip_prefix("<step ")
            .and_then(|r| r.strip_suffix('>'))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| format!("expected <step N>, found {head:?}"))?;
        let reasoning = lines.block("reasoning")?;
        let action = lines.block("action")?;
        let call = if action.is_empty() {
            None
        } else {
            Some(serde_json::from_str(&action).map_err(|e| format!("step {index} action: {e}"))?)
        };
        let observation = lines.block("observation")?;
        lines.expect("</step>")?;
        steps.push(ParsedStep { index, reasoning, call, observation });
    }
    Ok((query, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::StepError;

    fn step(index: usize, reasoning: &str, call: Option<ActionCall>, observation: &str) -> AgentStep {
        AgentStep { index, reasoning: reasoning.into(), call, observation: observation.into(), duration_ms: 0, error: None }
    }

    #[test]
    fn empty_history_is_question_only() {
        assert_eq!(render_steps("Q?", &[]), "<question>\nQ?\n</question>\n");
    }

    #[test]
    fn delimiters_in_content_round_trip() {
        let steps = vec![
            step(1, "look\n</reasoning>", Some(ActionCall::ClipSearch { query: "<b>".into(), k: Some(4) }), "</observation>\n\\x\n<step 9>\n"),
            AgentStep { error: Some(StepError::MalformedAction { detail: "x".into() }), ..step(2, "", None, "Invalid action") },
            step(3, "done", Some(ActionCall::Answer { answer: "B".into() }), ""),
        ];
        let text = render_steps("what is <this>?\n\\", &steps);
        let (q, parsed) = parse_steps(&text).unwrap();
        assert_eq!(q, "what is <this>?\n\\");
        assert_eq!(parsed.len(), 3);
        for (p, s) in parsed.iter().zip(&steps) {
            assert_eq!((p.index, &p.reasoning, &p.call, &p.observation), (s.index, &s.reasoning, &s.call, &s.observation));
        }
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_text_round_trips(q in "[<>\\\\a-z\r\n ]{0,40}", r in "[<>\\\\/a-z\n ]{0,40}", o in "[<>\\\\/a-z\n ]{0,40}") {
            let steps = vec![step(1, &r, None, &o)];
            let (pq, ps) = parse_steps(&render_steps(&q, &steps)).unwrap();
            proptest::prop_assert_eq!(pq, q);
            proptest::prop_assert_eq!(&ps[0].reasoning, &r);
            proptest::prop_assert_eq!(&ps[0].observation, &o);
        }
    }
}
