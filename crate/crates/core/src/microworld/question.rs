//! Question templates.
//!
//! A question is `[prefix] core [suffix]?` where the core comes from the
//! rule's templates. All pieces are chosen when the condition is sampled and
//! stored in its parameters, so phrasing is a pure function of the condition.

use super::{rule_table, Condition, MicroworldError, SubjectRef};

pub const QUESTION_PREFIXES: [&str; 7] = [
    "",
    "Look at this picture.",
    "In this scene,",
    "Take a good look at the room.",
    "Here is a small puzzle.",
    "Think about the picture for a moment.",
    "Based on this image,",
];

pub const QUESTION_SUFFIXES: [&str; 6] = [
    "",
    "in the next moment",
    "a few seconds later",
    "right after that",
    "after a short while",
    "later on",
];

fn index(cond: &Condition, key: &str, len: usize) -> usize {
    cond.parameters
        .get(key)
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&i| i < len)
        .unwrap_or(0)
}

pub(crate) fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

pub(crate) fn fill_roles(text: &str, cond: &Condition) -> String {
    let mut s = text.to_string();
    match cond.subject {
        SubjectRef::Entity(k) | SubjectRef::New(k) => s = s.replace("{subject}", k.name()),
        SubjectRef::Scene => {}
    }
    if let Some(a) = cond.actor() {
        s = s.replace("{actor}", a.name());
    }
    s
}

/// Fill the condition's question template.
pub fn phrase_question(cond: &Condition) -> Result<String, MicroworldError> {
    let rule = rule_table()
        .get(&cond.rule_id)
        .ok_or_else(|| MicroworldError::UnknownRule(cond.rule_id.clone()))?;
    let core = fill_roles(&rule.question[index(cond, "template", rule.question.len())], cond);
    let prefix = QUESTION_PREFIXES[index(cond, "prefix", QUESTION_PREFIXES.len())];
    let suffix = QUESTION_SUFFIXES[index(cond, "suffix", QUESTION_SUFFIXES.len())];
    let mut q = String::new();
    if !prefix.is_empty() {
        q.push_str(prefix);
        q.push(' ');
        if prefix.ends_with(',') {
            q.push_str(&lower_first(&core));
        } else {
            q.push_str(&core);
        }
    } else {
        q.push_str(&core);
    }
    if !suffix.is_empty() {
        q.push(' ');
        q.push_str(suffix);
    }
    q.push('?');
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microworld::Kind;

    #[test]
    fn drop_ball_question() {
        let c = Condition::new("drop_ball", SubjectRef::Entity(Kind::Ball));
        assert_eq!(phrase_question(&c).unwrap(), "What happens if the ball is dropped?");
    }

    #[test]
    fn morning_is_asked_as_elapsed_time() {
        let c = Condition::new("morning_comes", SubjectRef::Scene);
        assert_eq!(
            phrase_question(&c).unwrap(),
            "What will this place look like in another 12 hours?"
        );
    }

    #[test]
    fn prefix_and_suffix() {
        let c = Condition::new("kick_ball_away", SubjectRef::Entity(Kind::Ball))
            .with("actor", "dog")
            .with("template", "1")
            .with("prefix", "2")
            .with("suffix", "2");
        assert_eq!(
            phrase_question(&c).unwrap(),
            "In this scene, what happens to the ball if the dog gives it a very strong kick a few seconds later?"
        );
    }
}
