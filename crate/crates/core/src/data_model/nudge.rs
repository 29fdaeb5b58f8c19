use serde::{Deserialize, Serialize};

use super::SubjectId;

/// Lifecycle of a delivered nudge. Only `pending -> delivered` and
/// `delivered -> {opened, viewed, discarded, blocked}` are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reaction {
    Pending,
    Delivered,
    Opened,
    Viewed,
    Discarded,
    Blocked,
}

impl Reaction {
    pub fn as_str(self) -> &'static str {
        match self {
            Reaction::Pending => "pending",
            Reaction::Delivered => "delivered",
            Reaction::Opened => "opened",
            Reaction::Viewed => "viewed",
            Reaction::Discarded => "discarded",
            Reaction::Blocked => "blocked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pending" => Reaction::Pending,
            "delivered" => Reaction::Delivered,
            "opened" => Reaction::Opened,
            "viewed" => Reaction::Viewed,
            "discarded" => Reaction::Discarded,
            "blocked" => Reaction::Blocked,
            _ => return None,
        })
    }

    fn rank(self) -> u8 {
        match self {
            Reaction::Pending => 0,
            Reaction::Delivered => 1,
            _ => 2,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.rank() == 2
    }

    pub fn can_transition_to(self, next: Reaction) -> bool {
        next.rank() == self.rank() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("illegal nudge transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: Reaction,
    pub to: Reaction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NudgeRecord {
    pub nudge_id: String,
    pub subject_id: SubjectId,
    pub experiment_id: String,
    pub arm_id: u32,
    pub content_ref: String,
    pub sent_at_ms: i64,
    pub reaction: Reaction,
    pub reaction_at_ms: Option<i64>,
}

impl NudgeRecord {
    pub fn transition(&mut self, to: Reaction, at_ms: i64) -> Result<(), IllegalTransition> {
        if !self.reaction.can_transition_to(to) {
            return Err(IllegalTransition {
                from: self.reaction,
                to,
            });
        }
        self.reaction = to;
        self.reaction_at_ms = Some(at_ms);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nudge() -> NudgeRecord {
        NudgeRecord {
            nudge_id: "n-a".into(),
            subject_id: SubjectId::new("ph-0001aa").unwrap(),
            experiment_id: "exp".into(),
            arm_id: 1,
            content_ref: "hello".into(),
            sent_at_ms: 10,
            reaction: Reaction::Pending,
            reaction_at_ms: None,
        }
    }

    #[test]
    fn forward_path() {
        let mut n = nudge();
        n.transition(Reaction::Delivered, 11).unwrap();
        n.transition(Reaction::Opened, 12).unwrap();
        assert_eq!(n.reaction, Reaction::Opened);
        assert_eq!(n.reaction_at_ms, Some(12));
    }

    #[test]
    fn backward_and_skipping_transitions_rejected() {
        let mut n = nudge();
        assert!(n.transition(Reaction::Opened, 1).is_err());
        n.transition(Reaction::Delivered, 1).unwrap();
        n.transition(Reaction::Blocked, 2).unwrap();
        assert!(n.transition(Reaction::Pending, 3).is_err());
        assert!(n.transition(Reaction::Opened, 3).is_err());
        assert_eq!(n.reaction, Reaction::Blocked);
    }
}
