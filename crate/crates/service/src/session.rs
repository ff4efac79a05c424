//! Session state machine. Phases only move forward; a session reaches the
//! test phase only with a perfect validation score.

use serde::{Deserialize, Serialize};

use corrxai_core::Method;

use crate::error::{Result, ServiceError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Validation,
    Test,
    Done,
}

/// One queued trial: where it lives in the plan and whether the AI was right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSlot {
    pub phase: Phase,
    /// Index into the method plan's list for `phase`.
    pub plan_index: usize,
    pub query_id: String,
    pub ai_correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub trial_index: usize,
    pub accepted: bool,
    pub elapsed_ms: u64,
    pub at_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub study_id: String,
    pub user_id: String,
    pub method: Method,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub slots: Vec<TrialSlot>,
    pub responses: Vec<RecordedResponse>,
    pub phase: Phase,
    pub rejected: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub correct: usize,
    pub total: usize,
}

impl Score {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

impl Session {
    /// Index of the next trial to answer.
    pub fn cursor(&self) -> usize {
        self.responses.len()
    }

    pub fn score(&self, phase: Phase) -> Score {
        let mut s = Score::default();
        for r in &self.responses {
            let slot = &self.slots[r.trial_index];
            if slot.phase == phase {
                s.total += 1;
                s.correct += (r.accepted == slot.ai_correct) as usize;
            }
        }
        s
    }

    /// Checks that `trial_index` is the trial awaiting an answer.
    pub fn check_submission(&self, trial_index: usize) -> Result<()> {
        if self.phase == Phase::Done {
            return Err(ServiceError::Conflict(format!("session {} is finished", self.session_id)));
        }
        let cursor = self.cursor();
        if trial_index < cursor {
            return Err(ServiceError::Conflict(format!("trial {trial_index} already answered")));
        }
        if trial_index > cursor {
            return Err(ServiceError::Conflict(format!(
                "trial {trial_index} submitted before trial {cursor}"
            )));
        }
        Ok(())
    }

    /// Records an already checked response and advances the phase.
    pub fn record(&mut self, response: RecordedResponse) {
        let i = response.trial_index;
        self.updated_ms = response.at_ms;
        self.responses.push(response);
        let next = self.slots.get(i + 1).map(|s| s.phase);
        if self.slots[i].phase == Phase::Validation && next != Some(Phase::Validation) {
            let v = self.score(Phase::Validation);
            if v.correct < v.total {
                self.phase = Phase::Done;
                self.rejected = true;
                return;
            }
        }
        self.phase = next.unwrap_or(Phase::Done);
    }
}
