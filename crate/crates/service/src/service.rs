//! Study state with append-only persistence.
//!
//! Every mutation is an [`Event`] appended to `events.jsonl` before it is
//! applied, so replaying the log rebuilds the state. A snapshot of the applied
//! state is rewritten every [`SNAPSHOT_EVERY`] events; startup loads it and
//! replays only the events after it.
//!
//! Data directory layout:
//!
//! ```text
//! plans/<study_id>.json   frozen study plans
//! manifest.tsv            optional; maps image ids to asset paths
//! events.jsonl
//! snapshot.json
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use corrxai_core::explain::serialize_explanation;
use corrxai_core::store::{read_manifest, DatasetManifest};
use corrxai_core::study::{assign_method, least_seen, ClassIntro, StudyPlan};
use corrxai_core::team::{Response, TrialEntry, TrialLog};
use corrxai_core::Method;

use crate::error::{Result, ServiceError};
use crate::session::{Phase, RecordedResponse, Score, Session, TrialSlot};

pub const SNAPSHOT_EVERY: u64 = 100;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated { session: Session },
    ResponseRecorded { session_id: String, response: RecordedResponse },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct State {
    events_applied: u64,
    sessions: BTreeMap<String, Session>,
    next_session: u64,
    /// study -> method -> times each test-pool trial was assigned
    exposure: BTreeMap<String, BTreeMap<Method, Vec<usize>>>,
}

impl State {
    fn apply(&mut self, event: Event) -> Result<()> {
        match event {
            Event::SessionCreated { session } => {
                let seen = self
                    .exposure
                    .entry(session.study_id.clone())
                    .or_default()
                    .entry(session.method)
                    .or_default();
                for slot in session.slots.iter().filter(|s| s.phase == Phase::Test) {
                    if seen.len() <= slot.plan_index {
                        seen.resize(slot.plan_index + 1, 0);
                    }
                    seen[slot.plan_index] += 1;
                }
                self.next_session += 1;
                self.sessions.insert(session.session_id.clone(), session);
            }
            Event::ResponseRecorded { session_id, response } => {
                let s = self
                    .sessions
                    .get_mut(&session_id)
                    .ok_or_else(|| ServiceError::Storage(format!("event for unknown session {session_id}")))?;
                s.check_submission(response.trial_index)?;
                s.record(response);
            }
        }
        self.events_applied += 1;
        Ok(())
    }
}

/// Public view of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub study_id: String,
    pub user_id: String,
    pub method: Method,
    pub phase: Phase,
    pub cursor: usize,
    pub total_trials: usize,
    pub training_trials: usize,
    pub validation_trials: usize,
    pub test_trials: usize,
    pub validation_score: Score,
    pub test_score: Score,
    pub rejected: bool,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        let count = |p: Phase| s.slots.iter().filter(|t| t.phase == p).count();
        Self {
            session_id: s.session_id.clone(),
            study_id: s.study_id.clone(),
            user_id: s.user_id.clone(),
            method: s.method,
            phase: s.phase,
            cursor: s.cursor(),
            total_trials: s.slots.len(),
            training_trials: count(Phase::Training),
            validation_trials: count(Phase::Validation),
            test_trials: count(Phase::Test),
            validation_score: s.score(Phase::Validation),
            test_score: s.score(Phase::Test),
            rejected: s.rejected,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TrialPayload {
    pub session_id: String,
    pub trial_index: usize,
    pub phase: Phase,
    pub query_id: String,
    pub query_asset: String,
    pub intro: Option<ClassIntro>,
    /// Canonical explanation document.
    pub explanation: Box<RawValue>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTrial {
    Trial(TrialPayload),
    Complete { session: SessionView },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub session: SessionView,
    pub next_trial_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserScore {
    pub user_id: String,
    pub method: Method,
    pub session_id: String,
    pub rejected: bool,
    pub test_score: Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResults {
    pub study_id: String,
    /// Test-phase responses only.
    pub log: TrialLog,
    pub users: Vec<UserScore>,
}

pub struct StudyService {
    data_dir: PathBuf,
    plans: BTreeMap<String, StudyPlan>,
    manifest: Option<DatasetManifest>,
    state: Mutex<(State, File)>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl StudyService {
    /// Opens (creating if needed) a data directory, loading plans, the
    /// optional manifest, the snapshot, and any later events.
    pub fn open(data_dir: impl AsRef<Path>) -> Result<Self> {
        let data_dir = data_dir.as_ref().to_path_buf();
        fs::create_dir_all(data_dir.join("plans"))?;
        let mut plans = BTreeMap::new();
        let mut entries: Vec<_> = fs::read_dir(data_dir.join("plans"))?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            if e.path().extension().is_some_and(|x| x == "json") {
                let plan = StudyPlan::from_json(&fs::read_to_string(e.path())?)?;
                plans.insert(plan.config.study_id.clone(), plan);
            }
        }
        let manifest_path = data_dir.join("manifest.tsv");
        let manifest = manifest_path.is_file().then(|| read_manifest(&manifest_path)).transpose()?;

        let snapshot_path = data_dir.join("snapshot.json");
        let mut state: State = if snapshot_path.is_file() {
            serde_json::from_str(&fs::read_to_string(&snapshot_path)?)?
        } else {
            State::default()
        };
        let events_path = data_dir.join("events.jsonl");
        if events_path.is_file() {
            let reader = BufReader::new(File::open(&events_path)?);
            let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
            for (i, line) in lines.iter().enumerate().skip(state.events_applied as usize) {
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(line)
                    .map_err(|e| ServiceError::Storage(format!("events.jsonl line {}: {e}", i + 1)))?;
                state.apply(event)?;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&events_path)?;
        Ok(Self {
            data_dir,
            plans,
            manifest,
            state: Mutex::new((state, log)),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    /// Registers a plan, persisting it under `plans/`.
    pub fn add_plan(&mut self, plan: StudyPlan) -> Result<()> {
        let path = self.data_dir.join("plans").join(format!("{}.json", plan.config.study_id));
        fs::write(path, plan.to_json())?;
        self.plans.insert(plan.config.study_id.clone(), plan);
        Ok(())
    }

    pub fn plan(&self, study_id: &str) -> Option<&StudyPlan> {
        self.plans.get(study_id)
    }

    /// Callers validate the event first; it is logged, then applied.
    fn commit(&self, guard: &mut (State, File), event: Event) -> Result<()> {
        let (state, log) = guard;
        let mut line = serde_json::to_string(&event)?;
        line.push('\n');
        log.write_all(line.as_bytes())?;
        log.flush()?;
        log.sync_data()?;
        state.apply(event)?;
        if state.events_applied % SNAPSHOT_EVERY == 0 {
            let tmp = self.data_dir.join("snapshot.json.tmp");
            fs::write(&tmp, serde_json::to_string(state)?)?;
            fs::rename(tmp, self.data_dir.join("snapshot.json"))?;
        }
        Ok(())
    }

    /// Creates a session, or returns the user's existing one for this study.
    pub fn create_session(&self, study_id: &str, user_id: &str) -> Result<SessionView> {
        let plan = self
            .plans
            .get(study_id)
            .ok_or_else(|| ServiceError::NotFound(format!("study {study_id}")))?;
        if user_id.is_empty() {
            return Err(ServiceError::BadRequest("empty user_id".into()));
        }
        let mut guard = self.state.lock();
        if let Some(s) = guard
            .0
            .sessions
            .values()
            .find(|s| s.study_id == study_id && s.user_id == user_id)
        {
            return Ok(s.into());
        }
        let mut users: BTreeMap<Method, usize> = BTreeMap::new();
        for s in guard.0.sessions.values().filter(|s| s.study_id == study_id) {
            *users.entry(s.method).or_default() += 1;
        }
        let methods: Vec<Method> = plan.methods.keys().copied().collect();
        let method = assign_method(&methods, &users)
            .ok_or_else(|| ServiceError::BadRequest(format!("study {study_id} has no methods")))?;
        let mp = &plan.methods[&method];
        let mut seen = guard
            .0
            .exposure
            .get(study_id)
            .and_then(|m| m.get(&method))
            .cloned()
            .unwrap_or_default();
        seen.resize(mp.test_pool.len(), 0);
        let test = least_seen(&seen, plan.config.dataset.test_trials());

        let slot = |phase, plan_index: usize, t: &corrxai_core::study::PlannedTrial| TrialSlot {
            phase,
            plan_index,
            query_id: t.query_id.clone(),
            ai_correct: t.ai_correct,
        };
        let mut slots: Vec<TrialSlot> = Vec::new();
        slots.extend(mp.training.iter().enumerate().map(|(i, t)| slot(Phase::Training, i, t)));
        slots.extend(mp.validation.iter().enumerate().map(|(i, t)| slot(Phase::Validation, i, t)));
        slots.extend(test.iter().map(|&i| slot(Phase::Test, i, &mp.test_pool[i])));
        let now = now_ms();
        let session = Session {
            session_id: format!("{study_id}-{:06}", guard.0.next_session + 1),
            study_id: study_id.to_string(),
            user_id: user_id.to_string(),
            method,
            created_ms: now,
            updated_ms: now,
            phase: slots.first().map_or(Phase::Done, |s| s.phase),
            slots,
            responses: Vec::new(),
            rejected: false,
        };
        let view = SessionView::from(&session);
        self.commit(&mut guard, Event::SessionCreated { session })?;
        Ok(view)
    }

    pub fn session(&self, session_id: &str) -> Result<SessionView> {
        let guard = self.state.lock();
        guard
            .0
            .sessions
            .get(session_id)
            .map(SessionView::from)
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))
    }

    pub fn next_trial(&self, session_id: &str) -> Result<NextTrial> {
        let guard = self.state.lock();
        let s = guard
            .0
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        if s.phase == Phase::Done {
            return Ok(NextTrial::Complete { session: s.into() });
        }
        let cursor = s.cursor();
        let slot = &s.slots[cursor];
        let plan = self
            .plans
            .get(&s.study_id)
            .ok_or_else(|| ServiceError::NotFound(format!("study {}", s.study_id)))?;
        let mp = &plan.methods[&s.method];
        let trial = match slot.phase {
            Phase::Training => &mp.training[slot.plan_index],
            Phase::Validation => &mp.validation[slot.plan_index],
            Phase::Test => &mp.test_pool[slot.plan_index],
            Phase::Done => unreachable!("done sessions have no current slot"),
        };
        let doc = serialize_explanation(&trial.explanation);
        Ok(NextTrial::Trial(TrialPayload {
            session_id: s.session_id.clone(),
            trial_index: cursor,
            phase: slot.phase,
            query_id: trial.query_id.clone(),
            query_asset: format!("/assets/{}", trial.query_id),
            intro: plan.intros.get(&trial.explanation.label).cloned(),
            explanation: RawValue::from_string(doc.trim_end().to_string())?,
        }))
    }

    /// Stores the answer to the current trial exactly once. Any other index,
    /// including a repeat of an answered one, is a conflict.
    pub fn submit_response(&self, session_id: &str, trial_index: usize, accepted: bool, elapsed_ms: u64) -> Result<Ack> {
        let mut guard = self.state.lock();
        let s = guard
            .0
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id}")))?;
        s.check_submission(trial_index)?;
        let event = Event::ResponseRecorded {
            session_id: session_id.to_string(),
            response: RecordedResponse {
                trial_index,
                accepted,
                elapsed_ms,
                at_ms: now_ms(),
            },
        };
        self.commit(&mut guard, event)?;
        let s = &guard.0.sessions[session_id];
        Ok(Ack {
            session: s.into(),
            next_trial_index: (s.phase != Phase::Done).then(|| s.cursor()),
        })
    }

    /// Test-phase responses of every session in the study, as a trial log,
    /// with per-user scores. Unknown studies yield an empty log.
    pub fn session_results(&self, study_id: &str) -> StudyResults {
        let guard = self.state.lock();
        let plan = self.plans.get(study_id);
        let mut entries: BTreeMap<(Method, String), TrialEntry> = BTreeMap::new();
        let mut users = Vec::new();
        for s in guard.0.sessions.values().filter(|s| s.study_id == study_id) {
            users.push(UserScore {
                user_id: s.user_id.clone(),
                method: s.method,
                session_id: s.session_id.clone(),
                rejected: s.rejected,
                test_score: s.score(Phase::Test),
            });
            let Some(plan) = plan else { continue };
            for r in &s.responses {
                let slot = &s.slots[r.trial_index];
                if slot.phase != Phase::Test {
                    continue;
                }
                let t = &plan.methods[&s.method].test_pool[slot.plan_index];
                entries
                    .entry((s.method, t.query_id.clone()))
                    .or_insert_with(|| TrialEntry {
                        query_id: t.query_id.clone(),
                        method: s.method,
                        ai_confidence: t.ai_confidence,
                        ai_correct: t.ai_correct,
                        responses: Vec::new(),
                    })
                    .responses
                    .push(Response {
                        user_id: s.user_id.clone(),
                        accepted: r.accepted,
                    });
            }
        }
        users.sort_by(|a, b| a.method.cmp(&b.method).then(a.user_id.cmp(&b.user_id)));
        StudyResults {
            study_id: study_id.to_string(),
            log: TrialLog {
                entries: entries.into_values().collect(),
            },
            users,
        }
    }

    /// Filesystem path of an image's asset, from the manifest's source paths
    /// (relative paths resolve against the data directory).
    pub fn asset_path(&self, image_id: &str) -> Option<PathBuf> {
        let entry = self.manifest.as_ref()?.get(image_id)?;
        let p = PathBuf::from(entry.source_path.as_ref()?);
        Some(if p.is_absolute() { p } else { self.data_dir.join(p) })
    }
}
