//! Accept/reject study service: sessions move through training, a validation
//! gate, and a test phase, and test responses export as trial logs.

pub mod error;
pub mod http;
pub mod service;
pub mod session;

pub use error::{Result, ServiceError};
pub use http::{router, serve};
pub use service::{Ack, NextTrial, SessionView, StudyResults, StudyService, TrialPayload, UserScore};
pub use session::{Phase, Score};
