//! Survey service: runs choice-task sessions over HTTP, records responses with
//! quality flags, and exports completed sessions as a study bundle.

pub mod config;
pub mod http;
pub mod service;
pub mod session;

pub use config::SurveyConfig;
pub use http::{router, serve};
pub use service::Survey;
