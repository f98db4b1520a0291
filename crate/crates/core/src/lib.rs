//! Long-video question answering over a multi-granular clip database.
//!
//! [`ingest`] turns a video into a [`video_store::VideoDatabase`]; [`toolset`]
//! exposes search tools over it; [`agent`] runs the reason/act loop that
//! answers questions; [`eval_behavior`] scores runs and classifies tool use.

pub mod agent;
pub mod eval_behavior;
pub mod ingest;
pub mod model_gateway;
pub mod toolset;
pub mod video_store;

pub use video_store::{ClipInterval, ClipRecord, FrameRef, SubjectEntry, SubjectRegistry, VideoDatabase};
