//! Real-time child-abduction detection for edge devices.
//!
//! Frames are captured at a fixed cadence, grouped into five-frame analysis
//! cycles, captioned by a vision-language model, assessed for threats by a
//! second agent (with a bounded debate when the assessment is ambiguous), and
//! turned into alert decisions that are dispatched over SMS, WhatsApp, webhook,
//! and local channels. Every cycle is persisted to an append-only ledger that
//! also records operator feedback.

pub mod ingest;
pub mod gateway;
pub mod agents;
pub mod alerting;
pub mod store;
pub mod pipeline;
pub mod bench;
