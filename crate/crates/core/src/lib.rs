//! Consistent-quality rate adaptation for HTTP adaptive streaming.
//!
//! - [`ladder`]: per-segment bitrate/quality tables, manifest I/O, synthetic
//!   ladders, MSE to PSNR.
//! - [`utility`]: alpha-fair, switching-discounted and max-min objectives.
//! - [`dp`]: buffer-quantized dynamic-programming planner and its
//!   exhaustive-search oracle.
//! - [`online`]: sliding-window adapter built on the planner.
//! - [`controller`]: probe-and-adapt client loop with quality-aware and
//!   bitrate-only selection.
//! - [`sim`]: deterministic fluid-flow simulator and summary metrics.

pub mod controller;
pub mod dp;
pub mod ladder;
pub mod online;
pub mod sim;
pub mod utility;

pub use controller::{Controller, ControllerConfig, ControllerKind};
pub use dp::{brute_force_plan, plan, BufferGrid, FinalBuffer, PlanError, PlanRequest, PlanResult};
pub use ladder::{Level, QualityConvention, SegmentLadder};
pub use online::{online_step, OnlineConfig, OnlineDecision};
pub use sim::{BandwidthTrace, ClientSession, SimReport};
pub use utility::Objective;
