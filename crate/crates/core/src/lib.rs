//! Carbon-intelligent capacity planning for datacenter clusters.
//!
//! The crate turns cluster telemetry, grid carbon-intensity forecasts and
//! power models into next-day Virtual Capacity Curves (VCCs): hourly limits
//! on the reservations flexible workloads may hold, chosen by a linear
//! program that trades expected carbon footprint against peak power. A
//! tick-level admission simulator and a randomized experiment harness
//! evaluate the curves.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod carbon;
pub mod config;
pub mod forecasting;
pub mod linalg;
pub mod lp;
pub mod optimizer;
pub mod pipeline;
pub mod power_model;
pub mod simulator;
pub mod synthetic;
pub mod telemetry;
pub mod vcc;
