//! Quadrotor model with exact feedback linearization.
//!
//! The plant carries thrust and its rate as extra states so that every
//! output reaches the input at a fixed relative degree. A static feedback then
//! turns the closed loop into four decoupled integrator chains, which are
//! driven by pole-placement tracking laws.

pub mod config;
pub mod control;
pub mod linearize;
pub mod math;
pub mod model;
pub mod sim;
pub mod verify;
