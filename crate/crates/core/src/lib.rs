//! Online identification and SDRE control of parametric PDEs.

pub mod baseline;
pub mod blr;
pub mod experiment;
pub mod integrate;
pub mod online;
pub mod operators;
pub mod riccati;
