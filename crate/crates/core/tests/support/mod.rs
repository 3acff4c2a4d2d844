//! Shared oracles and fixtures for the integration and acceptance tests.
#![allow(dead_code)]

pub mod complex_step;
pub mod fixtures;
