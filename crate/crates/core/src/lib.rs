#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Photon statistics of finite ensembles of single-photon emitters.

pub mod analytic;
pub mod config;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod model;
pub mod montecarlo;
pub mod sweep;
pub mod synthetic;
pub mod timetags;

pub use error::{Error, Result};
