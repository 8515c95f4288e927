//! IO, persistence, serving, simulation and evaluation around `newsrec-core`.

pub mod ab;
pub mod bench;
pub mod catalog;
pub mod config;
pub mod datagen;
pub mod eval;
pub mod events;
pub mod formats;
pub mod http;
pub mod pipeline;
pub mod service;
pub mod store;
