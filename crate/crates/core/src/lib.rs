//! Real-time local event detection over geo-tagged short-text streams.
//!
//! The pipeline per window shift: [`ingest`] produces the tweets leaving and
//! entering the query window, [`keyword_graph`] keeps keyword co-occurrence
//! and RWR vicinities, [`candidate`] and [`updater`] cluster the window by
//! authority ascent, [`summarizer`] and [`embedding`] maintain the regional
//! history and keyword semantics, and [`classifier`] decides which candidates
//! are local events. [`engine`] wires it together and [`store`] answers
//! queries over the detected events.

pub mod candidate;
pub mod classifier;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod keyword_graph;
pub mod persist;
pub mod store;
pub mod summarizer;
pub mod synth;
pub mod updater;

pub use error::{Error, ParseError, Result};
