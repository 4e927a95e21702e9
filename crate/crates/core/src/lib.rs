//! Probing toolkit for human chess concepts in transformer activations.
//!
//! - [`position`]: FEN / X-FEN positions, Chess960 starts, tokenization.
//! - [`concepts`]: rule-based detectors for the six strategic concepts.
//! - [`dataset`]: EPD and Chess960 dataset ingestion, folds, scenarios.
//! - [`cpaf`]: the CPAF binary activation file format.
//! - [`probes`]: concept-vector, logistic and sequence probes.
//! - [`synth`]: planted-signal activation generator.
//! - [`experiment`]: the concept × method × scenario × layer × fold grid.

pub mod concepts;
pub mod cpaf;
pub mod dataset;
pub mod experiment;
pub mod position;
pub mod probes;
pub mod rng;
pub mod synth;
