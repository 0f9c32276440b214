//! Sound event detection (SED) evaluation and fusion toolkit.
//!
//! The crate covers the full path from per-frame class probabilities to a
//! Polyphonic Sound Detection Score:
//!
//! * [`events`]: event and frame-grid data model, interval geometry,
//!   rasterization and de-overlapping.
//! * [`dataio`] and [`config`]: DCASE-style TSV/CSV files and the flat
//!   `key = value` run configuration.
//! * [`assignment`]: Hungarian matching between ground truth and event
//!   predictions plus the set-prediction losses and focal loss.
//! * [`psds`]: intersection-based PSDS, both the class-averaged score and the
//!   class-specific variant used to derive fusion weights.
//! * [`fusion`]: class-wise PSDS-weighted averaging of model probabilities.
//! * [`postproc`]: median + mean smoothing and per-class window search.
//! * [`ssl`]: a small, hand-differentiated simulation of burn-in and
//!   teacher-guided semi-supervised training.

pub mod assignment;
pub mod config;
pub mod dataio;
mod error;
pub mod events;
pub mod fusion;
pub mod postproc;
pub mod psds;
pub mod ssl;

pub use error::{Error, Result};
pub use events::{ClipLabel, Event, EventSet, FrameGrid, NormalizedBox};
