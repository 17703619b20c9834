//! Lag selection for mixture transition distribution (MTD) chains.

pub mod empirics;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod lags;
pub mod model;
pub mod oracle;
pub mod select;
pub mod thresholds;

pub use empirics::{count_contexts, ContextCounts, SymbolSequence};
pub use error::{Error, Result};
pub use lags::LagSet;
pub use model::{Alphabet, ModelDiagnostics, MtdModel};
pub use select::{Selection, SelectionTrace};
pub use thresholds::ThresholdParams;
