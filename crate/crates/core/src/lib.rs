pub mod cli;
pub mod diagnostics;
pub mod grid;
pub mod monotone;
pub mod scheme;
pub mod stepper;
