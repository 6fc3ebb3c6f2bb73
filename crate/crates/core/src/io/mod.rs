//! File formats: binary array archives, model files and CSV reports.

pub mod archive;
pub mod csv_out;
pub mod persist;

pub use archive::{Archive, NamedArray};
