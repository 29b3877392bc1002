//! File formats and serialization for the gradlens command-line tool.

pub mod io;
