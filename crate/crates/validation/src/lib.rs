//! Host package for the acceptance suite, which lives in `tests/acceptance.rs`.
//!
//! It is kept apart from `vefil-core` so that a failing criterion does not
//! stop the rest of the workspace's test binaries from running.
