//! Acceptance checks for `fiberphoton`. Everything lives in
//! `tests/acceptance.rs`; run it with `cargo test -p fiberphoton-validation`.
