//! Acceptance checks for `varband` live in `tests/acceptance.rs`.
