//! Holds the `acceptance` test target. Run it with
//!
//! ```text
//! cargo test -p l1mbrl-acceptance
//! ```
