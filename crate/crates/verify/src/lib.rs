//! Holds the `acceptance` test target; run it with `cargo test -p tracekg-verify --test acceptance`.
