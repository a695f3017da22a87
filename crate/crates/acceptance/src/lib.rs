//! Holds the `acceptance` test target. Kept as its own package so the rest of
//! the workspace's tests run before it.
