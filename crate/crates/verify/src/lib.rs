//! Holds the workspace acceptance suite (`cargo test -p hintcolor-verify`).
