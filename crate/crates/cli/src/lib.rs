//! Library surface of the command-line front end. The binary lives in
//! `main.rs`; this exposes the corpus/workload file formats so integration
//! tests (and other tools) can read and write them directly.

pub mod corpus;
