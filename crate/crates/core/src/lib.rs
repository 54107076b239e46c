//! Few-shot table-to-text generation at desk scale.
//!
//! The pipeline has two trained stages. A content planner (BiLSTM encoder
//! over table slots, linear-chain CRF on top) selects which slots a summary
//! should mention and in what order. A small encoder-decoder transformer
//! then generates the summary from the plan plus the linearized table; in
//! prefix-tuning mode the transformer body stays frozen and only per-layer
//! prefix key/value banks and scaled parallel adapters train.
//!
//! Everything runs on an f64 reverse-mode autodiff tape (`tensor`), trains
//! with AdamW (`train`), and is scored with BLEU, PARENT and word-order
//! metrics (`metrics`).

pub mod config;
pub mod generator;
pub mod gradcheck;
pub mod metrics;
pub mod planner;
pub mod synth;
pub mod table;
pub mod tensor;
pub mod train;

pub use config::TrainConfig;
pub use table::{Record, Table, Vocab};
