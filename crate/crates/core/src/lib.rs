//! Pool-based active learning for multi-label classification.
//!
//! The loop keeps two streams side by side. The *sample stream* scores the
//! unlabeled pool and picks the batch worth annotating. The *label stream*
//! proposes a default annotation for every picked sample and checks it
//! against a table of label-combination profiles learned from earlier
//! annotations. A reviewer (simulated or human) only confirms or corrects
//! the defaults, and the classifier head is fine-tuned on the result.
//!
//! ```
//! use std::sync::Arc;
//! use activelab::{driver, synth};
//!
//! let mut cfg = synth::SynthConfig::lusms_synth_v1(7);
//! cfg.n_pool = 200;
//! cfg.n_test = 100;
//! let data = Arc::new(synth::generate_synthetic(&cfg).unwrap());
//!
//! let al = driver::ALConfig { k_max: 20, max_iterations: 3, ..Default::default() };
//! let report = driver::run(&al, data, None).unwrap();
//! assert_eq!(report.iterations.len(), 3);
//! assert_eq!(report.iterations[2].labeled_count, 60);
//! ```

pub mod classifier;
pub mod dataset;
pub mod driver;
pub mod error;
pub mod label_stream;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod sample_stream;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    decode_combination, encode_combination, Dataset, LabelCombination, LabelSchema,
    PoolPartition, ProbabilityVector, Sample, Split, StateMatrix,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-model.md")]
    mod data_model {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    mod classifier {}
    #[doc = include_str!("../../../book/src/sample-stream.md")]
    mod sample_stream {}
    #[doc = include_str!("../../../book/src/label-stream.md")]
    mod label_stream {}
    #[doc = include_str!("../../../book/src/annotation.md")]
    mod annotation {}
    #[doc = include_str!("../../../book/src/loop.md")]
    mod driver_loop {}
    #[doc = include_str!("../../../book/src/cli-and-service.md")]
    mod cli_and_service {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
}
