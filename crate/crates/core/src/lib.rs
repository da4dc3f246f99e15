//! Two-sample testing for multi-source data with block-wise missingness.
//!
//! Observations are split by which sources they observe (their missingness
//! pattern). Distances are computed over shared sources only, a k-nearest
//! neighbor graph is built separately for every overlapping pair of patterns,
//! and the graph-induced ranks are summed within each group. Two quadratic-form
//! statistics are built on top of those rank sums:
//!
//! * **BRISE-v** keeps one `(U_x, U_y)` pair per overlapping pattern pair and
//!   is compared to χ² with `2|I|` degrees of freedom.
//! * **BRISE-c** sums all pattern pairs into a single `(U_x, U_y)` and is
//!   compared to χ²₂.
//!
//! Null means and covariances are exact under label shuffling *within*
//! patterns, which stays valid when the two groups have different pattern
//! frequencies. Permutation inference (pattern-wise or standard) is available
//! through [`permutation`], and [`sim`] reproduces size/power studies.
//!
//! ```no_run
//! use brise::{io, pipeline::{run_test, TestOptions}};
//!
//! let data = io::ingest("data.csv".as_ref(), "schema.json".as_ref()).unwrap();
//! let outcome = run_test(&data, &TestOptions::default()).unwrap();
//! println!("{}", serde_json::to_string_pretty(&outcome.result).unwrap());
//! ```

pub mod data;
pub mod dissimilarity;
pub mod error;
pub mod exec;
pub mod graph;
pub mod io;
pub mod moments;
pub mod numeric;
pub mod permutation;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod stats;

pub use data::{Group, MissingnessPattern, MultiSourceDataset, PatternPartition, SourceSchema};
pub use error::{Error, Result};
pub use exec::Exec;
pub use stats::{Inference, Method, TestResult};

/// Version of the JSON/CSV output formats written by this crate.
pub const FORMAT_VERSION: &str = "1";
