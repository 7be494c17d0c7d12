//! Design-space exploration for DNNs on processing-in-memory accelerators.
//!
//! - [`net_ir`]: layer graphs, shape inference, weight/MAC/activation counts.
//! - [`pim_map`]: weight-stationary array mapping, passes, utilization and
//!   activation traffic.
//! - [`infer`]: a small exact forward-pass engine.
//! - [`robustness`]: Gaussian noise injection, weight quantization and
//!   Monte Carlo accuracy sweeps.
//! - [`zoo`], [`io`], [`report`]: model zoo, file formats, CSV/SVG output.

pub mod error;
pub mod infer;
pub mod io;
pub mod net_ir;
pub mod pim_map;
pub mod report;
pub mod robustness;
pub mod zoo;

pub use error::{Error, Result};
