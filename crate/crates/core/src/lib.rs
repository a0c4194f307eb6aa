//! Simulation and analysis of waveguide photon-pair experiments.
//!
//! * [`model`]: parameter records and the `section.key = value` config format.
//! * [`analytic`]: closed-form HOM dip, facet visibility ceiling, Franson
//!   peak weights, Bell arithmetic, CAR prediction.
//! * [`mc`]: seeded Monte Carlo event streams and scans.
//! * [`tdc`]: coincidence histograms, peak/CAR/background statistics.
//! * [`fitting`]: Levenberg–Marquardt fits of the HOM dip and the fringe.
//! * [`pipeline`]: the three experiments run end to end.
//! * [`commands`]: reproducible runs writing CSV files and JSON manifests.

pub mod analytic;
pub mod commands;
pub mod fitting;
pub mod mc;
pub mod model;
pub mod pipeline;
pub mod tdc;

pub use analytic::{BellResult, CheckReport, HomDipParams, PeakWeights};
pub use fitting::{DataPoint, FitError, FitResult};
pub use mc::{Channel, Event, EventStream, ScanPoint, SimError};
pub use model::{ConfigError, ExperimentConfig, FransonConfig, HomConfig};
pub use pipeline::{FransonRun, HomRun, PairRun, PipelineError};
pub use tdc::{CarResult, Histogram, TdcError, Window};
