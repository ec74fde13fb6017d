//! File formats, batch orchestration and the command line on top of
//! `forge-core`.
//!
//! * [`io`]: volume kinds and extension-based dispatch to [`nifti`] and [`raw`].
//! * [`config`] / [`pipeline`]: strict JSON configuration and the seeded,
//!   crash-isolated sample fan-out that writes sample directories and a
//!   manifest.
//! * [`snapshot`]: PGM slice and raw-field export of `P` during transport.
//! * [`cli`]: the `forge` subcommands.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod nifti;
pub mod pipeline;
pub mod raw;
pub mod snapshot;

pub use error::{Error, Result};
