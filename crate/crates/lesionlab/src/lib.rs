//! Synthetic lesion insertion and lesion-wise evaluation for 3D brain MRI
//! segmentation.
//!
//! The crate covers the full loop of a segmentation experiment:
//!
//! - [`volume`]: voxel grids, BraTS label semantics, and a narrow NIfTI-1
//!   reader/writer.
//! - [`phantom`]: procedural test cases (sphere brain, spherical lesions)
//!   so every other module can be exercised without patient data.
//! - [`augment`]: on-the-fly insertion of donor tumors into cases, with
//!   class adaptation, scaling, collision-free placement, and a pluggable
//!   intensity synthesizer.
//! - [`metrics`]: legacy and lesion-wise Dice / surface Dice (NSD).
//! - [`postproc`]: probability ensembling, resection-cavity suppression,
//!   and size-threshold filtering.
//! - [`stats`]: score aggregation, competition ranking, and paired t-tests.
//! - [`cli`]: the `lesionlab` command-line front end; `src/main.rs` is a
//!   one-line wrapper around [`cli::run`].
//!
//! Every random decision flows through [`augment::RandomStream`], so a seed
//! pins the whole pipeline bit-for-bit. Start with the `examples/` directory
//! for runnable walkthroughs of each capability.

pub mod augment;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod postproc;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
