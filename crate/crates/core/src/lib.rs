//! Self-supervised slice-to-volume segmentation.
//!
//! A small convolutional network is trained to reconstruct each slice of a
//! volume from its neighbour through a local-attention affinity matrix. At
//! inference the same affinities carry a single annotated 2D mask through the
//! whole volume, slice by slice, with an intensity-based verification step
//! that limits drift.
//!
//! Module map:
//!
//! * [`volume`], [`io`], [`phantom`], [`metrics`]: containers, file formats,
//!   synthetic data and Dice.
//! * [`edge_profile`]: the per-pixel edge histogram fed to the network.
//! * [`network`]: residual conv stack with reverse-mode gradients, ADAM and
//!   checkpoints.
//! * [`affinity`]: banded local attention and weight-and-copy.
//! * [`trainer`]: the reconstruction objective and training loop.
//! * [`propagator`]: mask propagation with verification.
//! * [`eval`]: seed selection, baselines and ablation reports.
//! * [`rle`]: run-length mask encoding used on the service wire.

pub mod affinity;
pub mod edge_profile;
pub mod error;
pub mod eval;
pub mod io;
pub mod metrics;
pub mod network;
pub mod phantom;
pub mod propagator;
pub mod rle;
pub mod scalar;
pub mod trainer;
pub mod volume;

pub use affinity::{AffinityMatrix, WindowSpec};
pub use edge_profile::{EdgeProfileMap, ProfileConfig};
pub use error::{Error, Result};
pub use metrics::dice;
pub use network::{AdamState, FeatureMap, GradientSet, InputMode, Network, NetworkConfig};
pub use phantom::PhantomSpec;
pub use propagator::{PropagateOptions, PropagationResult, RegionStats};
pub use rle::RleMask;
pub use scalar::Real;
pub use volume::{MaskPlane, MaskVolume, SlicePlane, Volume};
