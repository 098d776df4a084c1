//! Text-to-motion synthesis: corpus ingestion, a hierarchical two-stream
//! pose/sentence embedding model, training with adversarial and manifold
//! losses, generation, and the evaluation metrics.

pub mod checkpoint;
pub mod container;
pub mod embed;
pub mod error;
pub mod ingest;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod run;
pub mod scalar;
pub mod skeleton;
pub mod testkit;
pub mod train;

pub use error::{Error, Result};
pub use motion::{MotionSequence, PartitionedPose, TRAJECTORY_CHANNELS};
pub use scalar::Scalar;
pub use skeleton::{BodyPart, Skeleton, JOINT_COUNT};

/// Default training/evaluation precision.
pub type Real = f64;

/// Concrete aliases for the main generic types.
pub type MotionSequence32 = MotionSequence<f32>;
pub type MotionSequence64 = MotionSequence<f64>;
