//! Self-supervised dense pixelwise descriptor learning.
//!
//! The crate covers the whole loop: a synthetic RGBD camera ([`scene`]),
//! volumetric reconstruction and object masking ([`recon`]), geometric
//! match/non-match generation ([`correspondence`]), a small fully
//! convolutional network with hand-written gradients ([`net`]), the
//! pixelwise contrastive objective ([`loss`]), correspondence metrics
//! ([`eval`]), point-cloud grasp planning ([`grasp`]) and the orchestration
//! used by the command line tool ([`pipeline`]).

pub mod correspondence;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grasp;
pub mod image;
pub mod loss;
pub mod net;
pub mod pipeline;
pub mod recon;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{project, unproject, Intrinsics, Pixel, Pose, Vec3};
pub use image::{DepthImage, Grid, Mask, RgbImage};
pub use scene::{GroundTruth, RgbdFrame, Scene};
