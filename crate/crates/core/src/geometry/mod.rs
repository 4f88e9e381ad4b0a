//! Camera and pose geometry: SE(3)/Sim(3) transforms, the pinhole model,
//! rig calibration and the relative transforms between rig cameras.

mod align;
mod pair;
mod pinhole;
mod rig;
mod se3;
mod sim3;

pub use align::sim3_align;
pub use pair::{pair_transform, PairKind};
pub use pinhole::{Pinhole, Projection, Z_MIN};
pub use rig::{CamId, Rig, RigCamera};
pub use se3::{skew, Se3};
pub use sim3::Sim3;
