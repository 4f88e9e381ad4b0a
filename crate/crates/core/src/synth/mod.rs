//! Synthetic front-end: ray-traced scenes, ground-truth sequence generation,
//! corrupted depth priors, keyframe selection, covisibility graphs and
//! correspondence oracles. Everything a learned front-end would produce,
//! derived from known geometry instead.

pub mod correspond;
pub mod graph;
pub mod keyframe;
pub mod priors;
pub mod scene;
pub mod sequence;

pub use correspond::{
    cast_depth, sample_correspondences, sample_pixels, CorrMode, CorrParams, CorrSample,
    CorrespondenceSet,
};
pub use graph::{build_graph, cross_view_overlap, CovisibilityGraph, EdgeKey, GraphParams};
pub use keyframe::{
    default_flow_threshold, keyframe_from_frame, keyframe_select, mean_flow, Keyframe, KeyframeCam,
};
pub use priors::{corrupt_depth_prior, BiasField, DepthPriorParams};
pub use scene::{generate_scene, Aabb, ColorField, Hit, Scene, SceneConfig, Shape, Surface};
pub use sequence::{
    generate_sequence, render_camera, sway_spline, CamFrame, Frame, PoseSpline, SequenceConfig,
};
