//! Morphable-model landmark fitting, identity/expression retargeting, and
//! evaluation utilities.

pub mod camera;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod transform;

pub use camera::{
    estimate_pose, projection_jacobian, rotation_geodesic, LandmarkSet, Pose, CHIN_LANDMARK,
    JAW_LANDMARKS, LANDMARK_COUNT, OUTER_EYE_CORNERS,
};
pub use error::{Error, Result};
pub use eval::{
    landmark_similarity, run_shuffle_eval, shuffle_pairs, similarity_stats, synthesize_corpus,
    write_csv, CorpusConfig, EvalOutcome, GrandMeans, PairReport, ShufflePlan, SimilarityReport,
    SkippedPair, SplitMix64, METRIC_NAME,
};
pub use fitting::{
    fit, fit_expression, fit_shape, update_contour_correspondence, ContourMode, FitConfig,
    FitResult,
};
pub use model::{
    load_model, positions_for_map, save_model, synthesize_test_model, Mesh, MorphableModel,
};
pub use pipeline::{
    load_landmark_sequence, process_sequence, process_sequence_with, smooth_sequence,
    write_sequence_output, GapRecord, SequenceJob, SequenceOutput,
};
pub use render::{
    bake_reference_texture, coverage_weights, rasterize, rasterize_depth, Image, RenderedFace,
    TextureMap, VertexUv,
};
pub use transform::{
    depth_epsilon, recombine, transfer_gap, transform_landmarks, transform_landmarks_dynamic,
    TransformedLandmarks,
};
