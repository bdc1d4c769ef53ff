//! Synthetic ground truth: rigged biped characters, stylized variants, linear blend
//! skinning, a PCA pose latent space and dataset assembly.

pub mod character;
pub mod dataset;
pub mod lbs;
pub mod pose_space;

pub use character::{
    build_character, stylize, BodyParams, BodyPlan, Rig, SkinWeights, SkinnedCharacter, StyleParams,
    BONE_COUNT,
};
pub use dataset::{gen_dataset, Dataset, DatasetConfig, DeformSample, PoseTrainingSet};
pub use lbs::{forward_kinematics, lbs_deform, PoseSample};
pub use pose_space::{fit_pose_space, sample_pose, PoseSpace, POSE_DIM};
