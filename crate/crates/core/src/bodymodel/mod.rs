//! Toy articulated body: skeleton, linear blend skinning, positional maps
//! and normal-map canonicalisation.

pub mod body;
pub mod maps;
pub mod skeleton;
pub mod skinning;

pub use body::{toy_body_def, ArticulatedBody};
pub use maps::{canonicalize_normal_map, render_positional_maps, CanonicalizedNormals, PosedMapPair, PositionMap};
pub use skeleton::{falloff_weights, Affine, BodyDef, Capsule, CapsuleDef, JointDef, Pose, SkinWeights};
pub use skinning::{
    blended_rotation, canonicalize_points, forward_skin, forward_skin_with, inverse_skin, inverse_skin_with, pose_mesh, MAX_BLEND_CONDITION,
};
