//! Decomposed geometry/texture avatar: a pose-conditioned warp from the
//! canonical space into a pose-independent template, whose shared trunk
//! feeds an occupancy/density head and a colour head.

mod animate;
mod nets;
mod render;
mod train;

pub use animate::{animate, boundary_height, correspondence_labels, generate_texture, occupancy_grid, template_mesh, AnimatedFrame};
pub use nets::{AvatarArch, FieldGrad, FieldOutput, FieldTape, GeoTexNets, PoseEncoderKind, PoseInput, Template, WarpField};
pub use render::{composite, composite_backward, ray_box, stratified_samples, volume_render, Ray, RenderedRay};
pub use train::{
    loss_and_grad, loss_total, posed_bounds, prepare_scan, train_avatar, EpochStats, LossParts, LossWeights, Microbatch, PreparedRay,
    PreparedScan, RayPoolConfig, TrainedAvatar,
};
