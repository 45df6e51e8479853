//! Seeded image-transform kernels and the two-branch augmentation policies.

pub mod kernels;
pub mod policy;

pub use kernels::JitterStrength;
pub use policy::{
    apply_policy, basic_policy, builtin_policies, eval_transform, pathbt_policy, resolve_policy, AugmentationPolicy,
    Transform, TransformSpec, DEFAULT_OUT_SIZE, IMAGENET_MEAN, IMAGENET_STD,
};
