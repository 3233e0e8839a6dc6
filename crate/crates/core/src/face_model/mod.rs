//! Parametric face rig: blendshapes for identity and expression, a small
//! joint hierarchy and linear blend skinning.

mod mesh;
mod rig;
mod transform;

pub use mesh::{
    bind_pose_mesh, forward_kinematics, joint_locations, linear_blend_skinning, posed_mesh,
    posed_mesh_with_transforms, vertex_normals, ExpressionParams, IdentityParams, Mesh, PoseParams,
};
pub(crate) use mesh::bounds_of;
pub use rig::{
    EyelidCoupling, FaceRig, LandmarkAnchor, RigData, DENSE_LANDMARK_COUNT, RIG_FORMAT_VERSION,
    SPARSE_LANDMARK_COUNT,
};
#[cfg(test)]
pub(crate) use rig::test_rigs;
pub use transform::{euler_to_rotation, RigidTransform, Vec3};
pub(crate) use transform::{arr3, v3};
