//! Pinhole camera model, rigid transforms, disparity/depth conversion and
//! differentiable inverse warping for view synthesis.

mod camera;
mod depth;
mod transform;
mod warp;

pub use camera::CameraIntrinsics;
pub use depth::{disparity_to_depth, disparity_to_depth_tensor, DepthMap, DepthRange};
pub use transform::{axis_angle_to_matrix, mirror_pose_vector, pose_vector_to_transform, RigidTransform};
pub use warp::{inverse_warp, reproject_pixels, reproject_tensor, warp_image, CameraTensors, PixelGrid, PoseTensors};
