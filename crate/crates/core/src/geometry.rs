//! Coordinate transforms between camera, base, and world frames, plus the
//! voxel discretization used by the spatial memories.
//!
//! Conventions: the world frame is right-handed with z up; yaw is measured
//! counterclockwise about z from the +x axis. Image coordinates use u =
//! column, v = row with the origin at the top-left corner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth {0}: depth must be positive and finite")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside image bounds {width}x{height}")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("point ({0}, {1}, {2}) falls outside the voxel grid")]
    OutOfGrid(f64, f64, f64),
    #[error("voxel index ({0}, {1}, {2}) out of range for grid")]
    VoxelOutOfRange(i64, i64, i64),
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("invalid grid params: {0}")]
    BadGrid(String),
}

pub type Point3 = [f64; 3];

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0) || !(fy > 0.0) {
            return Err(GeometryError::BadIntrinsics(format!("focal lengths must be positive, got fx={fx}, fy={fy}")));
        }
        if !(0.0 <= cx && cx < width as f64) || !(0.0 <= cy && cy < height as f64) {
            return Err(GeometryError::BadIntrinsics(format!("principal point ({cx}, {cy}) outside {width}x{height} image")));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }
}

/// Planar agent pose: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: normalize_angle(yaw) }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Normalizes an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// 4x4 homogeneous rigid transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub m: [[f64; 4]; 4],
}

impl RigidTransform {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { m }
    }

    pub fn from_rotation_translation(r: [[f64; 3]; 3], t: Point3) -> Self {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        Self { m }
    }

    pub fn translation(t: Point3) -> Self {
        let mut out = Self::identity();
        for i in 0..3 {
            out.m[i][3] = t[i];
        }
        out
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for (k, orow) in other.m.iter().enumerate() {
                    acc += self.m[i][k] * orow[j];
                }
                m[i][j] = acc;
            }
        }
        RigidTransform { m }
    }

    /// Applies the transform to a point (homogeneous coordinate 1).
    pub fn apply(&self, p: Point3) -> Point3 {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.m[i][0] * p[0] + self.m[i][1] * p[1] + self.m[i][2] * p[2] + self.m[i][3];
        }
        out
    }

    /// Checks the bottom row and rotation-block orthonormality.
    pub fn is_rigid(&self, tol: f64) -> bool {
        if self.m[3] != [0.0, 0.0, 0.0, 1.0] {
            return false;
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for row in &self.m[..3] {
                    dot += row[i] * row[j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Voxel grid parameters: edge length in meters and horizontal dimension in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub delta: f64,
    pub g: u32,
}

impl GridParams {
    pub fn new(delta: f64, g: u32) -> Result<Self, GeometryError> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(GeometryError::BadGrid(format!("voxel size must be positive, got {delta}")));
        }
        if g == 0 || g % 2 != 0 {
            return Err(GeometryError::BadGrid(format!("grid dimension must be even and positive, got {g}")));
        }
        Ok(Self { delta, g })
    }
}

/// Integer voxel coordinates. Horizontal axes are centered on the grid
/// (0..g), the z axis starts at the floor (vz >= 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub vx: i64,
    pub vy: i64,
    pub vz: i64,
}

impl VoxelIndex {
    pub fn new(vx: i64, vy: i64, vz: i64) -> Self {
        Self { vx, vy, vz }
    }

    pub fn chebyshev(&self, other: &VoxelIndex) -> i64 {
        (self.vx - other.vx)
            .abs()
            .max((self.vy - other.vy).abs())
            .max((self.vz - other.vz).abs())
    }

    fn in_grid(&self, gp: &GridParams) -> bool {
        let g = gp.g as i64;
        (0..g).contains(&self.vx) && (0..g).contains(&self.vy) && self.vz >= 0
    }
}

/// Inverse perspective projection of pixel (u, v) at the given depth.
pub fn pixel_to_camera(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Point3, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::InvalidDepth(depth));
    }
    if u < 0.0 || u > k.width as f64 || v < 0.0 || v > k.height as f64 {
        return Err(GeometryError::PixelOutOfBounds { u, v, width: k.width, height: k.height });
    }
    Ok([depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth])
}

/// Base-to-world transform for a planar pose: yaw rotation about world z,
/// translation (x, y, z_base).
pub fn pose_to_world_transform(p: &AgentPose, z_base: f64) -> RigidTransform {
    let (s, c) = p.yaw.sin_cos();
    RigidTransform::from_rotation_translation(
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        [p.x, p.y, z_base],
    )
}

/// Cascaded transform of a camera-frame point into the world frame.
pub fn camera_to_world(pc: Point3, t_base_cam: &RigidTransform, t_world_base: &RigidTransform) -> Point3 {
    t_world_base.compose(t_base_cam).apply(pc)
}

/// Discretizes a world point into voxel coordinates. The G/2 offset centers
/// the horizontal axes; z is measured up from the floor. Points outside the
/// grid (including z < 0) are rejected.
pub fn world_to_voxel(pw: Point3, gp: &GridParams) -> Result<VoxelIndex, GeometryError> {
    let half = gp.g as f64 / 2.0;
    let v = VoxelIndex::new(
        (pw[0] / gp.delta + half).floor() as i64,
        (pw[1] / gp.delta + half).floor() as i64,
        (pw[2] / gp.delta).floor() as i64,
    );
    if v.in_grid(gp) {
        Ok(v)
    } else {
        Err(GeometryError::OutOfGrid(pw[0], pw[1], pw[2]))
    }
}

/// World coordinates of the voxel center.
pub fn voxel_to_world(v: &VoxelIndex, gp: &GridParams) -> Result<Point3, GeometryError> {
    if !v.in_grid(gp) {
        return Err(GeometryError::VoxelOutOfRange(v.vx, v.vy, v.vz));
    }
    let half = gp.g as f64 / 2.0;
    Ok([
        (v.vx as f64 - half + 0.5) * gp.delta,
        (v.vy as f64 - half + 0.5) * gp.delta,
        (v.vz as f64 + 0.5) * gp.delta,
    ])
}

/// Center pixel of patch (i, j) for a patch grid of stride s:
/// u = j*s + s/2, v = i*s + s/2.
pub fn patch_center(i: u32, j: u32, s: u32) -> (f64, f64) {
    let s = s as f64;
    (j as f64 * s + s / 2.0, i as f64 * s + s / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 200).unwrap()
    }

    #[test]
    fn principal_point_ray() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 10, 10).unwrap();
        assert_eq!(pixel_to_camera(0.0, 0.0, 1.0, &k).unwrap(), [0.0, 0.0, 1.0]);
        assert_eq!(pixel_to_camera(50.0, 50.0, 3.0, &k100()).unwrap(), [0.0, 0.0, 3.0]);
    }

    #[test]
    fn off_axis_pixel() {
        let p = pixel_to_camera(150.0, 50.0, 2.0, &k100()).unwrap();
        assert_eq!(p, [2.0, 0.0, 2.0]);
    }

    #[test]
    fn bad_depth_rejected() {
        assert_eq!(pixel_to_camera(50.0, 50.0, 0.0, &k100()), Err(GeometryError::InvalidDepth(0.0)));
        assert!(pixel_to_camera(50.0, 50.0, -1.0, &k100()).is_err());
        assert!(pixel_to_camera(50.0, 50.0, f64::NAN, &k100()).is_err());
        assert!(pixel_to_camera(50.0, 50.0, f64::INFINITY, &k100()).is_err());
    }

    #[test]
    fn zero_pose_is_identity() {
        let t = pose_to_world_transform(&AgentPose::new(0.0, 0.0, 0.0), 0.0);
        assert_eq!(t, RigidTransform::identity());
    }

    #[test]
    fn pose_transform_quarter_turn() {
        let t = pose_to_world_transform(&AgentPose::new(1.0, 2.0, PI / 2.0), 0.3);
        let w = t.apply([1.0, 0.0, 0.0]);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 3.0).abs() < 1e-12);
        assert!((w[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn pose_transform_half_turn() {
        let t = pose_to_world_transform(&AgentPose::new(0.0, 0.0, PI), 0.0);
        let w = t.apply([1.0, 0.0, 0.0]);
        assert!((w[0] + 1.0).abs() < 1e-12);
        assert!(w[1].abs() < 1e-12);
    }

    #[test]
    fn camera_to_world_identity_and_translation() {
        let id = RigidTransform::identity();
        assert_eq!(camera_to_world([1.0, 2.0, 3.0], &id, &id), [1.0, 2.0, 3.0]);
        let lift = RigidTransform::translation([0.0, 0.0, 1.5]);
        assert_eq!(camera_to_world([0.0, 0.0, 0.0], &lift, &id), [0.0, 0.0, 1.5]);
    }

    #[test]
    fn voxel_discretization_examples() {
        let gp = GridParams::new(0.1, 1000).unwrap();
        assert_eq!(world_to_voxel([0.0, 0.0, 0.0], &gp).unwrap(), VoxelIndex::new(500, 500, 0));
        assert_eq!(
            world_to_voxel([1.23, -0.45, 0.78], &gp).unwrap(),
            VoxelIndex::new(512, 495, 7)
        );
        assert!(matches!(
            world_to_voxel([0.0, 0.0, -0.05], &gp),
            Err(GeometryError::OutOfGrid(..))
        ));
    }

    #[test]
    fn voxel_center_examples() {
        let gp = GridParams::new(0.1, 1000).unwrap();
        let c = voxel_to_world(&VoxelIndex::new(500, 500, 0), &gp).unwrap();
        for (a, b) in c.iter().zip([0.05, 0.05, 0.05]) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = voxel_to_world(&VoxelIndex::new(512, 495, 7), &gp).unwrap();
        for (a, b) in c.iter().zip([1.25, -0.45, 0.75]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(voxel_to_world(&VoxelIndex::new(1000, 0, 0), &gp).is_err());
        assert!(voxel_to_world(&VoxelIndex::new(0, 0, -1), &gp).is_err());
    }

    #[test]
    fn patch_center_examples() {
        assert_eq!(patch_center(0, 0, 14), (7.0, 7.0));
        assert_eq!(patch_center(2, 3, 14), (49.0, 35.0));
        assert_eq!(patch_center(0, 0, 2), (1.0, 1.0));
    }

    #[test]
    fn angle_normalization() {
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(2.0 * PI)).abs() < 1e-12);
        let p = AgentPose::new(0.0, 0.0, 7.0 * PI / 2.0);
        assert!((p.yaw + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_param_validation() {
        assert!(GridParams::new(0.0, 10).is_err());
        assert!(GridParams::new(0.1, 0).is_err());
        assert!(GridParams::new(0.1, 999).is_err());
        assert!(GridParams::new(0.1, 1000).is_ok());
    }
}
