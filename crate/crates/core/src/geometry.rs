//! Cameras, ray/cone generation and depth-based forward warping.
//!
//! Convention: right-handed, camera looks down `-z`, `y` up. A camera-space
//! direction for continuous pixel coordinates `(u, v)` is
//! `((u - cx)/fx, -(v - cy)/fy, -1)`, and the stored pose maps camera
//! coordinates to world coordinates (`x_world = R x_cam + t`). Depth values
//! are Euclidean distances along the unit ray, not z-depths.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{CoreError, Result};
use crate::img::Image;

pub const ROTATION_TOL: f64 = 1e-6;

/// Pinhole camera: intrinsics plus a world-from-camera rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    k: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(
        k: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(CoreError::InvalidCamera("K must be upper-triangular".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(CoreError::InvalidCamera("focal lengths must be positive".into()));
        }
        if k[(2, 2)] != 1.0 {
            return Err(CoreError::InvalidCamera("K[2,2] must be 1".into()));
        }
        let rtr = rotation.transpose() * rotation;
        if (rtr - Matrix3::identity()).norm() > ROTATION_TOL {
            return Err(CoreError::InvalidCamera("rotation is not orthonormal".into()));
        }
        if !(near < far) || near <= 0.0 {
            return Err(CoreError::InvalidCamera(format!(
                "need 0 < near < far, got near = {near}, far = {far}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(CoreError::InvalidCamera("width and height must be >= 1".into()));
        }
        Ok(Self { k, rotation, translation, width, height, near, far })
    }

    pub fn from_intrinsics(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::new(k, rotation, translation, width, height, near, far)
    }

    #[inline]
    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }
    #[inline]
    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }
    #[inline]
    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }
    #[inline]
    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }
    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.k
    }
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// World-space optical axis (the `-z` camera axis).
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation * Vector3::new(0.0, 0.0, -1.0)
    }

    /// World point of a camera-space point.
    #[inline]
    pub fn cam_to_world(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * q + self.translation
    }

    /// Camera-space point of a world point.
    #[inline]
    pub fn world_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Project a world point. Returns continuous pixel coordinates plus
    /// the Euclidean distance from the camera center, or `None` when the
    /// point is not in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let q = self.world_to_cam(p);
        if q.z >= 0.0 {
            return None;
        }
        let inv_depth = -1.0 / q.z;
        let u = self.cx() + self.fx() * q.x * inv_depth;
        let v = self.cy() - self.fy() * q.y * inv_depth;
        Some((u, v, q.norm()))
    }

    /// Whether continuous pixel coordinates fall inside the image.
    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Returns a camera with image plane and intrinsics uniformly rescaled.
    pub fn rescaled(&self, s: f64) -> Result<Self> {
        Self::from_intrinsics(
            self.fx() * s,
            self.fy() * s,
            self.cx() * s,
            self.cy() * s,
            self.rotation,
            self.translation,
            (self.width as f64 * s).round().max(1.0) as usize,
            (self.height as f64 * s).round().max(1.0) as usize,
            self.near,
            self.far,
        )
    }
}

/// A pixel ray: unit direction from the camera center plus the base
/// radius of the pixel's cone at unit distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub pixel_radius: f64,
}

/// Cast the ray through continuous pixel coordinates `(u, v)`.
///
/// The cone radius at unit distance is one pixel width over sqrt(12),
/// matching the variance of a unit-width box footprint.
pub fn generate_ray(camera: &Camera, u: f64, v: f64) -> Result<Ray> {
    if !camera.contains(u, v) {
        return Err(CoreError::PixelOutOfBounds {
            u,
            v,
            width: camera.width,
            height: camera.height,
        });
    }
    let dir_cam = Vector3::new(
        (u - camera.cx()) / camera.fx(),
        -(v - camera.cy()) / camera.fy(),
        -1.0,
    );
    let direction = (camera.rotation() * dir_cam).normalize();
    Ok(Ray {
        origin: camera.center(),
        direction,
        pixel_radius: 1.0 / (camera.fx() * 12f64.sqrt()),
    })
}

/// Per-pixel depth along the unit ray, with a validity flag for pixels
/// where no surface was resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, near: f64, far: f64) -> Self {
        Self {
            width,
            height,
            near,
            far,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.depth[i])
    }
}

/// Result of warping one source view into a target camera.
#[derive(Debug, Clone)]
pub struct WarpedView {
    pub color: Image,
    pub valid: Vec<bool>,
    pub source_view: usize,
    pub target: Camera,
}

/// The warp chain for one pixel: backproject through the source camera at
/// the given ray depth, then project into the target camera. Returns
/// continuous target pixel coordinates and the distance from the target
/// camera center, or `None` when the point falls behind the target.
pub fn warp_pixel(
    source: &Camera,
    target: &Camera,
    u: f64,
    v: f64,
    depth: f64,
) -> Option<(f64, f64, f64)> {
    let dir_cam = Vector3::new(
        (u - source.cx()) / source.fx(),
        -(v - source.cy()) / source.fy(),
        -1.0,
    );
    let dir_world = (source.rotation() * dir_cam).normalize();
    let p = source.center() + depth * dir_world;
    target.project(&p)
}

/// Accumulates nearest-depth-wins splats from one or more source views.
#[derive(Debug, Clone)]
pub struct SplatTarget {
    pub camera: Camera,
    pub color: Image,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    pub source: Vec<usize>,
}

impl SplatTarget {
    pub fn new(camera: Camera) -> Self {
        let (w, h) = (camera.width, camera.height);
        Self {
            camera,
            color: Image::new(w, h),
            depth: vec![f64::INFINITY; w * h],
            valid: vec![false; w * h],
            source: vec![usize::MAX; w * h],
        }
    }

    /// Splat every valid source pixel into the target with a z-buffer.
    /// Collisions resolve to the candidate nearest the target camera.
    pub fn splat(
        &mut self,
        source_image: &Image,
        source_depth: &DepthMap,
        source_cam: &Camera,
        source_view: usize,
    ) -> Result<()> {
        if source_depth.width != source_image.width || source_depth.height != source_image.height {
            return Err(CoreError::Domain(
                "source depth resolution does not match source image".into(),
            ));
        }
        if source_image.width != source_cam.width || source_image.height != source_cam.height {
            return Err(CoreError::Domain(
                "source image resolution does not match source camera".into(),
            ));
        }
        for y in 0..source_image.height {
            for x in 0..source_image.width {
                let Some(d) = source_depth.at(x, y) else { continue };
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                let Some((tu, tv, tdist)) = warp_pixel(source_cam, &self.camera, u, v, d) else {
                    continue;
                };
                if !self.camera.contains(tu, tv) {
                    continue;
                }
                let (tx, ty) = (tu.floor() as usize, tv.floor() as usize);
                let i = ty * self.camera.width + tx;
                if tdist < self.depth[i] {
                    self.depth[i] = tdist;
                    self.valid[i] = true;
                    self.source[i] = source_view;
                    self.color.pixels[i] = source_image.pixels[y * source_image.width + x];
                }
            }
        }
        Ok(())
    }
}

/// Forward-warp a single source view to the target camera.
///
/// Every valid source pixel is backprojected at its depth and splatted
/// to the nearest target pixel; depth collisions keep the nearest
/// candidate and unhit target pixels stay masked invalid.
pub fn forward_warp(
    source_image: &Image,
    source_depth: &DepthMap,
    source_cam: &Camera,
    target_cam: &Camera,
) -> Result<WarpedView> {
    let mut buf = SplatTarget::new(target_cam.clone());
    buf.splat(source_image, source_depth, source_cam, 0)?;
    Ok(WarpedView {
        color: buf.color,
        valid: buf.valid,
        source_view: 0,
        target: target_cam.clone(),
    })
}

/// Build a world-from-camera rotation for a camera at `eye` looking at
/// `target` with the given world up hint.
pub fn look_at_rotation(
    eye: &Vector3<f64>,
    target: &Vector3<f64>,
    up: &Vector3<f64>,
) -> Matrix3<f64> {
    let f = (target - eye).normalize();
    let mut s = f.cross(up);
    if s.norm() < 1e-9 {
        // Forward parallel to up; pick any perpendicular axis.
        let alt = if f.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        s = f.cross(&alt);
    }
    let s = s.normalize();
    let u = s.cross(&f);
    Matrix3::from_columns(&[s, u, -f])
}

/// Geodesic interpolation between two rigid poses: quaternion slerp on the
/// rotation, lerp on the translation.
pub fn interpolate_pose(
    r0: &Matrix3<f64>,
    t0: &Vector3<f64>,
    r1: &Matrix3<f64>,
    t1: &Vector3<f64>,
    t: f64,
) -> (Matrix3<f64>, Vector3<f64>) {
    let q0 = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r0));
    let q1 = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r1));
    let q = q0.slerp(&q1, t);
    (q.to_rotation_matrix().into_inner(), t0.lerp(t1, t))
}
