//! Orthographic point-cloud rendering.
//!
//! Each camera sits on a sphere around the origin at (azimuth,
//! elevation), looks at the origin with world-up +z, and projects
//! orthographically. Points are splatted into their nearest pixel with
//! z-buffering; the surviving point's intensity encodes depth (nearer =
//! brighter) on [0.25, 1], with background exactly 0. No anti-aliasing:
//! renders are bit-deterministic, so transformed views are always
//! produced by rendering the transformed cloud through the same rig.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, normalize, Mat3, PointCloud};

/// A virtual orthographic camera looking at the origin.
#[derive(Debug, Clone)]
pub struct Camera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub ortho_half_extent: f64,
    /// (height, width) in pixels.
    pub resolution: (usize, usize),
}

impl Camera {
    pub fn new(
        azimuth_deg: f64,
        elevation_deg: f64,
        ortho_half_extent: f64,
        resolution: (usize, usize),
    ) -> Result<Self> {
        if resolution.0 < 8 || resolution.1 < 8 {
            return Err(Error::domain(format!(
                "camera resolution {}x{} below minimum 8x8",
                resolution.0, resolution.1
            )));
        }
        if !ortho_half_extent.is_finite() || ortho_half_extent <= 0.0 {
            return Err(Error::domain(format!(
                "ortho_half_extent must be positive, got {ortho_half_extent}"
            )));
        }
        Ok(Camera {
            azimuth_deg,
            elevation_deg,
            ortho_half_extent,
            resolution,
        })
    }
}

/// Orthonormal (right, up, forward) basis for a camera, as matrix rows.
///
/// The camera direction is `dir = (cos e cos a, cos e sin a, sin e)`;
/// forward = -dir (towards the origin), right = forward x world_up
/// normalized, up = right x forward. Elevation of exactly +-90 degrees
/// makes forward parallel to world-up and is rejected.
pub fn camera_basis(camera: &Camera) -> Result<Mat3> {
    let e = camera.elevation_deg;
    if !(e > -90.0 && e < 90.0) {
        return Err(Error::domain(format!(
            "camera elevation {e} degenerate: must lie strictly inside (-90, 90)"
        )));
    }
    let (sa, ca) = camera.azimuth_deg.to_radians().sin_cos();
    let (se, ce) = e.to_radians().sin_cos();
    let dir = [ce * ca, ce * sa, se];
    let forward = [-dir[0], -dir[1], -dir[2]];
    let right = normalize(cross(forward, [0.0, 0.0, 1.0]))
        .ok_or_else(|| Error::domain("camera forward parallel to world up"))?;
    let up = cross(right, forward);
    Ok(Mat3([right, up, forward]))
}

/// An ordered collection of cameras; view order everywhere follows it.
#[derive(Debug, Clone)]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::domain("camera rig needs at least one camera"));
        }
        Ok(CameraRig { cameras })
    }

    /// The standard ring: `m` cameras evenly spaced in azimuth at a fixed
    /// elevation. Defaults elsewhere use m = 12 (30 degree spacing) at
    /// elevation 30.
    pub fn ring(
        m: usize,
        elevation_deg: f64,
        ortho_half_extent: f64,
        resolution: (usize, usize),
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("camera rig needs at least one camera"));
        }
        let cameras = (0..m)
            .map(|i| {
                Camera::new(
                    360.0 * i as f64 / m as f64,
                    elevation_deg,
                    ortho_half_extent,
                    resolution,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        CameraRig::new(cameras)
    }

    pub fn default_ring(resolution: (usize, usize)) -> Result<Self> {
        CameraRig::ring(12, 30.0, 1.2, resolution)
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// A rendered view: row-major intensities in [0, 1], background 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ViewImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        ViewImage {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::domain(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if !pixels.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::domain("pixel values must be finite and in [0, 1]"));
        }
        Ok(ViewImage {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Rotates a square image by `k` quarter turns clockwise.
    pub fn rotated_quarter_cw(&self, k: usize) -> Result<ViewImage> {
        if self.height != self.width {
            return Err(Error::domain("quarter-turn rotation requires a square image"));
        }
        let n = self.height;
        let mut out = self.clone();
        for _ in 0..(k % 4) {
            let src = out.pixels.clone();
            for r in 0..n {
                for c in 0..n {
                    out.pixels[r * n + c] = src[(n - 1 - c) * n + r];
                }
            }
        }
        Ok(out)
    }
}

/// Intersection-over-union of the nonzero pixels of two same-shape
/// images. Two empty images have IoU 1.
pub fn occupancy_iou(a: &ViewImage, b: &ViewImage) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::domain("IoU requires images of identical shape"));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&pa, &pb) in a.pixels.iter().zip(&b.pixels) {
        let oa = pa > 0.0;
        let ob = pb > 0.0;
        if oa && ob {
            inter += 1;
        }
        if oa || ob {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Projects a cloud through one camera.
///
/// Points outside the orthographic box (half extent on all three camera
/// axes) are culled. Each survivor maps to its nearest pixel; the
/// nearest point per pixel wins and shades it by depth.
pub fn project(cloud: &PointCloud, camera: &Camera) -> Result<ViewImage> {
    let basis = camera_basis(camera)?;
    let (h, w) = camera.resolution;
    let ext = camera.ortho_half_extent;
    let mut image = ViewImage::zeros(h, w);
    let mut depth = vec![f64::INFINITY; h * w];
    let right = basis.0[0];
    let up = basis.0[1];
    let forward = basis.0[2];
    for &p in cloud.points() {
        let u = dot(p, right);
        let v = dot(p, up);
        let d = dot(p, forward);
        if u.abs() > ext || v.abs() > ext || d.abs() > ext {
            continue;
        }
        let col = ((u / ext + 1.0) / 2.0 * (w - 1) as f64).round() as usize;
        let row = ((1.0 - (v / ext + 1.0) / 2.0) * (h - 1) as f64).round() as usize;
        let idx = row * w + col;
        if d < depth[idx] {
            depth[idx] = d;
            let depth_norm = (d + ext) / (2.0 * ext);
            image.pixels[idx] = 0.25 + 0.75 * (1.0 - depth_norm);
        }
    }
    Ok(image)
}

/// An ordered set of views, one per rig camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    views: Vec<ViewImage>,
}

impl ViewSet {
    pub fn new(views: Vec<ViewImage>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::domain("view set needs at least one view"));
        }
        Ok(ViewSet { views })
    }

    pub fn views(&self) -> &[ViewImage] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Renders one view per camera, in rig order.
pub fn render_views(cloud: &PointCloud, rig: &CameraRig) -> Result<ViewSet> {
    let views = rig
        .cameras()
        .iter()
        .map(|cam| project(cloud, cam))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet { views })
}

/// Serializes an image as binary PGM (P5), one byte per pixel,
/// `round(value * 255)`.
pub fn pgm_bytes(image: &ViewImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn write_pgm(image: &ViewImage, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(&pgm_bytes(image))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_rotation, normalize_cloud, Rotation3, Vec3};
    use crate::rng::SplitMix64;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cam(azimuth: f64, elevation: f64, res: usize) -> Camera {
        Camera::new(azimuth, elevation, 1.2, (res, res)).unwrap()
    }

    #[test]
    fn basis_faces_origin_at_azimuth_zero() {
        let basis = camera_basis(&cam(0.0, 0.0, 16)).unwrap();
        let forward = basis.0[2];
        assert_abs_diff_eq!(forward[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(forward[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(forward[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn basis_faces_origin_at_azimuth_180() {
        let basis = camera_basis(&cam(180.0, 0.0, 16)).unwrap();
        let forward = basis.0[2];
        assert_abs_diff_eq!(forward[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(forward[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(forward[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn basis_rejects_poles() {
        assert!(camera_basis(&cam(0.0, 90.0, 16)).is_err());
        assert!(camera_basis(&cam(45.0, -90.0, 16)).is_err());
    }

    proptest! {
        #[test]
        fn basis_is_orthonormal(az in 0.0f64..360.0, el in -89.0f64..89.0) {
            let basis = camera_basis(&cam(az, el, 16)).unwrap();
            prop_assert!(basis.orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn origin_point_hits_image_center() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        for azimuth in [0.0, 30.0, 200.0] {
            let image = project(&cloud, &cam(azimuth, 30.0, 33)).unwrap();
            let nonzero: Vec<usize> = image
                .pixels()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(nonzero, vec![16 * 33 + 16]);
        }
    }

    #[test]
    fn culled_points_leave_zero_image() {
        let cloud = PointCloud::new(vec![[5.0, 5.0, 5.0], [-3.0, 0.0, 0.0]]).unwrap();
        let image = project(&cloud, &cam(40.0, 20.0, 16)).unwrap();
        assert!(image.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nearer_point_wins_pixel() {
        // Camera at azimuth 180, elevation 0: forward = +x, so smaller x
        // is nearer. Both points project to the image center.
        let near = [-0.6, 0.0, 0.0];
        let far = [0.6, 0.0, 0.0];
        let camera = cam(180.0, 0.0, 33);
        let ext = 1.2;
        let shade = |x: f64| 0.25 + 0.75 * (1.0 - (x + ext) / (2.0 * ext));
        for order in [vec![near, far], vec![far, near]] {
            let image = project(&PointCloud::new(order).unwrap(), &camera).unwrap();
            assert_abs_diff_eq!(image.get(16, 16), shade(-0.6), epsilon = 1e-12);
            assert!(image.get(16, 16) > shade(0.6));
        }
    }

    #[test]
    fn default_rig_renders_twelve_views() {
        let rig = CameraRig::default_ring((16, 16)).unwrap();
        let cloud = PointCloud::new(vec![[0.1, 0.2, 0.3]]).unwrap();
        let views = render_views(&cloud, &rig).unwrap();
        assert_eq!(views.len(), 12);
    }

    #[test]
    fn rendering_is_deterministic_and_identity_equivariant() {
        let mut rng = SplitMix64::new(99);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
            .collect();
        let cloud = normalize_cloud(pts).unwrap();
        let rig = CameraRig::default_ring((32, 32)).unwrap();
        let a = render_views(&cloud, &rig).unwrap();
        let b = render_views(&cloud, &rig).unwrap();
        assert_eq!(a, b);
        let rotated = apply_rotation(&cloud, &Rotation3::identity());
        let c = render_views(&rotated, &rig).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let mut rng = SplitMix64::new(5);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
            .collect();
        let cloud = normalize_cloud(pts).unwrap();
        let image = project(&cloud, &cam(75.0, 30.0, 64)).unwrap();
        assert!(image.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn optical_axis_rotation_matches_image_rotation() {
        // Camera at azimuth 180, elevation 0 has forward = +x, so a cloud
        // rotation about +x by 90k degrees must match k clockwise quarter
        // turns of the rendered image.
        let mut rng = SplitMix64::new(314);
        let pts: Vec<Vec3> = (0..600)
            .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
            .collect();
        let cloud = normalize_cloud(pts).unwrap();
        let camera = cam(180.0, 0.0, 64);
        let base = project(&cloud, &camera).unwrap();
        for (k, theta) in [(1usize, 90.0), (2, 180.0), (3, -90.0)] {
            let t = Rotation3::from_angles([theta, 0.0, 0.0]).unwrap();
            let rendered = project(&apply_rotation(&cloud, &t), &camera).unwrap();
            let turned = base.rotated_quarter_cw(k).unwrap();
            let iou = occupancy_iou(&rendered, &turned).unwrap();
            assert!(iou >= 0.9, "k={k} IoU={iou}");
        }
    }

    #[test]
    fn pgm_bytes_layout() {
        let mut image = ViewImage::zeros(8, 8);
        image.pixels[0] = 1.0;
        image.pixels[9] = 0.5;
        let bytes = pgm_bytes(&image);
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
        let data = &bytes[b"P5\n8 8\n255\n".len()..];
        assert_eq!(data.len(), 64);
        assert_eq!(data[0], 255);
        assert_eq!(data[9], 128);
        assert_eq!(data[1], 0);
    }
}
