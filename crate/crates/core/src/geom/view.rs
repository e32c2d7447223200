use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EquirectImage, Interp, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pinhole view of the sphere. `fov` spans both image axes, so non-square
/// outputs have anisotropic pixels rather than a narrower vertical field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub yaw: f64,
    pub pitch: f64,
    #[serde(default)]
    pub roll: f64,
    #[serde(default = "default_fov")]
    pub fov: f64,
    pub out_width: usize,
    pub out_height: usize,
}

fn default_fov() -> f64 {
    90.0
}

impl ViewSpec {
    pub fn new(yaw: f64, pitch: f64, fov: f64, out_width: usize, out_height: usize) -> Result<Self> {
        Self::with_roll(yaw, pitch, 0.0, fov, out_width, out_height)
    }

    pub fn with_roll(
        yaw: f64,
        pitch: f64,
        roll: f64,
        fov: f64,
        out_width: usize,
        out_height: usize,
    ) -> Result<Self> {
        let v = ViewSpec {
            yaw: yaw.rem_euclid(360.0),
            pitch,
            roll,
            fov,
            out_width,
            out_height,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn from_rotation(r: Mat3, fov: f64, out_width: usize, out_height: usize) -> Result<Self> {
        let (yaw, pitch, roll) = r.to_euler();
        Self::with_roll(yaw, pitch, roll, fov, out_width, out_height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return Err(Error::invalid(format!("field of view {}° must lie in (0, 180)", self.fov)));
        }
        if !(-90.0..=90.0).contains(&self.pitch) {
            return Err(Error::invalid(format!("pitch {}° outside [-90, 90]", self.pitch)));
        }
        if !(self.yaw.is_finite() && self.roll.is_finite()) {
            return Err(Error::invalid("yaw and roll must be finite"));
        }
        if self.out_width < 2 || self.out_height < 2 {
            return Err(Error::invalid(format!(
                "view size {}x{} below 2x2",
                self.out_width, self.out_height
            )));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3 {
        Mat3::from_euler(self.yaw.rem_euclid(360.0), self.pitch, self.roll)
    }

    pub fn camera(&self) -> Camera {
        let rot = self.rotation();
        Camera {
            rot,
            inv: rot.transpose(),
            tan_half: (self.fov.to_radians() / 2.0).tan(),
            width: self.out_width,
            height: self.out_height,
        }
    }
}

/// Precomputed ray geometry of a [`ViewSpec`].
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    rot: Mat3,
    inv: Mat3,
    tan_half: f64,
    width: usize,
    height: usize,
}

impl Camera {
    /// World direction through continuous pixel coordinates (centres at
    /// integers). Not normalized.
    pub fn pixel_to_direction(&self, px: f64, py: f64) -> Vec3 {
        let u = 2.0 * (px + 0.5) / self.width as f64 - 1.0;
        let v = 2.0 * (py + 0.5) / self.height as f64 - 1.0;
        self.rot * Vec3([u * self.tan_half, -v * self.tan_half, 1.0])
    }

    /// Continuous pixel coordinates of a world direction, or `None` outside
    /// the frustum (edges inclusive).
    pub fn direction_to_pixel(&self, d: Vec3) -> Option<(f64, f64)> {
        let c = self.inv * d;
        if c.z() <= 0.0 {
            return None;
        }
        let u = c.x() / (c.z() * self.tan_half);
        let v = -c.y() / (c.z() * self.tan_half);
        if u.abs() > 1.0 || v.abs() > 1.0 {
            return None;
        }
        Some((
            (u + 1.0) / 2.0 * self.width as f64 - 0.5,
            (v + 1.0) / 2.0 * self.height as f64 - 0.5,
        ))
    }
}

/// Rectilinear image of one view, planar `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    pub view: ViewSpec,
    pub channels: usize,
    data: Vec<f64>,
}

impl FaceImage {
    pub fn new(view: ViewSpec, channels: usize, data: Vec<f64>) -> Result<Self> {
        view.validate()?;
        if data.len() != channels * view.out_width * view.out_height {
            return Err(Error::shape(
                "face image",
                format!(
                    "{channels}x{}x{} needs {} values, got {}",
                    view.out_height,
                    view.out_width,
                    channels * view.out_width * view.out_height,
                    data.len()
                ),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("face image".into()));
        }
        Ok(FaceImage {
            view,
            channels,
            data,
        })
    }

    pub fn from_tensor(view: ViewSpec, t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        if (w, h) != (view.out_width, view.out_height) {
            return Err(Error::shape(
                "face image",
                format!("tensor is {w}x{h}, view is {}x{}", view.out_width, view.out_height),
            ));
        }
        Self::new(view, c, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.channels, self.height(), self.width()], self.data.clone())
            .expect("consistent dims")
    }

    pub fn width(&self) -> usize {
        self.view.out_width
    }

    pub fn height(&self) -> usize {
        self.view.out_height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.width() * self.height();
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Render `view` from `erp`.
pub fn extract_view(erp: &EquirectImage, view: &ViewSpec, interp: Interp) -> Result<FaceImage> {
    view.validate()?;
    let cam = view.camera();
    let (w, h, channels) = (view.out_width, view.out_height, erp.channels);
    let plane = w * h;
    let mut planar = vec![0.0; channels * plane];
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; channels * w];
            for x in 0..w {
                let d = cam.pixel_to_direction(x as f64, y as f64);
                let (lon, lat) = d.lonlat();
                for c in 0..channels {
                    row[c * w + x] = erp.sample(c, lon, lat, interp);
                }
            }
            row
        })
        .collect();
    for (y, row) in rows.iter().enumerate() {
        for c in 0..channels {
            planar[c * plane + y * w..c * plane + (y + 1) * w].copy_from_slice(&row[c * w..(c + 1) * w]);
        }
    }
    FaceImage::new(*view, channels, planar)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeFace {
    Front,
    Right,
    Back,
    Left,
    Up,
    Down,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::Front,
        CubeFace::Right,
        CubeFace::Back,
        CubeFace::Left,
        CubeFace::Up,
        CubeFace::Down,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CubeFace::Front => "front",
            CubeFace::Right => "right",
            CubeFace::Back => "back",
            CubeFace::Left => "left",
            CubeFace::Up => "up",
            CubeFace::Down => "down",
        }
    }

    /// Canonical `(yaw°, pitch°)` of the unrotated cube.
    pub fn angles(self) -> (f64, f64) {
        match self {
            CubeFace::Front => (0.0, 0.0),
            CubeFace::Right => (90.0, 0.0),
            CubeFace::Back => (180.0, 0.0),
            CubeFace::Left => (270.0, 0.0),
            CubeFace::Up => (0.0, 90.0),
            CubeFace::Down => (0.0, -90.0),
        }
    }

    /// Face view of a cube rotated by `(yaw_off, pitch_off)` degrees.
    pub fn view(self, rotation: (f64, f64), width: usize, height: usize) -> Result<ViewSpec> {
        let (yaw, pitch) = self.angles();
        let r = Mat3::yaw(rotation.0) * Mat3::pitch(rotation.1) * Mat3::from_euler(yaw, pitch, 0.0);
        ViewSpec::from_rotation(r, 90.0, width, height)
    }
}

/// The six 90° faces of a cube rotated by `(yaw_off, pitch_off)`, in
/// [`CubeFace::ALL`] order.
pub fn cube_faces(
    erp: &EquirectImage,
    rotation: (f64, f64),
    width: usize,
    height: usize,
    interp: Interp,
) -> Result<Vec<FaceImage>> {
    CubeFace::ALL
        .iter()
        .map(|f| extract_view(erp, &f.view(rotation, width, height)?, interp))
        .collect()
}

/// Viewport centres every `stride` degrees: longitudes `0, stride, … < 360`
/// by latitudes `−90, −90 + stride, … ≤ 90`.
pub fn dense_grid(stride: f64, fov: f64, width: usize, height: usize) -> Result<Vec<ViewSpec>> {
    if !(stride > 0.0 && stride <= 180.0) {
        return Err(Error::invalid(format!("viewport stride {stride}° must lie in (0, 180]")));
    }
    let n_lon = (360.0 / stride).ceil() as usize;
    let n_lat = (180.0 / stride + 1e-9).floor() as usize + 1;
    let mut views = Vec::with_capacity(n_lon * n_lat);
    for i in 0..n_lat {
        let lat = -90.0 + i as f64 * stride;
        for j in 0..n_lon {
            views.push(ViewSpec::new(j as f64 * stride, lat, fov, width, height)?);
        }
    }
    Ok(views)
}
