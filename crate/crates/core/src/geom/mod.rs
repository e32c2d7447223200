//! Spherical resampling between equirectangular panoramas and rectilinear
//! views.
//!
//! World frame: `+z` is longitude 0 on the equator, `+x` is longitude +90°,
//! `+y` is the north pole. A view looks down its camera `+z` axis with `+x`
//! to the right and `+y` up; image rows grow downward.
//!
//! A view's orientation is `R = Ry(yaw) · Rx(pitch) · Rz(roll)`: yaw about the
//! vertical axis, then pitch about the yawed camera's horizontal axis, then roll
//! about its optical axis.

mod assemble;
mod rotation;
mod view;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assemble::{backproject_accumulate, dense_assemble, AccumulatorMap};
pub use rotation::{Mat3, Vec3};
pub use view::{cube_faces, dense_grid, extract_view, CubeFace, FaceImage, ViewSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    #[default]
    Bilinear,
}

/// Equirectangular panorama, planar `[channels, height, width]` storage.
#[derive(Clone, Debug, PartialEq)]
pub struct EquirectImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl EquirectImage {
    pub fn new(width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width < 2 || !width.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "equirectangular width {width} must be even (2:1 aspect)"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("{channels} channels; expected 1 or 3")));
        }
        let height = width / 2;
        if data.len() != channels * width * height {
            return Err(Error::shape(
                "equirect",
                format!("{channels}x{height}x{width} needs {} values, got {}", channels * width * height, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("equirectangular image".into()));
        }
        Ok(EquirectImage {
            width,
            height,
            channels,
            data,
        })
    }

    /// Evaluate `f(longitude°, latitude°)` at every pixel centre.
    pub fn from_fn(width: usize, channels: usize, f: impl Fn(f64, f64) -> Vec<f64>) -> Result<Self> {
        let height = width / 2;
        let mut data = vec![0.0; channels * width * height];
        for y in 0..height {
            for x in 0..width {
                let (lon, lat) = pixel_lonlat(x as f64, y as f64, width, height);
                let v = f(lon, lat);
                for c in 0..channels {
                    data[(c * height + y) * width + x] = v[c];
                }
            }
        }
        Self::new(width, channels, data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Centre of pixel `(x, y)` in degrees.
    pub fn lonlat(&self, x: usize, y: usize) -> (f64, f64) {
        pixel_lonlat(x as f64, y as f64, self.width, self.height)
    }

    /// Sample channel `c` at a direction given in degrees. Longitude wraps;
    /// latitude clamps at the poles.
    pub fn sample(&self, c: usize, lon: f64, lat: f64, interp: Interp) -> f64 {
        let (fx, fy) = lonlat_to_pixel(lon, lat, self.width, self.height);
        let plane = self.channel(c);
        sample_plane(plane, self.width, self.height, fx, fy, interp, true)
    }

    pub fn sample_dir(&self, c: usize, d: Vec3, interp: Interp) -> f64 {
        let (lon, lat) = d.lonlat();
        self.sample(c, lon, lat, interp)
    }
}

/// Pixel centre `(x, y)` → `(longitude°, latitude°)`.
pub fn pixel_lonlat(x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
    let lon = (x + 0.5) / width as f64 * 360.0 - 180.0;
    let lat = 90.0 - (y + 0.5) / height as f64 * 180.0;
    (lon, lat)
}

/// Inverse of [`pixel_lonlat`] on continuous pixel coordinates.
pub fn lonlat_to_pixel(lon: f64, lat: f64, width: usize, height: usize) -> (f64, f64) {
    let fx = (lon + 180.0) / 360.0 * width as f64 - 0.5;
    let fy = (90.0 - lat) / 180.0 * height as f64 - 0.5;
    (fx, fy)
}

/// Sample a single plane at continuous pixel coordinates (pixel centres at
/// integers). With `wrap_x` the horizontal axis is periodic; otherwise both
/// axes clamp to the border.
pub(crate) fn sample_plane(
    plane: &[f64],
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    interp: Interp,
    wrap_x: bool,
) -> f64 {
    let (w, h) = (width as isize, height as isize);
    let col = |x: isize| -> usize {
        if wrap_x {
            x.rem_euclid(w) as usize
        } else {
            x.clamp(0, w - 1) as usize
        }
    };
    let row = |y: isize| -> usize { y.clamp(0, h - 1) as usize };
    match interp {
        Interp::Nearest => {
            let x = (fx + 0.5).floor() as isize;
            let y = (fy + 0.5).floor() as isize;
            plane[row(y) * width + col(x)]
        }
        Interp::Bilinear => {
            let x0 = fx.floor();
            let y0 = fy.floor();
            let tx = fx - x0;
            let ty = fy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let (c0, c1) = (col(x0), col(x0 + 1));
            let (r0, r1) = (row(y0), row(y0 + 1));
            let top = plane[r0 * width + c0] * (1.0 - tx) + plane[r0 * width + c1] * tx;
            let bottom = plane[r1 * width + c0] * (1.0 - tx) + plane[r1 * width + c1] * tx;
            top * (1.0 - ty) + bottom * ty
        }
    }
}
