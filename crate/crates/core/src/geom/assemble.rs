use rayon::prelude::*;

use super::{pixel_lonlat, sample_plane, FaceImage, Interp, Vec3};
use crate::error::{Error, Result};
use crate::maps::SaliencyMap;

/// Running per-pixel sum and count on an equirectangular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumulatorMap {
    pub width: usize,
    pub height: usize,
    sum: Vec<f64>,
    count: Vec<f64>,
}

impl AccumulatorMap {
    pub fn new(width: usize, height: usize) -> Self {
        AccumulatorMap {
            width,
            height,
            sum: vec![0.0; width * height],
            count: vec![0.0; width * height],
        }
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    pub fn count(&self) -> &[f64] {
        &self.count
    }

    pub fn merge(mut self, other: &AccumulatorMap) -> Result<Self> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::shape(
                "accumulator merge",
                format!("{}x{} vs {}x{}", self.width, self.height, other.width, other.height),
            ));
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += b;
        }
        Ok(self)
    }

    /// Fraction of the sphere's solid angle covered by pixels with count 0.
    pub fn uncovered_fraction(&self) -> f64 {
        let mut omega = 0.0;
        for y in 0..self.height {
            let top = (90.0 - y as f64 / self.height as f64 * 180.0).to_radians();
            let bottom = (90.0 - (y + 1) as f64 / self.height as f64 * 180.0).to_radians();
            let pixel = 2.0 * std::f64::consts::PI / self.width as f64 * (top.sin() - bottom.sin());
            let missing = self.count[y * self.width..(y + 1) * self.width]
                .iter()
                .filter(|&&c| c == 0.0)
                .count();
            omega += missing as f64 * pixel;
        }
        omega / (4.0 * std::f64::consts::PI)
    }

    /// Per-pixel mean. Fails if any pixel was never covered.
    pub fn finalize(&self) -> Result<SaliencyMap> {
        let uncovered = self.count.iter().filter(|&&c| c == 0.0).count();
        if uncovered > 0 {
            return Err(Error::IncompleteCoverage {
                uncovered_pixels: uncovered,
                solid_angle_fraction: self.uncovered_fraction(),
            });
        }
        let mean = self.sum.iter().zip(&self.count).map(|(s, c)| s / c).collect();
        SaliencyMap::new(self.width, self.height, mean)
    }
}

/// Add `face` into every accumulator pixel whose direction lies inside the
/// face's frustum (edges inclusive), sampling the face bilinearly.
pub fn backproject_accumulate(mut acc: AccumulatorMap, face: &FaceImage) -> Result<AccumulatorMap> {
    if face.channels != 1 {
        return Err(Error::invalid(format!(
            "back-projection needs a single-channel face, got {} channels",
            face.channels
        )));
    }
    let cam = face.view.camera();
    let (w, h) = (acc.width, acc.height);
    let (fw, fh) = (face.width(), face.height());
    let plane = face.channel(0);
    acc.sum
        .par_chunks_mut(w)
        .zip(acc.count.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (sum, count))| {
            for x in 0..w {
                let (lon, lat) = pixel_lonlat(x as f64, y as f64, w, h);
                if let Some((px, py)) = cam.direction_to_pixel(Vec3::from_lonlat(lon, lat)) {
                    sum[x] += sample_plane(plane, fw, fh, px, py, Interp::Bilinear, false);
                    count[x] += 1.0;
                }
            }
        });
    Ok(acc)
}

/// Average back-projected viewports into a `width × height` map scaled to a
/// maximum of 1.
pub fn dense_assemble(faces: &[FaceImage], width: usize, height: usize) -> Result<SaliencyMap> {
    if faces.is_empty() {
        return Err(Error::invalid("no viewports to assemble"));
    }
    let acc = faces
        .par_iter()
        .try_fold(
            || AccumulatorMap::new(width, height),
            backproject_accumulate,
        )
        .try_reduce(|| AccumulatorMap::new(width, height), |a, b| a.merge(&b))?;
    Ok(acc.finalize()?.normalized_max())
}
