//! Saliency densities and fixation sets.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Continuous non-negative saliency values on a `width × height` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(
                "saliency map",
                format!("{width}x{height} needs {} values, got {}", width * height, values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!(
                "saliency values must be finite and non-negative, found {v}"
            )));
        }
        Ok(SaliencyMap {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// From a `[1, H, W]` or `[H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match t.shape() {
            [1, h, w] | [h, w] => (*h, *w),
            s => {
                return Err(Error::shape(
                    "saliency map",
                    format!("expected [1, H, W], got {s:?}"),
                ))
            }
        };
        Self::new(w, h, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.height, self.width], self.values.clone()).expect("consistent dims")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Copy scaled to sum 1.
    pub fn normalized_sum(&self) -> Result<SaliencyMap> {
        let s = self.sum();
        if s <= 0.0 {
            return Err(Error::invalid("saliency map is identically zero"));
        }
        Ok(self.map(|v| v / s))
    }

    /// Copy scaled so the maximum is 1; all-zero maps are returned unchanged.
    pub fn normalized_max(&self) -> SaliencyMap {
        let m = self.max();
        if m > 0.0 {
            self.map(|v| v / m)
        } else {
            self.clone()
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SaliencyMap {
        SaliencyMap {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Discrete gaze points in pixel coordinates; duplicates allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixationMap {
    pub width: usize,
    pub height: usize,
    points: Vec<(usize, usize)>,
}

impl FixationMap {
    pub fn new(width: usize, height: usize, points: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(x, y)) = points.iter().find(|&&(x, y)| x >= width || y >= height) {
            return Err(Error::invalid(format!(
                "fixation ({x}, {y}) outside {width}x{height}"
            )));
        }
        Ok(FixationMap {
            width,
            height,
            points,
        })
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Binary fixation map: `true` at every pixel with at least one fixation.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.width * self.height];
        for &(x, y) in &self.points {
            m[y * self.width + x] = true;
        }
        m
    }

    /// Flat indices of fixated pixels, ascending, without duplicates.
    pub fn fixated_indices(&self) -> Vec<usize> {
        self.mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_negative_or_out_of_bounds() {
        assert!(SaliencyMap::new(2, 1, vec![0.0, -1.0]).is_err());
        assert!(SaliencyMap::new(2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(SaliencyMap::new(2, 2, vec![0.0; 3]).is_err());
        assert!(FixationMap::new(4, 4, vec![(4, 0)]).is_err());
        assert!(FixationMap::new(4, 4, vec![(3, 3), (3, 3)]).is_ok());
    }

    #[test]
    fn duplicate_fixations_collapse_in_mask() {
        let f = FixationMap::new(3, 2, vec![(1, 1), (1, 1), (0, 0)]).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.fixated_indices(), vec![0, 4]);
    }
}
