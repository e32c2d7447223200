use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{backproject_accumulate, dense_grid, extract_view, AccumulatorMap, EquirectImage, FaceImage, Interp, ViewSpec};
use crate::maps::{FixationMap, SaliencyMap};
use crate::metrics::{auc_judd, cc, gaussian_density, kl_div, nss};
use crate::model::Generator;
use crate::tensor::Tensor;

/// Produces per-stage saliency for one viewport.
pub trait ViewPredictor: Sync {
    fn stages(&self) -> usize;
    /// `face` is the extracted RGB viewport; returns one `[1, H, W]` map per
    /// stage.
    fn predict(&self, face: &FaceImage) -> Result<Vec<Tensor>>;
}

pub struct GeneratorPredictor<'a> {
    pub generator: &'a Generator,
    pub stages: usize,
}

impl ViewPredictor for GeneratorPredictor<'_> {
    fn stages(&self) -> usize {
        self.stages
    }

    fn predict(&self, face: &FaceImage) -> Result<Vec<Tensor>> {
        self.generator.predict(&face.to_tensor(), self.stages)
    }
}

/// Ignores the image and returns a known panorama seen through the same
/// viewport, for every stage. Used to check the pipeline end to end.
pub struct BypassPredictor {
    pub truth: EquirectImage,
    pub stages: usize,
}

impl BypassPredictor {
    pub fn new(truth: &SaliencyMap, stages: usize) -> Result<Self> {
        Ok(BypassPredictor {
            truth: EquirectImage::new(truth.width, 1, truth.values().to_vec())?,
            stages,
        })
    }
}

impl ViewPredictor for BypassPredictor {
    fn stages(&self) -> usize {
        self.stages
    }

    fn predict(&self, face: &FaceImage) -> Result<Vec<Tensor>> {
        let t = extract_view(&self.truth, &face.view, Interp::Bilinear)?.to_tensor();
        Ok(vec![t; self.stages])
    }
}

/// Dense viewport sampling used to rebuild a panorama from predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ViewportGrid {
    pub stride: f64,
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

impl ViewportGrid {
    pub fn views(&self) -> Result<Vec<ViewSpec>> {
        dense_grid(self.stride, self.fov, self.width, self.height)
    }
}

/// Run `predictor` on every grid viewport of `image` and assemble each stage
/// into an equirectangular map of the image's size, scaled to a maximum of 1.
pub fn predict_panorama(predictor: &dyn ViewPredictor, image: &EquirectImage, grid: &ViewportGrid) -> Result<Vec<SaliencyMap>> {
    let views = grid.views()?;
    let (w, h) = (image.width, image.height);
    let stages = predictor.stages();
    if stages == 0 {
        return Err(Error::invalid("predictor has no stages"));
    }
    let fresh = || vec![AccumulatorMap::new(w, h); stages];
    let accs = views
        .par_iter()
        .try_fold(fresh, |accs, view| {
            let face = extract_view(image, view, Interp::Bilinear)?;
            let outs = predictor.predict(&face)?;
            if outs.len() != stages {
                return Err(Error::shape("predict_panorama", format!("{} stage outputs, expected {stages}", outs.len())));
            }
            accs.into_iter()
                .zip(outs)
                .map(|(acc, t)| backproject_accumulate(acc, &FaceImage::from_tensor(*view, &t)?))
                .collect()
        })
        .try_reduce(fresh, |a, b| a.into_iter().zip(&b).map(|(x, y)| x.merge(y)).collect())?;
    accs.iter().map(|a| Ok(a.finalize()?.normalized_max())).collect()
}

/// Ground-truth density on the equirectangular grid for a blur given in
/// degrees.
pub fn erp_ground_truth(fixations: &FixationMap, sigma_deg: f64) -> Result<SaliencyMap> {
    gaussian_density(fixations, sigma_deg * fixations.width as f64 / 360.0)
}

#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub image: EquirectImage,
    pub gt: SaliencyMap,
    pub fixations: FixationMap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Scores {
    #[serde(rename = "KL")]
    pub kl: f64,
    #[serde(rename = "CC")]
    pub cc: f64,
    #[serde(rename = "NSS")]
    pub nss: f64,
    #[serde(rename = "AUC")]
    pub auc: f64,
}

impl Scores {
    pub fn compute(pred: &SaliencyMap, gt: &SaliencyMap, fix: &FixationMap) -> Result<Self> {
        Ok(Scores {
            kl: kl_div(gt, pred)?,
            cc: cc(gt, pred)?,
            nss: nss(pred, fix)?,
            auc: auc_judd(pred, fix)?,
        })
    }

    pub fn mean(all: &[Scores]) -> Scores {
        let n = all.len().max(1) as f64;
        let mut m = Scores::default();
        for s in all {
            m.kl += s.kl / n;
            m.cc += s.cc / n;
            m.nss += s.nss / n;
            m.auc += s.auc / n;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScores {
    pub id: String,
    /// One entry per stage, first stage first.
    pub stages: Vec<Scores>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageScores>,
    /// Mean over images for each stage.
    pub stage_means: Vec<Scores>,
}

impl EvalReport {
    pub fn final_means(&self) -> Scores {
        *self.stage_means.last().expect("at least one stage")
    }

    /// Whether each successive stage is at least as good as the previous one
    /// on every metric (KL lower, the rest higher).
    pub fn is_monotone(&self) -> bool {
        self.stage_means.windows(2).all(|w| {
            w[1].kl <= w[0].kl && w[1].cc >= w[0].cc && w[1].nss >= w[0].nss && w[1].auc >= w[0].auc
        })
    }

    /// Table of per-stage means with the change from the previous stage.
    pub fn monotonicity_report(&self) -> String {
        let mut out = String::from("stage      KL      CC     NSS     AUC   improved\n");
        for (s, m) in self.stage_means.iter().enumerate() {
            let verdict = match s.checked_sub(1).map(|p| &self.stage_means[p]) {
                None => "-".to_string(),
                Some(p) => {
                    let flags = [m.kl <= p.kl, m.cc >= p.cc, m.nss >= p.nss, m.auc >= p.auc];
                    format!("{}/4", flags.iter().filter(|&&f| f).count())
                }
            };
            let _ = writeln!(out, "{:>5} {:>7.4} {:>7.4} {:>7.4} {:>7.4}   {verdict}", s + 1, m.kl, m.cc, m.nss, m.auc);
        }
        let _ = writeln!(out, "monotone: {}", if self.is_monotone() { "yes" } else { "no" });
        out
    }
}

/// Full panorama pipeline for each item: viewports, per-stage prediction,
/// assembly, then metrics against the equirectangular ground truth.
/// `predictor` builds the predictor for one item.
pub fn evaluate_with<P: ViewPredictor>(
    items: &[EvalItem],
    grid: &ViewportGrid,
    predictor: impl Fn(&EvalItem) -> Result<P>,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut images = Vec::with_capacity(items.len());
    for item in items {
        let p = predictor(item)?;
        let maps = predict_panorama(&p, &item.image, grid)?;
        let stages = maps
            .iter()
            .map(|m| Scores::compute(m, &item.gt, &item.fixations))
            .collect::<Result<Vec<_>>>()?;
        images.push(ImageScores {
            id: item.id.clone(),
            stages,
        });
    }
    let n_stages = images[0].stages.len();
    let stage_means = (0..n_stages)
        .map(|s| Scores::mean(&images.iter().map(|i| i.stages[s]).collect::<Vec<_>>()))
        .collect();
    Ok(EvalReport { images, stage_means })
}

pub fn evaluate(generator: &Generator, stages: usize, items: &[EvalItem], grid: &ViewportGrid) -> Result<EvalReport> {
    evaluate_with(items, grid, |_| Ok(GeneratorPredictor { generator, stages }))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::GeneratorConfig;
    use crate::train::data::synthetic_odi;

    fn item(seed: u64) -> EvalItem {
        let odi = synthetic_odi("x", 64, 60, seed).unwrap();
        EvalItem {
            id: odi.id,
            gt: erp_ground_truth(&odi.fixations, 6.0).unwrap(),
            image: odi.image,
            fixations: odi.fixations,
        }
    }

    const GRID: ViewportGrid = ViewportGrid {
        stride: 30.0,
        fov: 90.0,
        width: 16,
        height: 16,
    };

    #[test]
    fn bypass_recovers_ground_truth() {
        let it = item(1);
        let grid = ViewportGrid {
            width: 48,
            height: 48,
            ..GRID
        };
        let report = evaluate_with(std::slice::from_ref(&it), &grid, |i| BypassPredictor::new(&i.gt, 2)).unwrap();
        let m = report.final_means();
        assert!(m.kl < 0.05, "{m:?}");
        assert!(m.cc > 0.98, "{m:?}");
        // A blurred map also ranks some unfixated pixels above fixated ones, so
        // its AUC is that of the ground truth itself rather than 1.
        let direct = auc_judd(&it.gt, &it.fixations).unwrap();
        assert!((m.auc - direct).abs() < 0.02, "{} vs {direct}", m.auc);
        assert_eq!(report.stage_means.len(), 2);
        assert!(report.is_monotone());
    }

    #[test]
    fn generator_pipeline_runs() {
        let gen = Generator::init(GeneratorConfig { channels: 4, se_reduction: 2 }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let report = evaluate(&gen, 3, &[item(2), item(3)], &GRID).unwrap();
        assert_eq!(report.images.len(), 2);
        assert_eq!(report.stage_means.len(), 3);
        for s in &report.stage_means {
            assert!(s.kl.is_finite() && s.cc.abs() <= 1.0 && s.auc >= 0.0 && s.auc <= 1.0);
        }
        let table = report.monotonicity_report();
        assert_eq!(table.lines().count(), 5);
    }

    #[test]
    fn coarse_grid_leaves_holes() {
        let it = item(4);
        let grid = ViewportGrid {
            stride: 180.0,
            fov: 30.0,
            ..GRID
        };
        let err = evaluate_with(&[it], &grid, |i| BypassPredictor::new(&i.gt, 1));
        assert!(matches!(err, Err(Error::IncompleteCoverage { .. })));
    }
}
