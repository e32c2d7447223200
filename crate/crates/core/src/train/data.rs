use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{extract_view, lonlat_to_pixel, pixel_lonlat, CubeFace, EquirectImage, Interp, Vec3, ViewSpec};
use crate::maps::{FixationMap, SaliencyMap};
use crate::metrics::gaussian_density;
use crate::tensor::Tensor;

/// An omnidirectional image with its recorded fixations (in ERP pixels).
#[derive(Clone, Debug)]
pub struct Odi {
    pub id: String,
    pub image: EquirectImage,
    pub fixations: FixationMap,
}

/// One training example: a rectilinear view with its ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    /// Identifier of the source panorama, shared by all of its views.
    pub source: String,
    pub image: Tensor,
    pub density: SaliencyMap,
    pub fixations: FixationMap,
}

impl Sample {
    pub fn new(source: impl Into<String>, image: Tensor, density: SaliencyMap, fixations: FixationMap) -> Result<Self> {
        let (c, h, w) = image.chw()?;
        if c != 3 || density.dims() != (w, h) || (fixations.width, fixations.height) != (w, h) {
            return Err(Error::shape(
                "sample",
                format!(
                    "image {:?}, density {:?}, fixations {}x{}",
                    image.shape(),
                    density.dims(),
                    fixations.width,
                    fixations.height
                ),
            ));
        }
        Ok(Sample {
            source: source.into(),
            image,
            density,
            fixations,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.density.dims()
    }
}

/// Assign each fixation to the first face whose frustum contains it, in
/// face-pixel coordinates.
pub fn project_fixations(fix: &FixationMap, views: &[ViewSpec]) -> Vec<Vec<(usize, usize)>> {
    let cams: Vec<_> = views.iter().map(|v| v.camera()).collect();
    let mut per_face = vec![Vec::new(); views.len()];
    for &(x, y) in fix.points() {
        let (lon, lat) = pixel_lonlat(x as f64, y as f64, fix.width, fix.height);
        let d = Vec3::from_lonlat(lon, lat);
        for (k, (cam, view)) in cams.iter().zip(views).enumerate() {
            if let Some((px, py)) = cam.direction_to_pixel(d) {
                let px = (px.round().max(0.0) as usize).min(view.out_width - 1);
                let py = (py.round().max(0.0) as usize).min(view.out_height - 1);
                per_face[k].push((px, py));
                break;
            }
        }
    }
    per_face
}

/// Cube-face views of every panorama for each `(yaw, pitch)` offset in
/// `rotations × rotations`. Faces without fixations are dropped; the rest get
/// a Gaussian density with `sigma` face pixels.
pub fn build_dataset(
    odis: &[Odi],
    rotations: &[f64],
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<Vec<Sample>> {
    if odis.is_empty() {
        return Err(Error::invalid("no panoramas to build a dataset from"));
    }
    if rotations.is_empty() {
        return Err(Error::invalid("no rotation offsets"));
    }
    let per_odi = odis
        .par_iter()
        .map(|odi| {
            let mut out = Vec::new();
            for &yaw in rotations {
                for &pitch in rotations {
                    let views = CubeFace::ALL
                        .iter()
                        .map(|f| f.view((yaw, pitch), width, height))
                        .collect::<Result<Vec<_>>>()?;
                    let fixations = project_fixations(&odi.fixations, &views);
                    for (view, pts) in views.iter().zip(fixations) {
                        if pts.is_empty() {
                            continue;
                        }
                        let face = extract_view(&odi.image, view, Interp::Bilinear)?;
                        let fix = FixationMap::new(width, height, pts)?;
                        let density = gaussian_density(&fix, sigma)?;
                        let image = if face.channels == 3 {
                            face.to_tensor()
                        } else {
                            let plane = face.channel(0);
                            Tensor::new(&[3, height, width], [plane, plane, plane].concat())?
                        };
                        out.push(Sample::new(odi.id.clone(), image, density, fix)?);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_odi.into_iter().flatten().collect())
}

fn source_rank(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

/// Split by source panorama: sources are ordered by a hash of their id and
/// the last `fraction` of them go to validation.
pub fn split_by_source(samples: Vec<Sample>, fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let mut ids: Vec<&str> = samples.iter().map(|s| s.source.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.sort_by_key(|id| source_rank(id));
    let n_val = ((ids.len() as f64) * fraction).ceil() as usize;
    let n_val = n_val.min(ids.len().saturating_sub(1));
    let val_ids: std::collections::HashSet<String> = ids[ids.len() - n_val..].iter().map(|s| s.to_string()).collect();
    samples.into_iter().partition(|s| !val_ids.contains(&s.source))
}

/// A salient region on the sphere.
#[derive(Clone, Copy, Debug)]
struct Blob {
    centre: Vec3,
    radius: f64,
    colour: [f64; 3],
}

fn angle(a: Vec3, b: Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

fn random_direction(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v.normalized();
        }
    }
}

/// Direction at angular distance `|N(0, sigma)|` from `centre`, in a random
/// bearing.
fn perturb(centre: Vec3, sigma: f64, rng: &mut impl Rng) -> Vec3 {
    let theta = (rng.sample::<f64, _>(StandardNormal) * sigma).abs();
    let mut t = random_direction(rng);
    let along = t.dot(centre);
    t = Vec3([t.0[0] - along * centre.0[0], t.0[1] - along * centre.0[1], t.0[2] - along * centre.0[2]]);
    if t.norm() < 1e-9 {
        return centre;
    }
    let t = t.normalized();
    let (s, c) = theta.sin_cos();
    Vec3([
        centre.0[0] * c + t.0[0] * s,
        centre.0[1] * c + t.0[1] * s,
        centre.0[2] * c + t.0[2] * s,
    ])
}

/// Procedural panorama: bright coloured blobs on a dim textured background,
/// with fixations drawn mostly around the blobs and partly uniformly over the
/// sphere.
pub fn synthetic_odi(id: impl Into<String>, width: usize, fixations: usize, seed: u64) -> Result<Odi> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_blobs = rng.random_range(3..=5);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            centre: random_direction(&mut rng),
            radius: rng.random_range(0.15..0.35),
            colour: [rng.random_range(0.5..1.0), rng.random_range(0.3..1.0), rng.random_range(0.0..0.6)],
        })
        .collect();
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let image = EquirectImage::from_fn(width, 3, |lon, lat| {
        let d = Vec3::from_lonlat(lon, lat);
        let texture = 0.15 + 0.05 * ((lon.to_radians() * 7.0 + phase).sin() * (lat.to_radians() * 5.0).cos());
        let mut px = [texture, texture * 0.9, texture * 1.1];
        for b in &blobs {
            let a = angle(d, b.centre) / b.radius;
            let wgt = (-0.5 * a * a).exp();
            for c in 0..3 {
                px[c] = px[c] * (1.0 - wgt) + b.colour[c] * wgt;
            }
        }
        px.to_vec()
    })?;
    let height = width / 2;
    let mut points = Vec::with_capacity(fixations);
    for _ in 0..fixations {
        let d = if rng.random::<f64>() < 0.35 {
            random_direction(&mut rng)
        } else {
            let b = &blobs[rng.random_range(0..blobs.len())];
            perturb(b.centre, b.radius * 0.6, &mut rng)
        };
        let (lon, lat) = d.lonlat();
        let (fx, fy) = lonlat_to_pixel(lon, lat, width, height);
        let x = (fx.round() as isize).rem_euclid(width as isize) as usize;
        let y = (fy.round().max(0.0) as usize).min(height - 1);
        points.push((x, y));
    }
    Ok(Odi {
        id: id.into(),
        image,
        fixations: FixationMap::new(width, height, points)?,
    })
}

/// `n` synthetic panoramas with ids `odi-000`, `odi-001`, ….
pub fn synthetic_odis(n: usize, width: usize, fixations: usize, seed: u64) -> Result<Vec<Odi>> {
    (0..n)
        .into_par_iter()
        .map(|i| synthetic_odi(format!("odi-{i:03}"), width, fixations, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

/// Small planar samples: one or two bright blobs on a dark
/// background, fixations scattered around the blob centres.
pub fn synthetic_samples(n: usize, width: usize, height: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (width.min(height) as f64 / 8.0).max(0.75);
    (0..n)
        .map(|i| {
            let n_blobs = rng.random_range(1..=2);
            let centres: Vec<(f64, f64, f64)> = (0..n_blobs)
                .map(|_| {
                    (
                        rng.random_range(0.15..0.85) * width as f64,
                        rng.random_range(0.15..0.85) * height as f64,
                        rng.random_range(0.10..0.18) * width.min(height) as f64 + 0.5,
                    )
                })
                .collect();
            let mut data = vec![0.0; 3 * width * height];
            let tint = [rng.random_range(0.6..1.0), rng.random_range(0.4..1.0), rng.random_range(0.0..0.5)];
            for y in 0..height {
                for x in 0..width {
                    let mut v: f64 = 0.0;
                    for &(cx, cy, r) in &centres {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        v = v.max((-0.5 * d2 / (r * r)).exp());
                    }
                    let noise = rng.random_range(0.0..0.08);
                    for c in 0..3 {
                        data[(c * height + y) * width + x] = (0.1 + noise) * (1.0 - v) + tint[c] * v;
                    }
                }
            }
            let n_fix = rng.random_range(4..=8);
            let points: Vec<(usize, usize)> = (0..n_fix)
                .map(|_| {
                    let &(cx, cy, r) = &centres[rng.random_range(0..centres.len())];
                    let x = (cx + rng.sample::<f64, _>(StandardNormal) * r * 0.5).round().clamp(0.0, width as f64 - 1.0) as usize;
                    let y = (cy + rng.sample::<f64, _>(StandardNormal) * r * 0.5).round().clamp(0.0, height as f64 - 1.0) as usize;
                    (x, y)
                })
                .collect();
            let fix = FixationMap::new(width, height, points)?;
            let density = gaussian_density(&fix, sigma)?;
            Sample::new(format!("synthetic-{i:03}"), Tensor::new(&[3, height, width], data)?, density, fix)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn odi_with(points: Vec<(usize, usize)>) -> Odi {
        Odi {
            id: "t".into(),
            image: EquirectImage::new(64, 3, vec![0.5; 3 * 64 * 32]).unwrap(),
            fixations: FixationMap::new(64, 32, points).unwrap(),
        }
    }

    #[test]
    fn forward_fixation_lands_in_front_centre() {
        let views: Vec<_> = CubeFace::ALL.iter().map(|f| f.view((0.0, 0.0), 9, 9).unwrap()).collect();
        // pixel centre within 0.25° of (0, 0)
        let w = 720;
        let (x, y) = (359, 179);
        let (lon, lat) = pixel_lonlat(x as f64, y as f64, w, w / 2);
        assert!(lon.abs() < 0.5 && lat.abs() < 0.5);
        let fm = FixationMap::new(w, w / 2, vec![(x, y)]).unwrap();
        let per = project_fixations(&fm, &views);
        assert_eq!(per[0], vec![(4, 4)]);
        assert!(per[1..].iter().all(|p| p.is_empty()));
    }

    #[test]
    fn projection_agrees_with_view_mapping() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let views: Vec<_> = CubeFace::ALL.iter().map(|f| f.view((30.0, 60.0), 32, 24).unwrap()).collect();
        for _ in 0..1000 {
            let d = random_direction(&mut rng);
            let hits: Vec<_> = views.iter().filter_map(|v| v.camera().direction_to_pixel(d).map(|p| (v, p))).collect();
            assert!(!hits.is_empty());
            let (view, (px, py)) = hits[0];
            let back = view.camera().pixel_to_direction(px, py).normalized();
            // angular size of half a pixel at the face centre
            let half_px = (view.fov.to_radians() / 2.0).tan() / view.out_width as f64;
            assert!(angle(back, d) <= half_px, "{}", angle(back, d));
        }
    }

    #[test]
    fn one_face_per_fixation_and_empty_faces_dropped() {
        let odi = odi_with(vec![(10, 10), (40, 20), (63, 0)]);
        let samples = build_dataset(&[odi], &[0.0], 16, 16, 1.0).unwrap();
        let total: usize = samples.iter().map(|s| s.fixations.len()).sum();
        assert_eq!(total, 3);
        assert!(samples.len() <= 3);
        for s in &samples {
            assert!((s.density.sum() - 1.0).abs() < 1e-9);
            assert_eq!(s.image.shape(), [3, 16, 16]);
        }
        assert!(build_dataset(&[], &[0.0], 16, 16, 1.0).is_err());
    }

    #[test]
    fn full_rotation_grid_count() {
        let odis = synthetic_odis(2, 64, 200, 1).unwrap();
        let samples = build_dataset(&odis, &[0.0, 30.0, 60.0], 8, 8, 1.0).unwrap();
        assert!(samples.len() <= 2 * 54);
        assert!(samples.len() >= 2 * 50);
    }

    #[test]
    fn split_keeps_sources_together() {
        let odis = synthetic_odis(8, 32, 40, 2).unwrap();
        let samples = build_dataset(&odis, &[0.0, 30.0], 8, 8, 1.0).unwrap();
        let n = samples.len();
        let (train, val) = split_by_source(samples.clone(), 0.25);
        assert_eq!(train.len() + val.len(), n);
        let vs: std::collections::HashSet<_> = val.iter().map(|s| s.source.clone()).collect();
        assert_eq!(vs.len(), 2);
        assert!(train.iter().all(|s| !vs.contains(&s.source)));
        let (_, val2) = split_by_source(samples.into_iter().rev().collect(), 0.25);
        let vs2: std::collections::HashSet<_> = val2.iter().map(|s| s.source.clone()).collect();
        assert_eq!(vs, vs2);
    }

    #[test]
    fn synthetic_generators_are_deterministic() {
        let a = synthetic_samples(4, 8, 8, 5).unwrap();
        let b = synthetic_samples(4, 8, 8, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.fixations, y.fixations);
        }
        let o1 = synthetic_odi("a", 32, 10, 9).unwrap();
        let o2 = synthetic_odi("a", 32, 10, 9).unwrap();
        assert_eq!(o1.image, o2.image);
        assert_eq!(o1.fixations, o2.fixations);
    }
}
