//! Fixation smoothing and the KL / CC / NSS / AUC-Judd saliency scores.
//!
//! NSS and AUC treat fixations as a binary map: repeated fixations on the same
//! pixel count once.

use crate::error::{Error, Result};
use crate::maps::{FixationMap, SaliencyMap};

/// Stabilizer in [`kl_div`].
pub const KL_EPS: f64 = 1e-7;

fn same_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sum of isotropic Gaussians at each fixation, cut off beyond `4σ` and
/// scaled to sum 1.
pub fn gaussian_density(fix: &FixationMap, sigma: f64) -> Result<SaliencyMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if fix.is_empty() {
        return Err(Error::invalid("no fixations to smooth"));
    }
    let (w, h) = (fix.width, fix.height);
    let cutoff = 4.0 * sigma;
    let r = cutoff.ceil() as isize;
    let mut kernel = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2.sqrt() <= cutoff {
                kernel.push((dx, dy, (-d2 / (2.0 * sigma * sigma)).exp()));
            }
        }
    }
    let mut values = vec![0.0; w * h];
    for &(fx, fy) in fix.points() {
        for &(dx, dy, k) in &kernel {
            let (x, y) = (fx as isize + dx, fy as isize + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                values[y as usize * w + x as usize] += k;
            }
        }
    }
    SaliencyMap::new(w, h, values)?.normalized_sum()
}

/// `Σ G · ln(ε + G / (P + ε))` after scaling both maps to sum 1.
pub fn kl_div(gt: &SaliencyMap, pred: &SaliencyMap) -> Result<f64> {
    same_dims("kl_div", gt.dims(), pred.dims())?;
    let g = gt.normalized_sum()?;
    let p = pred.normalized_sum()?;
    Ok(g.values()
        .iter()
        .zip(p.values())
        .map(|(&g, &p)| g * (KL_EPS + g / (p + KL_EPS)).ln())
        .sum())
}

/// Pearson correlation.
pub fn cc(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64> {
    same_dims("cc", a.dims(), b.dims())?;
    let (ma, sa) = mean_std(a.values());
    let (mb, sb) = mean_std(b.values());
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::invalid("correlation of a constant map is undefined"));
    }
    let n = a.values().len() as f64;
    let cov = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n;
    Ok((cov / (sa * sb)).clamp(-1.0, 1.0))
}

/// Mean of the z-scored prediction (population std) over fixated pixels.
pub fn nss(pred: &SaliencyMap, fix: &FixationMap) -> Result<f64> {
    same_dims("nss", pred.dims(), (fix.width, fix.height))?;
    if fix.is_empty() {
        return Err(Error::invalid("NSS needs at least one fixation"));
    }
    let (mean, std) = mean_std(pred.values());
    if std == 0.0 {
        return Err(Error::invalid("NSS of a constant map is undefined"));
    }
    let idx = fix.fixated_indices();
    Ok(idx.iter().map(|&i| (pred.values()[i] - mean) / std).sum::<f64>() / idx.len() as f64)
}

/// AUC-Judd: thresholds at the saliency of each fixated pixel, trapezoidal
/// area under (FPR, TPR) with the curve pinned at (0, 0) and (1, 1).
pub fn auc_judd(pred: &SaliencyMap, fix: &FixationMap) -> Result<f64> {
    same_dims("auc_judd", pred.dims(), (fix.width, fix.height))?;
    if fix.is_empty() {
        return Err(Error::invalid("AUC needs at least one fixation"));
    }
    let mask = fix.mask();
    let n_fix = mask.iter().filter(|&&m| m).count();
    let n_neg = mask.len() - n_fix;
    if n_neg == 0 {
        return Err(Error::invalid("AUC needs at least one non-fixated pixel"));
    }
    let values = pred.values();
    let mut fix_sorted: Vec<f64> = values.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    fix_sorted.sort_by(|a, b| b.total_cmp(a));
    let mut thresholds = fix_sorted.clone();
    thresholds.dedup();
    let mut all = values.to_vec();
    all.sort_by(|a, b| b.total_cmp(a));

    let mut tp = vec![0.0];
    let mut fp = vec![0.0];
    let (mut above, mut fix_above) = (0, 0);
    for &t in &thresholds {
        while above < all.len() && all[above] >= t {
            above += 1;
        }
        while fix_above < fix_sorted.len() && fix_sorted[fix_above] >= t {
            fix_above += 1;
        }
        tp.push(fix_above as f64 / n_fix as f64);
        fp.push((above - fix_above) as f64 / n_neg as f64);
    }
    tp.push(1.0);
    fp.push(1.0);
    Ok(tp
        .windows(2)
        .zip(fp.windows(2))
        .map(|(t, f)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
        .sum())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn map(w: usize, h: usize, v: &[f64]) -> SaliencyMap {
        SaliencyMap::new(w, h, v.to_vec()).unwrap()
    }

    fn argmax(m: &SaliencyMap) -> usize {
        let v = m.values();
        (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
    }

    #[test]
    fn gaussian_single_fixation() {
        let fix = FixationMap::new(64, 64, vec![(32, 32)]).unwrap();
        let g = gaussian_density(&fix, 2.0).unwrap();
        assert!((g.sum() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&g), 32 * 64 + 32);
        let ratio = g.get(34, 32) / g.get(32, 32);
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(g.get(41, 32), 0.0);
        assert!(g.get(40, 32) > 0.0);
    }

    #[test]
    fn gaussian_two_fixations_symmetric() {
        let fix = FixationMap::new(64, 32, vec![(15, 16), (48, 16)]).unwrap();
        let g = gaussian_density(&fix, 3.0).unwrap();
        assert!((g.get(15, 16) - g.get(48, 16)).abs() < 1e-15);
        assert!(g.get(15, 16) > g.get(16, 16) && g.get(15, 16) > g.get(14, 16));
        assert!(gaussian_density(&FixationMap::new(4, 4, vec![]).unwrap(), 1.0).is_err());
        assert!(gaussian_density(&fix, 0.0).is_err());
    }

    #[test]
    fn kl_examples() {
        let a = map(3, 1, &[0.2, 0.5, 0.3]);
        assert!(kl_div(&a, &a).unwrap().abs() <= 1e-5);
        let n = 1024;
        let mut point = vec![0.0; n];
        point[77] = 1.0;
        let kl = kl_div(&map(32, 32, &point), &SaliencyMap::constant(32, 32, 1.0).unwrap()).unwrap();
        let oracle = (KL_EPS + 1.0 / (1.0 / n as f64 + KL_EPS)).ln();
        assert!((kl - oracle).abs() < 1e-12);
        assert!((kl - (n as f64).ln()).abs() < 1e-3);
        let b = map(3, 1, &[0.6, 0.3, 0.1]);
        assert!((kl_div(&a, &b).unwrap() - kl_div(&b, &a).unwrap()).abs() > 1e-3);
        assert!(kl_div(&a, &SaliencyMap::constant(3, 1, 0.0).unwrap()).is_err());
        assert!(kl_div(&a, &map(1, 3, &[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn cc_examples() {
        let a = map(2, 2, &[0.1, 0.7, 0.3, 0.2]);
        assert!((cc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((cc(&a, &a.map(|v| 1.0 - v)).unwrap() + 1.0).abs() < 1e-12);
        assert!((cc(&a, &a.map(|v| 2.0 * v + 3.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(cc(&a, &SaliencyMap::constant(2, 2, 0.5).unwrap()).is_err());
    }

    #[test]
    fn nss_examples() {
        let m = map(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let f = FixationMap::new(2, 2, vec![(1, 1)]).unwrap();
        assert!((nss(&m, &f).unwrap() - 0.75 / 0.1875f64.sqrt()).abs() < 1e-12);
        assert!((nss(&m, &f).unwrap() - 1.7321).abs() < 1e-4);
        let all = FixationMap::new(2, 2, vec![(0, 0), (1, 0), (0, 1), (1, 1)]).unwrap();
        let m2 = map(2, 2, &[0.3, 0.9, 0.1, 0.4]);
        assert!(nss(&m2, &all).unwrap().abs() < 1e-12);
        assert!((nss(&m2.map(|v| v + 5.0), &f).unwrap() - nss(&m2, &f).unwrap()).abs() < 1e-12);
        assert!(nss(&SaliencyMap::constant(2, 2, 1.0).unwrap(), &f).is_err());
        assert!(nss(&m, &FixationMap::new(2, 2, vec![]).unwrap()).is_err());
    }

    #[test]
    fn auc_examples() {
        let f = FixationMap::new(4, 4, vec![(0, 0), (2, 1), (3, 3)]).unwrap();
        let mask: Vec<f64> = f.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        assert!((auc_judd(&map(4, 4, &mask), &f).unwrap() - 1.0).abs() < 1e-12);
        assert!((auc_judd(&SaliencyMap::constant(4, 4, 0.2).unwrap(), &f).unwrap() - 0.5).abs() < 1e-12);
        let inverted: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
        // the only threshold is 0, which admits every pixel
        assert!((auc_judd(&map(4, 4, &inverted), &f).unwrap() - 0.5).abs() < 1e-12);
        let full = FixationMap::new(2, 1, vec![(0, 0), (1, 0)]).unwrap();
        assert!(auc_judd(&map(2, 1, &[0.1, 0.2]), &full).is_err());
    }

    #[test]
    fn auc_hand_worked_curve() {
        // fixations at 0.9 and 0.7; negatives 0.8 and 0.1
        // curve (0,0) (0,.5) (.5,1) (1,1) -> 0.875
        let f = FixationMap::new(4, 1, vec![(0, 0), (2, 0)]).unwrap();
        let a = auc_judd(&map(4, 1, &[0.9, 0.8, 0.7, 0.1]), &f).unwrap();
        assert!((a - 0.875).abs() < 1e-12);
    }

    #[test]
    fn auc_random_null_is_one_half() {
        let mut total = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..64 * 64).map(|_| rng.random::<f64>()).collect();
            let pts: Vec<_> = (0..50).map(|_| (rng.random_range(0..64), rng.random_range(0..64))).collect();
            total += auc_judd(&map(64, 64, &v), &FixationMap::new(64, 64, pts).unwrap()).unwrap();
        }
        assert!((total / 100.0 - 0.5).abs() <= 0.05);
    }

    fn arb_map() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 36)
    }

    fn arb_fix() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..6, 0usize..6), 1..8)
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_self_zero(a in arb_map(), b in arb_map()) {
            prop_assume!(a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0);
            let (a, b) = (map(6, 6, &a), map(6, 6, &b));
            prop_assert!(kl_div(&a, &b).unwrap() >= -1e-12);
            prop_assert!(kl_div(&a, &a).unwrap() <= 1e-5);
        }

        #[test]
        fn cc_symmetric_bounded_affine(a in arb_map(), b in arb_map(), s in 0.1f64..10.0, t in 0.0f64..5.0) {
            let (a, b) = (map(6, 6, &a), map(6, 6, &b));
            let r = cc(&a, &b).unwrap();
            prop_assert!(r.abs() <= 1.0);
            prop_assert!((r - cc(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((r - cc(&a.map(|v| s * v + t), &b).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn nss_affine_and_argmax_seeking(a in arb_map(), pts in arb_fix(), s in 0.1f64..10.0, t in 0.0f64..5.0) {
            let m = map(6, 6, &a);
            let f = FixationMap::new(6, 6, pts.clone()).unwrap();
            let n = nss(&m, &f).unwrap();
            prop_assert!((n - nss(&m.map(|v| s * v + t), &f).unwrap()).abs() < 1e-9);
            let lo = (0..36).fold(0, |b, i| if a[i] < a[b] { i } else { b });
            let hi = argmax(&m);
            let mut moved = pts;
            moved[0] = (lo % 6, lo / 6);
            let before = nss(&m, &FixationMap::new(6, 6, moved.clone()).unwrap()).unwrap();
            moved[0] = (hi % 6, hi / 6);
            let after = nss(&m, &FixationMap::new(6, 6, moved).unwrap()).unwrap();
            prop_assert!(after >= before - 1e-12);
        }

        #[test]
        fn auc_monotone_invariant(a in arb_map(), pts in arb_fix()) {
            let m = map(6, 6, &a);
            let f = FixationMap::new(6, 6, pts).unwrap();
            let r = auc_judd(&m, &f).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            let warped = m.map(|v| (3.0 * v).exp() + v * v);
            prop_assert!((r - auc_judd(&warped, &f).unwrap()).abs() < 1e-12);
        }
    }
}
