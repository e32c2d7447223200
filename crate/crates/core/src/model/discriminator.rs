use rand::Rng;

use super::generator::{kaiming_uniform, LEAKY_SLOPE};
use super::graph::{Eager, Graph};
use crate::error::{Error, Result};
use crate::tensor::{Activation, ParamSet, Tensor};

/// `(name, c_out, c_in, kernel)` for the six convolutions; a 2×2 max pool
/// follows conv2, conv4 and conv6.
const CONVS: [(&str, usize, usize, usize); 6] = [
    ("conv1", 3, 4, 1),
    ("conv2", 32, 3, 3),
    ("conv3", 64, 32, 3),
    ("conv4", 64, 64, 3),
    ("conv5", 64, 64, 3),
    ("conv6", 64, 64, 3),
];
const FC_HIDDEN: [usize; 2] = [100, 2];

/// Length of the flattened feature vector entering `fc1`.
pub fn fc1_inputs(height: usize, width: usize) -> usize {
    64 * (height / 8) * (width / 8)
}

fn check_resolution(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || !height.is_multiple_of(8) || !width.is_multiple_of(8) {
        return Err(Error::invalid(format!(
            "discriminator resolution {width}x{height} must be a positive multiple of 8 on both axes"
        )));
    }
    Ok(())
}

/// Tensor names and shapes for a discriminator built at `height × width`.
pub fn discriminator_shapes(height: usize, width: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (name, co, ci, k) in CONVS {
        out.push((format!("disc.{name}.weight"), vec![co, ci, k, k]));
        out.push((format!("disc.{name}.bias"), vec![co]));
    }
    let dims = [fc1_inputs(height, width), FC_HIDDEN[0], FC_HIDDEN[1], 1];
    for i in 0..3 {
        out.push((format!("disc.fc{}.weight", i + 1), vec![dims[i + 1], dims[i]]));
        out.push((format!("disc.fc{}.bias", i + 1), vec![dims[i + 1]]));
    }
    out
}

pub fn init_discriminator(height: usize, width: usize, rng: &mut impl Rng) -> Result<ParamSet> {
    check_resolution(height, width)?;
    let mut p = ParamSet::new();
    for (name, shape) in discriminator_shapes(height, width) {
        let t = if shape.len() == 1 { Tensor::zeros(&shape) } else { kaiming_uniform(&shape, rng) };
        p.insert(name, t);
    }
    Ok(p)
}

/// Probability that `(image, saliency)` is a ground-truth pair. Returns a
/// one-element tensor.
pub fn discriminator_forward<G: Graph>(g: &mut G, image: &G::V, saliency: &G::V) -> Result<G::V> {
    let (_, h, w) = g.value(image).chw()?;
    check_resolution(h, w)?;
    let fc1 = g.param("disc.fc1.weight")?;
    let built_for = g.value(&fc1).shape()[1];
    if built_for != fc1_inputs(h, w) {
        return Err(Error::shape(
            "discriminator",
            format!(
                "fc1 takes {built_for} features but a {w}x{h} input yields {}",
                fc1_inputs(h, w)
            ),
        ));
    }
    let mut x = g.concat_channels(image, saliency)?;
    for (i, (name, ..)) in CONVS.iter().enumerate() {
        let k = g.param(&format!("disc.{name}.weight"))?;
        let b = g.param(&format!("disc.{name}.bias"))?;
        x = g.conv2d(&x, &k, Some(&b), 1)?;
        x = g.act(&x, Activation::LeakyRelu(LEAKY_SLOPE))?;
        if i % 2 == 1 {
            x = g.max_pool2d(&x)?;
        }
    }
    for (i, act) in [Activation::Tanh, Activation::Tanh, Activation::Sigmoid].into_iter().enumerate() {
        let w = g.param(&format!("disc.fc{}.weight", i + 1))?;
        let b = g.param(&format!("disc.fc{}.bias", i + 1))?;
        x = g.linear(&x, &w, &b)?;
        x = g.act(&x, act)?;
    }
    Ok(x)
}

/// Convenience evaluation without gradients.
pub fn discriminate(params: &ParamSet, image: &Tensor, saliency: &Tensor) -> Result<f64> {
    let mut g = Eager::new(params);
    let i = g.constant(image.clone());
    let s = g.constant(saliency.clone());
    Ok(discriminator_forward(&mut g, &i, &s)?.item())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn table_shapes() {
        let s = discriminator_shapes(192, 256);
        let fc1 = s.iter().find(|(n, _)| n == "disc.fc1.weight").unwrap();
        assert_eq!(fc1.1, vec![100, 32 * 24 * 64]);
        assert_eq!(fc1_inputs(192, 256), 49_152);
        assert_eq!(s.len(), 18);
    }

    #[test]
    fn zero_params_give_one_half() {
        let mut p = init_discriminator(16, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (_, t) in p.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let img = Tensor::full(&[3, 16, 8], 0.3);
        assert_eq!(discriminate(&p, &img, &Tensor::full(&[1, 16, 8], 0.8)).unwrap(), 0.5);
    }

    #[test]
    fn output_is_a_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_discriminator(8, 16, &mut rng).unwrap();
        for scale in [0.0, 1.0, 100.0, -1e4] {
            let img = Tensor::uniform(&[3, 8, 16], -1.0, 1.0, &mut rng).map(|v| v * scale);
            let sal = Tensor::uniform(&[1, 8, 16], 0.0, 1.0, &mut rng);
            let d = discriminate(&p, &img, &sal).unwrap();
            assert!(d > 0.0 && d < 1.0, "{d}");
        }
    }

    #[test]
    fn resolution_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = init_discriminator(8, 8, &mut rng).unwrap();
        let err = discriminate(&p, &Tensor::zeros(&[3, 16, 16]), &Tensor::zeros(&[1, 16, 16]));
        assert!(matches!(err, Err(Error::Shape { .. })));
        assert!(discriminate(&p, &Tensor::zeros(&[3, 12, 8]), &Tensor::zeros(&[1, 12, 8])).is_err());
        assert!(init_discriminator(10, 8, &mut rng).is_err());
    }
}
