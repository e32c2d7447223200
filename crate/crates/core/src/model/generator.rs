use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Eager, Graph};
use crate::error::{Error, Result};
use crate::tensor::{Activation, ParamSet, Tensor};

/// Dilations of the recurrent layers L1 to L6.
pub const DILATIONS: [usize; 6] = [1, 2, 4, 8, 16, 1];
pub const LEAKY_SLOPE: f64 = 0.2;
/// Initial bias of the update gate, leaning toward keeping the previous state.
pub const UPDATE_GATE_BIAS: f64 = -1.0;

const LEAKY: Activation = Activation::LeakyRelu(LEAKY_SLOPE);
const GRU_WEIGHTS: [&str; 6] = ["W_z", "U_z", "W_r", "U_r", "W_n", "U_n"];
const GRU_BIASES: [&str; 3] = ["b_z", "b_r", "b_n"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub se_reduction: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            channels: 24,
            se_reduction: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.se_reduction == 0 || !self.channels.is_multiple_of(self.se_reduction) {
            return Err(Error::invalid(format!(
                "{} channels not divisible by SE reduction {}",
                self.channels, self.se_reduction
            )));
        }
        Ok(())
    }

    /// Every generator tensor name with its shape, in checkpoint order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        let r = c / self.se_reduction.max(1);
        let mut out = vec![
            ("gen.L0.weight".to_string(), vec![c, 3, 3, 3]),
            ("gen.L0.bias".to_string(), vec![c]),
        ];
        for j in 1..=DILATIONS.len() {
            for w in GRU_WEIGHTS {
                out.push((format!("gen.L{j}.{w}"), vec![c, c, 3, 3]));
            }
            for b in GRU_BIASES {
                out.push((format!("gen.L{j}.{b}"), vec![c]));
            }
            out.push((format!("gen.L{j}.se.fc1.weight"), vec![r, c]));
            out.push((format!("gen.L{j}.se.fc1.bias"), vec![r]));
            out.push((format!("gen.L{j}.se.fc2.weight"), vec![c, r]));
            out.push((format!("gen.L{j}.se.fc2.bias"), vec![c]));
        }
        out.push(("gen.L7.weight".to_string(), vec![1, c, 1, 1]));
        out.push(("gen.L7.bias".to_string(), vec![1]));
        out
    }

    /// Closed-form trainable scalar count.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let r = c / self.se_reduction.max(1);
        let l0 = 27 * c + c;
        let gru = 6 * 9 * c * c + 3 * c;
        let se = 2 * r * c + r + c;
        let l7 = c + 1;
        l0 + DILATIONS.len() * (gru + se) + l7
    }

    /// Kaiming-uniform weights, zero biases, update-gate bias at
    /// [`UPDATE_GATE_BIAS`].
    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamSet> {
        self.validate()?;
        let mut p = ParamSet::new();
        for (name, shape) in self.param_shapes() {
            let t = if shape.len() == 1 {
                let v = if name.ends_with(".b_z") { UPDATE_GATE_BIAS } else { 0.0 };
                Tensor::full(&shape, v)
            } else {
                kaiming_uniform(&shape, rng)
            };
            p.insert(name, t);
        }
        Ok(p)
    }

    /// Check that `params` holds exactly the generator tensors with the
    /// right shapes.
    pub fn check(&self, params: &ParamSet) -> Result<()> {
        self.validate()?;
        let gen = params.with_prefix("gen.");
        let shapes = self.param_shapes();
        for (name, shape) in &shapes {
            let t = params.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "generator parameters",
                    format!("`{name}` is {:?}, expected {shape:?} for {} channels", t.shape(), self.channels),
                ));
            }
        }
        if gen.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} generator tensors, configuration expects {}",
                gen.len(),
                shapes.len()
            )));
        }
        Ok(())
    }
}

/// `U(−b, b)` with `b = √(6 / fan_in)`, fan-in taken over all but the first
/// axis.
pub fn kaiming_uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Squeeze-and-excitation: features scaled per channel by
/// `σ(fc2(relu(fc1(gap(x)))))`. Parameters live under `{prefix}.fc1` and
/// `{prefix}.fc2`.
pub fn se_block<G: Graph>(g: &mut G, x: &G::V, prefix: &str) -> Result<G::V> {
    let w1 = g.param(&format!("{prefix}.fc1.weight"))?;
    let b1 = g.param(&format!("{prefix}.fc1.bias"))?;
    let w2 = g.param(&format!("{prefix}.fc2.weight"))?;
    let b2 = g.param(&format!("{prefix}.fc2.bias"))?;
    let squeeze = g.global_avg_pool(x)?;
    let hidden = g.linear(&squeeze, &w1, &b1)?;
    let hidden = g.act(&hidden, Activation::Relu)?;
    let gate = g.linear(&hidden, &w2, &b2)?;
    let gate = g.act(&gate, Activation::Sigmoid)?;
    g.scale_channels(x, &gate)
}

/// One convolutional GRU step. `x` is this stage's previous-layer feature,
/// `h` the same layer's output from the previous stage (`None` on the first
/// stage, equivalent to zeros). `W_*` use `dilation`; `U_*` are plain 3×3.
pub fn conv_gru_update<G: Graph>(
    g: &mut G,
    x: &G::V,
    h: Option<&G::V>,
    prefix: &str,
    dilation: usize,
) -> Result<G::V> {
    if let Some(h) = h {
        let (xs, hs) = (g.value(x).shape(), g.value(h).shape());
        if xs != hs {
            return Err(Error::shape("conv_gru_update", format!("input {xs:?} vs hidden {hs:?}")));
        }
    }
    let p = |g: &mut G, n: &str| g.param(&format!("{prefix}.{n}"));
    let (w_z, u_z, b_z) = (p(g, "W_z")?, p(g, "U_z")?, p(g, "b_z")?);
    let (w_r, u_r, b_r) = (p(g, "W_r")?, p(g, "U_r")?, p(g, "b_r")?);
    let (w_n, u_n, b_n) = (p(g, "W_n")?, p(g, "U_n")?, p(g, "b_n")?);

    let mut pre_z = g.conv2d(x, &w_z, Some(&b_z), dilation)?;
    let Some(h) = h else {
        let z = g.act(&pre_z, Activation::Sigmoid)?;
        let pre_n = g.conv2d(x, &w_n, Some(&b_n), dilation)?;
        let n = g.act(&pre_n, Activation::Tanh)?;
        return g.mul(&z, &n);
    };
    let uz = g.conv2d(h, &u_z, None, 1)?;
    pre_z = g.add(&pre_z, &uz)?;
    let z = g.act(&pre_z, Activation::Sigmoid)?;

    let wr = g.conv2d(x, &w_r, Some(&b_r), dilation)?;
    let ur = g.conv2d(h, &u_r, None, 1)?;
    let pre_r = g.add(&wr, &ur)?;
    let r = g.act(&pre_r, Activation::Sigmoid)?;

    let rh = g.mul(&r, h)?;
    let wn = g.conv2d(x, &w_n, Some(&b_n), dilation)?;
    let un = g.conv2d(&rh, &u_n, None, 1)?;
    let pre_n = g.add(&wn, &un)?;
    let n = g.act(&pre_n, Activation::Tanh)?;

    let keep = g.one_minus(&z);
    let kept = g.mul(&keep, h)?;
    let new = g.mul(&z, &n)?;
    g.add(&kept, &new)
}

/// One pass of the shared network on `input` (`[3, H, W]`). Returns the
/// `[1, H, W]` saliency output and the six recurrent states to carry into the
/// next stage.
pub fn generator_stage<G: Graph>(
    g: &mut G,
    input: &G::V,
    hidden: Option<&[G::V]>,
) -> Result<(G::V, Vec<G::V>)> {
    if let Some(h) = hidden {
        if h.len() != DILATIONS.len() {
            return Err(Error::invalid(format!("{} hidden states, expected {}", h.len(), DILATIONS.len())));
        }
    }
    let w0 = g.param("gen.L0.weight")?;
    let b0 = g.param("gen.L0.bias")?;
    let x = g.conv2d(input, &w0, Some(&b0), 1)?;
    let mut x = g.act(&x, LEAKY)?;
    let mut states = Vec::with_capacity(DILATIONS.len());
    for (j, &dilation) in DILATIONS.iter().enumerate() {
        let layer = format!("gen.L{}", j + 1);
        let state = conv_gru_update(g, &x, hidden.map(|h| &h[j]), &layer, dilation)?;
        let act = g.act(&state, LEAKY)?;
        x = se_block(g, &act, &format!("{layer}.se"))?;
        states.push(state);
    }
    let w7 = g.param("gen.L7.weight")?;
    let b7 = g.param("gen.L7.bias")?;
    let logits = g.conv2d(&x, &w7, Some(&b7), 1)?;
    let out = g.act(&logits, Activation::Sigmoid)?;
    Ok((out, states))
}

/// Run `stages` passes, feeding `I_{s+1} = I_1 ⊙ O_s` and carrying the
/// recurrent states. Returns `O_1 … O_S`.
pub fn multi_stage_forward<G: Graph>(g: &mut G, image: &G::V, stages: usize) -> Result<Vec<G::V>> {
    if stages < 1 {
        return Err(Error::invalid("at least one stage is required"));
    }
    let (c, _, _) = g.value(image).chw()?;
    if c != 3 {
        return Err(Error::shape("generator", format!("input has {c} channels, expected 3")));
    }
    let mut outputs = Vec::with_capacity(stages);
    let mut input = image.clone();
    let mut hidden: Option<Vec<G::V>> = None;
    for s in 0..stages {
        let (out, states) = generator_stage(g, &input, hidden.as_deref())?;
        if s + 1 < stages {
            let mask = g.repeat_channels(&out, 3)?;
            input = g.mul(image, &mask)?;
        }
        hidden = Some(states);
        outputs.push(out);
    }
    Ok(outputs)
}

/// Generator parameters together with their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(config: GeneratorConfig, params: ParamSet) -> Result<Self> {
        config.check(&params)?;
        Ok(Generator {
            config,
            params: params.with_prefix("gen."),
        })
    }

    pub fn init(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        let params = config.init(rng)?;
        Ok(Generator { config, params })
    }

    /// Saliency outputs of every stage for a `[3, H, W]` image, evaluated
    /// without recording gradients.
    pub fn predict(&self, image: &Tensor, stages: usize) -> Result<Vec<Tensor>> {
        let mut g = Eager::new(&self.params);
        let input = g.constant(image.clone());
        let outs = multi_stage_forward(&mut g, &input, stages)?;
        Ok(outs.into_iter().map(|o| (*o).clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::graph::Recorder;
    use crate::tensor::Tape;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn image(h: usize, w: usize, seed: u64) -> Tensor {
        Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut rng(seed))
    }

    // zero-padded "same" convolution written out as plain loops
    fn conv_oracle(x: &Tensor, k: &Tensor, b: Option<&Tensor>, dil: usize) -> Tensor {
        let (ci, h, w) = x.chw().unwrap();
        let (co, ks) = (k.shape()[0], k.shape()[2]);
        let half = (ks / 2) as isize;
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..ci {
                        for i in 0..ks {
                            for j in 0..ks {
                                let sy = y as isize + (i as isize - half) * dil as isize;
                                let sx = xx as isize + (j as isize - half) * dil as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += k.data()[((o * ci + c) * ks + i) * ks + j]
                                    * x.data()[(c * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = acc;
                }
            }
        }
        Tensor::new(&[co, h, w], out).unwrap()
    }

    fn sig(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    fn gru_params(c: usize, r: &mut ChaCha8Rng) -> ParamSet {
        let mut p = ParamSet::new();
        for w in GRU_WEIGHTS {
            p.insert(format!("l.{w}"), Tensor::uniform(&[c, c, 3, 3], -0.4, 0.4, r));
        }
        for b in GRU_BIASES {
            p.insert(format!("l.{b}"), Tensor::uniform(&[c], -0.5, 0.5, r));
        }
        p
    }

    #[test]
    fn param_count_matches_enumeration() {
        for (c, r) in [(24, 4), (8, 4), (4, 2), (12, 3)] {
            let cfg = GeneratorConfig {
                channels: c,
                se_reduction: r,
            };
            let p = cfg.init(&mut rng(0)).unwrap();
            assert_eq!(p.num_scalars(), cfg.param_count());
            cfg.check(&p).unwrap();
        }
        assert_eq!(GeneratorConfig::default().param_count(), 189_661);
        assert!(GeneratorConfig {
            channels: 10,
            se_reduction: 4
        }
        .validate()
        .is_err());
    }

    #[test]
    fn init_biases() {
        let p = GeneratorConfig::default().init(&mut rng(1)).unwrap();
        assert!(p.get("gen.L3.b_z").unwrap().data().iter().all(|&v| v == -1.0));
        assert!(p.get("gen.L3.b_r").unwrap().data().iter().all(|&v| v == 0.0));
        let w = p.get("gen.L2.W_n").unwrap();
        let bound = (6.0f64 / (24.0 * 9.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn se_gates_open_and_closed() {
        let x = image(4, 5, 2);
        for (bias, expect_identity) in [(60.0, true), (-60.0, false)] {
            let mut p = ParamSet::new();
            p.insert("se.fc1.weight", Tensor::zeros(&[1, 3]));
            p.insert("se.fc1.bias", Tensor::zeros(&[1]));
            p.insert("se.fc2.weight", Tensor::zeros(&[3, 1]));
            p.insert("se.fc2.bias", Tensor::full(&[3], bias));
            let mut g = Eager::new(&p);
            let xv = g.constant(x.clone());
            let y = se_block(&mut g, &xv, "se").unwrap();
            if expect_identity {
                assert_eq!(*y, x);
            } else {
                assert!(y.data().iter().all(|v| v.abs() < 1e-20));
            }
        }
    }

    #[test]
    fn se_matches_standalone_oracle() {
        let mut r = rng(3);
        let (c, red) = (8, 2);
        let x = Tensor::uniform(&[c, 5, 6], -1.0, 1.0, &mut r);
        let w1 = Tensor::uniform(&[red, c], -1.0, 1.0, &mut r);
        let b1 = Tensor::uniform(&[red], -1.0, 1.0, &mut r);
        let w2 = Tensor::uniform(&[c, red], -1.0, 1.0, &mut r);
        let b2 = Tensor::uniform(&[c], -1.0, 1.0, &mut r);
        let mut p = ParamSet::new();
        p.insert("s.fc1.weight", w1.clone());
        p.insert("s.fc1.bias", b1.clone());
        p.insert("s.fc2.weight", w2.clone());
        p.insert("s.fc2.bias", b2.clone());
        let mut g = Eager::new(&p);
        let xv = g.constant(x.clone());
        let y = se_block(&mut g, &xv, "s").unwrap();

        let squeeze: Vec<f64> = x.data().chunks(30).map(|ch| ch.iter().sum::<f64>() / 30.0).collect();
        let hidden: Vec<f64> = (0..red)
            .map(|i| (b1.data()[i] + (0..c).map(|k| w1.data()[i * c + k] * squeeze[k]).sum::<f64>()).max(0.0))
            .collect();
        for ch in 0..c {
            let gate = sig(b2.data()[ch] + (0..red).map(|i| w2.data()[ch * red + i] * hidden[i]).sum::<f64>());
            assert!(gate > 0.0 && gate < 1.0);
            for k in 0..30 {
                assert!((y.data()[ch * 30 + k] - gate * x.data()[ch * 30 + k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gru_limits() {
        let mut r = rng(4);
        let c = 3;
        let x = Tensor::uniform(&[c, 6, 6], -1.0, 1.0, &mut r);
        let h = Tensor::uniform(&[c, 6, 6], -1.0, 1.0, &mut r);

        let mut p = gru_params(c, &mut r);
        p.insert("l.b_z", Tensor::full(&[c], -60.0));
        let mut g = Eager::new(&p);
        let (xv, hv) = (g.constant(x.clone()), g.constant(h.clone()));
        let out = conv_gru_update(&mut g, &xv, Some(&hv), "l", 2).unwrap();
        assert!(out.max_abs_diff(&h) < 1e-20);

        p.insert("l.b_z", Tensor::full(&[c], 60.0));
        p.insert("l.W_n", Tensor::zeros(&[c, c, 3, 3]));
        p.insert("l.U_n", Tensor::zeros(&[c, c, 3, 3]));
        p.insert("l.b_n", Tensor::new(&[c], vec![0.3, -0.7, 1.5]).unwrap());
        let mut g = Eager::new(&p);
        let (xv, hv) = (g.constant(x), g.constant(h));
        let out = conv_gru_update(&mut g, &xv, Some(&hv), "l", 2).unwrap();
        for (ch, b) in [0.3f64, -0.7, 1.5].iter().enumerate() {
            assert!(out.data()[ch * 36..(ch + 1) * 36].iter().all(|v| (v - b.tanh()).abs() < 1e-15));
        }
    }

    #[test]
    fn gru_matches_straight_line_transcription() {
        let mut r = rng(5);
        for (dil, first) in [(1, false), (2, false), (4, true), (8, false)] {
            let c = 3;
            let p = gru_params(c, &mut r);
            let x = Tensor::uniform(&[c, 7, 9], -1.0, 1.0, &mut r);
            let h = if first { Tensor::zeros(&[c, 7, 9]) } else { Tensor::uniform(&[c, 7, 9], -1.0, 1.0, &mut r) };
            let t = |n: &str| p.get(&format!("l.{n}")).unwrap();
            let wz = conv_oracle(&x, t("W_z"), Some(t("b_z")), dil);
            let uz = conv_oracle(&h, t("U_z"), None, 1);
            let wr = conv_oracle(&x, t("W_r"), Some(t("b_r")), dil);
            let ur = conv_oracle(&h, t("U_r"), None, 1);
            let z: Vec<f64> = wz.data().iter().zip(uz.data()).map(|(a, b)| sig(a + b)).collect();
            let rr: Vec<f64> = wr.data().iter().zip(ur.data()).map(|(a, b)| sig(a + b)).collect();
            let rh = Tensor::new(&[c, 7, 9], rr.iter().zip(h.data()).map(|(a, b)| a * b).collect()).unwrap();
            let wn = conv_oracle(&x, t("W_n"), Some(t("b_n")), dil);
            let un = conv_oracle(&rh, t("U_n"), None, 1);
            let expected: Vec<f64> = (0..z.len())
                .map(|i| (1.0 - z[i]) * h.data()[i] + z[i] * (wn.data()[i] + un.data()[i]).tanh())
                .collect();

            let mut g = Eager::new(&p);
            let xv = g.constant(x.clone());
            let hv = g.constant(h.clone());
            let out = conv_gru_update(&mut g, &xv, (!first).then_some(&hv), "l", dil).unwrap();
            let diff = out.data().iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "dilation {dil}: {diff}");
        }
    }

    #[test]
    fn gru_rejects_mismatched_state() {
        let mut r = rng(6);
        let p = gru_params(2, &mut r);
        let mut g = Eager::new(&p);
        let x = g.constant(Tensor::zeros(&[2, 4, 4]));
        let h = g.constant(Tensor::zeros(&[2, 4, 5]));
        assert!(conv_gru_update(&mut g, &x, Some(&h), "l", 1).is_err());
    }

    #[test]
    fn zero_params_give_one_half() {
        let cfg = GeneratorConfig {
            channels: 4,
            se_reduction: 2,
        };
        let mut p = cfg.init(&mut rng(7)).unwrap();
        for (_, t) in p.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let gen = Generator::new(cfg, p).unwrap();
        for out in gen.predict(&image(8, 12, 8), 3).unwrap() {
            assert_eq!(out.shape(), [1, 8, 12]);
            assert!(out.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn stages_are_prefix_consistent_and_bounded() {
        let cfg = GeneratorConfig {
            channels: 4,
            se_reduction: 2,
        };
        let gen = Generator::init(cfg, &mut rng(9)).unwrap();
        let img = image(8, 8, 10);
        let three = gen.predict(&img, 3).unwrap();
        let four = gen.predict(&img, 4).unwrap();
        assert_eq!(three[..], four[..3]);
        let one = gen.predict(&img, 1).unwrap();
        assert_eq!(one[0], three[0]);
        assert_ne!(three[0], three[2]);
        assert!(four.iter().all(|o| o.data().iter().all(|&v| (0.0..=1.0).contains(&v))));
        assert!(gen.predict(&img, 0).is_err());
    }

    #[test]
    fn saturated_output_reuses_the_original_image() {
        let cfg = GeneratorConfig {
            channels: 4,
            se_reduction: 2,
        };
        let mut gen = Generator::init(cfg, &mut rng(11)).unwrap();
        gen.params.get_mut("gen.L7.weight").unwrap().data_mut().fill(0.0);
        gen.params.insert("gen.L7.bias", Tensor::scalar(60.0));
        let img = image(8, 8, 12);
        let mut g = Eager::new(&gen.params);
        let input = g.constant(img.clone());
        let (o1, _) = generator_stage(&mut g, &input, None).unwrap();
        assert!(o1.data().iter().all(|&v| v == 1.0));
        let mask = g.repeat_channels(&o1, 3).unwrap();
        assert_eq!(*g.mul(&input, &mask).unwrap(), img);
    }

    #[test]
    fn recorded_and_eager_paths_agree() {
        let cfg = GeneratorConfig {
            channels: 4,
            se_reduction: 2,
        };
        let gen = Generator::init(cfg, &mut rng(13)).unwrap();
        let img = image(8, 8, 14);
        let eager = gen.predict(&img, 3).unwrap();
        let mut tape = Tape::new();
        let bound = gen.params.bind(&mut tape, true);
        let mut rec = Recorder::new(&mut tape, &bound);
        let input = rec.constant(img);
        let outs = multi_stage_forward(&mut rec, &input, 3).unwrap();
        for (o, e) in outs.iter().zip(&eager) {
            assert_eq!(tape.value(*o), e);
        }
    }

    #[test]
    fn check_rejects_wrong_width() {
        let small = GeneratorConfig {
            channels: 8,
            se_reduction: 4,
        };
        let p = small.init(&mut rng(15)).unwrap();
        assert!(GeneratorConfig::default().check(&p).is_err());
        assert!(Generator::new(GeneratorConfig::default(), p).is_err());
    }
}
