//! Analytic gradients against central finite differences.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::maps::FixationMap;
use crate::metrics::gaussian_density;
use crate::model::{
    content_loss, conv_gru_update, discriminator_forward, discriminator_loss, generator_loss, init_discriminator,
    multi_stage_forward, se_block, GeneratorConfig, GeneratorObjective, Graph, Recorder, LOG_FLOOR,
};
use crate::tensor::{Activation, BoundParams, ParamSet, Tape, Tensor, Var};

/// Finite-difference step used throughout.
pub const STEP: f64 = 1e-4;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Denominator floor for [`rel_err`]. Loss evaluations carry roundoff of a
/// few 1e-14, which a 1e-4 central difference turns into about 1e-10 of
/// gradient noise; relative errors of gradients far below this floor would
/// measure that noise rather than the gradient.
pub const FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst relative error over the checked entries of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupResult {
    pub case: String,
    pub param: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub total: usize,
}

impl GroupResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

type LossFn<'a> = dyn Fn(&mut Tape, &BoundParams) -> Result<Var> + 'a;

/// Compare `loss`'s gradient with central differences for each tensor in
/// `params`. The perturbed evaluations replay the unperturbed pass's choice
/// at every rectifier, pooling window and clamp, so a stencil that straddles
/// a kink still differentiates the piece the analytic gradient belongs to.
/// `per_tensor(name)` caps how many entries of a tensor are checked, chosen
/// at random; `None` checks them all.
pub fn check(
    case: &str,
    params: &ParamSet,
    loss: &LossFn<'_>,
    per_tensor: &dyn Fn(&str) -> Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<GroupResult>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let l = loss(&mut tape, &bound)?;
    let branches = tape.branches();
    let mut grads = tape.backward(l)?;
    let analytic = bound.gradients(&mut grads);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::replaying(branches.clone());
        let bound = p.bind(&mut tape, false);
        let l = loss(&mut tape, &bound)?;
        Ok(tape.value(l).item())
    };

    let mut out = Vec::new();
    let mut probe = params.clone();
    for (name, t) in params.iter() {
        let n = t.len();
        let idx: Vec<usize> = match per_tensor(name) {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let a = analytic.require(name)?;
        let mut worst = 0.0f64;
        for &i in &idx {
            let orig = t.data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = orig + STEP;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig - STEP;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(rel_err(a.data()[i], numeric));
        }
        out.push(GroupResult {
            case: case.to_string(),
            param: name.to_string(),
            max_rel_err: worst,
            checked: idx.len(),
            total: n,
        });
    }
    Ok(out)
}

/// Scalar probe `Σ out ⊙ w` with fixed random weights, so every output entry
/// gets a distinct upstream gradient.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = Tensor::uniform(&shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn set(entries: Vec<(&str, Tensor)>) -> ParamSet {
    let mut p = ParamSet::new();
    for (n, t) in entries {
        p.insert(n, t);
    }
    p
}

/// Every differentiable tape operation on small random tensors.
pub fn layer_suite(seed: u64) -> Result<Vec<GroupResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |shape: &[usize], lo: f64, hi: f64| Tensor::uniform(shape, lo, hi, &mut rng);
    let mut cases: Vec<(String, ParamSet, Box<LossFn<'static>>)> = Vec::new();

    for d in [1, 2, 4] {
        let p = set(vec![("x", u(&[2, 6, 5], -1.0, 1.0)), ("k", u(&[3, 2, 3, 3], -1.0, 1.0)), ("b", u(&[3], -1.0, 1.0))]);
        cases.push((
            format!("conv2d d={d}"),
            p,
            Box::new(move |t, b| {
                let y = t.conv2d(b.var("x")?, b.var("k")?, Some(b.var("b")?), d)?;
                probe(t, y, 1)
            }),
        ));
    }
    cases.push((
        "max_pool2d".into(),
        set(vec![("x", u(&[2, 6, 6], -1.0, 1.0))]),
        Box::new(|t, b| {
            let y = t.max_pool2d(b.var("x")?)?;
            probe(t, y, 2)
        }),
    ));
    cases.push((
        "linear".into(),
        set(vec![("x", u(&[7], -1.0, 1.0)), ("w", u(&[4, 7], -1.0, 1.0)), ("b", u(&[4], -1.0, 1.0))]),
        Box::new(|t, b| {
            let y = t.linear(b.var("x")?, b.var("w")?, b.var("b")?)?;
            probe(t, y, 3)
        }),
    ));
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu(0.2)),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
    ] {
        cases.push((
            name.into(),
            set(vec![("x", u(&[2, 4, 4], -2.0, 2.0))]),
            Box::new(move |t, b| {
                let y = t.activation(b.var("x")?, kind)?;
                probe(t, y, 4)
            }),
        ));
    }
    cases.push((
        "global_avg_pool".into(),
        set(vec![("x", u(&[3, 4, 5], -1.0, 1.0))]),
        Box::new(|t, b| {
            let y = t.global_avg_pool(b.var("x")?)?;
            probe(t, y, 5)
        }),
    ));
    cases.push((
        "elementwise".into(),
        set(vec![("a", u(&[2, 3, 3], -1.0, 1.0)), ("b", u(&[2, 3, 3], 0.5, 1.5))]),
        Box::new(|t, b| {
            let (x, y) = (b.var("a")?, b.var("b")?);
            let s = t.add(x, y)?;
            let d = t.sub(s, y)?;
            let m = t.mul(d, y)?;
            let q = t.div(m, y)?;
            let a = t.affine(q, 0.7, 0.1);
            let o = t.one_minus(a);
            probe(t, o, 6)
        }),
    ));
    cases.push((
        "log_sqrt".into(),
        set(vec![("x", u(&[2, 3, 3], 0.2, 2.0))]),
        Box::new(|t, b| {
            let x = b.var("x")?;
            let l = t.ln(x)?;
            let c = t.log_clamped(x, LOG_FLOOR)?;
            let r = t.sqrt(x);
            let s = t.add(l, c)?;
            let s = t.add(s, r)?;
            probe(t, s, 7)
        }),
    ));
    cases.push((
        "reductions".into(),
        set(vec![("x", u(&[2, 3, 3], -1.0, 1.0))]),
        Box::new(|t, b| {
            let x = b.var("x")?;
            let m = t.mean(x);
            let m = t.expand(m, &[2, 3, 3])?;
            let c = t.sub(x, m)?;
            let sq = t.mul(c, c)?;
            let s = t.sum(sq);
            let r = t.reshape(x, &[18])?;
            let p = probe(t, r, 8)?;
            t.add(s, p)
        }),
    ));
    cases.push((
        "channel ops".into(),
        set(vec![("x", u(&[2, 3, 3], -1.0, 1.0)), ("g", u(&[2], 0.0, 1.0)), ("m", u(&[1, 3, 3], 0.0, 1.0))]),
        Box::new(|t, b| {
            let s = t.scale_channels(b.var("x")?, b.var("g")?)?;
            let r = t.repeat_channels(b.var("m")?, 2)?;
            let p = t.mul(s, r)?;
            let c = t.concat_channels(p, b.var("m")?)?;
            probe(t, c, 9)
        }),
    ));

    let gen = GeneratorConfig { channels: 4, se_reduction: 2 }.init(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37))?;
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let x = Tensor::uniform(&[4, 6, 6], -1.0, 1.0, &mut rng2);
    let h = Tensor::uniform(&[4, 6, 6], -1.0, 1.0, &mut rng2);
    let mut se = gen.with_prefix("gen.L1.se.");
    se.insert("x", x.clone());
    cases.push((
        "se_block".into(),
        se,
        Box::new(|t, b| {
            let x = b.var("x")?;
            let y = {
                let mut g = Recorder::new(t, b);
                se_block(&mut g, &x, "gen.L1.se")?
            };
            probe(t, y, 10)
        }),
    ));
    for with_hidden in [false, true] {
        let mut gru = gen.with_prefix("gen.L2.");
        gru.extend(set(vec![("x", x.clone()), ("h", h.clone())]));
        // The other layers' tensors are unused; drop them to keep the check small.
        let gru = gru.iter().filter(|(n, _)| !n.contains(".se.")).fold(ParamSet::new(), |mut p, (n, t)| {
            p.insert(n, t.clone());
            p
        });
        let gru = if with_hidden {
            gru
        } else {
            gru.iter().filter(|(n, _)| *n != "h").fold(ParamSet::new(), |mut p, (n, t)| {
                p.insert(n, t.clone());
                p
            })
        };
        cases.push((
            format!("conv_gru_update {}", if with_hidden { "s>1" } else { "s=1" }),
            gru,
            Box::new(move |t, b| {
                let x = b.var("x")?;
                let h = if with_hidden { Some(b.var("h")?) } else { None };
                let y = {
                    let mut g = Recorder::new(t, b);
                    conv_gru_update(&mut g, &x, h.as_ref(), "gen.L2", 2)?
                };
                probe(t, y, 11)
            }),
        ));
    }

    let fix = FixationMap::new(8, 8, vec![(1, 2), (5, 5), (6, 5), (3, 7)])?;
    let gt = gaussian_density(&fix, 1.2)?;
    cases.push((
        "content_loss".into(),
        set(vec![("pred", u(&[1, 8, 8], 0.05, 0.95))]),
        Box::new(move |t, b| Ok(content_loss(t, b.var("pred")?, &gt, &fix)?.total)),
    ));
    for objective in [GeneratorObjective::Minimax, GeneratorObjective::NonSaturating] {
        cases.push((
            format!("gan losses {objective:?}"),
            set(vec![("real", u(&[1], 0.1, 0.9)), ("fake", u(&[1], 0.1, 0.9)), ("content", u(&[1], -1.0, 1.0))]),
            Box::new(move |t, b| {
                let d = discriminator_loss(t, b.var("real")?, b.var("fake")?)?;
                let g = generator_loss(t, b.var("fake")?, b.var("content")?, objective)?;
                let g = t.scale(g, 0.5);
                t.add(d, g)
            }),
        ));
    }

    let mut out = Vec::new();
    for (name, params, loss) in cases {
        out.extend(check(&name, &params, loss.as_ref(), &|_| None, &mut rng2)?);
    }
    Ok(out)
}

/// How many entries per tensor [`model_suite`] checks; `None` means all.
#[derive(Clone, Copy, Debug)]
pub struct ModelSampling {
    pub gen: Option<usize>,
    pub disc: Option<usize>,
}

/// Generator weights for gradient checking: uniform in `±2·sqrt(3/fan_in)`
/// with biases in `±0.5`. Under the training initialization the stage-1
/// signal shrinks about tenfold per recurrent layer, leaving an almost flat
/// output whose standardization amplifies roundoff far past the tolerance.
/// This draw keeps every layer at order 0.1 to 1.
pub fn conditioned_generator(config: GeneratorConfig, rng: &mut impl Rng) -> Result<ParamSet> {
    let mut p = config.init(rng)?;
    for (name, t) in p.iter_mut() {
        let shape = t.shape().to_vec();
        let gain = if name == "gen.L7.weight" { 8.0 } else { 2.0 };
        let bound = match shape.len() {
            1 => 0.5,
            _ => gain * (3.0 / shape[1..].iter().product::<usize>() as f64).sqrt(),
        };
        for v in t.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(p)
}

/// The complete `stages`-stage generator at 8×8 with four channels and the
/// discriminator, under `Σ_s (loss_G + loss_D)` with no detaching, so every
/// path through both networks is exercised. Entries are sampled as
/// `per_tensor` says.
pub fn model_suite(seed: u64, stages: usize, per_tensor: ModelSampling) -> Result<Vec<GroupResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = conditioned_generator(GeneratorConfig { channels: 4, se_reduction: 2 }, &mut rng)?;
    let disc = init_discriminator(8, 8, &mut rng)?;
    let image = Tensor::uniform(&[3, 8, 8], 0.0, 1.0, &mut rng);
    let fix = FixationMap::new(8, 8, vec![(2, 1), (2, 2), (6, 4), (5, 6)])?;
    let gt = gaussian_density(&fix, 1.0)?;
    let real = gt.normalized_max().to_tensor();

    let loss = |t: &mut Tape, b: &BoundParams| -> Result<Var> {
        let (outputs, d_real, d_fakes) = {
            let mut g = Recorder::new(t, b);
            let img = g.constant(image.clone());
            let outputs = multi_stage_forward(&mut g, &img, stages)?;
            let r = g.constant(real.clone());
            let d_real = discriminator_forward(&mut g, &img, &r)?;
            let d_fakes = outputs
                .iter()
                .map(|o| discriminator_forward(&mut g, &img, o))
                .collect::<Result<Vec<_>>>()?;
            (outputs, d_real, d_fakes)
        };
        let mut total = t.constant(Tensor::scalar(0.0));
        for (&o, &d) in outputs.iter().zip(&d_fakes) {
            let c = content_loss(t, o, &gt, &fix)?.total;
            let lg = generator_loss(t, d, c, GeneratorObjective::Minimax)?;
            let ld = discriminator_loss(t, d_real, d)?;
            total = t.add(total, lg)?;
            total = t.add(total, ld)?;
        }
        Ok(total)
    };

    params.extend(disc);
    let sampled = |n: &str| if n.starts_with("disc.") { per_tensor.disc } else { per_tensor.gen };
    check(&format!("model S={stages}"), &params, &loss, &sampled, &mut rng)
}

/// Worst relative error per case.
pub fn summarize(results: &[GroupResult]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for r in results {
        match out.iter_mut().find(|(c, _)| *c == r.case) {
            Some((_, m)) => *m = m.max(r.max_rel_err),
            None => out.push((r.case.clone(), r.max_rel_err)),
        }
    }
    out
}
