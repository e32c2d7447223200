use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::TrainConfig;
use super::data::Sample;
use crate::error::{Error, Result};
use crate::model::{
    content_loss, discriminator_forward, discriminator_loss, generator_loss, multi_stage_forward, Generator, Graph,
    Recorder,
};
use crate::tensor::{AdamState, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Content,
    Discriminator,
    Generator,
}

/// One optimizer batch. Adversarial columns are empty during pretraining.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "loss_D")]
    pub loss_d: Option<f64>,
    #[serde(rename = "loss_G")]
    pub loss_g: Option<f64>,
    pub content: Option<f64>,
    #[serde(rename = "D_acc")]
    pub d_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Every parameter update in the order it was applied.
    pub steps: Vec<StepKind>,
}

impl TrainLog {
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record(["epoch", "step", "loss_D", "loss_G", "content", "D_acc"])?;
        }
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    /// Mean content loss of each epoch, in epoch order.
    pub fn epoch_content(&self) -> Vec<f64> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.rows {
            let Some(c) = r.content else { continue };
            match out.last_mut() {
                Some((e, s, n)) if *e == r.epoch => {
                    *s += c;
                    *n += 1;
                }
                _ => out.push((r.epoch, c, 1)),
            }
        }
        out.into_iter().map(|(_, s, n)| s / n as f64).collect()
    }
}

fn check_dataset(samples: &[Sample], config: &TrainConfig) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(s) = samples.iter().find(|s| s.dims() != (config.width, config.height)) {
        return Err(Error::shape(
            "training set",
            format!("sample from {} is {:?}, configuration says {}x{}", s.source, s.dims(), config.width, config.height),
        ));
    }
    Ok(())
}

fn finite(step: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            step,
            what: what.to_string(),
        })
    }
}

/// Sum per-sample gradients in input order and divide by the batch size.
fn average(grads: Vec<ParamSet>) -> Result<ParamSet> {
    let n = grads.len() as f64;
    let mut it = grads.into_iter();
    let mut total = it.next().ok_or_else(|| Error::invalid("empty batch"))?;
    for g in it {
        total.add_assign(&g)?;
    }
    total.scale(1.0 / n);
    Ok(total)
}

fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Sum of the content loss over stages and its gradient.
fn content_gradient(gen: &Generator, sample: &Sample, stages: usize) -> Result<(f64, ParamSet)> {
    let mut tape = Tape::new();
    let bound = gen.params.bind(&mut tape, true);
    let outputs = {
        let mut g = Recorder::new(&mut tape, &bound);
        let image = g.constant(sample.image.clone());
        multi_stage_forward(&mut g, &image, stages)?
    };
    let losses = outputs
        .iter()
        .map(|&o| content_loss(&mut tape, o, &sample.density, &sample.fixations).map(|l| l.total))
        .collect::<Result<Vec<_>>>()?;
    let total = sum_vars(&mut tape, &losses)?;
    let value = tape.value(total).item();
    let mut grads = tape.backward(total)?;
    Ok((value, bound.gradients(&mut grads)))
}

/// Content loss of one prediction against a sample's ground truth.
pub fn content_value(pred: &Tensor, s: &Sample) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(pred.clone());
    let l = content_loss(&mut tape, v, &s.density, &s.fixations)?;
    Ok(tape.value(l.total).item())
}

/// Mean content loss of each stage over `samples`.
pub fn stage_content(gen: &Generator, samples: &[Sample], stages: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; stages];
    for s in samples {
        for (k, p) in gen.predict(&s.image, stages)?.iter().enumerate() {
            out[k] += content_value(p, s)? / samples.len() as f64;
        }
    }
    Ok(out)
}

/// Content-loss-only training of the generator. `on_epoch` runs after every
/// epoch with the current weights.
pub fn pretrain(
    samples: &[Sample],
    mut gen: Generator,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &Generator) -> Result<()>,
) -> Result<(Generator, TrainLog)> {
    config.validate()?;
    check_dataset(samples, config)?;
    let mut adam = AdamState::new(config.adam(), &gen.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..config.pretrain_epochs {
        for batch in batches(samples.len(), config.batch, &mut rng) {
            let results = batch
                .par_iter()
                .map(|&i| content_gradient(&gen, &samples[i], config.stages))
                .collect::<Result<Vec<_>>>()?;
            let loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
            finite(step, "content loss", loss)?;
            let grads = average(results.into_iter().map(|r| r.1).collect())?;
            grads.check_finite().map_err(|_| Error::Diverged {
                step,
                what: "generator gradient".into(),
            })?;
            adam.step(&mut gen.params, &grads)?;
            log.rows.push(LogRow {
                epoch,
                step,
                loss_d: None,
                loss_g: None,
                content: Some(loss),
                d_acc: None,
            });
            log.steps.push(StepKind::Content);
            debug!("pretrain epoch {epoch} step {step}: content {loss:.6}");
            step += 1;
        }
        if let Some(m) = log.epoch_content().last() {
            info!("pretrain epoch {epoch}: mean content loss {m:.6}");
        }
        on_epoch(epoch, &gen)?;
    }
    Ok((gen, log))
}

struct AdvResult {
    loss: f64,
    content: f64,
    accuracy: f64,
    grads: ParamSet,
}

fn joint(gen: &Generator, disc: &ParamSet) -> ParamSet {
    let mut all = gen.params.clone();
    all.extend(disc.clone());
    all
}

/// Ground-truth map scaled to the generator's output range.
fn real_map(sample: &Sample) -> Tensor {
    sample.density.normalized_max().to_tensor()
}

fn leak_check(grads: &ParamSet, frozen: &str, step: usize) -> Result<()> {
    for (name, g) in grads.iter().filter(|(n, _)| n.starts_with(frozen)) {
        if g.data().iter().any(|&v| v != 0.0) {
            return Err(Error::Diverged {
                step,
                what: format!("gradient leaked into frozen parameter `{name}`"),
            });
        }
    }
    Ok(())
}

fn discriminator_gradient(all: &ParamSet, sample: &Sample, stages: usize, step: usize) -> Result<AdvResult> {
    let mut tape = Tape::new();
    let bound = all.bind_where(&mut tape, |n| n.starts_with("disc."));
    let (d_real, d_fakes) = {
        let mut g = Recorder::new(&mut tape, &bound);
        let image = g.constant(sample.image.clone());
        let outputs = multi_stage_forward(&mut g, &image, stages)?;
        let real = g.constant(real_map(sample));
        let d_real = discriminator_forward(&mut g, &image, &real)?;
        let mut d_fakes = Vec::with_capacity(stages);
        for o in outputs {
            let fake = g.tape.detach(o);
            d_fakes.push(discriminator_forward(&mut g, &image, &fake)?);
        }
        (d_real, d_fakes)
    };
    let losses = d_fakes
        .iter()
        .map(|&f| discriminator_loss(&mut tape, d_real, f))
        .collect::<Result<Vec<_>>>()?;
    let total = sum_vars(&mut tape, &losses)?;
    let real_ok = (tape.value(d_real).item() > 0.5) as u8 as f64;
    let fake_ok = d_fakes.iter().filter(|&&f| tape.value(f).item() < 0.5).count() as f64 / stages as f64;
    let loss = tape.value(total).item();
    let mut grads = tape.backward(total)?;
    let grads = bound.gradients(&mut grads);
    leak_check(&grads, "gen.", step)?;
    Ok(AdvResult {
        loss,
        content: f64::NAN,
        accuracy: 0.5 * (real_ok + fake_ok),
        grads: grads.with_prefix("disc."),
    })
}

fn generator_gradient(all: &ParamSet, sample: &Sample, config: &TrainConfig, step: usize) -> Result<AdvResult> {
    let stages = config.stages;
    let mut tape = Tape::new();
    let bound = all.bind_where(&mut tape, |n| n.starts_with("gen."));
    let (outputs, d_fakes) = {
        let mut g = Recorder::new(&mut tape, &bound);
        let image = g.constant(sample.image.clone());
        let outputs = multi_stage_forward(&mut g, &image, stages)?;
        let d_fakes = outputs
            .iter()
            .map(|o| discriminator_forward(&mut g, &image, o))
            .collect::<Result<Vec<_>>>()?;
        (outputs, d_fakes)
    };
    let mut terms = Vec::with_capacity(stages);
    let mut content_terms = Vec::with_capacity(stages);
    for (s, (&o, &d)) in outputs.iter().zip(&d_fakes).enumerate() {
        let content = if !config.final_stage_content || s + 1 == stages {
            let c = content_loss(&mut tape, o, &sample.density, &sample.fixations)?.total;
            content_terms.push(c);
            c
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        terms.push(generator_loss(&mut tape, d, content, config.objective)?);
    }
    let total = sum_vars(&mut tape, &terms)?;
    let content = content_terms.iter().map(|&c| tape.value(c).item()).sum();
    let loss = tape.value(total).item();
    let mut grads = tape.backward(total)?;
    let grads = bound.gradients(&mut grads);
    leak_check(&grads, "disc.", step)?;
    Ok(AdvResult {
        loss,
        content,
        accuracy: f64::NAN,
        grads: grads.with_prefix("gen."),
    })
}

fn mean(results: &[AdvResult], f: impl Fn(&AdvResult) -> f64) -> f64 {
    results.iter().map(f).sum::<f64>() / results.len() as f64
}

/// Alternating discriminator/generator training. Each batch first updates the
/// discriminator against detached generator outputs of every stage, then the
/// generator against the updated discriminator.
pub fn adversarial_finetune(
    samples: &[Sample],
    mut gen: Generator,
    mut disc: ParamSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &Generator, &ParamSet) -> Result<()>,
) -> Result<(Generator, ParamSet, TrainLog)> {
    config.validate()?;
    check_dataset(samples, config)?;
    let mut adam_g = AdamState::new(config.adam(), &gen.params)?;
    let mut adam_d = AdamState::new(config.adam(), &disc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d15c);
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..config.finetune_epochs {
        for batch in batches(samples.len(), config.batch, &mut rng) {
            let all = joint(&gen, &disc);
            let d_results = batch
                .par_iter()
                .map(|&i| discriminator_gradient(&all, &samples[i], config.stages, step))
                .collect::<Result<Vec<_>>>()?;
            let loss_d = finite(step, "discriminator loss", mean(&d_results, |r| r.loss))?;
            let d_acc = mean(&d_results, |r| r.accuracy);
            let grads = average(d_results.into_iter().map(|r| r.grads).collect())?;
            adam_d.step(&mut disc, &grads)?;
            log.steps.push(StepKind::Discriminator);

            let (loss_g, content) = if config.freeze_generator {
                (None, None)
            } else {
                let all = joint(&gen, &disc);
                let g_results = batch
                    .par_iter()
                    .map(|&i| generator_gradient(&all, &samples[i], config, step))
                    .collect::<Result<Vec<_>>>()?;
                let loss_g = finite(step, "generator loss", mean(&g_results, |r| r.loss))?;
                let content = mean(&g_results, |r| r.content);
                let grads = average(g_results.into_iter().map(|r| r.grads).collect())?;
                adam_g.step(&mut gen.params, &grads)?;
                log.steps.push(StepKind::Generator);
                (Some(loss_g), Some(content))
            };
            debug!("finetune epoch {epoch} step {step}: D {loss_d:.5} acc {d_acc:.3} G {loss_g:?}");
            log.rows.push(LogRow {
                epoch,
                step,
                loss_d: Some(loss_d),
                loss_g,
                content,
                d_acc: Some(d_acc),
            });
            step += 1;
        }
        gen.params.check_finite().map_err(|_| Error::Diverged {
            step,
            what: "generator parameters".into(),
        })?;
        info!("finetune epoch {epoch} done");
        on_epoch(epoch, &gen, &disc)?;
    }
    Ok((gen, disc, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_discriminator, GeneratorConfig};
    use crate::train::data::synthetic_samples;

    fn small_config() -> TrainConfig {
        TrainConfig {
            stages: 2,
            channels: 4,
            se_reduction: 2,
            width: 8,
            height: 8,
            lr: 3e-3,
            batch: 4,
            pretrain_epochs: 3,
            finetune_epochs: 2,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn fresh(config: &TrainConfig) -> Generator {
        Generator::init(config.generator(), &mut ChaCha8Rng::seed_from_u64(config.seed)).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let config = TrainConfig {
            lr: 0.0,
            ..small_config()
        };
        let samples = synthetic_samples(4, 8, 8, 1).unwrap();
        let gen = fresh(&config);
        let (after, log) = pretrain(&samples, gen.clone(), &config, |_, _| Ok(())).unwrap();
        assert_eq!(after, gen);
        assert_eq!(log.rows.len(), 3);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let config = small_config();
        let samples = synthetic_samples(6, 8, 8, 2).unwrap();
        let run = || pretrain(&samples, fresh(&config), &config, |_, _| Ok(())).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(la.rows.len(), 3 * 2);
        assert!(la.rows.iter().all(|r| r.content.unwrap().is_finite()));
    }

    #[test]
    fn alternation_is_discriminator_then_generator() {
        let config = small_config();
        let samples = synthetic_samples(4, 8, 8, 3).unwrap();
        let disc = init_discriminator(8, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (_, _, log) = adversarial_finetune(&samples, fresh(&config), disc, &config, |_, _, _| Ok(())).unwrap();
        assert_eq!(log.steps.len(), 2 * log.rows.len());
        for pair in log.steps.chunks(2) {
            assert_eq!(pair, [StepKind::Discriminator, StepKind::Generator]);
        }
        let mut csv = vec![];
        log.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,step,loss_D,loss_G,content,D_acc\n"));
    }

    #[test]
    fn frozen_generator_stays_put() {
        let config = TrainConfig {
            freeze_generator: true,
            ..small_config()
        };
        let samples = synthetic_samples(4, 8, 8, 4).unwrap();
        let disc = init_discriminator(8, 8, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let gen = fresh(&config);
        let (g2, d2, log) = adversarial_finetune(&samples, gen.clone(), disc.clone(), &config, |_, _, _| Ok(())).unwrap();
        assert_eq!(g2, gen);
        assert_ne!(d2, disc);
        assert!(log.steps.iter().all(|&k| k == StepKind::Discriminator));
    }

    #[test]
    fn gradients_stay_in_their_network() {
        let config = small_config();
        let samples = synthetic_samples(1, 8, 8, 5).unwrap();
        let gen = Generator::init(GeneratorConfig { channels: 4, se_reduction: 2 }, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let disc = init_discriminator(8, 8, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let all = joint(&gen, &disc);
        let d = discriminator_gradient(&all, &samples[0], 2, 0).unwrap();
        assert!(d.grads.names().all(|n| n.starts_with("disc.")));
        assert!(d.grads.iter().any(|(_, g)| g.data().iter().any(|&v| v != 0.0)));
        let g = generator_gradient(&all, &samples[0], &config, 0).unwrap();
        assert!(g.grads.names().all(|n| n.starts_with("gen.")));
        assert_eq!(g.grads.len(), gen.params.len());
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let config = small_config();
        let samples = synthetic_samples(2, 16, 8, 6).unwrap();
        assert!(pretrain(&samples, fresh(&config), &config, |_, _| Ok(())).is_err());
        assert!(pretrain(&[], fresh(&config), &config, |_, _| Ok(())).is_err());
    }
}
